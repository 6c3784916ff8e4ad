"""Extra page reads caused by a corrupted flat index, measured against blind probing.

Both arms use the same seeds, so each corrupted trial sees the same store and
target as its blind-probe twin. The expected difference is one read.

    python3 scripts/corruption_cost.py --trials 300000 --M 500
"""
import argparse
import dataclasses
import math
import time

import numpy as np

from pagebench.harness import PolicySpec, TrialConfig, run_trial
from pagebench.store import ContentSpec


def reads(cfg: TrialConfig, n: int) -> np.ndarray:
    return np.fromiter((run_trial(dataclasses.replace(cfg, seed=s)).data_page_reads for s in range(n)), dtype=np.int64, count=n)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--M", type=int, default=500)
    args = ap.parse_args(argv)
    hash_ = ContentSpec("hash")
    t0 = time.time()
    flat = reads(TrialConfig("flat", hash_, args.M, PolicySpec.of("uniform_probe")), args.trials)
    bad = reads(TrialConfig("indexed_corrupted", hash_, args.M, PolicySpec.of("corrupted_fallback")), args.trials)
    se = math.sqrt(flat.var(ddof=1) / len(flat) + bad.var(ddof=1) / len(bad))
    print(f"flat mean       {flat.mean():.4f}")
    print(f"corrupted mean  {bad.mean():.4f}")
    print(f"difference      {bad.mean() - flat.mean():+.4f}  (se {se:.4f})")
    print(f"elapsed         {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
