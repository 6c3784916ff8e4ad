"""Run every sweep in scripts/sweeps/ and write each into its own output directory.

    python3 scripts/run_experiments.py                 # all sweeps into results/
    python3 scripts/run_experiments.py search deep     # a subset
    python3 scripts/run_experiments.py --out runs --workers 4
"""
import argparse
import sys
from pathlib import Path

from pagebench.report import main as pagebench

SWEEPS = Path(__file__).resolve().parent / "sweeps"


def main(argv=None) -> int:
    available = sorted(p.stem for p in SWEEPS.glob("*.sweep"))
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", metavar="name", help=", ".join(available))
    ap.add_argument("--out", default="results", help="parent directory for per-sweep outputs")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    unknown = set(args.names) - set(available)
    if unknown:
        ap.error(f"unknown sweep(s): {', '.join(sorted(unknown))}")
    status = 0
    for name in args.names or available:
        print(f"== {name}", flush=True)
        out = Path(args.out) / name
        status |= pagebench(["run", "--sweep", str(SWEEPS / f"{name}.sweep"), "--out-dir", str(out), "--workers", str(args.workers)])
        status |= pagebench(["compare", str(out), "--out", str(out / "compare.csv")])
    pagebench(["grow", "--T", "1000", "--runs", "100"])
    return status


if __name__ == "__main__":
    sys.exit(main())
