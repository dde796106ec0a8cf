"""Run every experiment command with its default config and print a one-line summary each."""
import argparse
import sys
import time

from lossland.cli import RUNNERS, execute


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", nargs="*", default=sorted(RUNNERS))
    args = ap.parse_args()
    worst = 0
    for cmd in args.only:
        t = time.perf_counter()
        code, _ = execute(cmd, None, jobs=args.jobs, out_dir=args.out)
        worst = max(worst, code)
        print(f"{cmd:13s} exit={code} {time.perf_counter() - t:7.1f}s")
    return worst


if __name__ == "__main__":
    sys.exit(main())
