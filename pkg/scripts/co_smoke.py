"""Run the desk-scale CO smoke comparison and print the report.

    python scripts/co_smoke.py --out runs/co_smoke
"""

import argparse

import torch

from blacksmith.smoke import SmokeSettings, run_co_smoke


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/co_smoke")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epsilon", type=float, default=16, help="in units of 1/255")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    torch.set_num_threads(args.threads)
    settings = SmokeSettings(seeds=tuple(args.seeds), epsilon=args.epsilon / 255, epochs=args.epochs)
    report = run_co_smoke(settings, args.out, log=print)
    print(report.as_text())


if __name__ == "__main__":
    main()
