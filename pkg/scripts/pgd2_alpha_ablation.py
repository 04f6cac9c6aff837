"""PGD-2 step-size ablation: train alpha = eps and alpha = eps/2 from their configs and compare.

    python scripts/pgd2_alpha_ablation.py --out runs/pgd2_ablation
"""

import argparse
import csv
import os

from blacksmith.cli import main as cli
from blacksmith.config import parse_config

CONFIGS = {"alpha=eps": "configs/pgd2_alpha_eps.cfg", "alpha=eps/2": "configs/pgd2_alpha_half.cfg"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pgd2_ablation")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = []
    for label, cfg_path in CONFIGS.items():
        out = os.path.join(args.out, label.replace("/", "_"))
        if cli(["train", "--config", cfg_path, "--out", out, "--seed", str(args.seed)]) != 0:
            raise SystemExit(f"training failed for {label}")
        attack = parse_config(os.path.join(out, "manifest.txt")).attack  # what actually ran
        with open(os.path.join(out, "summary.csv")) as fh:
            summary = next(csv.DictReader(fh))
        rows.append((label, attack.steps, f"{attack.alpha * 255:g}/255", summary["final_clean_acc"],
                     summary["final_adv_acc"]))
    print(f"{'run':<12} {'steps':>5} {'alpha':>8} {'clean':>8} {'adv':>8}")
    for label, steps, alpha, clean, adv in rows:
        print(f"{label:<12} {steps:>5} {alpha:>8} {float(clean):>8.2f} {float(adv):>8.2f}")


if __name__ == "__main__":
    main()
