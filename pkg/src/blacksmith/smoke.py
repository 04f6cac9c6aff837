"""Desk-scale catastrophic-overfitting smoke experiment: FGSM vs Blacksmith.

Trains both methods on the same synthetic task for a few seeds with a large
epsilon, runs ``detect_co`` on each history, and writes a comparative table.
The outcome is reported, not asserted.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

from . import attacks
from .data import DatasetSource, SyntheticParams
from .diagnostics import EvalSettings, detect_co
from .model import ViTConfig
from .schedules import cyclic, trapezoidal
from .training import EpochStats, TrainConfig, train

SMOKE_COLUMNS = ("method", "seed", "co_detected", "co_epoch", "co_rule", "max_adv_acc", "final_adv_acc",
                 "final_clean_acc", "wall_time_s", "adv_acc_by_epoch")


@dataclass(frozen=True)
class SmokeSettings:
    methods: tuple[str, ...] = ("fgsm", "blacksmith")
    seeds: tuple[int, ...] = (0, 1, 2)
    epsilon: float = 16 / 255
    epochs: int = 20
    batch_size: int = 50
    lr_max: float = 0.01
    model: ViTConfig = field(default_factory=lambda: ViTConfig(
        image_size=16, patch_size=4, embed_dim=32, depth=4, num_heads=4, num_classes=10))
    # one flat colour per class: a robust solution exists well beyond epsilon
    data: SyntheticParams = field(default_factory=lambda: SyntheticParams(
        num_classes=10, image_size=16, samples=1000, noise=0.1, pattern_grid=1))
    test_samples: int = 500
    eval: EvalSettings = field(default_factory=lambda: EvalSettings(steps=10, restarts=1, probe_size=32))

    def train_config(self, method: str, seed: int) -> TrainConfig:
        test = SyntheticParams(**{**vars(self.data), "samples": self.test_samples})
        return TrainConfig(
            method=method, epochs=self.epochs, batch_size=self.batch_size, seed=seed, model=self.model,
            data=DatasetSource(synthetic=self.data), test_data=DatasetSource(split="test", synthetic=test),
            attack=attacks.fgsm(self.epsilon), lr=cyclic(self.lr_max), forge_lr=trapezoidal(self.lr_max),
            eval=self.eval,
        )


@dataclass
class SmokeRow:
    method: str
    seed: int
    history: list[EpochStats]
    wall_time_s: float

    @property
    def verdict(self):
        return detect_co(self.history)

    def cells(self) -> list:
        v = self.verdict
        adv = [s.adv_acc for s in self.history]
        return [self.method, self.seed, v.co_detected, "" if v.co_epoch is None else v.co_epoch, v.rule,
                f"{max(adv):.2f}", f"{adv[-1]:.2f}", f"{self.history[-1].clean_acc:.2f}",
                f"{self.wall_time_s:.1f}", " ".join(f"{a:.1f}" for a in adv)]


@dataclass
class SmokeReport:
    settings: SmokeSettings
    rows: list[SmokeRow]
    wall_time_s: float = 0.0

    def co_count(self, method: str) -> int:
        return sum(r.verdict.co_detected for r in self.rows if r.method == method)

    def runs(self, method: str) -> int:
        return sum(r.method == method for r in self.rows)

    def as_text(self) -> str:
        s = self.settings
        lines = [f"CO smoke: eps={s.epsilon * 255:g}/255, depth {s.model.depth}, {s.epochs} epochs, "
                 f"seeds {list(s.seeds)}, {self.wall_time_s / 60:.1f} min"]
        for m in s.methods:
            lines.append(f"  {m:<12} CO in {self.co_count(m)}/{self.runs(m)} seeds")
        for r in self.rows:
            v = r.verdict
            lines.append(f"  {r.method:<12} seed {r.seed}: co_epoch={v.co_epoch} ({v.rule}); adv by epoch "
                         + " ".join(f"{s.adv_acc:.0f}" for s in r.history))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "co_smoke.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SMOKE_COLUMNS)
            w.writerows(r.cells() for r in self.rows)
        with open(os.path.join(out_dir, "co_smoke.txt"), "w") as fh:
            fh.write(self.as_text())
        return path


def run_co_smoke(settings: SmokeSettings | None = None, out_dir: str | None = None, log=None) -> SmokeReport:
    settings = settings or SmokeSettings()
    t0 = time.perf_counter()
    rows = []
    for method in settings.methods:
        for seed in settings.seeds:
            t = time.perf_counter()
            _, history = train(settings.train_config(method, seed))
            rows.append(SmokeRow(method, seed, history, time.perf_counter() - t))
            if log is not None:
                log(f"{method} seed {seed}: {rows[-1].verdict}")
    report = SmokeReport(settings, rows, time.perf_counter() - t0)
    if out_dir is not None:
        report.write(out_dir)
    return report
