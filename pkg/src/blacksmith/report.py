"""Run directories: manifest, per-epoch CSV, summary, plot data, checkpoints."""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import os
from dataclasses import dataclass, field

from . import __version__
from .checkpoint import save_checkpoint
from .config import dump_config
from .diagnostics import detect_co
from .schedules import sample_schedule
from .training import EpochStats, TrainConfig, train

EPOCH_COLUMNS = (
    "epoch", "clean_acc", "adv_acc", "gamma_l", "gamma_2l", "gamma_star",
    "lr_hammer", "lr_forge", "lambda", "forge_count", "hammer_count", "train_loss",
)
GAMMA_COLUMNS = ("epoch", "gamma_l", "gamma_2l", "gamma_star")


@dataclass
class RunManifest:
    config: TrainConfig
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def render(self) -> str:
        head = [
            f"# toolkit_version: {self.version}",
            f"# seed: {self.config.seed}",
            f"# started: {self.started}",
            f"# finished: {self.finished}",
        ]
        head += [f"# output.{k}: {v}" for k, v in sorted(self.outputs.items())]
        return "\n".join(head) + "\n" + dump_config(self.config)


def _cell(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _epoch_row(s: EpochStats) -> list[str]:
    values = (s.epoch, s.clean_acc, s.adv_acc, s.gamma_l, s.gamma_2l, s.gamma_star,
              s.lr_hammer, s.lr_forge, s.forge_rate, s.forge_count, s.hammer_count, s.train_loss)
    return [_cell(v) for v in values]


def _write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def emit_report(stats: list[EpochStats], manifest: RunManifest, out_dir: str) -> dict[str, str]:
    """Write epochs.csv, timing.csv, summary.csv, lr_schedule.csv, gamma_trace.csv and the manifest.

    Wall-clock times go to timing.csv and summary.csv only, so epochs.csv is
    reproducible byte for byte.
    """
    if not stats:
        raise ValueError("no epoch statistics to report")
    os.makedirs(out_dir, exist_ok=True)
    cfg = manifest.config
    paths = {name: os.path.join(out_dir, name) for name in
             ("epochs.csv", "timing.csv", "summary.csv", "lr_schedule.csv", "gamma_trace.csv", "manifest.txt")}

    _write_csv(paths["epochs.csv"], EPOCH_COLUMNS, [_epoch_row(s) for s in stats])
    _write_csv(paths["timing.csv"], ("epoch", "wall_time_s"), [(s.epoch, f"{s.wall_time_s:.3f}") for s in stats])
    _write_csv(paths["gamma_trace.csv"], GAMMA_COLUMNS,
               [[_cell(v) for v in (s.epoch, s.gamma_l, s.gamma_2l, s.gamma_star)] for s in stats])

    hammer = sample_schedule(cfg.lr, cfg.epochs)
    forge = sample_schedule(cfg.forge_lr, cfg.epochs)
    _write_csv(paths["lr_schedule.csv"], ("progress", "lr_hammer", "lr_forge"),
               [(_cell(p), _cell(a), _cell(b)) for (p, a), (_, b) in zip(hammer, forge)])

    verdict = detect_co(stats, cfg.co_drop, cfg.co_floor)
    last = stats[-1]
    summary = {
        "method": cfg.method,
        "epochs": cfg.epochs,
        "epsilon": f"{cfg.attack.epsilon * 255:g}/255",
        "final_clean_acc": _cell(last.clean_acc),
        "final_adv_acc": _cell(last.adv_acc),
        "co_detected": verdict.co_detected,
        "co_epoch": "" if verdict.co_epoch is None else verdict.co_epoch,
        "co_rule": verdict.rule,
        "forge_steps": sum(s.forge_count for s in stats),
        "hammer_steps": sum(s.hammer_count for s in stats),
        "total_time_s": f"{sum(s.wall_time_s for s in stats):.3f}",
        "subset_fraction": cfg.data.subset_fraction,
    }
    _write_csv(paths["summary.csv"], list(summary), [list(summary.values())])

    manifest.outputs.update({k.split(".")[0]: v for k, v in paths.items() if k != "manifest.txt"})
    with open(paths["manifest.txt"], "w") as fh:
        fh.write(manifest.render())
    return paths


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run(cfg: TrainConfig, out_dir: str, train_set=None, test_set=None):
    """Train ``cfg`` and write a complete run directory. Returns (model, stats, paths)."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(cfg, started=_now())
    ckpt_dir = os.path.join(out_dir, "checkpoints")

    def on_epoch(model, stats):
        if cfg.checkpoint_every and (stats.epoch + 1) % cfg.checkpoint_every == 0:
            os.makedirs(ckpt_dir, exist_ok=True)
            save_checkpoint(model, os.path.join(ckpt_dir, f"epoch_{stats.epoch:03d}.ckpt"))

    model, stats = train(cfg, train_set, test_set, on_epoch=on_epoch)
    final = os.path.join(out_dir, "model.ckpt")
    save_checkpoint(model, final)
    manifest.finished = _now()
    manifest.outputs["checkpoint"] = final
    paths = emit_report(stats, manifest, out_dir)
    paths["checkpoint"] = final
    return model, stats, paths
