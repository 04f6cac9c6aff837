"""Command-line entry point: train, eval, trace, schedule, synth-data.

Failures print one line ``error: <category>: <message>`` to stderr and exit
with status 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import re
import sys

from .checkpoint import load_checkpoint
from .config import parse_config, parse_number
from .data import SyntheticParams, gen_synthetic, load_dataset, save_npz
from .diagnostics import evaluate, gamma_star
from .errors import ConfigError, ToolkitError
from .report import run
from .rng import substream
from .schedules import sample_schedule
from .training import probe_batch


def _cmd_train(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = args.out or os.path.join("runs", f"{cfg.method}_seed{cfg.seed}")
    _, stats, paths = run(cfg, out)
    last = stats[-1]
    print(f"wrote {out}: {len(stats)} epochs, clean {last.clean_acc:.2f}%, adv {last.adv_acc:.2f}%")
    return 0


def _check_model(cfg, model):
    if model.config != cfg.model:
        raise ConfigError("checkpoint architecture differs from the config's model section")


def _cmd_eval(args):
    cfg = parse_config(args.config)
    model = load_checkpoint(args.checkpoint)
    _check_model(cfg, model)
    test_set = load_dataset(cfg.test_data)
    samples = args.samples if args.samples is not None else cfg.eval.samples
    if samples is not None:
        test_set = test_set.take(samples)
    restarts = args.restarts if args.restarts is not None else cfg.eval.restarts
    report = evaluate(model, test_set, cfg.eval.attack(cfg.attack.epsilon), restarts,
                      seed=cfg.seed, batch_size=cfg.eval.batch_size, workers=cfg.eval.workers)
    sys.stdout.write(report.as_text())
    row = report.as_row()
    w = csv.writer(sys.stdout, lineterminator="\n")
    sys.stdout.write("\n")
    w.writerow(row.keys())
    w.writerow(row.values())
    return 0


def _checkpoint_epoch(path, default):
    m = re.search(r"epoch_(\d+)", os.path.basename(path))
    return int(m.group(1)) if m else default


def _cmd_trace(args):
    cfg = parse_config(args.config)
    if os.path.isdir(args.checkpoint):
        paths = sorted(os.path.join(args.checkpoint, f) for f in os.listdir(args.checkpoint) if f.endswith(".ckpt"))
    else:
        paths = [args.checkpoint]
    if not paths:
        raise ConfigError(f"no .ckpt files under {args.checkpoint}")
    probe = probe_batch(cfg, load_dataset(cfg.data))
    spec = cfg.eval.attack(cfg.attack.epsilon)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("epoch", "gamma_l", "gamma_2l", "gamma_star"))
        rows = []
        for path in paths:
            model = load_checkpoint(path)
            _check_model(cfg, model)
            epoch = _checkpoint_epoch(path, cfg.epochs - 1)
            g = gamma_star(model, probe, spec, substream(cfg.seed, epoch, "probe"))
            rows.append((epoch, repr(g.gamma_l), repr(g.gamma_2l), repr(g.gamma_star)))
        w.writerows(sorted(rows))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_schedule(args):
    cfg = parse_config(args.config)
    hammer = sample_schedule(cfg.lr, cfg.epochs, args.per_epoch)
    forge = sample_schedule(cfg.forge_lr, cfg.epochs, args.per_epoch)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("progress", "lr_hammer", "lr_forge"))
    for (p, a), (_, b) in zip(hammer, forge):
        w.writerow((repr(p), repr(a), repr(b)))
    return 0


def _parse_params(text: str) -> SyntheticParams:
    kinds = {f.name: f.type for f in dataclasses.fields(SyntheticParams)}
    values = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in kinds:
            raise ConfigError(f"bad synthetic parameter {item!r}; known: {', '.join(kinds)}")
        try:
            values[key] = parse_number(raw) if key == "noise" else int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return SyntheticParams(**values)


def _cmd_synth(args):
    params = _parse_params(args.params or "")
    ds = gen_synthetic(params, args.split)
    out = args.out if args.out.endswith(".npz") else args.out + ".npz"
    save_npz(ds, out)
    print(f"wrote {out}: {len(ds)} samples, {ds.num_classes} classes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blacksmith", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="clean and PGD accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--restarts", type=int)
    p.add_argument("--samples", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("trace", help="gamma_l, gamma_2l, gamma* for one checkpoint or a directory of them")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("schedule", help="dump (progress, lr) samples of both schedules as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--per-epoch", type=int, default=4)
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("synth-data", help="write a synthetic dataset as .npz")
    p.add_argument("--params", default="", help="comma list, e.g. num_classes=4,samples=512,noise=0.1")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
