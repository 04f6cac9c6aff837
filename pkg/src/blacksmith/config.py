"""Plain-text run configuration.

One ``key = value`` per line, dotted keys for sections, ``#`` comments.
Numbers may be written as rationals (``attack.epsilon = 8/255``). Keys left
out get method-dependent defaults; ``dump_config`` writes every key fully
resolved, and that output parses back to the same ``TrainConfig``.

Example::

    method = blacksmith
    epochs = 30
    attack.epsilon = 8/255
    forge_rate = 0.66@0, 0.33@15
"""

from __future__ import annotations

from dataclasses import fields
from fractions import Fraction

from . import attacks, schedules
from .attacks import AttackSpec
from .data import DatasetSource, SyntheticParams
from .diagnostics import EvalSettings
from .errors import ConfigError
from .model import ViTConfig
from .schedules import ForgeRateSpec, LRScheduleSpec
from .training import METHODS, TrainConfig


def parse_number(text: str) -> float:
    text = text.strip()
    try:
        if "/" in text:
            num, den = text.split("/")
            return float(Fraction(num.strip()) / Fraction(den.strip()))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def _int(text):
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"not an integer: {text!r}") from None


def _bool(text):
    low = text.lower()
    if low in ("true", "t", "yes", "1"):
        return True
    if low in ("false", "f", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.lower() in ("none", "") else conv(text)

    return parse


def _floats(text):
    return tuple(parse_number(t) for t in text.split(",") if t.strip())


def _keypoints(text):
    out = []
    for item in text.split(","):
        x, sep, y = item.partition(":")
        if not sep:
            raise ValueError(f"keypoint {item.strip()!r} is not progress:lr")
        out.append((parse_number(x), parse_number(y)))
    return tuple(out)


def _segments(text):
    out = []
    for item in text.split(","):
        lam, sep, start = item.partition("@")
        if not sep:
            raise ValueError(f"forge-rate segment {item.strip()!r} is not value@epoch")
        out.append((_int(start.strip()), parse_number(lam)))
    return tuple(out)


def _depth(text):
    return None if text.lower() in ("full", "none") else _int(text)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


# key -> parser. Order here is the order ``dump_config`` writes.
KEYS = {
    "method": _choice(*METHODS),
    "epochs": _int,
    "batch_size": _int,
    "seed": _int,
    "checkpoint_every": _int,
    "model.image_size": _int,
    "model.patch_size": _int,
    "model.in_channels": _int,
    "model.embed_dim": _int,
    "model.depth": _int,
    "model.num_heads": _int,
    "model.mlp_ratio": parse_number,
    "model.num_classes": _int,
    "model.precision": _choice("fp32", "fp64"),
    "model.input_mean": _opt(_floats),
    "model.input_std": _opt(_floats),
    "data.kind": _choice("cifar10_bin", "cifar100_bin", "synthetic"),
    "data.path": _opt(str),
    "data.test_path": _opt(str),
    "data.subset_fraction": parse_number,
    "data.num_classes": _int,
    "data.image_size": _int,
    "data.channels": _int,
    "data.train_samples": _int,
    "data.test_samples": _int,
    "data.noise": parse_number,
    "data.pattern_grid": _int,
    "data.seed": _int,
    "attack.kind": _choice(attacks.SINGLE_STEP, attacks.MULTI_STEP),
    "attack.epsilon": parse_number,
    "attack.alpha": parse_number,
    "attack.noise_k": parse_number,
    "attack.clip": _bool,
    "attack.steps": _int,
    "attack.depth": _depth,
    "forge.alpha": parse_number,
    "forge.noise_k": parse_number,
    "forge.clip": _bool,
    "forge_rate": _segments,
    "lr.kind": _choice(schedules.CYCLIC, schedules.TRAPEZOIDAL, schedules.MULTISTEP),
    "lr.max": parse_number,
    "lr.keypoints": _keypoints,
    "lr.base": parse_number,
    "lr.milestones": _floats,
    "lr.decay": parse_number,
    "forge_lr.kind": _choice(schedules.CYCLIC, schedules.TRAPEZOIDAL, schedules.MULTISTEP),
    "forge_lr.max": parse_number,
    "forge_lr.keypoints": _keypoints,
    "forge_lr.base": parse_number,
    "forge_lr.milestones": _floats,
    "forge_lr.decay": parse_number,
    "optim.momentum": parse_number,
    "optim.weight_decay": parse_number,
    "eval.steps": _int,
    "eval.restarts": _int,
    "eval.alpha": _opt(parse_number),
    "eval.epsilon": _opt(parse_number),
    "eval.noise_k": parse_number,
    "eval.samples": _opt(_int),
    "eval.batch_size": _int,
    "eval.every": _int,
    "eval.probe_size": _int,
    "eval.workers": _int,
    "co.drop": parse_number,
    "co.floor": parse_number,
}
REQUIRED = ("method", "epochs", "attack.epsilon")

# (noise_k, alpha / epsilon, clip) of the single-step attack each method uses
_SINGLE_STEP_DEFAULTS = {
    "fgsm": (0.0, 1.0, True),
    "rs_fgsm": (1.0, 1.25, True),
    "n_fgsm": (2.0, 1.0, False),
    "blacksmith": (0.0, 1.0, True),
    "blacksmith_rs": (1.0, 1.25, True),
}


def read_pairs(text: str) -> tuple[dict, dict]:
    """Split config text into ``{key: raw value}`` and ``{key: line number}``."""
    values, lines = {}, {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n)
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", n)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", n)
        values[key] = value.strip()
        lines[key] = n
    return values, lines


def _schedule(v, prefix, default_kind, epochs) -> LRScheduleSpec:
    kind = v.get(prefix + ".kind", default_kind)
    if kind == schedules.MULTISTEP:
        milestones = v.get(prefix + ".milestones", (epochs / 2, epochs * 5 / 6))
        return schedules.multistep(v.get(prefix + ".base", 0.1), milestones, v.get(prefix + ".decay", 0.1))
    if prefix + ".keypoints" in v:
        return LRScheduleSpec(kind, v[prefix + ".keypoints"])
    max_lr = v.get(prefix + ".max", 0.2)
    return schedules.cyclic(max_lr) if kind == schedules.CYCLIC else schedules.trapezoidal(max_lr)


def build_config(v: dict) -> TrainConfig:
    """Resolve parsed values plus method defaults into a TrainConfig."""
    method, epochs = v["method"], v["epochs"]
    eps = v["attack.epsilon"]

    if method == "pgd_k":
        kind = v.get("attack.kind", attacks.MULTI_STEP)
        steps = v.get("attack.steps", 2)
        attack = AttackSpec(kind, eps, v.get("attack.alpha", eps / 2), v.get("attack.noise_k", 1.0),
                            v.get("attack.clip", True), steps, v.get("attack.depth"))
    else:
        k, scale, clip = _SINGLE_STEP_DEFAULTS[method]
        attack = AttackSpec(v.get("attack.kind", attacks.SINGLE_STEP), eps, v.get("attack.alpha", scale * eps),
                            v.get("attack.noise_k", k), v.get("attack.clip", clip), v.get("attack.steps", 1),
                            v.get("attack.depth"))

    model = ViTConfig(
        image_size=v.get("model.image_size", 32),
        patch_size=v.get("model.patch_size", 4),
        in_channels=v.get("model.in_channels", 3),
        embed_dim=v.get("model.embed_dim", 64),
        depth=v.get("model.depth", 12),
        num_heads=v.get("model.num_heads", 4),
        mlp_ratio=v.get("model.mlp_ratio", 2.0),
        num_classes=v.get("model.num_classes", 10),
        precision=v.get("model.precision", "fp32"),
        input_mean=v.get("model.input_mean"),
        input_std=v.get("model.input_std"),
    )

    data_kind = v.get("data.kind", "synthetic")
    synth = dict(
        num_classes=v.get("data.num_classes", model.num_classes),
        image_size=v.get("data.image_size", model.image_size),
        channels=v.get("data.channels", model.in_channels),
        noise=v.get("data.noise", 0.1),
        pattern_grid=v.get("data.pattern_grid", 4),
        seed=v.get("data.seed", 0),
    )
    frac = v.get("data.subset_fraction", 1.0)
    path = v.get("data.path")
    train_src = DatasetSource(data_kind, path, "train", frac,
                              SyntheticParams(samples=v.get("data.train_samples", 1000), **synth))
    test_src = DatasetSource(data_kind, v.get("data.test_path", path), "test", frac,
                             SyntheticParams(samples=v.get("data.test_samples", 200), **synth))

    blacksmith = method in ("blacksmith", "blacksmith_rs")
    if blacksmith:
        lr_default = schedules.CYCLIC
    else:
        lr_default = schedules.CYCLIC if method == "pgd_k" else schedules.MULTISTEP
    forge_attack = None
    if blacksmith:
        forge_attack = AttackSpec(
            attacks.MULTI_STEP, eps, v.get("forge.alpha", attack.alpha / 2),
            v.get("forge.noise_k", attack.noise_k), v.get("forge.clip", True), 2, model.half_depth + 1,
        )

    ev = EvalSettings(
        steps=v.get("eval.steps", 30),
        restarts=v.get("eval.restarts", 3),
        alpha=v.get("eval.alpha"),
        epsilon=v.get("eval.epsilon"),
        noise_k=v.get("eval.noise_k", 1.0),
        samples=v.get("eval.samples"),
        batch_size=v.get("eval.batch_size", 256),
        every=v.get("eval.every", 1),
        probe_size=v.get("eval.probe_size", 64),
        workers=v.get("eval.workers", 1),
    )
    return TrainConfig(
        method=method,
        epochs=epochs,
        batch_size=v.get("batch_size", 128),
        seed=v.get("seed", 0),
        model=model,
        data=train_src,
        test_data=test_src,
        attack=attack,
        forge_attack=forge_attack,
        forge_rate=ForgeRateSpec(v["forge_rate"]) if "forge_rate" in v else schedules.default_forge_rate(epochs),
        lr=_schedule(v, "lr", lr_default, epochs),
        forge_lr=_schedule(v, "forge_lr", schedules.TRAPEZOIDAL, epochs),
        momentum=v.get("optim.momentum", 0.9),
        weight_decay=v.get("optim.weight_decay", 0.0),
        eval=ev,
        checkpoint_every=v.get("checkpoint_every", 0),
        co_drop=v.get("co.drop", 20.0),
        co_floor=v.get("co.floor", 1.0),
    )


def loads_config(text: str) -> TrainConfig:
    raw, lines = read_pairs(text)
    values = {}
    for key, value in raw.items():
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lines[key]) from None
    end = len(text.splitlines()) + 1
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r} (end of file)", end)
    try:
        return build_config(values)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise ConfigError(str(exc), _blame(exc, lines, end)) from None


def _blame(exc, lines, default):
    """Best-effort line for a cross-key validation error: first key mentioned."""
    msg = str(exc)
    for key, n in lines.items():
        if key.split(".")[-1] in msg:
            return n
    return default


def parse_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads_config(text)


def fmt_number(x: float) -> str:
    """Exact text for a float; multiples of 1/255 are written as k/255."""
    if isinstance(x, int) or (isinstance(x, float) and x.is_integer() and abs(x) < 2**53):
        return repr(float(x))
    k = round(x * 255)
    if k and k / 255 == x:
        return f"{k}/255"
    return repr(x)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return fmt_number(value)
    return str(value)


def _schedule_items(prefix: str, spec: LRScheduleSpec):
    items = [(prefix + ".kind", spec.kind)]
    if spec.kind == schedules.MULTISTEP:
        items += [
            (prefix + ".base", fmt_number(spec.base_lr)),
            (prefix + ".milestones", ", ".join(fmt_number(m) for m in spec.milestones)),
            (prefix + ".decay", fmt_number(spec.decay)),
        ]
    else:
        kp = ", ".join(f"{fmt_number(x)}:{fmt_number(y)}" for x, y in spec.keypoints)
        items.append((prefix + ".keypoints", kp))
    return items


def config_items(cfg: TrainConfig) -> list[tuple[str, str]]:
    m, a, d, t, ev = cfg.model, cfg.attack, cfg.data, cfg.test_data, cfg.eval
    s = d.synthetic
    items = [
        ("method", cfg.method),
        ("epochs", cfg.epochs),
        ("batch_size", cfg.batch_size),
        ("seed", cfg.seed),
        ("checkpoint_every", cfg.checkpoint_every),
    ]
    for f in fields(ViTConfig):
        value = getattr(m, f.name)
        if f.name in ("input_mean", "input_std"):
            value = "none" if value is None else ", ".join(fmt_number(x) for x in value)
        items.append(("model." + f.name, value))
    items += [
        ("data.kind", d.kind),
        ("data.path", d.path),
        ("data.test_path", t.path),
        ("data.subset_fraction", d.subset_fraction),
        ("data.num_classes", s.num_classes),
        ("data.image_size", s.image_size),
        ("data.channels", s.channels),
        ("data.train_samples", s.samples),
        ("data.test_samples", t.synthetic.samples),
        ("data.noise", s.noise),
        ("data.pattern_grid", s.pattern_grid),
        ("data.seed", s.seed),
        ("attack.kind", a.kind),
        ("attack.epsilon", a.epsilon),
        ("attack.alpha", a.alpha),
        ("attack.noise_k", a.noise_k),
        ("attack.clip", a.clip),
        ("attack.steps", a.steps),
        ("attack.depth", "full" if a.depth is None else a.depth),
    ]
    if cfg.forge_attack is not None:
        f = cfg.forge_attack
        items += [("forge.alpha", f.alpha), ("forge.noise_k", f.noise_k), ("forge.clip", f.clip)]
    items.append(("forge_rate", ", ".join(f"{fmt_number(lam)}@{start}" for start, lam in cfg.forge_rate.segments)))
    items += _schedule_items("lr", cfg.lr)
    items += _schedule_items("forge_lr", cfg.forge_lr)
    items += [
        ("optim.momentum", cfg.momentum),
        ("optim.weight_decay", cfg.weight_decay),
        ("eval.steps", ev.steps),
        ("eval.restarts", ev.restarts),
        ("eval.alpha", ev.alpha),
        ("eval.epsilon", ev.epsilon),
        ("eval.noise_k", ev.noise_k),
        ("eval.samples", ev.samples),
        ("eval.batch_size", ev.batch_size),
        ("eval.every", ev.every),
        ("eval.probe_size", ev.probe_size),
        ("eval.workers", ev.workers),
        ("co.drop", cfg.co_drop),
        ("co.floor", cfg.co_floor),
    ]
    return [(k, _fmt(v)) for k, v in items]


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_items(cfg))

