"""Hammering, Forging, the randomized Blacksmith loop, and baseline AT loops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import torch

from . import attacks
from .attacks import AttackSpec
from .data import Dataset, DatasetSource, iter_batches, load_dataset, num_batches
from .diagnostics import EvalSettings, evaluate, gamma_star
from .errors import ConfigError, DegenerateProbeError, StructuralError
from .model import ImageBatch, ModelState, ViTConfig, build_model, loss_and_param_grads
from .rng import substream
from .schedules import ForgeRateSpec, LRScheduleSpec, cyclic, forge_rate_at, lr_at, trapezoidal

log = logging.getLogger(__name__)

BLACKSMITH_METHODS = ("blacksmith", "blacksmith_rs")
BASELINE_METHODS = ("fgsm", "rs_fgsm", "n_fgsm", "pgd_k")
METHODS = BLACKSMITH_METHODS + BASELINE_METHODS

HAMMER = "hammer"
FORGE = "forge"


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: LRScheduleSpec | None = None
    velocity: dict[str, torch.Tensor] = field(default_factory=dict)


def sgd_momentum_update(opt: OptimizerState, params: dict, grads: dict, lr: float) -> None:
    """In-place heavy-ball step on the names present in ``grads``.

    v <- m*v + g + wd*p ; p <- p - lr*v. Velocities start at zero.
    """
    with torch.no_grad():
        for name, g in grads.items():
            if name not in params:
                raise StructuralError(f"gradient for unknown parameter {name!r}")
            p = params[name]
            if g.shape != p.shape:
                raise StructuralError(f"{name}: grad shape {tuple(g.shape)} != param {tuple(p.shape)}")
            d = g + opt.weight_decay * p if opt.weight_decay else g
            v = opt.velocity.get(name)
            v = d.clone() if v is None else opt.momentum * v + d
            opt.velocity[name] = v
            p.sub_(lr * v)


@dataclass
class StepReport:
    scheme: str
    loss: float
    crafting_depths: list[int]
    lr: float

    @property
    def crafting_passes(self) -> int:
        return len(self.crafting_depths)


def hammer_step(model: ModelState, batch: ImageBatch, spec: AttackSpec, hammer_opt: OptimizerState,
                lr: float, rng: torch.Generator) -> StepReport:
    """Single-step attack through every layer, then update every parameter."""
    if spec.kind != attacks.SINGLE_STEP:
        raise ConfigError("hammering uses a single-step attack")
    if spec.depth not in (None, model.config.depth):
        raise ConfigError("hammering attacks the full depth")
    depths: list[int] = []
    adv = attacks.craft_single_step(model, batch, spec, rng, depths)
    loss, grads = loss_and_param_grads(model, adv)
    sgd_momentum_update(hammer_opt, model.params, grads, lr)
    return StepReport(HAMMER, float(loss), depths, lr)


def forge_step(model: ModelState, batch: ImageBatch, spec: AttackSpec, forge_opt: OptimizerState,
               lr: float, rng: torch.Generator) -> StepReport:
    """Two-step attack through layers 1..l+1, then update PE and layers 1..l only."""
    l = model.config.half_depth
    if spec.kind != attacks.MULTI_STEP or spec.steps != 2 or spec.depth != l + 1:
        raise ConfigError(f"forging needs a 2-step multi_step spec at depth {l + 1}")
    depths: list[int] = []
    adv = attacks.craft_multi_step(model, batch, spec, rng, depths)
    loss, grads = loss_and_param_grads(model, adv, model.forge_freeze_mask())
    sgd_momentum_update(forge_opt, model.params, grads, lr)
    return StepReport(FORGE, float(loss), depths, lr)


def baseline_step(model, batch, spec, opt, lr, rng) -> StepReport:
    depths: list[int] = []
    adv = attacks.craft(model, batch, spec, rng, depths)
    loss, grads = loss_and_param_grads(model, adv)
    sgd_momentum_update(opt, model.params, grads, lr)
    return StepReport(HAMMER, float(loss), depths, lr)


@dataclass
class TrainConfig:
    method: str = "blacksmith"
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0
    model: ViTConfig = field(default_factory=ViTConfig)
    data: DatasetSource = field(default_factory=DatasetSource)
    test_data: DatasetSource = field(default_factory=lambda: DatasetSource(split="test"))
    attack: AttackSpec = field(default_factory=lambda: attacks.fgsm(8 / 255))
    forge_attack: AttackSpec | None = None
    forge_rate: ForgeRateSpec = field(default_factory=lambda: ForgeRateSpec(((0, 0.66), (15, 0.33))))
    lr: LRScheduleSpec = field(default_factory=cyclic)
    forge_lr: LRScheduleSpec = field(default_factory=trapezoidal)
    momentum: float = 0.9
    weight_decay: float = 0.0
    eval: EvalSettings = field(default_factory=EvalSettings)
    checkpoint_every: int = 0
    co_drop: float = 20.0
    co_floor: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.is_blacksmith:
            if self.attack.kind != attacks.SINGLE_STEP:
                raise ConfigError("blacksmith hammering needs a single_step attack")
            if self.forge_attack is None:
                self.forge_attack = attacks.forging_spec(self.attack, self.model.half_depth)

    @property
    def is_blacksmith(self) -> bool:
        return self.method in BLACKSMITH_METHODS


@dataclass
class EpochStats:
    epoch: int
    clean_acc: float = math.nan
    adv_acc: float = math.nan
    gamma_l: float = math.nan
    gamma_2l: float = math.nan
    gamma_star: float = math.nan
    lr_hammer: float = math.nan
    lr_forge: float = math.nan
    forge_rate: float = math.nan
    forge_count: int = 0
    hammer_count: int = 0
    train_loss: float = math.nan
    wall_time_s: float = 0.0


def scheme_draw(seed: int, epoch: int, batch_index: int) -> float:
    """p ~ Unif(0, 1) from the dedicated scheme-choice substream."""
    return torch.rand((), generator=substream(seed, epoch, batch_index, "scheme"), dtype=torch.float64).item()


def probe_batch(cfg: TrainConfig, train_set: Dataset) -> ImageBatch:
    """Fixed random training batch for the gamma traces, chosen once per run."""
    n = min(cfg.eval.probe_size, len(train_set))
    idx = torch.randperm(len(train_set), generator=substream(cfg.seed, "probe"))[:n].sort().values
    return train_set.batch(idx)


def epoch_diagnostics(cfg: TrainConfig, model: ModelState, test_set: Dataset, probe: ImageBatch,
                      stats: EpochStats) -> None:
    eval_attack = cfg.eval.attack(cfg.attack.epsilon)
    subset = test_set if cfg.eval.samples is None else test_set.take(cfg.eval.samples)
    eval_seed = int(torch.randint(2**62, (), generator=substream(cfg.seed, stats.epoch, "eval")))
    report = evaluate(model, subset, eval_attack, cfg.eval.restarts, seed=eval_seed,
                      batch_size=cfg.eval.batch_size, workers=cfg.eval.workers)
    stats.clean_acc, stats.adv_acc = report.clean_acc, report.adv_acc
    try:
        g = gamma_star(model, probe, eval_attack, substream(cfg.seed, stats.epoch, "probe"))
    except DegenerateProbeError:
        return
    stats.gamma_l, stats.gamma_2l, stats.gamma_star = g.gamma_l, g.gamma_2l, g.gamma_star


def _load_sets(cfg, train_set, test_set):
    if train_set is None:
        train_set = load_dataset(cfg.data)
    if test_set is None:
        test_set = load_dataset(cfg.test_data)
    if len(train_set) == 0:
        raise ConfigError("training dataset is empty")
    return train_set, test_set


def train(cfg: TrainConfig, train_set: Dataset | None = None, test_set: Dataset | None = None,
          on_epoch=None, on_step=None):
    """Run any method; returns ``(model, [EpochStats])``.

    ``on_epoch(model, stats)`` runs after each epoch; ``on_step(model, report)``
    after every optimizer step (tests use it to watch the freeze contract).
    """
    train_set, test_set = _load_sets(cfg, train_set, test_set)
    model = build_model(cfg.model, cfg.seed)
    main_opt = OptimizerState(cfg.momentum, cfg.weight_decay, cfg.lr)
    forge_opt = OptimizerState(cfg.momentum, cfg.weight_decay, cfg.forge_lr)
    probe = probe_batch(cfg, train_set)
    nb = num_batches(train_set, cfg.batch_size)
    history = []

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lam = forge_rate_at(cfg.forge_rate, epoch) if cfg.is_blacksmith else 0.0
        stats = EpochStats(epoch=epoch, forge_rate=lam)
        losses = []
        for b, batch in enumerate(iter_batches(train_set, cfg.batch_size, substream(cfg.seed, epoch, "data"))):
            progress = epoch + b / nb
            lr_h = lr_at(cfg.lr, progress, cfg.epochs)
            rng = substream(cfg.seed, epoch, b, "attack")
            if cfg.is_blacksmith:
                lr_f = lr_at(cfg.forge_lr, progress, cfg.epochs)
                if scheme_draw(cfg.seed, epoch, b) < lam:
                    report = forge_step(model, batch, cfg.forge_attack, forge_opt, lr_f, rng)
                    stats.forge_count += 1
                else:
                    report = hammer_step(model, batch, cfg.attack, main_opt, lr_h, rng)
                    stats.hammer_count += 1
                stats.lr_forge = lr_f
            else:
                report = baseline_step(model, batch, cfg.attack, main_opt, lr_h, rng)
                stats.hammer_count += 1
            stats.lr_hammer = lr_h
            losses.append(report.loss)
            if on_step is not None:
                on_step(model, report)
        stats.train_loss = sum(losses) / len(losses)
        if not all(torch.isfinite(p).all() for p in model.params.values()):
            raise StructuralError(f"non-finite parameters after epoch {epoch}")
        if cfg.eval.every and ((epoch + 1) % cfg.eval.every == 0 or epoch + 1 == cfg.epochs):
            epoch_diagnostics(cfg, model, test_set, probe, stats)
        stats.wall_time_s = time.perf_counter() - t0
        log.info("epoch %d loss %.4f clean %.2f adv %.2f forge %d hammer %d", epoch, stats.train_loss,
                 stats.clean_acc, stats.adv_acc, stats.forge_count, stats.hammer_count)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(model, stats)
    return model, history


def blacksmith_train(cfg: TrainConfig, train_set=None, test_set=None, **hooks):
    if not cfg.is_blacksmith:
        raise ConfigError(f"method {cfg.method!r} is not a blacksmith variant")
    return train(cfg, train_set, test_set, **hooks)


def baseline_train(cfg: TrainConfig, train_set=None, test_set=None, **hooks):
    if cfg.is_blacksmith:
        raise ConfigError(f"method {cfg.method!r} is not a baseline")
    return train(cfg, train_set, test_set, **hooks)
