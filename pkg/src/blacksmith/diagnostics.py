"""Robustness diagnostics: layer-wise perturbation norms, PGD evaluation, CO detection."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import torch

from .attacks import AttackSpec, craft, pgd
from .data import Dataset
from .errors import BoundsError, ConfigError, DegenerateProbeError
from .model import ActivationTrace, ImageBatch, ModelState, capture, predict
from .rng import substream


@dataclass(frozen=True)
class EvalSettings:
    """Evaluation attack settings; ``None`` fields are derived from the training epsilon."""

    steps: int = 30
    restarts: int = 3
    alpha: float | None = None
    epsilon: float | None = None
    noise_k: float = 1.0
    samples: int | None = None
    batch_size: int = 256
    every: int = 1
    probe_size: int = 64
    workers: int = 1

    def attack(self, train_epsilon: float) -> AttackSpec:
        eps = self.epsilon if self.epsilon is not None else train_epsilon
        alpha = self.alpha if self.alpha is not None else 2.5 * eps / self.steps
        return pgd(eps, self.steps, alpha, noise_k=self.noise_k)


def gamma_from_traces(original: ActivationTrace, attacked: ActivationTrace, k: int, p: float = 2) -> float:
    """p-norm of the whole-batch difference of layer-k outputs."""
    diff = (attacked[k] - original[k]).to(torch.float64).reshape(-1)
    return float(torch.linalg.vector_norm(diff, ord=p))


def gamma_k(model: ModelState, probe: ImageBatch, adv: ImageBatch, k: int, p: float = 2) -> float:
    if not 1 <= k <= model.config.depth:
        raise BoundsError(f"no trace at depth {k}; model has {model.config.depth} layers")
    return gamma_from_traces(capture(model, probe.pixels, k), capture(model, adv.pixels, k), k, p)


@dataclass(frozen=True)
class GammaResult:
    gamma_l: float
    gamma_2l: float
    gamma_star: float


def gamma_star_from_traces(original: ActivationTrace, attacked: ActivationTrace, p: float = 2) -> GammaResult:
    depth = len(original)
    gl = gamma_from_traces(original, attacked, depth // 2, p)
    g2l = gamma_from_traces(original, attacked, depth, p)
    if gl == 0.0:
        raise DegenerateProbeError("gamma_l is zero: the attack left layer l untouched")
    return GammaResult(gl, g2l, g2l / gl)


def gamma_star(
    model: ModelState,
    probe: ImageBatch,
    pgd_spec: AttackSpec,
    rng: torch.Generator | None = None,
    p: float = 2,
) -> GammaResult:
    """Attack the probe with full-depth PGD and compare the layer-l and layer-2l traces."""
    rng = rng if rng is not None else torch.Generator().manual_seed(0)
    adv = craft(model, probe, pgd_spec.with_(depth=None), rng)
    return gamma_star_from_traces(capture(model, probe.pixels), capture(model, adv.pixels), p)


@dataclass
class EvalReport:
    clean_acc: float
    adv_acc: float | None
    attack: str
    restarts: int
    per_restart_acc: list[float] = field(default_factory=list)
    samples: int = 0

    def as_text(self) -> str:
        lines = [
            f"samples = {self.samples}",
            f"clean_acc = {self.clean_acc:.4f}",
            f"adv_acc = {'' if self.adv_acc is None else f'{self.adv_acc:.4f}'}",
            f"attack = {self.attack}",
            f"restarts = {self.restarts}",
            "per_restart_acc = " + ", ".join(f"{a:.4f}" for a in self.per_restart_acc),
        ]
        return "\n".join(lines) + "\n"

    def as_row(self) -> dict:
        return {
            "samples": self.samples,
            "clean_acc": f"{self.clean_acc:.4f}",
            "adv_acc": "" if self.adv_acc is None else f"{self.adv_acc:.4f}",
            "restarts": self.restarts,
            "attack": self.attack,
        }


def _eval_batch(model, batch, b, attack, restarts, seed):
    correct = predict(model, batch.pixels) == batch.labels
    if attack is None:
        return correct, None
    per_restart = []
    for r in range(restarts):
        adv = craft(model, batch, attack, substream(seed, r, b, "eval"))
        per_restart.append(predict(model, adv.pixels) == batch.labels)
    return correct, torch.stack(per_restart)


def evaluate(
    model: ModelState,
    dataset: Dataset,
    attack: AttackSpec | None = None,
    restarts: int = 1,
    seed: int = 0,
    batch_size: int = 256,
    workers: int = 1,
) -> EvalReport:
    """Clean and worst-case-over-restarts adversarial accuracy, in percent.

    Restart ``r`` on batch ``b`` draws from substream ``(seed, r, b)``, so the
    result is the same for any worker count and adding restarts only adds
    draws.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    if attack is not None and restarts < 1:
        raise ConfigError("restarts must be >= 1")
    starts = range(0, len(dataset), batch_size)
    jobs = [(b, dataset.batch(slice(s, s + batch_size))) for b, s in enumerate(starts)]

    def run(job):
        b, batch = job
        return _eval_batch(model, batch, b, attack, restarts, seed)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    n = len(dataset)
    clean = torch.cat([c for c, _ in results])
    report = EvalReport(
        clean_acc=100.0 * clean.sum().item() / n,
        adv_acc=None,
        attack=attack.summary() if attack is not None else "none",
        restarts=restarts if attack is not None else 0,
        samples=n,
    )
    if attack is not None:
        robust = torch.cat([a for _, a in results], dim=1)  # [restarts, n]
        report.per_restart_acc = [100.0 * r.sum().item() / n for r in robust]
        report.adv_acc = 100.0 * robust.all(dim=0).sum().item() / n
    return report


@dataclass(frozen=True)
class CoVerdict:
    co_detected: bool
    co_epoch: int | None = None
    rule: str = "none"


def detect_co(history, drop_threshold: float = 20.0, floor: float = 1.0) -> CoVerdict:
    """Flag catastrophic overfitting from a sequence of epoch records.

    Fires at the first epoch whose adversarial accuracy is ``drop_threshold``
    points below the best seen so far, or below ``floor`` after having been
    above ``2 * floor``. Records without an adversarial accuracy are skipped.
    """
    best = -math.inf
    for row in history:
        acc = row.adv_acc
        if acc is None or math.isnan(acc):
            continue
        if best - acc >= drop_threshold:
            return CoVerdict(True, row.epoch, f"drop>={drop_threshold:g} from max {best:.2f} to {acc:.2f}")
        if acc < floor and best > 2 * floor:
            return CoVerdict(True, row.epoch, f"below floor {floor:g} after max {best:.2f}")
        best = max(best, acc)
    return CoVerdict(False, None, "none")
