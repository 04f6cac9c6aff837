"""Learning-rate schedules and the Forge-Rate schedule.

Piecewise-linear keypoints are stored as fractions of the whole run, so a
schedule written for 30 epochs stretches to any other length. Multistep
milestones are absolute epochs.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from .errors import BoundsError, ConfigError

CYCLIC = "cyclic"
TRAPEZOIDAL = "trapezoidal"
MULTISTEP = "multistep"


@dataclass(frozen=True)
class LRScheduleSpec:
    kind: str
    keypoints: tuple[tuple[float, float], ...] = ()
    base_lr: float = 0.0
    milestones: tuple[float, ...] = ()
    decay: float = 0.1

    def __post_init__(self):
        if self.kind in (CYCLIC, TRAPEZOIDAL):
            if len(self.keypoints) < 2:
                raise ConfigError(f"{self.kind} schedule needs at least two keypoints")
            xs = [x for x, _ in self.keypoints]
            if xs[0] != 0.0:
                raise ConfigError("first keypoint must sit at progress 0")
            if xs[-1] != 1.0:
                raise ConfigError("last keypoint must sit at progress 1")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ConfigError("keypoints must be strictly increasing")
            if any(lr < 0 for _, lr in self.keypoints):
                raise ConfigError("learning rates must be >= 0")
        elif self.kind == MULTISTEP:
            if self.base_lr < 0 or self.decay < 0:
                raise ConfigError("base_lr and decay must be >= 0")
            if list(self.milestones) != sorted(self.milestones):
                raise ConfigError("milestones must be sorted")
        else:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")


def cyclic(max_lr: float = 0.2) -> LRScheduleSpec:
    """Triangle: 0 -> max_lr at mid-run -> 0."""
    return LRScheduleSpec(CYCLIC, ((0.0, 0.0), (0.25, max_lr / 2), (0.5, max_lr), (0.75, max_lr / 2), (1.0, 0.0)))


def trapezoidal(max_lr: float = 0.2) -> LRScheduleSpec:
    """Reaches max_lr at a quarter of the run, holds it to half, then decays to 0."""
    return LRScheduleSpec(
        TRAPEZOIDAL, ((0.0, 0.0), (0.25, max_lr), (0.5, max_lr), (0.75, max_lr / 2), (1.0, 0.0))
    )


def multistep(base_lr: float = 0.1, milestones=(15.0, 25.0), decay: float = 0.1) -> LRScheduleSpec:
    return LRScheduleSpec(MULTISTEP, base_lr=base_lr, milestones=tuple(milestones), decay=decay)


def lr_at(spec: LRScheduleSpec, progress: float, total: float) -> float:
    """Learning rate after ``progress`` epochs of a ``total``-epoch run."""
    if total <= 0 or not 0 <= progress <= total:
        raise BoundsError(f"progress {progress} outside [0, {total}]")
    if spec.kind == MULTISTEP:
        passed = bisect.bisect_right(spec.milestones, progress)
        return spec.base_lr * spec.decay**passed
    t = progress / total
    xs = [x for x, _ in spec.keypoints]
    i = bisect.bisect_left(xs, t)
    if i < len(xs) and xs[i] == t:
        return spec.keypoints[i][1]
    (x0, y0), (x1, y1) = spec.keypoints[i - 1], spec.keypoints[i]
    return y0 + (y1 - y0) * (t - x0) / (x1 - x0)


@dataclass(frozen=True)
class ForgeRateSpec:
    segments: tuple[tuple[int, float], ...] = ((0, 0.66),)

    def __post_init__(self):
        if not self.segments or self.segments[0][0] != 0:
            raise ConfigError("forge-rate segments must start at epoch 0")
        starts = [s for s, _ in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("forge-rate segment starts must be strictly increasing")
        if any(not 0.0 <= lam <= 1.0 for _, lam in self.segments):
            raise ConfigError("forge rate must lie in [0, 1]")


def default_forge_rate(epochs: int) -> ForgeRateSpec:
    """0.66 while epoch < N/2, 0.33 from then on."""
    return ForgeRateSpec(((0, 0.66), (math.ceil(epochs / 2), 0.33)))


def constant_forge_rate(value: float) -> ForgeRateSpec:
    return ForgeRateSpec(((0, value),))


def forge_rate_at(spec: ForgeRateSpec, epoch: int) -> float:
    if epoch < 0:
        raise BoundsError("epoch must be >= 0")
    starts = [s for s, _ in spec.segments]
    return spec.segments[bisect.bisect_right(starts, epoch) - 1][1]


def sample_schedule(spec: LRScheduleSpec, total: float, steps_per_epoch: int = 4):
    """(progress, lr) pairs on a regular grid, for plotting."""
    n = int(round(total * steps_per_epoch))
    return [(total * i / n, lr_at(spec, total * i / n, total)) for i in range(n + 1)]
