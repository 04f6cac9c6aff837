"""L-infinity attacks: generalised single-step, full or truncated multi-step.

All attacks work on an additive perturbation ``delta``; the pixels actually fed
to the model are always ``clamp(pixels + delta, 0, 1)``. ``AttackSpec.alpha`` is
the size of each signed step, so the Forging sampler is a two-step spec whose
alpha is half the method step size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .errors import ConfigError
from .model import ImageBatch, ModelState, check_depth, loss_and_input_grad

SINGLE_STEP = "single_step"
MULTI_STEP = "multi_step"


@dataclass(frozen=True)
class AttackSpec:
    kind: str = SINGLE_STEP
    epsilon: float = 8 / 255
    alpha: float = 8 / 255
    noise_k: float = 0.0
    clip: bool = True
    steps: int = 1
    depth: int | None = None  # None means full depth

    def __post_init__(self):
        if self.kind not in (SINGLE_STEP, MULTI_STEP):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        # a zero budget is allowed: it is the null attack
        if self.epsilon < 0 or self.alpha < 0:
            raise ConfigError("epsilon and alpha must be non-negative")
        if self.noise_k < 0:
            raise ConfigError("noise_k must be non-negative")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.kind == SINGLE_STEP and self.steps != 1:
            raise ConfigError("single_step attacks take exactly one step")

    def with_(self, **changes) -> "AttackSpec":
        return replace(self, **changes)

    def summary(self) -> str:
        depth = "full" if self.depth is None else str(self.depth)
        return (
            f"{self.kind}(eps={self.epsilon:.6g}, alpha={self.alpha:.6g}, k={self.noise_k:g}, "
            f"clip={self.clip}, steps={self.steps}, depth={depth})"
        )


def uniform_init(shape, bound: float, rng: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    if bound < 0:
        raise ValueError("bound must be >= 0")
    if bound == 0:
        return torch.zeros(shape, dtype=dtype)
    u = torch.rand(shape, generator=rng, dtype=torch.float64)
    return ((2.0 * u - 1.0) * bound).to(dtype)


def signum(g: torch.Tensor) -> torch.Tensor:
    """Elementwise sign with sign(0) = 0."""
    return torch.sign(g)


def project_linf(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    return delta.clamp(-epsilon, epsilon)


def perturbed(batch: ImageBatch, delta: torch.Tensor) -> ImageBatch:
    return batch.with_pixels((batch.pixels + delta).clamp(0.0, 1.0))


def _signed_ascent(model, batch, delta, step, steps, epsilon, clip, depth, passes):
    for _ in range(steps):
        _, g = loss_and_input_grad(model, perturbed(batch, delta), depth)
        passes.append(depth)
        delta = delta + step * signum(g)
        if clip:
            delta = project_linf(delta, epsilon)
    return delta


def _crafting_depth(model: ModelState, spec: AttackSpec) -> int:
    return check_depth(model.config, spec.depth)


def craft_single_step(
    model: ModelState, batch: ImageBatch, spec: AttackSpec, rng: torch.Generator, passes=None
) -> ImageBatch:
    """One signed-gradient step from a uniformly noised start.

    With ``noise_k=0`` this is FGSM, ``noise_k=1, clip=True`` is RS-FGSM and
    ``noise_k=2, clip=False`` is N-FGSM. ``passes`` (a list) receives the depth
    of each forward/backward pass spent crafting.
    """
    if spec.kind != SINGLE_STEP:
        raise ConfigError("craft_single_step needs a single_step spec")
    depth = _crafting_depth(model, spec)
    delta = uniform_init(batch.pixels.shape, spec.noise_k * spec.epsilon, rng, batch.pixels.dtype)
    delta = _signed_ascent(
        model, batch, delta, spec.alpha, 1, spec.epsilon, spec.clip, depth,
        passes if passes is not None else [],
    )
    return perturbed(batch, delta)


def craft_multi_step(
    model: ModelState, batch: ImageBatch, spec: AttackSpec, rng: torch.Generator, passes=None
) -> ImageBatch:
    """PGD-style ascent of ``spec.steps`` signed steps through ``spec.depth`` layers.

    The projection is always onto the eps-ball around the original batch, so
    the total budget never grows with the step count.
    """
    if spec.kind != MULTI_STEP:
        raise ConfigError("craft_multi_step needs a multi_step spec")
    depth = _crafting_depth(model, spec)
    delta = uniform_init(batch.pixels.shape, spec.noise_k * spec.epsilon, rng, batch.pixels.dtype)
    delta = _signed_ascent(
        model, batch, delta, spec.alpha, spec.steps, spec.epsilon, spec.clip, depth,
        passes if passes is not None else [],
    )
    return perturbed(batch, delta)


def craft(model, batch, spec: AttackSpec, rng, passes=None) -> ImageBatch:
    fn = craft_single_step if spec.kind == SINGLE_STEP else craft_multi_step
    return fn(model, batch, spec, rng, passes)


# Named configurations. ``alpha_scale`` is relative to epsilon.

def fgsm(epsilon: float) -> AttackSpec:
    return AttackSpec(SINGLE_STEP, epsilon, epsilon, noise_k=0.0, clip=True)


def rs_fgsm(epsilon: float, alpha_scale: float = 1.25) -> AttackSpec:
    return AttackSpec(SINGLE_STEP, epsilon, alpha_scale * epsilon, noise_k=1.0, clip=True)


def n_fgsm(epsilon: float, noise_k: float = 2.0) -> AttackSpec:
    return AttackSpec(SINGLE_STEP, epsilon, epsilon, noise_k=noise_k, clip=False)


def pgd(epsilon: float, steps: int, alpha: float, noise_k: float = 1.0, depth=None) -> AttackSpec:
    return AttackSpec(MULTI_STEP, epsilon, alpha, noise_k=noise_k, clip=True, steps=steps, depth=depth)


def forging_spec(hammer: AttackSpec, half_depth: int, clip: bool = True) -> AttackSpec:
    """Two steps of alpha/2 through layers 1..l+1, sharing the hammer's eps and noise."""
    return AttackSpec(
        MULTI_STEP,
        hammer.epsilon,
        hammer.alpha / 2,
        noise_k=hammer.noise_k,
        clip=clip,
        steps=2,
        depth=half_depth + 1,
    )
