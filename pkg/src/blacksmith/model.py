"""Minimal Vision Transformer on a flat named-parameter map.

Parameters live in an ordered ``dict[str, Tensor]`` instead of ``nn.Module``
attributes so that truncated forwards, freeze masks and checkpointing can all
address them by name. Layer names are 1-based (``layers.1`` .. ``layers.{2l}``)
to line up with forward depths.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .errors import BoundsError, ConfigError, NameResolutionError

_DTYPES = {"fp32": torch.float32, "fp64": torch.float64}


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    in_channels: int = 3
    embed_dim: int = 64
    depth: int = 12
    num_heads: int = 4
    mlp_ratio: float = 2.0
    num_classes: int = 10
    precision: str = "fp32"
    # opt-in per-channel standardization applied inside the model
    input_mean: tuple[float, ...] | None = None
    input_std: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.depth < 2 or self.depth % 2:
            raise ConfigError(f"depth must be even and >= 2, got {self.depth}")
        if self.embed_dim <= 0 or self.num_heads <= 0 or self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.mlp_ratio <= 0 or self.hidden_dim < 1:
            raise ConfigError("mlp_ratio must give a hidden width >= 1")
        if self.precision not in _DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_DTYPES)}")
        for name in ("input_mean", "input_std"):
            value = getattr(self, name)
            if value is not None and len(value) != self.in_channels:
                raise ConfigError(f"{name} needs {self.in_channels} entries")

    @property
    def half_depth(self) -> int:
        return self.depth // 2

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    @property
    def dtype(self) -> torch.dtype:
        return _DTYPES[self.precision]

    def replace(self, **changes) -> "ViTConfig":
        return ViTConfig(**{**asdict(self), **changes})


@dataclass
class ImageBatch:
    pixels: torch.Tensor  # [batch, channels, height, width] in [0, 1]
    labels: torch.Tensor  # int64 [batch]

    def __len__(self):
        return self.labels.shape[0]

    def with_pixels(self, pixels: torch.Tensor) -> "ImageBatch":
        return ImageBatch(pixels, self.labels)


@dataclass
class ModelState:
    config: ViTConfig
    params: dict[str, torch.Tensor]
    rng_seed: int = 0

    def param_names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def layer_names(self, layers) -> set[str]:
        """Parameter names belonging to the given 1-based layer indices."""
        out = set()
        for i in layers:
            if not 1 <= i <= self.config.depth:
                raise BoundsError(f"layer {i} outside 1..{self.config.depth}")
            prefix = f"layers.{i}."
            out.update(n for n in self.params if n.startswith(prefix))
        return out

    def group_names(self, group: str) -> set[str]:
        return {n for n in self.params if n.startswith(group + ".")}

    def forge_freeze_mask(self) -> set[str]:
        """Layers l+1..2l plus the head: everything a Forging update leaves alone."""
        l = self.config.half_depth
        return self.layer_names(range(l + 1, 2 * l + 1)) | self.group_names("head")

    def clone(self) -> "ModelState":
        return ModelState(
            self.config, {n: p.detach().clone() for n, p in self.params.items()}, self.rng_seed
        )


def layer_param_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.embed_dim, cfg.hidden_dim
    return {
        "norm1.weight": (d,),
        "norm1.bias": (d,),
        "attn.qkv.weight": (3 * d, d),
        "attn.proj.weight": (d, d),
        "norm2.weight": (d,),
        "norm2.bias": (d,),
        "mlp.fc1.weight": (h, d),
        "mlp.fc2.weight": (d, h),
    }


def param_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter order: patch embedding, layers 1..2l, head."""
    d = cfg.embed_dim
    patch_dim = cfg.in_channels * cfg.patch_size**2
    shapes = {
        "pe.proj.weight": (d, patch_dim),
        "pe.proj.bias": (d,),
        "pe.cls_token": (1, 1, d),
        "pe.pos_embed": (1, cfg.num_tokens, d),
    }
    per_layer = layer_param_shapes(cfg)
    for i in range(1, cfg.depth + 1):
        shapes.update({f"layers.{i}.{k}": s for k, s in per_layer.items()})
    shapes.update(
        {
            "head.norm.weight": (d,),
            "head.norm.bias": (d,),
            "head.fc.weight": (cfg.num_classes, d),
            "head.fc.bias": (cfg.num_classes,),
        }
    )
    return shapes


def build_model(cfg: ViTConfig, seed: int = 0) -> ModelState:
    """Initialise a ViT deterministically from ``seed``.

    Linear weights are N(0, 1/fan_in) and the class token and position
    embeddings N(0, 0.02^2), all truncated at two standard deviations.
    LayerNorms start at identity, biases at zero. Sampling happens in fp64 on
    a private generator and is cast afterwards, so fp32 and fp64 models built
    from the same seed agree up to rounding.
    """
    gen = torch.Generator().manual_seed(seed)
    params: dict[str, torch.Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if ".norm" in name and name.endswith(".weight"):
            t = torch.ones(shape, dtype=torch.float64)
        elif name.endswith("bias"):
            t = torch.zeros(shape, dtype=torch.float64)
        else:
            std = 1.0 / math.sqrt(shape[1]) if len(shape) == 2 else 0.02
            t = torch.randn(shape, generator=gen, dtype=torch.float64).clamp_(-2.0, 2.0) * std
        params[name] = t.to(cfg.dtype)
    return ModelState(cfg, params, seed)


def _patchify(cfg: ViTConfig, x: torch.Tensor) -> torch.Tensor:
    b, c, hgt, wid = x.shape
    if (c, hgt, wid) != (cfg.in_channels, cfg.image_size, cfg.image_size):
        raise BoundsError(
            f"expected images of shape {(cfg.in_channels, cfg.image_size, cfg.image_size)}, "
            f"got {(c, hgt, wid)}"
        )
    p = cfg.patch_size
    x = x.reshape(b, c, hgt // p, p, wid // p, p).permute(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (hgt // p) * (wid // p), c * p * p)


def _block(cfg: ViTConfig, P: dict, i: int, x: torch.Tensor) -> torch.Tensor:
    pre = f"layers.{i}."
    b, t, d = x.shape
    nh = cfg.num_heads
    hd = d // nh

    y = F.layer_norm(x, (d,), P[pre + "norm1.weight"], P[pre + "norm1.bias"])
    qkv = F.linear(y, P[pre + "attn.qkv.weight"]).reshape(b, t, 3, nh, hd).permute(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
    # softmax with explicit max-subtraction
    scores = scores - scores.amax(dim=-1, keepdim=True).detach()
    attn = scores.exp()
    attn = attn / attn.sum(dim=-1, keepdim=True)
    ctx = (attn @ v).transpose(1, 2).reshape(b, t, d)
    x = x + F.linear(ctx, P[pre + "attn.proj.weight"])

    y = F.layer_norm(x, (d,), P[pre + "norm2.weight"], P[pre + "norm2.bias"])
    y = F.gelu(F.linear(y, P[pre + "mlp.fc1.weight"]))
    return x + F.linear(y, P[pre + "mlp.fc2.weight"])


def _embed(cfg: ViTConfig, P: dict, pixels: torch.Tensor) -> torch.Tensor:
    x = pixels.to(cfg.dtype)
    if cfg.input_mean is not None:
        x = x - torch.tensor(cfg.input_mean, dtype=x.dtype).view(1, -1, 1, 1)
    if cfg.input_std is not None:
        x = x / torch.tensor(cfg.input_std, dtype=x.dtype).view(1, -1, 1, 1)
    tokens = F.linear(_patchify(cfg, x), P["pe.proj.weight"], P["pe.proj.bias"])
    cls = P["pe.cls_token"].expand(tokens.shape[0], -1, -1)
    return torch.cat([cls, tokens], dim=1) + P["pe.pos_embed"]


def _head(cfg: ViTConfig, P: dict, x: torch.Tensor) -> torch.Tensor:
    cls = F.layer_norm(x[:, 0], (cfg.embed_dim,), P["head.norm.weight"], P["head.norm.bias"])
    return F.linear(cls, P["head.fc.weight"], P["head.fc.bias"])


def check_depth(cfg: ViTConfig, depth_k: int) -> int:
    if depth_k is None:
        return cfg.depth
    if not 1 <= depth_k <= cfg.depth:
        raise BoundsError(f"depth_k={depth_k} outside 1..{cfg.depth}")
    return depth_k


def logits_from_params(
    cfg: ViTConfig,
    P: dict[str, torch.Tensor],
    pixels: torch.Tensor,
    depth_k: int | None = None,
    trace: list | None = None,
) -> torch.Tensor:
    depth_k = check_depth(cfg, depth_k)
    x = _embed(cfg, P, pixels)
    for i in range(1, depth_k + 1):
        x = _block(cfg, P, i, x)
        if trace is not None:
            trace.append(x)
    return _head(cfg, P, x)


def forward(
    model: ModelState,
    batch: ImageBatch | torch.Tensor,
    depth_k: int | None = None,
    capture_trace: bool = False,
):
    """Run patch embedding, layers 1..depth_k, then the head on the class token.

    Returns ``(logits, trace)``; ``trace`` lists the per-layer outputs when
    ``capture_trace`` is set and is ``None`` otherwise.
    """
    pixels = batch.pixels if isinstance(batch, ImageBatch) else batch
    layers = [] if capture_trace else None
    logits = logits_from_params(model.config, model.params, pixels, depth_k, layers)
    return logits, (ActivationTrace(layers) if capture_trace else None)


def loss_and_input_grad(model: ModelState, batch: ImageBatch, depth_k: int | None = None):
    """Mean cross-entropy of the truncated forward and its gradient w.r.t. pixels."""
    depth_k = check_depth(model.config, depth_k)
    x = batch.pixels.detach().to(model.config.dtype).requires_grad_(True)
    with torch.enable_grad():
        logits = logits_from_params(model.config, model.params, x, depth_k)
        loss = F.cross_entropy(logits, batch.labels)
        (grad,) = torch.autograd.grad(loss, x)
    return loss.detach(), grad.to(batch.pixels.dtype)


def loss_and_param_grads(model: ModelState, batch: ImageBatch, freeze_mask=frozenset(),
                         depth_k: int | None = None):
    """Loss and gradients for every parameter not in ``freeze_mask``.

    Training updates always use the full depth; ``depth_k`` exists for
    gradient checks of truncated forwards. Frozen tensors are fed to the graph
    without ``requires_grad`` so autograd skips their weight-gradient kernels.
    """
    unknown = set(freeze_mask) - model.params.keys()
    if unknown:
        raise NameResolutionError(f"unknown parameter names in freeze mask: {sorted(unknown)}")
    leaves = {
        n: (p if n in freeze_mask else p.detach().requires_grad_(True))
        for n, p in model.params.items()
    }
    trainable = [n for n in model.params if n not in freeze_mask]
    with torch.enable_grad():
        logits = logits_from_params(model.config, leaves, batch.pixels, depth_k)
        loss = F.cross_entropy(logits, batch.labels)
        grads = torch.autograd.grad(loss, [leaves[n] for n in trainable], allow_unused=True)
    grads = [torch.zeros_like(leaves[n]) if g is None else g for n, g in zip(trainable, grads)]
    return loss.detach(), dict(zip(trainable, grads))


def predict(model: ModelState, pixels: torch.Tensor, depth_k: int | None = None) -> torch.Tensor:
    with torch.no_grad():
        return logits_from_params(model.config, model.params, pixels, depth_k).argmax(dim=1)


def layer_flops(cfg: ViTConfig, batch_size: int) -> int:
    """Multiply-accumulate count (x2) of one transformer layer's forward pass."""
    t, d, h = cfg.num_tokens, cfg.embed_dim, cfg.hidden_dim
    dense = 2 * t * (3 * d * d + d * d + 2 * d * h)
    attention = 2 * 2 * t * t * d
    return batch_size * (dense + attention)


@dataclass
class ActivationTrace:
    layers: list[torch.Tensor] = field(default_factory=list)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, k: int) -> torch.Tensor:
        """1-based layer access."""
        if not 1 <= k <= len(self.layers):
            raise BoundsError(f"trace has layers 1..{len(self.layers)}, asked for {k}")
        return self.layers[k - 1]


def capture(model: ModelState, pixels: torch.Tensor, depth_k: int | None = None) -> ActivationTrace:
    with torch.no_grad():
        _, trace = forward(model, pixels, depth_k, capture_trace=True)
    return trace
