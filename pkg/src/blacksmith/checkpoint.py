"""Checkpoints: a text manifest followed by raw little-endian tensor data.

Layout::

    blacksmith-checkpoint 1
    config image_size=32 patch_size=4 ...
    seed 0
    tensor pe.proj.weight float32 64,48
    ...
    end
    <raw bytes of each tensor, in manifest order>
"""

from __future__ import annotations

from dataclasses import fields

import numpy as np
import torch

from .errors import FormatError
from .model import ModelState, ViTConfig, param_shapes

MAGIC = "blacksmith-checkpoint 1"
_NP = {"float32": "<f4", "float64": "<f8"}


def _config_line(cfg: ViTConfig) -> str:
    parts = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(float(x)) for x in v)
        elif v is None:
            v = "none"
        parts.append(f"{f.name}={v}")
    return "config " + " ".join(parts)


def _parse_config_line(line: str) -> ViTConfig:
    kinds = {f.name: f.type for f in fields(ViTConfig)}
    values = {}
    for item in line.split()[1:]:
        key, _, raw = item.partition("=")
        if key not in kinds:
            raise FormatError(f"unknown config field {key!r} in checkpoint")
        if raw == "none":
            values[key] = None
        elif key in ("input_mean", "input_std"):
            values[key] = tuple(float(x) for x in raw.split(","))
        elif key == "precision":
            values[key] = raw
        elif key == "mlp_ratio":
            values[key] = float(raw)
        else:
            values[key] = int(raw)
    return ViTConfig(**values)


def dumps_checkpoint(model: ModelState) -> bytes:
    header = [MAGIC, _config_line(model.config), f"seed {model.rng_seed}"]
    blobs = []
    for name in param_shapes(model.config):
        t = model.params[name].detach().contiguous()
        dtype = str(t.dtype).removeprefix("torch.")
        if dtype not in _NP:
            raise FormatError(f"{name}: unsupported dtype {dtype}")
        header.append(f"tensor {name} {dtype} {','.join(map(str, t.shape))}")
        blobs.append(t.numpy().astype(_NP[dtype], copy=False).tobytes())
    header.append("end")
    return ("\n".join(header) + "\n").encode() + b"".join(blobs)


def loads_checkpoint(raw: bytes) -> ModelState:
    pos = 0
    lines = []
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise FormatError("checkpoint manifest has no 'end' line", pos)
        try:
            line = raw[pos:nl].decode("ascii")
        except UnicodeDecodeError:
            raise FormatError("checkpoint manifest has no 'end' line", pos) from None
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0] != MAGIC:
        raise FormatError("not a blacksmith checkpoint", 0)
    try:
        cfg = _parse_config_line(lines[1])
        seed = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from None
    params = {}
    for line in lines[3:]:
        try:
            _, name, dtype, shape = line.split()
            shape = tuple(int(s) for s in shape.split(","))
            np_dtype = _NP[dtype]
        except (ValueError, KeyError):
            raise FormatError(f"bad tensor line {line!r}") from None
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * np.dtype(np_dtype).itemsize
        if pos + nbytes > len(raw):
            raise FormatError(f"tensor {name} truncated", pos)
        arr = np.frombuffer(raw, dtype=np_dtype, count=count, offset=pos).reshape(shape)
        params[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
        pos += nbytes
    if pos != len(raw):
        raise FormatError("trailing bytes after last tensor", pos)
    expected = param_shapes(cfg)
    if list(params) != list(expected):
        raise FormatError("checkpoint tensor names do not match the model layout")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise FormatError(f"{name}: shape {tuple(params[name].shape)} != {shape}")
    return ModelState(cfg, params, seed)


def save_checkpoint(model: ModelState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(model))


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
