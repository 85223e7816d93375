"""Depth/width-scalable 1-D ConvNeXt.

Layout for ``(D, W)``::

    stem      conv k=4 s=4, 1 -> 6W               1024 -> 256
    stage 1   D blocks   @ 6W                     256
    down      LN + conv k=2 s=2, 6W -> 12W        256 -> 128
    stage 2   D blocks   @ 12W                    128
    down      12W -> 24W                          128 -> 64
    stage 3   3D blocks  @ 24W                    64
    down      24W -> 48W                          64 -> 32
    stage 4   D blocks   @ 48W                    32
    head      LN -> mean over time -> linear 48W -> 1 -> sigmoid

Block: depthwise conv k=7 -> LN -> 1x1 to 4C -> GELU -> 1x1 back to C -> +x.
Layer norms carry no learnable gain/shift.
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.stats import truncnorm

from . import tensor as T

STAGE_MULTIPLIERS = (6, 12, 24, 48)
STAGE_LENGTHS = (256, 128, 64, 32)
STEM_KERNEL = 4
DOWNSAMPLE_KERNEL = 2
BLOCK_KERNEL = 7
EXPANSION = 4
SEGMENT_LENGTH = 1024


@dataclass(frozen=True)
class ModelConfig:
    depth: int
    width: int
    input_length: int = SEGMENT_LENGTH
    variant_name: str = "custom"

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError(f"depth and width must be positive, got D={self.depth} W={self.width}")
        if self.input_length != SEGMENT_LENGTH:
            raise ValueError(f"input_length must be {SEGMENT_LENGTH}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(m * self.width for m in STAGE_MULTIPLIERS)

    @property
    def depths(self) -> tuple[int, ...]:
        return (self.depth, self.depth, 3 * self.depth, self.depth)


VARIANTS: dict[str, ModelConfig] = {
    "nano": ModelConfig(1, 1, variant_name="nano"),
    "small": ModelConfig(2, 2, variant_name="small"),
    "medium": ModelConfig(3, 4, variant_name="medium"),
    "large": ModelConfig(3, 8, variant_name="large"),
    "xl": ModelConfig(6, 10, variant_name="xl"),
}


def variant(name: str) -> ModelConfig:
    try:
        return VARIANTS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    kernel: int = BLOCK_KERNEL

    @property
    def hidden(self) -> int:
        return EXPANSION * self.channels


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Names and shapes of every weight array, in storage order."""
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    chans = config.channels
    shapes["stem.weight"] = (chans[0], 1, STEM_KERNEL)
    shapes["stem.bias"] = (chans[0],)
    for s, (c, n) in enumerate(zip(chans, config.depths)):
        if s > 0:
            shapes[f"down{s}.weight"] = (c, chans[s - 1], DOWNSAMPLE_KERNEL)
            shapes[f"down{s}.bias"] = (c,)
        spec = BlockSpec(c)
        for b in range(n):
            p = f"stage{s + 1}.block{b}"
            shapes[f"{p}.dw.weight"] = (c, spec.kernel)
            shapes[f"{p}.dw.bias"] = (c,)
            shapes[f"{p}.pw1.weight"] = (spec.hidden, c, 1)
            shapes[f"{p}.pw1.bias"] = (spec.hidden,)
            shapes[f"{p}.pw2.weight"] = (c, spec.hidden, 1)
            shapes[f"{p}.pw2.bias"] = (c,)
    shapes["head.weight"] = (chans[-1],)
    shapes["head.bias"] = (1,)
    return shapes


class ModelParams(Mapping[str, np.ndarray]):
    """Read-only ordered mapping of weight name to array."""

    def __init__(self, config: ModelConfig, arrays: Mapping[str, np.ndarray]):
        expected = param_shapes(config)
        if list(arrays) != list(expected):
            missing = set(expected) - set(arrays)
            extra = set(arrays) - set(expected)
            raise ValueError(f"parameter names do not match config: missing={sorted(missing)} extra={sorted(extra)}")
        frozen: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, shape in expected.items():
            a = np.array(arrays[name], dtype=np.float64, copy=True)
            if a.shape != shape:
                raise ValueError(f"{name}: shape {a.shape} does not match expected {shape}")
            a.flags.writeable = False
            frozen[name] = a
        self.config = config
        self._arrays = frozen

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def n_scalars(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        merged = OrderedDict(self._arrays)
        merged.update(updates)
        return ModelParams(self.config, merged)


def _is_weight(name: str) -> bool:
    return name.endswith(".weight")


def build(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Truncated-normal (std 0.02, cut at 2 std) weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    for name, shape in param_shapes(config).items():
        if _is_weight(name):
            arrays[name] = 0.02 * truncnorm.rvs(-2.0, 2.0, size=shape, random_state=rng)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(config, arrays)


def count_params(config: ModelConfig) -> int:
    """Closed-form scalar parameter count."""
    c = config.channels
    total = STEM_KERNEL * c[0] + c[0]
    for s in range(1, 4):
        total += DOWNSAMPLE_KERNEL * c[s - 1] * c[s] + c[s]
    for ch, n in zip(c, config.depths):
        # dw k*C + C, pw1 4C*C + 4C, pw2 C*4C + C
        total += n * (BLOCK_KERNEL * ch + ch + 2 * EXPANSION * ch * ch + EXPANSION * ch + ch)
    return total + c[-1] + 1


def count_flops(config: ModelConfig) -> int:
    """Forward multiply-accumulates in conv and linear layers for one segment."""
    c = config.channels
    flops = STEM_KERNEL * c[0] * STAGE_LENGTHS[0]
    for s in range(4):
        length = STAGE_LENGTHS[s]
        if s > 0:
            flops += DOWNSAMPLE_KERNEL * c[s - 1] * c[s] * length
        per_block = BLOCK_KERNEL * c[s] * length + 2 * EXPANSION * c[s] * c[s] * length
        flops += config.depths[s] * per_block
    return flops + c[-1]


def logits(weights: Mapping[str, T.Tensor], x: T.Tensor, config: ModelConfig) -> T.Tensor:
    """Pre-sigmoid output for input shaped ``(..., 1, 1024)``."""
    if x.shape[-1] != config.input_length or x.shape[-2] != 1:
        raise ValueError(f"expected a single-channel segment of {config.input_length} samples, got {x.shape}")
    w = weights
    h = T.conv1d(x, w["stem.weight"], w["stem.bias"], stride=STEM_KERNEL)
    for s, n in enumerate(config.depths):
        if s > 0:
            h = T.layer_norm(h)
            h = T.conv1d(h, w[f"down{s}.weight"], w[f"down{s}.bias"], stride=DOWNSAMPLE_KERNEL)
        for b in range(n):
            p = f"stage{s + 1}.block{b}"
            r = T.depthwise_conv1d(h, w[f"{p}.dw.weight"], w[f"{p}.dw.bias"])
            r = T.layer_norm(r)
            r = T.conv1d(r, w[f"{p}.pw1.weight"], w[f"{p}.pw1.bias"])
            r = T.gelu(r)
            r = T.conv1d(r, w[f"{p}.pw2.weight"], w[f"{p}.pw2.bias"])
            h = T.add(h, r)
    h = T.layer_norm(h)
    h = T.avg_pool_full(h)
    return T.linear(h, w["head.weight"], w["head.bias"])


def as_tensors(params: ModelParams, requires_grad: bool = False) -> "OrderedDict[str, T.Tensor]":
    return OrderedDict((k, T.Tensor(v, requires_grad=requires_grad, name=k)) for k, v in params.items())


def forward(params: ModelParams, segment) -> np.ndarray | float:
    """Seizure probability for one ``(1, 1024)`` segment or a batch ``(B, 1, 1024)``."""
    x = np.asarray(segment, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    out = T.sigmoid(logits(as_tensors(params), T.Tensor(x), params.config)).data
    return float(out) if out.ndim == 0 else out


def predict_batches(params: ModelParams, segments: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Probabilities for an ``(N, 1024)`` array, evaluated in chunks."""
    segments = np.asarray(segments)
    out = np.empty(len(segments))
    weights = as_tensors(params)
    for i in range(0, len(segments), batch_size):
        x = T.Tensor(segments[i : i + batch_size, None, :].astype(np.float64))
        out[i : i + batch_size] = T.sigmoid(logits(weights, x, params.config)).data
    return out


# --- weights file -----------------------------------------------------------

MAGIC = b"CNX1DWTS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIII")  # magic, version, depth, width, n_arrays
_DIGEST = hashlib.sha256().digest_size


class WeightsFileError(ValueError):
    pass


def save_weights(params: ModelParams, path) -> None:
    cfg = params.config
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, cfg.depth, cfg.width, len(params))]
    for name, a in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_weights(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + _DIGEST:
        raise WeightsFileError(f"{path}: file truncated ({len(raw)} bytes)")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise WeightsFileError(f"{path}: checksum mismatch (truncated or corrupted)")
    magic, version, depth, width, n_arrays = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise WeightsFileError(f"{path}: not a weights file (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise WeightsFileError(f"{path}: unsupported format version {version}")
    config = ModelConfig(depth, width)
    for name, cfg in VARIANTS.items():
        if (cfg.depth, cfg.width) == (depth, width):
            config = cfg
    expected = param_shapes(config)
    if n_arrays != len(expected):
        raise WeightsFileError(f"{path}: {n_arrays} arrays stored, D={depth} W={width} needs {len(expected)}")
    pos = _HEADER.size
    arrays = OrderedDict()
    try:
        for _ in range(n_arrays):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            if name not in expected:
                raise WeightsFileError(f"{path}: unexpected array {name!r}")
            if tuple(shape) != expected[name]:
                raise WeightsFileError(f"{path}: {name} has shape {tuple(shape)}, expected {expected[name]}")
            size = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
    except WeightsFileError:
        raise
    except (struct.error, ValueError) as exc:
        raise WeightsFileError(f"{path}: file truncated while reading arrays") from exc
    if pos != len(body):
        raise WeightsFileError(f"{path}: {len(body) - pos} trailing bytes after last array")
    return ModelParams(config, arrays)
