"""The convolutional embedding network: config, parameters, inference, checkpoints."""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .onehot import one_hot_batch
from .strings import Alphabet

log = logging.getLogger(__name__)

POOLS = ("max", "avg")
ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int
    input_width: int
    n_conv_layers: int = 10
    kernels_per_layer: int = 8
    kernel_size: int = 3
    pool: str = "max"
    pool_factor: int = 2
    activation: str = "relu"
    output_dim: int = 128
    # Convolve each one-hot row separately with shared single-channel
    # kernels; symbols then interact only in the linear head. When off,
    # the rows are input channels of the first convolution.
    row_conv: bool = True

    def __post_init__(self):
        if self.kernel_size != T.KERNEL_SIZE:
            raise ValueError(f"kernel_size must be {T.KERNEL_SIZE}")
        if self.pool not in POOLS:
            raise ValueError(f"pool must be one of {POOLS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        for name in ("input_channels", "input_width", "n_conv_layers", "kernels_per_layer", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pool_factor < 2:
            raise ValueError("pool_factor must be >= 2")

    def pools_at(self) -> list[bool]:
        """Whether each conv layer is followed by pooling.

        Pooling runs only while the width exceeds the pool factor, so deep
        stacks on short strings keep convolving at a small fixed width.
        """
        flags, w = [], self.input_width
        for _ in range(self.n_conv_layers):
            pooled = w > self.pool_factor
            flags.append(pooled)
            if pooled:
                w = T.pooled_width(w, self.pool_factor)
        return flags

    def widths(self) -> list[int]:
        """Activation width after each conv(+pool) layer."""
        out, w = [], self.input_width
        for pooled in self.pools_at():
            if pooled:
                w = T.pooled_width(w, self.pool_factor)
            out.append(w)
        return out

    @property
    def flatten_dim(self) -> int:
        rows = self.input_channels if self.row_conv else 1
        return rows * self.kernels_per_layer * self.widths()[-1]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        in_ch = 1 if self.row_conv else self.input_channels
        for i in range(self.n_conv_layers):
            shapes[f"conv{i}.weight"] = (self.kernels_per_layer, in_ch, self.kernel_size)
            shapes[f"conv{i}.bias"] = (self.kernels_per_layer,)
            in_ch = self.kernels_per_layer
        shapes["linear.weight"] = (self.output_dim, self.flatten_dim)
        shapes["linear.bias"] = (self.output_dim,)
        return shapes

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def to_ints(self) -> dict[str, int]:
        d = asdict(self)
        d["pool"] = POOLS.index(self.pool)
        d["activation"] = ACTIVATIONS.index(self.activation)
        d["row_conv"] = int(self.row_conv)
        return d

    @classmethod
    def from_ints(cls, d: dict[str, int]) -> "ModelConfig":
        d = {f.name: d[f.name] for f in fields(cls)}
        d["pool"] = POOLS[d["pool"]]
        d["activation"] = ACTIVATIONS[d["activation"]]
        d["row_conv"] = bool(d["row_conv"])
        return cls(**d)


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray]
    init_seed: int

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.init_seed)

    def round_to_f32(self) -> "ModelParams":
        """Snap values to float32 so checkpoints round-trip bit-exactly."""
        return ModelParams(
            {k: v.astype(np.float32).astype(np.float64) for k, v in self.tensors.items()},
            self.init_seed,
        )

    def equals(self, other: "ModelParams") -> bool:
        return self.tensors.keys() == other.tensors.keys() and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def init_model(cfg: ModelConfig, seed: int) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, rounded to float32 values."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in cfg.shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        # ReLU halves the second moment; the linear head has no activation after it.
        gain = 6.0 if name.startswith("conv") and cfg.activation == "relu" else 3.0
        bound = np.sqrt(gain / fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    params = ModelParams(tensors, seed).round_to_f32()
    log.info("initialized model with %d parameters", cfg.param_count)
    return params


def forward(params: ModelParams, cfg: ModelConfig, x: np.ndarray):
    """(B, C, L) one-hot batch -> ((B, d) embeddings, caches for backward)."""
    caches = []
    batch = x.shape[0]
    h = x.reshape(batch * x.shape[1], 1, x.shape[2]) if cfg.row_conv else x
    p = params.tensors
    for i, pooled in enumerate(cfg.pools_at()):
        h, conv_cache = T.conv1d_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
        act_cache = None
        if cfg.activation == "relu":
            h, act_cache = T.relu(h)
        pool_cache = None
        if pooled:
            pool_fn = T.maxpool1d if cfg.pool == "max" else T.avgpool1d
            h, pool_cache = pool_fn(h, cfg.pool_factor)
        caches.append((conv_cache, act_cache, pool_cache))
    flat_shape = h.shape
    out, lin_cache = T.linear(h.reshape(batch, -1), p["linear.weight"], p["linear.bias"])
    return out, (caches, flat_shape, lin_cache)


def _backward(cfg: ModelConfig, cache, dout: np.ndarray):
    caches, flat_shape, lin_cache = cache
    grads = {}
    dh, grads["linear.weight"], grads["linear.bias"] = T.linear_backward(dout, lin_cache)
    dh = dh.reshape(flat_shape)
    pool_bw = T.maxpool1d_backward if cfg.pool == "max" else T.avgpool1d_backward
    for i in reversed(range(len(caches))):
        conv_cache, act_cache, pool_cache = caches[i]
        if pool_cache is not None:
            dh = pool_bw(dh, pool_cache)
        if act_cache is not None:
            dh = T.relu_backward(dh, act_cache)
        dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = T.conv1d_backward(dh, conv_cache)
    return grads, dh.reshape(dout.shape[0], cfg.input_channels, cfg.input_width)


def backward(params: ModelParams, cfg: ModelConfig, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient ``dout`` of the (B, d) output."""
    return _backward(cfg, cache, dout)[0]


def input_grad(params: ModelParams, cfg: ModelConfig, cache, dout: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the (B, C, L) input batch; used by gradient checks."""
    return _backward(cfg, cache, dout)[1]


def encode_batch(strings: Sequence[bytes], alphabet: Alphabet, cfg: ModelConfig, dtype=np.float64) -> np.ndarray:
    if alphabet.size != cfg.input_channels:
        raise ValueError(f"alphabet has {alphabet.size} channels, model expects {cfg.input_channels}")
    ords = [alphabet.encode(s) for s in strings]
    return one_hot_batch(ords, cfg.input_channels, cfg.input_width, dtype=dtype)


def embed_batch(
    strings: Sequence[bytes],
    params: ModelParams,
    cfg: ModelConfig,
    alphabet: Alphabet,
    chunk: int = 256,
    dtype=np.float64,
) -> np.ndarray:
    """Embed strings in fixed-size chunks; rows follow input order."""
    out = np.empty((len(strings), cfg.output_dim), dtype=dtype)
    if dtype != np.float64:
        params = ModelParams({k: v.astype(dtype) for k, v in params.tensors.items()}, params.init_seed)
    for lo in range(0, len(strings), chunk):
        x = encode_batch(strings[lo : lo + chunk], alphabet, cfg, dtype=dtype)
        out[lo : lo + chunk] = forward(params, cfg, x)[0]
    return out


def embed(s: bytes, params: ModelParams, cfg: ModelConfig, alphabet: Alphabet) -> np.ndarray:
    return embed_batch([s], params, cfg, alphabet)[0]


# --- checkpoints ---------------------------------------------------------

CNED_MAGIC = b"CNED"
CNED_VERSION = 1


class CheckpointError(ValueError):
    pass


class Checkpoint(NamedTuple):
    params: ModelParams
    config: ModelConfig
    alphabet: Alphabet


def _pack_name(name: str) -> bytes:
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw


def dump_model(params: ModelParams, cfg: ModelConfig, alphabet: Alphabet) -> bytes:
    """Serialize to the CNED layout.

    The alphabet travels as an extra rank-1 tensor named ``alphabet`` and
    the unknown-symbol flag as a config field, so a checkpoint is enough
    to embed new strings.
    """
    ints = cfg.to_ints()
    ints["reserve_unknown"] = int(alphabet.reserve_unknown)
    buf = bytearray(CNED_MAGIC)
    buf += struct.pack("<II", CNED_VERSION, len(ints))
    for name, value in ints.items():
        buf += _pack_name(name) + struct.pack("<q", value)
    buf += struct.pack("<Q", params.init_seed)
    named = dict(params.tensors)
    named["alphabet"] = np.asarray(alphabet.chars, dtype=np.float64)
    buf += struct.pack("<I", len(named))
    for name, arr in named.items():
        buf += _pack_name(name) + struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(buf))
    return bytes(buf)


def save_model(params: ModelParams, cfg: ModelConfig, alphabet: Alphabet, path: str | Path) -> None:
    Path(path).write_bytes(dump_model(params, cfg, alphabet))


def parse_model(raw: bytes) -> Checkpoint:
    if len(raw) < 8 or raw[:4] != CNED_MAGIC:
        raise CheckpointError("not a CNED checkpoint")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise CheckpointError("checksum mismatch (corrupt or truncated checkpoint)")
    version, n_fields = struct.unpack_from("<II", raw, 4)
    if version != CNED_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12

    def name_at(pos):
        (n,) = struct.unpack_from("<H", raw, pos)
        return raw[pos + 2 : pos + 2 + n].decode(), pos + 2 + n

    ints = {}
    for _ in range(n_fields):
        name, pos = name_at(pos)
        (ints[name],) = struct.unpack_from("<q", raw, pos)
        pos += 8
    (seed,) = struct.unpack_from("<Q", raw, pos)
    (n_tensors,) = struct.unpack_from("<I", raw, pos + 8)
    pos += 12
    tensors = {}
    for _ in range(n_tensors):
        name, pos = name_at(pos)
        (rank,) = struct.unpack_from("<B", raw, pos)
        dims = struct.unpack_from(f"<{rank}I", raw, pos + 1)
        pos += 1 + 4 * rank
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 4 * count
    if pos != len(raw) - 4:
        raise CheckpointError("trailing bytes after tensor records")
    chars = tuple(int(c) for c in tensors.pop("alphabet"))
    alphabet = Alphabet(chars, reserve_unknown=bool(ints.pop("reserve_unknown")))
    cfg = ModelConfig.from_ints(ints)
    expected = cfg.shapes()
    if {k: v.shape for k, v in tensors.items()} != expected:
        raise CheckpointError("tensor shapes do not match the stored config")
    return Checkpoint(ModelParams(tensors, seed), cfg, alphabet)


def load_model(path: str | Path) -> Checkpoint:
    return parse_model(Path(path).read_bytes())
