"""QIENet regressor: recurrent core over the slice sequence, attribute fusion, ReLU head.

FCRNN flattens each subsetted ``C' x 7 x 7`` frame into a vector; ConvRNN keeps
it as an image. The top layer's last hidden state is flattened (channels
first), concatenated with the encoded attributes, and fed through a dense head
with ReLU between layers and a linear scalar output.

Training works on the raw head output in target-scaled units. Inference
(:func:`forward`, :func:`predict`) clamps at zero and rescales to W/m2.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import numerics as nm
from .binio import Reader, atomic_write
from .channels import ALL_CHANNELS, HIMAWARI8, IR_SUBSET
from .errors import ConfigError, DimensionError, FormatError, InputError, StateError
from .pipeline.normalize import (
    DEFAULT_ALTITUDE_RANGE,
    DEFAULT_LATITUDE_RANGE,
    DEFAULT_LONGITUDE_RANGE,
    Normalizer,
    minmax,
)
from .rnn import CONV, FC, LstmParams, LstmStack, StackConfig, init_lstm_params
from .sample import SLICE_HW, SLICE_T, Dataset, Sample

FCRNN = "FCRNN"
CONVRNN = "ConvRNN"

Params = dict  # name -> float64 ndarray, insertion-ordered


@dataclass(frozen=True)
class ModelConfig:
    network_type: str = CONVRNN
    channel_subset: tuple = ALL_CHANNELS
    use_time: bool = True
    use_geography: bool = True
    stack: Optional[StackConfig] = None
    head_sizes: tuple = (128, 64, 1)
    seed: int = 0
    time_encoding: str = "cyclic"
    forget_bias: float = 1.0
    input_channels: int = len(HIMAWARI8)
    name: str = ""

    def __post_init__(self):
        if self.network_type not in (FCRNN, CONVRNN):
            raise ConfigError(f"network_type must be FCRNN or ConvRNN, got {self.network_type!r}")
        subset = tuple(int(c) for c in self.channel_subset)
        if not subset:
            raise ConfigError("channel_subset must not be empty")
        if len(set(subset)) != len(subset):
            raise ConfigError(f"channel_subset has duplicates: {subset}")
        if min(subset) < 0 or max(subset) >= min(self.input_channels, len(HIMAWARI8)):
            raise ConfigError(f"channel_subset {subset} outside B01..B16 / input channels")
        object.__setattr__(self, "channel_subset", subset)
        stack = self.stack
        if stack is None:
            stack = default_stack(self.network_type)
        elif isinstance(stack, dict):
            stack = StackConfig(**stack)
        if stack.mode != (FC if self.network_type == FCRNN else CONV):
            raise ConfigError(f"stack mode {stack.mode} does not match {self.network_type}")
        object.__setattr__(self, "stack", stack)
        head = tuple(int(h) for h in self.head_sizes)
        if not head or head[-1] != 1 or min(head) < 1:
            raise ConfigError(f"head_sizes must end in a single output unit, got {head}")
        object.__setattr__(self, "head_sizes", head)
        if self.time_encoding not in ("cyclic", "raw"):
            raise ConfigError(f"time_encoding must be 'cyclic' or 'raw', got {self.time_encoding!r}")

    @property
    def attribute_size(self) -> int:
        n = 0
        if self.use_time:
            n += 6 if self.time_encoding == "cyclic" else 3
        if self.use_geography:
            n += 3
        return n

    @property
    def rnn_input_size(self) -> int:
        c = len(self.channel_subset)
        return c * SLICE_HW * SLICE_HW if self.network_type == FCRNN else c

    @property
    def head_input_size(self) -> int:
        h = self.stack.hidden[-1]
        flat = h if self.network_type == FCRNN else h * SLICE_HW * SLICE_HW
        return flat + self.attribute_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_subset"] = list(self.channel_subset)
        d["head_sizes"] = list(self.head_sizes)
        d["stack"]["hidden"] = list(self.stack.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("stack") is not None:
            d["stack"] = StackConfig(**d["stack"])
        return cls(**d)


def default_stack(network_type: str) -> StackConfig:
    if network_type == FCRNN:
        return StackConfig(T=SLICE_T, hidden=(64, 64), mode=FC)
    return StackConfig(T=SLICE_T, hidden=(32, 32), mode=CONV, kernel_size=3)


# variant rows: (all channels?, time, geography) for variants 1..8
_VARIANT_ROWS = {
    1: (True, True, True),
    2: (True, True, False),
    3: (True, False, True),
    4: (True, False, False),
    5: (False, True, True),
    6: (False, True, False),
    7: (False, False, True),
    8: (False, False, False),
}
VARIANT_NAMES = tuple(f"{p}{i}" for p in ("FC", "Conv") for i in range(1, 9))


def variant(name: str, *, hidden=None, kernel_size=None, head_sizes=None, **overrides) -> ModelConfig:
    """Model configuration for a named variant row, e.g. ``variant("Conv6")``."""
    m = re.fullmatch(r"(?:QIENet_)?(FC|Conv)([1-8])", name.strip(), flags=re.IGNORECASE)
    if not m:
        raise ConfigError(f"unknown variant {name!r}; expected one of {', '.join(VARIANT_NAMES)}")
    kind = "FC" if m.group(1).upper() == "FC" else "Conv"
    all_ch, use_time, use_geo = _VARIANT_ROWS[int(m.group(2))]
    network = FCRNN if kind == "FC" else CONVRNN
    stack = default_stack(network)
    if hidden is not None:
        stack = replace(stack, hidden=tuple(hidden))
    if kernel_size is not None:
        stack = replace(stack, kernel_size=kernel_size)
    cfg = dict(
        network_type=network,
        channel_subset=ALL_CHANNELS if all_ch else IR_SUBSET,
        use_time=use_time,
        use_geography=use_geo,
        stack=stack,
        name=f"{kind}{m.group(2)}",
    )
    if head_sizes is not None:
        cfg["head_sizes"] = tuple(head_sizes)
    cfg.update(overrides)
    return ModelConfig(**cfg)


# -- attributes ---------------------------------------------------------------


def encode_attribute_arrays(hour, day, month, altitude, longitude, latitude,
                            cfg: ModelConfig, normalizer: Optional[Normalizer] = None) -> np.ndarray:
    """Batched attribute encoding; returns ``(N, cfg.attribute_size)``."""
    hour = np.atleast_1d(np.asarray(hour, dtype=np.float64))
    cols = []
    if cfg.use_time:
        day = np.atleast_1d(np.asarray(day, dtype=np.float64))
        month = np.atleast_1d(np.asarray(month, dtype=np.float64))
        if cfg.time_encoding == "cyclic":
            for value, period in ((hour, 24.0), (day, 31.0), (month, 12.0)):
                angle = 2.0 * math.pi * value / period
                cols += [np.sin(angle), np.cos(angle)]
        else:
            cols += [hour / 23.0, (day - 1.0) / 30.0, (month - 1.0) / 11.0]
    if cfg.use_geography:
        if normalizer is None:
            ranges = (DEFAULT_ALTITUDE_RANGE, DEFAULT_LONGITUDE_RANGE, DEFAULT_LATITUDE_RANGE)
        else:
            ranges = (normalizer.altitude_range, normalizer.longitude_range, normalizer.latitude_range)
        for value, bounds in zip((altitude, longitude, latitude), ranges):
            cols.append(minmax(np.atleast_1d(value), bounds))
    if not cols:
        return np.zeros((hour.shape[0], 0))
    return np.stack(cols, axis=1)


def encode_attributes(s: Sample, cfg: ModelConfig, normalizer: Optional[Normalizer] = None) -> np.ndarray:
    return encode_attribute_arrays(
        s.hour, s.day, s.month, s.altitude, s.longitude, s.latitude, cfg, normalizer
    )[0]


# -- parameters -----------------------------------------------------------------


def init_params(cfg: ModelConfig) -> Params:
    """Deterministic parameter initialization from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    params: Params = {}
    n_in = cfg.rnn_input_size
    mode = cfg.stack.mode
    for l, m in enumerate(cfg.stack.hidden):
        p = init_lstm_params(mode, n_in, m, rng, cfg.stack.kernel_size, cfg.forget_bias)
        params[f"rnn.{l}.Wx"], params[f"rnn.{l}.Wh"], params[f"rnn.{l}.b"] = p.Wx, p.Wh, p.b
        n_in = m
    fan_in = cfg.head_input_size
    for j, width in enumerate(cfg.head_sizes):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"head.{j}.W"] = rng.uniform(-bound, bound, (width, fan_in))
        params[f"head.{j}.b"] = np.zeros(width)
        fan_in = width
    return params


def expected_shapes(cfg: ModelConfig) -> dict:
    n_in = cfg.rnn_input_size
    k = cfg.stack.kernel_size
    shapes = {}
    for l, m in enumerate(cfg.stack.hidden):
        ksz = (k, k) if cfg.stack.mode == CONV else ()
        shapes[f"rnn.{l}.Wx"] = (4, m, n_in) + ksz
        shapes[f"rnn.{l}.Wh"] = (4, m, m) + ksz
        shapes[f"rnn.{l}.b"] = (4, m)
        n_in = m
    fan_in = cfg.head_input_size
    for j, width in enumerate(cfg.head_sizes):
        shapes[f"head.{j}.W"] = (width, fan_in)
        shapes[f"head.{j}.b"] = (width,)
        fan_in = width
    return shapes


def check_params(cfg: ModelConfig, params: Params) -> None:
    shapes = expected_shapes(cfg)
    if list(shapes) != list(params):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise DimensionError(f"parameter names do not match config (missing {missing}, extra {extra})")
    for name, shape in shapes.items():
        if tuple(params[name].shape) != shape:
            raise DimensionError(f"{name}: shape {params[name].shape} != expected {shape}")


def lstm_layers(cfg: ModelConfig, params: Params) -> list[LstmParams]:
    return [
        LstmParams(cfg.stack.mode, params[f"rnn.{l}.Wx"], params[f"rnn.{l}.Wh"], params[f"rnn.{l}.b"])
        for l in range(cfg.stack.layers)
    ]


# -- network ------------------------------------------------------------------------


def model_inputs(data, cfg: ModelConfig, normalizer: Optional[Normalizer] = None):
    """Normalize, subset and encode a Sample or Dataset into ``(X, A)`` arrays.

    ``X`` is ``(B, T, C', H, W)`` and ``A`` is ``(B, attribute_size)``.
    """
    if isinstance(data, Sample):
        data = Dataset.from_samples([data])
    slices = data.slices
    if slices.shape[2] != cfg.input_channels:
        raise DimensionError(f"data has {slices.shape[2]} channels, config expects {cfg.input_channels}")
    if slices.shape[1] != cfg.stack.T or slices.shape[3:] != (SLICE_HW, SLICE_HW):
        raise DimensionError(
            f"slices {slices.shape[1:]} do not match T={cfg.stack.T}, {SLICE_HW}x{SLICE_HW}"
        )
    X = slices[:, :, list(cfg.channel_subset)]
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite values in model input slices")
    if normalizer is not None and not data.normalized:
        lo = normalizer.channel_min[list(cfg.channel_subset)][:, None, None]
        span = normalizer.span()[list(cfg.channel_subset)][:, None, None]
        X = (X - lo) / span
        dead = np.asarray(normalizer.degenerate)[list(cfg.channel_subset)]
        if dead.any():
            X[:, :, dead] = 0.0
    A = encode_attribute_arrays(
        data.hour, data.day, data.month, data.altitude, data.longitude, data.latitude, cfg, normalizer
    )
    return np.ascontiguousarray(X), A


class Network:
    """Batched QIENet evaluation with an optional cache for backpropagation."""

    def __init__(self, cfg: ModelConfig, params: Params, stable: bool = False):
        check_params(cfg, params)
        self.cfg = cfg
        self.params = params
        self.stable = stable
        self.stack = LstmStack(cfg.stack, lstm_layers(cfg, params), stable)
        self._cache = None

    def _sequence(self, X: np.ndarray) -> list:
        B, T = X.shape[:2]
        if self.cfg.network_type == FCRNN:
            return [X[:, t].reshape(B, -1) for t in range(T)]
        return [X[:, t] for t in range(T)]

    def forward(self, X: np.ndarray, A: np.ndarray, keep: bool = False) -> np.ndarray:
        """Raw (unclamped, target-scaled) output of shape ``(B,)``."""
        B = X.shape[0]
        if A.shape != (B, self.cfg.attribute_size):
            raise DimensionError(f"attributes {A.shape} != ({B}, {self.cfg.attribute_size})")
        last = self.stack.forward(self._sequence(X), keep=keep)
        z = np.concatenate([last.reshape(B, -1), A], axis=1)
        zs, acts = [z], []
        n = len(self.cfg.head_sizes)
        for j in range(n):
            a = nm.rowdot(z, self.params[f"head.{j}.W"], self.stable) + self.params[f"head.{j}.b"]
            acts.append(a)
            if j < n - 1:
                z = np.maximum(a, 0.0)
                zs.append(z)
        if keep:
            self._cache = (zs, acts, last.shape)
        return acts[-1][:, 0]

    def backward(self, grad_out: np.ndarray) -> Params:
        """Parameter gradients of ``sum(grad_out * raw_output)``."""
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        zs, acts, last_shape = self._cache
        grads: Params = {}
        d = np.asarray(grad_out, dtype=np.float64).reshape(-1, 1)
        for j in range(len(self.cfg.head_sizes) - 1, -1, -1):
            grads[f"head.{j}.W"] = d.T @ zs[j]
            grads[f"head.{j}.b"] = d.sum(axis=0)
            dz = d @ self.params[f"head.{j}.W"]
            if j > 0:
                d = dz * (acts[j - 1] > 0)
        n_flat = int(np.prod(last_shape[1:]))
        dlast = dz[:, :n_flat].reshape(last_shape)
        layer_grads, _ = self.stack.backward(dlast)
        out: Params = {}
        for l, g in enumerate(layer_grads):
            out[f"rnn.{l}.Wx"], out[f"rnn.{l}.Wh"], out[f"rnn.{l}.b"] = g.Wx, g.Wh, g.b
        for j in range(len(self.cfg.head_sizes)):
            out[f"head.{j}.W"] = grads[f"head.{j}.W"]
            out[f"head.{j}.b"] = grads[f"head.{j}.b"]
        return out


def loss_and_grad(X, A, y, cfg: ModelConfig, params: Params) -> tuple[float, Params]:
    """Mean squared error of the raw output against scaled targets, with gradients."""
    net = Network(cfg, params)
    raw = net.forward(X, A, keep=True)
    r = raw - y
    loss = float(np.mean(r * r))
    return loss, net.backward(2.0 * r / r.shape[0])


def forward(s: Sample, cfg: ModelConfig, params: Params, normalizer: Optional[Normalizer] = None) -> float:
    """GHI estimate in W/m2 for one sample (clamped at zero)."""
    return float(predict(Dataset.from_samples([s]), cfg, params, normalizer)[0])


def predict(data: Dataset, cfg: ModelConfig, params: Params,
            normalizer: Optional[Normalizer] = None, batch_size: int = 512) -> np.ndarray:
    """Batched inference; each row is bit-identical to :func:`forward` on that sample."""
    net = Network(cfg, params, stable=True)
    scale = 1.0 if normalizer is None else normalizer.target_max
    out = np.empty(len(data))
    for start in range(0, len(data), batch_size):
        part = data.subset(np.arange(start, min(start + batch_size, len(data))))
        X, A = model_inputs(part, cfg, normalizer)
        out[start:start + len(part)] = np.maximum(net.forward(X, A), 0.0) * scale
    return out


# -- checkpoints ------------------------------------------------------------------

MAGIC = b"QIEN"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Params
    normalizer: Optional[Normalizer] = None
    version: int = FORMAT_VERSION
    meta: dict = field(default_factory=dict)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    check_params(ckpt.config, ckpt.params)
    header = {
        "config": ckpt.config.to_dict(),
        "normalizer": None if ckpt.normalizer is None else ckpt.normalizer.to_dict(),
        "tensors": list(ckpt.params),
        "meta": ckpt.meta,
    }
    blob = canonical_json(header).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    for arr in ckpt.params.values():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save(ckpt: Checkpoint, path) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = Reader(data, "checkpoint")
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"checkpoint: bad magic {magic!r} at offset 0")
    version, n = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise FormatError(f"checkpoint: unsupported version {version} at offset 4")
    start = r.off
    try:
        header = json.loads(r.take(n).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        norm = None if header["normalizer"] is None else Normalizer.from_dict(header["normalizer"])
        names = list(header["tensors"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint: bad header at offset {start}: {exc}") from None
    params: Params = {}
    for name in names:
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        payload = r.take(8 * count)
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.off != len(data):
        raise FormatError(f"checkpoint: {len(data) - r.off} trailing bytes at offset {r.off}")
    try:
        check_params(cfg, params)
    except DimensionError as exc:
        raise FormatError(f"checkpoint: {exc}") from None
    return Checkpoint(cfg, params, norm, version, header.get("meta") or {})


def load(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
