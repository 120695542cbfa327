"""FC-LSTM and ConvLSTM cells, multilayer stacks and backpropagation through time.

Cells follow the peephole-free LSTM:

    f = sigmoid(W_xf x + W_hf h + b_f)
    i = sigmoid(W_xi x + W_hi h + b_i)
    c' = f * c + i * tanh(W_xc x + W_hc h + b_c)
    o = sigmoid(W_xo x + W_ho h + b_o)
    h' = o * tanh(c')

In Conv mode every product is a zero-padded "same" convolution.

Gate weights are stored stacked along a leading axis of length four in the
order (f, i, c, o); ``W_xf`` and friends are views into that stack. The
public API takes channels-first images; internally Conv tensors are kept
channels-last so both modes share the same gate algebra on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DimensionError, StateError

GATES = ("f", "i", "c", "o")
FC = "FC"
CONV = "Conv"


@dataclass
class LstmParams:
    """Weights of one LSTM layer.

    FC:   Wx (4, m, n), Wh (4, m, m), b (4, m)
    Conv: Wx (4, m, n, k, k), Wh (4, m, m, k, k), b (4, m)
    """

    mode: str
    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.mode not in (FC, CONV):
            raise ConfigError(f"unknown LSTM mode {self.mode!r}")
        nd = 3 if self.mode == FC else 5
        if self.Wx.ndim != nd or self.Wh.ndim != nd or self.b.ndim != 2:
            raise DimensionError(
                f"{self.mode} LSTM expects {nd}-D weight stacks, got "
                f"Wx {self.Wx.shape}, Wh {self.Wh.shape}, b {self.b.shape}"
            )
        m = self.b.shape[1]
        if (
            self.Wx.shape[:2] != (4, m)
            or self.Wh.shape[:3] != (4, m, m)
            or self.b.shape[0] != 4
        ):
            raise DimensionError(
                f"inconsistent hidden size: Wx {self.Wx.shape}, Wh {self.Wh.shape}, b {self.b.shape}"
            )
        if self.mode == CONV:
            k = self.Wx.shape[3:]
            if self.Wh.shape[3:] != k or k[0] != k[1]:
                raise DimensionError(f"kernel sizes differ: {self.Wx.shape} vs {self.Wh.shape}")
            if k[0] % 2 == 0:
                raise ConfigError(f"conv kernel size must be odd, got {k[0]}")

    @property
    def hidden_size(self) -> int:
        return self.b.shape[1]

    @property
    def input_size(self) -> int:
        return self.Wx.shape[2]

    @property
    def kernel_size(self) -> int:
        return self.Wx.shape[-1] if self.mode == CONV else 1

    @classmethod
    def from_gates(cls, mode: str, **w) -> "LstmParams":
        """Build from individual ``W_xf``, ``W_hf``, ..., ``b_o`` arrays."""
        try:
            Wx = np.stack([nm.as_tensor(w[f"W_x{g}"]) for g in GATES])
            Wh = np.stack([nm.as_tensor(w[f"W_h{g}"]) for g in GATES])
            b = np.stack([nm.as_tensor(w[f"b_{g}"]) for g in GATES])
        except KeyError as exc:
            raise ConfigError(f"missing gate parameter {exc.args[0]}") from None
        except ValueError as exc:
            raise DimensionError(f"gate parameters do not share a shape: {exc}") from None
        return cls(mode, Wx, Wh, b)

    def zeros_like(self) -> "LstmParams":
        return LstmParams(self.mode, np.zeros_like(self.Wx), np.zeros_like(self.Wh), np.zeros_like(self.b))

    def combined_matrix(self) -> np.ndarray:
        """Input and recurrent weights fused into one ``(4m, ·)`` matrix."""
        m, n = self.hidden_size, self.input_size
        W = np.concatenate([self.Wx, self.Wh], axis=2)
        if self.mode == FC:
            return W.reshape(4 * m, n + m)
        k = self.kernel_size
        return nm.kernel_matrix(W.reshape(4 * m, n + m, k, k))

    def split_matrix(self, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`combined_matrix` (used for gradients)."""
        m, n = self.hidden_size, self.input_size
        if self.mode == FC:
            W = M.reshape(4, m, n + m)
        else:
            k = self.kernel_size
            W = nm.kernel_from_matrix(M, n + m, k, k).reshape(4, m, n + m, k, k)
        return np.ascontiguousarray(W[:, :, :n]), np.ascontiguousarray(W[:, :, n:])


def _gate_view(stack: str, index: int):
    return property(lambda self: getattr(self, stack)[index])


for _i, _g in enumerate(GATES):
    setattr(LstmParams, f"W_x{_g}", _gate_view("Wx", _i))
    setattr(LstmParams, f"W_h{_g}", _gate_view("Wh", _i))
    setattr(LstmParams, f"b_{_g}", _gate_view("b", _i))


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if np.shape(self.h) != np.shape(self.c):
            raise DimensionError(f"state h {np.shape(self.h)} and c {np.shape(self.c)} differ")


@dataclass(frozen=True)
class StackConfig:
    """T timesteps through ``len(hidden)`` stacked layers."""

    T: int = 6
    hidden: tuple = (64, 64)
    mode: str = FC
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"need at least one layer with positive width, got {self.hidden}")
        if self.mode not in (FC, CONV):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == CONV and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def layers(self) -> int:
        return len(self.hidden)


def init_lstm_params(
    mode: str,
    input_size: int,
    hidden_size: int,
    rng: np.random.Generator,
    kernel_size: int = 3,
    forget_bias: float = 1.0,
) -> LstmParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except b_f."""
    n, m = input_size, hidden_size
    if mode == FC:
        bound = 1.0 / np.sqrt(n + m)
        Wx = rng.uniform(-bound, bound, (4, m, n))
        Wh = rng.uniform(-bound, bound, (4, m, m))
    else:
        k = kernel_size
        bound = 1.0 / np.sqrt((n + m) * k * k)
        Wx = rng.uniform(-bound, bound, (4, m, n, k, k))
        Wh = rng.uniform(-bound, bound, (4, m, m, k, k))
    b = np.zeros((4, m))
    b[0] = forget_bias
    return LstmParams(mode, Wx, Wh, b)


# -- batched channels-last core ------------------------------------------------


def _cell_forward(p, M, x, h, c, stable):
    """One step on channels-last batches. Returns (h', c', cache)."""
    z = np.concatenate([x, h], axis=-1)
    m = p.hidden_size
    if p.mode == FC:
        inp = z
        pre = nm.rowdot(z, M, stable) + p.b.reshape(-1)
    else:
        k = p.kernel_size
        inp = nm.im2col(z, k, k)
        pre = (nm.rowdot(inp, M, stable) + p.b.reshape(-1)).reshape(z.shape[:-1] + (4 * m,))
    f = nm.sigmoid(pre[..., :m])
    i = nm.sigmoid(pre[..., m:2 * m])
    g = np.tanh(pre[..., 2 * m:3 * m])
    o = nm.sigmoid(pre[..., 3 * m:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (inp, z.shape, f, i, g, o, c, tc)


def _cell_backward(p, M, cache, dh, dc):
    inp, zshape, f, i, g, o, c_prev, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    dpre = np.concatenate(
        [
            dct * c_prev * f * (1.0 - f),
            dct * g * i * (1.0 - i),
            dct * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=-1,
    )
    rows = dpre.reshape(-1, dpre.shape[-1])
    dM = rows.T @ inp
    db = rows.sum(axis=0).reshape(4, -1)
    dinp = rows @ M
    if p.mode == FC:
        dz = dinp
    else:
        k = p.kernel_size
        dz = nm.col2im(dinp, zshape, k, k)
    n = p.input_size
    return dz[..., :n], dz[..., n:], dct * f, dM, db


def _to_internal(x: np.ndarray, mode: str) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, -3, -1)) if mode == CONV else x


def _to_public(x: np.ndarray, mode: str) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, -1, -3)) if mode == CONV else x


def _check_step_shapes(x, prev: LstmState, p: LstmParams):
    sample_nd = 1 if p.mode == FC else 3
    if x.ndim not in (sample_nd, sample_nd + 1):
        raise DimensionError(f"{p.mode} step: input rank {x.ndim} not supported")
    if p.mode == FC:
        if x.shape[-1] != p.input_size:
            raise DimensionError(f"FC step: input width {x.shape[-1]} != {p.input_size}")
        expected_h = x.shape[:-1] + (p.hidden_size,)
    else:
        if x.shape[-3] != p.input_size:
            raise DimensionError(f"Conv step: input channels {x.shape[-3]} != {p.input_size}")
        expected_h = x.shape[:-3] + (p.hidden_size,) + x.shape[-2:]
    if np.shape(prev.h) != expected_h:
        raise DimensionError(f"{p.mode} step: state {np.shape(prev.h)} != expected {expected_h}")


def _step(x, prev: LstmState, p: LstmParams, mode: str, stable: bool) -> LstmState:
    if p.mode != mode:
        raise ConfigError(f"expected {mode} parameters, got {p.mode}")
    x = nm.as_tensor(x)
    prev = LstmState(nm.as_tensor(prev.h), nm.as_tensor(prev.c))
    _check_step_shapes(x, prev, p)
    single = x.ndim == (1 if mode == FC else 3)
    xb, hb, cb = (a[None] if single else a for a in (x, prev.h, prev.c))
    xb, hb, cb = (_to_internal(a, mode) for a in (xb, hb, cb))
    h, c, _ = _cell_forward(p, p.combined_matrix(), xb, hb, cb, stable)
    h, c = _to_public(h, mode), _to_public(c, mode)
    if single:
        h, c = h[0], c[0]
    return LstmState(h, c)


def fc_lstm_step(x, prev: LstmState, p: LstmParams, stable: bool = False) -> LstmState:
    """One FC-LSTM step. ``x`` is ``(n,)`` or a batch ``(B, n)``."""
    return _step(x, prev, p, FC, stable)


def conv_lstm_step(x, prev: LstmState, p: LstmParams, stable: bool = False) -> LstmState:
    """One ConvLSTM step. ``x`` is ``(Cin, H, W)`` or ``(B, Cin, H, W)``."""
    return _step(x, prev, p, CONV, stable)


def zero_state(p: LstmParams, x) -> LstmState:
    x = np.asarray(x)
    if p.mode == FC:
        shape = x.shape[:-1] + (p.hidden_size,)
    else:
        shape = x.shape[:-3] + (p.hidden_size,) + x.shape[-2:]
    return LstmState(np.zeros(shape), np.zeros(shape))


class LstmStack:
    """A multilayer LSTM unrolled over T steps, returning the top layer's last h.

    ``forward`` caches every gate activation; ``backward`` consumes that cache.
    """

    def __init__(self, cfg: StackConfig, params: Sequence[LstmParams], stable: bool = False):
        if len(params) != cfg.layers:
            raise ConfigError(f"stack has {cfg.layers} layers but {len(params)} parameter sets")
        for l, p in enumerate(params):
            if p.mode != cfg.mode:
                raise ConfigError(f"layer {l}: mode {p.mode} != stack mode {cfg.mode}")
            if p.hidden_size != cfg.hidden[l]:
                raise ConfigError(f"layer {l}: hidden {p.hidden_size} != configured {cfg.hidden[l]}")
            if cfg.mode == CONV and p.kernel_size != cfg.kernel_size:
                raise ConfigError(f"layer {l}: kernel {p.kernel_size} != configured {cfg.kernel_size}")
            if l > 0 and p.input_size != cfg.hidden[l - 1]:
                raise DimensionError(f"layer {l}: input {p.input_size} != previous hidden {cfg.hidden[l - 1]}")
        self.cfg = cfg
        self.params = list(params)
        self.stable = stable
        self._cache = None

    def _prepare(self, seq) -> tuple[list, bool]:
        seq = [nm.as_tensor(x) for x in seq]
        if len(seq) != self.cfg.T:
            raise ConfigError(f"sequence length {len(seq)} != T={self.cfg.T}")
        sample_nd = 1 if self.cfg.mode == FC else 3
        single = seq[0].ndim == sample_nd
        shape = seq[0].shape
        for x in seq:
            if x.shape != shape:
                raise DimensionError(f"sequence elements differ in shape: {shape} vs {x.shape}")
        p0 = self.params[0]
        if self.cfg.mode == FC and shape[-1] != p0.input_size:
            raise DimensionError(f"input width {shape[-1]} != layer-0 input {p0.input_size}")
        if self.cfg.mode == CONV and (len(shape) < 3 or shape[-3] != p0.input_size):
            raise DimensionError(f"input {shape} does not carry {p0.input_size} channels")
        xs = [_to_internal(x[None] if single else x, self.cfg.mode) for x in seq]
        return xs, single

    def forward(self, seq, keep: bool = True) -> np.ndarray:
        xs, single = self._prepare(seq)
        caches = []
        for p in self.params:
            M = p.combined_matrix()
            shape = xs[0].shape[:-1] + (p.hidden_size,)
            h, c = np.zeros(shape), np.zeros(shape)
            steps, hs = [], []
            for x in xs:
                h, c, cache = _cell_forward(p, M, x, h, c, self.stable)
                hs.append(h)
                if keep:
                    steps.append(cache)
            caches.append((M, steps))
            xs = hs
        out = _to_public(xs[-1], self.cfg.mode)
        self._cache = (caches, single, out.shape) if keep else None
        return out[0] if single else out

    def backward(self, grad_out) -> tuple[list[LstmParams], list[np.ndarray]]:
        """Gradients of ``sum(grad_out * h_T)`` w.r.t. parameters and inputs."""
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        caches, single, out_shape = self._cache
        g = nm.as_tensor(grad_out)
        if single:
            g = g[None]
        if g.shape != out_shape:
            raise DimensionError(f"grad_out {g.shape} != forward output {out_shape}")
        T = self.cfg.T
        dhs = [None] * T
        dhs[-1] = _to_internal(g, self.cfg.mode)
        grads = [None] * len(self.params)
        for l in range(len(self.params) - 1, -1, -1):
            p = self.params[l]
            M, steps = caches[l]
            dM = np.zeros_like(M)
            db = np.zeros_like(p.b)
            dh_rec = dc_rec = 0.0
            dxs = [None] * T
            for t in range(T - 1, -1, -1):
                dh = dh_rec if dhs[t] is None else dhs[t] + dh_rec
                dx, dh_rec, dc_rec, dM_t, db_t = _cell_backward(p, M, steps[t], dh, dc_rec)
                dM += dM_t
                db += db_t
                dxs[t] = dx
            dWx, dWh = p.split_matrix(dM)
            grads[l] = LstmParams(p.mode, dWx, dWh, db)
            dhs = dxs
        dseq = [_to_public(d, self.cfg.mode) for d in dhs]
        if single:
            dseq = [d[0] for d in dseq]
        return grads, dseq


def stack_forward(seq, cfg: StackConfig, params: Sequence[LstmParams], stable: bool = False) -> np.ndarray:
    return LstmStack(cfg, params, stable).forward(seq, keep=False)


def stack_backward(seq, cfg: StackConfig, params: Sequence[LstmParams], grad_out):
    """Run a cached forward over ``seq`` then backpropagate ``grad_out``."""
    stack = LstmStack(cfg, params)
    stack.forward(seq)
    return stack.backward(grad_out)
