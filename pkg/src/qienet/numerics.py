"""Dense float64 tensor primitives.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
Convolution is cross-correlation (no kernel flip) with zero "same" padding.

Two matrix-product paths exist. The default one goes through BLAS and is
used for training. The ``stable=True`` path uses ``einsum`` so that each
output row is reduced in a fixed order no matter how many rows are in the
batch; inference uses it so a batched prediction is bit-identical to a
single-sample one.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError

Tensor = np.ndarray


def as_tensor(x) -> Tensor:
    return np.ascontiguousarray(x, dtype=np.float64)


def _shape(a) -> str:
    return "x".join(str(d) for d in np.shape(a)) or "scalar"


def rowdot(a: Tensor, w: Tensor, stable: bool = False) -> Tensor:
    """``a @ w.T`` for a 2-D ``a`` (rows) and ``w`` (out, in)."""
    if stable:
        return np.einsum("rk,ok->ro", a, w)
    return a @ w.T


def affine(x: Tensor, W: Tensor, b: Tensor, stable: bool = False) -> Tensor:
    """Return ``W @ x + b``; ``x`` may carry leading batch axes."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1:] != (W.shape[1],):
        raise DimensionError(
            f"affine: x {_shape(x)} incompatible with W {_shape(W)} and b {_shape(b)}"
        )
    flat = x.reshape(-1, W.shape[1])
    out = rowdot(flat, W, stable) + b
    return out.reshape(x.shape[:-1] + (W.shape[0],))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(-np.abs(x))
    r = 1.0 / (1.0 + e)
    return np.where(x >= 0, r, e * r)


def tanh(x: Tensor) -> Tensor:
    return np.tanh(as_tensor(x))


def relu(x: Tensor) -> Tensor:
    return np.maximum(as_tensor(x), 0.0)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {_shape(a)} and {_shape(b)} differ")
    return a * b


# -- channels-last convolution machinery -------------------------------------


def im2col(x: Tensor, kh: int, kw: int) -> Tensor:
    """Patch matrix of a channels-last batch ``(B, H, W, C)``.

    Rows follow (b, y, x) order; columns follow (ky, kx, c) order.
    """
    B, H, W, C = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.concatenate(
        [xp[:, dy:dy + H, dx:dx + W, :] for dy in range(kh) for dx in range(kw)],
        axis=-1,
    )
    return cols.reshape(B * H * W, kh * kw * C)


def col2im(dcols: Tensor, shape: tuple, kh: int, kw: int) -> Tensor:
    """Adjoint of :func:`im2col`."""
    B, H, W, C = shape
    ph, pw = kh // 2, kw // 2
    d = dcols.reshape(B, H, W, kh * kw, C)
    dxp = np.zeros((B, H + 2 * ph, W + 2 * pw, C))
    k = 0
    for dy in range(kh):
        for dx in range(kw):
            dxp[:, dy:dy + H, dx:dx + W, :] += d[:, :, :, k, :]
            k += 1
    return dxp[:, ph:ph + H, pw:pw + W, :]


def kernel_matrix(k: Tensor) -> Tensor:
    """Reshape ``(Cout, Cin, kh, kw)`` kernels to match :func:`im2col` columns."""
    cout = k.shape[0]
    return np.ascontiguousarray(k.transpose(0, 2, 3, 1).reshape(cout, -1))


def kernel_from_matrix(m: Tensor, cin: int, kh: int, kw: int) -> Tensor:
    return np.ascontiguousarray(m.reshape(m.shape[0], kh, kw, cin).transpose(0, 3, 1, 2))


def check_kernel(k: Tensor) -> None:
    if k.ndim != 4:
        raise DimensionError(f"conv kernel must be 4-D, got {_shape(k)}")
    kh, kw = k.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv kernel spatial size must be odd, got {kh}x{kw}")


def conv2d_same(x: Tensor, k: Tensor, b: Tensor, stable: bool = False) -> Tensor:
    """Zero-padded "same" cross-correlation.

    ``x`` is ``(Cin, H, W)`` or ``(B, Cin, H, W)``; ``k`` is
    ``(Cout, Cin, kh, kw)``; ``b`` is ``(Cout,)``.
    """
    x, k, b = as_tensor(x), as_tensor(k), as_tensor(b)
    check_kernel(k)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != k.shape[1]:
        raise DimensionError(f"conv2d_same: input {_shape(x)} vs kernel {_shape(k)}")
    if b.shape != (k.shape[0],):
        raise DimensionError(f"conv2d_same: bias {_shape(b)} vs kernel {_shape(k)}")
    B, _, H, W = x.shape
    kh, kw = k.shape[2:]
    cols = im2col(x.transpose(0, 2, 3, 1), kh, kw)
    out = rowdot(cols, kernel_matrix(k), stable) + b
    out = np.ascontiguousarray(out.reshape(B, H, W, -1).transpose(0, 3, 1, 2))
    return out[0] if single else out
