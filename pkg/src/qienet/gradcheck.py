"""Central finite-difference checks of the analytic gradients.

Each check draws random coordinates across every parameter tensor (and the
stack inputs), perturbs them by +-step and compares the difference quotient of
a scalar loss with the backpropagated gradient. The relative error is
``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off in the
difference quotient from dominating coordinates whose true gradient is ~0.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as qm
from .rnn import CONV, FC, LstmStack, StackConfig, init_lstm_params

STEP = 1e-6
TOLERANCE = 1e-4
FLOOR = 1e-5


@dataclass
class GradCheckResult:
    name: str
    coords: int
    worst_rel: float
    tolerance: float
    seconds: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.worst_rel < self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        d["failures"] = d["failures"][:20]
        return d


def relative_error(a: float, n: float, floor: float = FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def _coords(shapes: dict, n: int, rng) -> list:
    """At least one coordinate per tensor, the rest uniform over all entries."""
    names = list(shapes)
    sizes = np.array([int(np.prod(shapes[k])) for k in names])
    picks = [(k, int(rng.integers(sizes[i]))) for i, k in enumerate(names)]
    rest = max(0, n - len(picks))
    flat = rng.integers(sizes.sum(), size=rest)
    bounds = np.cumsum(sizes)
    for f in flat:
        i = int(np.searchsorted(bounds, f, side="right"))
        picks.append((names[i], int(f - (bounds[i] - sizes[i]))))
    return picks


def _compare(name, tensors: dict, grads: dict, loss, n_coords, rng, step, tol, floor) -> GradCheckResult:
    started = time.perf_counter()
    worst, failures = 0.0, []
    for key, flat in _coords({k: v.shape for k, v in tensors.items()}, n_coords, rng):
        arr = tensors[key].reshape(-1)
        old = arr[flat]
        arr[flat] = old + step
        lp = loss()
        arr[flat] = old - step
        lm = loss()
        arr[flat] = old
        num = (lp - lm) / (2.0 * step)
        ana = float(grads[key].reshape(-1)[flat])
        rel = relative_error(ana, num, floor)
        worst = max(worst, rel)
        if rel >= tol:
            failures.append({"tensor": key, "index": flat, "analytic": ana, "numeric": num, "rel": rel})
    return GradCheckResult(name, n_coords, worst, tol, time.perf_counter() - started, failures)


def check_stack(mode: str, T: int, hidden, input_size: int, spatial=(5, 5), kernel_size: int = 3,
                batch: int = 2, n_coords: int = 200, seed: int = 0, step: float = STEP,
                tol: float = TOLERANCE, floor: float = FLOOR) -> GradCheckResult:
    """Gradient of ``sum(G * h_T)`` for a random projection ``G`` of the stack output."""
    rng = np.random.default_rng(seed)
    cfg = StackConfig(T=T, hidden=tuple(hidden), mode=mode, kernel_size=kernel_size)
    params, n = [], input_size
    for m in cfg.hidden:
        p = init_lstm_params(mode, n, m, rng, kernel_size, forget_bias=0.0)
        p.b[...] = rng.uniform(-0.5, 0.5, p.b.shape)
        params.append(p)
        n = m
    shape = (batch, input_size) if mode == FC else (batch, input_size) + tuple(spatial)
    seq = [rng.standard_normal(shape) for _ in range(T)]
    stack = LstmStack(cfg, params)
    out = stack.forward(seq)
    G = rng.standard_normal(out.shape)
    pgrads, xgrads = stack.backward(G)

    tensors, grads = {}, {}
    for l, (p, g) in enumerate(zip(params, pgrads)):
        for attr in ("Wx", "Wh", "b"):
            tensors[f"rnn.{l}.{attr}"] = getattr(p, attr)
            grads[f"rnn.{l}.{attr}"] = getattr(g, attr)
    for t in range(T):
        tensors[f"x.{t}"] = seq[t]
        grads[f"x.{t}"] = xgrads[t]

    def loss():
        return float(np.sum(G * LstmStack(cfg, params).forward(seq, keep=False)))

    label = f"{'FC' if mode == FC else 'Conv'}-LSTM T={T} hidden={tuple(hidden)}"
    return _compare(label, tensors, grads, loss, n_coords, rng, step, tol, floor)


def check_network(cfg: qm.ModelConfig, batch: int = 2, n_coords: int = 200, seed: int = 0,
                  step: float = STEP, tol: float = TOLERANCE, floor: float = FLOOR) -> GradCheckResult:
    """Gradient of the training loss (MSE of the raw output) w.r.t. every parameter."""
    rng = np.random.default_rng(seed)
    params = qm.init_params(cfg)
    X = rng.random((batch, cfg.stack.T, len(cfg.channel_subset), 7, 7))
    A = rng.random((batch, cfg.attribute_size))
    y = rng.random(batch)
    _, grads = qm.loss_and_grad(X, A, y, cfg, params)

    def loss():
        return qm.loss_and_grad(X, A, y, cfg, params)[0]

    return _compare(f"network {cfg.name or cfg.network_type}", params, grads, loss, n_coords, rng,
                    step, tol, floor)


def standard_checks(n_coords: int = 200, seed: int = 0) -> list[GradCheckResult]:
    """FC stack (T=3, 2 inputs, 8 hidden), Conv stack (T=2, 2 channels, 5x5, 3x3 kernels), full Conv model."""
    conv_model = qm.variant("Conv1", hidden=(2, 2), head_sizes=(16, 8, 1), seed=seed)
    return [
        check_stack(FC, T=3, hidden=(8,), input_size=2, n_coords=n_coords, seed=seed),
        check_stack(CONV, T=2, hidden=(2,), input_size=3, spatial=(5, 5), kernel_size=3,
                    n_coords=n_coords, seed=seed + 1),
        check_network(conv_model, n_coords=n_coords, seed=seed + 2),
    ]
