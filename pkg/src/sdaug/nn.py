"""Dense numeric core: GRU cell, masked softmax, Adam, finite differences.

Parameters live in plain dicts of numpy arrays (float32 in production; the
code is dtype-generic so verification can run in float64).  Backward passes
are derived by hand per layer; there is no graph autodiff here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError
from .rng import RngStream

Params = dict[str, np.ndarray]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probability vector(s) over the last axis, max-subtracted for stability."""
    logits = np.asarray(logits)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ContractError("softmax: empty logits")
    if not np.all(np.isfinite(logits)):
        raise ContractError("softmax: non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def masked_log_softmax(logits: np.ndarray, support: np.ndarray):
    """(probs, logprobs) over the last axis restricted to `support`.

    Non-supported entries get probability exactly 0 and logprob -inf.
    """
    masked = np.where(support, logits, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        shifted = masked - m
    e = np.where(support, np.exp(shifted), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / z
    with np.errstate(divide="ignore"):
        logprobs = np.where(support, shifted - np.log(z), -np.inf)
    return probs, logprobs


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def init_gru_params(d_in: int, d_h: int, rng: RngStream, std: float = 0.1,
                    dtype=np.float32) -> Params:
    """GRU parameters with stacked gates ordered (update, reset, candidate)."""
    return {
        "wx": rng.normal((d_in, 3 * d_h), std).astype(dtype),
        "wh": rng.normal((d_h, 3 * d_h), std).astype(dtype),
        "b_ih": rng.normal((3 * d_h,), std).astype(dtype),
        "b_hh": rng.normal((3 * d_h,), std).astype(dtype),
    }


def gru_step(p: Params, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU step over a batch; returns the new hidden state.

    The new state doubles as the cell output.  Gate layout matches
    init_gru_params; the reset gate is applied after the hidden matmul so a
    single h @ wh serves all three gates.
    """
    h_new, _ = gru_step_cached(p, x, h)
    return h_new


def gru_step_cached(p: Params, x: np.ndarray, h: np.ndarray):
    d_h = h.shape[-1]
    if x.shape[-1] != p["wx"].shape[0] or 3 * d_h != p["wh"].shape[1]:
        raise ContractError("gru_step: dimension mismatch between inputs and params")
    gi = x @ p["wx"] + p["b_ih"]
    gh = h @ p["wh"] + p["b_hh"]
    z = sigmoid(gi[..., :d_h] + gh[..., :d_h])
    r = sigmoid(gi[..., d_h:2 * d_h] + gh[..., d_h:2 * d_h])
    ghn = gh[..., 2 * d_h:]
    n = np.tanh(gi[..., 2 * d_h:] + r * ghn)
    h_new = (1.0 - z) * n + z * h
    cache = (x, h, z, r, n, ghn)
    return h_new, cache


def gru_backward(p: Params, cache, dh: np.ndarray, grads: Params):
    """Backprop one cached GRU step.

    Accumulates parameter gradients into `grads` and returns
    (d_input, d_previous_state) for the chain.
    """
    x, h_prev, z, r, n, ghn = cache
    d_h = h_prev.shape[-1]
    da_z = dh * (h_prev - n) * z * (1.0 - z)
    dn_raw = dh * (1.0 - z) * (1.0 - n * n)
    da_r = (dn_raw * ghn) * r * (1.0 - r)
    dgi = np.concatenate([da_z, da_r, dn_raw], axis=-1)
    dgh = np.concatenate([da_z, da_r, dn_raw * r], axis=-1)
    grads["wx"] += x.T @ dgi
    grads["wh"] += h_prev.T @ dgh
    grads["b_ih"] += dgi.sum(axis=0)
    grads["b_hh"] += dgh.sum(axis=0)
    dx = dgi @ p["wx"].T
    dh_prev = dh * z + dgh @ p["wh"].T
    return dx, dh_prev


def zero_grads(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class OptimizerState:
    """Adam with bias correction; moments mirror the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def adam_update(state: OptimizerState, params: Params, grads: Params) -> None:
    """One in-place Adam step; requires exclusive access to `params`."""
    if set(grads) - set(params):
        raise ContractError(f"adam_update: unknown grad keys {set(grads) - set(params)}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape:
            raise ContractError(f"adam_update: shape mismatch for {k}: {g.shape} vs {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


@dataclass
class FdReport:
    max_rel_err: float
    worst_param: str
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def finite_diff_check(loss: Callable[[], float], params: Params, analytic: Params,
                      h: float = 1e-3, tol: float = 1e-3,
                      max_coords_per_tensor: int | None = None,
                      rng: RngStream | None = None, floor: float = 1e-6) -> FdReport:
    """Compare analytic gradients against central differences.

    `loss` is a nullary callable reading `params` in place; coordinates are
    perturbed and restored one at a time.  Optionally checks a random subset
    of coordinates per tensor for large parameter sets.  `floor` guards the
    relative-error denominator against near-zero gradient coordinates.
    """
    if h <= 0:
        raise ContractError("finite_diff_check: h must be positive")
    max_rel = 0.0
    worst = ""
    n_checked = 0
    for name, p in params.items():
        an_flat = analytic[name].reshape(-1)
        idxs = np.arange(p.size)
        if max_coords_per_tensor is not None and p.size > max_coords_per_tensor:
            if rng is None:
                raise ContractError("finite_diff_check: sampling coords requires rng")
            idxs = rng.choice(p.size, max_coords_per_tensor, replace=False)
        for i in idxs:
            mi = np.unravel_index(int(i), p.shape)
            orig = p[mi]
            p[mi] = orig + h
            lp = loss()
            p[mi] = orig - h
            lm = loss()
            p[mi] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ContractError("finite_diff_check: loss is non-finite at perturbed point")
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(fd), abs(float(an_flat[int(i)])), floor)
            rel = abs(fd - float(an_flat[int(i)])) / denom
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{int(i)}]"
    return FdReport(max_rel_err=float(max_rel), worst_param=worst, n_checked=n_checked, tol=tol)
