"""Scalar losses (CE, the MART-style BCE, KL) and the unified per-sample
risk g(x', x, y) for the three soft-ball methods, with its gradient w.r.t.
the crafted point x'.

The risk is evaluated with the transported pair collapsed onto the benign
sample (x'' = x, y' = y), so every kind is natural term + beta * robust
term:

* pgd:    CE(h(x), y)  + beta * CE(h(x'), y)
* trades: CE(h(x), y)  + beta * KL(h(x') || h(x))
* mart:   BCE(h(x), y) + beta * (1 - h(x)[y]) * KL(h(x') || h(x))

Probabilities are floored at 1e-12 inside every log; values and gradients
are consistent with that floor (zero slope once a probability is clamped).
The MART confidence weight is a constant w.r.t. x'.
"""

from dataclasses import dataclass

import numpy as np

from udr import nn
from udr.errors import ArgumentError, DimensionError
from udr.tensor import as_f64

PROB_FLOOR = 1e-12

RISK_KINDS = ("udr_pgd", "udr_trades", "udr_mart")
_RISK_CODE = {"udr_pgd": 0, "udr_trades": 1, "udr_mart": 2}


@dataclass(frozen=True)
class RiskFn:
    kind: str
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise ArgumentError(f"unknown risk kind {self.kind!r}; choose from {RISK_KINDS}")
        if self.beta <= 0:
            raise ArgumentError(f"beta must be > 0, got {self.beta}")

    @property
    def code(self) -> int:
        return _RISK_CODE[self.kind]


def _rows(probs) -> np.ndarray:
    probs = as_f64(probs)
    return probs.reshape(1, -1) if probs.ndim == 1 else probs


def _labels(labels, n_classes: int, n_rows: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(y) != n_rows:
        raise DimensionError(f"{len(y)} labels for {n_rows} probability rows")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ArgumentError(f"label out of range [0, {n_classes})")
    return y


def cross_entropy(probs, labels) -> np.ndarray:
    """-log(probs[y]) per row, floored at 1e-12 inside the log."""
    p = _rows(probs)
    y = _labels(labels, p.shape[1], p.shape[0])
    py = p[np.arange(p.shape[0]), y]
    return -np.log(np.maximum(py, PROB_FLOOR))


def bce_mart(probs, labels) -> np.ndarray:
    """-log(probs[y]) - log(1 - max of the non-true-class probs), per row."""
    p = _rows(probs)
    if p.shape[1] < 2:
        raise ArgumentError("bce_mart needs at least 2 classes")
    y = _labels(labels, p.shape[1], p.shape[0])
    masked = p.copy()
    masked[np.arange(p.shape[0]), y] = -np.inf
    top_other = masked.max(axis=1)
    py = p[np.arange(p.shape[0]), y]
    return -np.log(np.maximum(py, PROB_FLOOR)) - np.log(
        np.maximum(1.0 - top_other, PROB_FLOOR)
    )


def _check_simplex(p: np.ndarray, name: str):
    s = p.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > 1e-6):
        raise ArgumentError(f"{name} rows are not normalized (sum off by > 1e-6)")


def kl_div(p, q) -> np.ndarray | float:
    """KL(p || q) = sum p_i log(p_i / q_i), floored logs, 0*log(0/q) = 0."""
    p_arr, q_arr = as_f64(p), as_f64(q)
    if p_arr.shape != q_arr.shape:
        raise DimensionError(f"kl_div shapes differ: {p_arr.shape} vs {q_arr.shape}")
    _check_simplex(p_arr, "p")
    _check_simplex(q_arr, "q")
    scalar = p_arr.ndim == 1
    p2, q2 = _rows(p_arr), _rows(q_arr)
    terms = p2 * (np.log(np.maximum(p2, PROB_FLOOR)) - np.log(np.maximum(q2, PROB_FLOOR)))
    out = terms.sum(axis=1)
    return float(out[0]) if scalar else out


def _kl_grad_wrt_p(p_adv: np.ndarray, p_clean: np.ndarray) -> np.ndarray:
    ind = (p_adv > PROB_FLOOR).astype(np.float64)
    return (
        np.log(np.maximum(p_adv, PROB_FLOOR))
        - np.log(np.maximum(p_clean, PROB_FLOOR))
        + ind
    )


def _kl_floored(p_adv: np.ndarray, p_clean: np.ndarray) -> np.ndarray:
    return (
        p_adv
        * (np.log(np.maximum(p_adv, PROB_FLOOR)) - np.log(np.maximum(p_clean, PROB_FLOOR)))
    ).sum(axis=1)


def risk_value(rf: RiskFn, net, x_prime, x, y) -> np.ndarray:
    """Per-sample risk rows; callers average over the batch as needed."""
    x_prime, x = as_f64(np.atleast_2d(x_prime)), as_f64(np.atleast_2d(x))
    if x_prime.shape != x.shape:
        raise DimensionError(f"x' shape {x_prime.shape} != x shape {x.shape}")
    p_adv, _ = nn.forward(net, x_prime)
    p_clean, _ = nn.forward(net, x)
    y = _labels(y, p_adv.shape[1], p_adv.shape[0])
    if rf.kind == "udr_pgd":
        return cross_entropy(p_clean, y) + rf.beta * cross_entropy(p_adv, y)
    if rf.kind == "udr_trades":
        return cross_entropy(p_clean, y) + rf.beta * _kl_floored(p_adv, p_clean)
    w = rf.beta * (1.0 - p_clean[np.arange(len(y)), y])
    return bce_mart(p_clean, y) + w * _kl_floored(p_adv, p_clean)


def ce_dprobs(probs: np.ndarray, y: np.ndarray, weight) -> np.ndarray:
    """d/dprobs of weight * CE(probs, y); zero slope where the floor binds."""
    dp = np.zeros_like(probs)
    rows = np.arange(probs.shape[0])
    py = probs[rows, y]
    live = py > PROB_FLOOR
    dp[rows[live], y[live]] = -np.asarray(weight * np.ones(len(rows)))[live] / py[live]
    return dp


def risk_dprobs_adv(rf: RiskFn, p_adv: np.ndarray, p_clean: np.ndarray,
                    y: np.ndarray) -> np.ndarray:
    """Gradient of the risk w.r.t. the probabilities at x' (h(x) constant)."""
    if rf.kind == "udr_pgd":
        return ce_dprobs(p_adv, y, rf.beta)
    if rf.kind == "udr_trades":
        return rf.beta * _kl_grad_wrt_p(p_adv, p_clean)
    w = rf.beta * (1.0 - p_clean[np.arange(len(y)), y])
    return w[:, None] * _kl_grad_wrt_p(p_adv, p_clean)


def risk_grad_x(rf: RiskFn, net, x_prime, x, y) -> np.ndarray:
    """Gradient of risk_value through the x' argument only."""
    x_prime, x = as_f64(np.atleast_2d(x_prime)), as_f64(np.atleast_2d(x))
    p_adv, trace = nn.forward(net, x_prime)
    p_clean, _ = nn.forward(net, x)
    y = _labels(y, p_adv.shape[1], p_adv.shape[0])
    dprobs = risk_dprobs_adv(rf, p_adv, p_clean, y)
    return nn.grad_input(net, trace, dprobs)
