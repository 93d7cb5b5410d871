"""Transport-cost machinery: base norms with subgradients, the hard-wall
cost (finite inside the budget, +inf outside), and the smoothed wall whose
slope outside the budget is 1/tau.

Cost values are per-row when given 2-D input (last axis = coordinates) and
scalar for 1-D input. Budgets are always in the chosen norm's own units;
the l2half cost is the half squared norm, so its gradient is simply
(x' - x). The printed reference table for the Linf gradient omits the sign
of (x' - x); the signed subgradient is used here (lowest index wins ties,
zero vector at x' = x), otherwise the pull-back step could move points away
from x.
"""

from dataclasses import dataclass

import numpy as np

from udr.errors import ArgumentError, DimensionError
from udr.tensor import as_f64

NORMS = ("l1", "l2half", "linf")
_NORM_CODE = {"l1": 0, "l2half": 1, "linf": 2}


@dataclass(frozen=True)
class CostFn:
    norm: str
    epsilon: float
    tau: float

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ArgumentError(f"unknown norm {self.norm!r}; choose from {NORMS}")
        if self.epsilon <= 0:
            raise ArgumentError(f"epsilon must be > 0, got {self.epsilon}")
        if self.tau <= 0:
            raise ArgumentError(f"tau must be > 0, got {self.tau}")

    @property
    def code(self) -> int:
        return _NORM_CODE[self.norm]


def _pair(x, x_prime):
    x, xp = as_f64(x), as_f64(x_prime)
    if x.shape != xp.shape:
        raise DimensionError(f"shape mismatch: x {x.shape} vs x' {xp.shape}")
    scalar = x.ndim == 1
    if scalar:
        x, xp = x.reshape(1, -1), xp.reshape(1, -1)
    return x, xp, scalar


def base_cost(cf: CostFn, x, x_prime):
    x, xp, scalar = _pair(x, x_prime)
    d = xp - x
    if cf.norm == "l1":
        out = np.abs(d).sum(axis=1)
    elif cf.norm == "l2half":
        out = 0.5 * (d * d).sum(axis=1)
    else:
        out = np.abs(d).max(axis=1)
    return float(out[0]) if scalar else out


def base_cost_grad(cf: CostFn, x, x_prime) -> np.ndarray:
    x, xp, scalar = _pair(x, x_prime)
    d = xp - x
    if cf.norm == "l1":
        g = np.sign(d)
    elif cf.norm == "l2half":
        g = d
    else:
        g = np.zeros_like(d)
        idx = np.abs(d).argmax(axis=1)  # argmax keeps the lowest index on ties
        rows = np.arange(d.shape[0])
        g[rows, idx] = np.sign(d[rows, idx])
    return g[0] if scalar else g


def tilde_cost(cf: CostFn, x, x_prime):
    """Hard wall: the base cost if it is <= epsilon, +inf otherwise."""
    c = base_cost(cf, x, x_prime)
    if np.isscalar(c):
        return c if c <= cf.epsilon else np.inf
    return np.where(c <= cf.epsilon, c, np.inf)


def smooth_cost(cf: CostFn, x, x_prime):
    """Smoothed wall: c inside, epsilon + (c - epsilon)/tau at and outside."""
    c = base_cost(cf, x, x_prime)
    c_arr = np.asarray(c, dtype=np.float64)
    out = np.where(c_arr < cf.epsilon, c_arr, cf.epsilon + (c_arr - cf.epsilon) / cf.tau)
    return float(out) if np.isscalar(c) else out


def smooth_cost_grad(cf: CostFn, x, x_prime) -> np.ndarray:
    """Base subgradient scaled by 1 inside the budget, 1/tau at and outside."""
    x2, xp2, scalar = _pair(x, x_prime)
    c = base_cost(cf, x2, xp2)
    g = base_cost_grad(cf, x2, xp2)
    scale = np.where(c < cf.epsilon, 1.0, 1.0 / cf.tau)
    out = g * scale[:, None]
    return out[0] if scalar else out


def in_ball(cf: CostFn, x, x_prime):
    c = base_cost(cf, x, x_prime)
    return bool(c <= cf.epsilon) if np.isscalar(c) else c <= cf.epsilon
