"""Inner maximizers.

* :func:`pgd_attack` — signed gradient ascent with a hard Linf-ball clamp
  after every step (used for evaluation and the standard baselines).
* :func:`udr_inner` — the soft-ball two-sub-step solver: risk ascent, then a
  pull-back along the smoothed transport-cost gradient weighted by the
  current multiplier. No projection anywhere; only a final [0,1] clip when
  the data domain asks for it.
* :func:`wrm_inner` — plain-gradient ascent on CE minus a fixed multiple of
  the raw cost (no wall, no projection).

All three are deterministic functions of (net, inputs, config, multiplier):
per-sample init noise comes from counter streams keyed by
(seed, epoch, sample_id).
"""

import csv
from dataclasses import dataclass

import numpy as np

from udr import backend
from udr.cost import CostFn
from udr.errors import ArgumentError, DimensionError
from udr.losses import RiskFn
from udr.tensor import as_f64, per_sample_uniform

ATTACK_LOSSES = ("ce", "kl_clean", "mart_g")
_LOSS_CODE = {"ce": 0, "kl_clean": 1, "mart_g": 2}


@dataclass(frozen=True)
class AdvConfig:
    k: int
    epsilon: float
    eta: float
    random_init: bool = True
    clip01: bool = False
    ascent: str = "sign"    # risk sub-step: "sign" or "grad"
    pullback: str = "grad"  # cost sub-step: "grad" or "sign"

    def __post_init__(self):
        if self.k < 0:
            raise ArgumentError(f"k must be >= 0, got {self.k}")
        if self.eta <= 0:
            raise ArgumentError(f"eta must be > 0, got {self.eta}")
        if self.epsilon <= 0:
            raise ArgumentError(f"epsilon must be > 0, got {self.epsilon}")
        if self.ascent not in ("sign", "grad"):
            raise ArgumentError(f"ascent must be 'sign' or 'grad', got {self.ascent!r}")
        if self.pullback not in ("grad", "sign"):
            raise ArgumentError(f"pullback must be 'grad' or 'sign', got {self.pullback!r}")


@dataclass
class Trajectory:
    """Iterates of one sample's inner maximization, init included."""

    points: np.ndarray  # (k+1, d)
    risks: np.ndarray   # (k+1,)
    costs: np.ndarray   # (k+1,) smoothed cost vs the benign point

    def write_csv(self, path) -> None:
        d = self.points.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step"] + [f"x{i}" for i in range(d)]
                       + ["risk", "smooth_cost"])
            for s in range(self.points.shape[0]):
                w.writerow([s] + [repr(v) for v in self.points[s]]
                           + [repr(self.risks[s]), repr(self.costs[s])])


def _prep(net, x, y):
    x = as_f64(np.atleast_2d(x))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if x.shape[1] != net.in_dim:
        raise DimensionError(f"input width {x.shape[1]} != net in_dim {net.in_dim}")
    if len(y) != x.shape[0]:
        raise DimensionError(f"{len(y)} labels for {x.shape[0]} rows")
    return x, y


def init_noise(cfg: AdvConfig, x: np.ndarray, seed: int, epoch: int,
               sample_ids) -> np.ndarray:
    if not cfg.random_init:
        return np.zeros_like(x)
    if sample_ids is None:
        sample_ids = np.arange(x.shape[0])
    return per_sample_uniform(seed, epoch, sample_ids, x.shape[1],
                              -cfg.epsilon, cfg.epsilon)


def pgd_attack(net, x, y, cfg: AdvConfig, loss: str = "ce",
               seed: int = 0, epoch: int = 0, sample_ids=None) -> np.ndarray:
    """k steps of x <- clamp_ball(x + eta * sign(grad loss)), hard Linf
    projection onto the epsilon-ball around the benign point each step."""
    if loss not in ATTACK_LOSSES:
        raise ArgumentError(f"unknown attack loss {loss!r}; choose from {ATTACK_LOSSES}")
    x, y = _prep(net, x, y)
    noise = init_noise(cfg, x, seed, epoch, sample_ids)
    k = backend.kernels()
    return k.attack_pgd(*net.kernel_args(), x, noise, y,
                        cfg.k, cfg.epsilon, cfg.eta, cfg.clip01,
                        _LOSS_CODE[loss])


def udr_inner(net, x, y, rf: RiskFn, step_cost: CostFn, lam: float,
              cfg: AdvConfig, seed: int = 0, epoch: int = 0, sample_ids=None,
              record_trajectory: bool = False):
    """Soft-ball inner maximization; returns (x_adv, trajectories).

    trajectories is None unless record_trajectory, in which case it is a
    list with one :class:`Trajectory` per batch row (k+1 iterates each).
    """
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam}")
    x, y = _prep(net, x, y)
    noise = init_noise(cfg, x, seed, epoch, sample_ids)
    n, d = x.shape
    record = bool(record_trajectory)
    if record:
        traj_x = np.zeros((cfg.k + 1, n, d))
        traj_r = np.zeros((cfg.k + 1, n))
        traj_c = np.zeros((cfg.k + 1, n))
    else:
        traj_x = np.zeros((1, 1, 1))
        traj_r = np.zeros((1, 1))
        traj_c = np.zeros((1, 1))
    k = backend.kernels()
    x_adv = k.attack_udr(*net.kernel_args(), x, noise, y,
                         cfg.k, cfg.eta, float(lam), rf.code, rf.beta,
                         step_cost.code, step_cost.epsilon, step_cost.tau,
                         cfg.ascent == "sign", cfg.pullback == "sign",
                         cfg.clip01, record, traj_x, traj_r, traj_c)
    if not record:
        return x_adv, None
    trajectories = [
        Trajectory(traj_x[:, i, :].copy(), traj_r[:, i].copy(), traj_c[:, i].copy())
        for i in range(n)
    ]
    return x_adv, trajectories


def wrm_inner(net, x, y, cost: CostFn, lambda_fixed: float,
              cfg: AdvConfig, seed: int = 0, epoch: int = 0,
              sample_ids=None) -> np.ndarray:
    if lambda_fixed <= 0:
        raise ArgumentError(
            f"wrm lambda must be > 0 (relaxation is ill-posed at 0), got {lambda_fixed}"
        )
    x, y = _prep(net, x, y)
    noise = init_noise(cfg, x, seed, epoch, sample_ids)
    k = backend.kernels()
    return k.attack_wrm(*net.kernel_args(), x, noise, y,
                        cfg.k, cfg.eta, float(lambda_fixed), cost.code,
                        cfg.clip01)
