"""Evaluation and verification harness: robust-accuracy sweeps, blackbox
transfer, perturbation-norm statistics, the temperature sensitivity sweep,
and a brute-force oracle for the budget-ball duality identity.

The duality oracle works on a 1-D grid: the constrained value (primal) is
the max of the risk over in-budget grid points; the multiplier value (dual)
is the min over a lambda grid of lambda*eps plus the max of risk minus
lambda times the hard-wall cost, where out-of-budget points contribute
-inf at every multiplier level (the wall is infinite, so they are
infeasible for all lambda >= 0 under this convention). With 0 in the lambda
grid the two sides coincide up to float error; the gap is reported as
dual - primal.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from udr import nn
from udr.adversary import AdvConfig, pgd_attack
from udr.cost import CostFn, base_cost
from udr.errors import ArgumentError, DimensionError
from udr.tensor import Prng, as_f64


@dataclass
class SweepReport:
    rows: list  # (epsilon, natural_acc, robust_acc, n_samples, seed)

    COLUMNS = ("epsilon", "natural_acc", "robust_acc", "n_samples", "seed")

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([repr(r[0]), repr(r[1]), repr(r[2]), r[3], r[4]])

    @classmethod
    def read_csv(cls, path):
        rows = []
        with open(path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for line in r:
                rows.append((float(line[0]), float(line[1]), float(line[2]),
                             int(line[3]), int(line[4])))
        return cls(rows)


@dataclass
class NormStats:
    mean_abs_perturbation: float
    max_perturbation: float
    fraction_le: dict  # multiplier in {0.9, 1.0, 1.1} -> coordinate fraction

    MULTIPLIERS = (0.9, 1.0, 1.1)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["mean_abs_perturbation", "max_perturbation"]
                       + [f"fraction_le_{m}" for m in self.MULTIPLIERS])
            w.writerow([repr(self.mean_abs_perturbation), repr(self.max_perturbation)]
                       + [repr(self.fraction_le[m]) for m in self.MULTIPLIERS])


@dataclass
class DiscreteToyProblem:
    """Risk values on a sorted 1-D candidate grid around a center point."""

    grid: np.ndarray
    g_values: np.ndarray
    center: float
    cost: CostFn

    def __post_init__(self):
        self.grid = as_f64(np.atleast_1d(self.grid))
        self.g_values = as_f64(np.atleast_1d(self.g_values))
        if self.grid.shape != self.g_values.shape:
            raise DimensionError(
                f"grid {self.grid.shape} vs g_values {self.g_values.shape}"
            )
        if np.any(np.diff(self.grid) < 0):
            raise ArgumentError("grid must be sorted ascending")
        if not np.any(np.isclose(self.grid, self.center)):
            raise ArgumentError("grid must contain the center point")
        if not np.all(np.isfinite(self.g_values)):
            raise ArgumentError("risk values must be finite")


def evaluate_accuracy(net, ds) -> float:
    return float((nn.predict(net, ds.features) == ds.labels).mean())


def robust_accuracy(net, ds, attack_cfg: AdvConfig, seed: int = 0,
                    batch: int = 512) -> float:
    """Fraction of samples still classified correctly after the PGD attack."""
    correct = 0
    for start in range(0, ds.n, batch):
        idx = np.arange(start, min(start + batch, ds.n))
        x_adv = pgd_attack(net, ds.features[idx], ds.labels[idx], attack_cfg,
                           loss="ce", seed=seed, epoch=0, sample_ids=idx)
        correct += int((nn.predict(net, x_adv) == ds.labels[idx]).sum())
    return correct / ds.n


def sweep_epsilons(net, ds, eps_list, base_cfg: AdvConfig,
                   seed: int = 0) -> SweepReport:
    """One robust-accuracy row per budget, k and eta held fixed."""
    if len(eps_list) == 0:
        raise ArgumentError("eps_list must be nonempty")
    nat = evaluate_accuracy(net, ds)
    rows = []
    for eps in sorted(float(e) for e in eps_list):
        cfg = replace(base_cfg, epsilon=eps)
        rows.append((eps, nat, robust_accuracy(net, ds, cfg, seed=seed), ds.n, seed))
    return SweepReport(rows)


def transfer_attack(source_net, target_net, ds, cfg: AdvConfig,
                    seed: int = 0, batch: int = 512) -> float:
    """Craft on the source model, measure accuracy on the target model."""
    if source_net.in_dim != target_net.in_dim or \
            source_net.out_dim != target_net.out_dim:
        raise DimensionError(
            f"source {source_net.in_dim}->{source_net.out_dim} and target "
            f"{target_net.in_dim}->{target_net.out_dim} dims differ"
        )
    correct = 0
    for start in range(0, ds.n, batch):
        idx = np.arange(start, min(start + batch, ds.n))
        x_adv = pgd_attack(source_net, ds.features[idx], ds.labels[idx], cfg,
                           loss="ce", seed=seed, epoch=0, sample_ids=idx)
        correct += int((nn.predict(target_net, x_adv) == ds.labels[idx]).sum())
    return correct / ds.n


def perturbation_stats(x_batch, x_adv_batch, epsilon: float) -> NormStats:
    x, xa = as_f64(x_batch), as_f64(x_adv_batch)
    if x.shape != xa.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {xa.shape}")
    delta = np.abs(xa - x).ravel()
    fractions = {m: float((delta <= m * epsilon).mean())
                 for m in NormStats.MULTIPLIERS}
    return NormStats(
        mean_abs_perturbation=float(delta.mean()),
        max_perturbation=float(delta.max()),
        fraction_le=fractions,
    )


def duality_check(problem: DiscreteToyProblem, epsilon: float,
                  lambda_grid) -> tuple[float, float, float]:
    """(primal, dual, gap) for the budget-ball identity on a discrete grid."""
    lambdas = as_f64(np.atleast_1d(lambda_grid))
    if lambdas.size == 0:
        raise ArgumentError("lambda grid must be nonempty")
    center = np.full_like(problem.grid, problem.center).reshape(-1, 1)
    costs = base_cost(problem.cost, center, problem.grid.reshape(-1, 1))
    feasible = costs <= epsilon
    if not np.any(feasible):
        raise ArgumentError("no grid point lies within the budget")
    primal = float(problem.g_values[feasible].max())
    dual = np.inf
    for lam in lambdas:
        inner = np.where(feasible, problem.g_values - lam * costs, -np.inf)
        dual = min(dual, float(lam) * epsilon + float(inner.max()))
    return primal, dual, dual - primal


def default_lambda_grid(n_log: int = 50) -> np.ndarray:
    """{0} plus n_log log-spaced multipliers spanning 1e-6 .. 1e3."""
    return np.concatenate([[0.0], np.logspace(-6, 3, n_log)])


def random_problem(seed: int, grid_points: int = 201, span: float = 1.0,
                   epsilon: float = 0.3) -> DiscreteToyProblem:
    """Random risk values on a symmetric grid containing the center 0."""
    if grid_points % 2 == 0:
        grid_points += 1  # keep 0 on the grid
    rng = Prng(seed)
    grid = np.linspace(-span, span, grid_points)
    g = rng.uniform(-1.0, 1.0, grid_points)
    return DiscreteToyProblem(grid, g, 0.0,
                              CostFn("l1", epsilon=epsilon, tau=1.0))


def exhaustive_box_attack(net, x, y, epsilon: float, grid_per_dim: int = 21):
    """Grid-enumeration oracle over the Linf box (small dims only):
    returns True per row if some box point flips the prediction."""
    x = as_f64(np.atleast_2d(x))
    d = x.shape[1]
    if grid_per_dim ** d > 2_000_000:
        raise ArgumentError(f"grid of {grid_per_dim}^{d} points is too large")
    offsets = np.linspace(-epsilon, epsilon, grid_per_dim)
    mesh = np.stack(np.meshgrid(*([offsets] * d), indexing="ij"), axis=-1)
    deltas = mesh.reshape(-1, d)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    flipped = np.zeros(x.shape[0], dtype=bool)
    for i in range(x.shape[0]):
        preds = nn.predict(net, x[i] + deltas)
        flipped[i] = bool(np.any(preds != y[i]))
    return flipped


def exhaustive_robust_accuracy(net, ds, epsilon: float,
                               grid_per_dim: int = 21) -> float:
    nat_correct = nn.predict(net, ds.features) == ds.labels
    flipped = exhaustive_box_attack(net, ds.features, ds.labels, epsilon,
                                    grid_per_dim)
    return float((nat_correct & ~flipped).mean())


def tau_sensitivity(base_run_cfg, train_ds, test_ds, taus,
                    eval_cfg: AdvConfig, seed_list=(0,)):
    """Train per temperature, report (tau, natural_acc, robust_acc) means."""
    from udr import trainer

    rows = []
    for tau in taus:
        nats, robs = [], []
        for seed in seed_list:
            cfg = replace(
                base_run_cfg,
                seed=seed,
                step_cost=replace(base_run_cfg.step_cost, tau=float(tau)),
                lambda_cost=replace(base_run_cfg.lambda_cost, tau=float(tau)),
            )
            state, _ = trainer.train(cfg, train_ds, test_ds)
            nats.append(evaluate_accuracy(state.net, test_ds))
            robs.append(robust_accuracy(state.net, test_ds, eval_cfg, seed=seed))
        rows.append((float(tau), float(np.mean(nats)), float(np.mean(robs))))
    return rows
