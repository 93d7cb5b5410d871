"""Training loop: craft adversaries per batch, update the transport-cost
multiplier lambda from the budget residual, then descend the method's outer
objective.

Methods:

* udr_pgd / udr_trades / udr_mart — soft-ball crafting with the live
  lambda; lambda moves by eta_lambda * (mean smoothed cost - epsilon),
  clamped at 0, once per batch right after crafting and before the
  parameter step.
* pgd_at / trades / mart — hard-ball PGD crafting with the method's inner
  loss (CE, KL-to-clean, CE for mart by default); same outer objectives as
  their soft-ball counterparts.
* wrm — fixed-multiplier relaxed adversary, outer loss plain CE on the
  crafted points.
* natural — no adversary; plain ERM on clean batches.

Everything is deterministic given (RunConfig, seed): shuffling, weight
init, and per-sample attack noise all derive from labelled substreams.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from udr import nn
from udr.adversary import AdvConfig, pgd_attack, udr_inner, wrm_inner
from udr.cost import CostFn, smooth_cost
from udr.data import Dataset, batch_indices
from udr.errors import ArgumentError, ContractError, DivergenceError
from udr.losses import PROB_FLOOR, RiskFn, bce_mart, cross_entropy
from udr.tensor import Prng

METHODS = ("udr_pgd", "udr_trades", "udr_mart",
           "pgd_at", "trades", "mart", "wrm", "natural")
UDR_METHODS = ("udr_pgd", "udr_trades", "udr_mart")

# substream tags for the run-level Prng
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1

_BASELINE_CRAFT = {"pgd_at": "ce", "trades": "kl_clean"}
_RISK_OF_METHOD = {
    "udr_pgd": "udr_pgd", "pgd_at": "udr_pgd",
    "udr_trades": "udr_trades", "trades": "udr_trades",
    "udr_mart": "udr_mart", "mart": "udr_mart",
}


@dataclass(frozen=True)
class RunConfig:
    method: str
    adv: AdvConfig
    step_cost: CostFn
    lambda_cost: CostFn
    dims: tuple
    epochs: int
    batch_size: int
    seed: int
    beta: float = 1.0
    lambda0: float = 1.0
    eta_lambda: float = 0.005
    optimizer: str = "sgd"
    lr: float = 1e-2
    momentum: float = 0.9
    lr_drops: tuple = ()
    lr_drop_factor: float = 0.1
    weight_decay: float = 0.0
    wrm_lambda: float = 1.0
    mart_craft: str = "ce"          # "ce" (original) or "mart_g" (craft via its risk)
    lambda_every: str = "batch"     # "batch" or "epoch"
    probe_k: int = 20
    probe_n: int = 1000
    checkpoint_every: int = 0
    dataset: str = "toy"
    data_dir: str = ""
    data_seed: int = 7
    mnist_subset: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ArgumentError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("lr, epochs and batch_size must be positive")
        if self.lambda0 < 0 or self.eta_lambda < 0:
            raise ArgumentError("lambda0 and eta_lambda must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ArgumentError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.mart_craft not in ("ce", "mart_g"):
            raise ArgumentError(f"mart_craft must be 'ce' or 'mart_g', got {self.mart_craft!r}")
        if self.lambda_every not in ("batch", "epoch"):
            raise ArgumentError(f"lambda_every must be 'batch' or 'epoch'")
        if self.lambda_cost.epsilon != self.adv.epsilon:
            raise ArgumentError(
                f"lambda_cost.epsilon ({self.lambda_cost.epsilon}) must equal the "
                f"adversary budget ({self.adv.epsilon})"
            )
        if len(self.dims) < 2:
            raise ArgumentError("dims must list at least input and output width")


@dataclass
class TrainState:
    net: nn.DenseNet
    lam: float
    velocity: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0
    epoch: int = 0


@dataclass
class MetricLog:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "split", "natural_acc", "robust_acc_k20",
               "lambda", "mean_c_hat", "loss")

    def append(self, **kw):
        self.rows.append({c: kw[c] for c in self.COLUMNS})

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if c == "split" else
                            (r[c] if c == "epoch" else repr(r[c]))
                            for c in self.COLUMNS])

    def column(self, name):
        return [r[name] for r in self.rows]


def update_lambda(lam: float, batch_smooth_costs, cfg: RunConfig) -> float:
    """lam - eta_lambda * (epsilon - mean smoothed cost), clamped at 0."""
    costs = np.asarray(batch_smooth_costs, dtype=np.float64)
    if costs.size == 0:
        raise ArgumentError("empty batch in lambda update")
    raw = lam - cfg.eta_lambda * (cfg.adv.epsilon - costs.mean())
    return max(0.0, float(raw))


def _kl_rows(p_adv, p_clean):
    return (p_adv * (np.log(np.maximum(p_adv, PROB_FLOOR))
                     - np.log(np.maximum(p_clean, PROB_FLOOR)))).sum(axis=1)


def _ce_dp(p, y, w):
    dp = np.zeros_like(p)
    rows = np.arange(p.shape[0])
    py = p[rows, y]
    live = py > PROB_FLOOR
    wvec = np.broadcast_to(np.asarray(w, dtype=np.float64), (p.shape[0],))
    dp[rows[live], y[live]] = -wvec[live] / py[live]
    return dp


def _kl_dp_adv(p_adv, p_clean, w):
    ind = (p_adv > PROB_FLOOR).astype(np.float64)
    g = (np.log(np.maximum(p_adv, PROB_FLOOR))
         - np.log(np.maximum(p_clean, PROB_FLOOR)) + ind)
    return np.asarray(w).reshape(-1, 1) * g if np.ndim(w) else w * g


def _kl_dp_clean(p_adv, p_clean, w):
    live = (p_clean > PROB_FLOOR).astype(np.float64)
    g = -p_adv / np.maximum(p_clean, PROB_FLOOR) * live
    return np.asarray(w).reshape(-1, 1) * g if np.ndim(w) else w * g


def _objective_terms(method, p_clean, p_adv, y, beta):
    """Per-sample objective rows plus gradients w.r.t. both prob matrices."""
    n = p_clean.shape[0]
    rows_idx = np.arange(n)
    if method == "natural":
        value = cross_entropy(p_clean, y)
        return value, _ce_dp(p_clean, y, 1.0), np.zeros_like(p_adv)
    if method == "wrm":
        value = cross_entropy(p_adv, y)
        return value, np.zeros_like(p_clean), _ce_dp(p_adv, y, 1.0)
    kind = _RISK_OF_METHOD[method]
    if kind == "udr_pgd":
        value = cross_entropy(p_clean, y) + beta * cross_entropy(p_adv, y)
        return value, _ce_dp(p_clean, y, 1.0), _ce_dp(p_adv, y, beta)
    if kind == "udr_trades":
        kl = _kl_rows(p_adv, p_clean)
        value = cross_entropy(p_clean, y) + beta * kl
        dpc = _ce_dp(p_clean, y, 1.0) + _kl_dp_clean(p_adv, p_clean, beta)
        return value, dpc, _kl_dp_adv(p_adv, p_clean, beta)
    # mart: weight (1 - p_clean[y]) carries theta-gradient through p_clean
    kl = _kl_rows(p_adv, p_clean)
    py = p_clean[rows_idx, y]
    w = beta * (1.0 - py)
    value = bce_mart(p_clean, y) + w * kl
    dpc = np.zeros_like(p_clean)
    live_y = py > PROB_FLOOR
    dpc[rows_idx[live_y], y[live_y]] = -1.0 / py[live_y]
    masked = p_clean.copy()
    masked[rows_idx, y] = -np.inf
    top = masked.argmax(axis=1)
    rest = 1.0 - masked[rows_idx, top]
    live_t = rest > PROB_FLOOR
    dpc[rows_idx[live_t], top[live_t]] += 1.0 / rest[live_t]
    dpc[rows_idx, y] += -beta * kl  # through the confidence weight
    dpc += _kl_dp_clean(p_adv, p_clean, w)
    return value, dpc, _kl_dp_adv(p_adv, p_clean, w)


def objective_value(method, net, x, x_adv, y, beta) -> float:
    """Batch-mean outer loss for the method (also what the theta step descends)."""
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}")
    if np.shape(x_adv) != np.shape(x):
        raise ContractError(
            f"adversaries {np.shape(x_adv)} misaligned with batch {np.shape(x)}"
        )
    p_clean, _ = nn.forward(net, x)
    p_adv, _ = nn.forward(net, x_adv)
    y = np.asarray(y, dtype=np.int64)
    value, _, _ = _objective_terms(method, p_clean, p_adv, y, beta)
    return float(value.mean())


def objective_grads(method, net, x, x_adv, y, beta):
    """(batch-mean loss, flat parameter gradient of that mean)."""
    p_clean, trace_c = nn.forward(net, x)
    p_adv, trace_a = nn.forward(net, x_adv)
    y = np.asarray(y, dtype=np.int64)
    value, dpc, dpa = _objective_terms(method, p_clean, p_adv, y, beta)
    n = x.shape[0]
    g = nn.grad_params(net, trace_c, dpc / n)
    if method != "natural":
        g = g + nn.grad_params(net, trace_a, dpa / n)
    return float(value.mean()), g


def craft(cfg: RunConfig, net, lam, x, y, epoch, sample_ids):
    """Method-appropriate inner maximizer for one batch."""
    method = cfg.method
    if method == "natural":
        return x
    if method in UDR_METHODS:
        rf = RiskFn(method, cfg.beta)
        x_adv, _ = udr_inner(net, x, y, rf, cfg.step_cost, lam, cfg.adv,
                             seed=cfg.seed, epoch=epoch, sample_ids=sample_ids)
        return x_adv
    if method == "wrm":
        return wrm_inner(net, x, y, cfg.step_cost, cfg.wrm_lambda, cfg.adv,
                         seed=cfg.seed, epoch=epoch, sample_ids=sample_ids)
    loss = _BASELINE_CRAFT.get(method) or cfg.mart_craft
    return pgd_attack(net, x, y, cfg.adv, loss=loss,
                      seed=cfg.seed, epoch=epoch, sample_ids=sample_ids)


def _accuracy(net, ds: Dataset, idx=None) -> float:
    feats = ds.features if idx is None else ds.features[idx]
    labels = ds.labels if idx is None else ds.labels[idx]
    return float((nn.predict(net, feats) == labels).mean())


def _robust_probe(cfg: RunConfig, net, ds: Dataset) -> float:
    n = min(cfg.probe_n, ds.n)
    idx = np.arange(n)
    probe_cfg = replace(cfg.adv, k=cfg.probe_k)
    x_adv = pgd_attack(net, ds.features[idx], ds.labels[idx], probe_cfg,
                       loss="ce", seed=cfg.seed, epoch=0, sample_ids=idx)
    return float((nn.predict(net, x_adv) == ds.labels[idx]).mean())


def _lr_at(cfg: RunConfig, epoch: int) -> float:
    drops = sum(1 for d in cfg.lr_drops if epoch >= d)
    return cfg.lr * (cfg.lr_drop_factor ** drops)


def train(cfg: RunConfig, train_ds: Dataset, test_ds: Dataset | None = None,
          checkpoint_dir=None):
    """Run the full loop; returns (TrainState, MetricLog)."""
    if train_ds.n < 1:
        raise ArgumentError("empty training set")
    run_rng = Prng(cfg.seed)
    net = nn.DenseNet.init_random(cfg.dims, run_rng.substream(_STREAM_INIT))
    state = TrainState(
        net=net,
        lam=float(cfg.lambda0),
        velocity=np.zeros_like(net.params),
        adam_m=np.zeros_like(net.params),
        adam_v=np.zeros_like(net.params),
    )
    log = MetricLog()
    eval_ds = test_ds if test_ds is not None else train_ds
    split = "test" if test_ds is not None else "train"
    is_udr = cfg.method in UDR_METHODS

    for epoch in range(cfg.epochs):
        lr = _lr_at(cfg, epoch)
        shuffle_rng = run_rng.substream(_STREAM_SHUFFLE, epoch)
        cost_sum, cost_count, loss_sum, batch_count = 0.0, 0, 0.0, 0
        epoch_costs = []
        for batch_no, idx in enumerate(
            batch_indices(train_ds.n, cfg.batch_size, shuffle_rng)
        ):
            x, y = train_ds.features[idx], train_ds.labels[idx]
            x_adv = craft(cfg, state.net, state.lam, x, y, epoch, idx)
            costs = smooth_cost(cfg.lambda_cost, x, x_adv)
            cost_sum += float(np.sum(costs))
            cost_count += len(costs)
            if is_udr:
                if cfg.lambda_every == "batch":
                    state.lam = update_lambda(state.lam, costs, cfg)
                else:
                    epoch_costs.append(costs)
            loss, g = objective_grads(cfg.method, state.net, x, x_adv, y, cfg.beta)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {batch_no} "
                    f"lambda {state.lam:.6g}"
                )
            if cfg.weight_decay:
                g = g + cfg.weight_decay * state.net.params
            state.step_count += 1
            if cfg.optimizer == "adam":
                p, state.adam_m, state.adam_v = nn.adam_step(
                    state.net.params, g, lr, state.adam_m, state.adam_v,
                    state.step_count)
            else:
                p, state.velocity = nn.sgd_momentum_step(
                    state.net.params, g, lr, cfg.momentum, state.velocity)
            state.net = state.net.with_params(p)
            loss_sum += loss
            batch_count += 1
        if is_udr and cfg.lambda_every == "epoch":
            state.lam = update_lambda(state.lam, np.concatenate(epoch_costs), cfg)
        state.epoch = epoch + 1
        log.append(
            epoch=epoch,
            split=split,
            natural_acc=_accuracy(state.net, eval_ds),
            robust_acc_k20=_robust_probe(cfg, state.net, eval_ds),
            **{"lambda": state.lam},
            mean_c_hat=cost_sum / max(cost_count, 1),
            loss=loss_sum / max(batch_count, 1),
        )
        if checkpoint_dir and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            nn.save_checkpoint(state.net,
                               f"{checkpoint_dir}/checkpoint_epoch{epoch + 1}.udr",
                               cfg.seed, epoch + 1)
    return state, log
