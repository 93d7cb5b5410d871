"""Hot numeric kernels: fused dense-net forward/backward and attack loops.

Every function here is written against the numpy subset that numba can
compile in nopython mode. :mod:`udr.backend` loads this module twice — once
with ``UDR_KERNEL_JIT=1`` (every kernel wrapped in ``@njit``, the default
backend) and once plain — so the compiled and fallback paths share one
source. Row-wise scalar loops are used only where numba lacks the vectorized
reduction (row max/argmax, label gathers).

Conventions: nets are passed as a flat f64 parameter vector plus int64
offset/dimension/activation-code arrays; weights are stored row-major
(out x in) and transposed once per kernel call for the forward products.
"""

import os

import numpy as np

if os.environ.get("UDR_KERNEL_JIT", "1") == "1":
    from numba import njit

    def _jit(fn):
        return njit(cache=True)(fn)

else:

    def _jit(fn):
        return fn


JITTED = os.environ.get("UDR_KERNEL_JIT", "1") == "1"

PROB_FLOOR = 1e-12

ACT_NONE = 0
ACT_RELU = 1
ACT_SOFTMAX = 2

COST_L1 = 0
COST_L2HALF = 1
COST_LINF = 2

RISK_PGD = 0
RISK_TRADES = 1
RISK_MART = 2

LOSS_CE = 0
LOSS_KL_CLEAN = 1
LOSS_MART_G = 2


@_jit
def matmul_exact(a, b):
    """Matrix product with left-to-right accumulation over the inner axis.

    Reference semantics for the public matmul op: bit-reproducible and equal
    to the naive triple loop by construction (no FMA contraction, no
    blocking). Use for small operands; the fused kernels below use np.dot.
    """
    m, kk = a.shape
    n = b.shape[1]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(kk):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


@_jit
def _softmax_rows(z):
    n = z.shape[0]
    m = np.empty((n, 1))
    for i in range(n):
        m[i, 0] = np.max(z[i])
    e = np.exp(z - m)
    s = np.sum(e, axis=1).reshape(n, 1)
    return e / s


@_jit
def _transposed_weights(params, woffs, dims):
    layers = len(dims) - 1
    out = []
    for l in range(layers):
        rows = dims[l + 1]
        cols = dims[l]
        w = params[woffs[l]:woffs[l] + rows * cols].reshape(rows, cols)
        out.append(w.T.copy())
    return out


@_jit
def _forward(wts, params, boffs, dims, acts, x):
    """Forward pass; returns (output, list of pre-activations per layer)."""
    layers = len(dims) - 1
    zs = []
    a = x
    for l in range(layers):
        b = params[boffs[l]:boffs[l] + dims[l + 1]]
        z = np.dot(a, wts[l]) + b
        zs.append(z)
        if acts[l] == ACT_RELU:
            a = np.maximum(z, 0.0)
        elif acts[l] == ACT_SOFTMAX:
            a = _softmax_rows(z)
        else:
            a = z
    return a, zs


@_jit
def _softmax_vjp(probs, dprobs):
    n = probs.shape[0]
    s = np.sum(dprobs * probs, axis=1).reshape(n, 1)
    return probs * (dprobs - s)


@_jit
def _backward_input(params, woffs, dims, acts, zs, out, dout):
    """Backprop dout (gradient w.r.t. the forward output) to the input rows."""
    layers = len(dims) - 1
    if acts[layers - 1] == ACT_SOFTMAX:
        dz = _softmax_vjp(out, dout)
    elif acts[layers - 1] == ACT_RELU:
        dz = np.where(zs[layers - 1] > 0.0, dout, 0.0)
    else:
        dz = dout
    for l in range(layers - 1, 0, -1):
        rows = dims[l + 1]
        cols = dims[l]
        w = params[woffs[l]:woffs[l] + rows * cols].reshape(rows, cols)
        da = np.dot(dz, w)
        if acts[l - 1] == ACT_RELU:
            dz = np.where(zs[l - 1] > 0.0, da, 0.0)
        else:
            dz = da
    w0 = params[woffs[0]:woffs[0] + dims[1] * dims[0]].reshape(dims[1], dims[0])
    return np.dot(dz, w0)


@_jit
def forward_probs(params, woffs, boffs, dims, acts, x):
    wts = _transposed_weights(params, woffs, dims)
    out, _ = _forward(wts, params, boffs, dims, acts, x)
    return out


@_jit
def _ce_rows(probs, y):
    n = probs.shape[0]
    out = np.empty(n)
    for i in range(n):
        p = probs[i, y[i]]
        if p < PROB_FLOOR:
            p = PROB_FLOOR
        out[i] = -np.log(p)
    return out


@_jit
def _ce_dprobs(probs, y, w):
    n, c = probs.shape
    dp = np.zeros((n, c))
    for i in range(n):
        p = probs[i, y[i]]
        if p > PROB_FLOOR:
            dp[i, y[i]] = -w[i] / p
    return dp


@_jit
def _kl_rows(p_adv, p_clean):
    pa = np.maximum(p_adv, PROB_FLOOR)
    pc = np.maximum(p_clean, PROB_FLOOR)
    return np.sum(p_adv * (np.log(pa) - np.log(pc)), axis=1)


@_jit
def _kl_dprobs(p_adv, p_clean, w):
    n = p_adv.shape[0]
    pa = np.maximum(p_adv, PROB_FLOOR)
    pc = np.maximum(p_clean, PROB_FLOOR)
    ind = np.where(p_adv > PROB_FLOOR, 1.0, 0.0)
    return (np.log(pa) - np.log(pc) + ind) * w.reshape(n, 1)


@_jit
def _bce_rows(probs, y):
    n, c = probs.shape
    out = np.empty(n)
    for i in range(n):
        py = probs[i, y[i]]
        m = -1.0
        for j in range(c):
            if j != y[i] and probs[i, j] > m:
                m = probs[i, j]
        a = py if py > PROB_FLOOR else PROB_FLOOR
        b = 1.0 - m
        if b < PROB_FLOOR:
            b = PROB_FLOOR
        out[i] = -np.log(a) - np.log(b)
    return out


@_jit
def _mart_weights(probs_clean, y, beta):
    n = probs_clean.shape[0]
    w = np.empty(n)
    for i in range(n):
        w[i] = beta * (1.0 - probs_clean[i, y[i]])
    return w


@_jit
def risk_rows(code, probs_adv, probs_clean, y, beta):
    """Per-sample risk g(x', x, y) given probs at x' and at x."""
    if code == RISK_PGD:
        return _ce_rows(probs_clean, y) + beta * _ce_rows(probs_adv, y)
    if code == RISK_TRADES:
        return _ce_rows(probs_clean, y) + beta * _kl_rows(probs_adv, probs_clean)
    w = _mart_weights(probs_clean, y, beta)
    return _bce_rows(probs_clean, y) + w * _kl_rows(probs_adv, probs_clean)


@_jit
def _risk_dprobs_adv(code, probs_adv, probs_clean, y, beta):
    n = probs_adv.shape[0]
    if code == RISK_PGD:
        w = np.full(n, beta)
        return _ce_dprobs(probs_adv, y, w)
    if code == RISK_TRADES:
        w = np.full(n, beta)
        return _kl_dprobs(probs_adv, probs_clean, w)
    w = _mart_weights(probs_clean, y, beta)
    return _kl_dprobs(probs_adv, probs_clean, w)


@_jit
def base_cost_rows(code, x, xp):
    d = xp - x
    if code == COST_L1:
        return np.sum(np.abs(d), axis=1)
    if code == COST_L2HALF:
        return 0.5 * np.sum(d * d, axis=1)
    n = d.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = np.max(np.abs(d[i]))
    return out


@_jit
def base_cost_grad_rows(code, x, xp):
    d = xp - x
    if code == COST_L1:
        return np.sign(d)
    if code == COST_L2HALF:
        return d.copy()
    n, m = d.shape
    g = np.zeros((n, m))
    for i in range(n):
        best = 0
        bv = abs(d[i, 0])
        for j in range(1, m):
            v = abs(d[i, j])
            if v > bv:
                bv = v
                best = j
        g[i, best] = np.sign(d[i, best])
    return g


@_jit
def smooth_cost_rows(code, eps, tau, x, xp):
    c = base_cost_rows(code, x, xp)
    return np.where(c < eps, c, eps + (c - eps) / tau)


@_jit
def smooth_cost_grad_rows(code, eps, tau, x, xp):
    c = base_cost_rows(code, x, xp)
    g = base_cost_grad_rows(code, x, xp)
    scale = np.where(c < eps, 1.0, 1.0 / tau)
    return g * scale.reshape(-1, 1)


@_jit
def attack_pgd(params, woffs, boffs, dims, acts, x, noise, y,
               k, eps, eta, clip01, loss_code):
    """Hard-ball signed-ascent attack: clamp to the Linf ball every step."""
    wts = _transposed_weights(params, woffs, dims)
    probs_clean, _ = _forward(wts, params, boffs, dims, acts, x)
    n = x.shape[0]
    ones = np.ones(n)
    xa = x + np.clip(noise, -eps, eps)
    if clip01:
        xa = np.clip(xa, 0.0, 1.0)
    for _ in range(k):
        probs, zs = _forward(wts, params, boffs, dims, acts, xa)
        if loss_code == LOSS_CE:
            dp = _ce_dprobs(probs, y, ones)
        elif loss_code == LOSS_KL_CLEAN:
            dp = _kl_dprobs(probs, probs_clean, ones)
        else:
            w = _mart_weights(probs_clean, y, 1.0)
            dp = _kl_dprobs(probs, probs_clean, w)
        gx = _backward_input(params, woffs, dims, acts, zs, probs, dp)
        xa = xa + eta * np.sign(gx)
        xa = x + np.clip(xa - x, -eps, eps)
        if clip01:
            xa = np.clip(xa, 0.0, 1.0)
    return xa


@_jit
def attack_udr(params, woffs, boffs, dims, acts, x, noise, y,
               k, eta, lam, risk_code, beta,
               cost_code, cost_eps, cost_tau,
               ascent_sign, pull_sign, clip01,
               record, traj_x, traj_risk, traj_cost):
    """Soft-ball two-sub-step attack: risk ascent then multiplier pull-back.

    No hard projection anywhere; the final [0,1] clip (when clip01) is the
    only range constraint. When record is set the (k+1) iterates with their
    risk and smoothed-cost rows are written into the preallocated buffers;
    the recorded iterates are pre-clip.
    """
    wts = _transposed_weights(params, woffs, dims)
    probs_clean, _ = _forward(wts, params, boffs, dims, acts, x)
    xa = x + noise
    for step in range(k):
        probs, zs = _forward(wts, params, boffs, dims, acts, xa)
        if record:
            traj_x[step] = xa
            traj_risk[step] = risk_rows(risk_code, probs, probs_clean, y, beta)
            traj_cost[step] = smooth_cost_rows(cost_code, cost_eps, cost_tau, x, xa)
        dp = _risk_dprobs_adv(risk_code, probs, probs_clean, y, beta)
        gx = _backward_input(params, woffs, dims, acts, zs, probs, dp)
        if ascent_sign:
            push = np.sign(gx)
        else:
            push = gx
        x_inter = xa + eta * push
        cg = smooth_cost_grad_rows(cost_code, cost_eps, cost_tau, x, x_inter)
        if pull_sign:
            cg = np.sign(cg)
        xa = x_inter - (eta * lam) * cg
    if record:
        probs, _ = _forward(wts, params, boffs, dims, acts, xa)
        traj_x[k] = xa
        traj_risk[k] = risk_rows(risk_code, probs, probs_clean, y, beta)
        traj_cost[k] = smooth_cost_rows(cost_code, cost_eps, cost_tau, x, xa)
    if clip01:
        xa = np.clip(xa, 0.0, 1.0)
    return xa


@_jit
def attack_wrm(params, woffs, boffs, dims, acts, x, noise, y,
               k, eta, lam, cost_code, clip01):
    """Fixed-multiplier relaxed adversary: plain-gradient ascent on
    CE(h(x'), y) - lam * c(x', x), no wall, no projection."""
    wts = _transposed_weights(params, woffs, dims)
    n = x.shape[0]
    ones = np.ones(n)
    xa = x + noise
    for _ in range(k):
        probs, zs = _forward(wts, params, boffs, dims, acts, xa)
        dp = _ce_dprobs(probs, y, ones)
        gx = _backward_input(params, woffs, dims, acts, zs, probs, dp)
        g = gx - lam * base_cost_grad_rows(cost_code, x, xa)
        xa = xa + eta * g
    if clip01:
        xa = np.clip(xa, 0.0, 1.0)
    return xa
