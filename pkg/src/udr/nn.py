"""Dense classifier h: stacked affine layers with ReLU hidden activations
and a softmax head, plus reverse-mode gradients w.r.t. parameters and
w.r.t. the input rows.

This is the plain-numpy reference used for the optimizer step, evaluation
predictions, and as the oracle the fused attack kernels are tested against.
Parameters live in one flat f64 vector (per layer: weight row-major
out x in, then bias), which keeps optimizer updates and checkpoints
trivial.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from udr.errors import ArgumentError, ContractError, DimensionError
from udr.tensor import Prng, as_f64

ACT_NONE = 0
ACT_RELU = 1
ACT_SOFTMAX = 2

CHECKPOINT_MAGIC = b"UDR1"
CHECKPOINT_VERSION = 1


def _default_activations(n_layers: int) -> np.ndarray:
    acts = [ACT_RELU] * (n_layers - 1) + [ACT_SOFTMAX]
    return np.asarray(acts, dtype=np.int64)


@dataclass
class DenseNet:
    """Layer dims [in, h1, ..., out], activation codes per layer, flat params."""

    dims: np.ndarray
    activations: np.ndarray
    params: np.ndarray
    woffs: np.ndarray = field(init=False)
    boffs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dims = np.asarray(self.dims, dtype=np.int64)
        self.activations = np.asarray(self.activations, dtype=np.int64)
        if len(self.dims) < 2:
            raise ArgumentError("need at least one layer (two dims)")
        if len(self.activations) != self.n_layers:
            raise DimensionError(
                f"{len(self.activations)} activation codes for {self.n_layers} layers"
            )
        woffs, boffs = [], []
        off = 0
        for l in range(self.n_layers):
            fan_in, fan_out = int(self.dims[l]), int(self.dims[l + 1])
            woffs.append(off)
            off += fan_out * fan_in
            boffs.append(off)
            off += fan_out
        self.woffs = np.asarray(woffs, dtype=np.int64)
        self.boffs = np.asarray(boffs, dtype=np.int64)
        self.params = as_f64(self.params)
        if self.params.shape != (off,):
            raise DimensionError(
                f"params length {self.params.shape} does not match dims (need {off})"
            )

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def in_dim(self) -> int:
        return int(self.dims[0])

    @property
    def out_dim(self) -> int:
        return int(self.dims[-1])

    def weight(self, l: int) -> np.ndarray:
        fan_in, fan_out = int(self.dims[l]), int(self.dims[l + 1])
        return self.params[self.woffs[l]:self.woffs[l] + fan_out * fan_in].reshape(
            fan_out, fan_in
        )

    def bias(self, l: int) -> np.ndarray:
        return self.params[self.boffs[l]:self.boffs[l] + int(self.dims[l + 1])]

    def with_params(self, params: np.ndarray) -> "DenseNet":
        return DenseNet(self.dims, self.activations, params)

    def kernel_args(self):
        return self.params, self.woffs, self.boffs, self.dims, self.activations

    @classmethod
    def init_random(cls, dims, prng: Prng, activations=None) -> "DenseNet":
        """He-style scaled uniform weights U(+-sqrt(6/fan_in)), zero biases."""
        dims = np.asarray(dims, dtype=np.int64)
        if activations is None:
            activations = _default_activations(len(dims) - 1)
        chunks = []
        for l in range(len(dims) - 1):
            fan_in, fan_out = int(dims[l]), int(dims[l + 1])
            limit = np.sqrt(6.0 / fan_in)
            w = prng.substream(l).uniform(-limit, limit, (fan_out, fan_in))
            chunks.append(w.ravel())
            chunks.append(np.zeros(fan_out))
        return cls(dims, activations, np.concatenate(chunks))

    @classmethod
    def zeros(cls, dims, activations=None) -> "DenseNet":
        dims = np.asarray(dims, dtype=np.int64)
        if activations is None:
            activations = _default_activations(len(dims) - 1)
        size = sum(
            int(dims[l + 1]) * int(dims[l]) + int(dims[l + 1])
            for l in range(len(dims) - 1)
        )
        return cls(dims, activations, np.zeros(size))


@dataclass
class ForwardTrace:
    """Per-layer values retained for backprop; tied to the exact params used."""

    inputs: list        # inputs[l]: input rows to layer l (inputs[0] is x)
    preacts: list       # preacts[l]: pre-activation z of layer l
    probs: np.ndarray   # forward output
    params: np.ndarray  # identity check against stale traces


def softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardTrace]:
    x = as_f64(x)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionError(f"input shape {x.shape} does not match in_dim {net.in_dim}")
    if not np.all(np.isfinite(x)):
        raise ArgumentError("non-finite entries in forward input")
    inputs, preacts = [x], []
    a = x
    for l in range(net.n_layers):
        z = a @ net.weight(l).T + net.bias(l)
        preacts.append(z)
        code = int(net.activations[l])
        if code == ACT_RELU:
            a = np.maximum(z, 0.0)
        elif code == ACT_SOFTMAX:
            a = softmax(z)
        else:
            a = z
        if l < net.n_layers - 1:
            inputs.append(a)
    return a, ForwardTrace(inputs, preacts, a, net.params)


def _check_trace(net: DenseNet, trace: ForwardTrace, dprobs: np.ndarray):
    if trace.params is not net.params:
        raise ContractError("stale trace: net params changed since forward")
    if dprobs.shape != trace.probs.shape:
        raise DimensionError(
            f"dLoss/dProbs shape {dprobs.shape} != probs shape {trace.probs.shape}"
        )


def _backward(net: DenseNet, trace: ForwardTrace, dprobs: np.ndarray):
    """Shared reverse sweep; yields (layer, dz) from top to bottom."""
    layers = net.n_layers
    code = int(net.activations[layers - 1])
    if code == ACT_SOFTMAX:
        p = trace.probs
        dz = p * (dprobs - (dprobs * p).sum(axis=1, keepdims=True))
    elif code == ACT_RELU:
        dz = np.where(trace.preacts[layers - 1] > 0.0, dprobs, 0.0)
    else:
        dz = dprobs
    for l in range(layers - 1, -1, -1):
        yield l, dz
        if l == 0:
            return
        da = dz @ net.weight(l)
        code = int(net.activations[l - 1])
        if code == ACT_RELU:
            dz = np.where(trace.preacts[l - 1] > 0.0, da, 0.0)
        else:
            dz = da


def grad_params(net: DenseNet, trace: ForwardTrace, dprobs) -> np.ndarray:
    """Exact gradient of the scalar loss whose dLoss/dProbs is given.

    Batch contributions are accumulated by the chain rule; pass the gradient
    of a batch-mean loss to get batch-mean parameter gradients.
    """
    dprobs = as_f64(dprobs)
    _check_trace(net, trace, dprobs)
    g = np.zeros_like(net.params)
    for l, dz in _backward(net, trace, dprobs):
        gw = dz.T @ trace.inputs[l]
        fan = gw.size
        g[net.woffs[l]:net.woffs[l] + fan] = gw.ravel()
        g[net.boffs[l]:net.boffs[l] + gw.shape[0]] = dz.sum(axis=0)
    return g


def grad_input(net: DenseNet, trace: ForwardTrace, dprobs) -> np.ndarray:
    dprobs = as_f64(dprobs)
    _check_trace(net, trace, dprobs)
    for l, dz in _backward(net, trace, dprobs):
        if l == 0:
            return dz @ net.weight(0)
    raise ContractError("unreachable: empty backward sweep")


def predict(net: DenseNet, x) -> np.ndarray:
    probs, _ = forward(net, x)
    return probs.argmax(axis=1)


def sgd_momentum_step(params, grads, lr: float, momentum: float, velocity):
    """v <- momentum*v + g; p <- p - lr*v. Returns new (params, velocity)."""
    if lr <= 0:
        raise ArgumentError(f"lr must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ArgumentError(f"momentum must be in [0,1), got {momentum}")
    params, grads, velocity = as_f64(params), as_f64(grads), as_f64(velocity)
    if params.shape != grads.shape or params.shape != velocity.shape:
        raise DimensionError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"velocity {velocity.shape}"
        )
    v = momentum * velocity + grads
    return params - lr * v, v


def adam_step(params, grads, lr: float, m, v, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam; t is the 1-based step count. Returns (p, m, v)."""
    if lr <= 0:
        raise ArgumentError(f"lr must be > 0, got {lr}")
    params, grads = as_f64(params), as_f64(grads)
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * grads * grads
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return params - lr * mhat / (np.sqrt(vhat) + eps), m, v


def save_checkpoint(net: DenseNet, path, seed: int, epoch: int) -> None:
    """Bit-exact binary format, little-endian throughout:

    magic "UDR1" | u32 version | u32 layer_count |
    per layer: u32 in, u32 out, u8 activation_code,
               f64 weights row-major (out x in), f64 biases |
    u64 seed | u32 epoch
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, net.n_layers))
        for l in range(net.n_layers):
            fan_in, fan_out = int(net.dims[l]), int(net.dims[l + 1])
            f.write(struct.pack("<IIB", fan_in, fan_out, int(net.activations[l])))
            f.write(net.weight(l).astype("<f8").tobytes())
            f.write(net.bias(l).astype("<f8").tobytes())
        f.write(struct.pack("<QI", seed & 0xFFFFFFFFFFFFFFFF, epoch))


def load_checkpoint(path) -> tuple[DenseNet, int, int]:
    from udr.errors import DataFormatError

    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"bad checkpoint magic {blob[:4]!r} in {path}")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    off = 12
    dims, acts, chunks = [], [], []
    for l in range(n_layers):
        fan_in, fan_out, act = struct.unpack_from("<IIB", blob, off)
        off += 9
        nw, nb = fan_out * fan_in, fan_out
        w = np.frombuffer(blob, dtype="<f8", count=nw, offset=off).astype(np.float64)
        off += 8 * nw
        b = np.frombuffer(blob, dtype="<f8", count=nb, offset=off).astype(np.float64)
        off += 8 * nb
        if l == 0:
            dims.append(fan_in)
        elif dims[-1] != fan_in:
            raise DataFormatError(
                f"layer {l} fan_in {fan_in} does not chain with previous out {dims[-1]}"
            )
        dims.append(fan_out)
        acts.append(act)
        chunks.append(w)
        chunks.append(b)
    seed, epoch = struct.unpack_from("<QI", blob, off)
    net = DenseNet(np.asarray(dims), np.asarray(acts), np.concatenate(chunks))
    return net, seed, epoch
