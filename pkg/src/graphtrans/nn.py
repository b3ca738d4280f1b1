"""Layers, losses, dropout, Adam and the inverse-sqrt warmup schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError
from .tensor import Tensor, add, gather_rows, make_op, matmul, mul, relu, scale


class Module:
    """Minimal parameter container.

    Parameters are found by walking attributes in definition order; a tensor
    reachable through several attribute paths (shared projections) is listed
    once, under its first name.
    """

    training = True

    def named_parameters(self, prefix=""):
        seen = set()
        out = []
        self._collect(prefix, seen, out)
        return out

    def _collect(self, prefix, seen, out):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad and id(val) not in seen:
                    seen.add(id(val))
                    out.append((name, val))
            elif isinstance(val, Module):
                val._collect(name + ".", seen, out)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect(f"{name}.{i}.", seen, out)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))


def xavier_uniform(rng, d_in, d_out):
    bound = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out))


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        y = matmul(x, self.weight)
        return y if self.bias is None else add(y, self.bias)


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: feature dim {d} vs gamma {gamma.shape}, beta {beta.shape}")
    k = kernels.backend()
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y, xhat, rstd = k.layernorm_fwd(x2, gamma.data, beta.data, eps)

    def bw(g):
        dx, dgamma, dbeta = k.layernorm_bwd(np.ascontiguousarray(g).reshape(-1, d), xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dgamma, dbeta

    return make_op(y.reshape(x.shape), (x, gamma, beta), bw)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


def sinusoidal_positions(n, d):
    """Even feature columns hold sin(pos / 10000^(2i/d)), odd ones cos."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class Embedding(Module):
    def __init__(self, vocab_size, d, rng):
        self.vocab_size, self.d = vocab_size, d
        self.table = Tensor(rng.normal(0.0, d**-0.5, size=(vocab_size, d)), requires_grad=True)

    def __call__(self, ids):
        return embed(ids, self.table)


def embed(ids, table):
    """Scaled lookup plus sinusoidal positions; positions run along the last id axis."""
    ids = np.asarray(ids)
    d = table.shape[1]
    x = scale(gather_rows(table, ids), math.sqrt(d))
    return add_sinusoidal_positions(x)


def add_sinusoidal_positions(x):
    n, d = x.shape[-2], x.shape[-1]
    return add(x, Tensor(sinusoidal_positions(n, d), dtype=x.dtype))


def cross_entropy(logits, targets, pad_id, label_smoothing=0.0):
    """Mean negative log-likelihood over non-pad target positions."""
    V = logits.shape[-1]
    targets = np.asarray(targets).reshape(-1)
    flat = np.ascontiguousarray(logits.data.reshape(-1, V))
    if flat.shape[0] != targets.shape[0]:
        raise DimensionError(f"cross_entropy: {flat.shape[0]} logit rows vs {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError("cross_entropy: target id outside the vocabulary")
    weights = (targets != pad_id).astype(flat.dtype)
    count = weights.sum()
    if count == 0:
        raise ContractError("cross_entropy: every target position is padding")
    k = kernels.backend()
    per_row, probs = k.xent_fwd(flat, targets, weights, label_smoothing)
    loss = np.asarray(per_row.sum(dtype=np.float64) / count, dtype=flat.dtype)

    def bw(g):
        d = k.xent_bwd(probs, targets, weights, label_smoothing, float(np.asarray(g).reshape(-1)[0]) / count)
        return (d.reshape(logits.shape),)

    return make_op(loss, (logits,), bw)


def dropout(x, p, training, rng):
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return mul(x, Tensor(mask, dtype=x.dtype))


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng):
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def __call__(self, x):
        return self.lin2(relu(self.lin1(x)))


@dataclass
class LrSchedule:
    d: int
    warmup_step: int = 4000
    scale: float = 1.0

    def __post_init__(self):
        if self.warmup_step < 1:
            raise ContractError("warmup_step must be positive")


def lr_at(step, sched):
    if step < 1:
        raise ContractError(f"learning-rate step must be >= 1, got {step}")
    d, w = float(sched.d), float(sched.warmup_step)
    return sched.scale * d**-0.5 * min(step**-0.5, step * w**-1.5)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.98, epsilon=1e-9):
        params = list(params)
        if len({id(p) for p in params}) != len(params):
            raise ContractError("a parameter is registered with the optimizer twice")
        self.params = params
        self.state = AdamState(beta1, beta2, epsilon, 0,
                               [np.zeros_like(p.data) for p in params],
                               [np.zeros_like(p.data) for p in params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr):
        adam_step(self.params, [p.grad for p in self.params], self.state, lr)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place."""
    for i, g in enumerate(grads):
        if g is None:
            raise ContractError(f"adam_step: parameter {i} has no gradient")
        if g.shape != params[i].shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {params[i].shape}")
    state.step_count += 1
    k = kernels.backend()
    for p, g, m, v in zip(params, grads, state.m, state.v):
        k.adam_update(p.data, np.ascontiguousarray(g, dtype=p.data.dtype), m, v, lr,
                      state.beta1, state.beta2, state.epsilon, state.step_count)
