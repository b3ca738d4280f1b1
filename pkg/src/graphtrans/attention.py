"""Scaled dot-product attention, multi-head attention and the three-part group.

The group splits encoder self-attention over the two input streams:

=========  ===========  ===========
part       query        key / value
=========  ===========  ===========
high       incremental  incremental
mid1       incremental  previous
mid2       previous     incremental
=========  ===========  ===========
"""

import math

import numpy as np

from .errors import ContractError, DimensionError
from .nn import LayerNorm, Linear, Module, dropout
from .tensor import add, matmul, reshape, scale, softmax, transpose, where_mask


def scaled_dot_attention(q, k, v, mask=None, weight_scale=1.0, return_weights=False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes.

    ``mask`` is boolean, True where a key is visible, and must broadcast to
    the (..., m, n) score shape.  ``weight_scale`` multiplies the attention
    weights after the softmax (the self-gate uses 1/4).
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    d_k = q.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        full = np.broadcast_to(mask, scores.shape)
        if not full.any(axis=-1).all():
            raise ContractError("attention mask leaves a query row with no visible key")
        scores = where_mask(scores, full, -np.inf)
    weights = softmax(scores)
    if weight_scale != 1.0:
        weights = scale(weights, weight_scale)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Multi-head attention with a configurable working width ``d_attn``.

    Projection layers may be passed in to share them between instances;
    the output projection always belongs to this instance.
    """

    def __init__(self, d_model, n_heads, rng, d_attn=None, wq=None, wk=None, wv=None):
        d_attn = d_attn or d_model
        if d_attn % n_heads:
            raise ContractError(f"attention width {d_attn} not divisible by {n_heads} heads")
        self.d_model, self.n_heads, self.d_attn = d_model, n_heads, d_attn
        self.d_k = d_attn // n_heads
        self.wq = wq or Linear(d_model, d_attn, rng)
        self.wk = wk or Linear(d_model, d_attn, rng)
        self.wv = wv or Linear(d_model, d_attn, rng)
        self.wo = Linear(d_attn, d_model, rng)
        self.weight_scale = 1.0
        self.keep_weights = False
        self.last_weights = None

    def _split(self, x):
        # (..., L, d_attn) -> (..., h, L, d_k)
        lead = x.shape[:-2]
        L = x.shape[-2]
        x = reshape(x, lead + (L, self.n_heads, self.d_k))
        n = len(lead)
        return transpose(x, tuple(range(n)) + (n + 1, n, n + 2))

    def _merge(self, x):
        lead = x.shape[:-3]
        n = len(lead)
        x = transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
        return reshape(x, lead + (x.shape[-3], self.d_attn))

    def __call__(self, x_q, x_k, x_v, mask=None):
        q = self._split(self.wq(x_q))
        k = self._split(self.wk(x_k))
        v = self._split(self.wv(x_v))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            # (..., m, n) masks gain a head axis
            mask = np.expand_dims(mask, -3)
        out, w = scaled_dot_attention(q, k, v, mask, self.weight_scale, return_weights=True)
        if self.keep_weights:
            self.last_weights = w.data
        return self.wo(self._merge(out))


class AttentionGroup(Module):
    """Three attention parts over the previous/incremental streams.

    Each part is followed by dropout, a residual from its query input and
    layer normalization.  With ``shared_qkv`` only two Q/K/V projection sets
    exist, one per stream kind.
    """

    def __init__(self, d_model, n_heads, rng, half_dim=False, shared_qkv=False, dropout=0.0):
        d_attn = d_model // 2 if half_dim else d_model
        self.dropout_p = dropout
        self.shared_qkv = shared_qkv
        if shared_qkv:
            inc = [Linear(d_model, d_attn, rng) for _ in range(3)]
            prev = [Linear(d_model, d_attn, rng) for _ in range(3)]
            self.high = MultiHeadAttention(d_model, n_heads, rng, d_attn, inc[0], inc[1], inc[2])
            self.mid1 = MultiHeadAttention(d_model, n_heads, rng, d_attn, inc[0], prev[1], prev[2])
            self.mid2 = MultiHeadAttention(d_model, n_heads, rng, d_attn, prev[0], inc[1], inc[2])
        else:
            self.high = MultiHeadAttention(d_model, n_heads, rng, d_attn)
            self.mid1 = MultiHeadAttention(d_model, n_heads, rng, d_attn)
            self.mid2 = MultiHeadAttention(d_model, n_heads, rng, d_attn)
        self.norm_high = LayerNorm(d_model)
        self.norm_mid1 = LayerNorm(d_model)
        self.norm_mid2 = LayerNorm(d_model)

    def parts(self):
        return (self.high, self.mid1, self.mid2)

    def __call__(self, prev, inc, mask=None, rng=None):
        if prev.shape != inc.shape:
            raise DimensionError(f"stream shapes differ: previous {prev.shape}, incremental {inc.shape}")
        p, on = self.dropout_p, self.training

        def sub(mha, norm, q, kv):
            return norm(add(q, dropout(mha(q, kv, kv, mask), p, on, rng)))

        a_high = sub(self.high, self.norm_high, inc, inc)
        a_mid1 = sub(self.mid1, self.norm_mid1, inc, prev)
        a_mid2 = sub(self.mid2, self.norm_mid2, prev, inc)
        return a_high, a_mid1, a_mid2


def attention_group_forward(prev_in, inc_in, group, mask=None, rng=None):
    return group(prev_in, inc_in, mask, rng)
