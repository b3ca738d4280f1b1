"""Split-stream encoder and a vanilla Transformer encoder for comparison.

A layer receives the previous and incremental streams, runs the attention
group, fuses the group outputs with the previous-stream sum into the full
representation, and emits ``(prev + inc, full - (prev + inc))`` with a
feed-forward sublayer on the incremental part.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .attention import AttentionGroup, MultiHeadAttention
from .errors import ContractError, DimensionError
from .nn import Embedding, FeedForward, LayerNorm, Module, dropout
from .tensor import Tensor, add, mul, reshape, sigmoid, sub, sum_, stack


class FusionStrategy(str, enum.Enum):
    SUM = "sum"
    WEIGHT_GATE = "weight_gate"
    SELF_GATE = "self_gate"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {"gate": "weight_gate", "weightgate": "weight_gate", "selfgate": "self_gate"}
        return cls(aliases.get(key, key))


@dataclass
class EncoderStreams:
    prev: Tensor
    inc: Tensor

    def full(self):
        return add(self.prev, self.inc)


def _same_shape(*ts):
    ref = ts[0].shape
    for t in ts[1:]:
        if t.shape != ref:
            raise DimensionError(f"fusion inputs disagree: {ref} vs {t.shape}")


def fuse_sum(a_high, a_mid1, a_mid2, prev_out):
    _same_shape(a_high, a_mid1, a_mid2, prev_out)
    return add(add(add(a_high, a_mid1), a_mid2), prev_out)


def fuse_weight_gate(i_h, i_m, i_l, return_gate=False):
    """w = sigmoid(i_h + i_m + i_l); full = (i_h + i_m) * w + i_l * (1 - w)."""
    _same_shape(i_h, i_m, i_l)
    new = add(i_h, i_m)
    w = sigmoid(add(new, i_l))
    full = add(mul(new, w), mul(i_l, sub(1.0, w)))
    return (full, w) if return_gate else full


def fuse_self_gate(slots, gate_mha, return_weights=False):
    """Attend across the four group slots at each position, weights divided by 4.

    ``slots`` is (a_high, a_mid1, a_mid2, prev_out).  The full representation
    is the sum of the four updated slots.
    """
    if len(slots) != 4:
        raise ContractError(f"self-gate fuses exactly 4 slots, got {len(slots)}")
    _same_shape(*slots)
    shape = slots[0].shape
    d = shape[-1]
    R = stack(slots, axis=-2)  # (..., L, 4, d)
    R = reshape(R, (-1, 4, d))
    old_scale, old_keep = gate_mha.weight_scale, gate_mha.keep_weights
    gate_mha.weight_scale = 0.25
    gate_mha.keep_weights = gate_mha.keep_weights or return_weights
    try:
        updated = gate_mha(R, R, R)
    finally:
        gate_mha.weight_scale = old_scale
    weights = gate_mha.last_weights
    gate_mha.keep_weights = old_keep
    full = reshape(sum_(updated, axis=-2), shape)
    return (full, weights) if return_weights else full


class GraphEncoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, rng, fusion=FusionStrategy.SUM, half_dim=False,
                 shared_qkv=False, dropout=0.0, ffn_on="incremental"):
        if ffn_on not in ("incremental", "full"):
            raise ContractError(f"ffn_on must be 'incremental' or 'full', got {ffn_on!r}")
        self.fusion = FusionStrategy.parse(fusion)
        self.dropout_p = dropout
        self.ffn_on = ffn_on
        self.group = AttentionGroup(d_model, n_heads, rng, half_dim, shared_qkv, dropout)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm_ffn = LayerNorm(d_model)
        self.gate_mha = MultiHeadAttention(d_model, n_heads, rng) if self.fusion is FusionStrategy.SELF_GATE else None
        self.last_gate = None

    def __call__(self, streams, mask=None, rng=None):
        prev_in, inc_in = streams.prev, streams.inc
        prev_out = add(prev_in, inc_in)
        a_high, a_mid1, a_mid2 = self.group(prev_in, inc_in, mask, rng)
        if self.fusion is FusionStrategy.SUM:
            full = fuse_sum(a_high, a_mid1, a_mid2, prev_out)
        elif self.fusion is FusionStrategy.WEIGHT_GATE:
            full, w = fuse_weight_gate(a_high, add(a_mid1, a_mid2), prev_out, return_gate=True)
            self.last_gate = w.data
        else:
            full = fuse_self_gate((a_high, a_mid1, a_mid2, prev_out), self.gate_mha)
        p, on = self.dropout_p, self.training
        if self.ffn_on == "incremental":
            inc_raw = sub(full, prev_out)
            inc_out = self.norm_ffn(add(inc_raw, dropout(self.ffn(inc_raw), p, on, rng)))
        else:
            full = self.norm_ffn(add(full, dropout(self.ffn(full), p, on, rng)))
            inc_out = sub(full, prev_out)
        return EncoderStreams(prev_out, inc_out)


def encoder_layer_forward(streams_in, layer, training=False, mask=None, rng=None):
    layer.train(training)
    return layer(streams_in, mask, rng)


class GraphEncoder(Module):
    def __init__(self, vocab_size, d_model, n_heads, d_ff, n_layers, rng, embedding=None, **layer_kw):
        self.d_model = d_model
        self.embedding = embedding or Embedding(vocab_size, d_model, rng)
        self.layers = [GraphEncoderLayer(d_model, n_heads, d_ff, rng, **layer_kw) for _ in range(n_layers)]
        self.dropout_p = layer_kw.get("dropout", 0.0)

    def initial_streams(self, ids, rng=None):
        x = dropout(self.embedding(ids), self.dropout_p, self.training, rng)
        return EncoderStreams(Tensor(np.zeros(x.shape), dtype=x.dtype), x)

    def __call__(self, ids, mask=None, rng=None, trace=None):
        ids = np.asarray(ids)
        if ids.shape[-1] == 0:
            raise ContractError("cannot encode an empty sequence")
        streams = self.initial_streams(ids, rng)
        if trace is not None:
            trace.append(streams)
        for layer in self.layers:
            streams = layer(streams, mask, rng)
            if trace is not None:
                trace.append(streams)
        return streams.full()


def encode(tokens, encoder, mask=None):
    return encoder(tokens, mask)


class VanillaEncoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, rng, dropout=0.0):
        self.dropout_p = dropout
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm_attn = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm_ffn = LayerNorm(d_model)

    def __call__(self, x, mask=None, rng=None):
        p, on = self.dropout_p, self.training
        x = self.norm_attn(add(x, dropout(self.attn(x, x, x, mask), p, on, rng)))
        return self.norm_ffn(add(x, dropout(self.ffn(x), p, on, rng)))


class VanillaEncoder(Module):
    def __init__(self, vocab_size, d_model, n_heads, d_ff, n_layers, rng, embedding=None, dropout=0.0):
        self.d_model = d_model
        self.embedding = embedding or Embedding(vocab_size, d_model, rng)
        self.layers = [VanillaEncoderLayer(d_model, n_heads, d_ff, rng, dropout) for _ in range(n_layers)]
        self.dropout_p = dropout

    def __call__(self, ids, mask=None, rng=None, trace=None):
        ids = np.asarray(ids)
        if ids.shape[-1] == 0:
            raise ContractError("cannot encode an empty sequence")
        x = dropout(self.embedding(ids), self.dropout_p, self.training, rng)
        for layer in self.layers:
            x = layer(x, mask, rng)
        return x
