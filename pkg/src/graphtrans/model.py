"""Encoder-decoder model, decoding and sequence scoring."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import MultiHeadAttention
from .encoder import FusionStrategy, GraphEncoder, VanillaEncoder
from .errors import ContractError
from .nn import Embedding, FeedForward, LayerNorm, Linear, Module, cross_entropy, dropout
from .tensor import Tensor, add, no_grad

BOS, EOS, PAD, UNK = 0, 1, 2, 3


@dataclass
class ModelConfig:
    arch: str = "graph"  # "graph" or "baseline"
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    fusion: str = "sum"
    half_dim: bool = False
    shared_qkv: bool = False
    ffn_on: str = "incremental"
    src_vocab: int = 32
    tgt_vocab: int = 32
    share_embeddings: bool = False
    label_smoothing: float = 0.0
    warmup: int = 4000
    lr_scale: float = 1.0
    beam: int = 6
    alpha: float = 0.2
    max_len_offset: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.arch not in ("graph", "baseline"):
            raise ContractError(f"arch: expected 'graph' or 'baseline', got {self.arch!r}")
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "src_vocab", "tgt_vocab", "warmup", "beam"):
            val = getattr(self, name)
            if val < (0 if name == "n_layers" else 1):
                raise ContractError(f"{name}: must be positive, got {val}")
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model: {self.d_model} not divisible by n_heads={self.n_heads}")
        if self.half_dim and self.d_model % (2 * self.n_heads):
            raise ContractError(f"d_model: half_dim needs divisibility by 2*n_heads={2 * self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout: must be in [0, 1), got {self.dropout}")
        if self.share_embeddings and self.src_vocab != self.tgt_vocab:
            raise ContractError("share_embeddings: source and target vocabularies differ in size")
        FusionStrategy.parse(self.fusion)
        if self.ffn_on not in ("incremental", "full"):
            raise ContractError(f"ffn_on: expected 'incremental' or 'full', got {self.ffn_on!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class DecoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, rng, dropout=0.0):
        self.dropout_p = dropout
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm_self = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm_cross = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm_ffn = LayerNorm(d_model)

    def __call__(self, y, memory, self_mask, memory_mask, rng=None):
        p, on = self.dropout_p, self.training
        y = self.norm_self(add(y, dropout(self.self_attn(y, y, y, self_mask), p, on, rng)))
        y = self.norm_cross(add(y, dropout(self.cross_attn(y, memory, memory, memory_mask), p, on, rng)))
        return self.norm_ffn(add(y, dropout(self.ffn(y), p, on, rng)))


def causal_mask(n):
    """True where position t may attend to position s (s <= t)."""
    return np.tril(np.ones((n, n), dtype=bool))


class Seq2Seq(Module):
    def __init__(self, config, seed=0):
        config.validate()
        self.config = config
        ss = np.random.SeedSequence(seed)
        init_seed, drop_seed = ss.spawn(2)
        rng = np.random.default_rng(init_seed)
        self.dropout_rng = np.random.default_rng(drop_seed)
        c = config
        self.src_embedding = Embedding(c.src_vocab, c.d_model, rng)
        self.tgt_embedding = self.src_embedding if c.share_embeddings else Embedding(c.tgt_vocab, c.d_model, rng)
        if c.arch == "graph":
            self.encoder = GraphEncoder(c.src_vocab, c.d_model, c.n_heads, c.d_ff, c.n_layers, rng,
                                        embedding=self.src_embedding, fusion=c.fusion, half_dim=c.half_dim,
                                        shared_qkv=c.shared_qkv, dropout=c.dropout, ffn_on=c.ffn_on)
        else:
            self.encoder = VanillaEncoder(c.src_vocab, c.d_model, c.n_heads, c.d_ff, c.n_layers, rng,
                                          embedding=self.src_embedding, dropout=c.dropout)
        self.dec_layers = [DecoderLayer(c.d_model, c.n_heads, c.d_ff, rng, c.dropout) for _ in range(c.n_layers)]
        self.out_proj = Linear(c.d_model, c.tgt_vocab, rng)

    # -- forward pieces ---------------------------------------------------

    def encode(self, src, trace=None):
        """Encode padded source ids (B, Ls); returns memory and key mask (B, 1, Ls)."""
        src = np.atleast_2d(np.asarray(src))
        mask = (src != PAD)[:, None, :]
        memory = self.encoder(src, mask, self.dropout_rng, trace=trace)
        return memory, mask

    def decode_logits(self, tgt_prefix, memory, memory_mask=None):
        """Row t holds logits for the token following prefix position t."""
        tgt = np.asarray(tgt_prefix)
        squeeze = tgt.ndim == 1
        tgt = np.atleast_2d(tgt)
        if tgt.shape[-1] == 0:
            raise ContractError("decode_logits needs a non-empty prefix")
        if np.any(tgt[:, 0] != BOS):
            raise ContractError("target prefix must start with BOS")
        if memory.ndim == 2:
            memory = memory.reshape(1, *memory.shape)
        y = dropout(self.tgt_embedding(tgt), self.config.dropout, self.training, self.dropout_rng)
        self_mask = causal_mask(tgt.shape[-1])
        for layer in self.dec_layers:
            y = layer(y, memory, self_mask, memory_mask, self.dropout_rng)
        logits = self.out_proj(y)
        return logits[0] if squeeze else logits

    def loss(self, src, tgt_in, tgt_out):
        memory, mask = self.encode(src)
        logits = self.decode_logits(tgt_in, memory, mask)
        return cross_entropy(logits, tgt_out, PAD, self.config.label_smoothing), logits

    def gate_values(self):
        """Last weight-gate activations per encoder layer (None for other fusions)."""
        if self.config.arch != "graph":
            return []
        return [layer.last_gate for layer in self.encoder.layers]


def log_softmax64(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _mask_reserved(scores):
    """BOS and PAD are never valid outputs; hide them from the decoders.

    Applied after the softmax so hypothesis scores stay model log-probs.
    """
    out = np.array(scores, dtype=np.float64)
    out[..., [BOS, PAD]] = -np.inf
    return out


def length_penalty(length, alpha):
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class BeamHypothesis:
    tokens: list
    log_prob: float
    finished: bool = False


@dataclass
class BeamResult:
    tokens: list  # generated tokens, BOS and EOS stripped
    log_prob: float
    score: float
    finished: bool


def _strip(tokens):
    out = list(tokens[1:])
    if out and out[-1] == EOS:
        out.pop()
    return out


def beam_search(model, src, width, alpha, max_len=None):
    if width < 1:
        raise ContractError(f"beam width must be >= 1, got {width}")
    src = np.asarray(src)
    if max_len is None:
        max_len = len(src) + model.config.max_len_offset

    def score(h):
        return h.log_prob / length_penalty(len(h.tokens) - 1, alpha)

    model.eval()
    with no_grad():
        memory, mask = model.encode(src[None, :])
        alive = [BeamHypothesis([BOS], 0.0)]
        finished = []
        for _ in range(max_len):
            prefixes = np.array([h.tokens for h in alive])
            mem = np.broadcast_to(memory.data, (len(alive),) + memory.shape[1:])
            logits = model.decode_logits(prefixes, Tensor(mem, dtype=mem.dtype), np.broadcast_to(mask, (len(alive),) + mask.shape[1:]))
            logp = _mask_reserved(log_softmax64(logits.data[:, -1, :]))
            cands = []
            for i, h in enumerate(alive):
                row = logp[i]
                top = np.argsort(-row, kind="stable")[:width]
                for tok in top:
                    cands.append((h.log_prob + row[tok], i, int(tok)))
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            nxt = []
            for lp, i, tok in cands[:width]:
                hyp = BeamHypothesis(alive[i].tokens + [tok], lp, tok == EOS)
                (finished if hyp.finished else nxt).append(hyp)
            alive = nxt
            if not alive:
                break
            if finished:
                # log-probs only fall, so an alive hypothesis can at best keep its
                # log-prob and earn the longest length penalty
                ceiling = max(h.log_prob for h in alive) / length_penalty(max_len, alpha)
                if ceiling <= max(score(h) for h in finished):
                    break
    pool = finished if finished else alive

    best = max(pool, key=score)
    return BeamResult(_strip(best.tokens), float(best.log_prob), float(score(best)), bool(finished))


def greedy_decode(model, src_batch, max_len=None):
    """Batched argmax decoding; returns one token list per source row.

    Without ``max_len`` each row may generate up to its own unpadded source
    length plus ``max_len_offset`` tokens, so batching never changes a result.
    """
    src_batch = np.atleast_2d(np.asarray(src_batch))
    B = src_batch.shape[0]
    if max_len is None:
        limits = (src_batch != PAD).sum(axis=1) + model.config.max_len_offset
    else:
        limits = np.full(B, max_len)
    model.eval()
    with no_grad():
        memory, mask = model.encode(src_batch)
        ys = np.full((B, 1), BOS, dtype=np.int64)
        done = limits <= 0
        for step in range(int(limits.max(initial=0))):
            logits = model.decode_logits(ys, memory, mask)
            nxt = _mask_reserved(logits.data[:, -1, :]).argmax(axis=-1)
            nxt = np.where(done, PAD, nxt)
            ys = np.concatenate([ys, nxt[:, None]], axis=1)
            done |= (nxt == EOS) | (step + 1 >= limits)
            if done.all():
                break
    out = []
    for row in ys:
        toks = []
        for t in row[1:]:
            if t in (EOS, PAD):
                break
            toks.append(int(t))
        out.append(toks)
    return out


def sequence_log_prob(model, src, tgt):
    """sum_t log p(tgt_t | tgt_<t, src) with a BOS-prefixed teacher-forced pass."""
    src = np.asarray(src)
    tgt = np.asarray(tgt)
    V = model.config.tgt_vocab
    if tgt.size and (tgt.min() < 0 or tgt.max() >= V):
        raise IndexError("target token outside the vocabulary")
    model.eval()
    with no_grad():
        memory, mask = model.encode(src[None, :])
        prefix = np.concatenate([[BOS], tgt[:-1]]).astype(np.int64)
        logits = model.decode_logits(prefix, memory, mask)
    logp = log_softmax64(logits.data)
    return float(logp[np.arange(len(tgt)), tgt].sum())
