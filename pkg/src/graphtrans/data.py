"""Synthetic parallel corpora, vocabulary and token-budget batching.

Tokens are single characters; a corpus file holds one pair per line as
``source<TAB>target``.
"""

import string
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import BOS, EOS, PAD, UNK

RESERVED = ("<bos>", "<eos>", "<pad>", "<unk>")
ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits
MAX_SENTENCE_LEN = 250
TASKS = ("copy", "reverse", "sort", "toy_translation")


class Vocabulary:
    def __init__(self, symbols=()):
        self.itos = list(RESERVED)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        for s in symbols:
            self.add(s)

    def add(self, sym):
        if sym not in self.stoi:
            self.stoi[sym] = len(self.itos)
            self.itos.append(sym)
        return self.stoi[sym]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens, strict=True):
        out = []
        for t in tokens:
            if t in self.stoi:
                out.append(self.stoi[t])
            elif strict:
                raise KeyError(f"token {t!r} not in vocabulary")
            else:
                out.append(UNK)
        return out

    def decode(self, ids):
        return [self.itos[i] for i in ids if i not in (BOS, EOS, PAD)]

    def content_symbols(self):
        return self.itos[len(RESERVED):]


def tokenize(text):
    return list(text)


def detokenize(tokens):
    return "".join(tokens)


@dataclass
class ParallelCorpus:
    pairs: list  # (source tokens, target tokens)
    vocab: Vocabulary
    splits: dict = field(default_factory=dict)  # split name -> list of pair indices

    def __post_init__(self):
        for src, tgt in self.pairs:
            if not src or not tgt:
                raise ContractError("corpus contains an empty sentence")
            if len(src) > MAX_SENTENCE_LEN or len(tgt) > MAX_SENTENCE_LEN:
                raise ContractError(f"sentence longer than {MAX_SENTENCE_LEN} tokens")

    def split(self, name):
        idx = self.splits.get(name, range(len(self.pairs)))
        return [self.pairs[i] for i in idx]


def _substitution(symbols, seed):
    # fixed per (alphabet, seed); a permutation, so the mapping is invertible
    perm = np.random.default_rng([seed, 7919]).permutation(len(symbols))
    return {s: symbols[j] for s, j in zip(symbols, perm)}


def toy_translate(src, table):
    """Substitute each token, then swap each adjacent pair (local reordering)."""
    out = [table[t] for t in src]
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def make_task(kind, n_pairs, len_range, vocab_size, seed, split_fracs=(0.8, 0.1, 0.1)):
    """Deterministic synthetic corpus.

    ``vocab_size`` counts the four reserved ids, so the content alphabet has
    ``vocab_size - 4`` symbols.
    """
    if kind not in TASKS:
        raise ContractError(f"unknown task {kind!r}; choose from {', '.join(TASKS)}")
    if vocab_size < 8:
        raise ContractError(f"vocab_size must be >= 8, got {vocab_size}")
    if vocab_size - len(RESERVED) > len(ALPHABET):
        raise ContractError(f"vocab_size must be <= {len(ALPHABET) + len(RESERVED)}")
    lo, hi = len_range
    if not 1 <= lo <= hi <= MAX_SENTENCE_LEN:
        raise ContractError(f"len_range must lie within [1, {MAX_SENTENCE_LEN}], got {len_range}")
    symbols = list(ALPHABET[: vocab_size - len(RESERVED)])
    rng = np.random.default_rng(seed)
    table = _substitution(symbols, seed)
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(lo, hi + 1))
        src = [symbols[i] for i in rng.integers(0, len(symbols), size=n)]
        if kind == "copy":
            tgt = list(src)
        elif kind == "reverse":
            tgt = src[::-1]
        elif kind == "sort":
            tgt = sorted(src, key=symbols.index)
        else:
            tgt = toy_translate(src, table)
        pairs.append((src, tgt))
    n_train = int(round(split_fracs[0] * n_pairs))
    n_valid = int(round(split_fracs[1] * n_pairs))
    splits = {
        "train": list(range(n_train)),
        "valid": list(range(n_train, n_train + n_valid)),
        "test": list(range(n_train + n_valid, n_pairs)),
    }
    return ParallelCorpus(pairs, Vocabulary(symbols), splits)


def write_corpus(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in pairs:
            fh.write(f"{detokenize(src)}\t{detokenize(tgt)}\n")


def read_corpus(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ContractError(f"{path}:{lineno}: expected source<TAB>target")
            src, tgt = line.split("\t", 1)
            pairs.append((tokenize(src), tokenize(tgt)))
    return pairs


@dataclass
class Batch:
    src: np.ndarray  # (B, Ls) padded source ids
    tgt_in: np.ndarray  # (B, Lt) BOS + target
    tgt_out: np.ndarray  # (B, Lt) target + EOS
    indices: list  # positions of the pairs in the encoded list

    @property
    def src_mask(self):
        return self.src != PAD

    @property
    def tgt_mask(self):
        return self.tgt_out != PAD

    @property
    def n_tokens(self):
        return int(self.tgt_mask.sum())


def encode_pairs(pairs, vocab, strict=True):
    return [(vocab.encode(s, strict), vocab.encode(t, strict)) for s, t in pairs]


def pad_batch(encoded, indices):
    srcs = [encoded[i][0] + [EOS] for i in indices]
    tgts = [encoded[i][1] for i in indices]
    B = len(indices)
    Ls = max(len(s) for s in srcs)
    Lt = max(len(t) for t in tgts) + 1
    src = np.full((B, Ls), PAD, dtype=np.int64)
    tin = np.full((B, Lt), PAD, dtype=np.int64)
    tout = np.full((B, Lt), PAD, dtype=np.int64)
    for r, (s, t) in enumerate(zip(srcs, tgts)):
        src[r, : len(s)] = s
        tin[r, 0] = BOS
        tin[r, 1 : len(t) + 1] = t
        tout[r, : len(t)] = t
        tout[r, len(t)] = EOS
    return Batch(src, tin, tout, list(indices))


def token_batches(encoded, token_budget, rng=None):
    """Group pairs so each padded batch holds at most ``token_budget`` tokens.

    Pairs are sorted by length (ties broken by a shuffled key when ``rng`` is
    given) and the batch order is shuffled; every pair lands in exactly one
    batch.
    """
    n = len(encoded)
    if n == 0:
        return []
    noise = rng.random(n) if rng is not None else np.zeros(n)
    lengths = np.array([max(len(s) + 1, len(t) + 1) for s, t in encoded])
    order = np.lexsort((noise, lengths))
    batches, cur, cur_max = [], [], 0
    for i in order:
        m = max(cur_max, lengths[i])
        if cur and m * (len(cur) + 1) > token_budget:
            batches.append(cur)
            cur, m = [], lengths[i]
        cur.append(int(i))
        cur_max = m
    if cur:
        batches.append(cur)
    if rng is not None:
        rng.shuffle(batches)
    return [pad_batch(encoded, b) for b in batches]
