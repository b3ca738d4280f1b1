"""Corpus BLEU, length-bucketed BLEU and token accuracy."""

import math
from collections import Counter

import numpy as np

from .errors import ContractError

DEFAULT_BUCKETS = ((0, 10), (10, 20), (20, 40), (40, math.inf))


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references, max_n=4):
    """Clipped match and total counts per order, plus hypothesis/reference lengths."""
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = ngram_counts(hyp, n)
            r = ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hypotheses, references, max_n=4):
    """Tokenized, case-sensitive corpus BLEU in [0, 100].

    Geometric mean of clipped n-gram precisions times the brevity penalty.
    Orders for which the hypotheses contain no n-grams at all are left out
    of the mean; any order with zero matches gives 0.
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ContractError("BLEU of an empty corpus is undefined")
    matches, totals, hyp_len, ref_len = bleu_stats(hypotheses, references, max_n)
    if hyp_len == 0:
        return 0.0
    logs = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def bucket_of(length, buckets=DEFAULT_BUCKETS):
    for lo, hi in buckets:
        if lo <= length < hi:
            return (lo, hi)
    return None


def bucket_label(bucket):
    lo, hi = bucket
    return f"{lo}-{'inf' if math.isinf(hi) else int(hi)}"


def bleu_by_length(hypotheses, references, lengths=None, buckets=DEFAULT_BUCKETS, max_n=4):
    """Corpus BLEU per half-open length bucket ``[lo, hi)``.

    ``lengths`` are source lengths; reference lengths are used when omitted.
    Buckets with no sentences are absent from the result.
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if lengths is None:
        lengths = [len(r) for r in references]
    groups = {}
    for h, r, n in zip(hypotheses, references, lengths):
        b = bucket_of(n, buckets)
        if b is not None:
            groups.setdefault(b, ([], []))
            groups[b][0].append(h)
            groups[b][1].append(r)
    return {b: bleu(hs, rs, max_n) for b in buckets if b in groups for hs, rs in [groups[b]]}


def token_accuracy(logits, targets, pad_id):
    logits = np.asarray(getattr(logits, "data", logits))
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ContractError(f"logits {logits.shape} do not match targets {targets.shape}")
    keep = targets != pad_id
    if not keep.any():
        raise ContractError("token accuracy over an all-pad batch is undefined")
    pred = logits.argmax(axis=-1)
    return float((pred == targets)[keep].mean())
