"""Symbolic subgraph-order analysis of self-attention stacks.

A representation is tracked as an interval of subgraph orders (node counts).
Attending with a query carrying orders ``A`` over keys/values carrying ``B``
joins one subgraph from each side with a new edge, so the novel subgraphs
have order at least ``max(A.hi, B.hi)`` and at most ``A.hi + B.hi``.
"""

import itertools
from dataclasses import dataclass, field
from graphlib import TopologicalSorter

import numpy as np

from .errors import ContractError, SizeGuardError


@dataclass(frozen=True)
class OrderInterval:
    lo: int
    hi: int

    def __post_init__(self):
        if not 1 <= self.lo <= self.hi:
            raise ContractError(f"invalid order interval [{self.lo}, {self.hi}]")

    def hull(self, other):
        return OrderInterval(min(self.lo, other.lo), max(self.hi, other.hi))

    def as_list(self):
        return [self.lo, self.hi]

    def __str__(self):
        return f"[{self.lo},{self.hi}]"


def combine(query, keyval):
    """Orders of the subgraphs newly formed by one attention hop."""
    return OrderInterval(max(query.hi, keyval.hi), query.hi + keyval.hi)


def layer_order_interval(i):
    """Orders produced by the i-th (1-based) layer of a plain self-attention stack."""
    if i < 1:
        raise ContractError(f"layer index must be >= 1, got {i}")
    return OrderInterval(2 ** (i - 1), 2**i)


def group_order_intervals(n):
    """(low, middle, high) order bands for band index ``n``."""
    if n < 2:
        raise ContractError(f"group bands need n >= 2 (n=1 has no middle band), got {n}")
    low = OrderInterval(1, 2 ** (n - 2))
    middle = OrderInterval(2 ** (n - 2), 2 ** (n - 1))
    high = OrderInterval(2 ** (n - 1), 2**n)
    return low, middle, high


@dataclass
class StreamOrders:
    layer: int
    prev_in: OrderInterval
    inc_in: OrderInterval
    high: OrderInterval
    mid1: OrderInterval
    mid2: OrderInterval
    prev_out: OrderInterval
    inc_out: OrderInterval
    full: OrderInterval

    def as_dict(self):
        return {k: (v.as_list() if isinstance(v, OrderInterval) else v) for k, v in vars(self).items()}


def propagate_vanilla(n_layers):
    """Per-layer (novel, representation hull) intervals for a plain stack."""
    rep = OrderInterval(1, 1)
    out = []
    for _ in range(n_layers):
        novel = combine(rep, rep)
        rep = rep.hull(novel)
        out.append((novel, rep))
    return out


def propagate_orders(n_layers):
    """Interval trace of the split-stream encoder.

    Both streams start at order 1 (word embeddings).  Each layer sets
    ``prev_out = hull(prev_in, inc_in)`` and ``inc_out`` to the hull of the
    three attention parts' novel orders.
    """
    if n_layers < 1:
        raise ContractError(f"n_layers must be >= 1, got {n_layers}")
    prev = inc = OrderInterval(1, 1)
    trace = []
    for i in range(1, n_layers + 1):
        high = combine(inc, inc)
        mid1 = combine(inc, prev)
        mid2 = combine(prev, inc)
        prev_out = prev.hull(inc)
        inc_out = high.hull(mid1).hull(mid2)
        trace.append(StreamOrders(i, prev, inc, high, mid1, mid2, prev_out, inc_out, prev_out.hull(inc_out)))
        prev, inc = prev_out, inc_out
    return trace


def compare_readings(n_layers):
    """Set the simulated bands beside the stated bands under two index readings.

    ``per_layer`` takes the band index to be the layer index; ``stack`` takes
    it to be the total depth, so all layers share one set of bands.
    """
    trace = propagate_orders(n_layers)
    rows = []
    for rec in trace:
        row = {
            "layer": rec.layer,
            "simulated": {
                "low": rec.prev_in.as_list(),
                "middle": rec.mid1.hull(rec.mid2).as_list(),
                "high": rec.high.as_list(),
            },
        }
        for reading, n in (("per_layer", rec.layer), ("stack", n_layers)):
            if n >= 2:
                low, mid, high = group_order_intervals(n)
                row[reading] = {"low": low.as_list(), "middle": mid.as_list(), "high": high.as_list()}
            else:
                row[reading] = None
        rows.append(row)
    return rows


@dataclass
class DecompositionReport:
    n_subs_a: int
    n_subs_b: int
    dims: tuple
    trials: int
    max_rel_deviation: float
    deviations: list = field(repr=False, default_factory=list)


def verify_decomposition(n_subs_a, n_subs_b, dims, trials, seed=0, dtype=np.float32):
    """Check (sum_i a_i)(sum_j b_j)^T == sum_ij a_i b_j^T on random matrices.

    ``dims`` is (rows_a, rows_b, width).  Deviation is the largest absolute
    difference divided by the largest entry of the double sum.
    """
    if trials < 1:
        raise ContractError("trials must be >= 1")
    rows_a, rows_b, width = dims
    rng = np.random.default_rng(seed)
    devs = []
    for _ in range(trials):
        a = rng.standard_normal((n_subs_a, rows_a, width)).astype(dtype)
        b = rng.standard_normal((n_subs_b, rows_b, width)).astype(dtype)
        lhs = a.sum(axis=0) @ b.sum(axis=0).T
        rhs = np.zeros((rows_a, rows_b), dtype=dtype)
        for i in range(n_subs_a):
            for j in range(n_subs_b):
                rhs += a[i] @ b[j].T
        scale = max(float(np.abs(rhs).max()), np.finfo(dtype).tiny)
        devs.append(float(np.abs(lhs - rhs).max()) / scale)
    return DecompositionReport(n_subs_a, n_subs_b, tuple(dims), trials, max(devs), devs)


# ---------------------------------------------------------------------------
# multigraph enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    """Directed edge tagged with the two subgraphs it joins."""

    source: int
    target: int
    source_sub: frozenset
    target_sub: frozenset


@dataclass
class Multigraph:
    nodes: tuple
    edges: list

    def __post_init__(self):
        for e in self.edges:
            if e.source not in e.source_sub or e.target not in e.target_sub:
                raise ContractError(f"edge {e.source}->{e.target} endpoints outside its subgraphs")

    def parallel_edges(self, source, target):
        return [e for e in self.edges if e.source == source and e.target == target]


@dataclass
class SubgraphEnumeration:
    sentence_len: int
    max_order: int
    subgraphs: list  # frozensets of node ids, ordered by (order, sorted nodes)
    counts: dict  # order -> number of subgraphs
    multigraph: Multigraph
    precedes: dict  # subgraph -> set of subgraphs that must be generated first

    def generation_order(self):
        return list(TopologicalSorter(self.precedes).static_order())


MAX_ENUM_LEN = 5


def enumerate_subgraphs(sentence_len, max_order):
    """Node-subset subgraphs of the complete directed word graph.

    Each subset of size >= 2 is formed by an edge joining two disjoint
    smaller subgraphs; every such (split, cross edge) is recorded as a
    separate multigraph edge, and both halves precede the union.
    """
    if sentence_len > MAX_ENUM_LEN:
        raise SizeGuardError(f"exhaustive enumeration limited to {MAX_ENUM_LEN} words, got {sentence_len}")
    if sentence_len < 1 or max_order < 1:
        raise ContractError("sentence_len and max_order must be >= 1")
    nodes = tuple(range(sentence_len))
    top = min(max_order, sentence_len)
    subgraphs = [frozenset(c) for k in range(1, top + 1) for c in itertools.combinations(nodes, k)]
    counts = {k: sum(1 for s in subgraphs if len(s) == k) for k in range(1, top + 1)}
    edges = []
    precedes = {s: set() for s in subgraphs}
    for s in subgraphs:
        if len(s) < 2:
            continue
        members = sorted(s)
        # unordered splits {A, B}; A holds the smallest member to avoid duplicates
        rest = members[1:]
        for r in range(0, len(rest)):
            for extra in itertools.combinations(rest, r):
                A = frozenset((members[0],) + extra)
                B = s - A
                precedes[s].update((A, B))
                for u in sorted(A):
                    for v in sorted(B):
                        edges.append(Edge(u, v, A, B))
                        edges.append(Edge(v, u, B, A))
    return SubgraphEnumeration(sentence_len, max_order, subgraphs, counts, Multigraph(nodes, edges), precedes)
