"""Weighted computational DAGs and the structural queries built on them.

Node identity is a dense 0-based index. Every node carries a compute
weight (time units) and a memory weight (memory units); both are
non-negative integers so all downstream cost arithmetic is exact.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import cached_property

from .errors import CycleError, DagFormatError


@dataclass(frozen=True)
class WeightedDag:
    """Directed acyclic graph with per-node compute and memory weights."""

    compute_weight: tuple[int, ...]
    memory_weight: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.compute_weight)
        if n != len(self.memory_weight):
            raise ValueError("compute_weight and memory_weight lengths differ")
        if n == 0:
            raise ValueError("DAG must have at least one node")
        for w in self.compute_weight + self.memory_weight:
            if w < 0:
                raise ValueError(f"negative weight {w}")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) endpoint out of range")
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))
        # Raises CycleError on cyclic input.
        topological_order(self)

    @property
    def node_count(self) -> int:
        return len(self.compute_weight)

    @cached_property
    def parents(self) -> tuple[tuple[int, ...], ...]:
        par = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            par[v].append(u)
        return tuple(tuple(sorted(p)) for p in par)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            ch[u].append(v)
        return tuple(tuple(sorted(c)) for c in ch)

    @cached_property
    def sources(self) -> frozenset[int]:
        return frozenset(v for v in range(self.node_count) if not self.parents[v])

    @cached_property
    def sinks(self) -> frozenset[int]:
        return frozenset(v for v in range(self.node_count) if not self.children[v])

    def omega(self, v: int) -> int:
        return self.compute_weight[v]

    def mu(self, v: int) -> int:
        return self.memory_weight[v]


def topological_order(dag: WeightedDag) -> list[int]:
    """Kahn's algorithm; ties broken by smallest node index first."""
    n = dag.node_count
    indeg = [0] * n
    children = [[] for _ in range(n)]
    for u, v in dag.edges:
        indeg[v] += 1
        children[u].append(v)
    import heapq

    ready = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != n:
        raise CycleError("graph contains a directed cycle")
    return order


@dataclass(frozen=True)
class Architecture:
    """Machine parameters: processor count, per-processor cache capacity,
    per-unit communication cost g and synchronization cost L."""

    processors: int
    cache_capacity: int
    comm_cost: int = 1
    sync_cost: int = 0

    def __post_init__(self):
        if self.processors < 1:
            raise ValueError("need at least one processor")
        if min(self.cache_capacity, self.comm_cost, self.sync_cost) < 0:
            raise ValueError("architecture parameters must be non-negative")


def parse_dag(text: str) -> WeightedDag:
    """Parse the line-based DAG format.

    Layout: a header ``n m``, then n lines ``omega mu``, then m lines
    ``u v``. ``%`` starts a comment line; blank lines are ignored.
    """
    rows = []  # (line_number, tokens)
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        rows.append((i, line.split()))

    def ints(entry, count, what):
        lineno, tokens = entry
        if len(tokens) != count:
            raise DagFormatError(f"expected {count} integers for {what}", lineno)
        out = []
        for t in tokens:
            try:
                out.append(int(t))
            except ValueError:
                raise DagFormatError(f"not an integer: {t!r}", lineno) from None
        return lineno, out

    if not rows:
        raise DagFormatError("empty input", 1)
    lineno, (n, m) = ints(rows[0], 2, "header")
    if n <= 0 or m < 0:
        raise DagFormatError("header counts out of range", lineno)
    if len(rows) != 1 + n + m:
        raise DagFormatError(
            f"expected {1 + n + m} data lines, found {len(rows)}", rows[-1][0]
        )

    omega, mu = [], []
    for entry in rows[1 : 1 + n]:
        lineno, (w, u) = ints(entry, 2, "node weights")
        if w < 0 or u < 0:
            raise DagFormatError("negative weight", lineno)
        omega.append(w)
        mu.append(u)

    edges = []
    for entry in rows[1 + n :]:
        lineno, (u, v) = ints(entry, 2, "edge")
        if not (0 <= u < n and 0 <= v < n):
            raise DagFormatError(f"edge endpoint out of range: ({u}, {v})", lineno)
        if u == v:
            raise DagFormatError(f"self-loop on node {u}", lineno)
        if (u, v) in edges:
            raise DagFormatError(f"duplicate edge ({u}, {v})", lineno)
        edges.append((u, v))

    try:
        return WeightedDag(tuple(omega), tuple(mu), tuple(edges))
    except CycleError:
        raise
    except ValueError as exc:
        raise DagFormatError(str(exc)) from exc


def serialize_dag(dag: WeightedDag) -> str:
    """Canonical text form: header, weights in node order, sorted edges."""
    lines = [f"{dag.node_count} {len(dag.edges)}"]
    for v in range(dag.node_count):
        lines.append(f"{dag.omega(v)} {dag.mu(v)}")
    for u, v in dag.edges:
        lines.append(f"{u} {v}")
    return "\n".join(lines) + "\n"


def min_feasible_cache(dag: WeightedDag) -> int:
    """Smallest cache capacity admitting any valid schedule.

    This is the largest combined footprint of a node and its parents;
    for an edgeless DAG it degrades to the largest source weight.
    """
    best = 0
    saw_non_source = False
    for v in range(dag.node_count):
        par = dag.parents[v]
        if not par:
            continue
        saw_non_source = True
        best = max(best, dag.mu(v) + sum(dag.mu(u) for u in par))
    if not saw_non_source:
        return max(dag.mu(v) for v in range(dag.node_count))
    return best


def assign_random_memory_weights(dag: WeightedDag, seed: int) -> WeightedDag:
    """Replace every memory weight with an i.i.d. uniform draw from 1..5."""
    rng = random.Random(seed)
    mu = tuple(rng.randint(1, 5) for _ in range(dag.node_count))
    return WeightedDag(dag.compute_weight, mu, dag.edges)


def quotient_graph(dag: WeightedDag, partition: dict[int, int]) -> WeightedDag:
    """Contract each part to one node, summing weights; edges deduplicated.

    Part ids are renumbered densely in first-appearance order over node
    indices. Raises CycleError if the induced quotient is cyclic.
    """
    if set(partition) != set(range(dag.node_count)):
        raise ValueError("partition must cover exactly the node set")
    remap: dict[int, int] = {}
    for v in range(dag.node_count):
        remap.setdefault(partition[v], len(remap))
    k = len(remap)
    omega = [0] * k
    mu = [0] * k
    for v in range(dag.node_count):
        p = remap[partition[v]]
        omega[p] += dag.omega(v)
        mu[p] += dag.mu(v)
    qedges = set()
    for u, v in dag.edges:
        pu, pv = remap[partition[u]], remap[partition[v]]
        if pu != pv:
            qedges.add((pu, pv))
    return WeightedDag(tuple(omega), tuple(mu), tuple(sorted(qedges)))


def random_dag(
    n: int,
    seed: int,
    edge_prob: float = 0.25,
    omega_range: tuple[int, int] = (1, 5),
    mu_range: tuple[int, int] = (1, 5),
) -> WeightedDag:
    """Random DAG in index order (every edge goes from lower to higher index)."""
    rng = random.Random(seed)
    edges = [
        (u, v)
        for u in range(n)
        for v in range(u + 1, n)
        if rng.random() < edge_prob
    ]
    omega = tuple(rng.randint(*omega_range) for _ in range(n))
    mu = tuple(rng.randint(*mu_range) for _ in range(n))
    return WeightedDag(omega, mu, tuple(edges))


def scaled_cache(r_mult: float, r0: int) -> int:
    """Cache size for a capacity multiplier; non-integer products round up."""
    return math.ceil(r_mult * r0)
