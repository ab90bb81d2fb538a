"""Adversarial DAG families and their handcrafted schedules.

Four families: the hub/chain "zipper" separating the two-stage baseline
from the holistic optimum, two constructions separating synchronous
from asynchronous optima, and a chain-recomputation instance whose
optimal cost drops when the step horizon grows past an empty step.

All generators produce exact integer weights; the "unbounded cache"
families encode infinity as the total memory weight, and artificial
sources that all processors need are given memory weight zero so their
distribution is free in exact arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .dag import Architecture, WeightedDag
from .errors import MbspError
from .schedule import Kind, MbspSchedule, build_schedule


@dataclass(frozen=True)
class GadgetSpec:
    family: str
    params: dict

    FAMILIES = ("zipper", "async_gap", "sync_gap", "empty_step")


def parse_gadget_spec(text: str) -> GadgetSpec:
    """Parse CLI specifiers like ``gadget:zipper:d=4,m=21``."""
    m = re.fullmatch(r"gadget:([a-z_]+)(?::(.*))?", text.strip())
    if not m:
        raise MbspError(f"not a gadget specifier: {text!r}")
    family = m.group(1)
    if family not in GadgetSpec.FAMILIES:
        raise MbspError(f"unknown gadget family {family!r}")
    params = {}
    if m.group(2):
        for item in m.group(2).split(","):
            k, _, v = item.partition("=")
            if not _:
                raise MbspError(f"malformed gadget parameter {item!r}")
            params[k.strip()] = int(v)
    return GadgetSpec(family, params)


def gadget_dag(spec: GadgetSpec) -> WeightedDag:
    if spec.family == "zipper":
        return zipper_dag(**spec.params)
    if spec.family == "async_gap":
        return async_gap_dag(**spec.params)[0]
    if spec.family == "sync_gap":
        return sync_gap_dag(**spec.params)[0]
    if spec.family == "empty_step":
        return empty_step_dag(**spec.params)
    raise MbspError(f"unknown gadget family {spec.family!r}")


# ---------------------------------------------------------------- zipper

def zipper_nodes(d: int, m: int):
    """Index layout: hubs H1 = 0..d-1, H2 = d..2d-1, chain v = 2d..2d+m-1,
    chain u = 2d+m..2d+2m-1. Chain positions are 1-based in formulas."""
    h1 = list(range(d))
    h2 = list(range(d, 2 * d))
    v = list(range(2 * d, 2 * d + m))
    u = list(range(2 * d + m, 2 * d + 2 * m))
    return h1, h2, v, u


def zipper_dag(d: int, m: int, extra_components: int = 0) -> WeightedDag:
    """Two hub groups of d sources feeding two m-chains in alternation.

    Chain node at odd position i takes the whole of H1 into chain u and
    H2 into chain v; even positions swap the hub groups. All weights are
    one. extra_components appends independent (d sources + m-chain,
    fully connected) blocks, one per additional processor beyond two.
    """
    if d < 2 or m < 2:
        raise ValueError("zipper needs d >= 2 and m >= 2")
    h1, h2, v, u = zipper_nodes(d, m)
    edges = []
    for i in range(m - 1):
        edges.append((v[i], v[i + 1]))
        edges.append((u[i], u[i + 1]))
    for i in range(1, m + 1):  # 1-based chain position
        hub_u, hub_v = (h1, h2) if i % 2 == 1 else (h2, h1)
        for h in hub_u:
            edges.append((h, u[i - 1]))
        for h in hub_v:
            edges.append((h, v[i - 1]))
    n = 2 * d + 2 * m
    for _ in range(extra_components):
        srcs = list(range(n, n + d))
        chain = list(range(n + d, n + d + m))
        for i in range(m - 1):
            edges.append((chain[i], chain[i + 1]))
        for s in srcs:
            for c in chain:
                edges.append((s, c))
        n += d + m
    return WeightedDag((1,) * n, (1,) * n, tuple(sorted(edges)))


def _zipper_check(d, m, arch):
    if arch.processors != 2:
        raise ValueError("zipper schedules are defined for P = 2")
    if arch.cache_capacity != d + 2:
        raise ValueError("zipper schedules require r = d + 2")
    if arch.comm_cost < 1:
        raise ValueError("zipper schedules require g >= 1")


def zipper_two_stage_schedule(d: int, m: int, arch: Architecture) -> MbspSchedule:
    """Chain-per-processor assignment: every superstep reloads the d hub
    parents of the next chain node on both processors."""
    _zipper_check(d, m, arch)
    h1, h2, v, u = zipper_nodes(d, m)
    C, S, D, L = Kind.COMPUTE, Kind.SAVE, Kind.DELETE, Kind.LOAD

    def hubs(chain, pos):  # 1-based position
        if chain == "v":
            return h2 if pos % 2 == 1 else h1
        return h1 if pos % 2 == 1 else h2

    steps = []
    # superstep 0: preload the first chain node's hubs
    steps.append({
        0: {"load": [(L, h) for h in hubs("v", 1)]},
        1: {"load": [(L, h) for h in hubs("u", 1)]},
    })
    for i in range(1, m + 1):
        step = {}
        for p, chain, nodes in ((0, "v", v), (1, "u", u)):
            comp = [(C, nodes[i - 1])]
            if i >= 2:
                comp.append((D, nodes[i - 2]))
            entry = {"comp": comp}
            if i < m:
                # evict this position's hubs, fetch the next position's
                entry["del"] = [(D, h) for h in hubs(chain, i)]
                entry["load"] = [(L, h) for h in hubs(chain, i + 1)]
            else:
                entry["save"] = [(S, nodes[m - 1])]
            step[p] = entry
        steps.append(step)
    return build_schedule(2, steps)


def zipper_optimal_schedule(d: int, m: int, arch: Architecture) -> MbspSchedule:
    """Hub-parity assignment: processor 0 keeps H1 cached and computes its
    children, processor 1 keeps H2; the frontier chain values are
    exchanged through slow memory, two transfers per chain node."""
    _zipper_check(d, m, arch)
    h1, h2, v, u = zipper_nodes(d, m)
    C, S, D, L = Kind.COMPUTE, Kind.SAVE, Kind.DELETE, Kind.LOAD

    def owner(chain, pos):
        """Processor computing this node: children of H1 on p0, of H2 on p1."""
        if chain == "u":
            return 0 if pos % 2 == 1 else 1
        return 1 if pos % 2 == 1 else 0

    steps = [{
        0: {"load": [(L, h) for h in h1]},
        1: {"load": [(L, h) for h in h2]},
    }]
    for i in range(1, m + 1):
        step = {0: {"comp": [], "save": [], "del": [], "load": []},
                1: {"comp": [], "save": [], "del": [], "load": []}}
        for chain, nodes, other_nodes in (("v", v, u), ("u", u, v)):
            p = owner(chain, i)
            entry = step[p]
            if i >= 2:
                # this processor's previous compute was the other chain's
                # node at position i-1; it is published and consumed by now
                entry["comp"].append((D, other_nodes[i - 2]))
            entry["comp"].append((C, nodes[i - 1]))
            if i >= 2:
                # the same-chain predecessor loaded last superstep
                entry["comp"].append((D, nodes[i - 2]))
            entry["save"].append((S, nodes[i - 1]))
            if i < m:
                step[owner(chain, i + 1)]["load"].append((L, nodes[i - 1]))
        steps.append(step)
    return build_schedule(2, steps)


# ---------------------------------------------------------- async gap (P/2)

def async_gap_dag(P: int, Z: int):
    """Paired-processor construction whose asynchronous optimum misaligns
    heavy supersteps. Returns (dag, (diagonal schedule, aligned schedule)).

    For each pair i of processors there are chain layers (x[i][j], y[i][j]),
    j = 1..P/2, fully connected layer to layer, with compute weight Z on
    layer j = i and 1 elsewhere. A zero-memory source s feeds layer 1.
    """
    if P < 4 or P % 2 != 0:
        raise ValueError("async_gap needs an even P >= 4")
    if Z < 2:
        raise ValueError("async_gap needs Z >= 2")
    half = P // 2
    s = 0
    idx = 1
    x = [[0] * (half + 1) for _ in range(half + 1)]
    y = [[0] * (half + 1) for _ in range(half + 1)]
    for i in range(1, half + 1):
        for j in range(1, half + 1):
            x[i][j] = idx
            y[i][j] = idx + 1
            idx += 2
    n = idx
    omega = [0] * n
    mu = [1] * n
    mu[s] = 0
    edges = []
    for i in range(1, half + 1):
        edges.append((s, x[i][1]))
        edges.append((s, y[i][1]))
        for j in range(1, half + 1):
            w = Z if i == j else 1
            omega[x[i][j]] = w
            omega[y[i][j]] = w
            if j < half:
                for a in (x[i][j], y[i][j]):
                    for b in (x[i][j + 1], y[i][j + 1]):
                        edges.append((a, b))
    dag = WeightedDag(tuple(omega), tuple(mu), tuple(sorted(edges)))

    C, S, L = Kind.COMPUTE, Kind.SAVE, Kind.LOAD

    def exchange_entry(mine, other, j):
        """Superstep body at layer j: compute own node, publish it (layer
        half nodes are sinks and need a blue pebble), fetch the partner's
        node when a next layer exists. Cache is unbounded, so nothing is
        ever deleted."""
        entry = {"comp": [(C, mine[j])], "save": [(S, mine[j])]}
        if j < half:
            entry["load"] = [(L, other[j])]
        return entry

    def build(step_of):
        """step_of(i, j) gives the superstep index of layer j in pair i."""
        width = max(step_of(i, j) for i in range(1, half + 1) for j in range(1, half + 1))
        steps = [dict() for _ in range(width + 1)]
        steps[0] = {p: {"load": [(L, s)]} for p in range(P)}
        for i in range(1, half + 1):
            for j in range(1, half + 1):
                st = step_of(i, j)
                for p, mine, other in ((i - 1, x[i], y[i]), (half + i - 1, y[i], x[i])):
                    steps[st][p] = exchange_entry(mine, other, j)
        return build_schedule(P, steps)

    diagonal = build(lambda i, j: j)
    aligned = build(lambda i, j: half + j - i + 1)
    return dag, (diagonal, aligned)


def async_gap_arch(dag: WeightedDag, P: int, L: int = 0) -> Architecture:
    """Unbounded cache, free communication: r is the total memory weight."""
    return Architecture(P, sum(dag.memory_weight), 0, L)


# ----------------------------------------------------------- sync gap (4/3)

def sync_gap_dag(Z: int):
    """Five-processor construction where aligning the two heavy nodes in one
    superstep is synchronous-optimal but asynchronous-suboptimal.

    Returns (dag, (sync_optimal schedule, alternative schedule)) with
    exact costs 4Z-2 (async-evaluated as well) and 3Z-1 (async).
    """
    if Z < 2:
        raise ValueError("sync_gap needs Z >= 2")
    s = 0
    u1, u2, u3, u4 = 1, 2, 3, 4
    v1, v2, v3, v4 = 5, 6, 7, 8
    w = 9
    omega = [0, Z - 1, Z - 1, 2 * Z, 2 * Z, 2 * Z, Z - 1, Z - 1, Z - 1, Z - 1]
    mu = [0, 1, 1, 1, 1, 1, 1, 1, 1, 1]
    edges = [
        (s, u1), (s, u2), (s, v1), (s, w),
        (u1, u3), (u1, u4), (u2, u3), (u2, u4),
        (v1, v2), (v1, v3), (v1, v4),
    ]
    dag = WeightedDag(tuple(omega), tuple(mu), tuple(sorted(edges)))
    C, S, L = Kind.COMPUTE, Kind.SAVE, Kind.LOAD

    load_s = {p: {"load": [(L, s)]} for p in (0, 1, 2, 3)}

    # Three compute rounds; the heavy nodes u3, u4 and v1 share the middle
    # one, so only one superstep costs 2Z. Processor 2 runs w then v1 then
    # v2, which serializes to 4Z-2 in the asynchronous reading as well.
    sync_optimal = build_schedule(5, [
        load_s,
        {
            0: {"comp": [(C, u1)], "save": [(S, u1)], "load": [(L, u2)]},
            1: {"comp": [(C, u2)], "save": [(S, u2)], "load": [(L, u1)]},
            2: {"comp": [(C, w)], "save": [(S, w)]},
        },
        {
            0: {"comp": [(C, u3)], "save": [(S, u3)]},
            1: {"comp": [(C, u4)], "save": [(S, u4)]},
            2: {"comp": [(C, v1)], "save": [(S, v1)]},
            3: {"load": [(L, v1)]},
            4: {"load": [(L, v1)]},
        },
        {
            2: {"comp": [(C, v2)], "save": [(S, v2)]},
            3: {"comp": [(C, v3)], "save": [(S, v3)]},
            4: {"comp": [(C, v4)], "save": [(S, v4)]},
        },
    ])
    # Two compute rounds: v1 and w both land in the first, putting a 2Z node
    # in each round (synchronous cost 4Z) but letting every processor finish
    # by 3Z-1 asynchronously.
    alternative = build_schedule(5, [
        load_s,
        {
            0: {"comp": [(C, u1)], "save": [(S, u1)], "load": [(L, u2)]},
            1: {"comp": [(C, u2)], "save": [(S, u2)], "load": [(L, u1)]},
            2: {"comp": [(C, v1)], "save": [(S, v1)]},
            3: {"comp": [(C, w)], "save": [(S, w)], "load": [(L, v1)]},
            4: {"load": [(L, v1)]},
        },
        {
            0: {"comp": [(C, u3)], "save": [(S, u3)]},
            1: {"comp": [(C, u4)], "save": [(S, u4)]},
            2: {"comp": [(C, v2)], "save": [(S, v2)]},
            3: {"comp": [(C, v3)], "save": [(S, v3)]},
            4: {"comp": [(C, v4)], "save": [(S, v4)]},
        },
    ])
    return dag, (sync_optimal, alternative)


def sync_gap_arch(dag: WeightedDag, L: int = 0) -> Architecture:
    return Architecture(5, sum(dag.memory_weight), 0, L)


# ------------------------------------------------------ empty-step anomaly

def empty_step_dag(d: int, m: int) -> WeightedDag:
    """Two feeder chains of length d, an alternating consumer chain of
    length m+1, and one source feeding every node; unit weights, meant
    for a cache of four units.

    Reloading a feeder chain head can be replaced by recomputing the
    whole feeder (d compute steps instead of one load), which pays off
    once the step budget allows d-1 extra steps and g >= d.
    """
    if d < 3 or m < 2:
        raise ValueError("empty_step needs d >= 3 and m >= 2")
    w = 0
    u = list(range(1, d + 1))
    up = list(range(d + 1, 2 * d + 1))
    v = list(range(2 * d + 1, 2 * d + 1 + m + 1))  # v[0] .. v[m]
    n = 2 * d + m + 2
    edges = []
    for i in range(d - 1):
        edges.append((u[i], u[i + 1]))
        edges.append((up[i], up[i + 1]))
    for i in range(m):
        edges.append((v[i], v[i + 1]))
    edges.append((u[d - 1], v[0]))
    edges.append((up[d - 1], v[0]))
    for i in range(1, m + 1):
        feeder = u[d - 1] if i % 2 == 1 else up[d - 1]
        edges.append((feeder, v[i]))
    for node in range(1, n):
        edges.append((w, node))
    return WeightedDag((1,) * n, (1,) * n, tuple(sorted(set(edges))))


def empty_step_baseline_cost(d: int, m: int, g: int) -> int:
    """Cheapest pebbling without recomputation: all computes once, plus
    load of the feeding source, two feeder saves, m-1 reloads, one sink save."""
    return (2 * d + m + 1) + (m + 3) * g


def empty_step_baseline_steps(d: int, m: int) -> int:
    """Non-delete transition count of that pebbling."""
    return 2 * m + 2 * d + 4
