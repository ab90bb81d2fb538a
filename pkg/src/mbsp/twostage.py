"""Two-stage baseline: memory-oblivious scheduling, conversion into
cache-feasible superstep skeletons, and cache policies that fill in the
save/delete/load traffic.

Sources are load-only: the first stage assigns processors and supersteps
to non-source nodes, and source values are fetched from slow memory by
whoever needs them. Saves are emitted eagerly in the superstep where a
value is computed whenever another processor, a sink requirement, or a
later reload on the same processor needs it.
"""

from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass

from .dag import Architecture, WeightedDag, min_feasible_cache, topological_order
from .errors import InfeasibleError
from .schedule import Kind, MbspSchedule, ProcessorSuperstep, Transition


@dataclass(frozen=True)
class BspSchedule:
    """Processor and superstep per computed (non-source) node; -1 for sources."""

    processors: int
    proc: tuple[int, ...]
    step: tuple[int, ...]

    def is_precedence_feasible(self, dag: WeightedDag) -> bool:
        for v in range(dag.node_count):
            if v in dag.sources:
                continue
            if not (0 <= self.proc[v] < self.processors) or self.step[v] < 0:
                return False
            for u in dag.parents[v]:
                if u in dag.sources:
                    continue
                if self.step[u] > self.step[v]:
                    return False
                if self.step[u] == self.step[v] and self.proc[u] != self.proc[v]:
                    return False
        return True

    def superstep_count(self) -> int:
        steps = [s for s in self.step if s >= 0]
        return max(steps) + 1 if steps else 0

    def to_csv(self) -> str:
        lines = ["node,processor,superstep"]
        for v in range(len(self.proc)):
            if self.proc[v] >= 0:
                lines.append(f"{v},{self.proc[v]},{self.step[v]}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ComputeSkeleton:
    """supersteps[s][p] is the ordered tuple of nodes processor p computes
    in superstep s; save/delete/load phases are still open."""

    processors: int
    supersteps: tuple[tuple[tuple[int, ...], ...], ...]

    def computed_on(self, p: int):
        for s, step in enumerate(self.supersteps):
            for j, v in enumerate(step[p]):
                yield s, j, v


def _compact_steps(step: list[int]) -> list[int]:
    used = sorted({s for s in step if s >= 0})
    remap = {s: i for i, s in enumerate(used)}
    return [remap[s] if s >= 0 else -1 for s in step]


def greedy_bsp_schedule(
    dag: WeightedDag, arch: Architecture, imbalance: float = 1.3
) -> BspSchedule:
    """Greedy list scheduler with communication affinity.

    Ready nodes are placed on the processor already holding the most of
    their computed parents, breaking ties toward the least-loaded and
    then lowest-index processor. A node whose parent was computed in the
    current superstep is pinned to that parent's processor. A new
    superstep opens when no ready node can be placed: free nodes may
    only go on a least-loaded processor or one within the imbalance
    factor of the minimum load, and pinned nodes conflict when parents
    sit on two processors in the current superstep.
    """
    P = arch.processors
    n = dag.node_count
    proc = [-1] * n
    step = [-1] * n
    pending = {
        v: sum(1 for u in dag.parents[v] if u not in dag.sources)
        for v in range(n)
        if v not in dag.sources
    }
    ready = sorted(v for v, c in pending.items() if c == 0)
    remaining = len(pending)
    cur = 0
    load = [0] * P
    in_cur: set[int] = set()

    def try_place(v) -> bool:
        cur_parents = {
            proc[u]
            for u in dag.parents[v]
            if u not in dag.sources and u in in_cur
        }
        if len(cur_parents) > 1:
            return False  # parents split across processors in this superstep
        if cur_parents:
            best = next(iter(cur_parents))
        else:
            minload = min(load)
            allowed = [
                p
                for p in range(P)
                if load[p] == minload or load[p] + dag.omega(v) <= imbalance * minload
            ]
            if not allowed:
                return False

            def held(p):
                return sum(
                    1 for u in dag.parents[v] if u not in dag.sources and proc[u] == p
                )

            best = min(allowed, key=lambda p: (-held(p), load[p], p))
        proc[v] = best
        step[v] = cur
        load[best] += dag.omega(v)
        in_cur.add(v)
        ready.remove(v)
        for c in dag.children[v]:
            pending[c] -= 1
            if pending[c] == 0:
                ready.append(c)
        ready.sort()
        return True

    while remaining > 0:
        placed = False
        for v in list(ready):
            if try_place(v):
                placed = True
                remaining -= 1
                break
        if not placed:
            cur += 1
            load = [0] * P
            in_cur = set()
    return BspSchedule(P, tuple(proc), tuple(_compact_steps(step)))


def work_stealing_schedule(
    dag: WeightedDag, arch: Architecture, seed: int = 0
) -> BspSchedule:
    """Deque-based work-stealing simulation discretized into supersteps.

    Owners pop their newest local task, idle workers steal the oldest
    task from victims in a seeded round-robin order, and completed nodes
    push their newly-ready children locally. Superstep indices advance
    exactly at cross-processor dependencies.
    """
    import collections

    P = arch.processors
    n = dag.node_count
    rng = random.Random(seed)
    victim_order = {
        w: rng.sample([x for x in range(P) if x != w], k=P - 1) if P > 1 else []
        for w in range(P)
    }
    pending = {
        v: sum(1 for u in dag.parents[v] if u not in dag.sources)
        for v in range(n)
        if v not in dag.sources
    }
    deques = {w: collections.deque() for w in range(P)}
    for v in sorted(v for v, c in pending.items() if c == 0):
        deques[0].append(v)

    time = [0] * P
    running: dict[int, tuple[int, int]] = {}  # worker -> (node, finish time)
    done_order: list[tuple[int, int]] = []  # (node, worker) in completion order
    remaining = len(pending)

    def grab(w):
        if deques[w]:
            return deques[w].pop()
        for u in victim_order[w]:
            if deques[u]:
                return deques[u].popleft()
        return None

    while remaining > 0:
        for w in range(P):
            if w in running:
                continue
            v = grab(w)
            if v is not None:
                running[w] = (v, max(time[w], 0) + dag.omega(v))
        if not running:
            break  # no runnable work: defensive, cannot happen on a DAG
        w = min(running, key=lambda x: (running[x][1], x))
        v, t = running.pop(w)
        time[w] = t
        done_order.append((v, w))
        remaining -= 1
        for c in sorted(dag.children[v]):
            if c in pending:
                pending[c] -= 1
                if pending[c] == 0:
                    deques[w].append(c)

    proc = [-1] * n
    step = [-1] * n
    last_step = [0] * P
    for v, w in done_order:
        s = last_step[w]
        for u in dag.parents[v]:
            if u in dag.sources:
                continue
            s = max(s, step[u] + (1 if proc[u] != w else 0))
        proc[v] = w
        step[v] = s
        last_step[w] = s
    return BspSchedule(P, tuple(proc), tuple(_compact_steps(step)))


def dfs_schedule(dag: WeightedDag) -> BspSchedule:
    """Single processor, single superstep; depth-first order that computes
    a node at its first visit with all parents already computed."""
    n = dag.node_count
    done = set(dag.sources)
    order = []

    def visit(u):
        for c in dag.children[u]:
            if c not in done and all(x in done for x in dag.parents[c]):
                done.add(c)
                order.append(c)
                visit(c)

    import sys

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 2 * n + 100))
    try:
        for s in sorted(dag.sources):
            visit(s)
    finally:
        sys.setrecursionlimit(old)

    proc = [-1] * n
    step = [-1] * n
    for v in order:
        proc[v] = 0
        step[v] = 0
    return BspSchedule(1, tuple(proc), tuple(step))


def _must_save_static(dag: WeightedDag, bsp: BspSchedule) -> set[int]:
    """Computed values that certainly need a blue pebble: sinks, and values
    with a child computed on a different processor."""
    out = set()
    for v in range(dag.node_count):
        if v in dag.sources:
            continue
        if not dag.children[v]:
            out.add(v)
            continue
        if any(bsp.proc[c] != bsp.proc[v] for c in dag.children[v]):
            out.add(v)
    return out


class _SegmentModel:
    """Shared liveness model for segment feasibility and the cache policies.

    During a compute segment no I/O is possible, so a cached value may
    only be dropped once it has no remaining in-segment use and either
    it is (or will be by then) re-loadable from slow memory, or it is
    never needed again on this processor.
    """

    def __init__(self, dag, bsp, must_save):
        self.dag = dag
        self.bsp = bsp
        self.must_save = must_save

    def reloadable(self, x) -> bool:
        return x in self.dag.sources or x in self.must_save

    def segment_peak(self, p, seg, later_uses) -> int:
        """Maximum resident memory while executing `seg` with all external
        inputs preloaded. later_uses(x) tells whether x is used as an
        input by computes on p after this segment."""
        dag = self.dag
        seg_set = set(seg)
        ext = set()
        for c in seg:
            ext.update(u for u in dag.parents[c] if u not in seg_set)
        last_use = {}
        for j, c in enumerate(seg):
            for u in dag.parents[c]:
                last_use[u] = j

        def droppable_after(x, j):
            if last_use.get(x, -1) > j:
                return False
            if x in seg_set and j < len(seg) and x not in ext:
                # computed in-segment: must survive to the save phase if it
                # needs saving, and to the superstep end if used later here
                return not (x in self.must_save or later_uses(x))
            return self.reloadable(x) or not later_uses(x)

        live = set(ext)
        peak = sum(dag.mu(x) for x in live)
        for j, c in enumerate(seg):
            live.add(c)
            peak = max(peak, sum(dag.mu(x) for x in live))
            live = {x for x in live if not droppable_after(x, j)}
        return peak


def split_into_mbsp_supersteps(
    dag: WeightedDag, arch: Architecture, bsp: BspSchedule
) -> ComputeSkeleton:
    """Cut each processor's per-superstep compute sequence into maximal
    segments executable without intermediate I/O, assuming all external
    inputs are loaded up front and eviction is as permissive as the
    liveness model allows."""
    r0 = min_feasible_cache(dag)
    if arch.cache_capacity < r0:
        raise InfeasibleError(
            f"cache capacity {arch.cache_capacity} below the minimum {r0}"
        )
    P = bsp.processors
    must_save = _must_save_static(dag, bsp)
    model = _SegmentModel(dag, bsp, must_save)
    topo_pos = {v: i for i, v in enumerate(topological_order(dag))}

    per_block: list[list[list[int]]] = [
        [[] for _ in range(P)] for _ in range(bsp.superstep_count())
    ]
    for v in range(dag.node_count):
        if bsp.proc[v] >= 0:
            per_block[bsp.step[v]][bsp.proc[v]].append(v)
    for block in per_block:
        for seq in block:
            seq.sort(key=lambda v: topo_pos[v])

    # uses_after[p][v]: sorted global positions at which v feeds a compute on p
    pos_counter = [0] * P
    global_pos: dict[tuple[int, int], int] = {}
    for b, block in enumerate(per_block):
        for p in range(P):
            for v in block[p]:
                global_pos[(p, v)] = pos_counter[p]
                pos_counter[p] += 1
    uses_on: list[dict[int, list[int]]] = [dict() for _ in range(P)]
    for b, block in enumerate(per_block):
        for p in range(P):
            for v in block[p]:
                for u in dag.parents[v]:
                    uses_on[p].setdefault(u, []).append(global_pos[(p, v)])

    supersteps: list[list[tuple[int, ...]]] = []
    for block in per_block:
        segments: list[list[list[int]]] = [[] for _ in range(P)]
        for p in range(P):
            seq = block[p]
            i = 0
            while i < len(seq):
                seg = [seq[i]]
                end_pos = global_pos[(p, seq[i])]

                def later(x, _p=p):
                    us = uses_on[_p].get(x, ())
                    return bisect_right(us, end_pos) < len(us)

                peak = model.segment_peak(p, seg, later)
                if peak > arch.cache_capacity:
                    raise InfeasibleError(
                        f"node {seq[i]} footprint {peak} exceeds cache {arch.cache_capacity}"
                    )
                j = i + 1
                while j < len(seq):
                    cand = seg + [seq[j]]
                    end_pos = global_pos[(p, seq[j])]
                    if model.segment_peak(p, cand, later) > arch.cache_capacity:
                        break
                    seg = cand
                    j += 1
                segments[p].append(seg)
                i = j
        width = max((len(s) for s in segments), default=0)
        for k in range(width):
            supersteps.append(
                [tuple(segments[p][k]) if k < len(segments[p]) else () for p in range(P)]
            )
    return ComputeSkeleton(P, tuple(tuple(s) for s in supersteps))


def _policy_fill(dag, arch, skeleton, choose_victims):
    """Common mechanics for the cache policies.

    Output superstep i+1 computes skeleton superstep i; superstep i's
    load phase fetches the missing inputs for it. choose_victims orders
    eviction candidates (most evictable first).
    """
    P = skeleton.processors
    m = len(skeleton.supersteps)
    if m == 0:
        return MbspSchedule(P, ())
    bsp_proc = [-1] * dag.node_count
    bsp_step = [-1] * dag.node_count
    for s, step in enumerate(skeleton.supersteps):
        for p in range(P):
            for v in step[p]:
                bsp_proc[v] = p
                bsp_step[v] = s
    bsp = BspSchedule(P, tuple(bsp_proc), tuple(bsp_step))
    must_save = _must_save_static(dag, bsp)
    model = _SegmentModel(dag, bsp, must_save)

    # next_use[p][v]: sorted superstep indices where v feeds a compute on p
    next_use: list[dict[int, list[int]]] = [dict() for _ in range(P)]
    for s, step in enumerate(skeleton.supersteps):
        for p in range(P):
            for v in step[p]:
                for u in dag.parents[v]:
                    next_use[p].setdefault(u, []).append(s)

    def future_use(p, v, after_s):
        us = next_use[p].get(v, ())
        i = bisect_right(us, after_s)
        return us[i] if i < len(us) else None

    cache: list[set[int]] = [set() for _ in range(P)]
    blue = set(dag.sources)
    pending_save: list[set[int]] = [set() for _ in range(P)]
    activity: list[dict[int, int]] = [dict() for _ in range(P)]
    clock = [0] * P

    def touch(p, v):
        clock[p] += 1
        activity[p][v] = clock[p]

    out_steps = []
    for i in range(m + 1):
        phases: list[dict[str, list[Transition]]] = [
            {"comp": [], "save": [], "del": [], "load": []} for _ in range(P)
        ]
        # ---- compute phase: skeleton superstep i-1
        if i >= 1:
            s = i - 1
            for p in range(P):
                seg = skeleton.supersteps[s][p]
                seg_parents = [set(dag.parents[c]) for c in seg]
                for j, c in enumerate(seg):
                    still_needed = set().union(*seg_parents[j:]) if j < len(seg) else set()
                    # make room for the result
                    room = arch.cache_capacity - sum(dag.mu(x) for x in cache[p]) - dag.mu(c)
                    if room < 0:
                        evictable = [
                            x
                            for x in cache[p]
                            if x not in still_needed
                            and x not in pending_save[p]
                            and (x in blue or future_use(p, x, s) is None)
                        ]
                        for x in choose_victims(p, evictable, s, future_use, activity):
                            if room >= 0:
                                break
                            phases[p]["comp"].append(Transition(Kind.DELETE, p, x))
                            cache[p].discard(x)
                            room += dag.mu(x)
                        if room < 0:
                            raise InfeasibleError(
                                f"cannot fit node {c} on processor {p} in superstep {s}"
                            )
                    assert set(dag.parents[c]) <= cache[p], "segment invariant broken"
                    phases[p]["comp"].append(Transition(Kind.COMPUTE, p, c))
                    cache[p].add(c)
                    touch(p, c)
                    for u in dag.parents[c]:
                        touch(p, u)
                    if c in must_save:
                        pending_save[p].add(c)
                    # immediate eviction of values never needed again here
                    needed_rest = (
                        set().union(*seg_parents[j + 1 :]) if j + 1 < len(seg) else set()
                    )
                    for x in sorted(cache[p]):
                        if (
                            x not in pending_save[p]
                            and future_use(p, x, s) is None
                            and x not in needed_rest
                        ):
                            phases[p]["comp"].append(Transition(Kind.DELETE, p, x))
                            cache[p].discard(x)

        # ---- plan loads for skeleton superstep i (if any)
        needed = [set() for _ in range(P)]
        seg_peak = [0] * P
        if i < m:
            for p in range(P):
                seg = list(skeleton.supersteps[i][p])
                seg_set = set(seg)
                for c in seg:
                    needed[p].update(u for u in dag.parents[c] if u not in seg_set)
                if seg:

                    def later(x, _p=p, _s=i):
                        return future_use(_p, x, _s) is not None

                    seg_peak[p] = model.segment_peak(p, seg, later)

        # ---- decide victims, then emit save / del / load phases
        cur_s = i - 1
        for p in range(P):
            missing = sorted(needed[p] - cache[p])
            victims = []

            def kept_blocking():
                # non-droppable extras: non-blue values needed later but not
                # by the upcoming segment's external inputs
                return sum(
                    dag.mu(x)
                    for x in cache[p]
                    if x not in needed[p]
                    and x not in blue
                    and x not in pending_save[p]
                    and future_use(p, x, cur_s) is not None
                )

            def overfull():
                total = sum(dag.mu(x) for x in cache[p]) + sum(dag.mu(x) for x in missing)
                if total > arch.cache_capacity:
                    return True
                return kept_blocking() + seg_peak[p] > arch.cache_capacity

            candidates = [x for x in cache[p] if x not in needed[p]]
            ordered = choose_victims(p, candidates, cur_s, future_use, activity)
            k = 0
            while overfull():
                if k >= len(ordered):
                    raise InfeasibleError(
                        f"cannot make room for superstep {i} loads on processor {p}"
                    )
                x = ordered[k]
                k += 1
                victims.append(x)
                cache[p].discard(x)

            # dead values are always dropped
            for x in sorted(cache[p]):
                if (
                    x not in pending_save[p]
                    and x not in needed[p]
                    and future_use(p, x, cur_s) is None
                ):
                    victims.append(x)
                    cache[p].discard(x)

            saves = set(pending_save[p])
            for x in victims:
                if x not in blue and future_use(p, x, cur_s) is not None:
                    saves.add(x)
            saves -= blue
            for x in sorted(saves):
                phases[p]["save"].append(Transition(Kind.SAVE, p, x))
            pending_save[p].clear()
            for x in sorted(victims):
                phases[p]["del"].append(Transition(Kind.DELETE, p, x))
            for x in missing:
                phases[p]["load"].append(Transition(Kind.LOAD, p, x))
                cache[p].add(x)
                touch(p, x)
        for p in range(P):
            blue.update(t.node for t in phases[p]["save"])

        out_steps.append(
            tuple(
                ProcessorSuperstep(
                    tuple(phases[p]["comp"]),
                    tuple(phases[p]["save"]),
                    tuple(phases[p]["del"]),
                    tuple(phases[p]["load"]),
                )
                for p in range(P)
            )
        )
    return MbspSchedule(P, tuple(out_steps))


def clairvoyant_policy(dag, arch, skeleton) -> MbspSchedule:
    """Evict the value whose next use on this processor is farthest away
    (ties: lower node index); values never needed again go first."""

    def victims(p, candidates, s, future_use, activity):
        def key(x):
            nxt = future_use(p, x, s)
            return (-(10**9) if nxt is None else -nxt, x)

        return sorted(candidates, key=key)

    return _policy_fill(dag, arch, skeleton, victims)


def lru_policy(dag, arch, skeleton) -> MbspSchedule:
    """Evict the least-recently-active value (computed, used as an input,
    or loaded); ties: lower node index."""

    def victims(p, candidates, s, future_use, activity):
        return sorted(candidates, key=lambda x: (activity[p].get(x, 0), x))

    return _policy_fill(dag, arch, skeleton, victims)


def io_cost(dag: WeightedDag, arch: Architecture, schedule: MbspSchedule) -> int:
    """Total save+load cost across the schedule (policy comparison metric)."""
    total = 0
    for step in schedule.supersteps:
        for ps in step:
            for t in ps.save_phase + ps.load_phase:
                total += arch.comm_cost * dag.mu(t.node)
    return total
