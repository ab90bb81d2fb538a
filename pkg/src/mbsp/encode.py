"""Schedule <-> model-assignment translation for the MILP encodings.

A schedule is laid out on the time axis superstep by superstep: a run
of compute steps, then save steps, then load steps; deletes become red
pebble drops between consecutive steps. A superstep whose communication
part is empty still needs its synchronization charge and accumulator
reset, so a spurious phase-indicator step with no actions stands in as
its delimiter. The same layout drives horizon selection, warm starts
(whose objective must equal the schedule's evaluated cost exactly) and
decoding solver assignments back into schedules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cost import async_cost, sync_cost, transition_cost
from .dag import topological_order
from .errors import DecodeError, WarmStartError
from .ilp import IlpConfig, MilpModel
from .schedule import (
    Kind,
    MbspSchedule,
    ProcessorSuperstep,
    Transition,
    validate_schedule,
)


@dataclass
class _Step:
    tag: str  # "comp", "save", "load", "comm", "pad"
    ops: dict[int, list[Transition]] = field(default_factory=dict)
    drops: dict[int, set[int]] = field(default_factory=dict)  # applied after

    def add_op(self, p, t):
        self.ops.setdefault(p, []).append(t)

    def add_drop(self, p, v):
        self.drops.setdefault(p, set()).add(v)


def _comp_runs(ps, merged):
    """Split a comp phase into (drops_before, computes) runs plus trailing
    drops; unmerged runs hold a single compute."""
    runs = []
    drops: list[int] = []
    computes: list[int] = []

    def flush():
        nonlocal drops, computes
        if computes:
            runs.append((drops, computes))
            drops, computes = [], []

    for t in ps.comp_phase:
        if t.kind is Kind.DELETE:
            if computes:
                flush()
            drops.append(t.node)
        else:
            if computes and not merged:
                flush()
            computes.append(t.node)
    flush()
    return runs, drops  # trailing drops


def _step_layout(dag, arch, schedule: MbspSchedule, cfg: IlpConfig, initial_blue=None):
    """Lay the schedule out on ILP time steps.

    Returns the step list. Synchronous mode inserts spurious delimiter
    steps so every superstep contributes exactly one comp run and one
    comm run; asynchronous mode packs compactly and splits merged load
    batches whenever a value becomes available only after the batch
    would have to start.
    """
    P = schedule.processors
    sync = cfg.objective == "sync"
    steps: list[_Step] = []

    gamma = [0] * P
    avail: dict[int, int] = {}
    initially_blue = dag.sources if initial_blue is None else frozenset(initial_blue)

    def drop_at(index, p, nodes):
        """Attach drops after step `index`; a pad step is prepended when
        drops are needed before any step exists."""
        if not nodes:
            return 0
        if index < 0:
            steps.insert(0, _Step("pad"))
            index = 0
        for v in nodes:
            steps[index].add_drop(p, v)
        return 1 if index == 0 and steps[0].tag == "pad" else 0

    def drop_before_next(p, nodes):
        if not nodes:
            return
        if not steps:
            steps.append(_Step("pad"))
        for v in nodes:
            steps[-1].add_drop(p, v)

    for s, superstep in enumerate(schedule.supersteps):
        # ---- compute part
        runs_per_p = []
        trailing = []
        for p in range(P):
            runs, trail = _comp_runs(superstep[p], cfg.step_merging)
            runs_per_p.append(runs)
            trailing.append(trail)
        width = max((len(r) for r in runs_per_p), default=0)
        if width > 0:
            if not steps and any(r and r[0][0] for r in runs_per_p):
                steps.append(_Step("pad"))  # boundary for leading deletes
            base = len(steps)
            steps.extend(_Step("comp") for _ in range(width))
            for p in range(P):
                for k, (drops, computes) in enumerate(runs_per_p[p]):
                    # drops before run k apply at the preceding boundary
                    drop_at(base + k - 1, p, drops)
                    for v in computes:
                        steps[base + k].add_op(p, Transition(Kind.COMPUTE, p, v))
                        gamma[p] += dag.omega(v)
                if runs_per_p[p]:
                    last = base + len(runs_per_p[p]) - 1
                    drop_at(last, p, trailing[p])
                else:
                    drop_before_next(p, trailing[p])
        else:
            for p in range(P):
                drop_before_next(p, trailing[p])
            if sync and s > 0:
                steps.append(_Step("comp"))  # delimiter resets I/O accumulators

        # ---- save part: one step per batch; under the asynchronous
        # objective every save sits in its own step, because a batched
        # save only becomes available at the whole step's finishing time
        saves = [list(superstep[p].save_phase) for p in range(P)]
        if any(saves):
            batched = cfg.step_merging and sync
            depth = 1 if batched else max(len(sv) for sv in saves)
            for k in range(depth):
                st = _Step("comm" if cfg.step_merging else "save")
                steps.append(st)
                for p in range(P):
                    batch = saves[p] if batched else saves[p][k : k + 1]
                    for t in batch:
                        st.add_op(p, t)
                        gamma[p] += transition_cost(dag, arch, t)
                        prev = avail.get(t.node)
                        avail[t.node] = gamma[p] if prev is None else max(prev, gamma[p])

        # ---- delete part: drops right before the loads
        for p in range(P):
            drop_before_next(p, [t.node for t in superstep[p].del_phase])

        # ---- load part
        loads = [list(superstep[p].load_phase) for p in range(P)]
        if any(loads):
            groups: list[list[list[Transition]]] = [[] for _ in range(P)]
            for p in range(P):
                if not cfg.step_merging:
                    groups[p] = [[t] for t in loads[p]]
                    for t in loads[p]:
                        ready = 0 if t.node in initially_blue else avail[t.node]
                        gamma[p] = max(gamma[p], ready) + transition_cost(dag, arch, t)
                    continue
                cur: list[Transition] = []
                start = gamma[p]
                for t in loads[p]:
                    ready = 0 if t.node in initially_blue else avail[t.node]
                    if not sync and cur and ready > start:
                        groups[p].append(cur)
                        cur = []
                        start = gamma[p]
                    if not cur:
                        start = max(start, ready)
                    cur.append(t)
                    gamma[p] = max(gamma[p], ready) + transition_cost(dag, arch, t)
                if cur:
                    groups[p].append(cur)
            depth = max(len(gp) for gp in groups)
            for k in range(depth):
                st = _Step("comm" if cfg.step_merging else "load")
                steps.append(st)
                for p in range(P):
                    if k < len(groups[p]):
                        for t in groups[p][k]:
                            st.add_op(p, t)

        if sync and not any(saves) and not any(loads):
            # delimiter carrying this superstep's synchronization charge
            steps.append(_Step("comm" if cfg.step_merging else "save"))
    return steps


def choose_horizon(initial: MbspSchedule, cfg: IlpConfig, dag=None, arch=None, slack: int = 2) -> int:
    """Step count of the initial schedule's encoding, plus slack.

    Without the instance at hand, falls back to a conservative per-phase
    maximum count that any layout fits into.
    """
    if dag is not None and arch is not None:
        return max(1, len(_step_layout(dag, arch, initial, cfg)) + slack)
    total = 1  # possible leading pad
    for superstep in initial.supersteps:
        comp = max((len(ps.comp_phase) for ps in superstep), default=0)
        sv = max((len(ps.save_phase) for ps in superstep), default=0)
        ld = max((len(ps.load_phase) for ps in superstep), default=0)
        total += max(comp, 1) + max(sv + ld, 1)
    return total + slack


def warm_start(model: MilpModel, schedule: MbspSchedule) -> dict[str, int]:
    """Encode a valid schedule as a complete assignment of the model.

    The assignment satisfies every constraint (checked by exact
    substitution) and its objective equals the schedule's evaluated
    cost. Raises WarmStartError if the schedule does not fit the model
    horizon or exposes an encoding inconsistency (for instance a value
    saved more than once under the asynchronous objective, which the
    big-M availability bounds cannot represent).
    """
    meta = model.meta
    dag, arch, cfg = meta.dag, meta.arch, meta.cfg
    P, T = arch.processors, cfg.horizon
    report = validate_schedule(
        dag, arch, schedule,
        initial_red=meta.initial_red,
        initial_blue=meta.initial_blue,
        required_blue=meta.required_blue,
    )
    if not report.valid:
        raise WarmStartError(f"schedule invalid: {report.message}")
    steps = _step_layout(dag, arch, schedule, cfg, meta.initial_blue)
    if len(steps) > T:
        raise WarmStartError(
            f"schedule needs {len(steps)} steps but the horizon is {T}"
        )

    val: dict[str, int] = {v.name: 0 for v in model.variables}

    def put(role, x):
        idx = model.role_index(role)
        if idx is None:
            if x:
                raise WarmStartError(f"no variable for role {role}")
            return
        val[model.variables[idx].name] = x

    red = [set(r) for r in meta.initial_red]
    blue = set(meta.initial_blue)
    g = arch.comm_cost
    comp_cost = [[0] * T for _ in range(P)]
    save_cost = [[0] * T for _ in range(P)]
    load_cost = [[0] * T for _ in range(P)]

    for t in range(T):
        step = steps[t] if t < len(steps) else _Step("pad")
        for p, ops in step.ops.items():
            for tr in ops:
                if tr.kind is Kind.COMPUTE:
                    put(("comp", p, tr.node, t), 1)
                    comp_cost[p][t] += dag.omega(tr.node)
                    red[p].add(tr.node)
                elif tr.kind is Kind.SAVE:
                    put(("save", p, tr.node, t), 1)
                    save_cost[p][t] += g * dag.mu(tr.node)
                    blue.add(tr.node)
                elif tr.kind is Kind.LOAD:
                    put(("load", p, tr.node, t), 1)
                    load_cost[p][t] += g * dag.mu(tr.node)
                    red[p].add(tr.node)
        for p, nodes in step.drops.items():
            red[p] -= nodes
        for p in range(P):
            for v in red[p]:
                put(("hasred", p, v, t + 1), 1)
        for v in blue:
            if v not in meta.initial_blue:
                put(("hasblue", v, t + 1), 1)
        if cfg.step_merging:
            for p in range(P):
                if comp_cost[p][t] or any(
                    tr.kind is Kind.COMPUTE for tr in step.ops.get(p, ())
                ):
                    put(("compstep", p, t), 1)
                if any(
                    tr.kind in (Kind.SAVE, Kind.LOAD) for tr in step.ops.get(p, ())
                ):
                    put(("commstep", p, t), 1)

    if cfg.objective == "sync":
        _warm_sync_machinery(model, val, steps, comp_cost, save_cost, load_cost, put)
        expected = sync_cost(
            dag, arch, schedule, validate=False,
        )
    else:
        _warm_async_machinery(model, val, steps, dag, arch, meta, put)
        expected = async_cost(
            dag, arch, schedule, validate=False, initial_blue=meta.initial_blue,
        )

    bad = model.check_assignment(val)
    if bad:
        raise WarmStartError(f"encoded assignment violates {bad[:5]} (+{max(0, len(bad)-5)} more)")
    got = model.objective_value(val)
    if got != expected:
        raise WarmStartError(f"warm-start objective {got} != evaluated cost {expected}")
    return val


def _warm_sync_machinery(model, val, steps, comp_cost, save_cost, load_cost, put):
    meta = model.meta
    P, T = meta.arch.processors, meta.cfg.horizon
    L = meta.arch.sync_cost
    tags = [steps[t].tag if t < len(steps) else "pad" for t in range(T)]
    compphase = [1 if tags[t] == "comp" else 0 for t in range(T)]
    commphase = [1 if tags[t] in ("comm", "save", "load") else 0 for t in range(T)]

    def run_end(flags, t):
        return flags[t] == 1 and (t + 1 == T or flags[t + 1] == 0)

    compends = [1 if run_end(compphase, t) else 0 for t in range(T)]
    commends = [1 if run_end(commphase, t) else 0 for t in range(T)]
    cu = [[0] * T for _ in range(P)]
    su = [[0] * T for _ in range(P)]
    lu = [[0] * T for _ in range(P)]
    for p in range(P):
        for t in range(T):
            prev_cu = cu[p][t - 1] if t else 0
            prev_su = su[p][t - 1] if t else 0
            prev_lu = lu[p][t - 1] if t else 0
            cu[p][t] = 0 if commends[t] else prev_cu + comp_cost[p][t]
            su[p][t] = 0 if compends[t] else prev_su + save_cost[p][t]
            lu[p][t] = 0 if compends[t] else prev_lu + load_cost[p][t]
    for t in range(T):
        put(("compphase", t), compphase[t])
        put(("commphase", t), commphase[t])
        if not meta.cfg.step_merging:
            put(("savephase", t), 1 if tags[t] == "save" else 0)
            put(("loadphase", t), 1 if tags[t] == "load" else 0)
        put(("compends", t), compends[t])
        put(("commends", t), commends[t])
        for p in range(P):
            put(("compuntil", p, t), cu[p][t])
            put(("saveuntil", p, t), su[p][t])
            put(("loaduntil", p, t), lu[p][t])
        put(("compinduced", t), max(cu[p][t] for p in range(P)) if compends[t] else 0)
        put(("saveinduced", t), max(su[p][t] for p in range(P)) if commends[t] else 0)
        put(("loadinduced", t), max(lu[p][t] for p in range(P)) if commends[t] else 0)


def _warm_async_machinery(model, val, steps, dag, arch, meta, put):
    P, T = arch.processors, meta.cfg.horizon
    g = arch.comm_cost
    gamma = [0] * P
    avail: dict[int, int] = {}
    ft = [[0] * T for _ in range(P)]
    for t in range(T):
        step = steps[t] if t < len(steps) else _Step("pad")
        saves_here = []
        for p, ops in step.ops.items():
            cost = 0
            wait = gamma[p]
            for tr in ops:
                cost += transition_cost(dag, arch, tr)
                if tr.kind is Kind.LOAD and tr.node not in meta.initial_blue:
                    wait = max(wait, avail[tr.node])
            gamma[p] = wait + cost
            for tr in ops:
                if tr.kind is Kind.SAVE:
                    saves_here.append((tr.node, gamma[p]))
        for v, tm in saves_here:
            avail[v] = max(avail.get(v, 0), tm)  # big-M bound needs the max
        for p in range(P):
            ft[p][t] = gamma[p]
    for p in range(P):
        for t in range(T):
            put(("finishtime", p, t), ft[p][t])
    for v, tm in avail.items():
        if v not in meta.initial_blue:
            put(("getsblue", v), tm)
    put(("makespan",), max((gamma[p] for p in range(P)), default=0))


# --------------------------------------------------------------- decoding

def decode_solution(model: MilpModel, assignment: dict[str, float]) -> MbspSchedule:
    """Turn a feasible assignment back into a validated schedule.

    Binaries must sit within 1e-4 of an integer and constraint residuals
    within 1e-6. The decoded schedule's evaluated cost must equal the
    assignment's (rounded) objective; pathological but feasible patterns
    like a load immediately dropped are cancelled, in which case the
    decoded cost may only fall below the objective.
    """
    meta = model.meta
    dag, arch, cfg = meta.dag, meta.arch, meta.cfg
    P, T = arch.processors, cfg.horizon
    vals: dict[str, float] = {v.name: float(assignment.get(v.name, 0.0)) for v in model.variables}
    ivals: dict[str, int] = {}
    for v in model.variables:
        x = vals[v.name]
        if v.binary:
            r = round(x)
            if abs(x - r) > 1e-4:
                raise DecodeError(f"binary variable {v.name} = {x} is not integral")
            ivals[v.name] = int(r)
        else:
            ivals[v.name] = int(round(x))
    bad = model.check_assignment({k: float(v) for k, v in ivals.items()}, tol=1e-6)
    if bad:
        raise DecodeError(f"assignment violates {bad[:5]} (+{max(0, len(bad)-5)} more)")

    def get(role):
        idx = model.role_index(role)
        return ivals[model.variables[idx].name] if idx is not None else 0

    def red_at(p, v, t):
        if t == 0:
            return 1 if v in meta.initial_red[p] else 0
        return get(("hasred", p, v, t))

    n = dag.node_count
    ns = set(range(n)) - dag.sources
    comps = [[[] for _ in range(P)] for _ in range(T)]
    saves = [[[] for _ in range(P)] for _ in range(T)]
    loads = [[[] for _ in range(P)] for _ in range(T)]
    drops = [[set() for _ in range(P)] for _ in range(T)]  # applied after step t
    arrivals = [[set() for _ in range(P)] for _ in range(T)]
    for t in range(T):
        for p in range(P):
            for v in range(n):
                if v in ns and get(("comp", p, v, t)):
                    comps[t][p].append(v)
                    arrivals[t][p].add(v)
                if get(("save", p, v, t)):
                    saves[t][p].append(v)
                if get(("load", p, v, t)):
                    loads[t][p].append(v)
                    arrivals[t][p].add(v)
    for t in range(T):
        for p in range(P):
            for v in range(n):
                present = red_at(p, v, t) or (v in arrivals[t][p])
                if present and not red_at(p, v, t + 1):
                    drops[t][p].add(v)

    anomalies: list[str] = []
    # cancel loads dropped in place (phantom traffic, never optimal)
    for t in range(T):
        for p in range(P):
            for v in sorted(drops[t][p] & set(loads[t][p])):
                loads[t][p].remove(v)
                drops[t][p].discard(v)
                anomalies.append(f"phantom load p{p} v{v} t{t}")

    nonempty = [
        t
        for t in range(T)
        if any(comps[t][p] or saves[t][p] or loads[t][p] for p in range(P))
    ]
    if cfg.objective == "sync":
        ends = [get(("commends", t)) for t in range(T)]
        blocks = []
        start = 0
        for t in range(T):
            if ends[t]:
                blocks.append((start, t))
                start = t + 1
        if any(t >= start for t in nonempty):
            blocks.append((start, T - 1))
    else:
        blocks = [(t, t) for t in nonempty]

    topo_pos = {v: i for i, v in enumerate(topological_order(dag))}
    supersteps = []
    deferred = [set() for _ in range(P)]  # deletes owed from the previous boundary
    for b, (t0, t1) in enumerate(blocks):
        phases = [
            {"comp": [], "save": [], "del": [], "load": []} for _ in range(P)
        ]
        comm_steps = [
            t for t in range(t0, t1 + 1)
            if any(saves[t][p] or loads[t][p] for p in range(P))
        ]
        m0 = comm_steps[0] if comm_steps else t1 + 1
        for p in range(P):
            for v in sorted(deferred[p]):
                phases[p]["comp"].append(Transition(Kind.DELETE, p, v))
            deferred[p] = set()
        for t in range(t0, t1 + 1):
            for p in range(P):
                for v in sorted(comps[t][p], key=lambda x: topo_pos[x]):
                    phases[p]["comp"].append(Transition(Kind.COMPUTE, p, v))
                if t < m0:
                    for v in sorted(drops[t][p]):
                        if t == t1:
                            deferred[p].add(v)
                        else:
                            phases[p]["comp"].append(Transition(Kind.DELETE, p, v))
                elif t == t1:
                    deferred[p] |= drops[t][p]
        for p in range(P):
            internal = set()
            for t in range(max(t0, m0), t1):
                internal |= drops[t][p]
            block_loads = []
            for t in comm_steps:
                block_loads.extend(loads[t][p])
            for t in comm_steps:
                for v in saves[t][p]:
                    if red_at(p, v, m0) or v in set(
                        x for tt in range(t0, m0) for x in comps[tt][p]
                    ):
                        phases[p]["save"].append(Transition(Kind.SAVE, p, v))
                    else:
                        anomalies.append(f"save of in-block load p{p} v{v} t{t}")
            for v in sorted(internal):
                if red_at(p, v, m0):
                    phases[p]["del"].append(Transition(Kind.DELETE, p, v))
                else:
                    # value appeared and vanished inside the block: cancel
                    # one of its loads against this drop
                    if v in block_loads:
                        block_loads.remove(v)
                        anomalies.append(f"in-block churn p{p} v{v}")
            for v in block_loads:
                phases[p]["load"].append(Transition(Kind.LOAD, p, v))
        step = tuple(
            ProcessorSuperstep(
                tuple(phases[p]["comp"]),
                tuple(phases[p]["save"]),
                tuple(phases[p]["del"]),
                tuple(phases[p]["load"]),
            )
            for p in range(P)
        )
        if any(not ps.empty for ps in step):
            supersteps.append(step)

    # a trailing block with no communication holds provably dead work
    while supersteps and all(
        not (ps.save_phase or ps.load_phase) for ps in supersteps[-1]
    ):
        dropped = supersteps.pop()
        if any(ps.comp_phase for ps in dropped):
            anomalies.append("dead trailing compute block")

    schedule = MbspSchedule(P, tuple(supersteps))
    report = validate_schedule(
        dag, arch, schedule,
        initial_red=meta.initial_red,
        initial_blue=meta.initial_blue,
        required_blue=meta.required_blue,
    )
    if not report.valid:
        raise DecodeError(
            f"decoded schedule invalid: {report.message} ({report.location()})"
        )
    objective = model.objective_value(vals)
    rounded = round(objective)
    if abs(objective - rounded) > 1e-4:
        raise DecodeError(f"objective {objective} is not integral")
    if cfg.objective == "sync":
        cost = sync_cost(dag, arch, schedule, validate=False)
    else:
        cost = async_cost(
            dag, arch, schedule, validate=False, initial_blue=meta.initial_blue
        )
    if cost != rounded and not anomalies:
        raise DecodeError(f"decoded cost {cost} != objective {rounded}")
    if cost > rounded:
        raise DecodeError(
            f"decoded cost {cost} exceeds objective {rounded} (anomalies: {anomalies[:3]})"
        )
    return schedule
