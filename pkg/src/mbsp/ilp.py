"""Time-indexed MILP encodings of the scheduling problem.

Binary action variables (compute/save/load per processor, node and time
step) plus pebble-state variables drive the fundamental constraints;
deletes are implicit as red-pebble drops between consecutive steps. Two
step semantics are supported: unmerged (one action per processor per
step) and merged (a step holds a whole compute chain or a batch of I/O
on a processor). Two objectives: the superstep-structured synchronous
cost, recovered through phase-indicator machinery, and the asynchronous
makespan, recovered through finishing-time recurrences.

Beyond the textbook constraint set, two families keep the encoding
sound against the pebble game: a transient-memory bound that counts the
values arriving at a step on top of the resident ones (a compute's
output coexists with its parents), and a no-reacquire rule that forbids
computing or loading a value already cached. Without these, assignments
exist that no schedule can replay.

Warm starts encode any valid schedule as a full assignment whose
objective equals the schedule's evaluated cost exactly; supersteps with
an empty communication part are delimited by a spurious phase-indicator
step so their synchronization charge survives the encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .cost import async_cost, sync_cost, transition_cost
from .dag import Architecture, WeightedDag
from .errors import DecodeError, WarmStartError
from .schedule import (
    Kind,
    MbspSchedule,
    ProcessorSuperstep,
    Transition,
    validate_schedule,
)

INF = math.inf


@dataclass(frozen=True)
class IlpConfig:
    horizon: int
    objective: str = "sync"  # "sync" | "async"
    step_merging: bool = True
    allow_recompute: bool = True
    big_m: int | None = None  # defaulted from the instance when None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.objective not in ("sync", "async"):
            raise ValueError("objective must be 'sync' or 'async'")


def default_big_m(dag: WeightedDag, arch: Architecture) -> int:
    return arch.processors * sum(
        dag.omega(v) + arch.comm_cost * dag.mu(v) for v in range(dag.node_count)
    )


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float
    ub: float
    binary: bool
    role: tuple


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[int, int], ...]  # (variable index, coefficient)
    sense: str  # "<=", ">=", "="
    rhs: int


@dataclass(frozen=True)
class ModelMeta:
    dag: WeightedDag
    arch: Architecture
    cfg: IlpConfig
    big_m: int
    processors: tuple[int, ...]  # global processor ids, local index order
    initial_red: tuple[frozenset[int], ...]
    initial_blue: frozenset[int]
    required_blue: frozenset[int]


@dataclass(frozen=True)
class MilpModel:
    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]
    objective: tuple[tuple[int, int], ...]  # minimize sum(coef * var)
    meta: ModelMeta

    def __post_init__(self):
        object.__setattr__(
            self, "_by_name", {v.name: i for i, v in enumerate(self.variables)}
        )
        object.__setattr__(
            self, "_by_role", {v.role: i for i, v in enumerate(self.variables)}
        )

    def index(self, name: str) -> int:
        return self._by_name[name]

    def has_name(self, name: str) -> bool:
        return name in self._by_name

    def role_index(self, role: tuple) -> int | None:
        return self._by_role.get(role)

    def objective_value(self, assignment: dict[str, float]) -> float:
        return sum(
            c * assignment.get(self.variables[i].name, 0.0) for i, c in self.objective
        )

    def check_assignment(self, assignment: dict[str, float], tol: float = 0.0):
        """Return the list of violated constraint names under `assignment`."""
        values = [assignment.get(v.name, 0.0) for v in self.variables]
        bad = []
        for i, v in enumerate(self.variables):
            if values[i] < v.lb - tol or values[i] > v.ub + tol:
                bad.append(f"bounds:{v.name}")
        for c in self.constraints:
            lhs = sum(coef * values[i] for i, coef in c.terms)
            ok = (
                lhs <= c.rhs + tol
                if c.sense == "<="
                else lhs >= c.rhs - tol if c.sense == ">=" else abs(lhs - c.rhs) <= tol
            )
            if not ok:
                bad.append(c.name)
        return bad


class _Builder:
    def __init__(self, meta: ModelMeta):
        self.meta = meta
        self.variables: list[Variable] = []
        self.by_role: dict[tuple, int] = {}
        self.constraints: list[Constraint] = []
        self.objective: list[tuple[int, int]] = []

    def var(self, role: tuple, name: str, lb=0, ub=1, binary=True) -> int:
        idx = len(self.variables)
        self.variables.append(Variable(name, lb, ub, binary, role))
        self.by_role[role] = idx
        return idx

    def get(self, role: tuple) -> int | None:
        return self.by_role.get(role)

    def con(self, name: str, terms, sense: str, rhs: int):
        # terms may contain (None, const) entries for eliminated variables
        # and repeated indices, which are merged here
        folded = 0
        merged: dict[int, int] = {}
        for idx, coef in terms:
            if coef == 0:
                continue
            if idx is None:
                folded += coef
            else:
                merged[idx] = merged.get(idx, 0) + coef
        clean = tuple((i, c) for i, c in merged.items() if c != 0)
        self.constraints.append(Constraint(name, clean, sense, rhs - folded))

    def build(self) -> MilpModel:
        return MilpModel(
            tuple(self.variables),
            tuple(self.constraints),
            tuple(self.objective),
            self.meta,
        )


def build_full_ilp(
    dag: WeightedDag,
    arch: Architecture,
    cfg: IlpConfig,
    processors: tuple[int, ...] | None = None,
    initial_red: tuple[frozenset[int], ...] | None = None,
    initial_blue: frozenset[int] | None = None,
    required_blue: frozenset[int] | None = None,
) -> MilpModel:
    """Emit the full encoding for the given step semantics and objective.

    Boundary overrides (initial red pebbles per processor, initially blue
    values, required terminal blues) serve the divide-and-conquer
    subproblems; defaults are the standard initial and terminal states.
    Pre-determined variables (source computes, initially-blue presence,
    step-zero states) are never created; their values fold into the
    constraint right-hand sides.
    """
    P = arch.processors
    T = cfg.horizon
    n = dag.node_count
    procs = tuple(processors) if processors is not None else tuple(range(P))
    if len(procs) != P:
        raise ValueError("processor id list length must match the architecture")
    init_red = tuple(initial_red) if initial_red is not None else tuple(
        frozenset() for _ in range(P)
    )
    init_blue = frozenset(initial_blue) if initial_blue is not None else dag.sources
    req_blue = frozenset(required_blue) if required_blue is not None else dag.sinks
    for p in range(P):
        used = sum(dag.mu(v) for v in init_red[p])
        if used > arch.cache_capacity:
            raise ValueError(f"initial red pebbles overflow processor {p}'s cache")
    big_m = cfg.big_m if cfg.big_m is not None else default_big_m(dag, arch)
    meta = ModelMeta(dag, arch, cfg, big_m, procs, init_red, init_blue, req_blue)
    b = _Builder(meta)
    g = arch.comm_cost
    ns = nonsource_set(dag)
    nonsources = sorted(ns)

    # ------------------------------------------------------------ variables
    for p in range(P):
        for v in range(n):
            for t in range(T):
                if v in ns:
                    b.var(("comp", p, v, t), f"comp_p{p}_v{v}_t{t}")
                b.var(("save", p, v, t), f"save_p{p}_v{v}_t{t}")
                b.var(("load", p, v, t), f"load_p{p}_v{v}_t{t}")
            for t in range(1, T + 1):
                b.var(("hasred", p, v, t), f"hasred_p{p}_v{v}_t{t}")
    for v in range(n):
        if v in init_blue:
            continue
        for t in range(1, T + 1):
            b.var(("hasblue", v, t), f"hasblue_v{v}_t{t}")
    if cfg.step_merging:
        for p in range(P):
            for t in range(T):
                b.var(("compstep", p, t), f"compstep_p{p}_t{t}")
                b.var(("commstep", p, t), f"commstep_p{p}_t{t}")

    def red(p, v, t):
        """(index, coefficient-multiplier) pair handling the t=0 constants."""
        if t == 0:
            return (None, 1 if v in init_red[p] else 0)
        return (b.get(("hasred", p, v, t)), None)

    def blue(v, t):
        if v in init_blue:
            return (None, 1)
        if t == 0:
            return (None, 0)
        return (b.get(("hasblue", v, t)), None)

    def term(ref, coef):
        idx, const = ref
        if idx is None:
            return (None, coef * const)
        return (idx, coef)

    C = b.get  # role lookup shorthand

    # --------------------------------------------------------- fundamentals
    for p in range(P):
        for t in range(T):
            for v in range(n):
                # (1) a load needs a blue pebble at the start of the step
                b.con(
                    f"load_needs_blue_p{p}_v{v}_t{t}",
                    [(C(("load", p, v, t)), 1), term(blue(v, t), -1)],
                    "<=", 0,
                )
                # (2) a save needs a red pebble at the start of the step
                b.con(
                    f"save_needs_red_p{p}_v{v}_t{t}",
                    [(C(("save", p, v, t)), 1), term(red(p, v, t), -1)],
                    "<=", 0,
                )
            for v in nonsources:
                # (3) computing needs every parent cached (merged steps may
                # chain onto a parent computed in the same step)
                for u in dag.parents[v]:
                    terms = [(C(("comp", p, v, t)), 1), term(red(p, u, t), -1)]
                    if cfg.step_merging and u not in dag.sources:
                        terms.append((C(("comp", p, u, t)), -1))
                    b.con(f"comp_needs_parent_p{p}_v{v}_u{u}_t{t}", terms, "<=", 0)
            for v in range(n):
                # (4) red pebbles persist or arrive via compute/load
                terms = [(C(("hasred", p, v, t + 1)), 1), term(red(p, v, t), -1)]
                if v not in dag.sources:
                    terms.append((C(("comp", p, v, t)), -1))
                terms.append((C(("load", p, v, t)), -1))
                b.con(f"red_evolution_p{p}_v{v}_t{t}", terms, "<=", 0)
                # no-reacquire: never compute or load a value already cached
                terms = [term(red(p, v, t), 1), (C(("load", p, v, t)), 1)]
                if v not in dag.sources:
                    terms.append((C(("comp", p, v, t)), 1))
                b.con(f"no_reacquire_p{p}_v{v}_t{t}", terms, "<=", 1)
            if not cfg.step_merging:
                # (6) one action per processor per step
                terms = []
                for v in range(n):
                    if v not in dag.sources:
                        terms.append((C(("comp", p, v, t)), 1))
                    terms.append((C(("save", p, v, t)), 1))
                    terms.append((C(("load", p, v, t)), 1))
                b.con(f"one_action_p{p}_t{t}", terms, "<=", 1)
            else:
                # (6') merged: a step is compute-only or I/O-only
                terms = [(C(("comp", p, v, t)), 1) for v in nonsources]
                terms.append((C(("compstep", p, t)), -len(nonsources)))
                if nonsources:
                    b.con(f"compstep_flag_p{p}_t{t}", terms, "<=", 0)
                terms = [(C(("save", p, v, t)), 1) for v in range(n)]
                terms += [(C(("load", p, v, t)), 1) for v in range(n)]
                terms.append((C(("commstep", p, t)), -2 * n))
                b.con(f"commstep_flag_p{p}_t{t}", terms, "<=", 0)
                b.con(
                    f"step_kind_p{p}_t{t}",
                    [(C(("compstep", p, t)), 1), (C(("commstep", p, t)), 1)],
                    "<=", 1,
                )
            # (7') transient memory: residents plus arrivals fit the cache
            terms = [term(red(p, v, t), dag.mu(v)) for v in range(n)]
            for v in range(n):
                if v not in dag.sources:
                    terms.append((C(("comp", p, v, t)), dag.mu(v)))
                terms.append((C(("load", p, v, t)), dag.mu(v)))
            b.con(f"memory_transient_p{p}_t{t}", terms, "<=", arch.cache_capacity)
        # (7) resident memory bound at every state
        for t in range(1, T + 1):
            b.con(
                f"memory_p{p}_t{t}",
                [(C(("hasred", p, v, t)), dag.mu(v)) for v in range(n)],
                "<=", arch.cache_capacity,
            )
    # (5) blue pebbles persist or arrive via saves
    for v in range(n):
        if v in init_blue:
            continue
        for t in range(T):
            terms = [(C(("hasblue", v, t + 1)), 1), term(blue(v, t), -1)]
            terms += [(C(("save", p, v, t)), -1) for p in range(P)]
            b.con(f"blue_evolution_v{v}_t{t}", terms, "<=", 0)
    # (10) terminal blue pebbles
    for v in sorted(req_blue):
        if v in init_blue:
            continue
        b.con(f"terminal_blue_v{v}", [(C(("hasblue", v, T)), 1)], ">=", 1)
    # optional recomputation ban
    if not cfg.allow_recompute:
        _add_no_recompute(b, dag, P, T)

    # ------------------------------------------------------------ objective
    if cfg.objective == "sync":
        _sync_objective(b, dag, arch, cfg, P, T, nonsources, C, big_m)
    else:
        _async_objective(b, dag, arch, cfg, P, T, nonsources, C, red, term, big_m, init_blue)
    return b.build()


def nonsource_set(dag: WeightedDag) -> frozenset[int]:
    return frozenset(range(dag.node_count)) - dag.sources


def _add_no_recompute(b: _Builder, dag, P, T):
    for v in range(dag.node_count):
        if v in dag.sources:
            continue
        b.con(
            f"no_recompute_v{v}",
            [(b.get(("comp", p, v, t)), 1) for p in range(P) for t in range(T)],
            "<=", 1,
        )


def _sync_objective(b, dag, arch, cfg, P, T, nonsources, C, big_m):
    n = dag.node_count
    g = arch.comm_cost
    for t in range(T):
        b.var(("compphase", t), f"compphase_t{t}")
        b.var(("commphase", t), f"commphase_t{t}")
        if not cfg.step_merging:
            b.var(("savephase", t), f"savephase_t{t}")
            b.var(("loadphase", t), f"loadphase_t{t}")
        b.var(("compends", t), f"compends_t{t}")
        b.var(("commends", t), f"commends_t{t}")
        for p in range(P):
            b.var(("compuntil", p, t), f"compuntil_p{p}_t{t}", 0, INF, False)
            b.var(("saveuntil", p, t), f"saveuntil_p{p}_t{t}", 0, INF, False)
            b.var(("loaduntil", p, t), f"loaduntil_p{p}_t{t}", 0, INF, False)
        b.var(("compinduced", t), f"compinduced_t{t}", 0, INF, False)
        b.var(("saveinduced", t), f"saveinduced_t{t}", 0, INF, False)
        b.var(("loadinduced", t), f"loadinduced_t{t}", 0, INF, False)

    for t in range(T):
        # step typing: any action of a kind forces its phase flag
        terms = [(C(("comp", p, v, t)), 1) for p in range(P) for v in nonsources]
        terms.append((C(("compphase", t)), -P * max(1, len(nonsources))))
        b.con(f"compphase_flag_t{t}", terms, "<=", 0)
        if cfg.step_merging:
            terms = [(C(("save", p, v, t)), 1) for p in range(P) for v in range(n)]
            terms += [(C(("load", p, v, t)), 1) for p in range(P) for v in range(n)]
            terms.append((C(("commphase", t)), -2 * P * n))
            b.con(f"commphase_flag_t{t}", terms, "<=", 0)
            b.con(
                f"phase_excl_t{t}",
                [(C(("compphase", t)), 1), (C(("commphase", t)), 1)],
                "<=", 1,
            )
        else:
            terms = [(C(("save", p, v, t)), 1) for p in range(P) for v in range(n)]
            terms.append((C(("savephase", t)), -P * n))
            b.con(f"savephase_flag_t{t}", terms, "<=", 0)
            terms = [(C(("load", p, v, t)), 1) for p in range(P) for v in range(n)]
            terms.append((C(("loadphase", t)), -P * n))
            b.con(f"loadphase_flag_t{t}", terms, "<=", 0)
            b.con(
                f"phase_excl_t{t}",
                [
                    (C(("compphase", t)), 1),
                    (C(("savephase", t)), 1),
                    (C(("loadphase", t)), 1),
                ],
                "<=", 1,
            )
            b.con(
                f"commphase_def_t{t}",
                [
                    (C(("commphase", t)), 1),
                    (C(("savephase", t)), -1),
                    (C(("loadphase", t)), -1),
                ],
                "=", 0,
            )
        # phase-run end detection
        for kind in ("comp", "comm"):
            ends = C((f"{kind}ends", t))
            phase = C((f"{kind}phase", t))
            b.con(f"{kind}ends_le_t{t}", [(ends, 1), (phase, -1)], "<=", 0)
            terms = [(ends, 1), (phase, -1)]
            if t + 1 < T:
                terms.append((C((f"{kind}phase", t + 1)), 1))
            b.con(f"{kind}ends_ge_t{t}", terms, ">=", 0)

    for p in range(P):
        for t in range(T):
            # compute accumulation, resettable while a comm run ends
            terms = [(C(("compuntil", p, t)), 1)]
            if t > 0:
                terms.append((C(("compuntil", p, t - 1)), -1))
            terms += [(C(("comp", p, v, t)), -dag.omega(v)) for v in nonsources]
            terms.append((C(("commends", t)), big_m))
            b.con(f"compuntil_p{p}_t{t}", terms, ">=", 0)
            # I/O accumulation, resettable while a compute run ends
            for kind, act in (("save", "save"), ("load", "load")):
                terms = [(C((f"{kind}until", p, t)), 1)]
                if t > 0:
                    terms.append((C((f"{kind}until", p, t - 1)), -1))
                terms += [
                    (C((act, p, v, t)), -g * dag.mu(v)) for v in range(n)
                ]
                terms.append((C(("compends", t)), big_m))
                b.con(f"{kind}until_p{p}_t{t}", terms, ">=", 0)
    for t in range(T):
        for p in range(P):
            b.con(
                f"compinduced_t{t}_p{p}",
                [
                    (C(("compinduced", t)), 1),
                    (C(("compuntil", p, t)), -1),
                    (C(("compends", t)), -big_m),
                ],
                ">=", -big_m,
            )
            for kind in ("save", "load"):
                b.con(
                    f"{kind}induced_t{t}_p{p}",
                    [
                        (C((f"{kind}induced", t)), 1),
                        (C((f"{kind}until", p, t)), -1),
                        (C(("commends", t)), -big_m),
                    ],
                    ">=", -big_m,
                )
    for t in range(T):
        b.objective.append((C(("compinduced", t)), 1))
        b.objective.append((C(("saveinduced", t)), 1))
        b.objective.append((C(("loadinduced", t)), 1))
        if arch.sync_cost:
            b.objective.append((C(("commends", t)), arch.sync_cost))


def _async_objective(b, dag, arch, cfg, P, T, nonsources, C, red, term, big_m, init_blue):
    n = dag.node_count
    g = arch.comm_cost
    for p in range(P):
        for t in range(T):
            b.var(("finishtime", p, t), f"finishtime_p{p}_t{t}", 0, INF, False)
    for v in range(n):
        if v not in init_blue:
            b.var(("getsblue", v), f"getsblue_v{v}", 0, INF, False)
    b.var(("makespan",), "makespan", 0, INF, False)

    for p in range(P):
        for t in range(T):
            # finishing time accumulates each step's work and I/O volume
            terms = [(C(("finishtime", p, t)), 1)]
            if t > 0:
                terms.append((C(("finishtime", p, t - 1)), -1))
            terms += [(C(("comp", p, v, t)), -dag.omega(v)) for v in nonsources]
            for v in range(n):
                terms.append((C(("save", p, v, t)), -g * dag.mu(v)))
                terms.append((C(("load", p, v, t)), -g * dag.mu(v)))
            b.con(f"finishtime_p{p}_t{t}", terms, ">=", 0)
            for v in range(n):
                if v in init_blue:
                    continue  # available in slow memory from the start
                # saving v publishes it no earlier than the save's finish
                b.con(
                    f"getsblue_v{v}_p{p}_t{t}",
                    [
                        (C(("getsblue", v)), 1),
                        (C(("finishtime", p, t)), -1),
                        (C(("save", p, v, t)), -big_m),
                    ],
                    ">=", -big_m,
                )
                # a load of v cannot finish before v is published plus the
                # step's whole load volume
                terms = [
                    (C(("finishtime", p, t)), 1),
                    (C(("getsblue", v)), -1),
                    (C(("load", p, v, t)), -big_m),
                ]
                if cfg.step_merging:
                    for u in range(n):
                        terms.append((C(("load", p, u, t)), -g * dag.mu(u)))
                else:
                    terms[2] = (C(("load", p, v, t)), -big_m - g * dag.mu(v))
                b.con(f"load_waits_v{v}_p{p}_t{t}", terms, ">=", -big_m)
        b.con(
            f"makespan_p{p}",
            [(C(("makespan",)), 1), (C(("finishtime", p, T - 1)), -1)],
            ">=", 0,
        )
    b.objective.append((C(("makespan",)), 1))


def forbid_recompute(model: MilpModel) -> MilpModel:
    """Add per-node once-only compute constraints; returns a new model."""
    meta = model.meta
    if not meta.cfg.allow_recompute:
        return model
    b = _Builder(replace(meta, cfg=replace(meta.cfg, allow_recompute=False)))
    b.variables = list(model.variables)
    b.by_role = {v.role: i for i, v in enumerate(model.variables)}
    b.constraints = list(model.constraints)
    b.objective = list(model.objective)
    _add_no_recompute(b, meta.dag, meta.arch.processors, meta.cfg.horizon)
    return b.build()
