"""LP-file emission, external solver subprocess driver, solution parsing,
and an exhaustive optimizer for tiny instances.

The solver is abstracted as a command template with placeholders {lp},
{sol}, {timelimit} and {warmstart}; any MILP solver that reads CPLEX-LP
files and writes either name/value pairs or a CPLEX-style XML solution
can be plugged in. The packaged default template runs this package's
own `lpsolve` command (HiGHS via scipy) in a subprocess. When a warm
start is supplied, the run never reports anything worse: if the solver
fails, times out empty-handed, or returns a weaker incumbent, the
warm-start assignment is kept as the result.
"""

from __future__ import annotations

import math
import os
import re
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field

from .errors import GuardExceeded, SolutionParseError, SolverError
from .ilp import MilpModel

_STATUS_HEADERS = {
    "optimal": "optimal",
    "stopped": "feasible",
    "feasible": "feasible",
    "infeasible": "infeasible",
    "integer": "infeasible",  # CBC prints "Integer infeasible"
    "unbounded": "error",
    "error": "error",
    "timeout": "timeout",
}

DEFAULT_SOLVER_CMD = (
    f"{sys.executable} -m mbsp.lpsolve {{lp}} {{sol}} "
    "--time-limit {timelimit} --warmstart {warmstart}"
)


@dataclass(frozen=True)
class SolverRunConfig:
    command: str | None = None  # template; env MBSP_SOLVER_CMD, else packaged default
    time_limit: float = 60.0
    dialect: str = "plain-pairs"  # or "sol-xml"
    keep_files: bool = False

    def resolved_command(self) -> str:
        return self.command or os.environ.get("MBSP_SOLVER_CMD") or DEFAULT_SOLVER_CMD


@dataclass
class SolverRun:
    status: str  # optimal | feasible | infeasible | timeout | error
    assignment: dict[str, float] | None
    objective: float | None
    from_warm_start: bool = False
    detail: str = ""


def _fmt_coef(c: int, first: bool) -> str:
    sign = "-" if c < 0 else ("" if first else "+")
    mag = abs(c)
    return f"{sign} {mag} " if mag != 1 else f"{sign} "


def emit_lp(model: MilpModel) -> str:
    """CPLEX-LP text with deterministic ordering (variable creation order)."""
    out = ["Minimize"]
    terms = []
    for i, c in model.objective:
        terms.append(f"{_fmt_coef(c, not terms)}{model.variables[i].name}")
    out.append(" obj: " + ("".join(terms).strip() if terms else "0 " + model.variables[0].name))
    out.append("Subject To")
    for k, con in enumerate(model.constraints):
        terms = []
        for i, c in con.terms:
            terms.append(f"{_fmt_coef(c, not terms)}{model.variables[i].name}")
        if not terms:  # fully folded constraint: keep the sense trivially
            terms.append(f"0 {model.variables[0].name}")
        sense = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        out.append(f" c{k}: {''.join(terms).strip()} {sense} {con.rhs}")
    out.append("Bounds")
    for v in model.variables:
        if v.binary:
            continue
        ub = "+inf" if math.isinf(v.ub) else str(v.ub)
        out.append(f" {v.lb} <= {v.name} <= {ub}")
    binaries = [v.name for v in model.variables if v.binary]
    if binaries:
        out.append("Binary")
        for name in binaries:
            out.append(f" {name}")
    out.append("End")
    return "\n".join(out) + "\n"


def emit_warmstart(assignment: dict[str, float]) -> str:
    lines = [f"{name} {value}" for name, value in assignment.items()]
    return "\n".join(lines) + "\n"


def parse_solution(model: MilpModel, text: str, dialect: str = "plain-pairs"):
    """Parse solver output into (status or None, assignment).

    plain-pairs: one `name value` per line; an optional leading status
    header (Optimal/Stopped/Infeasible..., as CBC and our bundled solver
    print) and indexed rows `i name value [reduced cost]` are accepted.
    sol-xml: scan variable elements for name=... value=... attributes.
    Unknown variable names are an error; missing variables default to 0.
    """
    assignment: dict[str, float] = {}
    status = None
    if dialect == "sol-xml":
        for m in re.finditer(
            r"<variable\s[^>]*name=\"([^\"]+)\"[^>]*value=\"([^\"]+)\"", text
        ):
            name, value = m.group(1), m.group(2)
            if not model.has_name(name):
                raise SolutionParseError(f"unknown variable {name!r}")
            assignment[name] = float(value)
        m = re.search(r"solutionStatusString=\"([^\"]+)\"", text)
        if m:
            status = m.group(1).lower()
        return status, assignment
    if dialect != "plain-pairs":
        raise SolutionParseError(f"unknown dialect {dialect!r}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split()[0].lower().rstrip(":,-")
        if lineno == 1 and head in _STATUS_HEADERS:
            status = _STATUS_HEADERS[head]
            continue
        tokens = line.split()
        if len(tokens) >= 3 and re.fullmatch(r"\d+", tokens[0]):
            name, value = tokens[1], tokens[2]
        elif len(tokens) >= 2:
            name, value = tokens[0], tokens[1]
        else:
            raise SolutionParseError(f"malformed solution line {lineno}: {line!r}")
        if not model.has_name(name):
            raise SolutionParseError(f"unknown variable {name!r} on line {lineno}")
        try:
            assignment[name] = float(value)
        except ValueError:
            raise SolutionParseError(
                f"malformed value for {name!r} on line {lineno}: {value!r}"
            ) from None
    return status, assignment


def solve(
    model: MilpModel,
    run_cfg: SolverRunConfig | None = None,
    warm_start_assignment: dict[str, float] | None = None,
) -> SolverRun:
    """Write the LP, spawn the solver command, parse and verify the result.

    The reported status is downgraded whenever the returned assignment
    fails a substitution check, and a supplied warm start acts as an
    incumbent floor: it is returned (status `feasible`) when the solver
    produces nothing at least as good.
    """
    run_cfg = run_cfg or SolverRunConfig()
    warm_objective = (
        model.objective_value(warm_start_assignment)
        if warm_start_assignment is not None
        else None
    )

    def fallback(status, detail):
        if warm_start_assignment is not None:
            return SolverRun(
                "feasible", dict(warm_start_assignment), warm_objective,
                from_warm_start=True, detail=detail,
            )
        return SolverRun(status, None, None, detail=detail)

    tmpdir = os.environ.get("MBSP_TMPDIR") or None
    with tempfile.TemporaryDirectory(prefix="mbsp_", dir=tmpdir) as work:
        lp_path = os.path.join(work, "model.lp")
        sol_path = os.path.join(work, "model.sol")
        warm_path = os.path.join(work, "model.mst")
        with open(lp_path, "w") as fh:
            fh.write(emit_lp(model))
        if warm_start_assignment is not None:
            with open(warm_path, "w") as fh:
                fh.write(emit_warmstart(warm_start_assignment))
        else:
            open(warm_path, "w").close()
        subst = {
            "lp": lp_path,
            "sol": sol_path,
            "timelimit": str(max(1, round(run_cfg.time_limit))),
            "warmstart": warm_path,
        }
        argv = [tok.format(**subst) for tok in shlex.split(run_cfg.resolved_command())]
        try:
            proc = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=run_cfg.time_limit + 30,
            )
        except FileNotFoundError as exc:
            raise SolverError(f"cannot spawn solver: {exc}") from exc
        except subprocess.TimeoutExpired:
            return fallback("timeout", "solver wall-clock timeout")
        if not os.path.exists(sol_path):
            if proc.returncode != 0:
                raise SolverError(
                    f"solver exited with {proc.returncode} and no solution: "
                    f"{proc.stderr[-500:] if proc.stderr else proc.stdout[-500:]}"
                )
            return fallback("error", "solver wrote no solution file")
        with open(sol_path) as fh:
            text = fh.read()
    status, assignment = parse_solution(model, text, run_cfg.dialect)
    status = status or ("feasible" if assignment else "error")
    if status in ("infeasible", "error", "timeout") or not assignment:
        if status == "infeasible" and warm_start_assignment is not None:
            # a feasible warm start contradicts infeasibility: encoding bug
            raise SolverError("solver reported infeasible despite a feasible warm start")
        if status == "infeasible":
            return SolverRun("infeasible", None, None)
        return fallback(status, "no incumbent from solver")
    bad = model.check_assignment(assignment, tol=1e-6)
    if bad:
        return fallback("error", f"solver assignment violates {bad[:3]}")
    objective = model.objective_value(assignment)
    if warm_objective is not None and objective > warm_objective + 1e-9:
        return fallback("feasible", "incumbent kept: solver result was worse")
    return SolverRun(status, assignment, objective)


# ----------------------------------------------------- exhaustive optimum

def brute_force_optimum(dag, arch, max_transitions: int | None, objective: str):
    """Provably minimum-cost schedule for tiny instances, by exhaustive
    search over canonical transition sequences.

    Canonical form: deletes appear only as inclusion-minimal eviction
    bundles right before the compute or load that needs the room
    (postponing a free delete until just before the next arrival never
    changes validity or cost), an already-cached value is never
    recomputed or reloaded, and an already-blue value is never saved
    again (a repeated save is dominated by keeping only the cheaper
    one). max_transitions bounds the number of non-delete transitions,
    mirroring a step-indexed encoding's horizon; None leaves it
    unbounded.
    """
    n = dag.node_count
    P = arch.processors
    if n > 12 or P > 2:
        raise GuardExceeded(f"instance too large for exhaustive search (n={n}, P={P})")
    if objective == "sync":
        return _sync_search(dag, arch, max_transitions)
    if objective == "async":
        return _async_search(dag, arch, max_transitions)
    raise ValueError("objective must be 'sync' or 'async'")


def _eviction_bundles(dag, r, red, incoming_mu, protected):
    """Inclusion-minimal delete sets making room for an arrival of the
    given weight; yields (deleted frozenset, remaining red set)."""
    from itertools import combinations

    mu = dag.memory_weight
    over = sum(mu[v] for v in red) + incoming_mu - r
    if over <= 0:
        yield frozenset(), red
        return
    candidates = sorted(set(red) - protected)
    for k in range(1, len(candidates) + 1):
        for combo in combinations(candidates, k):
            freed = sum(mu[v] for v in combo)
            if freed >= over and not any(freed - mu[v] >= over for v in combo):
                yield frozenset(combo), red - frozenset(combo)


def _moves(dag, red_p, blue):
    """Candidate (kind, node, protected-from-eviction) actions."""
    out = []
    for v in range(dag.node_count):
        if v in blue and v not in red_p:
            out.append(("load", v, frozenset()))
        if v not in dag.sources and v not in red_p:
            par = frozenset(dag.parents[v])
            if par <= red_p:
                out.append(("comp", v, par))
        if v in red_p and v not in blue:
            out.append(("save", v, frozenset()))
    return out


def _reconstruct(prev, key):
    path = []
    while key is not None:
        key, move = prev[key]
        if move is not None:
            path.append(move)
    path.reverse()
    return path


def _assemble(dag, arch, moves, mode):
    """Turn a canonical move sequence into a superstep-structured schedule.

    Compute-bundle deletes interleave in the compute phase; load-bundle
    deletes form the delete phase. In asynchronous mode every action is
    its own superstep.
    """
    from .schedule import Kind, MbspSchedule, ProcessorSuperstep, Transition

    P = arch.processors
    supersteps = []
    phases = None

    def fresh():
        return [
            {"comp": [], "save": [], "del": [], "load": []} for _ in range(P)
        ]

    def flush():
        nonlocal phases
        if phases is None:
            return
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
        phases = None

    for move in moves:
        if move[0] == "closephase":
            continue
        if move[0] == "closestep":
            flush()
            continue
        kind, p, v, deleted = move
        if phases is None:
            phases = fresh()
        if kind == "comp":
            for x in sorted(deleted):
                phases[p]["comp"].append(Transition(Kind.DELETE, p, x))
            phases[p]["comp"].append(Transition(Kind.COMPUTE, p, v))
        elif kind == "save":
            phases[p]["save"].append(Transition(Kind.SAVE, p, v))
        else:
            for x in sorted(deleted):
                phases[p]["del"].append(Transition(Kind.DELETE, p, x))
            phases[p]["load"].append(Transition(Kind.LOAD, p, v))
        if mode == "async":
            flush()
    flush()
    return MbspSchedule(P, tuple(supersteps))


def _sync_search(dag, arch, cap):
    """Dijkstra over (reds, blue, phase, slack vector, ops used, dirty).

    Superstep phase maxima are charged incrementally: an action of cost
    c on processor p is charged max(0, c - slack_p), where slack_p is
    the gap between p's accumulated phase cost and the current phase
    maximum. Closing a non-empty superstep charges L.
    """
    import heapq

    from .schedule import MbspSchedule

    P = arch.processors
    g = arch.comm_cost
    L = arch.sync_cost
    omega = dag.compute_weight
    mu = dag.memory_weight
    r = arch.cache_capacity
    sinks = frozenset(dag.sinks)
    start_blue = frozenset(dag.sources)
    if sinks <= start_blue:
        return MbspSchedule(P, ()), 0

    PH_COMP, PH_SAVE, PH_LOAD = 0, 1, 2
    start = (
        tuple(frozenset() for _ in range(P)), start_blue,
        PH_COMP, (0,) * P, 0, False,
    )
    dist = {start: 0}
    prev = {start: (None, None)}
    pq = [(0, 0, start)]
    counter = 0
    best_goal = None

    def push(nstate, nd, state, move):
        nonlocal counter
        if nd < dist.get(nstate, float("inf")):
            dist[nstate] = nd
            prev[nstate] = (state, move)
            counter += 1
            heapq.heappush(pq, (nd, counter, nstate))

    while pq:
        d, _, state = heapq.heappop(pq)
        if dist.get(state) != d:
            continue
        reds, blue, phase, slack, used, dirty = state
        if sinks <= blue and not dirty:
            best_goal = state
            break
        if phase != PH_LOAD:
            push((reds, blue, phase + 1, (0,) * P, used, dirty), d, state, ("closephase",))
        elif dirty:
            push((reds, blue, PH_COMP, (0,) * P, used, False), d + L, state, ("closestep",))
        if cap is not None and used >= cap:
            continue
        phase_of = {"comp": PH_COMP, "save": PH_SAVE, "load": PH_LOAD}
        for p in range(P):
            red_p = reds[p]
            for kind, v, protected in _moves(dag, red_p, blue):
                if phase_of[kind] != phase:
                    continue
                cost = omega[v] if kind == "comp" else g * mu[v]
                if kind == "save":
                    bundles = ((frozenset(), red_p),)
                    nblue = blue | {v}
                else:
                    bundles = _eviction_bundles(dag, r, red_p, mu[v], protected)
                    nblue = blue
                for deleted, kept in bundles:
                    nred = list(reds)
                    nred[p] = kept | ({v} if kind != "save" else frozenset())
                    charge = max(0, cost - slack[p])
                    nslack = [slack[q] + charge for q in range(P)]
                    nslack[p] = max(0, slack[p] - cost)
                    nstate = (tuple(nred), nblue, phase, tuple(nslack), used + 1, True)
                    push(nstate, d + charge, state, (kind, p, v, deleted))
    if best_goal is None:
        raise GuardExceeded("no schedule reaches the terminal state within the bound")
    moves = _reconstruct(prev, best_goal)
    schedule = _assemble(dag, arch, moves, "sync")
    return schedule, dist[best_goal]


def _async_search(dag, arch, cap):
    """Dijkstra over (reds, blue, relative clocks, relative availability,
    ops used), ordered by absolute makespan.

    Clocks and availability times are stored relative to the minimum
    clock so time-shifted states collapse; availability at or below
    every clock can never delay a load again and is dropped. One action
    per superstep is enough: any schedule regroups into singleton
    supersteps ordered by finishing time without changing its cost.
    """
    import heapq

    from .schedule import MbspSchedule

    P = arch.processors
    g = arch.comm_cost
    omega = dag.compute_weight
    mu = dag.memory_weight
    r = arch.cache_capacity
    sinks = frozenset(dag.sinks)
    start_blue = frozenset(dag.sources)
    if sinks <= start_blue:
        return MbspSchedule(P, ()), 0

    start = (
        tuple(frozenset() for _ in range(P)), start_blue, (0,) * P, (), 0,
    )
    dist = {start: 0}
    prev = {start: (None, None)}
    pq = [(0, 0, start)]
    counter = 0
    best_goal = None
    while pq:
        d, _, state = heapq.heappop(pq)
        if dist.get(state) != d:
            continue
        reds, blue, gammas, avail_t, used = state
        if sinks <= blue:
            best_goal = state
            break
        if cap is not None and used >= cap:
            continue
        avail = dict(avail_t)
        rel_max = max(gammas)
        for p in range(P):
            red_p = reds[p]
            for kind, v, protected in _moves(dag, red_p, blue):
                cost = omega[v] if kind == "comp" else g * mu[v]
                if kind == "save":
                    bundles = ((frozenset(), red_p),)
                else:
                    bundles = _eviction_bundles(dag, r, red_p, mu[v], protected)
                for deleted, kept in bundles:
                    ngammas = list(gammas)
                    if kind == "load":
                        ready = 0 if v in dag.sources else avail.get(v, 0)
                        ngammas[p] = max(gammas[p], ready) + cost
                    else:
                        ngammas[p] = gammas[p] + cost
                    nblue = blue | {v} if kind == "save" else blue
                    navail = dict(avail)
                    if kind == "save":
                        navail[v] = ngammas[p]
                    nred = list(reds)
                    nred[p] = kept | ({v} if kind != "save" else frozenset())
                    shift = min(ngammas)
                    rel = tuple(x - shift for x in ngammas)
                    norm_avail = tuple(
                        sorted(
                            (w, t - shift)
                            for w, t in navail.items()
                            if t - shift > 0
                        )
                    )
                    nd = d - rel_max + max(ngammas)  # absolute makespan
                    nstate = (tuple(nred), nblue, rel, norm_avail, used + 1)
                    if nd < dist.get(nstate, float("inf")):
                        dist[nstate] = nd
                        prev[nstate] = (state, (kind, p, v, deleted))
                        counter += 1
                        heapq.heappush(pq, (nd, counter, nstate))
    if best_goal is None:
        raise GuardExceeded("no schedule reaches the terminal state within the bound")
    moves = _reconstruct(prev, best_goal)
    schedule = _assemble(dag, arch, moves, "async")
    return schedule, dist[best_goal]
