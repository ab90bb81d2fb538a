"""Synchronous and asynchronous cost of a valid schedule.

The synchronous cost charges, per superstep, the per-phase maximum over
processors (compute, save, load) plus the synchronization cost L, and
sums over supersteps. The asynchronous cost assigns every transition a
finishing time: saves, computes and deletes simply accumulate on their
processor, while a load additionally waits until the loaded value first
became available in slow memory (the minimum finishing time among the
saves of that value in the earliest superstep that saves it). Values
that are blue from the start are available at time 0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dag import Architecture, WeightedDag
from .schedule import Kind, MbspSchedule, validate_schedule


def transition_cost(dag: WeightedDag, arch: Architecture, t) -> int:
    if t.kind is Kind.COMPUTE:
        return dag.omega(t.node)
    if t.kind in (Kind.SAVE, Kind.LOAD):
        return arch.comm_cost * dag.mu(t.node)
    return 0


@dataclass(frozen=True)
class CostBreakdown:
    per_superstep: tuple[tuple[int, int, int], ...]  # (max_comp, max_save, max_load)
    total_sync: int
    finishing_times: tuple[int, ...]  # per processor
    total_async: int

    def to_csv(self) -> str:
        lines = ["superstep,max_comp,max_save,max_load"]
        for s, (c, sv, ld) in enumerate(self.per_superstep):
            lines.append(f"{s},{c},{sv},{ld}")
        lines.append(f"total_sync,{self.total_sync}")
        for p, ft in enumerate(self.finishing_times):
            lines.append(f"finish_p{p},{ft}")
        lines.append(f"total_async,{self.total_async}")
        return "\n".join(lines) + "\n"


def _require_valid(dag, arch, schedule, initial_red, initial_blue, required_blue):
    report = validate_schedule(
        dag, arch, schedule,
        initial_red=initial_red, initial_blue=initial_blue, required_blue=required_blue,
    )
    if not report.valid:
        raise ValueError(f"invalid schedule: {report.message} ({report.location()})")


def superstep_phase_maxima(dag, arch, schedule):
    """Per superstep: (max compute cost, max save cost, max load cost) over processors."""
    out = []
    for step in schedule.supersteps:
        maxc = maxs = maxl = 0
        for ps in step:
            maxc = max(maxc, sum(transition_cost(dag, arch, t) for t in ps.comp_phase))
            maxs = max(maxs, sum(transition_cost(dag, arch, t) for t in ps.save_phase))
            maxl = max(maxl, sum(transition_cost(dag, arch, t) for t in ps.load_phase))
        out.append((maxc, maxs, maxl))
    return tuple(out)


def sync_cost(
    dag: WeightedDag,
    arch: Architecture,
    schedule: MbspSchedule,
    validate: bool = True,
    initial_red=None,
    initial_blue=None,
    required_blue=None,
) -> int:
    if validate:
        _require_valid(dag, arch, schedule, initial_red, initial_blue, required_blue)
    maxima = superstep_phase_maxima(dag, arch, schedule)
    return sum(c + s + l + arch.sync_cost for c, s, l in maxima)


def _async_finishing_times(dag, arch, schedule, initial_blue=None):
    P = schedule.processors
    gamma = [0] * P
    initially_blue = dag.sources if initial_blue is None else frozenset(initial_blue)
    avail: dict[int, int] = {}  # node -> time it first becomes available in slow memory

    for step in schedule.supersteps:
        step_saves: dict[int, int] = {}
        for p in range(P):
            ps = step[p]
            for t in ps.comp_phase:
                gamma[p] += transition_cost(dag, arch, t)
            for t in ps.save_phase:
                gamma[p] += transition_cost(dag, arch, t)
                if t.node not in step_saves or gamma[p] < step_saves[t.node]:
                    step_saves[t.node] = gamma[p]
        # A value's availability is fixed by the earliest superstep saving it.
        for v, g in step_saves.items():
            avail.setdefault(v, g)
        for p in range(P):
            ps = step[p]
            for t in ps.load_phase:
                v = t.node
                ready = 0 if v in initially_blue else avail[v]
                gamma[p] = max(gamma[p], ready) + transition_cost(dag, arch, t)
    return tuple(gamma)


def async_cost(
    dag: WeightedDag,
    arch: Architecture,
    schedule: MbspSchedule,
    validate: bool = True,
    initial_red=None,
    initial_blue=None,
    required_blue=None,
) -> int:
    if validate:
        _require_valid(dag, arch, schedule, initial_red, initial_blue, required_blue)
    if not schedule.supersteps:
        return 0
    return max(_async_finishing_times(dag, arch, schedule, initial_blue))


def cost_breakdown(
    dag: WeightedDag,
    arch: Architecture,
    schedule: MbspSchedule,
    validate: bool = True,
) -> CostBreakdown:
    if validate:
        _require_valid(dag, arch, schedule, None, None, None)
    maxima = superstep_phase_maxima(dag, arch, schedule)
    total_sync = sum(c + s + l + arch.sync_cost for c, s, l in maxima)
    fts = _async_finishing_times(dag, arch, schedule) if schedule.supersteps else (0,) * schedule.processors
    return CostBreakdown(maxima, total_sync, fts, max(fts) if fts else 0)
