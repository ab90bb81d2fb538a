"""Superstep-structured pebbling schedules and their replay validator.

A schedule is a sequence of supersteps; each superstep gives every
processor four phases in order: compute (computes and deletes), save,
delete, load. Red pebbles are per-processor cache residency, the blue
pebble set is shared slow memory. The validator replays the transition
rules exactly: per-processor state within a superstep, with the blue
sets merged across processors once per superstep at the save/delete
boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .dag import Architecture, WeightedDag
from .errors import MemoryBoundError, PreconditionError, ScheduleFormatError


class Kind(enum.Enum):
    LOAD = "L"
    SAVE = "S"
    COMPUTE = "C"
    DELETE = "D"


@dataclass(frozen=True)
class Transition:
    kind: Kind
    processor: int
    node: int


PHASES = ("comp", "save", "del", "load")

_PHASE_KINDS = {
    "comp": (Kind.COMPUTE, Kind.DELETE),
    "save": (Kind.SAVE,),
    "del": (Kind.DELETE,),
    "load": (Kind.LOAD,),
}


@dataclass(frozen=True)
class ProcessorSuperstep:
    """One processor's four transition phases within a superstep."""

    comp_phase: tuple[Transition, ...] = ()
    save_phase: tuple[Transition, ...] = ()
    del_phase: tuple[Transition, ...] = ()
    load_phase: tuple[Transition, ...] = ()

    def phase(self, name: str) -> tuple[Transition, ...]:
        return getattr(self, f"{name}_phase")

    @property
    def empty(self) -> bool:
        return not (self.comp_phase or self.save_phase or self.del_phase or self.load_phase)


@dataclass(frozen=True)
class MbspSchedule:
    """supersteps[i][p] is processor p's phases in superstep i."""

    processors: int
    supersteps: tuple[tuple[ProcessorSuperstep, ...], ...]

    def __post_init__(self):
        for step in self.supersteps:
            if len(step) != self.processors:
                raise ValueError("superstep width differs from processor count")

    def transitions(self, processor: int):
        """Processor's transitions flattened across all supersteps, in order."""
        for step in self.supersteps:
            ps = step[processor]
            for name in PHASES:
                yield from ps.phase(name)


@dataclass(frozen=True)
class Configuration:
    """Red pebble sets per processor plus the shared blue pebble set."""

    red: tuple[frozenset[int], ...]
    blue: frozenset[int]


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    message: str = "valid"
    superstep: int | None = None
    processor: int | None = None
    phase: str | None = None
    position: int | None = None

    def location(self) -> str:
        if self.superstep is None:
            return ""
        return (
            f"superstep {self.superstep}, processor {self.processor}, "
            f"phase {self.phase}, position {self.position}"
        )


def initial_configuration(
    dag: WeightedDag,
    arch: Architecture,
    initial_red: tuple[frozenset[int], ...] | None = None,
    initial_blue: frozenset[int] | None = None,
) -> Configuration:
    """Sources blue, caches empty, unless boundary overrides are given."""
    red = initial_red or tuple(frozenset() for _ in range(arch.processors))
    blue = dag.sources if initial_blue is None else frozenset(initial_blue)
    return Configuration(tuple(frozenset(r) for r in red), frozenset(blue))


def _check_memory(dag, arch, red_p, processor):
    used = sum(dag.mu(v) for v in red_p)
    if used > arch.cache_capacity:
        raise MemoryBoundError(processor, used, arch.cache_capacity)


def apply_transition(
    dag: WeightedDag, arch: Architecture, config: Configuration, t: Transition
) -> Configuration:
    """Apply one rule against the shared-blue view of the configuration."""
    p, v = t.processor, t.node
    red = list(config.red)
    blue = config.blue
    if t.kind is Kind.LOAD:
        if v not in blue:
            raise PreconditionError("LOAD", p, v, "no blue pebble")
        red[p] = red[p] | {v}
        _check_memory(dag, arch, red[p], p)
    elif t.kind is Kind.SAVE:
        if v not in red[p]:
            raise PreconditionError("SAVE", p, v, "no red pebble")
        blue = blue | {v}
    elif t.kind is Kind.COMPUTE:
        if v in dag.sources:
            raise PreconditionError("COMPUTE", p, v, "source nodes are not computed")
        missing = [u for u in dag.parents[v] if u not in red[p]]
        if missing:
            raise PreconditionError("COMPUTE", p, v, f"parent {missing[0]} not in cache")
        red[p] = red[p] | {v}
        _check_memory(dag, arch, red[p], p)
    elif t.kind is Kind.DELETE:
        if v not in red[p]:
            raise PreconditionError("DELETE", p, v, "no red pebble")
        red[p] = red[p] - {v}
    return Configuration(tuple(red), blue)


class _ReplayViolation(Exception):
    def __init__(self, message, superstep, processor, phase, position):
        super().__init__(message)
        self.report = ValidationReport(False, message, superstep, processor, phase, position)


def _replay(dag, arch, schedule, initial_red, initial_blue):
    """Replay all transitions; returns the final configuration.

    Per superstep, comp and save phases run on processor-local state, the
    blue sets merge once at the save/del boundary, then del and load
    phases run against the merged set. Raises _ReplayViolation on the
    first broken rule.
    """
    start = initial_configuration(dag, arch, initial_red, initial_blue)
    for p, r in enumerate(start.red):
        used = sum(dag.mu(v) for v in r)
        if used > arch.cache_capacity:
            raise _ReplayViolation(
                f"initial cache overfull on processor {p} ({used} > {arch.cache_capacity})",
                None, p, None, None,
            )
    red = list(start.red)
    blue = start.blue
    single = Architecture(1, arch.cache_capacity, arch.comm_cost, arch.sync_cost)

    for s, step in enumerate(schedule.supersteps):
        blue_local = [blue] * arch.processors
        for phases in (("comp", "save"), ("del", "load")):
            if phases[0] == "del":
                blue = frozenset().union(*blue_local)
                blue_local = [blue] * arch.processors
            for p in range(arch.processors):
                for name in phases:
                    for i, t in enumerate(step[p].phase(name)):
                        if t.kind not in _PHASE_KINDS[name]:
                            raise _ReplayViolation(
                                f"{t.kind.name} transition not allowed in {name} phase",
                                s, p, name, i,
                            )
                        if t.processor != p:
                            raise _ReplayViolation(
                                f"transition for processor {t.processor} listed under processor {p}",
                                s, p, name, i,
                            )
                        try:
                            res = apply_transition(
                                dag, single,
                                Configuration((red[p],), blue_local[p]),
                                Transition(t.kind, 0, t.node),
                            )
                        except (PreconditionError, MemoryBoundError) as exc:
                            raise _ReplayViolation(str(exc), s, p, name, i) from exc
                        red[p] = res.red[0]
                        blue_local[p] = res.blue
        blue = frozenset().union(*blue_local)
    return Configuration(tuple(red), blue)


def validate_schedule(
    dag: WeightedDag,
    arch: Architecture,
    schedule: MbspSchedule,
    initial_red: tuple[frozenset[int], ...] | None = None,
    initial_blue: frozenset[int] | None = None,
    required_blue: frozenset[int] | None = None,
) -> ValidationReport:
    """Replay the schedule; report validity or the first violated rule.

    Boundary overrides support sub-schedules: carried-over red pebbles,
    a wider initially-blue set, and a terminal blue requirement other
    than the sinks.
    """
    if schedule.processors != arch.processors:
        return ValidationReport(False, "schedule processor count differs from architecture")
    try:
        final = _replay(dag, arch, schedule, initial_red, initial_blue)
    except _ReplayViolation as exc:
        return exc.report
    required = dag.sinks if required_blue is None else frozenset(required_blue)
    missing = sorted(required - final.blue)
    if missing:
        return ValidationReport(
            False, f"terminal state violated: node {missing[0]} has no blue pebble"
        )
    return ValidationReport(True)


def final_configuration(
    dag: WeightedDag,
    arch: Architecture,
    schedule: MbspSchedule,
    initial_red=None,
    initial_blue=None,
) -> Configuration:
    """Configuration after replaying a schedule known to be valid."""
    try:
        return _replay(dag, arch, schedule, initial_red, initial_blue)
    except _ReplayViolation as exc:
        raise ValueError(f"invalid schedule: {exc.report.message}") from exc


def serialize_schedule(schedule: MbspSchedule) -> str:
    """Line format: a `superstep k` header, then `p <proc> <phase> <kind> <node>`."""
    lines = []
    for s, step in enumerate(schedule.supersteps):
        lines.append(f"superstep {s}")
        for p in range(schedule.processors):
            for name in PHASES:
                for t in step[p].phase(name):
                    lines.append(f"p {p} {name} {t.kind.value} {t.node}")
    return "\n".join(lines) + "\n" if lines else ""


def parse_schedule(text: str, processors: int | None = None) -> MbspSchedule:
    """Inverse of serialize_schedule; bit-exact round trip on its output."""
    steps: list[dict[int, dict[str, list[Transition]]]] = []
    cur: dict[int, dict[str, list[Transition]]] | None = None
    max_proc = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        tok = line.split()
        if tok[0] == "superstep":
            if len(tok) != 2 or not tok[1].isdigit():
                raise ScheduleFormatError("malformed superstep header", lineno)
            if int(tok[1]) != len(steps):
                raise ScheduleFormatError(
                    f"superstep headers must be consecutive, got {tok[1]}", lineno
                )
            cur = {}
            steps.append(cur)
            continue
        if tok[0] != "p" or len(tok) != 5:
            raise ScheduleFormatError(f"unrecognized line: {line!r}", lineno)
        if cur is None:
            raise ScheduleFormatError("transition before any superstep header", lineno)
        try:
            p = int(tok[1])
            phase = tok[2]
            kind = Kind(tok[3])
            node = int(tok[4])
        except ValueError:
            raise ScheduleFormatError(f"malformed transition: {line!r}", lineno) from None
        if phase not in PHASES:
            raise ScheduleFormatError(f"unknown phase {phase!r}", lineno)
        if kind not in _PHASE_KINDS[phase]:
            raise ScheduleFormatError(
                f"{kind.name} transition not allowed in {phase} phase", lineno
            )
        max_proc = max(max_proc, p)
        cur.setdefault(p, {name: [] for name in PHASES})[phase].append(
            Transition(kind, p, node)
        )
    P = processors if processors is not None else max_proc + 1
    if P < max_proc + 1:
        raise ScheduleFormatError(f"processor index {max_proc} out of range for P={P}")
    P = max(P, 1)
    out = []
    for cur in steps:
        row = []
        for p in range(P):
            phases = cur.get(p, {name: [] for name in PHASES})
            row.append(
                ProcessorSuperstep(
                    tuple(phases["comp"]),
                    tuple(phases["save"]),
                    tuple(phases["del"]),
                    tuple(phases["load"]),
                )
            )
        out.append(tuple(row))
    return MbspSchedule(P, tuple(out))


def build_schedule(processors: int, steps) -> MbspSchedule:
    """Convenience constructor from per-superstep {processor: {phase: [(kind, node)]}} dicts."""
    sss = []
    for step in steps:
        row = []
        for p in range(processors):
            phases = step.get(p, {})
            row.append(
                ProcessorSuperstep(
                    tuple(Transition(k, p, v) for k, v in phases.get("comp", ())),
                    tuple(Transition(k, p, v) for k, v in phases.get("save", ())),
                    tuple(Transition(k, p, v) for k, v in phases.get("del", ())),
                    tuple(Transition(k, p, v) for k, v in phases.get("load", ())),
                )
            )
        sss.append(tuple(row))
    return MbspSchedule(processors, tuple(sss))
