"""Exception types shared across the package."""


class MbspError(Exception):
    """Base class for all package-specific errors."""


class DagFormatError(MbspError):
    """Malformed DAG file. Carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CycleError(MbspError):
    """The graph (or a quotient of it) contains a directed cycle."""


class ScheduleFormatError(MbspError):
    """Malformed schedule file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PreconditionError(MbspError):
    """A pebbling transition was applied in a state that forbids it."""

    def __init__(self, rule, processor, node, detail=""):
        self.rule = rule
        self.processor = processor
        self.node = node
        msg = f"{rule}(p={processor}, v={node}) precondition violated"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class MemoryBoundError(MbspError):
    """A processor's cached memory weight exceeded the cache capacity."""

    def __init__(self, processor, used, capacity):
        self.processor = processor
        self.used = used
        self.capacity = capacity
        super().__init__(
            f"processor {processor} holds memory weight {used} > capacity {capacity}"
        )


class InfeasibleError(MbspError):
    """No valid schedule exists for the given cache capacity."""


class SolverError(MbspError):
    """External solver could not be spawned or returned unusable output."""


class SolutionParseError(MbspError):
    """Solver output did not match the expected dialect."""


class WarmStartError(MbspError):
    """A schedule could not be encoded as a feasible model assignment."""


class DecodeError(MbspError):
    """A solver assignment could not be decoded into a valid schedule."""


class GuardExceeded(MbspError):
    """Instance too large for the exhaustive optimizer."""
