"""Stand-alone MILP solving command: reads a CPLEX-LP file, solves it
with HiGHS (through scipy), and writes a plain name/value solution file
with a CBC-style status header.

This is the packaged default for the solver command template, so the
toolchain works out of the box; any other LP-reading solver can be
substituted through MBSP_SOLVER_CMD. A warm-start file argument is
accepted for interface compatibility and ignored (no MIP-start API);
the calling bridge enforces incumbent semantics itself.

Usage: python -m mbsp.lpsolve MODEL.lp OUT.sol [--time-limit S] [--warmstart F]
"""

from __future__ import annotations

import argparse
import math
import re
import sys

_SECTION_OF = {
    "minimize": "objective",
    "minimise": "objective",
    "min": "objective",
    "maximize": "objective-max",
    "maximise": "objective-max",
    "max": "objective-max",
    "subject to": "constraints",
    "such that": "constraints",
    "st": "constraints",
    "s.t.": "constraints",
    "bounds": "bounds",
    "bound": "bounds",
    "binary": "binary",
    "binaries": "binary",
    "bin": "binary",
    "general": "general",
    "generals": "general",
    "gen": "general",
    "end": "end",
}

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*$")


class LpParseError(ValueError):
    pass


def _is_number(tok: str) -> bool:
    if tok.lower().lstrip("+-") in ("inf", "infinity"):
        return True
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _to_number(tok: str) -> float:
    low = tok.lower()
    if low.lstrip("+-") in ("inf", "infinity"):
        return -math.inf if low.startswith("-") else math.inf
    return float(tok)


def _parse_terms(tokens: list[str], note) -> dict[str, float]:
    """Linear expression as {name: coefficient}; names are registered."""
    terms: dict[str, float] = {}
    sign, coef = 1.0, None
    for tok in tokens:
        if tok == "+":
            continue
        if tok == "-":
            sign = -sign
            continue
        if _is_number(tok):
            coef = (coef if coef is not None else 1.0) * _to_number(tok)
            continue
        if not _NAME_RE.match(tok):
            raise LpParseError(f"unexpected token {tok!r} in expression")
        note(tok)
        terms[tok] = terms.get(tok, 0.0) + sign * (coef if coef is not None else 1.0)
        sign, coef = 1.0, None
    if coef is not None:
        raise LpParseError("dangling constant in expression")
    return terms


def parse_lp(text: str):
    """Parse the LP dialect the bridge emits (one row per line).

    Returns (names, objective, constraints, bounds, binaries, generals,
    maximize) with constraints as (terms, sense, rhs) triples.
    """
    names: list[str] = []
    seen: set[str] = set()

    def note(name):
        if name not in seen:
            seen.add(name)
            names.append(name)

    objective: dict[str, float] = {}
    constraints: list[tuple[dict[str, float], str, float]] = []
    bounds: dict[str, tuple[float, float]] = {}
    binaries: set[str] = set()
    generals: set[str] = set()
    maximize = False
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("\\")[0].strip()
        if not line:
            continue
        key = line.lower()
        if key in _SECTION_OF or key.replace(" ", "") in ("subjectto",):
            section = _SECTION_OF.get(key, "constraints")
            if section == "objective-max":
                maximize, section = True, "objective"
            if section == "end":
                break
            continue
        if section is None:
            raise LpParseError(f"line {lineno}: content before any section")
        if ":" in line and section in ("objective", "constraints"):
            line = line.split(":", 1)[1].strip()
        tokens = re.findall(r"<=|>=|=|[+\-]|[^\s+\-<>=]+", line)
        if section == "objective":
            for name, c in _parse_terms(tokens, note).items():
                objective[name] = objective.get(name, 0.0) + c
        elif section == "constraints":
            sense_pos = [i for i, t in enumerate(tokens) if t in ("<=", ">=", "=")]
            if not sense_pos:
                raise LpParseError(f"line {lineno}: constraint missing relation")
            i = sense_pos[-1]
            rhs_tokens = tokens[i + 1 :]
            sign = -1.0 if "-" in rhs_tokens else 1.0
            nums = [t for t in rhs_tokens if _is_number(t)]
            if len(nums) != 1:
                raise LpParseError(f"line {lineno}: malformed right-hand side")
            constraints.append(
                (_parse_terms(tokens[:i], note), tokens[i], sign * _to_number(nums[0]))
            )
        elif section == "bounds":
            if tokens[-1].lower() == "free" and len(tokens) == 2:
                note(tokens[0])
                bounds[tokens[0]] = (-math.inf, math.inf)
                continue
            # accepted forms: lb <= x <= ub | x <= ub | x >= lb | x = v
            def signed(tok_list):
                if tok_list and tok_list[0] in ("+", "-"):
                    s = -1.0 if tok_list[0] == "-" else 1.0
                    return s * _to_number(tok_list[1])
                return _to_number(tok_list[0])

            parts = re.split(r"(<=|>=|=)", line.replace(" ", ""))
            parts = [p for p in parts if p]
            try:
                if len(parts) == 5 and parts[1] == "<=" and parts[3] == "<=":
                    name = parts[2]
                    note(name)
                    bounds[name] = (_to_number(parts[0]), _to_number(parts[4]))
                elif len(parts) == 3 and _NAME_RE.match(parts[0]):
                    name = parts[0]
                    note(name)
                    lo, hi = bounds.get(name, (0.0, math.inf))
                    val = _to_number(parts[2])
                    if parts[1] == "<=":
                        bounds[name] = (lo, val)
                    elif parts[1] == ">=":
                        bounds[name] = (val, hi)
                    else:
                        bounds[name] = (val, val)
                elif len(parts) == 3:
                    name = parts[2]
                    note(name)
                    lo, hi = bounds.get(name, (0.0, math.inf))
                    if parts[1] == "<=":  # lb <= x
                        bounds[name] = (_to_number(parts[0]), hi)
                    else:
                        bounds[name] = (lo, _to_number(parts[0]))
                else:
                    raise ValueError
            except ValueError:
                raise LpParseError(f"line {lineno}: unsupported bounds row {raw!r}") from None
        elif section in ("binary", "general"):
            for tok in tokens:
                if not _NAME_RE.match(tok):
                    raise LpParseError(f"line {lineno}: bad variable name {tok!r}")
                note(tok)
                (binaries if section == "binary" else generals).add(tok)
    return names, objective, constraints, bounds, binaries, generals, maximize


def solve_lp_text(text: str, time_limit: float | None = None):
    """Solve; returns (status string, objective value or None, {name: value})."""
    import numpy as np
    from scipy import sparse
    from scipy.optimize import Bounds, LinearConstraint, milp

    names, objective, constraints, bounds, binaries, generals, maximize = parse_lp(text)
    index = {name: k for k, name in enumerate(names)}
    nvar = len(names)
    c = np.zeros(nvar)
    for name, coef in objective.items():
        c[index[name]] = coef
    if maximize:
        c = -c
    lo = np.zeros(nvar)
    hi = np.full(nvar, math.inf)
    for name in binaries:
        hi[index[name]] = 1.0
    for name, (a, bnd) in bounds.items():
        lo[index[name]] = a
        hi[index[name]] = bnd
    integrality = np.zeros(nvar)
    for name in binaries | generals:
        integrality[index[name]] = 1

    kwargs = {}
    if constraints:
        rows, cols, data, cl, cu = [], [], [], [], []
        for rix, (terms, sense, rhs) in enumerate(constraints):
            for name, coef in terms.items():
                rows.append(rix)
                cols.append(index[name])
                data.append(coef)
            cl.append(rhs if sense in (">=", "=") else -math.inf)
            cu.append(rhs if sense in ("<=", "=") else math.inf)
        A = sparse.csc_matrix((data, (rows, cols)), shape=(len(constraints), nvar))
        kwargs["constraints"] = LinearConstraint(A, cl, cu)
    options = {"presolve": True}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(
        c=c, integrality=integrality, bounds=Bounds(lo, hi), options=options, **kwargs
    )
    values: dict[str, float] = {}
    obj = None
    if res.x is not None:
        for name, k in index.items():
            x = float(res.x[k])
            values[name] = round(x) if integrality[k] else x
        obj = float(c @ res.x) * (-1 if maximize else 1)
    status = {0: "Optimal", 1: "Stopped", 2: "Infeasible", 3: "Unbounded"}.get(
        res.status, "Error"
    )
    if status == "Stopped" and res.x is None:
        status = "Timeout"
    return status, obj, values


def _fmt(x: float) -> str:
    return str(int(x)) if x == int(x) else f"{x:.12g}"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mbsp.lpsolve")
    ap.add_argument("lp")
    ap.add_argument("sol")
    ap.add_argument("--time-limit", type=float, default=None)
    ap.add_argument("--warmstart", default=None, help="accepted and ignored")
    args = ap.parse_args(argv)
    with open(args.lp) as fh:
        text = fh.read()
    try:
        status, obj, values = solve_lp_text(text, args.time_limit)
    except LpParseError as exc:
        with open(args.sol, "w") as fh:
            fh.write(f"Error - {exc}\n")
        print(f"parse error: {exc}", file=sys.stderr)
        return 3
    with open(args.sol, "w") as fh:
        if obj is not None:
            fh.write(f"{status} - objective value {_fmt(obj)}\n")
        else:
            fh.write(f"{status}\n")
        for name, value in values.items():
            fh.write(f"{name} {_fmt(value)}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
