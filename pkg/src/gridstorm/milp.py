"""Backend-neutral mixed-integer linear programs.

A :class:`MilpModel` is a plain container of variables, linear constraints and
a linear objective.  It can be exported to the standard LP text format, handed
to an external solver through a command template, or solved in-process by
:func:`embedded_solve`, an exact LP-relaxation branch-and-bound intended for
desk-scale instances (roughly <= 5000 variables and <= 40 binaries).

The embedded solver is deterministic: best-first node order with FIFO
tie-breaking, branching on the most fractional binary with ties broken by the
lowest variable id.  Reruns on the same model produce identical solutions.
"""

from __future__ import annotations

import heapq
import math
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .util import dump_json, load_json

CONTINUOUS = "continuous"
BINARY = "binary"

_SENSES = ("<=", "=", ">=")
_STATUSES = ("optimal", "infeasible", "unbounded", "gap_limit", "time_limit")


class MilpError(Exception):
    """Invalid model or solver misuse."""


class EmbeddedSolverError(MilpError):
    """Numeric failure inside the embedded solver; never a silent wrong answer."""


class ExternalSolverError(MilpError):
    """External backend process or output-parsing failure."""


@dataclass
class Variable:
    idx: int
    kind: str
    lower: float
    upper: float
    name: str


@dataclass
class Constraint:
    terms: list          # [(var_idx, coeff)]
    sense: str           # one of "<=", "=", ">="
    rhs: float
    name: str


@dataclass
class SolverConfig:
    backend: str = "embedded"            # "embedded" or "external"
    external_command: str | None = None  # template with {lp} {sol} [{gap} {time_limit}]
    feas_tol: float = 1e-6
    int_tol: float = 1e-5
    rel_gap: float = 1e-4
    time_limit: float | None = None      # seconds of wall clock

    def __post_init__(self):
        if self.feas_tol <= 0 or self.int_tol <= 0 or self.rel_gap < 0:
            raise MilpError("solver tolerances must be positive")
        if self.backend not in ("embedded", "external"):
            raise MilpError(f"unknown backend {self.backend!r}")


@dataclass
class Solution:
    status: str
    objective_value: float | None
    assignment: np.ndarray | None   # var idx -> value
    mip_gap: float = 0.0
    nodes: int = 0
    wall_time: float = 0.0

    def value(self, idx: int) -> float:
        return float(self.assignment[idx])


class MilpModel:
    """Mutable MILP under construction; single-owner until solved."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective_sense = "max"
        self.objective_terms: list[tuple[int, float]] = []
        self.objective_constant = 0.0

    # -- construction -------------------------------------------------------

    def add_var(self, lower=0.0, upper=math.inf, kind=CONTINUOUS, name=None) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise MilpError(f"unknown variable kind {kind!r}")
        if kind == BINARY and not (0 <= lower and upper <= 1):
            raise MilpError(f"binary variable bounds [{lower}, {upper}] outside [0, 1]")
        if lower > upper:
            raise MilpError(f"variable lower bound {lower} above upper {upper}")
        idx = len(self.variables)
        self.variables.append(Variable(idx, kind, float(lower), float(upper),
                                       name or f"v{idx}"))
        return idx

    def add_constraint(self, terms, sense, rhs, name=None) -> int:
        if sense not in _SENSES:
            raise MilpError(f"unknown constraint sense {sense!r}")
        n = len(self.variables)
        for v, _ in terms:
            if not (0 <= v < n):
                raise MilpError(f"constraint references unknown variable {v}")
        cid = len(self.constraints)
        self.constraints.append(
            Constraint([(int(v), float(c)) for v, c in terms], sense, float(rhs),
                       name or f"c{cid}"))
        return cid

    def set_objective(self, sense, terms, constant=0.0):
        if sense not in ("max", "min"):
            raise MilpError(f"unknown objective sense {sense!r}")
        n = len(self.variables)
        for v, _ in terms:
            if not (0 <= v < n):
                raise MilpError(f"objective references unknown variable {v}")
        self.objective_sense = sense
        self.objective_terms = [(int(v), float(c)) for v, c in terms]
        self.objective_constant = float(constant)

    # -- introspection ------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_binaries(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY)

    def binary_indices(self) -> list[int]:
        return [v.idx for v in self.variables if v.kind == BINARY]

    def objective_of(self, x: np.ndarray) -> float:
        return self.objective_constant + sum(c * x[v] for v, c in self.objective_terms)

    def max_residual(self, x: np.ndarray) -> float:
        """Largest constraint violation of assignment x (0 when feasible)."""
        worst = 0.0
        for con in self.constraints:
            lhs = sum(c * x[v] for v, c in con.terms)
            if con.sense == "<=":
                worst = max(worst, lhs - con.rhs)
            elif con.sense == ">=":
                worst = max(worst, con.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - con.rhs))
        for var in self.variables:
            worst = max(worst, var.lower - x[var.idx], x[var.idx] - var.upper)
        return float(worst)


# ---------------------------------------------------------------------------
# LP text format
# ---------------------------------------------------------------------------

def _fmt_terms(terms, constant=0.0) -> str:
    parts = []
    for v, c in terms:
        name = f"x{v}"
        if not parts:
            parts.append(f"{c!r} {name}")
        elif c >= 0:
            parts.append(f"+ {c!r} {name}")
        else:
            parts.append(f"- {-c!r} {name}")
    if constant:
        parts.append(f"+ {constant!r}" if constant >= 0 else f"- {-constant!r}")
    if not parts:
        return "0"
    return " ".join(parts)


def export_lp(model: MilpModel, path) -> None:
    """Write the model in LP text format plus a reversible name map alongside.

    Variables become x<idx> and constraints c<idx> so any identifier is legal;
    the original names are stored in ``<path>.names.json``.
    """
    path = Path(path)
    lines = ["Maximize" if model.objective_sense == "max" else "Minimize"]
    lines.append(f" obj: {_fmt_terms(model.objective_terms, model.objective_constant)}")
    lines.append("Subject To")
    for i, con in enumerate(model.constraints):
        lines.append(f" c{i}: {_fmt_terms(con.terms)} {con.sense} {con.rhs!r}")
    lines.append("Bounds")
    for var in model.variables:
        lo, up = var.lower, var.upper
        name = f"x{var.idx}"
        if lo == -math.inf and up == math.inf:
            lines.append(f" {name} free")
        elif lo == -math.inf:
            lines.append(f" -infinity <= {name} <= {up!r}")
        elif up == math.inf:
            lines.append(f" {name} >= {lo!r}")
        else:
            lines.append(f" {lo!r} <= {name} <= {up!r}")
    lines.append("Binary")
    for var in model.variables:
        if var.kind == BINARY:
            lines.append(f" x{var.idx}")
    lines.append("End")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    dump_json(
        {
            "model_name": model.name,
            "variables": {f"x{v.idx}": v.name for v in model.variables},
            "constraints": {f"c{i}": c.name for i, c in enumerate(model.constraints)},
        },
        path.with_name(path.name + ".names.json"),
    )


def parse_lp(path) -> MilpModel:
    """Re-import a file written by :func:`export_lp` (round-trip inverse)."""
    path = Path(path)
    names = {}
    names_path = path.with_name(path.name + ".names.json")
    if names_path.exists():
        names = load_json(names_path)
    model = MilpModel(names.get("model_name", path.stem))

    section = None
    obj_sense = "max"
    obj_tokens: list[str] = []
    con_lines: list[str] = []
    bound_lines: list[str] = []
    binary_names: set[str] = set()
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        low = line.lower()
        if low in ("maximize", "minimize", "subject to", "bounds", "binary", "end"):
            section = low
            if low in ("maximize", "minimize"):
                obj_sense = "max" if low == "maximize" else "min"
            continue
        if section in ("maximize", "minimize"):
            obj_tokens.append(line)
        elif section == "subject to":
            con_lines.append(line)
        elif section == "bounds":
            bound_lines.append(line)
        elif section == "binary":
            binary_names.update(line.split())

    var_ids: dict[str, int] = {}
    bounds: dict[str, tuple[float, float]] = {}

    def parse_bound_token(tok: str) -> float:
        t = tok.lower()
        if t in ("-infinity", "-inf"):
            return -math.inf
        if t in ("infinity", "inf", "+infinity", "+inf"):
            return math.inf
        return float(tok)

    for line in bound_lines:
        toks = line.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            bounds[toks[0]] = (-math.inf, math.inf)
        elif len(toks) == 3:
            if toks[1] == ">=":
                bounds[toks[0]] = (parse_bound_token(toks[2]), math.inf)
            elif toks[1] == "<=":
                bounds[toks[0]] = (0.0, parse_bound_token(toks[2]))
            else:
                raise MilpError(f"cannot parse bound line {line!r}")
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            bounds[toks[2]] = (parse_bound_token(toks[0]), parse_bound_token(toks[4]))
        else:
            raise MilpError(f"cannot parse bound line {line!r}")

    # declare variables in id order (mangled names are x<idx>)
    mentioned = set(bounds) | binary_names
    for name in mentioned:
        if not name.startswith("x") or not name[1:].isdigit():
            raise MilpError(f"unexpected variable identifier {name!r}")
    for idx in sorted(int(n[1:]) for n in mentioned):
        name = f"x{idx}"
        lo, up = bounds.get(name, (0.0, math.inf))
        kind = BINARY if name in binary_names else CONTINUOUS
        if kind == BINARY and name not in bounds:
            lo, up = 0.0, 1.0
        vid = model.add_var(lo, up, kind, names.get("variables", {}).get(name, name))
        var_ids[name] = vid

    def parse_expr(tokens: list[str]):
        terms, constant, sign, coeff = [], 0.0, 1.0, None
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok == "+":
                if coeff is not None:
                    constant += sign * coeff
                sign, coeff = 1.0, None
            elif tok == "-":
                if coeff is not None:
                    constant += sign * coeff
                sign, coeff = -1.0, None
            elif tok in var_ids:
                terms.append((var_ids[tok], sign * (1.0 if coeff is None else coeff)))
                sign, coeff = 1.0, None
            else:
                if coeff is not None:
                    constant += sign * coeff
                    sign = 1.0
                coeff = float(tok)
            i += 1
        if coeff is not None:
            constant += sign * coeff
        return terms, constant

    obj_text = " ".join(obj_tokens)
    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]
    terms, constant = parse_expr(obj_text.split())
    model.set_objective(obj_sense, terms, constant)

    con_names = names.get("constraints", {})
    for line in con_lines:
        label = None
        body = line
        if ":" in line:
            label, body = line.split(":", 1)
            label = label.strip()
        toks = body.split()
        sense_pos = next(i for i, t in enumerate(toks) if t in _SENSES)
        lhs_terms, lhs_const = parse_expr(toks[:sense_pos])
        rhs = float(toks[sense_pos + 1]) - lhs_const
        model.add_constraint(lhs_terms, toks[sense_pos], rhs,
                             con_names.get(label, label))
    return model


# ---------------------------------------------------------------------------
# Embedded branch and bound
# ---------------------------------------------------------------------------

class _LpData:
    """Sparse LP relaxation data, built once and reused across B&B nodes."""

    def __init__(self, model: MilpModel):
        n = model.num_vars
        self.n = n
        sign = -1.0 if model.objective_sense == "max" else 1.0
        self.sign = sign
        c = np.zeros(n)
        for v, coeff in model.objective_terms:
            c[v] += sign * coeff
        self.c = c
        rows_ub, cols_ub, vals_ub, b_ub = [], [], [], []
        rows_eq, cols_eq, vals_eq, b_eq = [], [], [], []
        for con in model.constraints:
            if con.sense == "=":
                r = len(b_eq)
                for v, coeff in con.terms:
                    rows_eq.append(r); cols_eq.append(v); vals_eq.append(coeff)
                b_eq.append(con.rhs)
            else:
                flip = 1.0 if con.sense == "<=" else -1.0
                r = len(b_ub)
                for v, coeff in con.terms:
                    rows_ub.append(r); cols_ub.append(v); vals_ub.append(flip * coeff)
                b_ub.append(flip * con.rhs)
        self.A_ub = (sp.csr_matrix((vals_ub, (rows_ub, cols_ub)), shape=(len(b_ub), n))
                     if b_ub else None)
        self.b_ub = np.array(b_ub) if b_ub else None
        self.A_eq = (sp.csr_matrix((vals_eq, (rows_eq, cols_eq)), shape=(len(b_eq), n))
                     if b_eq else None)
        self.b_eq = np.array(b_eq) if b_eq else None
        self.lo = np.array([v.lower for v in model.variables])
        self.hi = np.array([v.upper for v in model.variables])

    def solve_lp(self, lo, hi):
        res = linprog(self.c, A_ub=self.A_ub, b_ub=self.b_ub,
                      A_eq=self.A_eq, b_eq=self.b_eq,
                      bounds=np.column_stack([lo, hi]), method="highs")
        if res.status == 4:
            raise EmbeddedSolverError(f"LP subroutine numeric failure: {res.message}")
        return res


def embedded_solve(model: MilpModel, cfg: SolverConfig | None = None) -> Solution:
    """Exact branch-and-bound over the LP relaxation.

    Best-first on node bound (FIFO on ties); branches on the most fractional
    binary, ties by lowest variable id.  Raises on numeric LP failure rather
    than returning a wrong answer.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()

    if model.num_vars == 0:
        val = model.objective_constant
        return Solution("optimal", val, np.zeros(0), 0.0, 0, time.perf_counter() - t0)

    data = _LpData(model)
    bins = np.array(model.binary_indices(), dtype=int)
    sign = data.sign

    inc_val = math.inf          # internal minimization incumbent
    inc_x = None
    nodes = 0
    timed_out = False
    counter = 0
    heap = [(-math.inf, counter, data.lo.copy(), data.hi.copy())]
    prune_eps = 1e-9

    def out_of_time() -> bool:
        return (cfg.time_limit is not None
                and time.perf_counter() - t0 > cfg.time_limit)

    stop_bound = None   # certified bound on open nodes when stopping early
    while heap:
        bound, _, lo, hi = heapq.heappop(heap)
        if inc_val < math.inf:
            scale = max(1.0, abs(inc_val))
            if bound >= inc_val - prune_eps * scale:
                stop_bound = inc_val      # nothing open can improve
                break
            if inc_val - bound <= cfg.rel_gap * scale:
                stop_bound = bound
                break
        if out_of_time():
            timed_out = True
            break
        res = data.solve_lp(lo, hi)
        nodes += 1
        if res.status == 2:       # infeasible node
            continue
        if res.status == 3:       # unbounded relaxation
            return Solution("unbounded", None, None, math.inf, nodes,
                            time.perf_counter() - t0)
        x, val = res.x, res.fun
        if inc_val < math.inf and val >= inc_val - prune_eps * max(1.0, abs(inc_val)):
            continue
        if bins.size:
            fr = np.abs(x[bins] - np.round(x[bins]))
            # already-fixed binaries cannot be fractional
            j = int(np.argmax(fr))
        if not bins.size or fr[j] <= cfg.int_tol:
            inc_val, inc_x = val, x
            continue
        branch_var = int(bins[j])
        lo0, hi0 = lo.copy(), hi.copy()
        hi0[branch_var] = 0.0
        lo1, hi1 = lo.copy(), hi.copy()
        lo1[branch_var] = 1.0
        counter += 1
        heapq.heappush(heap, (val, counter, lo0, hi0))
        counter += 1
        heapq.heappush(heap, (val, counter, lo1, hi1))

    wall = time.perf_counter() - t0
    if inc_x is None:
        if timed_out:
            return Solution("time_limit", None, None, math.inf, nodes, wall)
        return Solution("infeasible", None, None, math.inf, nodes, wall)

    if timed_out:
        status = "time_limit"
        gap = math.inf
    else:
        if stop_bound is None:    # tree exhausted: proven optimal
            gap = 0.0
        else:
            gap = max(0.0, (inc_val - min(stop_bound, inc_val))
                      / max(1.0, abs(inc_val)))
        # anything within the pruning epsilon counts as proven optimal
        status = "optimal" if gap <= 1e-9 else "gap_limit"

    resid = model.max_residual(inc_x)
    if resid > cfg.feas_tol:
        raise EmbeddedSolverError(
            f"solution residual {resid:.3e} exceeds feas_tol {cfg.feas_tol:.1e}")
    obj = sign * inc_val + model.objective_constant
    return Solution(status, float(obj), inc_x, float(gap), nodes, wall)


# ---------------------------------------------------------------------------
# External backend
# ---------------------------------------------------------------------------

def _parse_solution_file(path, model: MilpModel) -> Solution:
    status = None
    objective = None
    x = np.zeros(model.num_vars)
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        toks = raw.split()
        if not toks:
            continue
        if toks[0] == "status":
            status = toks[1]
        elif toks[0] == "objective":
            objective = float(toks[1])
        elif toks[0].startswith("x") and toks[0][1:].isdigit():
            x[int(toks[0][1:])] = float(toks[1])
        else:
            raise ExternalSolverError(f"cannot parse solution line {raw!r}")
    if status is None:
        raise ExternalSolverError("solution file missing status line")
    if status not in _STATUSES:
        raise ExternalSolverError(f"unknown solver status {status!r}")
    if status in ("optimal", "gap_limit", "time_limit") and objective is not None:
        return Solution(status, objective, x)
    return Solution(status, objective, None)


def external_solve(model: MilpModel, cfg: SolverConfig) -> Solution:
    """Run a solver command template on the exported LP file.

    The template receives ``{lp}`` and ``{sol}`` paths (plus optional ``{gap}``
    and ``{time_limit}``); the command must write a solution exchange file of
    ``status`` / ``objective`` / ``<var> <value>`` lines.
    """
    if not cfg.external_command:
        raise ExternalSolverError("external backend selected but no solver command "
                                  "configured (flag --solver-cmd or GRIDSTORM_SOLVER_CMD)")
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="gridstorm_lp_") as tmp:
        lp_path = Path(tmp) / "model.lp"
        sol_path = Path(tmp) / "model.sol"
        export_lp(model, lp_path)
        cmd = cfg.external_command.format(
            lp=lp_path, sol=sol_path, gap=cfg.rel_gap,
            time_limit=cfg.time_limit if cfg.time_limit is not None else 0)
        try:
            proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
        except OSError as exc:
            raise ExternalSolverError(f"cannot run solver command {cmd!r}: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalSolverError(
                f"solver command failed (exit {proc.returncode}): {proc.stderr.strip()}")
        if not sol_path.exists():
            raise ExternalSolverError("solver command wrote no solution file")
        solution = _parse_solution_file(sol_path, model)
    solution.wall_time = time.perf_counter() - t0
    if solution.status == "optimal":
        resid = model.max_residual(solution.assignment)
        if resid > cfg.feas_tol:
            raise ExternalSolverError(
                f"external solution residual {resid:.3e} exceeds feas_tol")
    return solution


def write_solution_file(solution: Solution, path) -> None:
    """Emit the solution exchange format (used by solver wrappers and tests)."""
    lines = [f"status {solution.status}"]
    if solution.objective_value is not None:
        lines.append(f"objective {solution.objective_value!r}")
    if solution.assignment is not None:
        for idx, val in enumerate(solution.assignment):
            lines.append(f"x{idx} {float(val)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def solve(model: MilpModel, cfg: SolverConfig | None = None) -> Solution:
    """Solve with the configured backend (embedded by default)."""
    cfg = cfg or SolverConfig()
    if cfg.backend == "external":
        return external_solve(model, cfg)
    return embedded_solve(model, cfg)
