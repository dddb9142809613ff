"""Semidefinite feasibility for :class:`~tdcomp.lmi.LmiProblem` plus delay sweeps.

Feasibility is decided by the auxiliary program

    minimize t  subject to   F_neg(x) <= t I,   F_pos(x) >= -t I,
                             sum of traces of the positive blocks <= 1,  t >= -1

solved with the cvxopt interior-point code.  The solver only proposes a
point: a problem counts as feasible when an independent eigenvalue check of
every constraint, evaluated from the builder's own matrix formulas, shows
margin at least ``eps / 2`` at that point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dde import rightmost_roots
from .errors import NoFeasibleStartError, SingularMatrixError, SolverError
from .linalg import max_eig_sym, min_eig_sym, solve as lin_solve
from .lmi import LmiProblem

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INCONCLUSIVE = "inconclusive"


def default_lambda_grid() -> tuple[float, ...]:
    """``{+-10^k / 2 : k = -2..2}`` and 0, ordered from moderate to extreme."""
    mags = [0.5 * 10.0 ** k for k in (0, 1, -1, 2, -2)]
    return tuple(mags + [-m for m in mags] + [0.0])


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    margin_factor: float = 1e-6  # eps = margin_factor * (1 + ||data||)
    tolerance: float = 1e-9
    lambda_grid: tuple = field(default_factory=default_lambda_grid)
    max_cond_X: float = 1e12
    root_check: bool = True
    variable_bound: float = 1e3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise SolverError("max_iterations must be at least 1")
        if not self.margin_factor > 0:
            raise SolverError("feasibility margin must be positive")
        if len(self.lambda_grid) == 0:
            raise SolverError("lambda grid must not be empty")

    def epsilon(self, problem: LmiProblem) -> float:
        return self.margin_factor * problem.scale


@dataclass
class Verdict:
    status: str
    assignment: dict = field(default_factory=dict)
    margin: float = float("nan")
    objective: float = float("nan")
    iterations: int = 0
    lam: float | None = None
    gains: dict = field(default_factory=dict)
    abscissa: float | None = None  # closed-loop rightmost root when synthesizing
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def certify(problem: LmiProblem, values: dict) -> float:
    """Smallest signed distance of any constraint from violation (positive = satisfied)."""
    worst = math.inf
    for name, mat in problem.evaluate(values).items():
        sense = _sense(problem, name)
        d = -max_eig_sym(mat) if sense == "neg" else min_eig_sym(mat)
        worst = min(worst, d)
    return worst


def _sense(problem, name):
    for c in problem.all_constraints():
        if c.name == name:
            return c.sense
    raise KeyError(name)


def _solve_raw(problem: LmiProblem, cfg: SolverConfig, bound: float):
    from cvxopt import matrix, solvers

    forms = problem.affine
    nvar = problem.n_scalar
    active = np.zeros(nvar, dtype=bool)
    for f in forms:
        active |= np.any(f.Fi.reshape(nvar, -1) != 0, axis=1)
    idx = np.flatnonzero(active)
    k = len(idx)

    Gs, hs = [], []
    trace_row = np.zeros(k + 1)
    for f in forms:
        size = f.F0.shape[0]
        cols = f.Fi[idx].reshape(k, -1).T  # size^2 x k
        eye = np.eye(size).reshape(-1, 1)
        if f.sense == "neg":
            g = np.hstack([cols, -eye])
            h = -f.F0
        else:
            g = np.hstack([-cols, -eye])
            h = f.F0
            trace_row[:k] += np.trace(f.Fi[idx], axis1=1, axis2=2)
        Gs.append(matrix(g))
        hs.append(matrix(np.ascontiguousarray(h)))
    c = np.zeros(k + 1)
    c[-1] = 1.0
    # trace normalization, t >= -1 and a box |x_i| <= bound keep the program compact
    gl = np.zeros((2 + 2 * k, k + 1))
    hl = np.zeros(2 + 2 * k)
    gl[0] = trace_row
    hl[0] = 1.0
    gl[1, -1] = -1.0
    hl[1] = 1.0
    gl[2:2 + k, :k] = np.eye(k)
    gl[2 + k:, :k] = -np.eye(k)
    hl[2:] = bound
    opts = {"show_progress": False, "maxiters": cfg.max_iterations,
            "abstol": cfg.tolerance, "reltol": cfg.tolerance, "feastol": 1e-10}
    try:
        sol = solvers.sdp(matrix(c), Gl=matrix(gl), hl=matrix(hl), Gs=Gs, hs=hs, options=opts)
    except (ValueError, ArithmeticError) as exc:
        return None, math.nan, math.nan, 0, f"solver failure: {exc}"
    if sol["x"] is None:
        return None, math.nan, math.nan, sol.get("iterations", 0), sol["status"]
    z = np.array(sol["x"]).ravel()
    x = np.zeros(nvar)
    x[idx] = z[:k]
    dual = sol.get("dual objective")
    return x, float(z[-1]), (math.nan if dual is None else float(dual)), \
        int(sol.get("iterations", 0)), sol["status"]


def solve(problem: LmiProblem, cfg: SolverConfig | None = None) -> Verdict:
    """Decide strict feasibility of one LMI problem (the scalar ``lam`` is fixed).

    The interior-point code occasionally breaks down on nearly degenerate
    instances; the box bound is then shrunk or widened and the solve repeated.
    """
    cfg = cfg or SolverConfig()
    b = cfg.variable_bound
    verdict = None
    for bound in (b, 0.1 * b, 10.0 * b):
        verdict = _solve_once(problem, cfg, bound)
        if verdict.feasible or (verdict.status == INFEASIBLE and verdict.message == "optimal"):
            return verdict
    return verdict


def _solve_once(problem: LmiProblem, cfg: SolverConfig, bound: float) -> Verdict:
    eps = cfg.epsilon(problem)
    x, t_star, dual, iters, status = _solve_raw(problem, cfg, bound)
    if x is None:
        return Verdict(INCONCLUSIVE, iterations=iters, lam=problem.lam, message=str(status))
    values = problem.unpack(x)
    margin = certify(problem, values)
    if margin >= 0.5 * eps:
        # the independent recheck is authoritative even if the solver stopped early
        return Verdict(FEASIBLE, values, margin, t_star, iters, problem.lam, message=status)
    budget_hit = iters >= cfg.max_iterations
    if budget_hit and not (math.isfinite(dual) and dual > -eps):
        return Verdict(INCONCLUSIVE, values, margin, t_star, iters, problem.lam,
                       message="iteration budget exhausted")
    return Verdict(INFEASIBLE, values, margin, t_star, iters, problem.lam, message=status)


def extract_gains(problem: LmiProblem, values: dict, max_cond=1e12) -> dict:
    X = values["X"]
    cond = float(np.linalg.cond(X))
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularMatrixError(f"X is ill conditioned (cond={cond:.3g})", cond)
    return {name: lin_solve(X, values[var]) for name, var in problem.gain_rule.items()}


def closed_loop_abscissa(problem: LmiProblem, gains: dict) -> float:
    return max(rightmost_roots(s).abscissa for s in problem.closed_loop(gains))


def solve_synthesis(problem: LmiProblem, cfg: SolverConfig | None = None) -> Verdict:
    """Search the free-weighting scalar; return the first certified, stabilizing design."""
    cfg = cfg or SolverConfig()
    if not problem.is_synthesis:
        raise SolverError(f"{problem.lemma} is not a synthesis problem")
    saw_inconclusive = False
    last = None
    family = problem.lambda_family()
    for lam in cfg.lambda_grid:
        prob = family(lam)
        verdict = solve(prob, cfg)
        last = verdict
        if verdict.status == INCONCLUSIVE:
            saw_inconclusive = True
            continue
        if not verdict.feasible:
            continue
        try:
            gains = extract_gains(prob, verdict.assignment, cfg.max_cond_X)
        except SingularMatrixError as exc:
            log.debug("lambda %g: %s", lam, exc)
            continue
        if cfg.root_check and prob.closed_loop is not None:
            absc = closed_loop_abscissa(prob, gains)
            if not absc < 0:
                log.warning("lambda %g: certificate found but closed loop abscissa %g", lam, absc)
                continue
            verdict.abscissa = absc
        verdict.gains = gains
        return verdict
    status = INCONCLUSIVE if saw_inconclusive else INFEASIBLE
    out = Verdict(status, message="no lambda on the grid produced a certified design")
    if last is not None:
        out.iterations = last.iterations
    return out


def decide(problem: LmiProblem, cfg: SolverConfig | None = None) -> Verdict:
    return solve_synthesis(problem, cfg) if problem.is_synthesis else solve(problem, cfg)


@dataclass
class DelaySweepResult:
    query: str
    certified_max_delay: float
    first_rejected: float | None
    trace: list  # (tau, status)
    reached_upper: bool = False
    best: Verdict | None = None

    @property
    def inconclusive(self) -> int:
        return sum(1 for _, s in self.trace if s == INCONCLUSIVE)

    def monotone_consistent(self) -> bool:
        """No accepted delay lies above a rejected one."""
        ok = [t for t, s in self.trace if s == FEASIBLE]
        bad = [t for t, s in self.trace if s != FEASIBLE]
        return not ok or not bad or max(ok) < min(bad)


def max_delay(builder: Callable[[float], LmiProblem], tau_lo: float, tau_hi: float,
              tol: float = 0.01, cfg: SolverConfig | None = None,
              query: str = "") -> DelaySweepResult:
    """Bisect for the largest delay at which ``builder(delay)`` is certified feasible."""
    cfg = cfg or SolverConfig()
    if not tol > 0 or not tau_hi > tau_lo:
        raise SolverError("need tol > 0 and tau_hi > tau_lo")
    trace = []

    def probe(tau):
        v = decide(builder(tau), cfg)
        trace.append((tau, v.status))
        return v

    best = probe(tau_lo)
    if not best.feasible:
        raise NoFeasibleStartError(f"not feasible at the starting delay {tau_lo} ({best.status})")
    top = probe(tau_hi)
    if top.feasible:
        return DelaySweepResult(query, tau_hi, None, trace, True, top)
    lo, hi = tau_lo, tau_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        v = probe(mid)
        if v.feasible:
            lo, best = mid, v
        else:
            hi = mid
    return DelaySweepResult(query, lo, hi, trace, False, best)


def sweep_upper(builder: Callable[[float], LmiProblem], grid, tol: float = 0.01,
                cfg: SolverConfig | None = None, query: str = "") -> DelaySweepResult:
    """Scan an increasing grid of upper limits, then bisect after the last feasible point.

    Used for interval conditions where the lower limit is fixed by the caller
    and the scan keeps the search robust to non-monotone feasibility.
    """
    cfg = cfg or SolverConfig()
    grid = sorted(float(g) for g in grid)
    trace = []
    best, last_ok, first_bad = None, None, None
    for g in grid:
        v = decide(builder(g), cfg)
        trace.append((g, v.status))
        if v.feasible:
            best, last_ok = v, g
        else:
            first_bad = g
            break
    if last_ok is None:
        raise NoFeasibleStartError(
            f"not feasible at the first grid point {grid[0]} ({trace[0][1]})")
    if first_bad is None:
        return DelaySweepResult(query, last_ok, None, trace, True, best)
    lo, hi = last_ok, first_bad
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        v = decide(builder(mid), cfg)
        trace.append((mid, v.status))
        if v.feasible:
            lo, best = mid, v
        else:
            hi = mid
    return DelaySweepResult(query, lo, hi, trace, False, best)
