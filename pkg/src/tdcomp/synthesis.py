"""Observer gain determination from the plant, measurement and functional.

The design runs in three flavours depending on the rank structure:

* ``case1_full_rank``: ``(C_tau; C_tau A)`` has full column rank, so any
  internal delay gain ``N_tau`` can be matched by solving a linear equation.
* ``case2_structured``: that stack is rank deficient; ``N_tau`` is restricted
  to ``Z N_tau2`` where the rows of ``N_tau2`` span a left null space.
* ``case3_augment_then_retry``: ``F A`` leaves the row space of ``F``; the
  functional is enlarged with extra rows first and the result is handled
  by case 1 or case 2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dde import DdeSystem
from .errors import (DimensionError, NoFreedomError, SynthesisError,
                     SynthesisInconsistencyError, UnsupportedCaseError, WrongCaseError)
from .linalg import DEFAULT_TOL, as_matrix, pinv, rank
from .model import (Functional, FunctionalObserver, MeasurementModel, Plant,
                    error_coefficients)

log = logging.getLogger(__name__)

CASE1 = "case1_full_rank"
CASE2 = "case2_structured"
CASE3 = "case3_augment_then_retry"
COND_WARN = 1e8


def check_rank_condition(func: Functional, plant: Plant, tol=DEFAULT_TOL) -> bool:
    F = func.F
    return rank(np.vstack([F @ plant.A, F]), tol) == rank(F, tol)


def compute_N(func: Functional, plant: Plant, tol=DEFAULT_TOL) -> np.ndarray:
    """``N = F A F^+``; requires ``F A`` to stay in the row space of ``F``."""
    if not check_rank_condition(func, plant, tol):
        raise WrongCaseError("F A is not in the row space of F; augment the functional first")
    F = func.F
    return F @ plant.A @ pinv(F, tol)


def build_theta(func: Functional, meas: MeasurementModel, plant: Plant) -> np.ndarray:
    C = meas.C_tau
    return np.vstack([func.F, C, C @ plant.A])


def observability_stack(meas: MeasurementModel, plant: Plant) -> np.ndarray:
    C = meas.C_tau
    return np.vstack([C, C @ plant.A])


def nullspace_parameterization(theta, tol=DEFAULT_TOL, m: int | None = None) -> np.ndarray:
    """First ``m`` columns of the projector ``I - Theta Theta^+``.

    ``m`` is the functional row count (the leading block of ``Theta``); when
    omitted the whole projector is returned.
    """
    theta = as_matrix(theta, "Theta")
    rows = theta.shape[0]
    proj = np.eye(rows) - theta @ pinv(theta, tol)
    if rank(theta, tol) == rows:
        raise NoFreedomError("Theta has full row rank: no left null space to parameterize")
    if m is None:
        m = rows
    return proj[:, :m]


def left_projector(theta, tol=DEFAULT_TOL) -> np.ndarray:
    theta = as_matrix(theta, "Theta")
    return np.eye(theta.shape[0]) - theta @ pinv(theta, tol)


def case1_solve_Xbar(N_tau, func: Functional, meas: MeasurementModel, plant: Plant,
                     tol=DEFAULT_TOL) -> np.ndarray:
    """``Xbar = -N_tau F pinv(C_tau; C_tau A)``, split later into ``(Gbar | M)``."""
    stack = observability_stack(meas, plant)
    if rank(stack, tol) != plant.n:
        raise WrongCaseError("(C_tau; C_tau A) is rank deficient; use the structured case")
    N_tau = as_matrix(N_tau, "N_tau")
    xbar = -N_tau @ func.F @ pinv(stack, tol)
    return xbar


def split_xbar(xbar, p):
    return xbar[:, :p], xbar[:, p:2 * p]


def assemble_single(plant: Plant, meas: MeasurementModel, func: Functional, N, N_tau, Gbar, M,
                    tol=1e-8) -> FunctionalObserver:
    N, N_tau, Gbar, M = (as_matrix(a, k) for a, k in
                         ((N, "N"), (N_tau, "N_tau"), (Gbar, "Gbar"), (M, "M")))
    Ct = meas.C_tau
    obs = FunctionalObserver(
        M=M, N=N, N_tau=N_tau,
        G=Gbar + N @ M, G_tau=N_tau @ M,
        J=func.F @ plant.B, J_tau=-M @ Ct @ plant.B,
        tau=meas.tau)
    coeffs = error_coefficients(plant, meas, func, obs)
    if coeffs.residual_norm > tol:
        raise SynthesisInconsistencyError(
            f"assembled observer leaves residual {coeffs.residual_norm:.3g} > {tol:g}")
    return obs


@dataclass(frozen=True)
class Embedding:
    """Columns of ``Z`` that carry the reduced unknown ``Zbar``."""

    columns: tuple
    width: int

    def __call__(self, zbar) -> np.ndarray:
        zbar = as_matrix(zbar, "Zbar")
        if zbar.shape[1] != len(self.columns):
            raise DimensionError(f"Zbar needs {len(self.columns)} columns, got {zbar.shape[1]}")
        z = np.zeros((zbar.shape[0], self.width))
        z[:, list(self.columns)] = zbar
        return z


def independent_rows(a, tol=DEFAULT_TOL) -> list[int]:
    """Greedy top-down maximal independent row set."""
    chosen: list[int] = []
    a = as_matrix(a)
    scale = float(np.linalg.norm(a, 2)) if a.size else 0.0
    if scale == 0.0:
        return chosen
    for i in range(a.shape[0]):
        trial = a[chosen + [i]]
        s = np.linalg.svd(trial, compute_uv=False)
        # a wide trial has fewer singular values than rows, so count them
        if int(np.sum(s > tol * scale)) == len(chosen) + 1:
            chosen.append(i)
    return chosen


def case2_reduce(N_tau2, tol=DEFAULT_TOL):
    N_tau2 = as_matrix(N_tau2, "N_tau2")
    rows = independent_rows(N_tau2, tol)
    if not rows:
        raise NoFreedomError("N_tau2 is zero: no freedom to stabilize the error dynamics")
    return N_tau2[rows], Embedding(tuple(rows), N_tau2.shape[0])


def case2_from_Z(Z, theta, m: int, p: int, tol=DEFAULT_TOL):
    """``X = Z (I - Theta Theta^+)`` split into ``(N_tau | Gbar | M)``."""
    X = as_matrix(Z, "Z") @ left_projector(theta, tol)
    return X[:, :m], X[:, m:m + p], X[:, m + p:m + 2 * p]


@dataclass(frozen=True)
class AugmentedFunctional:
    F_bar: np.ndarray
    R: np.ndarray
    K: np.ndarray

    @property
    def q(self) -> int:
        return self.F_bar.shape[0]

    @property
    def functional(self) -> Functional:
        return Functional(self.F_bar)


def _krylov_rows(F, A):
    blocks, cur = [], F
    for _ in range(A.shape[0]):
        blocks.append(cur)
        cur = cur @ A
    return np.vstack(blocks)


def augment(func: Functional, plant: Plant, R=None, tol=DEFAULT_TOL) -> AugmentedFunctional:
    """Enlarge ``F`` so that ``F_bar A`` stays in the row space of ``F_bar``.

    Extra rows are taken greedily from ``F A, F A^2, ...`` unless ``R`` is
    supplied, in which case it is validated instead.
    """
    F, A = func.F, plant.A
    m = F.shape[0]
    if check_rank_condition(func, plant, tol):
        raise WrongCaseError("F already satisfies the rank condition; no augmentation needed")
    stack = _krylov_rows(F, A)
    q = rank(stack, tol)
    if q == m:
        raise SynthesisError("Krylov stack has rank m although the rank condition failed")
    if R is None:
        rows = list(range(m))
        for i in range(m, stack.shape[0]):
            if rank(stack[rows + [i]], tol) > len(rows):
                rows.append(i)
            if len(rows) == q:
                break
        R = stack[rows[m:]]
    R = as_matrix(R, "R")
    if R.shape[1] != plant.n:
        raise DimensionError(f"R must have {plant.n} columns")
    F_bar = np.vstack([F, R])
    if rank(F_bar, tol) != F_bar.shape[0]:
        raise SynthesisError("augmented functional is not full row rank")
    if rank(np.vstack([F_bar @ A, F_bar]), tol) != F_bar.shape[0]:
        raise SynthesisError("supplied R does not close the functional under A")
    K = np.hstack([np.eye(m), np.zeros((m, F_bar.shape[0] - m))])
    return AugmentedFunctional(F_bar=F_bar, R=R, K=K)


@dataclass(frozen=True)
class SynthesisPlan:
    case_tag: str
    N: np.ndarray
    functional: Functional  # the functional actually estimated (augmented in case 3)
    inner_case: str  # case1 or case2, equal to case_tag unless augmented
    theta_bar: np.ndarray | None = None
    theta: np.ndarray | None = None
    N_tau2: np.ndarray | None = None
    N_bar: np.ndarray | None = None
    embed: Embedding | None = None
    augmented: AugmentedFunctional | None = None
    notes: list = field(default_factory=list)


def plan_single(plant: Plant, meas: MeasurementModel, func: Functional, R=None,
                tol=DEFAULT_TOL) -> SynthesisPlan:
    if meas.is_two_delay:
        raise WrongCaseError("plan_single needs a single-delay measurement")
    aug = None
    f_eff = func
    if not check_rank_condition(func, plant, tol):
        aug = augment(func, plant, R, tol)
        f_eff = aug.functional
    N = compute_N(f_eff, plant, tol)
    stack = observability_stack(meas, plant)
    tag = CASE3 if aug is not None else None
    if rank(stack, tol) == plant.n:
        return SynthesisPlan(case_tag=tag or CASE1, N=N, functional=f_eff, inner_case=CASE1,
                             theta_bar=stack, augmented=aug)
    theta = build_theta(f_eff, meas, plant)
    n_tau2 = nullspace_parameterization(theta, tol, f_eff.m)
    n_bar, embed = case2_reduce(n_tau2, tol)
    return SynthesisPlan(case_tag=tag or CASE2, N=N, functional=f_eff, inner_case=CASE2,
                         theta=theta, N_tau2=n_tau2, N_bar=n_bar, embed=embed, augmented=aug)


def observer_from_N_tau(plant, meas, plan: SynthesisPlan, N_tau, tol=1e-8) -> FunctionalObserver:
    """Finish a case-1 design once the internal delay gain is chosen."""
    if plan.inner_case != CASE1:
        raise WrongCaseError("structured designs are parameterized by Zbar, not N_tau")
    xbar = case1_solve_Xbar(N_tau, plan.functional, meas, plant)
    gbar, M = split_xbar(xbar, meas.p)
    _warn_conditioning(N_tau, xbar)
    return assemble_single(plant, meas, plan.functional, plan.N, N_tau, gbar, M, tol)


def observer_from_Zbar(plant, meas, plan: SynthesisPlan, Zbar, tol=1e-8) -> FunctionalObserver:
    """Finish a case-2 design from the reduced free parameter ``Zbar``."""
    if plan.inner_case != CASE2:
        raise WrongCaseError("Zbar only parameterizes structured designs")
    Z = plan.embed(Zbar)
    N_tau, gbar, M = case2_from_Z(Z, plan.theta, plan.functional.m, meas.p)
    return assemble_single(plant, meas, plan.functional, plan.N, N_tau, gbar, M, tol)


def _warn_conditioning(N_tau, xbar):
    big = float(np.max(np.abs(xbar))) if xbar.size else 0.0
    ref = max(1.0, float(np.max(np.abs(N_tau))))
    if big > COND_WARN * ref:
        log.warning("observer gains are %.3g times larger than N_tau", big / ref)


# --- two delays ------------------------------------------------------------------

def two_delay_stack(meas: MeasurementModel, plant: Plant) -> np.ndarray:
    Ct, Ch, A = meas.C_tau, meas.C_h, plant.A
    return np.block([[Ct, Ch], [Ct @ A, Ch @ A]])


def two_delay_rank_check(meas: MeasurementModel, plant: Plant, tol=DEFAULT_TOL) -> bool:
    if not meas.is_two_delay:
        raise WrongCaseError("two_delay_rank_check needs a two-delay measurement")
    return rank(two_delay_stack(meas, plant), tol) == 2 * plant.n


def two_delay_solve(N_tau, N_h, func: Functional, meas: MeasurementModel, plant: Plant,
                    tol=DEFAULT_TOL) -> np.ndarray:
    if not two_delay_rank_check(meas, plant, tol):
        raise UnsupportedCaseError(
            "two-delay measurement stack is rank deficient; no design procedure is available")
    F = func.F
    upsilon = -np.hstack([as_matrix(N_tau, "N_tau") @ F, as_matrix(N_h, "N_h") @ F])
    return upsilon @ pinv(two_delay_stack(meas, plant), tol)


def assemble_two_delay(plant: Plant, meas: MeasurementModel, func: Functional, N, N_tau, N_h,
                       Gbar, M, tol=1e-8) -> FunctionalObserver:
    N, N_tau, N_h, Gbar, M = (as_matrix(a, k) for a, k in (
        (N, "N"), (N_tau, "N_tau"), (N_h, "N_h"), (Gbar, "Gbar"), (M, "M")))
    B = plant.B
    obs = FunctionalObserver(
        M=M, N=N, N_tau=N_tau, N_h=N_h,
        G=Gbar + N @ M, G_tau=N_tau @ M, G_h=N_h @ M,
        J=func.F @ B, J_tau=-M @ meas.C_tau @ B, J_h=-M @ meas.C_h @ B,
        tau=meas.tau, h=meas.h)
    coeffs = error_coefficients(plant, meas, func, obs)
    if coeffs.residual_norm > tol:
        raise SynthesisInconsistencyError(
            f"assembled observer leaves residual {coeffs.residual_norm:.3g} > {tol:g}")
    return obs


def observer_two_delay(plant, meas, func, N_tau, N_h, tol=1e-8) -> FunctionalObserver:
    N = compute_N(func, plant)
    xbar = two_delay_solve(N_tau, N_h, func, meas, plant)
    gbar, M = split_xbar(xbar, meas.p)
    return assemble_two_delay(plant, meas, func, N, N_tau, N_h, gbar, M, tol)


def extend_measurement(meas: MeasurementModel, alpha: float) -> MeasurementModel:
    """Stack ``y(t)`` and ``y(t-alpha)`` into one two-delay measurement."""
    if meas.is_two_delay:
        raise WrongCaseError("measurement is already two-delay")
    if not alpha > 0:
        raise SynthesisError(f"alpha must be positive, got {alpha}")
    C = meas.C_tau
    z = np.zeros_like(C)
    return MeasurementModel(np.vstack([C, z]), meas.tau, np.vstack([z, C]), meas.tau + alpha)


# --- closed loop -----------------------------------------------------------------

def closed_loop_systems(plant: Plant, meas: MeasurementModel, func_aug, obs: FunctionalObserver,
                        K=None):
    """State/error and state/observer closed loops for ``u = K z_hat``.

    ``func_aug`` is an :class:`AugmentedFunctional` or a plain functional
    (then ``K`` defaults to the identity).  The state feedback gain is the
    first block of rows, i.e. the original functional.
    """
    if meas.is_two_delay:
        raise WrongCaseError("closed-loop realization is defined for single-delay observers")
    if isinstance(func_aug, AugmentedFunctional):
        F_bar = func_aug.F_bar
        K = func_aug.K if K is None else as_matrix(K, "K")
    else:
        F_bar = func_aug.F
        K = np.eye(F_bar.shape[0]) if K is None else as_matrix(K, "K")
    A, B = plant.A, plant.B
    n, q = plant.n, F_bar.shape[0]
    if K.shape != (B.shape[1], q) or obs.m != q:
        raise DimensionError(f"K must be {B.shape[1]}x{q} and the observer of order {q}")
    F = K @ F_bar
    Ct, tau = meas.C_tau, meas.tau

    z_nq = np.zeros((n, q))
    state_error = DdeSystem(
        np.block([[A + B @ F, B @ K], [np.zeros((q, n)), obs.N]]),
        [(np.block([[np.zeros((n, n)), z_nq], [np.zeros((q, n)), obs.N_tau]]), tau)])

    n_t = obs.N + obs.J @ K
    n_tau_t = obs.N_tau + obs.J_tau @ K
    g_t = obs.G + obs.J @ K @ obs.M
    g_tau_t = obs.G_tau + obs.J_tau @ K @ obs.M
    state_observer = DdeSystem(
        np.block([[A, B @ K], [np.zeros((q, n)), n_t]]),
        [(np.block([[B @ K @ obs.M @ Ct, z_nq], [g_t @ Ct, n_tau_t]]), tau),
         (np.block([[np.zeros((n, n)), z_nq], [g_tau_t @ Ct, np.zeros((q, q))]]), 2 * tau)])
    return state_error, state_observer
