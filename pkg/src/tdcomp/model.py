"""Plant, measurement, functional and observer records plus the error algebra.

The observer is

    z_hat(t) = w(t) + M y(t)
    dw/dt    = N w + N_tau w(t-tau) [+ N_h w(t-h)] + G y + G_tau y(t-tau) [+ G_h y(t-h)]
               + J u + J_tau u(t-tau) [+ J_h u(t-h)]

and the estimation error ``e = z_hat - F x`` obeys a delay equation whose
input and state couplings are the blocks returned by :func:`error_coefficients`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dde import DdeSystem
from .errors import ConfigurationError, DecouplingError, DimensionError, InvalidInputError
from .linalg import DEFAULT_TOL, as_matrix, rank


@dataclass(frozen=True)
class Plant:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            if B.shape == (1, A.shape[0]):
                B = B.T
            else:
                raise DimensionError(f"B must have {A.shape[0]} rows, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class MeasurementModel:
    """``y(t) = C_tau x(t-tau)`` or ``y(t) = C_tau x(t-tau) + C_h x(t-h)``."""

    C_tau: np.ndarray
    tau: float
    C_h: np.ndarray | None = None
    h: float | None = None
    tol: float = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self):
        C = as_matrix(self.C_tau, "C_tau")
        object.__setattr__(self, "C_tau", C)
        object.__setattr__(self, "tau", float(self.tau))
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")
        if (self.C_h is None) != (self.h is None):
            raise ConfigurationError("two-delay measurement needs both C_h and h")
        if self.C_h is None:
            if rank(C, self.tol) != C.shape[0]:
                raise InvalidInputError("C_tau must have full row rank")
            return
        Ch = as_matrix(self.C_h, "C_h")
        if Ch.shape != C.shape:
            raise DimensionError(f"C_h shape {Ch.shape} differs from C_tau shape {C.shape}")
        object.__setattr__(self, "C_h", Ch)
        object.__setattr__(self, "h", float(self.h))
        if not self.h > self.tau:
            raise InvalidInputError(f"need h > tau, got h={self.h}, tau={self.tau}")

    @property
    def is_two_delay(self) -> bool:
        return self.C_h is not None

    @property
    def p(self) -> int:
        return self.C_tau.shape[0]

    @property
    def n(self) -> int:
        return self.C_tau.shape[1]


def single(C_tau, tau) -> MeasurementModel:
    return MeasurementModel(C_tau, tau)


def two_delay(C_tau, C_h, tau, h) -> MeasurementModel:
    return MeasurementModel(C_tau, tau, C_h, h)


@dataclass(frozen=True)
class Functional:
    F: np.ndarray
    tol: float = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self):
        F = as_matrix(self.F, "F")
        if rank(F, self.tol) != F.shape[0]:
            raise InvalidInputError("F must have full row rank")
        object.__setattr__(self, "F", F)

    @property
    def m(self) -> int:
        return self.F.shape[0]


_SINGLE = ("M", "N", "N_tau", "G", "G_tau", "J", "J_tau")
_EXTRA = ("N_h", "G_h", "J_h")


@dataclass(frozen=True)
class FunctionalObserver:
    M: np.ndarray
    N: np.ndarray
    N_tau: np.ndarray
    G: np.ndarray
    G_tau: np.ndarray
    J: np.ndarray
    J_tau: np.ndarray
    tau: float
    N_h: np.ndarray | None = None
    G_h: np.ndarray | None = None
    J_h: np.ndarray | None = None
    h: float | None = None

    def __post_init__(self):
        # 1-D blocks are read as rows; pass nested lists for columns
        for name in _SINGLE + _EXTRA:
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, as_matrix(val, name))
        extras = [getattr(self, k) is not None for k in _EXTRA] + [self.h is not None]
        if any(extras) and not all(extras):
            raise ConfigurationError("two-delay observer needs all of N_h, G_h, J_h and h")
        m = self.N.shape[0]
        if self.N.shape != (m, m):
            raise DimensionError("N must be square")
        p = self.M.shape[1]
        r = self.J.shape[1]
        shapes = {"M": (m, p), "N_tau": (m, m), "G": (m, p), "G_tau": (m, p),
                  "J": (m, r), "J_tau": (m, r)}
        if self.is_two_delay:
            shapes.update({"N_h": (m, m), "G_h": (m, p), "J_h": (m, r)})
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def is_two_delay(self) -> bool:
        return self.h is not None

    @property
    def m(self) -> int:
        return self.N.shape[0]

    def gains(self) -> dict:
        names = _SINGLE + (_EXTRA if self.is_two_delay else ())
        return {k: getattr(self, k) for k in names}


@dataclass(frozen=True)
class ErrorCoefficients:
    blocks: dict
    residual_norm: float
    two_delay: bool = False

    def __getitem__(self, name):
        return self.blocks[name]


def _check_dims(plant: Plant, meas: MeasurementModel, func: Functional, obs: FunctionalObserver):
    if meas.n != plant.n or func.F.shape[1] != plant.n:
        raise DimensionError("plant, measurement and functional disagree on n")
    if obs.m != func.m:
        raise DimensionError(f"observer order {obs.m} differs from functional rows {func.m}")
    if obs.M.shape[1] != meas.p:
        raise DimensionError("observer output gains do not match the measurement size")
    if obs.J.shape[1] != plant.r:
        raise DimensionError("observer input gains do not match the plant input size")
    if meas.is_two_delay != obs.is_two_delay:
        raise ConfigurationError("observer variant does not match the measurement variant")
    if abs(obs.tau - meas.tau) > 1e-12 or (obs.is_two_delay and abs(obs.h - meas.h) > 1e-12):
        raise ConfigurationError("observer delays differ from measurement delays")


def error_coefficients(plant: Plant, meas: MeasurementModel, func: Functional,
                       obs: FunctionalObserver) -> ErrorCoefficients:
    """Couplings of ``e = z_hat - F x`` to ``u`` and ``x`` and their delayed copies."""
    _check_dims(plant, meas, func, obs)
    A, B, F = plant.A, plant.B, func.F
    M, N = obs.M, obs.N
    Ct = meas.C_tau
    gbar = obs.G - N @ M
    gbar_tau = obs.G_tau - obs.N_tau @ M
    if not meas.is_two_delay:
        blocks = {
            "C1": obs.J - F @ B,
            "C2": obs.J_tau + M @ Ct @ B,
            "C3": N @ F - F @ A,
            "C4": obs.N_tau @ F + gbar @ Ct + M @ Ct @ A,
            "C5": gbar_tau @ Ct,
        }
    else:
        Ch = meas.C_h
        gbar_h = obs.G_h - obs.N_h @ M
        blocks = {
            "C1": obs.J - F @ B,
            "C2": obs.J_tau + M @ Ct @ B,
            "C3": obs.J_h + M @ Ch @ B,
            "C4": N @ F - F @ A,
            "C5": obs.N_tau @ F + gbar @ Ct + M @ Ct @ A,
            "C6": obs.N_h @ F + gbar @ Ch + M @ Ch @ A,
            "C7": gbar_tau @ Ct,
            "C8": gbar_h @ Ct + gbar_tau @ Ch,
            "C9": gbar_h @ Ch,
            # the sufficient choice enforced for two-delay designs
            "Gbar_tau": gbar_tau,
            "Gbar_h": gbar_h,
        }
    resid = max(float(np.max(np.abs(b))) if b.size else 0.0 for b in blocks.values())
    return ErrorCoefficients(blocks=blocks, residual_norm=resid, two_delay=meas.is_two_delay)


def decoupling_conditions_hold(coeffs: ErrorCoefficients, tol: float = 1e-8) -> bool:
    return bool(coeffs.residual_norm <= tol)


def error_system(plant, meas, func, obs, tol: float = 1e-6) -> DdeSystem:
    """The autonomous error equation ``de = N e + N_tau e(t-tau) [+ N_h e(t-h)]``."""
    coeffs = error_coefficients(plant, meas, func, obs)
    if not decoupling_conditions_hold(coeffs, tol):
        raise DecouplingError(
            f"error dynamics are coupled to the plant (residual {coeffs.residual_norm:.3g})")
    delayed = [(obs.N_tau, obs.tau)]
    if obs.is_two_delay:
        delayed.append((obs.N_h, obs.h))
    return DdeSystem(obs.N, delayed)
