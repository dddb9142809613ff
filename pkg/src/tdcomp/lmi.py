"""Builders for the Lyapunov-Krasovskii LMI conditions.

Each builder returns an :class:`LmiProblem`: a list of matrix variables plus
a list of constraint maps.  A constraint map is an ordinary Python function
of the variable values that is affine in them; the solver recovers the affine
coefficients by probing, so the formulas below read exactly like the matrix
expressions they implement.

Block layout of the augmented vector used by the 8-block conditions::

    1: e(t)            2: e(t-t1)         3: e(t-t2)         4: e(t-t3)
    5: mean of e on [t-t1, t]             6: mean on [t-t2, t-t1]
    7: mean on [t-t3, t-t2]               8: de/dt(t)

The 4-block single-delay condition uses e(t), e(t-tau), the mean of e on
[t-tau, t] and de/dt(t).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dde import DdeSystem
from .errors import ConfigurationError
from .linalg import as_matrix, sym

SQRT3 = math.sqrt(3.0)


class SelectorBasis:
    """Block selectors ``v_1 .. v_k`` (1-based), each a ``k*n x n`` matrix."""

    def __init__(self, n: int, k: int):
        self.n = n
        self.k = k
        eye = np.eye(k * n)
        self._v = [eye[:, i * n:(i + 1) * n] for i in range(k)]

    def __getitem__(self, i: int) -> np.ndarray:
        if not 1 <= i <= self.k:
            raise IndexError(f"selector index {i} outside 1..{self.k}")
        return self._v[i - 1]

    def __iter__(self):
        return iter(self._v)

    def row(self, blocks: dict[int, np.ndarray], rows: int) -> np.ndarray:
        """Horizontal block row ``(B_1 ... B_k)`` with ``rows`` rows; missing blocks are 0."""
        out = np.zeros((rows, self.k * self.n))
        for i, b in blocks.items():
            out[:, (i - 1) * self.n:i * self.n] = b
        return out


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple[int, int]
    kind: str = "full"  # "pd" | "sym" | "full"

    def __post_init__(self):
        if self.kind not in ("pd", "sym", "full"):
            raise ConfigurationError(f"unknown variable kind {self.kind!r}")
        if self.kind != "full" and self.shape[0] != self.shape[1]:
            raise ConfigurationError(f"symmetric variable {self.name} must be square")

    @property
    def size(self) -> int:
        r, c = self.shape
        return r * (r + 1) // 2 if self.kind != "full" else r * c

    def unpack(self, x: np.ndarray) -> np.ndarray:
        r, c = self.shape
        if self.kind == "full":
            return x.reshape(r, c)
        m = np.zeros((r, r))
        iu = np.triu_indices(r)
        m[iu] = x
        m.T[iu] = x
        return m


@dataclass(frozen=True)
class Constraint:
    name: str
    sense: str  # "neg": fn(values) < 0, "pos": fn(values) > 0
    fn: Callable[[dict], np.ndarray]

    def __post_init__(self):
        if self.sense not in ("neg", "pos"):
            raise ConfigurationError(f"unknown constraint sense {self.sense!r}")


@dataclass(frozen=True)
class AffineForm:
    """Constraint ``F0 + sum_i x_i F_i`` with the ``F_i`` stacked along axis 0."""

    name: str
    sense: str
    F0: np.ndarray
    Fi: np.ndarray


@dataclass(frozen=True)
class LmiProblem:
    lemma: str
    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]
    delays: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    # name of gain -> name of the G-type variable; gains are X^{-1} G
    gain_rule: dict = field(default_factory=dict)
    lam: float | None = None
    scale: float = 1.0  # reference magnitude of the system data (sets the margin)
    closed_loop: Callable[[dict], list[DdeSystem]] | None = None
    builder: Callable[[float], "LmiProblem"] | None = None

    @property
    def is_synthesis(self) -> bool:
        return bool(self.gain_rule)

    def with_lambda(self, lam: float) -> "LmiProblem":
        if self.builder is None:
            raise ConfigurationError(f"{self.lemma} has no free-weighting scalar")
        return self.builder(lam)

    def lambda_family(self) -> Callable[[float], "LmiProblem"]:
        """Fast ``with_lambda``: the constraints are affine in the scalar, so the
        coefficient data is probed at 0 and 1 once and interpolated."""
        if self.builder is None:
            raise ConfigurationError(f"{self.lemma} has no free-weighting scalar")
        f0 = self.builder(0.0).affine
        f1 = self.builder(1.0).affine

        def make(lam: float) -> "LmiProblem":
            prob = self.builder(lam)
            prob.__dict__["affine"] = [
                AffineForm(a.name, a.sense, a.F0 + lam * (b.F0 - a.F0), a.Fi + lam * (b.Fi - a.Fi))
                for a, b in zip(f0, f1)]
            return prob
        return make

    @property
    def n_scalar(self) -> int:
        return sum(v.size for v in self.variables)

    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_scalar,):
            raise ConfigurationError(f"expected {self.n_scalar} scalars, got {x.shape}")
        out, k = {}, 0
        for v in self.variables:
            out[v.name] = v.unpack(x[k:k + v.size])
            k += v.size
        return out

    def all_constraints(self) -> list[Constraint]:
        """Declared constraints plus positivity of every ``pd`` variable."""
        extra = [
            Constraint(f"{v.name}>0", "pos", functools.partial(_pick, v.name))
            for v in self.variables if v.kind == "pd"
        ]
        return list(self.constraints) + extra

    def evaluate(self, values: dict) -> dict[str, np.ndarray]:
        return {c.name: np.asarray(c.fn(values), dtype=float) for c in self.all_constraints()}

    @functools.cached_property
    def affine(self) -> list[AffineForm]:
        cons = self.all_constraints()
        nvar = self.n_scalar
        zero = self.unpack(np.zeros(nvar))
        base = [np.asarray(c.fn(zero), dtype=float) for c in cons]
        coeffs = [np.empty((nvar,) + b.shape) for b in base]
        e = np.zeros(nvar)
        for i in range(nvar):
            e[i] = 1.0
            vals = self.unpack(e)
            for j, c in enumerate(cons):
                coeffs[j][i] = np.asarray(c.fn(vals), dtype=float) - base[j]
            e[i] = 0.0
        return [AffineForm(c.name, c.sense, b, f) for c, b, f in zip(cons, base, coeffs)]

    def dump(self, path) -> None:
        """Write variables and affine constraint data as plain text."""
        with open(path, "w") as fh:
            fh.write(f"# lemma {self.lemma}\n")
            fh.write(f"# delays {self.delays}\n")
            if self.lam is not None:
                fh.write(f"# lambda {self.lam!r}\n")
            for name, val in self.data.items():
                fh.write(f"data {name} {_fmt(np.atleast_2d(val))}\n")
            for v in self.variables:
                fh.write(f"variable {v.name} {v.shape[0]} {v.shape[1]} {v.kind} {v.size}\n")
            for form in self.affine:
                fh.write(f"constraint {form.name} {form.sense} {form.F0.shape[0]}\n")
                fh.write(f"  F0 {_fmt(form.F0)}\n")
                for i, fi in enumerate(form.Fi):
                    if np.any(fi):
                        fh.write(f"  F{i + 1} {_fmt(fi)}\n")


def _pick(name, values):
    return values[name]


def _fmt(m: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(m).ravel())


def _diag2(r: np.ndarray) -> np.ndarray:
    n = r.shape[0]
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = r
    out[n:, n:] = r
    return out


def _sq(shape_or_n) -> tuple[int, int]:
    return (shape_or_n, shape_or_n)


def _check_square(name, m, n=None) -> np.ndarray:
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1] or (n is not None and m.shape[0] != n):
        raise ConfigurationError(f"{name} must be {n or 'square'}x{n or 'square'}, got {m.shape}")
    return m


def _check_order(*delays):
    if delays[0] <= 0 or any(b <= a for a, b in zip(delays, delays[1:])):
        raise ConfigurationError(f"delays must satisfy 0 < ... strictly increasing, got {delays}")


def _scale(*mats) -> float:
    return 1.0 + max(float(np.linalg.norm(m, 2)) for m in mats)


# --- Lyapunov-Krasovskii blocks ------------------------------------------------

def theta_single(v: SelectorBasis, tau, P, Q, R) -> np.ndarray:
    """4-block functional derivative bound with the Wirtinger term."""
    pi1 = np.hstack([v[1], tau * v[3]])
    pi2 = np.hstack([v[4], v[1] - v[2]])
    gam = np.hstack([v[1] - v[2], SQRT3 * (v[1] + v[2] - 2 * v[3])])
    return (sym(pi1 @ P @ pi2.T) + v[1] @ Q @ v[1].T - v[2] @ Q @ v[2].T
            + tau * v[4] @ R @ v[4].T - (1.0 / tau) * gam @ _diag2(R) @ gam.T)


def _gammas(v: SelectorBasis):
    g1 = np.hstack([v[1] - v[2], SQRT3 * (v[1] + v[2] - 2 * v[5])])
    g2 = np.hstack([v[2] - v[3], SQRT3 * (v[2] + v[3] - 2 * v[6])])
    g3 = np.hstack([v[3] - v[4], SQRT3 * (v[3] + v[4] - 2 * v[7])])
    return g1, g2, g3


def xi_block(R2: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Reciprocally convex block ``[[diag(R2,R2), S], [S^T, diag(R2,R2)]]``."""
    r = _diag2(R2)
    return np.block([[r, S], [S.T, r]])


def theta_interval(v: SelectorBasis, tau, lo, hi, P, Q1, Q2, Q3, R1, R2, S) -> np.ndarray:
    """8-block bound for a delay known to lie in ``[lo, hi]``, evaluated at ``tau``."""
    pi1 = np.hstack([v[1], lo * v[5], (tau - lo) * v[6], (hi - tau) * v[7]])
    pi2 = np.hstack([v[8], v[1] - v[2], v[2] - v[3], v[3] - v[4]])
    g1, g2, g3 = _gammas(v)
    g23 = np.hstack([g2, g3])
    return (sym(pi1 @ P @ pi2.T) + v[1] @ Q1 @ v[1].T - v[2] @ (Q1 - Q2) @ v[2].T
            - v[3] @ (Q2 - Q3) @ v[3].T - v[4] @ Q3 @ v[4].T
            + lo * v[8] @ R1 @ v[8].T + (hi - lo) * v[8] @ R2 @ v[8].T
            - (1.0 / lo) * g1 @ _diag2(R1) @ g1.T
            - (1.0 / (hi - lo)) * g23 @ xi_block(R2, S) @ g23.T)


def theta_multi(v: SelectorBasis, t1, t2, t3, P, Q1, Q2, Q3, R1, R2, R3) -> np.ndarray:
    """8-block bound for three ordered delays ``t1 < t2 < t3``."""
    pi1 = np.hstack([v[1], t1 * v[5], (t2 - t1) * v[6], (t3 - t2) * v[7]])
    pi2 = np.hstack([v[8], v[1] - v[2], v[2] - v[3], v[3] - v[4]])
    g1, g2, g3 = _gammas(v)
    return (sym(pi1 @ P @ pi2.T) + v[1] @ Q1 @ v[1].T - v[2] @ (Q1 - Q2) @ v[2].T
            - v[3] @ (Q2 - Q3) @ v[3].T - v[4] @ Q3 @ v[4].T
            + t1 * v[8] @ R1 @ v[8].T + (t2 - t1) * v[8] @ R2 @ v[8].T
            + (t3 - t2) * v[8] @ R3 @ v[8].T
            - (1.0 / t1) * g1 @ _diag2(R1) @ g1.T
            - (1.0 / (t2 - t1)) * g2 @ _diag2(R2) @ g2.T
            - (1.0 / (t3 - t2)) * g3 @ _diag2(R3) @ g3.T)


def _lk_vars(n, n_q, n_r, p_blocks=4):
    out = [Variable("P", _sq(p_blocks * n), "pd")]
    out += [Variable(f"Q{i}", _sq(n), "pd") for i in range(1, n_q + 1)]
    out += [Variable(f"R{i}", _sq(n), "pd") for i in range(1, n_r + 1)]
    return out


# --- stability conditions --------------------------------------------------------

def stability_constant(N, N_tau, tau) -> LmiProblem:
    """Single known delay; 4-block functional with free weights X, Y."""
    N = _check_square("N", N)
    n = N.shape[0]
    N_tau = _check_square("N_tau", N_tau, n)
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    v = SelectorBasis(n, 4)
    nt = v.row({1: N, 2: N_tau, 4: -np.eye(n)}, n)

    def lmi(x):
        return (theta_single(v, tau, x["P"], x["Q"], x["R"])
                + sym((v[1] @ x["X"] + v[4] @ x["Y"]) @ nt))

    variables = (Variable("P", _sq(2 * n), "pd"), Variable("Q", _sq(n), "pd"),
                 Variable("R", _sq(n), "pd"), Variable("X", _sq(n)), Variable("Y", _sq(n)))
    return LmiProblem("stability_constant", variables, (Constraint("Theta", "neg", lmi),),
                      delays={"tau": tau}, data={"N": N, "N_tau": N_tau},
                      scale=_scale(N, N_tau))


def _interval_variables(n):
    return _lk_vars(n, 3, 2) + [Variable("S", _sq(2 * n))]


def stability_interval(N, N_tau, tau_lo, tau_hi) -> LmiProblem:
    """Delay anywhere in ``[tau_lo, tau_hi]``; reciprocally convex coupling S."""
    N = _check_square("N", N)
    n = N.shape[0]
    N_tau = _check_square("N_tau", N_tau, n)
    _check_order(tau_lo, tau_hi)
    v = SelectorBasis(n, 8)
    nt = v.row({1: N, 3: N_tau, 8: -np.eye(n)}, n)

    def at(tau, x):
        return (theta_interval(v, tau, tau_lo, tau_hi, x["P"], x["Q1"], x["Q2"], x["Q3"],
                               x["R1"], x["R2"], x["S"])
                + sym((v[1] @ x["X"] + v[8] @ x["Y"]) @ nt))

    variables = _interval_variables(n) + [Variable("X", _sq(n)), Variable("Y", _sq(n))]
    constraints = (
        Constraint("Theta1(lo)", "neg", functools.partial(at, tau_lo)),
        Constraint("Theta1(hi)", "neg", functools.partial(at, tau_hi)),
        Constraint("Xi", "pos", lambda x: xi_block(x["R2"], x["S"])),
    )
    return LmiProblem("stability_interval", tuple(variables), constraints,
                      delays={"tau_lo": tau_lo, "tau_hi": tau_hi},
                      data={"N": N, "N_tau": N_tau}, scale=_scale(N, N_tau))


def stability_interval_pd(N, N_tau, tau_lo, tau_hi) -> LmiProblem:
    """Interval delay with decision matrices affine in the delay."""
    N = _check_square("N", N)
    n = N.shape[0]
    N_tau = _check_square("N_tau", N_tau, n)
    _check_order(tau_lo, tau_hi)
    v = SelectorBasis(n, 8)
    nt = v.row({1: N, 3: N_tau, 8: -np.eye(n)}, n)
    m = 2 * n

    def P(k, x):
        return np.block([[x[f"P11_{k}"], x["P12"]], [x["P12"].T, x["P22"]]])

    def interp(tau, x, name):
        a, b = tau - tau_lo, tau_hi - tau
        if name == "P":
            return a * P(1, x) + b * P(2, x)
        return a * x[f"{name}1"] + b * x[f"{name}2"]

    def at(tau, x):
        g = functools.partial(interp, tau, x)
        theta = theta_interval(v, tau, tau_lo, tau_hi, g("P"), g("Q1"), g("Q2"), g("Q3"),
                               g("R1"), g("R2"), g("S"))
        return theta + sym((v[1] @ g("X") + v[8] @ g("Y")) @ nt)

    def xi_at(tau, x):
        return xi_block(interp(tau, x, "R2"), interp(tau, x, "S"))

    variables = [Variable("P11_1", _sq(m), "sym"), Variable("P11_2", _sq(m), "sym"),
                 Variable("P12", _sq(m)), Variable("P22", _sq(m), "sym")]
    for base in ("Q1", "Q2", "Q3", "R1", "R2"):
        variables += [Variable(f"{base}1", _sq(n), "pd"), Variable(f"{base}2", _sq(n), "pd")]
    variables += [Variable("S1", _sq(m)), Variable("S2", _sq(m))]
    variables += [Variable(f"{b}{k}", _sq(n)) for b in ("X", "Y") for k in (1, 2)]
    constraints = (
        Constraint("P1>0", "pos", functools.partial(P, 1)),
        Constraint("P2>0", "pos", functools.partial(P, 2)),
        Constraint("Theta2(lo)", "neg", functools.partial(at, tau_lo)),
        Constraint("Theta2(hi)", "neg", functools.partial(at, tau_hi)),
        Constraint("Xi(lo)", "pos", functools.partial(xi_at, tau_lo)),
        Constraint("Xi(hi)", "pos", functools.partial(xi_at, tau_hi)),
    )
    return LmiProblem("stability_interval_pd", tuple(variables), constraints,
                      delays={"tau_lo": tau_lo, "tau_hi": tau_hi},
                      data={"N": N, "N_tau": N_tau}, scale=_scale(N, N_tau))


def stability_multi(N, N1, N2, N3, tau1, tau2, tau3) -> LmiProblem:
    """Three ordered delays, one 8-block condition."""
    N = _check_square("N", N)
    n = N.shape[0]
    N1, N2, N3 = (_check_square(f"N{i}", m, n) for i, m in enumerate((N1, N2, N3), 1))
    _check_order(tau1, tau2, tau3)
    v = SelectorBasis(n, 8)
    nt = v.row({1: N, 2: N1, 3: N2, 4: N3, 8: -np.eye(n)}, n)

    def lmi(x):
        return (theta_multi(v, tau1, tau2, tau3, x["P"], x["Q1"], x["Q2"], x["Q3"],
                            x["R1"], x["R2"], x["R3"])
                + sym((v[1] @ x["X"] + v[8] @ x["Y"]) @ nt))

    variables = _lk_vars(n, 3, 3) + [Variable("X", _sq(n)), Variable("Y", _sq(n))]
    return LmiProblem("stability_multi", tuple(variables), (Constraint("Theta3", "neg", lmi),),
                      delays={"tau1": tau1, "tau2": tau2, "tau3": tau3},
                      data={"N": N, "N1": N1, "N2": N2, "N3": N3}, scale=_scale(N, N1, N2, N3))


def stability_partitioned(N, N_tau, tau) -> LmiProblem:
    """Single delay split into thirds and checked with the three-delay condition."""
    n = as_matrix(N).shape[0]
    z = np.zeros((n, n))
    return stability_multi(N, z, z, N_tau, tau / 3.0, 2.0 * tau / 3.0, tau)


def stability_two_delay(N, N_tau, N_h, tau, h) -> LmiProblem:
    """Two delays ``tau < h``; the first is split in half."""
    n = as_matrix(N).shape[0]
    return stability_multi(N, np.zeros((n, n)), N_tau, N_h, tau / 2.0, tau, h)


# --- stabilization conditions ----------------------------------------------------

def _descriptor(v: SelectorBasis, lam, X, n1t):
    return sym((v[1] + lam * v[8]) @ X @ n1t)


def synth_constant(N, tau, lam) -> LmiProblem:
    """Find ``N_tau = X^{-1} G`` stabilizing ``de = N e + N_tau e(t-tau)``."""
    N = _check_square("N", N)
    n = N.shape[0]
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    v = SelectorBasis(n, 8)
    t1, t2, t3 = tau / 3.0, 2.0 * tau / 3.0, tau
    n1t = v.row({1: N, 8: -np.eye(n)}, n)
    n2t = v.row({4: np.eye(n)}, n)

    def lmi(x):
        return (theta_multi(v, t1, t2, t3, x["P"], x["Q1"], x["Q2"], x["Q3"],
                            x["R1"], x["R2"], x["R3"])
                + _descriptor(v, lam, x["X"], n1t)
                + sym((v[1] + lam * v[8]) @ x["G"] @ n2t))

    def closed_loop(g):
        return [DdeSystem(N, [(g["N_tau"], tau)])]

    variables = _lk_vars(n, 3, 3) + [Variable("X", _sq(n)), Variable("G", _sq(n))]
    return LmiProblem("synth_constant", tuple(variables), (Constraint("Theta3", "neg", lmi),),
                      delays={"tau": tau}, data={"N": N}, gain_rule={"N_tau": "G"},
                      lam=lam, scale=_scale(N), closed_loop=closed_loop,
                      builder=functools.partial(synth_constant, N, tau))


def _interval_closed_loop(make, tau_lo, tau_hi):
    def closed_loop(g):
        mid = 0.5 * (tau_lo + tau_hi)
        return [make(g, t) for t in (tau_lo, mid, tau_hi)]
    return closed_loop


def synth_interval(N, tau_lo, tau_hi, lam) -> LmiProblem:
    """Find ``N_tau = X^{-1} G`` that works for every delay in ``[tau_lo, tau_hi]``."""
    N = _check_square("N", N)
    n = N.shape[0]
    _check_order(tau_lo, tau_hi)
    v = SelectorBasis(n, 8)
    n1t = v.row({1: N, 8: -np.eye(n)}, n)
    n2t = v.row({3: np.eye(n)}, n)

    def at(tau, x):
        return (theta_interval(v, tau, tau_lo, tau_hi, x["P"], x["Q1"], x["Q2"], x["Q3"],
                               x["R1"], x["R2"], x["S"])
                + _descriptor(v, lam, x["X"], n1t)
                + sym((v[1] + lam * v[8]) @ x["G"] @ n2t))

    variables = _interval_variables(n) + [Variable("X", _sq(n)), Variable("G", _sq(n))]
    constraints = (
        Constraint("Theta1(lo)", "neg", functools.partial(at, tau_lo)),
        Constraint("Theta1(hi)", "neg", functools.partial(at, tau_hi)),
        Constraint("Xi", "pos", lambda x: xi_block(x["R2"], x["S"])),
    )
    closed_loop = _interval_closed_loop(lambda g, t: DdeSystem(N, [(g["N_tau"], t)]),
                                        tau_lo, tau_hi)
    return LmiProblem("synth_interval", tuple(variables), constraints,
                      delays={"tau_lo": tau_lo, "tau_hi": tau_hi}, data={"N": N},
                      gain_rule={"N_tau": "G"}, lam=lam, scale=_scale(N),
                      closed_loop=closed_loop,
                      builder=functools.partial(synth_interval, N, tau_lo, tau_hi))


def _structured_inputs(N01, N02, pairs):
    N01 = _check_square("N_0,1", N01)
    n = N01.shape[0]
    N02 = as_matrix(N02, "N_0,2")
    if N02.shape[1] != n:
        raise ConfigurationError(f"N_0,2 must have {n} columns, got {N02.shape}")
    out = []
    for label, (a, b) in pairs.items():
        a = _check_square(f"{label},1", a, n)
        b = as_matrix(b, f"{label},2")
        if b.shape[1] != n:
            raise ConfigurationError(f"{label},2 must have {n} columns, got {b.shape}")
        out.append((a, b))
    return N01, N02, out


def _closed(N01, N02, g, terms):
    z0 = g.get("Z0")
    A0 = N01 + (z0 @ N02 if z0 is not None else 0.0)
    delayed = [(a + g[name] @ b, t) for name, a, b, t in terms]
    return DdeSystem(A0, delayed)


def synth_structured_constant(N01, N02, Ntau1, Ntau2, tau, lam) -> LmiProblem:
    """Find ``Z = X^{-1} G`` for ``de = (N01 + Z N02) e + (Ntau1 + Z Ntau2) e(t-tau)``."""
    N01, N02, [(Ntau1, Ntau2)] = _structured_inputs(N01, N02, {"N_tau": (Ntau1, Ntau2)})
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    n = N01.shape[0]
    v = SelectorBasis(n, 8)
    t1, t2, t3 = tau / 3.0, 2.0 * tau / 3.0, tau
    n1t = v.row({1: N01, 4: Ntau1, 8: -np.eye(n)}, n)
    n2t = v.row({1: N02, 4: Ntau2}, Ntau2.shape[0])
    m = Ntau2.shape[0]
    if N02.shape[0] != m:
        raise ConfigurationError("N_0,2 and N_tau,2 must have the same row count")

    def lmi(x):
        return (theta_multi(v, t1, t2, t3, x["P"], x["Q1"], x["Q2"], x["Q3"],
                            x["R1"], x["R2"], x["R3"])
                + _descriptor(v, lam, x["X"], n1t)
                + sym((v[1] + lam * v[8]) @ x["G"] @ n2t))

    def closed_loop(g):
        z = g["Z"]
        return [DdeSystem(N01 + z @ N02, [(Ntau1 + z @ Ntau2, tau)])]

    variables = _lk_vars(n, 3, 3) + [Variable("X", _sq(n)), Variable("G", (n, m))]
    return LmiProblem("synth_structured_constant", tuple(variables),
                      (Constraint("Theta3", "neg", lmi),), delays={"tau": tau},
                      data={"N01": N01, "N02": N02, "Ntau1": Ntau1, "Ntau2": Ntau2},
                      gain_rule={"Z": "G"}, lam=lam, scale=_scale(N01, Ntau1),
                      closed_loop=closed_loop,
                      builder=functools.partial(synth_structured_constant, N01, N02, Ntau1,
                                                Ntau2, tau))


def synth_structured_interval(N01, N02, Ntau1, Ntau2, tau_lo, tau_hi, lam) -> LmiProblem:
    """Structured gain ``Z`` valid for every delay in ``[tau_lo, tau_hi]``."""
    N01, N02, [(Ntau1, Ntau2)] = _structured_inputs(N01, N02, {"N_tau": (Ntau1, Ntau2)})
    _check_order(tau_lo, tau_hi)
    n = N01.shape[0]
    m = Ntau2.shape[0]
    if N02.shape[0] != m:
        raise ConfigurationError("N_0,2 and N_tau,2 must have the same row count")
    v = SelectorBasis(n, 8)
    n1t = v.row({1: N01, 3: Ntau1, 8: -np.eye(n)}, n)
    n2t = v.row({1: N02, 3: Ntau2}, m)

    def at(tau, x):
        return (theta_interval(v, tau, tau_lo, tau_hi, x["P"], x["Q1"], x["Q2"], x["Q3"],
                               x["R1"], x["R2"], x["S"])
                + _descriptor(v, lam, x["X"], n1t)
                + sym((v[1] + lam * v[8]) @ x["G"] @ n2t))

    variables = _interval_variables(n) + [Variable("X", _sq(n)), Variable("G", (n, m))]
    constraints = (
        Constraint("Theta1(lo)", "neg", functools.partial(at, tau_lo)),
        Constraint("Theta1(hi)", "neg", functools.partial(at, tau_hi)),
        Constraint("Xi", "pos", lambda x: xi_block(x["R2"], x["S"])),
    )
    closed_loop = _interval_closed_loop(
        lambda g, t: DdeSystem(N01 + g["Z"] @ N02, [(Ntau1 + g["Z"] @ Ntau2, t)]),
        tau_lo, tau_hi)
    return LmiProblem("synth_structured_interval", tuple(variables), constraints,
                      delays={"tau_lo": tau_lo, "tau_hi": tau_hi},
                      data={"N01": N01, "N02": N02, "Ntau1": Ntau1, "Ntau2": Ntau2},
                      gain_rule={"Z": "G"}, lam=lam, scale=_scale(N01, Ntau1),
                      closed_loop=closed_loop,
                      builder=functools.partial(synth_structured_interval, N01, N02, Ntau1,
                                                Ntau2, tau_lo, tau_hi))


def _multi_gain_problem(lemma, N01, N02, terms, taus, lam, builder):
    """Shared body of the two- and three-delay structured conditions.

    ``terms`` is a list of ``(gain name, block position, N_i1, N_i2, delay)``.
    """
    n = N01.shape[0]
    v = SelectorBasis(n, 8)
    n1_blocks = {1: N01, 8: -np.eye(n)}
    for _, pos, a, _, _ in terms:
        n1_blocks[pos] = a
    n1t = v.row(n1_blocks, n)
    rows = [("Z0", v.row({1: N02}, N02.shape[0]))] if np.any(N02) else []
    rows += [(name, v.row({pos: b}, b.shape[0])) for name, pos, _, b, _ in terms]
    t1, t2, t3 = taus

    def lmi(x):
        out = (theta_multi(v, t1, t2, t3, x["P"], x["Q1"], x["Q2"], x["Q3"],
                           x["R1"], x["R2"], x["R3"])
               + _descriptor(v, lam, x["X"], n1t))
        for name, n2t in rows:
            out = out + sym((v[1] + lam * v[8]) @ x["G_" + name] @ n2t)
        return out

    def closed_loop(g):
        return [_closed(N01, N02, g, [(name, a, b, t) for name, _, a, b, t in terms])]

    variables = _lk_vars(n, 3, 3) + [Variable("X", _sq(n))]
    variables += [Variable("G_" + name, (n, r.shape[0])) for name, r in rows]
    data = {"N01": N01, "N02": N02}
    for name, _, a, b, _ in terms:
        data[name + ",1"] = a
        data[name + ",2"] = b
    return LmiProblem(lemma, tuple(variables), (Constraint("Theta3", "neg", lmi),),
                      delays={f"tau{i}": t for i, t in enumerate(taus, 1)}, data=data,
                      gain_rule={name: "G_" + name for name, _ in rows}, lam=lam,
                      scale=_scale(N01, *(a for _, _, a, _, _ in terms)),
                      closed_loop=closed_loop, builder=builder)


def synth_two_delay(N01, N02, Ntau1, Ntau2, Nh1, Nh2, tau, h, lam) -> LmiProblem:
    """Gains ``Z0, Z_tau, Z_h`` for two delays; ``tau`` is split in half."""
    N01, N02, [(Ntau1, Ntau2), (Nh1, Nh2)] = _structured_inputs(
        N01, N02, {"N_tau": (Ntau1, Ntau2), "N_h": (Nh1, Nh2)})
    _check_order(tau, h)
    terms = [("Z_tau", 3, Ntau1, Ntau2, tau), ("Z_h", 4, Nh1, Nh2, h)]
    return _multi_gain_problem(
        "synth_two_delay", N01, N02, terms, (tau / 2.0, tau, h), lam,
        functools.partial(synth_two_delay, N01, N02, Ntau1, Ntau2, Nh1, Nh2, tau, h))


def synth_three_delay(N01, N02, N11, N12, N21, N22, N31, N32, tau1, tau2, tau3,
                      lam) -> LmiProblem:
    """Gains ``Z0 .. Z3`` for three ordered delays."""
    N01, N02, pairs = _structured_inputs(
        N01, N02, {"N_1": (N11, N12), "N_2": (N21, N22), "N_3": (N31, N32)})
    _check_order(tau1, tau2, tau3)
    terms = [(f"Z{i}", i + 1, a, b, t)
             for i, ((a, b), t) in enumerate(zip(pairs, (tau1, tau2, tau3)), 1)]
    return _multi_gain_problem(
        "synth_three_delay", N01, N02, terms, (tau1, tau2, tau3), lam,
        functools.partial(synth_three_delay, N01, N02, N11, N12, N21, N22, N31, N32,
                          tau1, tau2, tau3))
