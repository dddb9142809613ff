"""Linear delay-differential equations: simulation and characteristic roots.

A :class:`DdeSystem` is ``de/dt = A0 e(t) + sum_i A_i e(t - tau_i) + f(t)``
where the optional forcing ``f`` is a linear combination of an input signal
and delayed copies of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DimensionError
from .linalg import as_matrix

RK4_NODES = (0.0, 0.5, 0.5, 1.0)
_ALIGN_RTOL = 1e-9
_LEFT_LIMIT = 1e-7


@dataclass(frozen=True)
class InputMap:
    """Forcing ``sum_j B_j u(t - d_j)``; ``d_j = 0`` is an undelayed term."""

    signal: Callable[[float], np.ndarray]
    terms: tuple  # of (B_j, d_j)


class DdeSystem:
    def __init__(self, A0, delayed=(), inputs: InputMap | None = None):
        self.A0 = as_matrix(A0, "A0")
        n = self.A0.shape[0]
        if self.A0.shape != (n, n):
            raise DimensionError(f"A0 must be square, got {self.A0.shape}")
        terms = []
        for a, tau in delayed:
            a = as_matrix(a, "A_i")
            if a.shape != (n, n):
                raise DimensionError(f"delayed matrix has shape {a.shape}, expected {(n, n)}")
            tau = float(tau)
            if not tau > 0 or not math.isfinite(tau):
                raise ConfigurationError(f"delays must be positive, got {tau}")
            terms.append((a, tau))
        taus = [t for _, t in terms]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigurationError(f"delays must be strictly increasing, got {taus}")
        self.delayed = tuple(terms)
        self.inputs = inputs

    @classmethod
    def merged(cls, A0, terms, inputs=None) -> "DdeSystem":
        """Build from unsorted terms, summing matrices that share a delay."""
        acc: dict[float, np.ndarray] = {}
        for a, tau in terms:
            key = round(float(tau), 12)
            a = as_matrix(a)
            acc[key] = acc[key] + a if key in acc else a.copy()
        return cls(A0, sorted(((a, t) for t, a in acc.items()), key=lambda p: p[1]), inputs)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def delays(self) -> list[float]:
        return [t for _, t in self.delayed]

    @property
    def max_delay(self) -> float:
        lags = self.delays
        if self.inputs is not None:
            lags = lags + [d for _, d in self.inputs.terms]
        return max(lags, default=0.0)

    def characteristic_matrix(self, s: complex) -> np.ndarray:
        out = s * np.eye(self.n) - self.A0
        for a, tau in self.delayed:
            out = out - a * np.exp(-s * tau)
        return out

    def __repr__(self):
        return f"DdeSystem(n={self.n}, delays={self.delays})"


def _history_fn(history, n):
    if callable(history):
        def fn(t):
            return np.asarray(history(t), dtype=float).reshape(n)
        return fn
    const = np.asarray(history, dtype=float).reshape(-1)
    if const.size == 1 and n > 1:
        const = np.full(n, float(const[0]))
    if const.size != n:
        raise DimensionError(f"history has {const.size} entries, expected {n}")
    return lambda t: const


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n)
    step: float
    derivs: np.ndarray | None = field(default=None, repr=False)
    history: Callable | None = field(default=None, repr=False)

    def at(self, t: float) -> np.ndarray:
        """State at ``t``: grid value, history for ``t < 0``, cubic Hermite otherwise."""
        if t < -1e-12 * self.step:
            if self.history is None:
                raise ConfigurationError("trajectory has no history")
            return self.history(t)
        pos = t / self.step
        k = int(round(pos))
        if abs(pos - k) <= _ALIGN_RTOL * max(1.0, pos) and 0 <= k < len(self.times):
            return self.states[k]
        k = min(int(math.floor(pos)), len(self.times) - 2)
        if self.derivs is None or k + 1 >= len(self.derivs):
            raise ConfigurationError(f"time {t} outside the dense-output range")
        return _hermite(self.states[k], self.states[k + 1], self.derivs[k], self.derivs[k + 1],
                        pos - k, self.step)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def _hermite(y0, y1, f0, f1, s, h):
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * f0
            + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * f1)


def _lag_steps(delays, step):
    """Integer step counts for each delay, or None if any delay is off-grid."""
    out = []
    for tau in delays:
        d = tau / step
        k = int(round(d))
        if abs(d - k) > _ALIGN_RTOL * d:
            return None
        out.append(k)
    return out


def simulate(sys: DdeSystem, history, t_end: float, step: float) -> Trajectory:
    """Fixed-step RK4 integration by the method of steps.

    When every delay (state and input) is an integer number of steps the
    delayed stage values are read from the stored stages of earlier steps,
    so the scheme is exactly RK4 on the equivalent chain of ODEs.  Otherwise
    delayed values come from cubic Hermite interpolation on the grid.
    """
    if not step > 0 or not t_end > 0:
        raise ConfigurationError("step and t_end must be positive")
    lags = sys.delays + ([d for _, d in sys.inputs.terms if d > 0] if sys.inputs else [])
    if lags and step > min(lags) / 4.0 * (1 + 1e-12):
        raise ConfigurationError(f"step {step} exceeds a quarter of the smallest delay {min(lags)}")
    n = sys.n
    hist = _history_fn(history, n)
    nsteps = int(math.ceil(t_end / step - 1e-9))
    states = np.zeros((nsteps + 1, n))
    derivs = np.zeros((nsteps + 1, n))
    stages = np.zeros((nsteps + 1, 4, n))
    states[0] = hist(0.0)

    lag_steps = _lag_steps(sys.delays, step)
    in_terms = list(sys.inputs.terms) if sys.inputs else []
    in_lag_steps = _lag_steps([d for _, d in in_terms], step) if in_terms else []

    def forcing(k, c):
        out = np.zeros(n)
        for j, (b, d) in enumerate(in_terms):
            # consistent time arithmetic keeps input jumps on the same side
            t = (k - in_lag_steps[j] + c) * step if in_lag_steps is not None else (k + c) * step - d
            if c == 1.0:
                # end-of-step stage: left limit, so jumps on grid points split cleanly
                t -= _LEFT_LIMIT * step
            out += b @ np.atleast_1d(np.asarray(sys.inputs.signal(t), dtype=float))
        return out

    def delayed_value(i, k, j, c):
        tau = sys.delayed[i][1]
        if lag_steps is not None:
            kk = k - lag_steps[i]
            if kk >= 0:
                return stages[kk, j]
            return hist((kk + c) * step)
        t = (k + c) * step - tau
        if t < 0:
            return hist(t)
        pos = t / step
        m = int(math.floor(pos))
        return _hermite(states[m], states[m + 1], derivs[m], derivs[m + 1], pos - m, step)

    def rhs(k, j, y):
        c = RK4_NODES[j]
        out = sys.A0 @ y
        for i, (a, _) in enumerate(sys.delayed):
            out = out + a @ delayed_value(i, k, j, c)
        if in_terms:
            out = out + forcing(k, c)
        return out

    for k in range(nsteps):
        y = states[k]
        stages[k, 0] = y
        k1 = rhs(k, 0, y)
        derivs[k] = k1
        stages[k, 1] = y + 0.5 * step * k1
        k2 = rhs(k, 1, stages[k, 1])
        stages[k, 2] = y + 0.5 * step * k2
        k3 = rhs(k, 2, stages[k, 2])
        stages[k, 3] = y + step * k3
        k4 = rhs(k, 3, stages[k, 3])
        states[k + 1] = y + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(states[k + 1])):
            raise ConfigurationError(f"integration diverged at t={(k + 1) * step}")
    stages[nsteps, 0] = states[nsteps]
    derivs[nsteps] = rhs(nsteps, 0, states[nsteps])
    times = np.arange(nsteps + 1) * step
    return Trajectory(times=times, states=states, step=step, derivs=derivs, history=hist)


# --- characteristic roots --------------------------------------------------------

@dataclass(frozen=True)
class RootReport:
    rightmost: np.ndarray  # rightmost root and its conjugate when complex
    abscissa: float
    size: int
    residual: float
    refined: bool
    candidates: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, complex))


def _cheb(N):
    """Chebyshev points ``cos(j pi / N)`` and the differentiation matrix."""
    j = np.arange(N + 1)
    x = np.cos(np.pi * j / N)
    c = np.where((j == 0) | (j == N), 2.0, 1.0) * (-1.0) ** j
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def _barycentric_row(x, xi):
    """Row vector ``w`` with ``p(xi) = w @ p(x)`` for the Chebyshev interpolant."""
    N = len(x) - 1
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = xi - x
    hit = np.flatnonzero(np.abs(diff) < 1e-14)
    if hit.size:
        out = np.zeros(N + 1)
        out[hit[0]] = 1.0
        return out
    q = w / diff
    return q / q.sum()


def discretized_generator(sys: DdeSystem, N: int) -> np.ndarray:
    """Pseudospectral approximation of the infinitesimal generator on ``N+1`` nodes."""
    n, tmax = sys.n, sys.max_delay
    x, D = _cheb(N)
    D = D * (2.0 / tmax)  # nodes theta = tmax (x - 1) / 2, theta_0 = 0
    big = np.kron(D, np.eye(n))
    top = np.zeros((n, (N + 1) * n))
    top[:, :n] = sys.A0
    for a, tau in sys.delayed:
        w = _barycentric_row(x, 1.0 - 2.0 * tau / tmax)
        top += np.kron(w[None, :], a)
    big[:n] = top
    return big


def _newton(sys: DdeSystem, s0: complex, maxit=50):
    s = complex(s0)
    eye = np.eye(sys.n)
    for _ in range(maxit):
        m = sys.characteristic_matrix(s)
        dm = eye.astype(complex)
        for a, tau in sys.delayed:
            dm = dm + tau * a * np.exp(-s * tau)
        try:
            ds = 1.0 / np.trace(np.linalg.solve(m, dm))
        except np.linalg.LinAlgError:
            break
        s -= ds
        if not np.isfinite(s):
            return complex(s0), False
        if abs(ds) <= 1e-15 * max(1.0, abs(s)):
            break
    return s, True


def _residual(sys, s) -> float:
    return float(abs(np.linalg.det(sys.characteristic_matrix(s))))


def rightmost_roots(sys: DdeSystem, grid: int = 24, max_doublings: int = 4) -> RootReport:
    """Rightmost characteristic roots by spectral discretization plus Newton refinement."""
    if grid < 8:
        raise ConfigurationError("grid must be at least 8")
    if not sys.delayed:
        w = np.linalg.eigvals(sys.A0)
        return _report(sys, w, w, sys.n, refine=False)
    ratio = sys.max_delay / min(sys.delays)
    N = int(min(grid * max(1, math.ceil(ratio)), 240))
    prev = None
    for _ in range(max_doublings + 1):
        w = np.linalg.eigvals(discretized_generator(sys, N))
        w = w[np.isfinite(w)]
        lead = w[np.argmax(w.real)]
        if prev is not None and abs(lead - prev) < 1e-6:
            break
        prev = lead
        N *= 2
    return _report(sys, w, w, (N + 1) * sys.n, refine=True)


def _report(sys, eigs, candidates, size, refine):
    order = np.argsort(-eigs.real)
    top = eigs[order[:min(len(order), 8)]]
    refined_ok = True
    if refine:
        out = []
        for s0 in top:
            s, ok = _newton(sys, s0)
            if not ok or abs(s - s0) > 0.1 * max(1.0, abs(s0)):
                s, ok = s0, False
            out.append((s, ok))
        best = max(out, key=lambda p: p[0].real)
        lead, refined_ok = best
    else:
        lead = top[0]
    lead = complex(lead)
    if abs(lead.imag) < 1e-10:
        lead = complex(lead.real, 0.0)
        rightmost = np.array([lead])
    else:
        rightmost = np.array([complex(lead.real, abs(lead.imag)), complex(lead.real, -abs(lead.imag))])
    return RootReport(rightmost=rightmost, abscissa=float(lead.real), size=int(size),
                      residual=_residual(sys, lead), refined=bool(refined_ok and refine),
                      candidates=np.asarray(candidates))


def scalar_delay_test(a: float, b: float, tau: float) -> bool:
    """Scalar delay test ``a + b < 0`` and ``b >= -1/tau``."""
    return bool(a + b < 0 and b >= -1.0 / tau)


# --- plant + observer co-simulation ----------------------------------------------

def square_wave(amplitude=1.0, period=2.0):
    def u(t):
        if t < 0:
            return 0.0
        return amplitude if (t % period) < 0.5 * period else -amplitude
    return u


def step_signal(amplitude=1.0):
    return lambda t: amplitude if t >= 0 else 0.0


def zero_signal(t):
    return 0.0


@dataclass
class CoupledResult:
    x: Trajectory
    z_hat: np.ndarray  # (len(times), m)
    e: np.ndarray
    y: np.ndarray


def _vector_signal(u, r):
    def sig(t):
        v = np.atleast_1d(np.asarray(u(t), dtype=float))
        if v.size == 1 and r > 1:
            v = np.full(r, v[0])
        return v
    return sig


def _output_terms(meas):
    terms = [(meas.C_tau, meas.tau)]
    if meas.is_two_delay:
        terms.append((meas.C_h, meas.h))
    return terms


def simulate_coupled(plant, meas, func, obs, u=zero_signal, t_end=20.0, step=0.01,
                     x_history=None, w_history="consistent", closed_loop=False, K=None,
                     check_tol=1e-6) -> CoupledResult:
    """Co-integrate the plant and the observer driven by delayed measurements.

    ``x_history`` is either a constant, a callable, or None (the free plant
    response ``exp(A t) x0`` with ``x0 = 1``).  ``w_history="consistent"``
    chooses the observer history that makes the initial estimation error zero.
    In closed-loop mode the plant input is ``K z_hat + u`` (``u`` acting as a
    reference) and ``K`` defaults to the identity.
    """
    from scipy.linalg import expm
    from .model import error_coefficients, decoupling_conditions_hold

    if not decoupling_conditions_hold(error_coefficients(plant, meas, func, obs), check_tol):
        raise ConfigurationError("observer does not satisfy the decoupling conditions")
    A, B = plant.A, plant.B
    n, r = B.shape
    m = obs.N.shape[0]
    Fm = func.F
    outs = _output_terms(meas)
    if x_history is None:
        x0 = np.ones(n)
        x_hist = lambda t: expm(A * t) @ x0
    else:
        x_hist = _history_fn(x_history, n)

    def y_of(xfun, t):
        return sum(c @ xfun(t - d) for c, d in outs)

    if isinstance(w_history, str):
        if w_history != "consistent":
            raise ConfigurationError(f"unknown observer history {w_history!r}")
        w_hist = lambda t: Fm @ x_hist(t) - obs.M @ y_of(x_hist, t)
    else:
        w_hist = _history_fn(w_history, m)

    # observer terms: (delay, matrix acting on w(t-d)), (delay, matrix on y(t-d)), inputs
    w_terms = [(obs.N_tau, meas.tau)]
    y_terms = [(obs.G, 0.0), (obs.G_tau, meas.tau)]
    u_terms = [(obs.J, 0.0), (obs.J_tau, meas.tau)]
    if meas.is_two_delay:
        w_terms.append((obs.N_h, meas.h))
        y_terms.append((obs.G_h, meas.h))
        u_terms.append((obs.J_h, meas.h))

    size = n + m
    A0 = np.zeros((size, size))
    A0[:n, :n] = A
    A0[n:, n:] = obs.N
    terms = [(_embed(size, n, n, w), d) for w, d in w_terms]
    for g, dy in y_terms:
        for c, dc in outs:
            terms.append((_embed(size, n, 0, g @ c), dy + dc))
    sig = _vector_signal(u, r)
    in_terms = [(np.vstack([B, np.zeros((m, r))]), 0.0)]
    in_terms += [(np.vstack([np.zeros((n, r)), j]), d) for j, d in u_terms]
    if closed_loop:
        Kx = np.eye(m) if K is None else as_matrix(K, "K")
        # u = K (w + M y) + reference, fed back through every input term
        for bmat, du in in_terms:
            A_fb = bmat @ Kx
            terms.append((_shift_block(size, A_fb, n), du))
            for c, dc in outs:
                terms.append((_embed_cols(size, A_fb @ obs.M @ c, 0), du + dc))
    a0 = A0.copy()
    delayed = []
    for a, d in terms:
        if d == 0.0:
            a0 += a
        else:
            delayed.append((a, d))
    system = DdeSystem.merged(a0, delayed, InputMap(sig, tuple(in_terms)))
    full_hist = lambda t: np.concatenate([x_hist(t), w_hist(t)])
    traj = simulate(system, full_hist, t_end, step)
    xs = Trajectory(traj.times, traj.states[:, :n], step, traj.derivs[:, :n], x_hist)
    ws = traj.states[:, n:]
    ys = np.array([y_of(xs.at, t) for t in traj.times])
    z_hat = ws + ys @ obs.M.T
    e = z_hat - xs.states @ Fm.T
    return CoupledResult(x=xs, z_hat=z_hat, e=e, y=ys)


def _embed(size, row0, col0, block):
    out = np.zeros((size, size))
    out[row0:row0 + block.shape[0], col0:col0 + block.shape[1]] = block
    return out


def _shift_block(size, a_fb, n):
    """``a_fb`` (size x m) acting on the observer part of the state."""
    out = np.zeros((size, size))
    out[:, n:] = a_fb
    return out


def _embed_cols(size, block, col0):
    out = np.zeros((size, size))
    out[:, col0:col0 + block.shape[1]] = block
    return out
