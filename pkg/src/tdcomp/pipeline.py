"""Problem files, end-to-end observer design, and JSON serialization.

A problem file is JSON with these optional sections::

    plant:        {"A": [[...]], "B": [[...]]}
    measurement:  {"C_tau": [[...]], "tau": 1.0}                      single delay
                  {"C_tau": ..., "C_h": ..., "tau": 2.3, "h": 3.0}     two delays
                  {"C_tau": ..., "tau": 2.3, "extend_alpha": 0.7}      stacked y(t), y(t-alpha)
    functional:   {"F": [[...]], "R": [[...]]}                          R optional (augmentation rows)
    synthesis:    {"N_tau": ..., "N_h": ..., "Z_bar": ...}              pinned gains, all optional
    simulation:   {"t_end": 20, "step": 0.01, "history": "free" | [..],
                   "input": {"kind": "square", "amplitude": 1, "period": 4}, "closed_loop": false,
                   "observer_history": "consistent" | [..]}
    delay_system: {"N": ..., "N_tau": ..., "N_h": ..., "N01": ..., ...}  bare delay equations

Matrices are row-major nested lists; a bare number is a 1x1 matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dde, lmi, sdp
from . import synthesis as syn
from .errors import ConfigurationError, InvalidInputError, SolverError
from .linalg import as_matrix
from .model import (Functional, FunctionalObserver, MeasurementModel, Plant,
                    error_coefficients, error_system)

PROBLEM_DIR = Path(__file__).with_name("problems")


# --- JSON helpers ------------------------------------------------------------------

def to_jsonable(obj):
    """Numpy arrays become nested lists; complex numbers become ``[re, im]``."""
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return [[float(z.real), float(z.imag)] for z in obj.ravel()]
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, data) -> None:
    # json writes floats with repr, so values round-trip bit for bit
    Path(path).write_text(json.dumps(to_jsonable(data), indent=2) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc


def observer_to_dict(obs: FunctionalObserver) -> dict:
    out = {k: v for k, v in obs.gains().items()}
    out["tau"] = obs.tau
    if obs.is_two_delay:
        out["h"] = obs.h
    return out


def observer_from_dict(d: dict) -> FunctionalObserver:
    keys = ("M", "N", "N_tau", "G", "G_tau", "J", "J_tau", "N_h", "G_h", "J_h")
    kw = {k: np.array(d[k], dtype=float) for k in keys if d.get(k) is not None}
    try:
        return FunctionalObserver(tau=float(d["tau"]), h=d.get("h"), **kw)
    except KeyError as exc:
        raise InvalidInputError(f"observer record lacks {exc}") from exc


# --- problem model -----------------------------------------------------------------

@dataclass
class Problem:
    name: str
    raw: dict
    plant: Plant | None = None
    meas: MeasurementModel | None = None
    func: Functional | None = None
    R: np.ndarray | None = None
    pinned: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    delay_system: dict = field(default_factory=dict)

    @property
    def has_observer_data(self) -> bool:
        return self.plant is not None and self.meas is not None and self.func is not None


def _mat(d, key, required=True):
    if key not in d or d[key] is None:
        if required:
            raise InvalidInputError(f"missing matrix {key!r}")
        return None
    return as_matrix(d[key], key)


def load_problem(source) -> Problem:
    """Parse and validate a problem file (path or already-decoded dict)."""
    raw = read_json(source) if not isinstance(source, dict) else source
    if not isinstance(raw, dict):
        raise InvalidInputError("problem file must hold a JSON object")
    name = raw.get("name") or (Path(source).stem if not isinstance(source, dict) else "problem")
    prob = Problem(name=name, raw=raw)
    if "plant" in raw:
        prob.plant = Plant(_mat(raw["plant"], "A"), _mat(raw["plant"], "B"))
    if "measurement" in raw:
        m = raw["measurement"]
        if "C_h" in m:
            prob.meas = MeasurementModel(_mat(m, "C_tau"), m["tau"], _mat(m, "C_h"), m["h"])
        else:
            prob.meas = MeasurementModel(_mat(m, "C_tau"), m["tau"])
            if "extend_alpha" in m:
                prob.meas = syn.extend_measurement(prob.meas, float(m["extend_alpha"]))
    if "functional" in raw:
        prob.func = Functional(_mat(raw["functional"], "F"))
        prob.R = _mat(raw["functional"], "R", required=False)
    if prob.plant is not None:
        n = prob.plant.n
        if prob.meas is not None and prob.meas.n != n:
            raise InvalidInputError("measurement matrix width differs from the state size")
        if prob.func is not None:
            if prob.func.F.shape[1] != n:
                raise InvalidInputError("F width differs from the state size")
            if prob.func.m > n:
                raise InvalidInputError("functional has more rows than states")
    prob.pinned = {k: as_matrix(v, k) for k, v in raw.get("synthesis", {}).items()
                   if k in ("N_tau", "N_h", "Z_bar") and v is not None}
    prob.simulation = dict(raw.get("simulation", {}))
    prob.delay_system = {k: (as_matrix(v, k) if isinstance(v, (list, int, float)) else v)
                         for k, v in raw.get("delay_system", {}).items()}
    return prob


def bundled_problem(name: str) -> Problem:
    path = PROBLEM_DIR / f"{name}.json"
    if not path.exists():
        raise InvalidInputError(f"no bundled problem named {name!r}")
    return load_problem(path)


def bundled_names() -> list[str]:
    return sorted(p.stem for p in PROBLEM_DIR.glob("*.json"))


# --- design --------------------------------------------------------------------------

@dataclass
class Design:
    observer: FunctionalObserver
    plan_case: str
    functional: Functional
    augmented: syn.AugmentedFunctional | None
    certificate: dict
    roots: dde.RootReport
    residual_norm: float

    @property
    def stable(self) -> bool:
        return bool(self.roots.abscissa < 0)

    def report(self) -> dict:
        out = {
            "case": self.plan_case,
            "observer_order": self.observer.m,
            "observer": observer_to_dict(self.observer),
            "residual_norm": self.residual_norm,
            "lmi": self.certificate,
            "roots": roots_to_dict(self.roots),
            "stable": self.stable,
        }
        if self.augmented is not None:
            out["augmented"] = {"F_bar": self.augmented.F_bar, "R": self.augmented.R,
                                "K": self.augmented.K}
        return out


def roots_to_dict(r: dde.RootReport) -> dict:
    return {"rightmost": r.rightmost, "abscissa": r.abscissa, "residual": r.residual,
            "discretization_size": r.size, "refined": r.refined}


def verdict_to_dict(v: sdp.Verdict, lemma: str) -> dict:
    return {"lemma": lemma, "status": v.status, "margin": v.margin, "lambda": v.lam,
            "objective": v.objective, "iterations": v.iterations,
            "closed_loop_abscissa": v.abscissa}


def _certify_pinned(dsys: dde.DdeSystem, cfg) -> dict:
    """LMI certificate for a fixed error system; tries the cheaper condition first."""
    if len(dsys.delayed) == 1:
        (Nt, tau), = dsys.delayed
        attempts = [("stability_constant", lambda: lmi.stability_constant(dsys.A0, Nt, tau)),
                    ("stability_partitioned", lambda: lmi.stability_partitioned(dsys.A0, Nt, tau))]
    elif len(dsys.delayed) == 2:
        (Nt, tau), (Nh, h) = dsys.delayed
        attempts = [("stability_two_delay",
                     lambda: lmi.stability_two_delay(dsys.A0, Nt, Nh, tau, h))]
    else:
        return {"lemma": None, "status": "not_applicable"}
    rec = {}
    for name, build in attempts:
        v = sdp.solve(build(), cfg)
        rec = verdict_to_dict(v, name)
        if v.feasible:
            break
    return rec


def design_observer(prob: Problem, cfg: sdp.SolverConfig | None = None) -> Design:
    """Case dispatch, gain search (or pinned gains), assembly and certification."""
    cfg = cfg or sdp.SolverConfig()
    if not prob.has_observer_data:
        raise InvalidInputError("problem lacks plant, measurement or functional data")
    plant, meas, func = prob.plant, prob.meas, prob.func
    if meas.is_two_delay:
        return _design_two_delay(prob, cfg)
    plan = syn.plan_single(plant, meas, func, prob.R)
    n_eff = plan.functional.m
    if plan.inner_case == syn.CASE1:
        if "N_tau" in prob.pinned:
            obs = syn.observer_from_N_tau(plant, meas, plan, prob.pinned["N_tau"])
            cert = None
        else:
            v = sdp.solve_synthesis(lmi.synth_constant(plan.N, meas.tau, None), cfg)
            _require(v, "synth_constant")
            obs = syn.observer_from_N_tau(plant, meas, plan, v.gains["N_tau"])
            cert = verdict_to_dict(v, "synth_constant")
    else:
        if "Z_bar" in prob.pinned:
            obs = syn.observer_from_Zbar(plant, meas, plan, prob.pinned["Z_bar"])
            cert = None
        else:
            v_rows = plan.N_bar.shape[0]
            p = lmi.synth_structured_constant(plan.N, np.zeros((v_rows, n_eff)),
                                              np.zeros((n_eff, n_eff)), plan.N_bar, meas.tau, None)
            v = sdp.solve_synthesis(p, cfg)
            _require(v, "synth_structured_constant")
            obs = syn.observer_from_Zbar(plant, meas, plan, v.gains["Z"])
            cert = verdict_to_dict(v, "synth_structured_constant")
    dsys = error_system(plant, meas, plan.functional, obs)
    if cert is None:
        cert = _certify_pinned(dsys, cfg)
    coeffs = error_coefficients(plant, meas, plan.functional, obs)
    return Design(obs, plan.case_tag, plan.functional, plan.augmented, cert,
                  dde.rightmost_roots(dsys), coeffs.residual_norm)


def _design_two_delay(prob: Problem, cfg) -> Design:
    plant, meas, func = prob.plant, prob.meas, prob.func
    if not syn.two_delay_rank_check(meas, plant):
        raise syn.UnsupportedCaseError(
            "two-delay measurement stack is rank deficient; no design procedure is available")
    N = syn.compute_N(func, plant)
    m = func.m
    if "N_tau" in prob.pinned and "N_h" in prob.pinned:
        Nt, Nh = prob.pinned["N_tau"], prob.pinned["N_h"]
        cert = None
    else:
        eye, zero = np.eye(m), np.zeros((m, m))
        p = lmi.synth_two_delay(N, zero, zero, eye, zero, eye, meas.tau, meas.h, None)
        v = sdp.solve_synthesis(p, cfg)
        _require(v, "synth_two_delay")
        Nt, Nh = v.gains["Z_tau"], v.gains["Z_h"]
        cert = verdict_to_dict(v, "synth_two_delay")
    obs = syn.observer_two_delay(plant, meas, func, Nt, Nh)
    dsys = error_system(plant, meas, func, obs)
    if cert is None:
        cert = _certify_pinned(dsys, cfg)
    coeffs = error_coefficients(plant, meas, func, obs)
    return Design(obs, "two_delay", func, None, cert, dde.rightmost_roots(dsys),
                  coeffs.residual_norm)


class NotFoundError(SolverError):
    """No certified gain was found (maps to the 'infeasible' exit status)."""


class InconclusiveError(SolverError):
    """The solver ran out of iterations before reaching a verdict."""


def _require(v: sdp.Verdict, lemma: str):
    if v.feasible:
        return
    if v.status == sdp.INCONCLUSIVE:
        raise InconclusiveError(f"{lemma}: solver could not reach a verdict ({v.message})")
    raise NotFoundError(f"{lemma}: no certified stabilizing gain found ({v.message})")


# --- simulation ------------------------------------------------------------------------

def input_signal(spec: dict | None):
    spec = spec or {"kind": "zero"}
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return dde.zero_signal
    if kind == "step":
        return dde.step_signal(float(spec.get("amplitude", 1.0)))
    if kind == "square":
        return dde.square_wave(float(spec.get("amplitude", 1.0)), float(spec.get("period", 4.0)))
    raise InvalidInputError(f"unknown input kind {kind!r} (zero, step, square)")


def simulate_problem(prob: Problem, obs: FunctionalObserver, functional: Functional | None = None,
                     augmented=None, t_end=None, step=None, closed_loop=None,
                     zero_error=False) -> dde.CoupledResult:
    sim = prob.simulation
    t_end = float(t_end if t_end is not None else sim.get("t_end", 20.0))
    step = float(step if step is not None else sim.get("step", 0.01))
    closed = bool(sim.get("closed_loop", False) if closed_loop is None else closed_loop)
    hist = sim.get("history", "free")
    x_hist = None if hist == "free" else np.asarray(hist, dtype=float)
    func = functional or prob.func
    if func.m != obs.m and prob.has_observer_data:
        aug = syn.augment(prob.func, prob.plant, prob.R)
        func, augmented = aug.functional, aug
    K = augmented.K if (closed and augmented is not None) else None
    w_hist = "consistent" if zero_error or sim.get("observer_history", "consistent") == "consistent" \
        else np.asarray(sim["observer_history"], dtype=float)
    return dde.simulate_coupled(prob.plant, prob.meas, func, obs, input_signal(sim.get("input")),
                                t_end, step, x_history=x_hist, w_history=w_hist,
                                closed_loop=closed, K=K)


def trajectory_table(res: dde.CoupledResult):
    """Header and rows for CSV output: t, x_i, zhat_j, y_k, e_j."""
    n, m, p = res.x.states.shape[1], res.z_hat.shape[1], res.y.shape[1]
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"zhat{j + 1}" for j in range(m)]
              + [f"y{k + 1}" for k in range(p)] + [f"e{j + 1}" for j in range(m)])
    data = np.hstack([res.x.times[:, None], res.x.states, res.z_hat, res.y, res.e])
    return header, data


# --- delay-system families for sweeps ---------------------------------------------

LEMMAS = ("stability-constant", "stability-interval", "stability-interval-pd",
          "stability-partitioned", "stability-multi", "stability-two-delay",
          "synth-constant", "synth-interval", "synth-structured", "synth-structured-interval",
          "synth-two-delay", "synth-three-delay", "scalar")


def _ds(ds, key, default=None):
    if key in ds:
        return ds[key]
    if default is not None:
        return default
    raise ConfigurationError(f"delay system needs {key!r} for this lemma")


def delay_family(prob: Problem, lemma: str, lower=None, fixed=None):
    """Return ``(family, kind)`` where ``family(delay) -> LmiProblem``.

    ``kind`` is "bisect" for single-parameter conditions and "grid" for the
    interval conditions (the swept value is the upper limit; ``lower`` fixed).
    ``fixed`` supplies the second delay of two-delay conditions.
    """
    ds = dict(prob.delay_system)
    if not ds and prob.has_observer_data:
        ds = derived_delay_system(prob)
    if lemma not in LEMMAS:
        raise ConfigurationError(f"unknown lemma {lemma!r}; choose from {', '.join(LEMMAS)}")
    N = ds.get("N", ds.get("N01"))
    if N is None:
        raise ConfigurationError("delay system needs 'N' or 'N01'")
    n = N.shape[0]
    zero = np.zeros((n, n))

    def need_lower():
        if lower is None:
            raise ConfigurationError(f"{lemma} needs --lower (the fixed lower delay)")
        return float(lower)

    def need_fixed():
        if fixed is None:
            raise ConfigurationError(f"{lemma} needs --fixed (the other delay)")
        return float(fixed)

    if lemma == "stability-constant":
        Nt = _ds(ds, "N_tau")
        return (lambda t: lmi.stability_constant(N, Nt, t)), "bisect"
    if lemma == "stability-partitioned":
        Nt = _ds(ds, "N_tau")
        return (lambda t: lmi.stability_partitioned(N, Nt, t)), "bisect"
    if lemma == "stability-interval":
        Nt, lo = _ds(ds, "N_tau"), need_lower()
        return (lambda t: lmi.stability_interval(N, Nt, lo, t)), "grid"
    if lemma == "stability-interval-pd":
        Nt, lo = _ds(ds, "N_tau"), need_lower()
        return (lambda t: lmi.stability_interval_pd(N, Nt, lo, t)), "grid"
    if lemma == "stability-two-delay":
        Nt, Nh, tau = _ds(ds, "N_tau"), _ds(ds, "N_h"), need_fixed()
        return (lambda h: lmi.stability_two_delay(N, Nt, Nh, tau, h)), "bisect"
    if lemma == "stability-multi":
        N1, N2, N3 = _ds(ds, "N1", zero), _ds(ds, "N2", zero), _ds(ds, "N3")
        gaps = _ds(ds, "gaps")
        return (lambda t: lmi.stability_multi(N, N1, N2, N3, t, t + float(gaps[0, 0]),
                                              t + float(gaps[0, 1]))), "bisect"
    if lemma == "synth-constant":
        return (lambda t: lmi.synth_constant(N, t, None)), "bisect"
    if lemma == "synth-interval":
        lo = need_lower()
        return (lambda t: lmi.synth_interval(N, lo, t, None)), "grid"
    if lemma in ("synth-structured", "synth-structured-interval"):
        Nt2 = _ds(ds, "Ntau2")
        N02 = _ds(ds, "N02", np.zeros((Nt2.shape[0], n)))
        Nt1 = _ds(ds, "Ntau1", zero)
        if lemma == "synth-structured":
            return (lambda t: lmi.synth_structured_constant(N, N02, Nt1, Nt2, t, None)), "bisect"
        lo = need_lower()
        return (lambda t: lmi.synth_structured_interval(N, N02, Nt1, Nt2, lo, t, None)), "grid"
    if lemma == "synth-two-delay":
        Nt2, Nh2 = _ds(ds, "Ntau2"), _ds(ds, "Nh2")
        N02 = _ds(ds, "N02", np.zeros((Nt2.shape[0], n)))
        Nt1, Nh1 = _ds(ds, "Ntau1", zero), _ds(ds, "Nh1", zero)
        h = need_fixed()
        return (lambda t: lmi.synth_two_delay(N, N02, Nt1, Nt2, Nh1, Nh2, t, h, None)), "bisect"
    if lemma == "synth-three-delay":
        N12, N22, N32 = _ds(ds, "N12"), _ds(ds, "N22"), _ds(ds, "N32")
        N02 = _ds(ds, "N02", np.zeros((N12.shape[0], n)))
        N11, N21, N31 = _ds(ds, "N11", zero), _ds(ds, "N21", zero), _ds(ds, "N31", zero)
        gaps = _ds(ds, "gaps")
        return (lambda t: lmi.synth_three_delay(N, N02, N11, N12, N21, N22, N31, N32, t,
                                                t + float(gaps[0, 0]), t + float(gaps[0, 1]),
                                                None)), "bisect"
    raise ConfigurationError(f"{lemma} is not an LMI family")


def scalar_bound(a: float) -> float:
    """Supremum of delays for which some ``b`` passes :func:`dde.scalar_delay_test`."""
    return math.inf if a <= 0 else 1.0 / a


def derived_delay_system(prob: Problem) -> dict:
    """Delay-equation data implied by an observer problem."""
    plant, meas, func = prob.plant, prob.meas, prob.func
    if meas.is_two_delay:
        N = syn.compute_N(func, plant)
        m = N.shape[0]
        out = {"N": N, "Ntau2": np.eye(m), "Nh2": np.eye(m)}
    else:
        plan = syn.plan_single(plant, meas, func, prob.R)
        out = {"N": plan.N}
        if plan.inner_case == syn.CASE2:
            out["Ntau2"] = plan.N_bar
    out.update({k: v for k, v in prob.pinned.items() if k in ("N_tau", "N_h")})
    return out


def max_delay_query(prob: Problem, lemma: str, lo: float, hi: float, tol: float,
                    cfg: sdp.SolverConfig | None = None, lower=None, fixed=None,
                    grid_step: float = 0.1) -> dict:
    """Run a sweep and return a report-ready record."""
    cfg = cfg or sdp.SolverConfig()
    if lemma == "scalar":
        ds = prob.delay_system or derived_delay_system(prob)
        N = ds.get("N")
        if N is None or N.shape != (1, 1):
            raise ConfigurationError("the scalar test needs a 1x1 N")
        a = float(N[0, 0])
        return {"lemma": "scalar", "bound": scalar_bound(a), "strict": True,
                "note": "sup of delays admitting b with a+b<0 and b>=-1/tau; not attained"}
    family, kind = delay_family(prob, lemma, lower, fixed)
    if kind == "grid":
        grid = list(np.arange(lo, hi + 1e-12, grid_step))
        if grid[-1] < hi - 1e-12:
            grid.append(hi)
        res = sdp.sweep_upper(family, grid, tol, cfg, query=lemma)
    else:
        res = sdp.max_delay(family, lo, hi, tol, cfg, query=lemma)
    best = res.best
    rec = {
        "lemma": lemma, "lower": lower, "fixed": fixed,
        "certified_max_delay": res.certified_max_delay,
        "first_rejected": res.first_rejected,
        "reached_upper_limit": res.reached_upper,
        "trace": [[t, s] for t, s in res.trace],
        "inconclusive_probes": res.inconclusive,
        "margin": best.margin if best else None,
        "lambda": best.lam if best else None,
        "note": "feasibility uses a strict margin, so the bound is slightly conservative",
    }
    if best is not None and best.gains:
        rec["gains"] = best.gains
        rec["closed_loop_abscissa"] = best.abscissa
    return rec
