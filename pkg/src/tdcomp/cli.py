"""Command-line front end.

Exit codes: 0 success, 2 validation error, 3 infeasible or not found,
4 inconclusive, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dde, sdp
from . import pipeline as P
from . import repro
from . import synthesis as syn
from .errors import (ConfigurationError, DimensionError, InvalidInputError, NoFeasibleStartError,
                     SolverError, SynthesisError, TdcompError)

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_INCONCLUSIVE, EXIT_INTERNAL = 0, 2, 3, 4, 5

log = logging.getLogger("tdcomp")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def solver_config(args) -> sdp.SolverConfig:
    kw = {}
    if getattr(args, "lambda_grid", None):
        kw["lambda_grid"] = args.lambda_grid
    if getattr(args, "max_iterations", None):
        kw["max_iterations"] = args.max_iterations
    return sdp.SolverConfig(**kw)


def _problem(path):
    p = Path(path)
    if not p.exists() and not p.suffix:
        # bare names refer to the bundled example files
        return P.bundled_problem(path)
    if not p.exists():
        raise InvalidInputError(f"no such problem file: {path}")
    return P.load_problem(p)


def _emit(report: dict, out):
    if out:
        P.write_json(out, report)
        print(f"report written to {out}")
    else:
        import json
        print(json.dumps(P.to_jsonable(report), indent=2))


# --- verbs -------------------------------------------------------------------------

def cmd_synthesize(args) -> int:
    prob = _problem(args.problem)
    design = P.design_observer(prob, solver_config(args))
    report = {"problem": prob.name, "verb": "synthesize", **design.report()}
    _emit(report, args.out)
    return EXIT_OK


def cmd_max_delay(args) -> int:
    prob = _problem(args.problem)
    lo, hi = args.range
    if lo >= hi and args.lemma != "scalar":
        raise ConfigurationError("--range needs LO < HI")
    rec = P.max_delay_query(prob, args.lemma, lo, hi, args.tol, solver_config(args),
                            lower=args.lower, fixed=args.fixed, grid_step=args.grid_step)
    _emit({"problem": prob.name, "verb": "max-delay", "sweep": rec}, args.out)
    if rec.get("inconclusive_probes"):
        log.warning("%d probes were inconclusive", rec["inconclusive_probes"])
    return EXIT_OK


def _observer_source(args, prob):
    if args.observer:
        rep = P.read_json(args.observer)
        obs = P.observer_from_dict(rep["observer"] if "observer" in rep else rep)
        aug = None
        func = prob.func
        if "augmented" in rep:
            aug = syn.AugmentedFunctional(np.asarray(rep["augmented"]["F_bar"], float),
                                          np.asarray(rep["augmented"]["R"], float),
                                          np.asarray(rep["augmented"]["K"], float))
            func = aug.functional
        return obs, func, aug
    d = P.design_observer(prob, solver_config(args))
    return d.observer, d.functional, d.augmented


def write_trajectory(res, path, dat=False):
    header, data = P.trajectory_table(res)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    if dat:
        dat_path = Path(path).with_suffix(".dat")
        np.savetxt(dat_path, data, header=" ".join(header), comments="# ")
        return dat_path
    return None


def cmd_simulate(args) -> int:
    prob = _problem(args.problem)
    obs, func, aug = _observer_source(args, prob)
    closed = True if args.closed_loop else None
    res = P.simulate_problem(prob, obs, func, aug, t_end=args.t_end, step=args.step,
                             closed_loop=closed)
    out = args.out or f"{prob.name}_trajectory.csv"
    dat = write_trajectory(res, out, args.dat)
    e_norm = np.linalg.norm(res.e, axis=1)
    n_tail = max(1, len(e_norm) // 10)
    summary = {
        "problem": prob.name, "verb": "simulate", "csv": str(out),
        "dat": str(dat) if dat else None,
        "t_end": float(res.x.times[-1]), "step": res.x.step,
        "observer": P.observer_to_dict(obs),
        "final_error_norm": float(e_norm[-1]),
        "tail_error_norm_max": float(e_norm[-n_tail:].max()),
        "final_state_norm": float(np.linalg.norm(res.x.states[-1])),
        "peak_state_norm": float(np.linalg.norm(res.x.states, axis=1).max()),
    }
    if args.summary:
        P.write_json(args.summary, summary)
    print(f"trajectory written to {out}")
    print(f"final |e| = {summary['final_error_norm']:.3e}, tail max |e| = "
          f"{summary['tail_error_norm_max']:.3e}, final |x| = {summary['final_state_norm']:.3e}")
    return EXIT_OK


def cmd_closed_loop(args) -> int:
    prob = _problem(args.problem)
    if prob.meas is None or prob.meas.is_two_delay:
        raise ConfigurationError("closed-loop analysis needs a single-delay observer problem")
    obs, func, aug = _observer_source(args, prob)
    if aug is None:
        aug = func
    se, so = syn.closed_loop_systems(prob.plant, prob.meas, aug, obs)
    F = prob.func.F if not isinstance(aug, syn.AugmentedFunctional) else aug.K @ aug.F_bar
    fb = np.linalg.eigvals(prob.plant.A + prob.plant.B @ F)
    err = dde.rightmost_roots(dde.DdeSystem(obs.N, [(obs.N_tau, obs.tau)]))
    report = {
        "problem": prob.name, "verb": "closed-loop",
        "state_feedback_eigenvalues": fb,
        "error_roots": P.roots_to_dict(err),
        "state_error_roots": P.roots_to_dict(dde.rightmost_roots(se)),
        "state_observer_roots": P.roots_to_dict(dde.rightmost_roots(so)),
    }
    _emit(report, args.out)
    return EXIT_OK


def cmd_roots(args) -> int:
    prob = _problem(args.problem)
    if prob.has_observer_data:
        obs, func, _ = _observer_source(args, prob)
        delayed = [(obs.N_tau, obs.tau)] + ([(obs.N_h, obs.h)] if obs.is_two_delay else [])
        sys_ = dde.DdeSystem(obs.N, delayed)
    else:
        ds = prob.delay_system
        if "N" not in ds or "N_tau" not in ds or args.tau is None:
            raise ConfigurationError("bare delay systems need N, N_tau and --tau")
        delayed = [(ds["N_tau"], args.tau)]
        if "N_h" in ds:
            if args.h is None:
                raise ConfigurationError("N_h given; pass --h")
            delayed.append((ds["N_h"], args.h))
        sys_ = dde.DdeSystem(ds["N"], delayed)
    r = dde.rightmost_roots(sys_)
    _emit({"problem": prob.name, "verb": "roots", **P.roots_to_dict(r),
           "stable": bool(r.abscissa < 0)}, args.out)
    return EXIT_OK


def cmd_repro(args) -> int:
    names = repro.select(args.filter)
    if not names:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return EXIT_VALIDATION
    cfg = solver_config(args)
    results = repro.run_all(names, cfg, args.jobs)
    width = max(len(r.name) for r in results)
    for r in results:
        flag = {"pass": "PASS", "fail": "FAIL", "inconclusive": "INCONCLUSIVE"}[r.status]
        print(f"{flag:<12} {r.name:<{width}}  measured={repro.format_value(r.measured)}  "
              f"expected={repro.format_value(r.expected)}  {r.detail}  ({r.seconds:.1f}s)")
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} checks passed")
    if args.out:
        P.write_json(args.out, {"verb": "repro", "checks": [vars(r) for r in results]})
    if n_pass == len(results):
        return EXIT_OK
    if any(r.status == repro.INCONCLUSIVE for r in results):
        return EXIT_INCONCLUSIVE
    return EXIT_INFEASIBLE


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tdcomp",
                                 description="Delay-compensating functional observers.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--lambda-grid", type=_floats, default=None,
                        help="comma-separated free scalars tried in order")
    solver.add_argument("--max-iterations", type=int, default=None,
                        help="interior-point iteration cap per solve")
    solver.add_argument("--jobs", type=int, default=1)
    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", default=None, help="output path (stdout when omitted)")
    obs_src = argparse.ArgumentParser(add_help=False)
    obs_src.add_argument("--observer", default=None,
                         help="report JSON from 'synthesize'; designed inline when omitted")

    sub = ap.add_subparsers(dest="verb", required=True)
    s = sub.add_parser("synthesize", parents=[solver, out], help="design and certify an observer")
    s.add_argument("problem")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("max-delay", parents=[solver, out], help="largest certified delay")
    s.add_argument("problem")
    s.add_argument("--lemma", required=True, choices=P.LEMMAS)
    s.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), default=(0.1, 5.0))
    s.add_argument("--tol", type=float, default=0.01)
    s.add_argument("--lower", type=float, default=None, help="fixed lower delay (interval lemmas)")
    s.add_argument("--fixed", type=float, default=None, help="the other delay (two-delay lemmas)")
    s.add_argument("--grid-step", type=float, default=0.1)
    s.set_defaults(func=cmd_max_delay)

    s = sub.add_parser("simulate", parents=[solver, obs_src], help="simulate plant and observer")
    s.add_argument("problem")
    s.add_argument("--t-end", type=float, default=None)
    s.add_argument("--step", type=float, default=None)
    s.add_argument("--out", default=None, help="trajectory CSV path")
    s.add_argument("--dat", action="store_true", help="also write a whitespace .dat mirror")
    s.add_argument("--summary", default=None, help="summary JSON path")
    s.add_argument("--closed-loop", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("closed-loop", parents=[solver, out, obs_src],
                       help="spectra of the observer-based feedback loop")
    s.add_argument("problem")
    s.set_defaults(func=cmd_closed_loop)

    s = sub.add_parser("roots", parents=[solver, out, obs_src], help="rightmost characteristic roots")
    s.add_argument("problem")
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--h", type=float, default=None)
    s.set_defaults(func=cmd_roots)

    s = sub.add_parser("repro", parents=[solver, out], help="run the golden scenarios")
    s.add_argument("--filter", default=None, help="substring(s), comma separated")
    s.add_argument("--tol", type=float, default=None, help="unused; sweeps carry their own")
    s.set_defaults(func=cmd_repro)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except P.InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (P.NotFoundError, NoFeasibleStartError) as exc:
        if "inconclusive" in str(exc):
            print(f"inconclusive: {exc}", file=sys.stderr)
            return EXIT_INCONCLUSIVE
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InvalidInputError, DimensionError, ConfigurationError, SynthesisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, TdcompError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
