"""Acceptance criteria 1-11; each test records one PASS/FAIL line for the summary."""

import math
import time

import numpy as np
import pytest

from tdcomp import dde, linalg, lmi, sdp
from tdcomp import pipeline as P
from tdcomp import synthesis as syn
from tdcomp.model import FunctionalObserver, error_coefficients

N01 = np.array([[0.2, 0, 0], [0.2, 0.1, -0.1], [0, 0.2, 0.15]])
ROW = np.array([[1.0, 2.0, 3.0]])


def emit(report_line, k, ok, text):
    report_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {text}")
    assert ok, text


def test_criterion_01_eigenvalues(report_line):
    e1 = np.sort(np.linalg.eigvals(P.bundled_problem("example1").plant.A).real)
    e3 = np.sort(np.linalg.eigvals(P.bundled_problem("example3").plant.A).real)
    ok = np.allclose(e1, [-2.4, 0.5], atol=1e-9) and np.allclose(e3, [0.1, 0.5], atol=1e-9)
    emit(report_line, 1, ok, f"eigenvalues {e1.tolist()} and {e3.tolist()}")


def test_criterion_02_generalized_inverse_solutions(report_line):
    p1, p3 = P.bundled_problem("example1"), P.bundled_problem("example3")
    x1 = syn.case1_solve_Xbar(p1.pinned["N_tau"], p1.func, p1.meas, p1.plant)[0]
    x3 = syn.case1_solve_Xbar([[-0.7]], p3.func, p3.meas, p3.plant)[0]
    p5, p6 = P.bundled_problem("example5"), P.bundled_problem("example6")
    x5 = syn.two_delay_solve(p5.pinned["N_tau"], p5.pinned["N_h"], p5.func, p5.meas, p5.plant)[0]
    x6 = syn.two_delay_solve(p6.pinned["N_tau"], p6.pinned["N_h"], p6.func, p6.meas, p6.plant)[0]
    checks = [
        np.allclose(x1, [0.4359, 0.1745, 0.2181, 0.0869], atol=2e-4),
        np.allclose(x3, [-0.07, 0.7], atol=1e-12),
        np.allclose(x5, [-0.0857, 0.0351, 0.8566, -0.3509], atol=2e-4),
        np.allclose(x6, [-0.1490, 0.0598, 1.0222, -0.1200], atol=2e-4),
    ]
    emit(report_line, 2, all(checks), f"solutions match for examples 1/3/5/6: {checks}")


PRINTED = {
    # gains as printed with four decimals
    "example2": dict(M=[[0.2188], [0.0850]], N=[[0.1, 1], [1, -2]],
                     N_tau=[[-0.5445, -0.2188], [-0.2188, -0.0850]], G=[[0.6295], [0.2593]],
                     G_tau=[[-0.1378], [-0.0551]], J=[[1], [2]], J_tau=[[-0.2188], [-0.0850]], tau=1.0),
    "example3": dict(M=[[0.7]], N=[[0.5]], N_tau=[[-0.7]], G=[[0.28]], G_tau=[[-0.49]], J=[[2.0]],
                     J_tau=[[-0.7]], tau=1.0),
    "example4": dict(M=[[0.3782], [-0.0838]], N=[[0.2, 1], [-1, -0.1]],
                     N_tau=[[-0.3782, -0.3782], [0.0838, 0.0838]], G=[[-0.0460], [-0.3615]],
                     G_tau=[[-0.1114], [0.0247]], J=[[2], [3]], J_tau=[[-0.3782], [0.0838]], tau=1.0),
}


def test_criterion_03_observer_residuals(report_line):
    exact = 0.0
    for name in ("example1", "example2", "example3", "example4", "example5", "example6",
                 "example7"):
        d = P.design_observer(P.bundled_problem(name))
        exact = max(exact, d.residual_norm)
    printed = 0.0
    for name, gains in PRINTED.items():
        p = P.bundled_problem(name)
        printed = max(printed, error_coefficients(p.plant, p.meas, p.func,
                                                  FunctionalObserver(**gains)).residual_norm)
    ok = exact <= 1e-8 and printed <= 1e-2
    emit(report_line, 3, ok, f"max residual exact {exact:.2e}, printed gains {printed:.2e}")


def test_criterion_04_rightmost_roots(report_line):
    r1 = dde.rightmost_roots(dde.DdeSystem([[0.1, 1], [1, -2]],
                                           [([[-0.5445, -0.2188], [-0.2188, -0.0850]], 1.0)]))
    r3 = dde.rightmost_roots(dde.DdeSystem([[0.5]], [([[-0.7]], 1.0)]))
    s1, s3 = r1.rightmost[0], r3.rightmost[0]
    ok = (abs(s1.real + 0.4725) <= 1e-3 and abs(abs(s1.imag) - 0.2865) <= 1e-3
          and abs(s3.real + 0.4041) <= 1e-3 and abs(abs(s3.imag) - 0.5311) <= 1e-3
          and max(r1.residual, r3.residual) <= 1e-8)
    emit(report_line, 4, ok, f"roots {s1:.4f}, {s3:.4f}; residuals {r1.residual:.1e}, {r3.residual:.1e}")


def test_criterion_05_scalar_bound(report_line):
    rec = P.max_delay_query(P.bundled_problem("example3"), "scalar", 0.1, 5.0, 0.01)
    # largest admissible b is -1/tau, so the test flips exactly at tau = 2
    edge = [dde.scalar_delay_test(0.5, -1.0 / t, t) for t in (2.0 - 1e-9, 2.0, 2.0 + 1e-9)]
    ok = rec["bound"] == 2.0 and edge == [True, False, False]
    emit(report_line, 5, ok, f"bound {rec['bound']}, test around 2.0: {edge}")


def test_criterion_06_stability_pair(report_line):
    a = dde.rightmost_roots(dde.DdeSystem([[0.5]], [([[-0.5]], 2.0)]))
    v = sdp.solve_synthesis(lmi.synth_two_delay([[0.5]], [[0]], [[0]], [[1]], [[0]], [[1]],
                                                2.3, 3.0, None))
    b = dde.rightmost_roots(dde.DdeSystem([[0.5]], [([[-0.8566]], 2.3), ([[0.3509]], 3.0)]))
    # a root sits at s = 0 for the first system; rounding leaves it within 1e-9 of the axis
    ok = a.abscissa >= -1e-9 and v.feasible and b.abscissa < 0
    emit(report_line, 6, ok, f"first abscissa {a.abscissa:.1e}; second certified={v.feasible}, "
                             f"abscissa {b.abscissa:.4f}")


SWEEPS = [
    # label, problem, lemma, reference, bracket, tol, lower, fixed
    ("A1 constant", "exampleA1", "stability-constant", 1.54, (1.3, 1.8), 0.01, None, None),
    ("A1 interval 0.2", "exampleA1", "stability-interval", 1.42, (1.2, 1.65), 0.01, 0.2, None),
    ("A1 interval 0.3", "exampleA1", "stability-interval", 1.55, (1.3, 1.8), 0.01, 0.3, None),
    ("A1 interval 0.5", "exampleA1", "stability-interval", 1.65, (1.4, 1.9), 0.01, 0.5, None),
    ("A1 interval 0.8", "exampleA1", "stability-interval", 1.66, (1.4, 1.9), 0.01, 0.8, None),
    ("A1 interval 1.2", "exampleA1", "stability-interval", 1.64, (1.4, 1.9), 0.01, 1.2, None),
    ("A1 interval-pd 0.2", "exampleA1", "stability-interval-pd", 1.62, (1.4, 1.9), 0.01, 0.2, None),
    ("A1 interval-pd 0.5", "exampleA1", "stability-interval-pd", 1.67, (1.4, 1.9), 0.01, 0.5, None),
    ("A2 partitioned", "exampleA2", "stability-partitioned", 1.69, (1.45, 1.95), 0.01, None, None),
    ("A3 h at tau=1.2", "exampleA3", "stability-two-delay", 1.68, (1.25, 2.5), 0.01, None, 1.2),
    ("A4 constant", "exampleA4", "synth-constant", 4.8, (4.2, 5.4), 0.02, None, None),
    ("A4 interval from 2", "exampleA4", "synth-interval", 4.78, (4.2, 5.4), 0.02, 2.0, None),
    ("A5 constant", "exampleA5", "synth-structured", 2.2, (1.9, 2.5), 0.02, None, None),
    ("A5 interval from 1", "exampleA5", "synth-structured-interval", 2.1, (1.8, 2.4), 0.02, 1.0, None),
    ("A6 two-delay h=0.8", "exampleA6", "synth-two-delay", 0.595, (0.5, 0.75), 0.01, None, 0.8),
    ("A6 single", "exampleA6", "synth-structured", 0.495, (0.4, 0.6), 0.01, None, None),
    ("A7 tau at h=2.7", "exampleA7", "synth-two-delay", 2.43, (2.1, 2.69), 0.02, None, 2.7),
]


@pytest.fixture(scope="module")
def sweep_results():
    out = {}
    for label, prob, lemma, ref, (lo, hi), tol, lower, fixed in SWEEPS:
        rec = P.max_delay_query(P.bundled_problem(prob), lemma, lo, hi, tol, lower=lower,
                                fixed=fixed, grid_step=hi - lo)
        out[label] = (ref, rec)
    fam, _ = P.delay_family(P.bundled_problem("exampleA8"), "synth-three-delay")
    out["A8"] = sdp.solve_synthesis(fam(3.65))
    return out


def test_criterion_07_lmi_maxima(report_line, sweep_results):
    from tdcomp.repro import bound_status
    parts, ok = [], True
    for label, *_ in SWEEPS:
        ref, rec = sweep_results[label]
        got = rec["certified_max_delay"]
        status, _ = bound_status(got, ref)
        ok &= status == "pass"
        parts.append(f"{label} {got:.3f}/{ref}")
    a8 = sweep_results["A8"]
    ok &= a8.feasible
    # the sharper interval condition never certifies less than the plain one
    for lo in ("0.2", "0.5"):
        ok &= (sweep_results[f"A1 interval-pd {lo}"][1]["certified_max_delay"]
               >= sweep_results[f"A1 interval {lo}"][1]["certified_max_delay"] - 0.01)
    emit(report_line, 7, ok, "; ".join(parts) + f"; A8 at 3.65 {a8.status}")


PRINTED_DELAY_GAINS = [
    # label, N, [(delayed matrix, delay), ...], stability LMI builders tried in order
    ("A4", N01, [(np.array([[-0.2033, 0.0001, -0.0004], [-0.1619, -0.1403, 0.0839],
                            [0.0195, -0.1707, -0.1751]]), 4.8)]),
    ("A5", N01, [(np.array([[-0.0568], [-0.0726], [-0.0601]]) @ ROW, 2.2)]),
    ("A6", np.array([[2.0]]), [(np.array([[-3.1605]]), 0.595), (np.array([[1.1556]]), 0.8)]),
    ("A7", N01, [(np.array([[-0.2184], [-0.2402], [-0.1099]]) @ ROW, 2.43),
                 (np.array([[0.1554], [0.1633], [0.0524]]) @ ROW, 2.7)]),
    ("A8", N01, [(np.array([[-0.1159], [-0.3993], [-0.9907]]) @ ROW, 3.65),
                 (np.array([[0.1158], [0.3869], [0.9271]]) @ ROW, 3.7),
                 (np.array([[-0.2249], [-0.1297], [0.0445]]) @ np.array([[1.0, 0, 0]]), 3.75)]),
]


def _lmi_for(N, terms):
    if len(terms) == 1:
        (Nt, t), = terms
        return [lmi.stability_constant(N, Nt, t), lmi.stability_partitioned(N, Nt, t)]
    if len(terms) == 2:
        (Nt, t), (Nh, h) = terms
        return [lmi.stability_two_delay(N, Nt, Nh, t, h)]
    (N1, t1), (N2, t2), (N3, t3) = terms
    return [lmi.stability_multi(N, N1, N2, N3, t1, t2, t3)]


def test_criterion_08_synthesis_goldens(report_line, sweep_results):
    parts, ok = [], True
    for name in ("example1", "example4", "example5", "example6", "example7"):
        p = P.bundled_problem(name)
        p.pinned = {}
        d = P.design_observer(p)
        ok &= d.stable and d.certificate["status"] == "feasible"
        parts.append(f"{name} {d.roots.abscissa:.3f}")
    for label in ("A4 constant", "A4 interval from 2", "A5 constant", "A5 interval from 1",
                  "A6 two-delay h=0.8", "A7 tau at h=2.7"):
        absc = sweep_results[label][1].get("closed_loop_abscissa")
        ok &= absc is not None and absc < 0
        parts.append(f"{label} {absc:.4f}")
    ok &= sweep_results["A8"].abscissa < 0
    parts.append(f"A8 {sweep_results['A8'].abscissa:.4f}")
    printed = []
    for label, N, terms in PRINTED_DELAY_GAINS:
        absc = dde.rightmost_roots(dde.DdeSystem(N, terms)).abscissa
        lmi_ok = any(sdp.solve(prob).feasible for prob in _lmi_for(N, terms))
        ok &= absc < 0
        printed.append(f"{label} root {absc:.4f} lmi {'yes' if lmi_ok else 'no'}")
    for name in ("example1", "example3", "example4", "example5", "example6", "example7"):
        d = P.design_observer(P.bundled_problem(name))
        ok &= d.stable and d.certificate["status"] == "feasible"
    emit(report_line, 8, ok, "designed: " + ", ".join(parts) + " | printed: " + ", ".join(printed))


def random_case1_problem(g):
    n = int(g.integers(2, 4))
    p = n - 1
    A = 0.8 * g.standard_normal((n, n))
    # a bounded plant state keeps e = z - Fx free of cancellation error over long horizons
    A -= max(0.0, np.linalg.eigvals(A).real.max() + 0.2) * np.eye(n)
    C = g.standard_normal((p, n))
    F = g.standard_normal((n, n)) + 2 * np.eye(n)
    # a delay on the step grid lets the integrator read delayed inputs at their sample points
    tau = 0.02 * int(g.integers(15, 51))
    return P.load_problem({
        "plant": {"A": A.tolist(), "B": g.standard_normal((n, 1)).tolist()},
        "measurement": {"C_tau": C.tolist(), "tau": tau},
        "functional": {"F": F.tolist()},
        "simulation": {"step": 0.02, "observer_history": [0.0] * n},
    })


def test_criterion_09_decoupling_suite(report_line):
    g = np.random.default_rng(7)
    accepted, drawn, worst_inv, worst_tail = 0, 0, 0.0, 0.0
    t0 = time.perf_counter()
    while accepted < 20 and drawn < 200:
        drawn += 1
        prob = random_case1_problem(g)
        try:
            plan = syn.plan_single(prob.plant, prob.meas, prob.func)
            if plan.inner_case != syn.CASE1:
                continue
            d = P.design_observer(prob, sdp.SolverConfig(lambda_grid=(0.5, 5.0, 0.05)))
        except Exception:
            continue
        a = d.roots.abscissa
        if not a < -0.1:
            continue  # keeps the tail horizon 10/|a| short
        accepted += 1
        runs = []
        for kind in ("zero", "square", "step"):
            prob.simulation["input"] = {"kind": kind, "amplitude": 1.0, "period": 2.0}
            runs.append(P.simulate_problem(prob, d.observer, d.functional, t_end=10.0 / abs(a)))
        worst_inv = max(worst_inv, max(np.max(np.abs(r.e - runs[0].e)) for r in runs[1:]))
        norms = np.linalg.norm(runs[0].e, axis=1)
        # decay over ten time constants, measured against the transient peak
        worst_tail = max(worst_tail, float(norms[-1] / max(norms.max(), 1e-300)))
    ok = accepted == 20 and worst_inv <= 1e-9 and worst_tail <= 1e-3
    emit(report_line, 9, ok, f"{accepted} observers ({drawn} draws): input invariance "
                             f"{worst_inv:.1e}, relative tail {worst_tail:.1e}, {time.perf_counter() - t0:.0f}s")


def test_criterion_10_inequality_suites(report_line):
    g = np.random.default_rng(11)
    nodes, weights = np.polynomial.legendre.leggauss(80)
    penrose = wirt = park = sel = aff = 0.0
    for _ in range(100):
        m, n = g.integers(1, 6, size=2)
        r = int(g.integers(1, min(m, n) + 1))
        a = g.standard_normal((m, r)) @ g.standard_normal((r, n))
        x = linalg.pinv(a)
        penrose = max(penrose, np.abs(a @ x @ a - a).max(), np.abs(x @ a @ x - x).max(),
                      np.abs(a @ x - (a @ x).T).max(), np.abs(x @ a - (x @ a).T).max())

        k = int(g.integers(1, 4))
        tau = float(g.uniform(0.1, 3.0))
        c = g.standard_normal((4, k))
        w = g.uniform(0.5, 3.0)
        xf = lambda s: c[0] + c[1] * s + c[2] * np.sin(w * s) + c[3] * s ** 3 / 3
        dxf = lambda s: c[1] + c[2] * w * np.cos(w * s) + c[3] * s ** 2
        pts = 0.5 * tau * (nodes + 1)
        R = g.standard_normal((k, k))
        R = R @ R.T + 0.1 * np.eye(k)
        mean = 0.5 * sum(wi * xf(s) for wi, s in zip(weights, pts))
        energy = 0.5 * tau * sum(wi * dxf(s) @ R @ dxf(s) for wi, s in zip(weights, pts))
        xi = np.concatenate([xf(tau), xf(0.0), mean, dxf(tau)])
        th = lmi.theta_single(lmi.SelectorBasis(k, 4), tau, np.zeros((2 * k, 2 * k)),
                              np.zeros((k, k)), R)
        bound = tau * dxf(tau) @ R @ dxf(tau) - xi @ th @ xi
        wirt = max(wirt, (bound - energy) / max(1.0, energy))

        alpha = float(g.uniform(0.01, 0.99))
        big = np.kron(np.eye(2), R)
        h = np.linalg.cholesky(big)
        K = g.standard_normal((2 * k, 2 * k))
        K /= np.linalg.norm(K, 2) * 1.0001
        S = h @ K @ h.T
        u, v = g.standard_normal(2 * k), g.standard_normal(2 * k)
        uv = np.concatenate([u, v])
        lhs = u @ big @ u / alpha + v @ big @ v / (1 - alpha)
        park = max(park, (uv @ lmi.xi_block(R, S) @ uv - lhs) / max(1.0, abs(lhs)))

        basis = lmi.SelectorBasis(k, 8)
        gram = np.block([[vi.T @ vj for vj in basis] for vi in basis])
        sel = max(sel, np.abs(gram - np.eye(8 * k)).max())

        prob = lmi.stability_constant(g.standard_normal((k, k)), g.standard_normal((k, k)), tau)
        x1 = prob.unpack(g.standard_normal(prob.n_scalar))
        x2 = prob.unpack(g.standard_normal(prob.n_scalar))
        t = float(g.uniform(-2, 2))
        mix = prob.evaluate({q: t * x1[q] + (1 - t) * x2[q] for q in x1})
        e1, e2 = prob.evaluate(x1), prob.evaluate(x2)
        for q in mix:
            ref = 1.0 + np.abs(e1[q]).max() + np.abs(e2[q]).max()
            aff = max(aff, np.abs(mix[q] - t * e1[q] - (1 - t) * e2[q]).max() / ref)
    ok = penrose <= 1e-9 and wirt <= 1e-6 and park <= 1e-9 and sel == 0.0 and aff <= 1e-12
    emit(report_line, 10, ok, f"penrose {penrose:.1e}, wirtinger excess {wirt:.1e}, "
                              f"reciprocal excess {park:.1e}, selectors {sel}, affinity {aff:.1e}")


def test_criterion_11_closed_loop_example7(report_line):
    p = P.bundled_problem("example7")
    d = P.design_observer(p)
    plan = syn.plan_single(p.plant, p.meas, p.func, p.R)
    fb = np.sort(np.linalg.eigvals(p.plant.A + p.plant.B @ p.func.F).real)
    se, _ = syn.closed_loop_systems(p.plant, p.meas, plan.augmented, d.observer)
    err = d.roots.rightmost[0]
    # the block-triangular loop has exactly the feedback eigenvalues and the error roots
    dets = [abs(np.linalg.det(se.characteristic_matrix(s))) for s in (-0.5, -1.0, err)]
    lead = dde.rightmost_roots(se).rightmost[0]
    union_ok = max(dets) <= 1e-10 and abs(lead - max([err, -0.5 + 0j], key=lambda z: z.real)) < 1e-6
    res = P.simulate_problem(p, d.observer, d.functional, d.augmented, closed_loop=True)
    x = np.linalg.norm(res.x.states, axis=1)
    ok = (np.allclose(fb, [-1.0, -0.5], atol=1e-9) and union_ok
          and x[-1] < 1e-3 and np.isfinite(x).all() and x.max() < 100)
    emit(report_line, 11, ok, f"feedback eigenvalues {fb.tolist()}, loop lead root {lead:.4f}, "
                              f"|x| peak {x.max():.2f} final {x[-1]:.1e}")
