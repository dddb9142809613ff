import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdcomp import dde, lmi, sdp
from tdcomp.errors import ConfigurationError

NODES, WEIGHTS = np.polynomial.legendre.leggauss(80)


def integrate(f, a, b):
    """Gauss-Legendre quadrature of a vector-valued function on [a, b]."""
    s = 0.5 * (b - a) * NODES + 0.5 * (b + a)
    return 0.5 * (b - a) * sum(w * f(t) for w, t in zip(WEIGHTS, s))


def random_pd(g, n):
    a = g.standard_normal((n, n))
    return a @ a.T + 0.1 * np.eye(n)


def random_values(problem, g):
    return problem.unpack(g.standard_normal(problem.n_scalar))


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 4), k=st.integers(1, 8), seed=seeds)
def test_selector_algebra(n, k, seed):
    v = lmi.SelectorBasis(n, k)
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            expected = np.eye(n) if i == j else np.zeros((n, n))
            assert np.array_equal(v[i].T @ v[j], expected)
    assert np.array_equal(sum(vi @ vi.T for vi in v), np.eye(n * k))
    g = np.random.default_rng(seed)
    blocks = {i: g.standard_normal((2, n)) for i in range(1, k + 1) if g.random() < 0.6}
    row = v.row(blocks, 2)
    assert np.array_equal(row, sum((b @ v[i].T for i, b in blocks.items()), np.zeros((2, n * k))))


def test_selector_index_is_one_based():
    v = lmi.SelectorBasis(2, 3)
    with pytest.raises(IndexError):
        v[0]
    with pytest.raises(IndexError):
        v[4]


def wirtinger_case(g, n, tau):
    """Random smooth trajectory on [t - tau, t] with t = tau, plus its stacked vector."""
    c = g.standard_normal((4, n))
    w = g.uniform(0.5, 3.0)
    x = lambda s: c[0] + c[1] * s + c[2] * np.sin(w * s) + c[3] * s ** 3 / 3
    dx = lambda s: c[1] + c[2] * w * np.cos(w * s) + c[3] * s ** 2
    mean = integrate(x, 0.0, tau) / tau
    xi = np.concatenate([x(tau), x(0.0), mean, dx(tau)])
    return x, dx, xi


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 3), tau=st.floats(0.1, 3.0), seed=seeds)
def test_wirtinger_bound_encoded_in_single_delay_block(n, tau, seed):
    g = np.random.default_rng(seed)
    R = random_pd(g, n)
    x, dx, xi = wirtinger_case(g, n, tau)
    z = np.zeros((2 * n, 2 * n))
    theta = lmi.theta_single(lmi.SelectorBasis(n, 4), tau, z, np.zeros((n, n)), R)
    # theta reduces to tau dx^T R dx minus the Wirtinger lower bound
    lower = tau * dx(tau) @ R @ dx(tau) - xi @ theta @ xi
    energy = integrate(lambda s: dx(s) @ R @ dx(s), 0.0, tau)
    assert lower <= energy + 1e-6 * max(1.0, energy)


def test_wirtinger_bound_is_tight_for_quadratics():
    g = np.random.default_rng(3)
    n, tau = 2, 1.3
    c = g.standard_normal((3, n))
    x = lambda s: c[0] + c[1] * s + c[2] * s ** 2
    dx = lambda s: c[1] + 2 * c[2] * s
    xi = np.concatenate([x(tau), x(0.0), integrate(x, 0.0, tau) / tau, dx(tau)])
    R = random_pd(g, n)
    theta = lmi.theta_single(lmi.SelectorBasis(n, 4), tau, np.zeros((4, 4)), np.zeros((n, n)), R)
    lower = tau * dx(tau) @ R @ dx(tau) - xi @ theta @ xi
    assert lower == pytest.approx(integrate(lambda s: dx(s) @ R @ dx(s), 0.0, tau), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 3), alpha=st.floats(0.01, 0.99), seed=seeds)
def test_reciprocally_convex_bound(n, alpha, seed):
    g = np.random.default_rng(seed)
    R = random_pd(g, n)
    big = np.kron(np.eye(2), R)
    half = np.linalg.cholesky(big)
    K = g.standard_normal((2 * n, 2 * n))
    K /= max(1.0, np.linalg.norm(K, 2)) * 1.0001
    S = half @ K @ half.T
    xi = lmi.xi_block(R, S)
    assert np.linalg.eigvalsh(xi)[0] >= -1e-9
    a, b = g.standard_normal(2 * n), g.standard_normal(2 * n)
    lhs = a @ big @ a / alpha + b @ big @ b / (1 - alpha)
    ab = np.concatenate([a, b])
    assert lhs >= ab @ xi @ ab - 1e-9 * max(1.0, abs(lhs))


BUILDERS = {
    "stability_constant": lambda: lmi.stability_constant([[0, 1], [-2, 0.1]], [[0, 0], [1, 0]], 1.0),
    "stability_interval": lambda: lmi.stability_interval([[0, 1], [-2, 0.1]], [[0, 0], [1, 0]], 0.3, 1.2),
    "stability_interval_pd": lambda: lmi.stability_interval_pd([[-1.0]], [[0.5]], 0.2, 1.0),
    "stability_partitioned": lambda: lmi.stability_partitioned([[-1.0]], [[0.5]], 1.0),
    "stability_two_delay": lambda: lmi.stability_two_delay([[-1.0]], [[0.3]], [[0.2]], 1.0, 1.5),
    "synth_constant": lambda: lmi.synth_constant([[0.5]], 1.0, 0.5),
    "synth_interval": lambda: lmi.synth_interval([[0.5]], 0.5, 1.0, 0.5),
    "synth_structured_constant": lambda: lmi.synth_structured_constant(
        [[0.2, 1], [-1, -0.1]], np.zeros((1, 2)), np.zeros((2, 2)), [[0.3322, 0.3322]], 1.0, 0.5),
    "synth_structured_interval": lambda: lmi.synth_structured_interval(
        [[0.2, 1], [-1, -0.1]], np.zeros((1, 2)), np.zeros((2, 2)), [[0.3322, 0.3322]], 0.5, 1.0, 0.5),
    "synth_two_delay": lambda: lmi.synth_two_delay([[2.0]], [[0]], [[0]], [[1]], [[0]], [[1]], 0.5, 0.8, 5.0),
    "synth_three_delay": lambda: lmi.synth_three_delay(
        [[0.5]], [[0]], [[0]], [[1]], [[0]], [[1]], [[0]], [[1]], 0.5, 0.6, 0.7, 5.0),
}


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_constraints_are_affine_and_symmetric(name):
    prob = BUILDERS[name]()
    g = np.random.default_rng(len(name))
    for _ in range(100 // len(BUILDERS) + 1):
        x, y = random_values(prob, g), random_values(prob, g)
        a = g.uniform(-2, 2)
        mix = {k: a * x[k] + (1 - a) * y[k] for k in x}
        fx, fy, fm = prob.evaluate(x), prob.evaluate(y), prob.evaluate(mix)
        for k in fx:
            scale = 1.0 + np.abs(fx[k]).max() + np.abs(fy[k]).max()
            assert np.allclose(fm[k], a * fx[k] + (1 - a) * fy[k], atol=1e-11 * scale, rtol=0)
            assert np.allclose(fx[k], fx[k].T, atol=1e-12 * scale, rtol=0)


def test_affine_coefficients_reproduce_evaluation():
    prob = BUILDERS["stability_interval"]()
    g = np.random.default_rng(0)
    xvec = g.standard_normal(prob.n_scalar)
    direct = prob.evaluate(prob.unpack(xvec))
    for form in prob.affine:
        recon = form.F0 + np.tensordot(xvec, form.Fi, axes=1)
        assert np.allclose(recon, direct[form.name], atol=1e-10)


def test_lambda_family_matches_direct_build():
    prob = lmi.synth_constant([[0.2, 0.1], [0.0, -0.3]], 1.5, None)
    fam = prob.lambda_family()
    for lam in (-5.0, 0.05, 50.0):
        fast, slow = fam(lam).affine, prob.with_lambda(lam).affine
        for a, b in zip(fast, slow):
            assert np.allclose(a.F0, b.F0, atol=1e-12)
            assert np.allclose(a.Fi, b.Fi, atol=1e-9 * (1 + abs(lam)))


def test_variable_and_constraint_validation():
    with pytest.raises(ConfigurationError):
        lmi.Variable("P", (2, 3), "pd")
    with pytest.raises(ConfigurationError):
        lmi.Variable("P", (2, 2), "psd")
    with pytest.raises(ConfigurationError):
        lmi.Constraint("c", "leq", lambda x: x)
    with pytest.raises(ConfigurationError):
        lmi.stability_interval([[1.0]], [[0.0]], 1.0, 0.5)
    with pytest.raises(ConfigurationError):
        BUILDERS["stability_constant"]().with_lambda(1.0)


def test_pd_variables_get_positivity_constraints():
    prob = BUILDERS["stability_constant"]()
    names = [c.name for c in prob.all_constraints()]
    assert {"P>0", "Q>0", "R>0"} <= set(names)


def test_dump_writes_text(tmp_path):
    path = tmp_path / "p.txt"
    BUILDERS["synth_constant"]().dump(path)
    text = path.read_text()
    assert text.startswith("# lemma synth_constant")
    assert "variable G 1 1 full 1" in text


@settings(max_examples=15, deadline=None)
@given(seed=seeds, tau=st.floats(0.2, 2.0))
def test_certified_stability_implies_negative_roots(seed, tau):
    g = np.random.default_rng(seed)
    N = g.standard_normal((2, 2)) - 1.0 * np.eye(2)
    Nt = 0.5 * g.standard_normal((2, 2))
    v = sdp.solve(lmi.stability_constant(N, Nt, tau))
    if v.feasible:
        assert dde.rightmost_roots(dde.DdeSystem(N, [(Nt, tau)])).abscissa < 0


def test_unstable_system_is_not_certified():
    v = sdp.solve(lmi.stability_constant([[0.5]], [[0.0]], 1.0))
    assert v.status == sdp.INFEASIBLE


@settings(max_examples=10, deadline=None)
@given(seed=seeds)
def test_synthesized_gains_stabilize(seed):
    g = np.random.default_rng(seed)
    N = g.uniform(-0.5, 0.5, (2, 2))
    v = sdp.solve_synthesis(lmi.synth_constant(N, 0.5, None))
    if v.feasible:
        assert dde.rightmost_roots(dde.DdeSystem(N, [(v.gains["N_tau"], 0.5)])).abscissa < 0
        assert v.abscissa == pytest.approx(
            dde.rightmost_roots(dde.DdeSystem(N, [(v.gains["N_tau"], 0.5)])).abscissa)
