import numpy as np
import pytest

from pdirichlet.errors import ConstraintError, ConvergenceError, ValidationError
from pdirichlet.graph import (
    ConstraintSet,
    build_epsilon_graph,
    build_knn_graph,
    default_epsilon,
    discrete_energy,
    discrete_energy_gradient,
    minimize_discrete,
    solve_p2_direct,
)


def _path_points(n, spacing=0.3):
    return np.column_stack([spacing * np.arange(n), np.zeros(n)])


def test_epsilon_graph_edges_and_weights():
    pts = _path_points(3)  # spacing 0.3
    g = build_epsilon_graph(pts, epsilon=0.5)
    w = g.weights.toarray()
    expect = 1.0 / 0.5**2
    assert w[0, 1] == pytest.approx(expect)
    assert w[1, 2] == pytest.approx(expect)
    assert w[0, 2] == 0.0  # distance 0.6 exceeds epsilon
    np.testing.assert_array_equal(w, w.T)
    assert np.all(np.diag(w) == 0.0)
    assert g.num_edges == 2


def test_epsilon_graph_gaussian_weights():
    pts = _path_points(2, spacing=0.2)
    g = build_epsilon_graph(pts, epsilon=0.1, eta="gaussian")
    # r/eps = 2 -> exp(-2) / eps^2
    assert g.weights[0, 1] == pytest.approx(np.exp(-2.0) * 100.0, rel=1e-12)


def test_knn_graph_symmetric_and_unit_weights():
    rng = np.random.default_rng(0)
    pts = rng.random((60, 2))
    g = build_knn_graph(pts, k=4)
    w = g.weights.toarray()
    np.testing.assert_array_equal(w, w.T)
    assert set(np.unique(w)) <= {0.0, 1.0}
    degrees = (w > 0).sum(axis=1)
    assert degrees.min() >= 4
    assert g.epsilon > 0


def test_default_epsilon_midpoint():
    n, p = 1000, 3.0
    lower = np.log(n) ** 0.75 / np.sqrt(n)
    upper = n ** (-1.0 / p)
    assert default_epsilon(n, p) == pytest.approx(np.sqrt(lower * upper), rel=1e-12)


def test_two_point_energy_frozen():
    pts = _path_points(2, spacing=0.3)
    g = build_epsilon_graph(pts, epsilon=0.5)
    # E = (1/(eps^p n^2)) * 2 * W * |df|^p, W = 1/eps^2, n = 2
    for p in (1.5, 2.0, 3.0):
        expected = 2.0 * (1.0 / 0.25) * 0.7**p / (0.5**p * 4.0)
        assert discrete_energy(g, np.array([0.0, 0.7]), p) == pytest.approx(expected, rel=1e-12)


def test_energy_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    pts = rng.random((25, 2))
    g = build_epsilon_graph(pts, epsilon=0.4)
    f = rng.standard_normal(25)
    for p in (1.5, 2.0, 3.0):
        grad = discrete_energy_gradient(g, f, p)
        eps = 1e-7
        for i in (0, 7, 19):
            fp, fm = f.copy(), f.copy()
            fp[i] += eps
            fm[i] -= eps
            fd = (discrete_energy(g, fp, p) - discrete_energy(g, fm, p)) / (2 * eps)
            assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_p2_direct_on_path_is_linear_interpolation():
    pts = _path_points(4, spacing=0.2)
    g = build_epsilon_graph(pts, epsilon=0.25)
    cons = ConstraintSet(indices=[0, 3], values=[0.0, 1.0])
    res = solve_p2_direct(g, cons)
    np.testing.assert_allclose(res.values, [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], atol=1e-12)


def test_descent_matches_direct_solver_p2():
    rng = np.random.default_rng(42)
    pts = rng.random((120, 2))
    g = build_epsilon_graph(pts, epsilon=0.25)
    assert g.is_connected()
    cons = ConstraintSet(indices=[0, 1, 2], values=[0.0, 1.0, 0.5])
    direct = solve_p2_direct(g, cons)
    for method in ("nesterov", "gd"):
        res = minimize_discrete(g, cons, p=2.0, tol=1e-12, max_iter=100_000, method=method)
        assert res.converged
        # energy-comparison descent resolves the argument to ~sqrt(eps)
        np.testing.assert_allclose(res.values, direct.values, atol=1e-7)


def test_single_free_node_p3_midpoint():
    # one free node tied equally to two pinned values: minimizer is the midpoint
    pts = _path_points(3, spacing=0.2)
    g = build_epsilon_graph(pts, epsilon=0.25)
    cons = ConstraintSet(indices=[0, 2], values=[0.0, 1.0])
    res = minimize_discrete(g, cons, p=3.0, tol=1e-10)
    assert res.values[1] == pytest.approx(0.5, abs=1e-6)


def test_energy_trace_monotone_and_pins_held():
    rng = np.random.default_rng(7)
    pts = rng.random((200, 2))
    g = build_epsilon_graph(pts, epsilon=0.2)
    cons = ConstraintSet(indices=[4, 50, 101], values=[1.0, -1.0, 0.25])
    res = minimize_discrete(g, cons, p=3.0, tol=1e-8)
    assert np.all(np.diff(res.energies) <= 0.0)
    np.testing.assert_array_equal(res.values[cons.indices], cons.values)


def test_minimizer_deterministic():
    rng = np.random.default_rng(9)
    pts = rng.random((80, 2))
    g = build_epsilon_graph(pts, epsilon=0.3)
    cons = ConstraintSet(indices=[0, 10], values=[0.0, 1.0])
    a = minimize_discrete(g, cons, p=2.5, tol=1e-9)
    b = minimize_discrete(g, cons, p=2.5, tol=1e-9)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.iterations == b.iterations


def test_budget_exhaustion_raises_then_flags():
    rng = np.random.default_rng(11)
    pts = rng.random((150, 2))
    g = build_epsilon_graph(pts, epsilon=0.2)
    cons = ConstraintSet(indices=[0, 1], values=[0.0, 1.0])
    with pytest.raises(ConvergenceError):
        minimize_discrete(g, cons, p=2.0, tol=1e-12, max_iter=3)
    res = minimize_discrete(g, cons, p=2.0, tol=1e-12, max_iter=3, strict=False)
    assert not res.converged
    assert res.iterations == 3


def test_validation_and_constraint_errors():
    pts = _path_points(3)
    g = build_epsilon_graph(pts, epsilon=0.5)
    with pytest.raises(ValidationError):
        build_epsilon_graph(pts, epsilon=-1.0)
    with pytest.raises(ValidationError):
        build_knn_graph(pts, k=5)
    with pytest.raises(ConstraintError):
        ConstraintSet(indices=[0, 0], values=[1.0, 2.0])
    with pytest.raises(ConstraintError):
        ConstraintSet(indices=[], values=[])
    cons = ConstraintSet(indices=[7], values=[1.0])
    with pytest.raises(ConstraintError):
        minimize_discrete(g, cons, p=2.0)
    with pytest.raises(ValidationError):
        minimize_discrete(g, ConstraintSet(indices=[0], values=[1.0]), p=1.0)


def test_disconnected_component_detected():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    g = build_epsilon_graph(pts, epsilon=0.2)
    assert not g.is_connected()
