import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from sdane.problems import (
    DegenerateProblemError,
    ProblemError,
    ReferenceSolveError,
    estimate_bgv,
    estimate_delta_max,
    estimate_dissimilarity,
    estimate_ed,
    estimate_sod,
    gen_logreg,
    gen_polyhedron,
    gen_quadratic,
    load_problem,
    logreg_from_data,
    polyhedron_from_data,
    quadratic_from_data,
    reference_solve,
    save_problem,
)


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture(scope="module")
def small_problems():
    return {
        "quadratic": gen_quadratic(4, 3, 6, 10.0, seed=1),
        "polyhedron": gen_polyhedron(4, 40, 6, 2.0, seed=1),
        "logreg": gen_logreg(4, 60, 6, 0.5, seed=1),
    }


# --- quadratic generator -----------------------------------------------------


def test_identity_quadratic():
    p = quadratic_from_data([np.ones((1, 3))], [np.zeros((1, 3))])
    assert np.array_equal(p.x_star, np.zeros(3))
    assert p.f_star == 0.0
    assert reference_solve(p) == (p.x_star, p.f_star)


def test_gen_quadratic_postconditions():
    p = gen_quadratic(5, 4, 20, 37.5, seed=3)
    assert max(float(c.A.max()) for c in p.clients) == pytest.approx(37.5, rel=1e-15)
    assert all(c.A.min() >= 0 for c in p.clients)
    H = sum(c.hessian_diag for c in p.clients)
    rhs = sum((c.A * c.b).mean(axis=0) for c in p.clients)
    assert np.allclose(H * p.x_star, rhs, rtol=1e-13, atol=1e-13)
    assert np.linalg.norm(p.grad(p.x_star)) <= 1e-8 * max(1.0, np.linalg.norm(p.x_star))
    assert p.f_star == pytest.approx(p.value(p.x_star), rel=1e-15)
    assert p.provenance["seed"] == 3


def test_paper_scale_dissimilarity_order_of_magnitude():
    p = gen_quadratic(10, 5, 1000, 100.0, seed=0)
    delta = estimate_sod(p, 10, "exact_quadratic")
    assert 1.0 <= delta <= 25.0  # order of magnitude of 5


def test_two_client_diag_example():
    A = [np.array([[1.0, 3.0]]), np.array([[3.0, 1.0]])]
    b = [np.zeros((1, 2)), np.zeros((1, 2))]
    p = quadratic_from_data(A, b)
    assert np.array_equal(p.x_star, np.zeros(2))
    assert estimate_sod(p, 2, "exact_quadratic") == pytest.approx(1.0, abs=1e-15)
    # eigen-oracle: (1/n) sum (H_bar - H_i)^2
    Hbar = np.diag([2.0, 2.0])
    M = sum((Hbar - np.diag(a[0])) @ (Hbar - np.diag(a[0])) for a in A) / 2
    assert math.sqrt(np.linalg.eigvalsh(M).max()) == pytest.approx(1.0)


def test_degenerate_coordinate_rejected():
    A = [np.array([[1.0, 0.0]]), np.array([[2.0, 0.0]])]
    with pytest.raises(DegenerateProblemError):
        quadratic_from_data(A, [np.zeros((1, 2))] * 2)


def test_gen_quadratic_bad_params():
    with pytest.raises(ProblemError):
        gen_quadratic(0, 1, 1, 1.0, seed=0)
    with pytest.raises(ProblemError):
        gen_quadratic(1, 1, 1, -1.0, seed=0)


# --- polyhedron ----------------------------------------------------------------


def test_single_halfspace():
    # x <= -1 with x* = -2 on one client holding one constraint
    p = polyhedron_from_data([np.array([[1.0]])], [np.array([-1.0])], x_star=[-2.0])
    assert p.value(np.array([-2.0])) == 0.0
    n, m = 1, 1
    assert p.value(np.zeros(1)) == pytest.approx(n / m * 1.0)


def test_gen_polyhedron_properties():
    p = gen_polyhedron(5, 50, 8, 3.0, seed=2)
    assert np.linalg.norm(p.x_star) == pytest.approx(3.0)
    assert p.f_star == 0.0
    assert np.array_equal(p.grad(p.x_star), np.zeros(8))
    assert p.value(np.zeros(8)) > 0
    assert sum(c.data_size for c in p.clients) == 50


def test_polyhedron_paper_scale_accepted():
    from sdane.problems import check_polyhedron_params

    check_polyhedron_params(10, 10 ** 5, 10 ** 3, 1e6)
    with pytest.raises(ProblemError):
        check_polyhedron_params(10, 5, 3, 1.0)
    with pytest.raises(ProblemError):
        gen_polyhedron(10, 5, 3, 1.0, seed=0)


def test_polyhedron_reference_solve_reaches_zero():
    p = gen_polyhedron(3, 30, 4, 1.0, seed=4)
    x, f = reference_solve(p, tol=1e-10, force=True)
    assert f <= 1e-12


# --- logistic regression -------------------------------------------------------


def test_logreg_single_point_gradient():
    p = logreg_from_data([np.array([[1.0]])], [np.array([1.0])])
    n, M = 1, 1
    assert p.grad(np.zeros(1))[0] == pytest.approx(n / M * (-0.5))


def test_logreg_iid_limit_shard_sizes():
    n, M = 5, 2000
    for seed in range(20):
        p = gen_logreg(n, M, 3, 1e6, seed=seed, ref_tol=1e-6)
        sizes = np.array([c.data_size for c in p.clients])
        assert np.all(np.abs(sizes - M / n) <= 0.05 * M / n), sizes


def test_logreg_non_iid_skew():
    skewed = 0
    for seed in range(15):
        p = gen_logreg(10, 400, 3, 0.2, seed=seed, ref_tol=1e-6)
        frac = [max(np.mean(c.labels > 0), np.mean(c.labels < 0)) for c in p.clients]
        skewed += max(frac) > 0.8
    assert skewed > 15 / 2


def test_logreg_constants():
    p = gen_logreg(4, 40, 3, 1.0, seed=0)
    assert all(c.convexity_mu == pytest.approx(1 / 40) for c in p.clients)
    assert np.linalg.norm(p.grad(p.x_star)) <= 1e-8 * max(1.0, np.linalg.norm(p.x_star))


def test_logreg_bad_params():
    with pytest.raises(ProblemError):
        gen_logreg(5, 3, 2, 1.0, seed=0)
    with pytest.raises(ProblemError):
        gen_logreg(2, 10, 2, 0.0, seed=0)


def test_logreg_reference_matches_grid_oracle():
    rng = np.random.default_rng(12)
    feats = rng.normal(size=(4, 2))
    labels = np.array([1.0, -1.0, 1.0, -1.0])
    p = logreg_from_data([feats[:2], feats[2:]], [labels[:2], labels[2:]])
    _, f_star = reference_solve(p, tol=1e-12)
    grid = np.linspace(-20, 20, 201)
    best = min(((p.value(np.array([a, b])), (a, b)) for a, b in itertools.product(grid, grid)))
    polished = minimize(p.value, np.array(best[1]), jac=p.grad, method="BFGS", options={"gtol": 1e-12})
    assert f_star == pytest.approx(polished.fun, abs=1e-6)


def test_reference_solve_cap_reports_best_iterate():
    p = gen_logreg(3, 30, 4, 1.0, seed=0)
    with pytest.raises(ReferenceSolveError) as info:
        reference_solve(p, tol=1e-14, max_iter=2, force=True)
    assert info.value.best_x.shape == (4,)
    assert np.isfinite(info.value.best_value)


# --- oracle invariants ---------------------------------------------------------


@pytest.mark.parametrize("family", ["quadratic", "polyhedron", "logreg"])
def test_gradient_matches_finite_differences(small_problems, family):
    p = small_problems[family]
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = p.x_star + rng.normal(size=p.d)
        for c in p.clients:
            g = c.grad(x)
            fd = fd_grad(c.value, x)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("family", ["quadratic", "polyhedron", "logreg"])
def test_stoch_grad_unbiased_over_partition(small_problems, family):
    p = small_problems[family]
    x = p.x_star + np.random.default_rng(1).normal(size=p.d)
    for c in p.clients:
        m = c.data_size
        k = next(k for k in (3, 2, 1) if m % k == 0)
        batches = np.arange(m).reshape(-1, k)
        avg = sum(c.stoch_grad(x, idx) for idx in batches) / len(batches)
        assert np.allclose(avg, c.grad(x), rtol=1e-12, atol=1e-12)
        assert np.array_equal(c.stoch_grad(x, m), c.grad(x))


@pytest.mark.parametrize("family", ["quadratic", "polyhedron", "logreg"])
def test_mu_convexity(small_problems, family):
    p = small_problems[family]
    rng = np.random.default_rng(2)
    for c in p.clients:
        for _ in range(10):
            x, y = rng.normal(size=(2, p.d)) * 2
            lower = c.value(x) + c.grad(x) @ (y - x) + 0.5 * c.convexity_mu * np.sum((x - y) ** 2)
            assert c.value(y) >= lower - 1e-9


# --- dissimilarity -------------------------------------------------------------


def test_delta_one_is_zero(small_problems):
    for p in small_problems.values():
        assert estimate_sod(p, 1) == 0.0


def test_identical_clients_have_zero_dissimilarity():
    rng = np.random.default_rng(3)
    A, b = rng.uniform(0.5, 2, size=(2, 4)), rng.normal(size=(2, 4))
    p = quadratic_from_data([A] * 4, [b] * 4)
    for s in range(1, 5):
        assert estimate_sod(p, s) == 0.0
        assert estimate_ed(p, s) == 0.0
    assert estimate_bgv(p) == 0.0


def test_bgv_constant_offsets():
    # f_1'(x) = x + 1, f_2'(x) = x - 1
    p = quadratic_from_data([np.ones((1, 1))] * 2, [np.array([[-1.0]]), np.array([[1.0]])])
    assert estimate_bgv(p, probes=32) == pytest.approx(1.0, abs=1e-12)
    rep = estimate_dissimilarity(p)
    assert rep.zeta == pytest.approx(1.0) and not rep.zeta_unbounded_suspected


def test_bgv_flags_growth_for_heterogeneous_hessians():
    p = quadratic_from_data([np.array([[1.0, 3.0]]), np.array([[3.0, 1.0]])], [np.zeros((1, 2))] * 2)
    assert estimate_dissimilarity(p).zeta_unbounded_suspected


def test_dissimilarity_bounds_and_boundaries():
    p = gen_quadratic(6, 3, 8, 20.0, seed=5)
    L = max(c.smoothness_L for c in p.clients)
    for s in range(1, 7):
        exact = estimate_sod(p, s, "exact_quadratic")
        assert exact <= L + 1e-12  # convex clients
        assert estimate_sod(p, s, "probe_estimate", probes=32) <= exact + 1e-9
        assert estimate_ed(p, s, "probe_estimate", probes=32) <= estimate_ed(p, s, "exact_quadratic") + 1e-9
    assert estimate_ed(p, 6) == 0.0
    rep = estimate_dissimilarity(p)
    assert rep.delta == rep.delta_s[6]
    assert rep.delta_max == estimate_delta_max(p)
    assert rep.method == "exact_quadratic" and not rep.lower_bound


def test_power_iteration_matches_exact():
    p = gen_quadratic(5, 2, 10, 10.0, seed=9)
    for s in (2, 5):
        exact = estimate_sod(p, s, "exact_quadratic")
        assert estimate_sod(p, s, "power_iteration") == pytest.approx(exact, rel=1e-3)
        assert estimate_ed(p, s, "power_iteration") == pytest.approx(estimate_ed(p, s, "exact_quadratic"),
                                                                     rel=1e-3, abs=1e-6)


def test_sampled_subsets_flag_lower_bound():
    p = gen_quadratic(20, 1, 3, 5.0, seed=1)
    rep = estimate_dissimilarity(p, [10])
    assert rep.lower_bound  # C(20, 10) > 10^4


def test_subset_size_validation(small_problems):
    p = small_problems["quadratic"]
    with pytest.raises(ValueError):
        estimate_sod(p, p.n + 1)
    with pytest.raises(ValueError):
        estimate_ed(p, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_sod_never_exceeds_twice_max_L(n, d, seed):
    p = gen_quadratic(n, 2, d, 10.0, seed=seed, spread=0.9)
    L = max(c.smoothness_L for c in p.clients)
    for s in range(1, n + 1):
        assert estimate_sod(p, s) <= 2 * L


# --- serialization -------------------------------------------------------------


@pytest.mark.parametrize("family", ["quadratic", "polyhedron", "logreg"])
def test_problem_json_round_trip(small_problems, family, tmp_path):
    p = small_problems[family]
    path = tmp_path / f"{family}.problem.json"
    save_problem(p, path)
    q = load_problem(path)
    assert q.family == p.family and q.n == p.n and q.d == p.d
    assert np.array_equal(q.x_star, p.x_star) and q.f_star == p.f_star
    x = np.linspace(-1, 1, p.d)
    assert q.value(x) == p.value(x)
    assert np.array_equal(q.grad(x), p.grad(x))
