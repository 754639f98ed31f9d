import math
import warnings

import numpy as np
import pytest

from sdane.local_solvers import FGD, GD, SGD, Exact, solve_exact, solve_fgd, solve_gd, solve_sgd
from sdane.problems import ClientFunction, QuadraticClient, gen_logreg
from sdane.subproblem import ProxSubproblem, StoppingRule


class CountingClient(ClientFunction):
    """Wraps a client and counts deterministic gradient calls."""

    def __init__(self, inner):
        self.inner = inner
        self.client_id = inner.client_id
        self.data_size = inner.data_size
        self.smoothness_L = inner.smoothness_L
        self.convexity_mu = inner.convexity_mu
        self.calls = 0

    def value(self, x):
        return self.inner.value(x)

    def grad(self, x):
        self.calls += 1
        return self.inner.grad(x)

    def batch_grad(self, x, idx):
        return self.inner.batch_grad(x, idx)


class NoisyScalar(ClientFunction):
    """f(z) = (z - 1)^2 / 4 with stochastic gradients perturbed by +-0.1."""

    client_id = 0
    data_size = 2
    smoothness_L = 0.5
    convexity_mu = 0.5

    def value(self, x):
        return 0.25 * float((x[0] - 1.0) ** 2)

    def grad(self, x):
        return 0.5 * (x - 1.0)

    def stoch_grad(self, x, batch, rng=None):
        return self.grad(x) + (0.1 if rng.random() < 0.5 else -0.1)


def quad_sub(seed=0, d=6, lam=1.0):
    rng = np.random.default_rng(seed)
    c = QuadraticClient(0, rng.uniform(0.5, 20, size=(4, d)), rng.normal(size=(4, d)))
    return ProxSubproblem(c, rng.normal(size=d), rng.normal(size=d), lam)


def test_start_passing_rule_costs_one_call():
    sub = quad_sub()
    x0 = sub.exact_minimizer()
    loose = StoppingRule.stochastic_slack(0.5, slack=1.0)
    for res in (solve_gd(sub, x0, None, loose), solve_fgd(sub, x0, loose)):
        assert res.oracle_calls == 1 and res.stopped_by == "rule"
        assert np.array_equal(res.x_out, x0)


def test_one_step_exact_on_unit_quadratic():
    # f = (x - 1)^2 / 4, lam = 1/2, center 1  =>  F = (x - 1)^2 / 2
    c = QuadraticClient(0, [[0.5]], [[1.0]])
    sub = ProxSubproblem(c, np.zeros(1), np.ones(1), 0.5)
    res = solve_gd(sub, np.array([5.0]), 1.0, StoppingRule.relative_grad(0.5))
    assert res.x_out[0] == 1.0
    assert res.oracle_calls == 2


def test_gd_returns_gradient_at_output():
    sub = quad_sub(1)
    res = solve_gd(sub, sub.prox_center, None, StoppingRule())
    g_base, g_F = sub.grad_parts(res.x_out)
    assert np.array_equal(res.grad_at_x_out, g_F) and np.array_equal(res.base_grad, g_base)
    assert res.oracle_calls >= 1


def test_oracle_accounting_matches_counting_wrapper():
    rng = np.random.default_rng(2)
    inner = QuadraticClient(0, rng.uniform(0.5, 20, size=(4, 6)), rng.normal(size=(4, 6)))
    for solver in (GD(), FGD()):
        c = CountingClient(inner)
        sub = ProxSubproblem(c, rng.normal(size=6), rng.normal(size=6), 1.5)
        res = solver(sub, sub.prox_center, StoppingRule())
        assert res.oracle_calls == c.calls
    c = CountingClient(inner)
    sub = ProxSubproblem(c, rng.normal(size=6), rng.normal(size=6), 1.5)
    res = solve_sgd(sub, sub.prox_center, 50.0, 2, 200, StoppingRule.stochastic_slack(0.5, 1e-6), rng)
    assert res.oracle_calls == c.calls


def test_cap_is_reported():
    sub = quad_sub(3)
    res = solve_gd(sub, sub.prox_center + 1.0, None, StoppingRule.relative_grad(1e-9, max_oracle_calls=5))
    assert res.stopped_by == "cap" and res.oracle_calls == 5


def test_stall_at_rounding_floor():
    sub = quad_sub(4)
    res = solve_gd(sub, sub.prox_center + 1.0, None, StoppingRule.relative_grad(1e-300, max_oracle_calls=100_000))
    assert res.stopped_by == "stall"
    assert res.oracle_calls < 100_000


def test_large_step_warns():
    sub = quad_sub(5)
    with pytest.warns(UserWarning):
        solve_gd(sub, sub.prox_center, 2.0 / sub.smoothness, StoppingRule())


def test_gd_gradient_norms_non_increasing():
    for seed in range(20):
        sub = quad_sub(seed)
        trace = []
        solve_gd(sub, sub.prox_center + 3.0, None, StoppingRule.relative_grad(1e-6, 200), trace=trace, debug=True)
        norms = [np.linalg.norm(sub.grad(x)) for x in trace]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_fgd_not_worse_than_gd_on_identity_quadratic():
    c = QuadraticClient(0, np.ones((1, 8)), np.arange(8.0)[None, :])
    sub = ProxSubproblem(c, np.zeros(8), np.zeros(8), 0.1)
    rule = StoppingRule.relative_grad(1e-3)
    assert solve_fgd(sub, sub.prox_center, rule).oracle_calls <= solve_gd(sub, sub.prox_center, None, rule).oracle_calls


def test_fgd_condition_number_scaling():
    d = 20
    calls = {}
    for kappa in (10, 40, 160):
        A = np.geomspace(1.0, float(kappa), d)[None, :]
        c = QuadraticClient(0, A, np.ones((1, d)))
        sub = ProxSubproblem(c, np.zeros(d), np.zeros(d), 1e-9 * kappa)
        calls[kappa] = solve_fgd(sub, np.zeros(d), StoppingRule.relative_grad(1e-6, 10_000)).oracle_calls
    # each 4x in kappa should cost at most 2x (sqrt) times a 2x slack
    assert calls[40] <= 4 * calls[10]
    assert calls[160] <= 4 * calls[40]
    assert calls[160] > calls[10]


def test_sgd_parameter_guards():
    sub = quad_sub(6)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        solve_sgd(sub, sub.prox_center, sub.smoothness, 1, 10, StoppingRule.stochastic_slack(), rng)
    with pytest.raises(ValueError):
        solve_sgd(sub, sub.prox_center, sub.convexity, 1, 10, StoppingRule.stochastic_slack(), rng)


def test_zero_variance_sgd_matches_gd_and_passes_rule():
    sub = quad_sub(7)
    H = 1.2 * sub.smoothness
    res = solve_sgd(sub, sub.prox_center, H, sub.base.data_size, 5000, StoppingRule.stochastic_slack(0.5), None)
    assert res.stopped_by == "rule"
    assert res.stochastic_oracle_calls < 5000


def test_sgd_weighted_average_is_unbiased_monte_carlo():
    sub = ProxSubproblem(NoisyScalar(), np.zeros(1), np.ones(1), 0.5)  # F = (z - 1)^2 / 2
    H, K = 2.0, 30
    never = StoppingRule.stochastic_slack(1e-300, 0.0)
    outs = np.array([
        solve_sgd(sub, np.array([1.0]), H, 1, K, never, np.random.default_rng(seed), check_every=K).x_out[0]
        for seed in range(10_000)
    ])
    sigma = outs.std(ddof=1) / math.sqrt(outs.size)
    assert abs(outs.mean() - 1.0) <= 3 * sigma


def test_solver_determinism():
    p = gen_logreg(2, 40, 4, 1.0, seed=0)
    sub = ProxSubproblem(p.clients[0], np.zeros(4), np.ones(4), 0.5)
    rule = StoppingRule.stochastic_slack(0.5, 1e-8)
    a = SGD(batch=3)(sub, sub.prox_center, rule, 0, np.random.default_rng(5))
    b = SGD(batch=3)(sub, sub.prox_center, rule, 0, np.random.default_rng(5))
    assert np.array_equal(a.x_out, b.x_out) and a.oracle_calls == b.oracle_calls
    assert a.stochastic_oracle_calls == b.stochastic_oracle_calls


def test_exact_solver():
    sub = quad_sub(8)
    res = Exact()(sub, None, StoppingRule())
    assert res.oracle_calls == 1
    assert np.array_equal(res.x_out, sub.exact_minimizer())
    assert np.array_equal(solve_exact(sub).x_out, res.x_out)
