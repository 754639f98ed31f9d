import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdane.problems import QuadraticClient, gen_logreg, mean_vectors
from sdane.subproblem import OracleCounter, ProxSubproblem, StoppingRule, build_subproblem, check_stop


def quad_client(rng, d=5, cid=0):
    return QuadraticClient(cid, rng.uniform(0.1, 10, size=(3, d)), rng.normal(size=(3, d)))


def test_single_participant_has_no_shift():
    rng = np.random.default_rng(0)
    c = quad_client(rng)
    center = rng.normal(size=5)
    g = c.grad(center)
    for drift in (True, False):
        sub = build_subproblem(c, mean_vectors([g]), g, center, 1.0, drift)
        assert np.array_equal(sub.shift, np.zeros(5))


def test_two_client_shifts_cancel():
    rng = np.random.default_rng(1)
    c = quad_client(rng, d=2)
    g1, g2 = np.array([1.0, 0.0]), np.array([-1.0, 0.0])
    mean = mean_vectors([g1, g2])
    s1 = build_subproblem(c, mean, g1, np.zeros(2), 1.0).shift
    s2 = build_subproblem(c, mean, g2, np.zeros(2), 1.0).shift
    assert np.array_equal(s1, [-1.0, 0.0]) and np.array_equal(s2, [1.0, 0.0])
    assert np.array_equal(s1 + s2, np.zeros(2))


def test_no_drift_gradient_at_center_is_own_gradient():
    rng = np.random.default_rng(2)
    c = quad_client(rng)
    center = rng.normal(size=5)
    sub = build_subproblem(c, rng.normal(size=5), rng.normal(size=5), center, 3.0, drift=False)
    assert np.array_equal(sub.grad(center), c.grad(center))


def test_shift_sum_over_participants_is_zero():
    rng = np.random.default_rng(3)
    clients = [quad_client(rng, cid=i) for i in range(7)]
    center = rng.normal(size=5)
    grads = [c.grad(center) for c in clients]
    mean = mean_vectors(grads)
    total = sum(build_subproblem(c, mean, g, center, 1.0).shift for c, g in zip(clients, grads))
    assert np.max(np.abs(total)) <= 1e-12


def test_dimension_mismatch():
    rng = np.random.default_rng(4)
    c = quad_client(rng)
    with pytest.raises(ValueError):
        build_subproblem(c, np.zeros(4), np.zeros(5), np.zeros(5), 1.0)


def test_lambda_must_be_positive():
    c = quad_client(np.random.default_rng(5))
    with pytest.raises(ValueError):
        ProxSubproblem(c, np.zeros(5), np.zeros(5), 0.0)


def test_gradient_matches_value_finite_differences():
    p = gen_logreg(3, 30, 4, 1.0, seed=1)
    rng = np.random.default_rng(6)
    sub = ProxSubproblem(p.clients[0], rng.normal(size=4), rng.normal(size=4), 0.7)
    x = rng.normal(size=4)
    h = 1e-6
    fd = np.array([(sub.value(x + h * e) - sub.value(x - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(sub.grad(x), fd, rtol=1e-5, atol=1e-7)
    g_base, g_F = sub.grad_parts(x)
    assert np.array_equal(g_F, g_base + sub.shift + sub.lam * (x - sub.prox_center))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_secant_inequalities(seed):
    rng = np.random.default_rng(seed)
    c = quad_client(rng)
    sub = ProxSubproblem(c, rng.normal(size=5), rng.normal(size=5), float(rng.uniform(0.1, 5)))
    x, y = rng.normal(size=(2, 5))
    gap = sub.value(y) - sub.value(x) - sub.grad(x) @ (y - x)
    r2 = float((x - y) @ (x - y))
    assert gap >= 0.5 * sub.convexity * r2 - 1e-9
    assert gap <= 0.5 * sub.smoothness * r2 + 1e-9


def test_exact_minimizer_passes_every_rule():
    rng = np.random.default_rng(7)
    c = quad_client(rng)
    sub = ProxSubproblem(c, rng.normal(size=5), rng.normal(size=5), 2.0)
    x = sub.exact_minimizer()
    assert np.max(np.abs(sub.grad(x))) <= 1e-12
    for theta in (1e-3, 0.5, 1.0):
        # at the true minimizer the gradient is zero up to rounding; compare with a rounding floor
        assert np.linalg.norm(sub.grad(x)) <= theta * 2.0 * np.linalg.norm(x - sub.prox_center) + 1e-12


def test_rule_examples():
    c = np.zeros(1)
    # center with zero gradient: every kind passes
    for rule in (StoppingRule.relative_grad(), StoppingRule.dane_decaying(), StoppingRule.stochastic_slack()):
        assert rule.satisfied(np.zeros(1), c, c, 1.0, 0)
    # boundary counts as satisfied: 1 <= 0.5 * 2 * 1
    assert StoppingRule.relative_grad(0.5).satisfied(np.array([1.0]), np.array([1.0]), c, 2.0)
    # 0.6 > 1 * 2 / (3 + 1) * 1
    assert not StoppingRule.dane_decaying(1.0).satisfied(np.array([0.6]), np.array([1.0]), c, 2.0, round_index=3)
    assert StoppingRule.dane_decaying(1.0).satisfied(np.array([0.6]), np.array([1.0]), c, 2.0, round_index=1)
    # slack: 1 <= 0.25 + 0.75
    assert StoppingRule.stochastic_slack(0.5, slack=0.75).satisfied(np.array([1.0]), np.array([1.0]), c, 1.0)
    assert not StoppingRule.stochastic_slack(0.5, slack=0.7).satisfied(np.array([1.0]), np.array([1.0]), c, 1.0)


def test_rule_validation():
    with pytest.raises(ValueError):
        StoppingRule("bogus")
    with pytest.raises(ValueError):
        StoppingRule(theta=0.0)
    with pytest.raises(ValueError):
        StoppingRule("stochastic_slack", slack=-1.0)


def test_check_stop_costs_one_oracle_call():
    rng = np.random.default_rng(8)
    c = quad_client(rng)
    sub = ProxSubproblem(c, np.zeros(5), np.zeros(5), 1.0)
    counter = OracleCounter()
    check_stop(StoppingRule(), sub, rng.normal(size=5), 0, counter)
    check_stop(StoppingRule(), sub, rng.normal(size=5), 0, counter)
    assert counter.calls == 2
