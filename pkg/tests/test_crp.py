import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import dual_crp, pgd_crp
from resquery.crp import (
    CrpProblem,
    aggregate_workload_weights,
    iid_allocation,
    kkt_residual,
    postprocess,
    relaxed_closed_form,
    solve_crp,
)
from resquery.domain import Domain, subsets
from resquery.privacy import residual_batch_cost, v_tau

TAUS2 = ((), (0,))


def hand_problem(a0=0.0, budget=1.0):
    return CrpProblem(TAUS2, v=[0.25, 0.5], p=[1.0, 0.5], a=[a0, 0.0], budget=budget)


def random_problem(rng, k=None, prior_prob=0.5):
    k = k or int(rng.integers(1, 9))
    v = rng.uniform(0.01, 1.0, k)
    p = rng.uniform(0.05, 1.0, k)
    a = np.where(rng.random(k) < prior_prob, rng.exponential(2.0, k), 0.0)
    return CrpProblem(tuple((i,) for i in range(k)), v, p, a, float(rng.uniform(0.1, 3)))


class TestClosedForm:
    def test_hand_example(self):
        x = relaxed_closed_form(hand_problem())
        np.testing.assert_allclose(x, [0.5, 1.0], rtol=1e-15)

    def test_negative_with_prior(self):
        x = relaxed_closed_form(hand_problem(a0=10.0))
        assert x[0] == pytest.approx(-4.5, rel=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_positive_without_priors(self, seed):
        pr = random_problem(np.random.default_rng(seed), prior_prob=0.0)
        assert (relaxed_closed_form(pr) > 0).all()
        assert solve_crp(pr).iterations == 1


class TestSolve:
    def test_fast_path(self):
        sol = solve_crp(hand_problem())
        np.testing.assert_array_equal(sol.x, relaxed_closed_form(hand_problem()))

    def test_clamped_example(self):
        sol = solve_crp(hand_problem(a0=10.0))
        np.testing.assert_allclose(sol.x, [0.0, 2.0], rtol=1e-15)

    def test_against_dual_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            pr = random_problem(rng)
            np.testing.assert_allclose(solve_crp(pr).x, dual_crp(pr.v, pr.p, pr.a), atol=1e-9)

    def test_against_gradient_oracle_small(self):
        rng = np.random.default_rng(1)
        probs = [random_problem(rng, k=3) for _ in range(10)]
        _, f = pgd_crp([p.v for p in probs], [p.p for p in probs], [p.a for p in probs])
        for pr, fo in zip(probs, f):
            assert solve_crp(pr).objective == pytest.approx(fo, rel=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_kkt_certificate(self, seed):
        sol = solve_crp(random_problem(np.random.default_rng(seed)))
        pr = sol.problem
        spread, worst = kkt_residual(sol)
        assert spread <= 1e-6
        assert worst <= 1e-6
        assert (sol.x >= 0).all()
        assert (pr.p * sol.x).sum() <= 1 + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_beats_iid(self, seed):
        pr = random_problem(np.random.default_rng(seed))
        assert solve_crp(pr).objective <= pr.objective(iid_allocation(pr)) * (1 + 1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            CrpProblem(TAUS2, [0.0, 1.0], [1.0, 1.0], [0.0, 0.0], 1.0)
        with pytest.raises(ValueError):
            CrpProblem(TAUS2, [1.0, 1.0], [1.0, 1.0], [-1.0, 0.0], 1.0)
        with pytest.raises(ValueError):
            CrpProblem(TAUS2, [1.0], [1.0], [0.0], 1.0)


def test_scale_covariance_recovers_variances():
    """Solving directly over variances on a grid gives the same answer as the transformed problem."""
    dom = Domain(("a",), (2,))
    rho_round = 0.3
    pr = CrpProblem.for_marginal(dom, (0,), rho_round)
    sigma2 = postprocess(solve_crp(pr), eta=1e-6)
    # one-parameter family meeting the budget: s_empty free, s_a fixed by sum p/(2 s2) = rho
    best = None
    for s0 in np.linspace(1.0, 20.0, 200_001):
        rest = rho_round - 1.0 / (2 * s0)
        if rest <= 0:
            continue
        s1 = pr.p[1] / (2 * rest)
        err = pr.v[0] * s0 + pr.v[1] * s1
        if best is None or err < best[0]:
            best = (err, s0, s1)
    assert sigma2[()] == pytest.approx(best[1], rel=1e-4)
    assert sigma2[(0,)] == pytest.approx(best[2], rel=1e-4)


class TestPostprocess:
    def test_drops_zero(self):
        sol = solve_crp(hand_problem(a0=10.0))
        assert postprocess(sol) == {(0,): pytest.approx(0.5)}

    def test_variance_arithmetic(self):
        sol = solve_crp(hand_problem(a0=10.0, budget=0.5))
        assert postprocess(sol)[(0,)] == pytest.approx(1 / (0.5 * 2))

    def test_boundary_retained(self):
        pr = CrpProblem(((), (0,)), [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], 1.0)
        sol = solve_crp(pr)
        assert len(postprocess(sol, eta=0.5)) == 2
        assert postprocess(sol, eta=0.5 + 1e-9) == {}

    def test_eta_range(self):
        with pytest.raises(ValueError):
            postprocess(solve_crp(hand_problem()), eta=0.0)

    def test_budget_never_exceeded(self):
        rng = np.random.default_rng(3)
        dom = Domain(("a", "b", "c"), (3, 5, 2))
        for _ in range(100):
            rho = float(rng.uniform(0.01, 2))
            lam = {t: float(rng.exponential(0.5)) for t in subsets((0, 1, 2))}
            pr = CrpProblem.for_marginal(dom, (0, 1, 2), rho, lam)
            alloc = postprocess(solve_crp(pr))
            assert residual_batch_cost(dom, alloc) <= rho * (1 + 1e-12)


def test_prior_transform_round_trip():
    dom = Domain(("a", "b"), (3, 4))
    s2 = 2.5
    lam = {(): 0.2, (0,): 1.3, (1,): 0.0, (0, 1): 0.7}
    pr = CrpProblem.for_marginal(dom, (0, 1), 1 / (2 * s2), lam)
    assert pr.budget == pytest.approx(1 / s2)
    for tau, a in zip(pr.taus, pr.a):
        # a = 1/(C * prior variance) with prior variance 1/lambda
        assert a == pytest.approx(lam[tau] * s2)
        if lam[tau]:
            assert 1 / (pr.budget * a) == pytest.approx(1 / lam[tau])


class TestWorkloadWeights:
    def test_single(self):
        dom = Domain(("a", "b"), (2, 3))
        w = aggregate_workload_weights([(0, 1)], dom)
        for tau in subsets((0, 1)):
            assert w[tau] == pytest.approx(v_tau(dom, (0, 1), tau))

    def test_two_terms(self):
        dom = Domain(("a", "b"), (2, 3))
        w = aggregate_workload_weights([(0,), (0, 1)], dom)
        assert w[(0,)] == pytest.approx(5 / 9)

    def test_errors(self):
        dom = Domain(("a", "b"), (2, 3))
        with pytest.raises(ValueError):
            aggregate_workload_weights([(0,)], dom, taus=[(1,)])
        with pytest.raises(ValueError):
            aggregate_workload_weights([], dom)
