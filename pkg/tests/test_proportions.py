import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcshift.network import MlpConfig, MlpParams, SourceModel
from gcshift.proportions import (
    EmptySourceClassError,
    RatioWeights,
    TargetProportionEstimate,
    em_from_posteriors,
    em_saerens,
    pseudo_log_likelihood,
    ratio_weights,
    ratio_weights_from_eta,
    solve_pmle,
)

from helpers import grid_maximum, random_ratio_instance


def _closed_form():
    return RatioWeights.from_ratios(np.r_[np.full(50, 2.0), np.full(50, 0.5)])


def _eta_for(r: RatioWeights, pi_P):
    eta = r.r * pi_P
    return eta / eta.sum(axis=1, keepdims=True)


class TestRatioWeights:
    def test_reference_column_enforced(self):
        with pytest.raises(ValueError):
            RatioWeights(np.array([[2.0, 0.5]]))

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
    def test_positive_finite(self, bad):
        with pytest.raises(ValueError):
            RatioWeights.from_ratios(np.array([1.0, bad]))

    def test_two_forms_agree(self, rng):
        d, k = 3, 4
        params = MlpParams([rng.normal(size=(5, d)), rng.normal(size=(k - 1, 5))],
                           [rng.normal(size=5)])
        model = SourceModel(params, MlpConfig(depth=1, width=5, output_dim=k - 1),
                            np.array([0.1, 0.2, 0.3, 0.4]))
        x = rng.random((50, d))
        a = ratio_weights(model, x).r
        b = ratio_weights_from_eta(model.eta(x), model.pi_P).r
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_empty_source_class(self):
        with pytest.raises(EmptySourceClassError):
            ratio_weights_from_eta(np.array([[0.5, 0.5]]), np.array([1.0, 0.0]))


class TestPseudoLikelihood:
    def test_two_row_example(self):
        r = RatioWeights.from_ratios(np.array([2.0, 0.5]))
        assert pseudo_log_likelihood(r, [0.5, 0.5]) == pytest.approx(np.log(1.5) + np.log(0.75))
        assert pseudo_log_likelihood(r, [0.5, 0.5]) == pytest.approx(0.117783, abs=1e-6)

    def test_vertex_k(self):
        # all mass on the reference class gives log 1 per row
        r = RatioWeights.from_ratios(np.array([[3.0, 0.2], [0.1, 9.0]]))
        assert pseudo_log_likelihood(r, [0.0, 0.0, 1.0]) == 0.0

    def test_requires_simplex(self):
        with pytest.raises(ValueError):
            pseudo_log_likelihood(_closed_form(), [0.7, 0.7])


class TestSolveBinary:
    def test_closed_form(self):
        est = solve_pmle(_closed_form())
        assert abs(est.pi_Q[0] - 0.5) < 1e-8
        assert est.solver == "bisection-score"
        assert est.converged

    def test_all_large_ratio_boundary_one(self):
        est = solve_pmle(RatioWeights.from_ratios(np.full(10, 3.0)))
        np.testing.assert_array_equal(est.pi_Q, [1.0, 0.0])
        assert est.iterations == 0

    def test_all_small_ratio_boundary_zero(self):
        est = solve_pmle(RatioWeights.from_ratios(np.full(10, 0.3)))
        np.testing.assert_array_equal(est.pi_Q, [0.0, 1.0])

    def test_flat_is_degenerate(self):
        est = solve_pmle(RatioWeights.from_ratios(np.ones(10)))
        np.testing.assert_array_equal(est.pi_Q, [0.5, 0.5])
        assert est.degenerate and not est.converged

    def test_score_root(self, rng):
        r = RatioWeights.from_ratios(np.exp(rng.normal(0.0, 1.0, 80)))
        p = solve_pmle(r).pi_Q[0]
        if 0 < p < 1:
            a = r.r[:, 0] - 1
            assert abs(np.sum(a / (p * r.r[:, 0] + 1 - p))) < 1e-6

    def test_fine_grid_oracle(self, rng):
        r = RatioWeights.from_ratios(np.exp(rng.normal(0.3, 1.0, 60)))
        grid = np.linspace(0, 1, 100001)
        ll = np.log(np.outer(r.r[:, 0], grid) + (1 - grid)).sum(axis=0)
        assert abs(solve_pmle(r).pi_Q[0] - grid[np.argmax(ll)]) <= 2e-5


class TestSolveMulticlass:
    @pytest.mark.parametrize("seed", range(10))
    def test_grid_oracle(self, seed):
        r = random_ratio_instance(np.random.default_rng(seed), max_k=3, max_n=80)
        est = solve_pmle(r)
        assert est.final_pseudo_loglik >= grid_maximum(r) - 1e-8
        assert est.final_pseudo_loglik == pytest.approx(pseudo_log_likelihood(r, est.pi_Q))

    def test_symmetric_instance_uniform(self):
        # one row favouring each class, otherwise symmetric
        r = RatioWeights(np.array([[4.0, 1.0, 1.0], [1.0, 4.0, 1.0], [0.25, 0.25, 1.0]]))
        est = solve_pmle(r)
        np.testing.assert_allclose(est.pi_Q, np.full(3, 1 / 3), atol=1e-9)
        assert est.solver == "em-fixed-point"

    def test_flat_is_degenerate(self):
        est = solve_pmle(RatioWeights(np.ones((5, 3))))
        np.testing.assert_allclose(est.pi_Q, np.full(3, 1 / 3))
        assert est.degenerate and not est.converged

    def test_vertex_optimum(self):
        # class 1 dominates every row
        r = RatioWeights(np.array([[50.0, 1e-3, 1.0]] * 20))
        est = solve_pmle(r)
        assert est.pi_Q[0] == pytest.approx(1.0, abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_result_on_simplex(self, seed):
        r = random_ratio_instance(np.random.default_rng(seed))
        pi = solve_pmle(r).pi_Q
        assert np.all(pi >= 0) and pi.sum() == pytest.approx(1.0, abs=1e-12)


class TestEm:
    def test_agrees_with_pmle(self, rng):
        for _ in range(10):
            r = random_ratio_instance(rng)
            pi_P = rng.dirichlet(np.full(r.k, 3.0))
            em = em_from_posteriors(_eta_for(r, pi_P), pi_P)
            np.testing.assert_allclose(em.pi_Q, solve_pmle(r).pi_Q, atol=1e-6)

    def test_monotone_pseudo_likelihood(self, rng):
        r = random_ratio_instance(rng, max_k=4)
        pi_P = rng.dirichlet(np.full(r.k, 3.0))
        eta = _eta_for(r, pi_P)
        trace = []
        em_from_posteriors(eta, pi_P, trace=trace)
        assert np.all(np.diff(trace) >= -1e-12)
        # the reported value differs from the pseudo-likelihood by a constant
        offset = np.sum(np.log(eta[:, -1] / pi_P[-1]))
        assert trace[0] - offset == pytest.approx(pseudo_log_likelihood(r, pi_P), abs=1e-8)

    def test_no_shift_fixed_point(self):
        pi_P = np.array([0.3, 0.7])
        # flat rows: each posterior equals the prior
        est = em_from_posteriors(np.tile(pi_P, (10, 1)), pi_P)
        np.testing.assert_allclose(est.pi_Q, pi_P)
        assert est.iterations == 1
        assert est.degenerate and not est.converged

    def test_start_at_fixed_point(self, rng):
        r = random_ratio_instance(rng)
        pi_P = rng.dirichlet(np.full(r.k, 3.0))
        eta = _eta_for(r, pi_P)
        first = em_from_posteriors(eta, pi_P)
        # reuse the limit as the source prior: one iteration suffices
        eta2 = _eta_for(r, first.pi_Q)
        again = em_from_posteriors(eta2, first.pi_Q)
        assert again.iterations <= 2
        np.testing.assert_allclose(again.pi_Q, first.pi_Q, atol=1e-8)

    def test_model_interface(self, rng):
        k = 3
        params = MlpParams([rng.normal(size=(4, 2)), rng.normal(size=(k - 1, 4))],
                           [rng.normal(size=4)])
        model = SourceModel(params, MlpConfig(depth=1, width=4, output_dim=2),
                            np.array([0.2, 0.3, 0.5]))
        x = rng.random((40, 2))
        a = em_saerens(model, x)
        b = em_from_posteriors(model.eta(x), model.pi_P)
        np.testing.assert_array_equal(a.pi_Q, b.pi_Q)


def test_estimate_serialisation():
    est = solve_pmle(_closed_form())
    back = TargetProportionEstimate.from_dict(est.to_dict())
    np.testing.assert_array_equal(back.pi_Q, est.pi_Q)
    assert back.solver == est.solver and back.iterations == est.iterations
