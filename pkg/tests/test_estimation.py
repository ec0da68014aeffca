"""Preprocessing and the projected-gradient constrained MLE."""

import math

import numpy as np
import pytest

from care_rank.errors import (
    ConnectivityError,
    DegenerateColumnError,
    DimensionError,
    InvalidArgumentError,
)
from care_rank.estimation import (
    FitConfig,
    fit_care_scores_pipeline,
    fit_mle,
    preprocess_covariates,
    project_to_theta,
)
from care_rank.model import (
    ComparisonData,
    ParamVector,
    build_projection,
    neg_log_likelihood,
)

from oracles import grid_search_mle, sample_small_instance


class TestPreprocess:
    def test_btl_fallback(self):
        cov = preprocess_covariates(np.zeros((4, 0)))
        assert cov.scale_k == 1.0
        np.testing.assert_array_equal(cov.augmented, np.ones((4, 1)))

    def test_two_level_column(self):
        cov = preprocess_covariates(np.array([[1.0], [-1.0], [1.0], [-1.0]]))
        # already mean 0, sd 1; K maps max row norm 1 to sqrt(2/4)
        assert cov.scale_k == pytest.approx(math.sqrt(2.0), abs=1e-12)
        np.testing.assert_allclose(cov.column_means, [0.0])
        np.testing.assert_allclose(cov.column_sds, [1.0])
        np.testing.assert_allclose(
            np.abs(cov.scaled[:, 0]), math.sqrt(0.5), atol=1e-12
        )

    def test_max_row_norm_hits_target(self):
        rng = np.random.default_rng(0)
        cov = preprocess_covariates(rng.normal(size=(200, 5)))
        max_norm = np.sqrt((cov.scaled**2).sum(axis=1)).max()
        assert max_norm == pytest.approx(math.sqrt(6.0 / 200.0), abs=1e-12)

    def test_columns_standardized(self):
        rng = np.random.default_rng(1)
        cov = preprocess_covariates(rng.uniform(-3, 9, size=(60, 3)))
        centered = cov.scaled * cov.scale_k
        np.testing.assert_allclose(centered.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(centered.std(axis=0), 1.0, atol=1e-12)

    def test_standardize_off_records_identity(self):
        raw = np.array([[2.0, 1.0], [4.0, 1.5], [0.0, 0.5], [1.0, 2.5]])
        cov = preprocess_covariates(raw, standardize=False)
        np.testing.assert_array_equal(cov.column_means, [0.0, 0.0])
        np.testing.assert_array_equal(cov.column_sds, [1.0, 1.0])
        np.testing.assert_allclose(cov.scaled * cov.scale_k, raw, atol=1e-12)

    def test_constant_column_rejected(self):
        raw = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [1.5, 5.0]])
        with pytest.raises(DegenerateColumnError):
            preprocess_covariates(raw)

    def test_too_many_covariates_rejected(self):
        with pytest.raises(DimensionError):
            preprocess_covariates(np.random.default_rng(2).normal(size=(4, 3)))

    def test_too_few_items_rejected(self):
        with pytest.raises(InvalidArgumentError):
            preprocess_covariates(np.zeros((1, 0)))

    def test_augmented_intercept_column(self):
        rng = np.random.default_rng(3)
        cov = preprocess_covariates(rng.normal(size=(9, 2)))
        np.testing.assert_array_equal(cov.augmented[:, 0], np.ones(9))
        np.testing.assert_allclose(cov.augmented[:, 1:], cov.scaled)


class TestProjectToTheta:
    def test_fixed_point(self):
        rng = np.random.default_rng(4)
        cov = preprocess_covariates(rng.normal(size=(5, 2)))
        proj = build_projection(cov)
        inside = project_to_theta(
            ParamVector(rng.normal(size=5), rng.normal(size=2)), proj
        )
        again = project_to_theta(inside, proj)
        np.testing.assert_allclose(again.stacked, inside.stacked, atol=1e-12)

    def test_btl_centering(self):
        cov = preprocess_covariates(np.zeros((3, 0)))
        proj = build_projection(cov)
        out = project_to_theta(ParamVector(np.ones(3), np.zeros(0)), proj)
        np.testing.assert_allclose(out.alpha, 0.0, atol=1e-12)
        assert out.identified

    def test_constraint_satisfied(self):
        rng = np.random.default_rng(5)
        cov = preprocess_covariates(rng.normal(size=(5, 2)))
        proj = build_projection(cov)
        out = project_to_theta(ParamVector(rng.normal(size=5), rng.normal(size=2)), proj)
        assert np.abs(cov.augmented.T @ out.alpha).max() <= 1e-10

    def test_dimension_mismatch(self):
        cov = preprocess_covariates(np.zeros((3, 0)))
        proj = build_projection(cov)
        with pytest.raises(InvalidArgumentError):
            project_to_theta(ParamVector(np.zeros(4), np.zeros(0)), proj)


class TestFitConfig:
    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            FitConfig(step_size=-1.0)
        with pytest.raises(InvalidArgumentError):
            FitConfig(grad_tol=0.0)
        with pytest.raises(InvalidArgumentError):
            FitConfig(ridge_alpha=-0.1)
        with pytest.raises(InvalidArgumentError):
            FitConfig(max_iters=0)
        with pytest.raises(InvalidArgumentError):
            FitConfig(likelihood_scale=0.0)


class TestFitMLE:
    def test_symmetric_pair_gives_equal_scores(self):
        data = ComparisonData.from_edges(2, [(0, 1, 2, 1)])
        cov = preprocess_covariates(np.zeros((2, 0)))
        fit = fit_mle(data, cov)
        np.testing.assert_allclose(fit.params.alpha, 0.0, atol=1e-8)
        assert fit.converged

    def test_matches_grid_search_oracle(self):
        data, cov, _ = sample_small_instance(seed=31, n=3, d=1)
        fit = fit_mle(data, cov)
        oracle = grid_search_mle(data, cov)
        assert np.abs(fit.params.stacked - oracle).max() <= 2e-3

    def test_disconnected_rejected_with_components(self):
        data = ComparisonData.from_edges(4, [(0, 1, 2, 1), (2, 3, 2, 1)])
        cov = preprocess_covariates(np.zeros((4, 0)))
        with pytest.raises(ConnectivityError) as exc_info:
            fit_mle(data, cov)
        assert exc_info.value.components == [[0, 1], [2, 3]]

    def test_no_edges_rejected(self):
        data = ComparisonData.from_edges(3, [])
        cov = preprocess_covariates(np.zeros((3, 0)))
        with pytest.raises(InvalidArgumentError):
            fit_mle(data, cov)

    def test_non_convergence_is_not_an_exception(self):
        data, cov, _ = sample_small_instance(seed=32)
        fit = fit_mle(data, cov, FitConfig(max_iters=1, step_size=1e-6))
        assert not fit.converged
        assert fit.stop_reason == "max_iters"

    def test_converged_means_small_projected_gradient(self):
        data, cov, _ = sample_small_instance(seed=33)
        config = FitConfig(grad_tol=1e-9)
        fit = fit_mle(data, cov, config)
        assert fit.converged
        assert fit.diagnostics.final_grad_norm <= config.grad_tol

    def test_objective_trace_nonincreasing(self):
        data, cov, _ = sample_small_instance(seed=34)
        fit = fit_mle(data, cov)
        trace = np.array(fit.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12)

    def test_result_in_identifiable_subspace(self):
        data, cov, _ = sample_small_instance(seed=35)
        fit = fit_mle(data, cov)
        assert fit.params.identified
        assert np.abs(cov.augmented.T @ fit.params.alpha).max() <= 1e-8

    def test_local_optimality(self):
        data, cov, _ = sample_small_instance(seed=36)
        fit = fit_mle(data, cov)
        proj = fit.projection
        best = neg_log_likelihood(data, cov, fit.params)
        rng = np.random.default_rng(100)
        n = data.n_items
        for _ in range(20):
            delta = proj.apply(rng.normal(size=proj.matrix_p.shape[0]))
            delta *= 1e-3 / np.linalg.norm(delta)
            perturbed = ParamVector.from_stacked(fit.params.stacked + delta, n)
            assert neg_log_likelihood(data, cov, perturbed) >= best - 1e-8

    def test_edge_order_invariance(self):
        data, cov, _ = sample_small_instance(seed=37)
        fit_a = fit_mle(data, cov)
        order = np.random.default_rng(0).permutation(data.n_edges)
        # re-sort into a valid (i < j, canonical) object with permuted
        # construction order; arrays must still be i<j so shuffle rows
        shuffled = ComparisonData(
            data.n_items,
            data.item_i[order],
            data.item_j[order],
            data.trials[order],
            data.wins_j[order],
        )
        fit_b = fit_mle(shuffled, cov)
        assert np.abs(fit_a.params.stacked - fit_b.params.stacked).max() <= 1e-6

    def test_deterministic(self):
        data, cov, _ = sample_small_instance(seed=38)
        fit_a = fit_mle(data, cov)
        fit_b = fit_mle(data, cov)
        np.testing.assert_array_equal(fit_a.params.stacked, fit_b.params.stacked)
        assert fit_a.objective_trace == fit_b.objective_trace

    def test_explicit_step_size(self):
        data, cov, _ = sample_small_instance(seed=39)
        fit = fit_mle(data, cov, FitConfig(step_size=0.5, max_iters=50000))
        assert fit.converged

    def test_step_tol_stop(self):
        data, cov, _ = sample_small_instance(seed=40)
        fit = fit_mle(data, cov, FitConfig(grad_tol=1e-15, step_tol=1e-3))
        assert fit.stop_reason in ("step_tol", "stalled")
        assert not fit.converged or fit.diagnostics.final_grad_norm <= 1e-15

    def test_kappa1_at_least_one(self):
        data, cov, _ = sample_small_instance(seed=41)
        fit = fit_mle(data, cov)
        assert fit.diagnostics.kappa1 >= 1.0

    def test_incoherence_btl_value(self):
        # without covariates the design projector is 11'/n, whose rows
        # all have norm 1/sqrt(n)
        data = ComparisonData.from_edges(4, [(0, 1, 2, 1), (1, 2, 2, 1), (2, 3, 2, 1)])
        cov = preprocess_covariates(np.zeros((4, 0)))
        fit = fit_mle(data, cov)
        assert fit.diagnostics.incoherence == pytest.approx(0.5, abs=1e-12)


class TestRidge:
    def test_zero_ridge_matches_plain(self):
        data, cov, _ = sample_small_instance(seed=50)
        plain = fit_mle(data, cov, FitConfig(grad_tol=1e-10))
        ridged = fit_mle(data, cov, FitConfig(grad_tol=1e-10, ridge_alpha=0.0))
        np.testing.assert_array_equal(plain.params.stacked, ridged.params.stacked)

    def test_alpha_norm_monotone_in_ridge(self):
        data, cov, _ = sample_small_instance(seed=51)
        norms = []
        for lam in [0.0, 0.01, 0.1, 1.0, 10.0]:
            fit = fit_mle(data, cov, FitConfig(grad_tol=1e-10, ridge_alpha=lam))
            norms.append(np.linalg.norm(fit.params.alpha))
        assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))

    def test_ridge_leaves_subspace_constraint(self):
        data, cov, _ = sample_small_instance(seed=52)
        fit = fit_mle(data, cov, FitConfig(ridge_alpha=0.5))
        assert np.abs(cov.augmented.T @ fit.params.alpha).max() <= 1e-8

    def test_real_data_recipe_runs(self):
        # step 3e-3 with the alpha-only penalty and a loose step-norm stop
        data, cov, _ = sample_small_instance(seed=53)
        fit = fit_mle(
            data, cov,
            FitConfig(step_size=3e-3, ridge_alpha=0.1, step_tol=1e-2,
                      likelihood_scale=float(data.total_trials)),
        )
        assert fit.stop_reason in ("step_tol", "grad_tol")


class TestPipeline:
    def test_balanced_cycle_gives_zero_scores(self):
        edges = [(0, 1, 2, 1), (1, 2, 2, 1), (0, 2, 2, 1)]
        fit = fit_care_scores_pipeline((3, edges), None)
        np.testing.assert_allclose(fit.params.alpha, 0.0, atol=1e-8)

    def test_matches_manual_stages(self):
        rng = np.random.default_rng(60)
        raw = rng.normal(size=(5, 1))
        edges = [(i, j, 6, int(rng.integers(1, 6))) for i in range(5) for j in range(i + 1, 5)]
        fit_pipeline = fit_care_scores_pipeline((5, edges), raw)
        data = ComparisonData.from_edges(5, edges)
        cov = preprocess_covariates(raw)
        fit_manual = fit_mle(data, cov)
        np.testing.assert_array_equal(
            fit_pipeline.params.stacked, fit_manual.params.stacked
        )

    def test_bit_identical_reruns(self):
        rng = np.random.default_rng(61)
        raw = rng.normal(size=(4, 1))
        edges = [(0, 1, 4, 2), (1, 2, 4, 1), (2, 3, 4, 3), (0, 3, 4, 2)]
        fit_a = fit_care_scores_pipeline((4, edges), raw)
        fit_b = fit_care_scores_pipeline((4, edges), raw)
        np.testing.assert_array_equal(fit_a.params.stacked, fit_b.params.stacked)
        assert fit_a.objective_trace == fit_b.objective_trace
