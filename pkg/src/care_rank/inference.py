"""Uncertainty quantification for fitted comparison models.

The sampling variance of any linear combination c of the fitted
parameters is read off the Moore-Penrose pseudoinverse of the projected
Hessian: var(c . fit) ~= cbar^T [P H P]^+ cbar with cbar the projection
of c onto the identifiable subspace.  Because the Hessian here folds the
per-edge trial counts in, no separate 1/L factor is needed; when every
pair has the same trial count the numbers agree exactly with the
constant-count formula that carries sqrt(L) explicitly.

Also provided: the minimizer of the quadratic expansion of the loss
around a known truth (the inferential surrogate used to study how close
the MLE is to its linearization), and soft-thresholded ranking scores
that zero out statistically insignificant intrinsic effects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConnectivityError, DegenerateContrastError, InvalidArgumentError
from .estimation import FitResult
from .model import (
    ComparisonData,
    CovariateMatrix,
    ParamVector,
    ProjectionOperator,
    _readonly,
    gradient,
    hessian,
    is_connected,
)
from .normal import normal_quantile, two_sided_p_value

__all__ = [
    "VarianceModel",
    "ContrastResult",
    "CoefficientEstimate",
    "RankingScores",
    "InferenceReport",
    "projected_hessian_pinv",
    "plugin_variance_model",
    "oracle_variance_model",
    "contrast_inference",
    "beta_inference",
    "alpha_inference",
    "full_inference_report",
    "quadratic_approx_minimizer",
    "soft_threshold",
    "care_ranking_scores",
    "standardized_stats",
]

DEFAULT_EIGEN_CUTOFF = 1e-10


@dataclass(frozen=True)
class VarianceModel:
    """Projected Hessian with its pseudoinverse on the retained spectrum.

    ``effective_l`` divides every variance; it stays 1 because trial
    counts are already folded into the Hessian.  ``rank_warning`` flags
    more near-zero eigenvalues than the d+1 the constraint accounts for,
    the signature of a disconnected graph or collinear design.
    """

    projected_hessian: np.ndarray
    pseudoinverse: np.ndarray
    eigen_threshold: float
    effective_l: float
    n_zero_eigenvalues: int
    expected_zero_eigenvalues: int
    rank_warning: bool

    def __post_init__(self):
        object.__setattr__(self, "projected_hessian", _readonly(self.projected_hessian))
        object.__setattr__(self, "pseudoinverse", _readonly(self.pseudoinverse))

    def variance_of(self, cbar: np.ndarray) -> float:
        v = float(cbar @ self.pseudoinverse @ cbar) / self.effective_l
        return max(v, 0.0)


@dataclass(frozen=True)
class ContrastResult:
    estimate: float
    std_error: float
    z_stat: float
    p_value: float
    ci_low: float
    ci_high: float
    level: float
    # max(||c_alpha||_1, sqrt(n/(d+1)) ||c_beta||_2) / ||cbar||_2 -- the
    # quantity the normality guarantee needs bounded; reported, not
    # enforced.
    condition_ratio: float


@dataclass(frozen=True)
class CoefficientEstimate:
    index: int
    estimate: float
    std_error: float
    z_stat: float
    p_value: float
    ci_low: float
    ci_high: float
    level: float


@dataclass(frozen=True)
class RankingScores:
    """Covariate-only and soft-thresholded ranking scores with ranks."""

    scores1: np.ndarray
    scores2: np.ndarray
    taus: np.ndarray
    ranks1: np.ndarray
    ranks2: np.ndarray


@dataclass(frozen=True)
class InferenceReport:
    alpha_rows: list[CoefficientEstimate]
    beta_rows: list[CoefficientEstimate]
    care_scores_1: np.ndarray
    care_scores_2: np.ndarray
    thresholds_tau: np.ndarray
    ranks_1: np.ndarray
    ranks_2: np.ndarray
    level: float
    quantile_level: float


def projected_hessian_pinv(
    hess: np.ndarray,
    proj: ProjectionOperator,
    rel_eigen_cutoff: float = DEFAULT_EIGEN_CUTOFF,
    effective_l: float = 1.0,
) -> VarianceModel:
    """Pseudoinverse of P @ hess @ P via symmetric eigendecomposition.

    Eigenvalues below ``rel_eigen_cutoff`` times the largest are treated
    as exact zeros.  On a connected graph with a full-rank design exactly
    d+1 of them should vanish; any surplus is recorded as a warning on
    the result rather than raised.
    """
    hess = np.asarray(hess, dtype=float)
    dim = proj.matrix_p.shape[0]
    if hess.shape != (dim, dim):
        raise InvalidArgumentError(
            f"hessian shape {hess.shape} does not match projector dimension {dim}"
        )
    if not (0 < rel_eigen_cutoff < 1):
        raise InvalidArgumentError("rel_eigen_cutoff must be in (0, 1)")
    projected = proj.matrix_p @ hess @ proj.matrix_p
    projected = 0.5 * (projected + projected.T)
    eigvals, eigvecs = np.linalg.eigh(projected)
    lam_max = float(eigvals[-1])
    threshold = rel_eigen_cutoff * max(lam_max, 0.0)
    keep = eigvals > threshold
    inv_vals = np.where(keep, 1.0 / np.where(keep, eigvals, 1.0), 0.0)
    pinv = (eigvecs * inv_vals) @ eigvecs.T
    pinv = 0.5 * (pinv + pinv.T)
    n_zero = int(np.sum(~keep))
    expected = proj.n_constraints
    return VarianceModel(
        projected_hessian=projected,
        pseudoinverse=pinv,
        eigen_threshold=rel_eigen_cutoff,
        effective_l=float(effective_l),
        n_zero_eigenvalues=n_zero,
        expected_zero_eigenvalues=expected,
        rank_warning=n_zero > expected,
    )


def plugin_variance_model(fit: FitResult, rel_eigen_cutoff: float = DEFAULT_EIGEN_CUTOFF) -> VarianceModel:
    """Variance model with the Hessian evaluated at the fitted parameters."""
    hess = hessian(fit.data, fit.covariates, fit.params)
    return projected_hessian_pinv(hess, fit.projection, rel_eigen_cutoff)


def oracle_variance_model(
    data: ComparisonData,
    cov: CovariateMatrix,
    truth: ParamVector,
    proj: ProjectionOperator,
    rel_eigen_cutoff: float = DEFAULT_EIGEN_CUTOFF,
) -> VarianceModel:
    """Variance model at known true parameters (simulation use)."""
    return projected_hessian_pinv(hessian(data, cov, truth), proj, rel_eigen_cutoff)


def _project_contrast(c: np.ndarray, proj: ProjectionOperator) -> np.ndarray:
    c = np.asarray(c, dtype=float).ravel()
    cbar = proj.apply(c)
    norm_c = float(np.linalg.norm(c))
    if float(np.linalg.norm(cbar)) <= 1e-12 * max(norm_c, 1.0):
        raise DegenerateContrastError(
            "contrast lies in the unidentifiable space (P c = 0)"
        )
    return cbar


def _condition_ratio(c: np.ndarray, cbar: np.ndarray, n: int, d: int) -> float:
    c_alpha = c[:n]
    c_beta = c[n:]
    num = max(
        float(np.abs(c_alpha).sum()),
        float(np.sqrt(n / (d + 1)) * np.linalg.norm(c_beta)),
    )
    return num / float(np.linalg.norm(cbar))


def contrast_inference(
    c: np.ndarray,
    fit: FitResult,
    vm: VarianceModel,
    level: float = 0.95,
) -> ContrastResult:
    """z-test and confidence interval for a linear combination of parameters.

    The null is c . params = 0; the interval is
    estimate +- z_{(1-level)/2} * std_error with the plug-in standard
    error from ``vm``.
    """
    if not (0.0 < level < 1.0):
        raise InvalidArgumentError(f"level must be in (0, 1), got {level}")
    n, d = fit.params.n_items, fit.params.n_features
    c = np.asarray(c, dtype=float).ravel()
    if c.size != n + d:
        raise InvalidArgumentError(f"contrast length {c.size}, expected {n + d}")
    cbar = _project_contrast(c, fit.projection)
    variance = vm.variance_of(cbar)
    se = float(np.sqrt(variance))
    estimate = float(c @ fit.params.stacked)
    if se > 0:
        z = estimate / se
        p = float(two_sided_p_value(z))
    else:
        z = np.inf if estimate > 0 else (-np.inf if estimate < 0 else 0.0)
        p = 0.0 if estimate != 0 else 1.0
    zq = normal_quantile(1.0 - (1.0 - level) / 2.0)
    return ContrastResult(
        estimate=estimate,
        std_error=se,
        z_stat=float(z),
        p_value=p,
        ci_low=estimate - zq * se,
        ci_high=estimate + zq * se,
        level=level,
        condition_ratio=_condition_ratio(c, cbar, n, d),
    )


def _basis_contrast(k: int, dim: int) -> np.ndarray:
    c = np.zeros(dim)
    c[k] = 1.0
    return c


def beta_inference(fit: FitResult, vm: VarianceModel, level: float = 0.95) -> list[CoefficientEstimate]:
    """Per-covariate-effect tests: one row per beta coordinate."""
    n, d = fit.params.n_items, fit.params.n_features
    rows = []
    for j in range(d):
        r = contrast_inference(_basis_contrast(n + j, n + d), fit, vm, level)
        rows.append(
            CoefficientEstimate(j, r.estimate, r.std_error, r.z_stat, r.p_value,
                                r.ci_low, r.ci_high, level)
        )
    return rows


def alpha_inference(fit: FitResult, vm: VarianceModel, level: float = 0.95) -> list[CoefficientEstimate]:
    """Per-item intrinsic-score tests: one row per alpha coordinate."""
    n, d = fit.params.n_items, fit.params.n_features
    rows = []
    for k in range(n):
        r = contrast_inference(_basis_contrast(k, n + d), fit, vm, level)
        rows.append(
            CoefficientEstimate(k, r.estimate, r.std_error, r.z_stat, r.p_value,
                                r.ci_low, r.ci_high, level)
        )
    return rows


def quadratic_approx_minimizer(
    data: ComparisonData,
    cov: CovariateMatrix,
    truth: ParamVector,
    proj: ProjectionOperator,
) -> ParamVector:
    """Minimizer of the quadratic expansion of the loss around ``truth``,
    constrained to the identifiable subspace.

    Solves P grad + P H (out - truth) = 0 with P out = out, i.e.
    out = P truth - [P H P]^+ P grad.  Simulation-side tool: requires the
    true parameters.
    """
    if not is_connected(data):
        raise ConnectivityError("comparison graph is disconnected")
    g = gradient(data, cov, truth)
    h = hessian(data, cov, truth)
    vm = projected_hessian_pinv(h, proj)
    t = truth.stacked
    pt = proj.apply(t)
    rhs = -proj.apply(g + h @ (pt - t))
    delta = vm.pseudoinverse @ rhs
    out = proj.apply(pt + delta)
    residual = float(np.linalg.norm(proj.apply(g + h @ (out - t))))
    if residual > 1e-8 * max(1.0, float(np.linalg.norm(proj.apply(g)))):
        raise InvalidArgumentError(
            f"quadratic stationarity residual {residual:.3e} too large; "
            "graph may be effectively disconnected"
        )
    return ParamVector.from_stacked(out, data.n_items, identified=True)


def soft_threshold(x, tau):
    """sign(x) * max(|x| - tau, 0); zero exactly when |x| <= tau."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0):
        raise InvalidArgumentError("soft threshold must be nonnegative")
    x_arr = np.asarray(x, dtype=float)
    out = np.sign(x_arr) * np.maximum(np.abs(x_arr) - tau_arr, 0.0)
    return out if out.ndim else float(out)


def care_ranking_scores(
    fit: FitResult,
    vm: VarianceModel,
    quantile_level: float = 0.995,
) -> RankingScores:
    """Ranking scores with and without shrunk intrinsic effects.

    ``scores1`` uses the covariate part alone; ``scores2`` adds each
    intrinsic score soft-thresholded at tau_i = Phi^-1(quantile_level)
    times its plug-in standard error, so individually insignificant
    intrinsic effects drop out.  The high default quantile keeps the
    familywise false-positive rate low across many items.
    """
    if not (0.5 < quantile_level < 1.0):
        raise InvalidArgumentError(
            f"quantile_level must be in (0.5, 1), got {quantile_level}"
        )
    n = fit.params.n_items
    zq = normal_quantile(quantile_level)
    alpha_var = np.diag(vm.pseudoinverse)[:n] / vm.effective_l
    taus = zq * np.sqrt(np.maximum(alpha_var, 0.0))
    scores1 = fit.covariates.scaled @ fit.params.beta
    scores2 = soft_threshold(fit.params.alpha, taus) + scores1
    return RankingScores(
        scores1=scores1,
        scores2=scores2,
        taus=taus,
        ranks1=_dense_ranks(scores1),
        ranks2=_dense_ranks(scores2),
    )


def _dense_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, best (largest) score first, ties broken by item index."""
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def full_inference_report(
    fit: FitResult,
    vm: VarianceModel,
    level: float = 0.95,
    quantile_level: float = 0.995,
) -> InferenceReport:
    """All per-coefficient rows plus ranking scores in one bundle."""
    ranking = care_ranking_scores(fit, vm, quantile_level)
    return InferenceReport(
        alpha_rows=alpha_inference(fit, vm, level),
        beta_rows=beta_inference(fit, vm, level),
        care_scores_1=ranking.scores1,
        care_scores_2=ranking.scores2,
        thresholds_tau=ranking.taus,
        ranks_1=ranking.ranks1,
        ranks_2=ranking.ranks2,
        level=level,
        quantile_level=quantile_level,
    )


def standardized_stats(
    fit: FitResult,
    vm_true: VarianceModel,
    vm_plugin: VarianceModel,
    c: np.ndarray,
    truth: ParamVector,
) -> tuple[float, float]:
    """The two standardized errors of c . fit: denominator at the truth
    (first) and at the fitted parameters (second).  Both are approximately
    standard normal when the model holds."""
    n, d = fit.params.n_items, fit.params.n_features
    c = np.asarray(c, dtype=float).ravel()
    if c.size != n + d:
        raise InvalidArgumentError(f"contrast length {c.size}, expected {n + d}")
    cbar = _project_contrast(c, fit.projection)
    err = float(c @ fit.params.stacked) - float(c @ truth.stacked)
    se_true = float(np.sqrt(vm_true.variance_of(cbar)))
    se_plugin = float(np.sqrt(vm_plugin.variance_of(cbar)))
    if se_true <= 0 or se_plugin <= 0:
        raise DegenerateContrastError("contrast has zero plug-in variance")
    return err / se_true, err / se_plugin
