"""Covariate preprocessing and the constrained maximum-likelihood fit.

The estimator minimizes the comparison negative log-likelihood over the
identifiable subspace by projected gradient descent: take a gradient step,
project back onto the subspace, repeat.  An optional ridge penalty on the
intrinsic scores (alpha only) stabilizes sparse real-world datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConnectivityError,
    DegenerateColumnError,
    DimensionError,
    InvalidArgumentError,
)
from .model import (
    ComparisonData,
    CovariateMatrix,
    FitDiagnostics,
    ParamVector,
    ProjectionOperator,
    _design_quadratic,
    _weighted_laplacian,
    build_projection,
    connected_components,
    sigmoid,
    softplus,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "preprocess_covariates",
    "project_to_theta",
    "fit_mle",
    "fit_care_scores_pipeline",
]

# Objective increases beyond this slack trigger step halving; the same
# slack bounds how much the recorded trace may rise per step.
_DESCENT_SLACK = 1e-12
_MAX_HALVINGS = 80


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the projected gradient fit.

    ``step_size`` "auto" derives the step from the largest eigenvalue of
    the trial-weighted graph design, the measured stand-in for the
    theoretical curvature bound.  ``likelihood_scale`` divides the
    objective (None means the total trial count); it moves the step size
    but not the minimizer.  ``ridge_alpha`` penalizes 0.5 * ||alpha||^2
    only, leaving the covariate effects unpenalized.  ``seed`` is reserved
    for randomized tie-breaking; the descent itself is deterministic.
    """

    step_size: float | str = "auto"
    max_iters: int = 20000
    grad_tol: float = 1e-8
    step_tol: float = 1e-12
    ridge_alpha: float = 0.0
    likelihood_scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.step_size != "auto":
            if not (float(self.step_size) > 0):
                raise InvalidArgumentError("step_size must be positive or 'auto'")
            object.__setattr__(self, "step_size", float(self.step_size))
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be at least 1")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise InvalidArgumentError("tolerances must be positive")
        if self.ridge_alpha < 0:
            raise InvalidArgumentError("ridge_alpha must be nonnegative")
        if self.likelihood_scale is not None and not (self.likelihood_scale > 0):
            raise InvalidArgumentError("likelihood_scale must be positive")


@dataclass
class FitResult:
    """Outcome of a constrained fit.

    ``converged`` is True only when the projected gradient norm met
    ``grad_tol``; a stop on ``step_tol`` or ``max_iters`` is reported via
    ``stop_reason`` instead of an exception.  ``objective_trace`` holds
    the (scaled, ridge-inclusive) objective at the start and after every
    accepted step.
    """

    params: ParamVector
    diagnostics: FitDiagnostics
    converged: bool
    objective_trace: list[float]
    stop_reason: str
    data: ComparisonData = field(repr=False, default=None)
    covariates: CovariateMatrix = field(repr=False, default=None)
    projection: ProjectionOperator = field(repr=False, default=None)
    config: FitConfig = field(repr=False, default=None)
    likelihood_scale: float = 1.0
    initial_step: float = 0.0


def preprocess_covariates(raw: np.ndarray, standardize: bool = True) -> CovariateMatrix:
    """Standardize columns and rescale rows to the model's working scale.

    Columns are centered to mean 0 and scaled to standard deviation 1
    (population convention), then all rows are divided by a single
    constant K chosen so the largest row norm equals sqrt((d+1)/n).  The
    likelihood and predictions are unchanged by K; it only normalizes the
    geometry the solver and the theory operate on.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise InvalidArgumentError(f"covariates must be a 2-d array, got ndim={raw.ndim}")
    n, d = raw.shape
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 items, got {n}")
    if d + 1 >= n:
        raise DimensionError(
            f"{d} covariates with {n} items leaves no identifiable intrinsic "
            "scores; need d + 1 < n"
        )
    if not np.all(np.isfinite(raw)):
        raise InvalidArgumentError("covariates contain non-finite values")
    if standardize and d > 0:
        means = raw.mean(axis=0)
        sds = raw.std(axis=0)
        bad = np.where(sds <= 1e-12 * np.maximum(1.0, np.abs(means)))[0]
        if bad.size:
            raise DegenerateColumnError(
                f"column {bad[0]} is constant and cannot be standardized"
            )
        x = (raw - means) / sds
    else:
        means = np.zeros(d)
        sds = np.ones(d)
        x = raw.copy()
    if d > 0:
        max_norm = float(np.sqrt((x * x).sum(axis=1)).max())
        target = np.sqrt((d + 1) / n)
        k = max_norm / target if max_norm > 0 else 1.0
    else:
        k = 1.0
    scaled = x / k
    augmented = np.hstack([np.ones((n, 1)), scaled])
    return CovariateMatrix(raw, float(k), scaled, augmented, means, sds)


def project_to_theta(params: ParamVector, proj: ProjectionOperator) -> ParamVector:
    """Project parameters onto the identifiable subspace; idempotent."""
    if params.n_items != proj.n_items or params.n_features != proj.n_features:
        raise InvalidArgumentError(
            f"parameter shape ({params.n_items}, {params.n_features}) does not "
            f"match projector ({proj.n_items}, {proj.n_features})"
        )
    return ParamVector.from_stacked(
        proj.apply(params.stacked), params.n_items, identified=True
    )


def _auto_step(data: ComparisonData, cov: CovariateMatrix, ridge: float, scale: float) -> float:
    # Curvature of the scaled objective is at most lambda_max((trial-
    # weighted design)) / (4 * scale) plus the ridge, mirroring the
    # eta = 2 / (2 lambda + c1 n p) rule with the measured eigenvalue in
    # place of the unknown constant.
    lap = _weighted_laplacian(
        data.n_items, data.item_i, data.item_j, data.trials.astype(float)
    )
    sigma = _design_quadratic(cov, lap)
    lam_max = float(np.linalg.eigvalsh(0.5 * (sigma + sigma.T))[-1])
    return 2.0 / (2.0 * ridge + lam_max / (2.0 * scale))


def fit_mle(data: ComparisonData, cov: CovariateMatrix, config: FitConfig | None = None) -> FitResult:
    """Constrained MLE of (alpha, beta) by projected gradient descent.

    Starts from zero (projected), steps along the negative gradient of the
    scaled objective, and projects every iterate back onto the
    identifiable subspace.  Halves the step while a move would increase
    the objective, so the objective trace is nonincreasing.  Requires a
    connected comparison graph.

    Raises
    ------
    ConnectivityError
        If the comparison graph is disconnected (including isolated
        items); the error lists the components.
    """
    config = config or FitConfig()
    if data.n_items != cov.n_items:
        raise InvalidArgumentError(
            f"item counts disagree: data={data.n_items}, covariates={cov.n_items}"
        )
    if data.n_edges == 0:
        raise InvalidArgumentError("comparison data has no edges")
    comps = connected_components(data)
    if len(comps) > 1:
        preview = ", ".join(str(c[:8]) for c in comps[:6])
        raise ConnectivityError(
            f"comparison graph has {len(comps)} components: {preview}",
            components=comps,
        )

    proj = build_projection(cov)
    n, d = data.n_items, cov.n_features
    scale = float(config.likelihood_scale) if config.likelihood_scale else float(data.total_trials)
    lam = float(config.ridge_alpha)

    ii, jj = data.item_i, data.item_j
    trials = data.trials.astype(float)
    y = data.win_fraction
    x = cov.scaled

    def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        alpha = theta[:n]
        s = alpha + x @ theta[n:]
        delta = s[ii] - s[jj]
        val = float(np.sum(trials * (-(1.0 - y) * delta + softplus(delta)))) / scale
        r = trials * (sigmoid(delta) - (1.0 - y))
        g_alpha = np.bincount(ii, weights=r, minlength=n) - np.bincount(jj, weights=r, minlength=n)
        g = np.concatenate([g_alpha, x.T @ g_alpha]) / scale
        if lam:
            val += 0.5 * lam * float(alpha @ alpha)
            g[:n] += lam * alpha
        return val, g

    if config.step_size == "auto":
        step = _auto_step(data, cov, lam, scale)
    else:
        step = float(config.step_size)
    initial_step = step

    theta = proj.apply(np.zeros(n + d))
    val, g = value_and_grad(theta)
    pg_norm = float(np.linalg.norm(proj.apply(g)))
    trace = [val]
    iterations = 0
    while True:
        if pg_norm <= config.grad_tol:
            stop_reason = "grad_tol"
            break
        if iterations >= config.max_iters:
            stop_reason = "max_iters"
            break
        stalled = True
        for _ in range(_MAX_HALVINGS):
            cand = proj.apply(theta - step * g)
            cand_val, cand_g = value_and_grad(cand)
            if cand_val <= val + _DESCENT_SLACK * max(1.0, abs(val)):
                stalled = False
                break
            step *= 0.5
        if stalled:
            stop_reason = "stalled"
            break
        step_norm = float(np.linalg.norm(cand - theta))
        theta, val, g = cand, cand_val, cand_g
        pg_norm = float(np.linalg.norm(proj.apply(g)))
        trace.append(val)
        iterations += 1
        if step_norm <= config.step_tol:
            stop_reason = "step_tol"
            break

    params = ParamVector.from_stacked(proj.apply(theta), n, identified=True)
    scores = params.scores(cov)
    q = proj._span_q
    diagnostics = FitDiagnostics(
        kappa1=float(np.exp(scores.max() - scores.min())),
        incoherence=float(np.sqrt((q * q).sum(axis=1)).max()),
        connectivity=True,
        iterations=iterations,
        final_grad_norm=pg_norm,
    )
    return FitResult(
        params=params,
        diagnostics=diagnostics,
        converged=pg_norm <= config.grad_tol,
        objective_trace=trace,
        stop_reason=stop_reason,
        data=data,
        covariates=cov,
        projection=proj,
        config=config,
        likelihood_scale=scale,
        initial_step=initial_step,
    )


def fit_care_scores_pipeline(
    comparisons: ComparisonData | tuple[int, list],
    raw_covariates: np.ndarray | None,
    config: FitConfig | None = None,
    standardize: bool = True,
) -> FitResult:
    """Preprocess covariates, build the projector, and fit in one call.

    ``comparisons`` may be a ready ComparisonData or an ``(n_items,
    edges)`` pair; ``raw_covariates`` of None means the covariate-free
    model (plain pairwise comparison scores).
    """
    if not isinstance(comparisons, ComparisonData):
        n_items, edges = comparisons
        comparisons = ComparisonData.from_edges(n_items, edges)
    if raw_covariates is None:
        raw_covariates = np.zeros((comparisons.n_items, 0))
    cov = preprocess_covariates(raw_covariates, standardize=standardize)
    return fit_mle(comparisons, cov, config)
