"""Core probability model for pairwise comparisons with item covariates.

Item ``i`` carries a latent score ``alpha_i + x_i @ beta``.  For a compared
pair the probability that the higher-indexed item ``j`` beats ``i`` is the
logistic function of the score difference.  This module holds the data
containers, the negative log-likelihood with its gradient and Hessian, the
projector onto the identifiable parameter subspace, and structural
diagnostics of the comparison graph.

Conventions used throughout:

* edges are stored with ``i < j`` and ``wins_j`` counts the trials in which
  ``j`` was preferred over ``i``;
* per-edge trial counts are first class, so datasets with unequal numbers
  of comparisons per pair need no special casing;
* the joint parameter vector stacks ``alpha`` (length n) before ``beta``
  (length d).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDesignError, InvalidArgumentError

__all__ = [
    "ComparisonData",
    "CovariateMatrix",
    "ParamVector",
    "ProjectionOperator",
    "GraphDesign",
    "FitDiagnostics",
    "win_probability",
    "neg_log_likelihood",
    "gradient",
    "hessian",
    "build_projection",
    "graph_design",
    "is_connected",
    "connected_components",
]

# Relative singular-value cutoff below which the augmented design is
# treated as rank deficient.
RANK_RTOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def sigmoid(t: np.ndarray | float) -> np.ndarray | float:
    """Logistic function, stable for arguments of any magnitude."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def softplus(t: np.ndarray | float) -> np.ndarray | float:
    """log(1 + e^t) computed as max(t, 0) + log1p(e^-|t|) to avoid overflow."""
    t = np.asarray(t, dtype=float)
    out = np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ComparisonData:
    """Edge list of compared pairs with per-pair trial and win counts.

    ``wins_j[e]`` counts the trials on edge ``(item_i[e], item_j[e])`` in
    which the higher-indexed item ``item_j[e]`` was preferred.  The win
    fraction ``wins_j / trials`` is the sufficient statistic: the
    likelihood depends on the raw outcomes only through it.
    """

    n_items: int
    item_i: np.ndarray
    item_j: np.ndarray
    trials: np.ndarray
    wins_j: np.ndarray

    def __post_init__(self):
        n = int(self.n_items)
        if n < 1:
            raise InvalidArgumentError(f"n_items must be positive, got {n}")
        ii = np.asarray(self.item_i, dtype=np.int64).ravel()
        jj = np.asarray(self.item_j, dtype=np.int64).ravel()
        tt = np.asarray(self.trials, dtype=np.int64).ravel()
        ww = np.asarray(self.wins_j, dtype=np.int64).ravel()
        if not (ii.shape == jj.shape == tt.shape == ww.shape):
            raise InvalidArgumentError("edge arrays must share one length")
        if ii.size:
            if ii.min(initial=0) < 0 or jj.max(initial=-1) >= n:
                raise InvalidArgumentError("edge endpoint out of range")
            if np.any(ii >= jj):
                raise InvalidArgumentError(
                    "edges must satisfy i < j (no self-edges, canonical order)"
                )
            keys = ii * n + jj
            if np.unique(keys).size != keys.size:
                raise InvalidArgumentError("duplicate (i, j) pairs in edge list")
            if np.any(tt < 1):
                raise InvalidArgumentError("every edge needs at least one trial")
            if np.any(ww < 0) or np.any(ww > tt):
                raise InvalidArgumentError("wins_j must lie in [0, trials]")
        object.__setattr__(self, "n_items", n)
        object.__setattr__(self, "item_i", _readonly(ii))
        object.__setattr__(self, "item_j", _readonly(jj))
        object.__setattr__(self, "trials", _readonly(tt))
        object.__setattr__(self, "wins_j", _readonly(ww))

    @classmethod
    def from_edges(cls, n_items: int, edges) -> "ComparisonData":
        """Build from an iterable of (i, j, trials, wins_j) tuples."""
        rows = list(edges)
        if rows:
            ii, jj, tt, ww = (np.asarray(col) for col in zip(*rows))
        else:
            ii = jj = tt = ww = np.zeros(0, dtype=np.int64)
        return cls(n_items, ii, jj, tt, ww)

    @property
    def n_edges(self) -> int:
        return self.item_i.size

    @property
    def edges(self) -> list[tuple[int, int, int, int]]:
        return [
            (int(i), int(j), int(t), int(w))
            for i, j, t, w in zip(self.item_i, self.item_j, self.trials, self.wins_j)
        ]

    @property
    def win_fraction(self) -> np.ndarray:
        """Fraction of trials in which the higher-indexed item won, per edge."""
        return self.wins_j / self.trials

    @property
    def total_trials(self) -> int:
        return int(self.trials.sum())


@dataclass(frozen=True)
class CovariateMatrix:
    """Item features together with the rescaling that the model is fit on.

    ``scaled`` is the standardized feature matrix divided by ``scale_k`` so
    that the largest row norm equals sqrt((d+1)/n); ``augmented`` prepends
    an all-ones intercept column to ``scaled``.
    """

    raw: np.ndarray
    scale_k: float
    scaled: np.ndarray
    augmented: np.ndarray
    column_means: np.ndarray
    column_sds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "raw", _readonly(np.asarray(self.raw, dtype=float)))
        object.__setattr__(self, "scaled", _readonly(np.asarray(self.scaled, dtype=float)))
        object.__setattr__(self, "augmented", _readonly(np.asarray(self.augmented, dtype=float)))
        object.__setattr__(self, "column_means", _readonly(np.asarray(self.column_means, dtype=float)))
        object.__setattr__(self, "column_sds", _readonly(np.asarray(self.column_sds, dtype=float)))

    @property
    def n_items(self) -> int:
        return self.augmented.shape[0]

    @property
    def n_features(self) -> int:
        return self.scaled.shape[1]


@dataclass(frozen=True)
class ParamVector:
    """Joint parameters (alpha, beta); ``identified`` marks membership in
    the subspace where the augmented design annihilates alpha."""

    alpha: np.ndarray
    beta: np.ndarray
    identified: bool = False

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).ravel()
        b = np.asarray(self.beta, dtype=float).ravel()
        object.__setattr__(self, "alpha", _readonly(a))
        object.__setattr__(self, "beta", _readonly(b))

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, n_items: int, identified: bool = False) -> "ParamVector":
        stacked = np.asarray(stacked, dtype=float).ravel()
        return cls(stacked[:n_items], stacked[n_items:], identified)

    @property
    def n_items(self) -> int:
        return self.alpha.size

    @property
    def n_features(self) -> int:
        return self.beta.size

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    def scores(self, cov: CovariateMatrix) -> np.ndarray:
        """Total item scores alpha_i + x_i @ beta on the scaled covariates."""
        return self.alpha + cov.scaled @ self.beta


@dataclass(frozen=True)
class ProjectionOperator:
    """Orthogonal projector onto the identifiable subspace.

    ``matrix_p`` is I - Z (Z^T Z)^-1 Z^T where ``z_pad`` stacks the
    augmented design over a zero block, so the projector centers the alpha
    block against the covariate span and leaves beta untouched.
    """

    matrix_p: np.ndarray
    z_pad: np.ndarray
    # Orthonormal basis of the column span of the augmented design; kept
    # for O(n d) application of the projector without the full matrix.
    _span_q: np.ndarray = field(repr=False)
    # Orthonormal basis of the identifiable subspace, used by callers that
    # need a reduced coordinate system.
    _theta_basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix_p", _readonly(self.matrix_p))
        object.__setattr__(self, "z_pad", _readonly(self.z_pad))
        object.__setattr__(self, "_span_q", _readonly(self._span_q))
        object.__setattr__(self, "_theta_basis", _readonly(self._theta_basis))

    @property
    def n_items(self) -> int:
        return self._span_q.shape[0]

    @property
    def n_features(self) -> int:
        return self.z_pad.shape[0] - self.n_items

    @property
    def n_constraints(self) -> int:
        return self.z_pad.shape[1]

    def apply(self, stacked: np.ndarray) -> np.ndarray:
        """Project a stacked (alpha, beta) vector onto the subspace."""
        v = np.asarray(stacked, dtype=float)
        n = self.n_items
        if v.shape[-1] != n + self.n_features:
            raise InvalidArgumentError(
                f"expected vector of length {n + self.n_features}, got {v.shape[-1]}"
            )
        out = v.astype(float).copy()
        a = out[..., :n]
        a -= (a @ self._span_q) @ self._span_q.T
        return out

    def theta_basis(self) -> np.ndarray:
        """Orthonormal columns spanning the identifiable subspace."""
        return self._theta_basis


@dataclass(frozen=True)
class GraphDesign:
    """Sum of outer products of compared-pair feature differences, with the
    eigenvalue range that controls the optimization landscape."""

    sigma_g: np.ndarray
    lambda_min_perp: float
    lambda_max: float

    def __post_init__(self):
        object.__setattr__(self, "sigma_g", _readonly(self.sigma_g))


@dataclass(frozen=True)
class FitDiagnostics:
    """Structural and convergence diagnostics attached to a fit."""

    kappa1: float
    incoherence: float
    connectivity: bool
    iterations: int
    final_grad_norm: float


def win_probability(score_i: float, score_j: float) -> float:
    """Probability that item j is preferred over item i.

    Computed as 1 / (1 + e^(score_i - score_j)); stable for score
    differences up to the overflow limit of double exponentials.
    """
    si = float(score_i)
    sj = float(score_j)
    if not (np.isfinite(si) and np.isfinite(sj)):
        raise InvalidArgumentError("scores must be finite")
    return float(sigmoid(sj - si))


def _check_dims(data: ComparisonData, cov: CovariateMatrix, params: ParamVector) -> None:
    if data.n_items != cov.n_items or data.n_items != params.n_items:
        raise InvalidArgumentError(
            f"item counts disagree: data={data.n_items}, "
            f"covariates={cov.n_items}, params={params.n_items}"
        )
    if cov.n_features != params.n_features:
        raise InvalidArgumentError(
            f"feature counts disagree: covariates={cov.n_features}, "
            f"params={params.n_features}"
        )


def neg_log_likelihood(data: ComparisonData, cov: CovariateMatrix, params: ParamVector) -> float:
    """Negative log-likelihood of the comparison outcomes.

    Each edge contributes ``trials * (-(1 - y) * delta + log(1 + e^delta))``
    where ``delta`` is the score of the lower-indexed item minus the score
    of the higher-indexed one and ``y`` is the win fraction of the
    higher-indexed item.  The value is invariant under any parameter shift
    orthogonal to all pairwise feature differences.
    """
    _check_dims(data, cov, params)
    if data.n_edges == 0:
        raise InvalidArgumentError("comparison data has no edges")
    s = params.scores(cov)
    delta = s[data.item_i] - s[data.item_j]
    y = data.win_fraction
    terms = data.trials * (-(1.0 - y) * delta + softplus(delta))
    return float(terms.sum())


def _edge_residual(data: ComparisonData, cov: CovariateMatrix, params: ParamVector) -> np.ndarray:
    s = params.scores(cov)
    delta = s[data.item_i] - s[data.item_j]
    return data.trials * (sigmoid(delta) - (1.0 - data.win_fraction))


def gradient(data: ComparisonData, cov: CovariateMatrix, params: ParamVector) -> np.ndarray:
    """Gradient of the negative log-likelihood, stacked (alpha, beta).

    Uses the identity grad_beta = X^T grad_alpha: every edge contributes
    its residual to the two endpoints with opposite signs, and the beta
    block aggregates those same residuals through the feature rows.
    """
    _check_dims(data, cov, params)
    r = _edge_residual(data, cov, params)
    n = data.n_items
    g_alpha = np.bincount(data.item_i, weights=r, minlength=n) - np.bincount(
        data.item_j, weights=r, minlength=n
    )
    return np.concatenate([g_alpha, cov.scaled.T @ g_alpha])


def _weighted_laplacian(n: int, item_i: np.ndarray, item_j: np.ndarray, w: np.ndarray) -> np.ndarray:
    lap = np.zeros((n, n))
    np.add.at(lap, (item_i, item_j), -w)
    np.add.at(lap, (item_j, item_i), -w)
    deg = np.bincount(item_i, weights=w, minlength=n) + np.bincount(
        item_j, weights=w, minlength=n
    )
    lap[np.diag_indices(n)] += deg
    return lap


def _design_quadratic(cov: CovariateMatrix, lap: np.ndarray) -> np.ndarray:
    """Assemble sum_e w_e (xt_i - xt_j)(xt_i - xt_j)^T from the weighted
    Laplacian of the alpha block, using the block identities
    H_ab = H_aa X and H_bb = X^T H_aa X."""
    x = cov.scaled
    n, d = x.shape
    top_right = lap @ x
    out = np.empty((n + d, n + d))
    out[:n, :n] = lap
    out[:n, n:] = top_right
    out[n:, :n] = top_right.T
    out[n:, n:] = x.T @ top_right
    return out


def hessian(data: ComparisonData, cov: CovariateMatrix, params: ParamVector) -> np.ndarray:
    """Hessian of the negative log-likelihood: a trial-weighted sum of
    outer products of feature differences with logistic-variance weights
    in (0, 1/4]."""
    _check_dims(data, cov, params)
    s = params.scores(cov)
    delta = s[data.item_i] - s[data.item_j]
    sig = sigmoid(delta)
    w = data.trials * sig * (1.0 - sig)
    lap = _weighted_laplacian(data.n_items, data.item_i, data.item_j, w)
    return _design_quadratic(cov, lap)


def _span_and_null(augmented: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of the column span of the augmented design and of
    its orthogonal complement in R^n, with a rank check."""
    _, k = augmented.shape
    u, svals, _ = np.linalg.svd(augmented, full_matrices=True)
    rank = int(np.sum(svals > RANK_RTOL * svals[0]))
    if rank < k:
        raise DegenerateDesignError(
            f"augmented design has rank {rank} < {k}; covariate columns "
            "are collinear with each other or with the intercept",
            rank=rank,
        )
    return np.ascontiguousarray(u[:, :k]), np.ascontiguousarray(u[:, k:])


def build_projection(cov: CovariateMatrix) -> ProjectionOperator:
    """Projector onto the identifiable subspace {(alpha, beta): Xbar^T alpha = 0}."""
    n, k = cov.augmented.shape
    d = k - 1
    q_span, q_null = _span_and_null(cov.augmented)
    p = np.zeros((n + d, n + d))
    top = np.eye(n) - q_span @ q_span.T
    p[:n, :n] = 0.5 * (top + top.T)
    p[n:, n:] = np.eye(d)
    z = np.zeros((n + d, k))
    z[:n, :] = cov.augmented
    theta = np.zeros((n + d, n - k + d))
    theta[:n, : n - k] = q_null
    theta[n:, n - k:] = np.eye(d)
    return ProjectionOperator(p, z, q_span, theta)


def graph_design(data: ComparisonData, cov: CovariateMatrix, trial_weighted: bool = False) -> GraphDesign:
    """Design matrix of the comparison graph with its extreme eigenvalues.

    ``lambda_min_perp`` is the smallest eigenvalue restricted to the
    identifiable subspace; it is positive exactly when the graph is
    connected.  With ``trial_weighted`` each edge counts with its number
    of trials instead of once.
    """
    if data.n_items != cov.n_items:
        raise InvalidArgumentError(
            f"item counts disagree: data={data.n_items}, covariates={cov.n_items}"
        )
    if data.n_edges == 0:
        raise InvalidArgumentError("comparison data has no edges")
    w = data.trials.astype(float) if trial_weighted else np.ones(data.n_edges)
    lap = _weighted_laplacian(data.n_items, data.item_i, data.item_j, w)
    sigma = _design_quadratic(cov, lap)
    sigma = 0.5 * (sigma + sigma.T)
    _, q_null = _span_and_null(cov.augmented)
    n, k = cov.augmented.shape
    d = k - 1
    theta = np.zeros((n + d, n - k + d))
    theta[:n, : n - k] = q_null
    theta[n:, n - k:] = np.eye(d)
    reduced = theta.T @ sigma @ theta
    eigs_reduced = np.linalg.eigvalsh(0.5 * (reduced + reduced.T))
    lambda_max = float(np.linalg.eigvalsh(sigma)[-1])
    return GraphDesign(sigma, float(eigs_reduced[0]), lambda_max)


def connected_components(data: ComparisonData) -> list[list[int]]:
    """Connected components of the undirected comparison graph, each
    sorted, ordered by smallest member."""
    n = data.n_items
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in zip(data.item_i, data.item_j):
        adj[i].append(int(j))
        adj[j].append(int(i))
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        queue = deque([start])
        seen[start] = True
        comp = []
        while queue:
            v = queue.popleft()
            comp.append(v)
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    queue.append(u)
        comps.append(sorted(comp))
    return comps


def is_connected(data: ComparisonData) -> bool:
    """True when every item is reachable from every other through compared pairs."""
    if data.n_items <= 1:
        return True
    return len(connected_components(data)) == 1
