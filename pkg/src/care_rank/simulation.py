"""Synthetic data generation and the Monte Carlo experiment harness.

Data follows the generating process used throughout the synthetic
studies: covariates uniform on [-0.5, 0.5] then standardized and
rescaled, intrinsic scores uniform on [0.5, log(5) - 0.5], covariate
effects uniform on the sphere of radius 0.5 * sqrt(n/(d+1)), and the
joint truth projected onto the identifiable subspace (keeping the
implied score spread, hence the condition number, near its designed
bound of 5).  Comparison graphs are Erdos-Renyi: each pair is observed
independently with probability p, and each observed pair contributes L
Bernoulli trials.

Randomness comes from counter-based Philox streams keyed by
(seed, stream_id), so every replication owns an independent,
platform-stable stream and results do not depend on how work is split
across worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import log, sqrt

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError
from .estimation import (
    FitConfig,
    fit_mle,
    preprocess_covariates,
    project_to_theta,
)
from .inference import (
    plugin_variance_model,
    projected_hessian_pinv,
    standardized_stats,
)
from .model import (
    ComparisonData,
    CovariateMatrix,
    ParamVector,
    build_projection,
    hessian,
    is_connected,
    sigmoid,
)
from .normal import normal_cdf, normal_quantile

__all__ = [
    "SyntheticSpec",
    "ExperimentPlan",
    "SettingResult",
    "ExperimentResult",
    "rng_stream",
    "draw_covariates",
    "draw_alpha",
    "draw_beta",
    "generate_truth",
    "sample_comparisons",
    "run_rate_experiment",
    "run_distribution_experiment",
    "rate_experiment_pairs",
    "distribution_sampling_probability",
    "effective_sample_size",
    "ks_distance_to_normal",
]

KNOWN_STATISTICS = frozenset(
    {"alpha_linf", "beta_rel_l2", "qq_alpha1", "hist_A", "hist_B", "coverage"}
)
RATE_STATISTICS = frozenset({"alpha_linf", "beta_rel_l2"})
DISTRIBUTION_STATISTICS = frozenset({"qq_alpha1", "hist_A", "hist_B", "coverage"})

HIST_RANGE = (-4.0, 4.0)
HIST_BINS = 30

# Fixed stream ids for the one-off draws; replication streams are
# composed well above this range.
_STREAM_COVARIATES = 1
_STREAM_ALPHA = 2
_STREAM_BETA = 3
_STREAM_SAMPLE = 4

_MAX_RESAMPLE_ATTEMPTS = 200

ENV_WORKERS = "CARE_RANK_WORKERS"


def rng_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Independent reproducible generator for (seed, stream_id).

    Streams are Philox4x64 counter-based generators keyed by the 128-bit
    pair (seed, stream_id); distinct ids give statistically independent
    streams and the output is identical across platforms and thread
    counts.
    """
    seed = int(seed)
    stream_id = int(stream_id)
    if not (0 <= seed < 2**64 and 0 <= stream_id < 2**64):
        raise InvalidArgumentError("seed and stream_id must fit in 64 bits")
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _replication_stream(kind_code: int, pair_index: int, replication: int, attempt: int) -> int:
    if attempt >= 1 << 12:
        raise ConfigurationError("resample attempts exhausted the stream space")
    return (kind_code << 56) | (pair_index << 40) | (replication << 12) | attempt


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic generating process."""

    n: int = 200
    d: int = 5
    seed: int = 0
    alpha_range: tuple[float, float] = (0.5, log(5.0) - 0.5)
    beta_radius: float | None = None  # None -> 0.5 * sqrt(n / (d + 1))
    covariate_range: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if self.n < 2 or self.d < 0:
            raise InvalidArgumentError(f"need n >= 2 and d >= 0, got n={self.n}, d={self.d}")
        if not self.alpha_range[0] <= self.alpha_range[1]:
            raise InvalidArgumentError("alpha_range must be ordered")
        if not self.covariate_range[0] < self.covariate_range[1]:
            raise InvalidArgumentError("covariate_range must be ordered")
        if self.beta_radius is not None and self.beta_radius < 0:
            raise InvalidArgumentError("beta_radius must be nonnegative")

    @property
    def resolved_beta_radius(self) -> float:
        if self.beta_radius is not None:
            return float(self.beta_radius)
        return 0.5 * sqrt(self.n / (self.d + 1))


def effective_sample_size(n: int, d: int) -> float:
    """n / ((d+1) log n), the graph-sparsity scale of the normality studies."""
    return n / ((d + 1) * log(n))


def distribution_sampling_probability(n: int, d: int, multiplier: float = 2.0) -> float:
    """multiplier / effective_sample_size, the p used in the normality studies."""
    return multiplier / effective_sample_size(n, d)


def rate_experiment_pairs() -> list[tuple[float, int]]:
    """The six (p, L) pairs of the rate-of-convergence study."""
    return [(1.0, 50), (0.5, 25), (0.222, 25), (0.625, 5), (0.4, 5), (0.278, 5)]


def draw_covariates(spec: SyntheticSpec) -> np.ndarray:
    """Raw feature matrix, entrywise uniform on the spec's range."""
    lo, hi = spec.covariate_range
    return rng_stream(spec.seed, _STREAM_COVARIATES).uniform(lo, hi, size=(spec.n, spec.d))


def draw_alpha(spec: SyntheticSpec) -> np.ndarray:
    """Pre-projection intrinsic scores, i.i.d. uniform on the spec's range."""
    a_lo, a_hi = spec.alpha_range
    return rng_stream(spec.seed, _STREAM_ALPHA).uniform(a_lo, a_hi, size=spec.n)


def draw_beta(spec: SyntheticSpec) -> np.ndarray:
    """Covariate effect drawn uniformly from the sphere of the spec radius."""
    if spec.d == 0:
        return np.zeros(0)
    g = rng_stream(spec.seed, _STREAM_BETA).normal(size=spec.d)
    return g * (spec.resolved_beta_radius / np.linalg.norm(g))


def generate_truth(spec: SyntheticSpec) -> tuple[CovariateMatrix, ParamVector]:
    """Draw covariates and true parameters, projected onto the
    identifiable subspace.  The projection only recenters alpha; the
    covariate effect keeps its exact designed norm."""
    cov = preprocess_covariates(draw_covariates(spec), standardize=True)
    truth = project_to_theta(
        ParamVector(draw_alpha(spec), draw_beta(spec)), build_projection(cov)
    )
    return cov, truth


def sample_comparisons(
    cov: CovariateMatrix,
    truth: ParamVector,
    p: float,
    L: int,
    seed: int | np.random.Generator,
) -> ComparisonData:
    """Erdos-Renyi comparison graph with binomial outcomes.

    Every unordered pair enters independently with probability p; an
    included pair (i, j) records Binomial(L, P(j beats i)) wins for the
    higher-indexed item.  A disconnected draw is returned as-is; the
    fitting stage is the one that rejects it.
    """
    if not (0.0 < p <= 1.0):
        raise InvalidArgumentError(f"p must be in (0, 1], got {p}")
    if L < 1:
        raise InvalidArgumentError(f"L must be at least 1, got {L}")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, _STREAM_SAMPLE)
    n = cov.n_items
    scores = truth.scores(cov)
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.size) < p
    ii, jj = iu[mask], ju[mask]
    win_probs = sigmoid(scores[jj] - scores[ii])
    wins = rng.binomial(L, win_probs) if ii.size else np.zeros(0, dtype=np.int64)
    return ComparisonData(n, ii, jj, np.full(ii.size, L, dtype=np.int64), wins)


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run: the (p, L) grid, replication count, and statistics."""

    pl_pairs: tuple
    replications: int = 200
    statistics: frozenset = frozenset({"alpha_linf", "beta_rel_l2"})
    contrast: np.ndarray | None = None
    level: float = 0.95
    workers: int | None = None
    fit_config: FitConfig | None = None

    def __post_init__(self):
        pairs = tuple((float(p), int(L)) for p, L in self.pl_pairs)
        if not pairs:
            raise InvalidArgumentError("pl_pairs must be nonempty")
        for p, L in pairs:
            if not (0.0 < p <= 1.0):
                raise InvalidArgumentError(f"p must be in (0, 1], got {p}")
            if L < 1:
                raise InvalidArgumentError(f"L must be at least 1, got {L}")
        object.__setattr__(self, "pl_pairs", pairs)
        if self.replications < 1:
            raise InvalidArgumentError("replications must be at least 1")
        stats = frozenset(self.statistics)
        unknown = stats - KNOWN_STATISTICS
        if unknown:
            raise InvalidArgumentError(f"unknown statistics: {sorted(unknown)}")
        object.__setattr__(self, "statistics", stats)
        if not (0.0 < self.level < 1.0):
            raise InvalidArgumentError("level must be in (0, 1)")
        if self.workers is not None and self.workers < 1:
            raise InvalidArgumentError("workers must be at least 1")


@dataclass
class SettingResult:
    p: float
    L: int
    records: list[dict]
    aggregates: dict
    extras: dict
    resamples: int


@dataclass
class ExperimentResult:
    kind: str
    settings: list[SettingResult]
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "provenance": self.provenance,
            "settings": [
                {
                    "p": s.p,
                    "L": s.L,
                    "resamples": s.resamples,
                    "aggregates": s.aggregates,
                    "extras": s.extras,
                    "records": s.records,
                }
                for s in self.settings
            ],
        }

    def tidy_rows(self):
        """One (p, L, replication, statistic, value) row per recorded number."""
        for s in self.settings:
            for rec in s.records:
                rep = rec["replication"]
                for key, value in rec.items():
                    if key == "replication":
                        continue
                    yield (s.p, s.L, rep, key, value)


def _resolve_workers(plan: ExperimentPlan) -> int:
    if plan.workers is not None:
        return plan.workers
    env = os.environ.get(ENV_WORKERS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"{ENV_WORKERS} must be an integer, got {env!r}")
    return 1


def _sample_connected(
    spec: SyntheticSpec,
    cov: CovariateMatrix,
    truth: ParamVector,
    p: float,
    L: int,
    kind_code: int,
    pair_index: int,
    replication: int,
) -> tuple[ComparisonData, int, int]:
    """Sample until connected, counting discarded draws and returning the
    stream id that produced the kept draw.  Each attempt uses a fresh
    sub-stream so replication counts stay exact."""
    attempt = 0
    while True:
        stream = _replication_stream(kind_code, pair_index, replication, attempt)
        data = sample_comparisons(cov, truth, p, L, rng_stream(spec.seed, stream))
        if is_connected(data):
            return data, attempt, stream
        attempt += 1
        if attempt >= _MAX_RESAMPLE_ATTEMPTS:
            raise ConfigurationError(
                f"replication {replication} at (p={p}, L={L}) stayed "
                f"disconnected after {attempt} draws; increase p"
            )


def _default_contrast(n: int, d: int) -> np.ndarray:
    c = np.zeros(n + d)
    c[0] = 1.0
    if d > 0:
        c[n] = 1.0
    return c


def _run_setting(
    plan: ExperimentPlan,
    p: float,
    L: int,
    replication_fn,
    workers: int,
) -> SettingResult:
    reps = range(plan.replications)
    if workers <= 1:
        records = [replication_fn(rep) for rep in reps]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(replication_fn, reps))
    records.sort(key=lambda r: r["replication"])
    resamples = int(sum(r["resamples"] for r in records))
    draws = plan.replications + resamples
    if resamples / draws > 0.5:
        raise ConfigurationError(
            f"more than half of the draws at (p={p}, L={L}) were "
            f"disconnected ({resamples} of {draws}); increase p"
        )
    numeric_keys = sorted(
        k for k in records[0]
        if k not in ("replication", "stream") and np.isscalar(records[0][k])
    )
    aggregates = {}
    for key in numeric_keys:
        vals = np.array([float(r[key]) for r in records])
        aggregates[key] = {
            "mean": float(vals.mean()),
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        }
    return SettingResult(p, L, records, aggregates, {}, resamples)


def _provenance(spec: SyntheticSpec, plan: ExperimentPlan, kind: str) -> dict:
    # Worker count deliberately not recorded: results are identical for
    # any split of replications across threads.
    from . import __version__

    return {
        "seed": spec.seed,
        "n": spec.n,
        "d": spec.d,
        "replications": plan.replications,
        "pl_pairs": [[p, L] for p, L in plan.pl_pairs],
        "statistics": sorted(plan.statistics),
        "kind": kind,
        "rng": "philox4x64 key=(seed, stream_id)",
        "version": __version__,
    }


def run_rate_experiment(spec: SyntheticSpec, plan: ExperimentPlan) -> ExperimentResult:
    """Replicated sample-fit-record loop measuring estimation error.

    Per replication: draw a comparison graph (resampling disconnected
    draws with fresh sub-streams), fit, and record the max intrinsic-score
    error and/or the relative covariate-effect error.
    """
    if not (plan.statistics & RATE_STATISTICS):
        raise InvalidArgumentError(
            f"rate experiment needs one of {sorted(RATE_STATISTICS)}"
        )
    if "beta_rel_l2" in plan.statistics and spec.d == 0:
        raise InvalidArgumentError("beta_rel_l2 is undefined without covariates")
    cov, truth = generate_truth(spec)
    workers = _resolve_workers(plan)
    fit_config = plan.fit_config or FitConfig()
    beta_norm = float(np.linalg.norm(truth.beta)) if spec.d else 1.0

    settings = []
    for pair_index, (p, L) in enumerate(plan.pl_pairs):

        def replication_fn(rep: int, p=p, L=L, pair_index=pair_index) -> dict:
            data, resamples, stream = _sample_connected(
                spec, cov, truth, p, L, 1, pair_index, rep
            )
            fit = fit_mle(data, cov, fit_config)
            rec = {"replication": rep, "stream": stream, "resamples": resamples,
                   "converged": bool(fit.converged)}
            if "alpha_linf" in plan.statistics:
                rec["alpha_linf"] = float(np.abs(fit.params.alpha - truth.alpha).max())
            if "beta_rel_l2" in plan.statistics:
                rec["beta_rel_l2"] = float(
                    np.linalg.norm(fit.params.beta - truth.beta) / beta_norm
                )
            return rec

        settings.append(_run_setting(plan, p, L, replication_fn, workers))
    return ExperimentResult("rate", settings, _provenance(spec, plan, "rate"))


def ks_distance_to_normal(values) -> float:
    """Kolmogorov-Smirnov distance between a sample and the standard normal."""
    x = np.sort(np.asarray(values, dtype=float))
    m = x.size
    if m == 0:
        raise InvalidArgumentError("need at least one value")
    cdf = normal_cdf(x)
    upper = float(np.max(np.arange(1, m + 1) / m - cdf))
    lower = float(np.max(cdf - np.arange(0, m) / m))
    return max(upper, lower)


def _qq_block(values: np.ndarray) -> dict:
    m = values.size
    probs = (np.arange(1, m + 1) - 0.5) / m
    return {
        "sorted_values": np.sort(values).tolist(),
        "normal_quantiles": [float(normal_quantile(q)) for q in probs],
        "ks_distance": ks_distance_to_normal(values),
    }


def _hist_block(values: np.ndarray) -> dict:
    counts, edges = np.histogram(values, bins=HIST_BINS, range=HIST_RANGE)
    return {
        "bin_edges": edges.tolist(),
        "counts": counts.tolist(),
        "mean": float(values.mean()),
        "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "ks_distance": ks_distance_to_normal(values),
    }


def run_distribution_experiment(spec: SyntheticSpec, plan: ExperimentPlan) -> ExperimentResult:
    """Replicated study of the standardized fitted quantities.

    Records, per replication, the first intrinsic score standardized by
    its plug-in and oracle standard errors, the contrast error
    standardized at the truth (statistic named a_stat) and at the fit
    (b_stat), per-coordinate CI coverage indicators, and the oracle
    contrast variance.  Emits QQ and histogram summaries per setting.
    """
    if not (plan.statistics & DISTRIBUTION_STATISTICS):
        raise InvalidArgumentError(
            f"distribution experiment needs one of {sorted(DISTRIBUTION_STATISTICS)}"
        )
    cov, truth = generate_truth(spec)
    proj = build_projection(cov)
    workers = _resolve_workers(plan)
    fit_config = plan.fit_config or FitConfig()
    n, d = spec.n, spec.d
    contrast = plan.contrast if plan.contrast is not None else _default_contrast(n, d)
    contrast = np.asarray(contrast, dtype=float).ravel()
    if contrast.size != n + d:
        raise InvalidArgumentError(f"contrast length {contrast.size}, expected {n + d}")
    cbar = proj.apply(contrast)
    zq = normal_quantile(1.0 - (1.0 - plan.level) / 2.0)
    truth_stacked = truth.stacked
    c_dot_truth = float(contrast @ truth_stacked)

    settings = []
    for pair_index, (p, L) in enumerate(plan.pl_pairs):

        def replication_fn(rep: int, p=p, L=L, pair_index=pair_index) -> dict:
            data, resamples, stream = _sample_connected(
                spec, cov, truth, p, L, 2, pair_index, rep
            )
            fit = fit_mle(data, cov, fit_config)
            vm_true = projected_hessian_pinv(hessian(data, cov, truth), proj)
            vm_plugin = plugin_variance_model(fit)
            a_stat, b_stat = standardized_stats(fit, vm_true, vm_plugin, contrast, truth)
            alpha1_err = float(fit.params.alpha[0] - truth.alpha[0])
            se1_true = float(np.sqrt(max(vm_true.pseudoinverse[0, 0], 0.0) / vm_true.effective_l))
            se1_plugin = float(np.sqrt(max(vm_plugin.pseudoinverse[0, 0], 0.0) / vm_plugin.effective_l))
            rec = {
                "replication": rep,
                "stream": stream,
                "resamples": resamples,
                "converged": bool(fit.converged),
                "alpha1_err": alpha1_err,
                "alpha1_std_oracle": alpha1_err / se1_true,
                "alpha1_std_plugin": alpha1_err / se1_plugin,
                "var_alpha1_oracle": se1_true**2,
                "a_stat": float(a_stat),
                "b_stat": float(b_stat),
                "c_dot_fit": float(contrast @ fit.params.stacked),
                "var_c_oracle": vm_true.variance_of(cbar),
                "var_c_plugin": vm_plugin.variance_of(cbar),
                "cover_alpha1": int(abs(alpha1_err) <= zq * se1_plugin),
            }
            if d > 0:
                beta1_err = float(fit.params.beta[0] - truth.beta[0])
                se_beta1 = float(
                    np.sqrt(max(vm_plugin.pseudoinverse[n, n], 0.0) / vm_plugin.effective_l)
                )
                rec["beta1_err"] = beta1_err
                rec["var_beta1_oracle"] = float(
                    max(vm_true.pseudoinverse[n, n], 0.0) / vm_true.effective_l
                )
                rec["cover_beta1"] = int(abs(beta1_err) <= zq * se_beta1)
            return rec

        setting = _run_setting(plan, p, L, replication_fn, workers)
        recs = setting.records
        extras: dict = {"c_dot_truth": c_dot_truth}
        if "qq_alpha1" in plan.statistics:
            vals = np.array([r["alpha1_std_plugin"] for r in recs])
            extras["qq_alpha1"] = _qq_block(vals)
        if "hist_A" in plan.statistics:
            extras["hist_A"] = _hist_block(np.array([r["a_stat"] for r in recs]))
        if "hist_B" in plan.statistics:
            extras["hist_B"] = _hist_block(np.array([r["b_stat"] for r in recs]))
        if "coverage" in plan.statistics:
            cov_block = {
                "level": plan.level,
                "alpha1": float(np.mean([r["cover_alpha1"] for r in recs])),
            }
            if d > 0:
                cov_block["beta1"] = float(np.mean([r["cover_beta1"] for r in recs]))
            extras["coverage"] = cov_block
        c_fit = np.array([r["c_dot_fit"] for r in recs])
        extras["contrast_variance"] = {
            "mc_var": float(c_fit.var(ddof=1)) if c_fit.size > 1 else 0.0,
            "mean_oracle_var": float(np.mean([r["var_c_oracle"] for r in recs])),
            "mean_plugin_var": float(np.mean([r["var_c_plugin"] for r in recs])),
        }
        setting.extras = extras
        settings.append(setting)
    return ExperimentResult(
        "distribution", settings, _provenance(spec, plan, "distribution")
    )
