"""Reference priors for one-parameter metric families.

The field likelihood is reduced to an exactly computable discrete channel:
for a pure scale family the base-metric action of the observed fields is a
sufficient statistic with a scaled chi-square law, so the channel matrix
comes from closed-form distribution functions rather than density
estimation.  The mutual-information maximizing prior is then the fixed
point p(theta) proportional to exp(E_x[log posterior]), iterated in
Blahut-Arimoto fashion, and compared against the Jeffreys prior
sqrt(F(theta)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import field_model as fm
from .fisher_lab import fisher_analytic
from .geometry import chart_metric

ROW_TOL = 1e-12


class ChannelCoverageError(ValueError):
    """Requested bins do not cover enough probability mass."""


class FixedPointNotConverged(RuntimeError):
    def __init__(self, message, last_weights, last_step):
        super().__init__(message)
        self.last_weights = last_weights
        self.last_step = last_step


@dataclass(frozen=True)
class PriorDistribution:
    theta_grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("prior weights must be nonnegative")
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("prior weights must have positive finite mass")
        if abs(total - 1.0) > ROW_TOL:
            raise ValueError("prior weights must sum to one")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class DiscreteChannel:
    """Row-stochastic likelihood matrix P[x | theta] on a statistic grid."""

    theta_grid: np.ndarray
    bin_edges: np.ndarray
    likelihood: np.ndarray
    dof: int
    scales: np.ndarray
    n_obs: int


def scale_factors(chart, theta_grid):
    """Per-theta covariance scale of a pure scale family.

    Verifies that all nonzero precision eigenvalues rescale by a common
    factor across the grid (the statistic below is sufficient only then).
    """
    if chart.n_params != 1:
        raise ValueError("channel construction needs a 1-parameter chart")
    base = chart_metric(chart, np.zeros(1))
    lam0 = np.linalg.eigvalsh(fm.assemble_precision(base).matrix)[1:]
    scales = np.empty(len(theta_grid))
    for i, th in enumerate(theta_grid):
        lam = np.linalg.eigvalsh(
            fm.assemble_precision(chart_metric(chart, [th])).matrix
        )[1:]
        ratio = lam / lam0
        if np.ptp(ratio) > 1e-10 * np.mean(ratio):
            raise ValueError("chart is not a pure scale family; statistic not sufficient")
        scales[i] = 1.0 / np.mean(ratio)
    return scales


def build_channel(chart, theta_interval, m, n_obs, b, bin_range=None):
    """Discretize the likelihood of the aggregated sufficient statistic.

    The statistic is the base-metric action summed over n_obs independent
    field draws; under theta it is (s(theta)/2) chi2 with (N-1) n_obs
    degrees of freedom.  Bins must cover at least 1 - 1e-6 of the mass for
    every grid theta; rows are renormalized to be exactly stochastic.
    """
    lo, hi = theta_interval
    theta_grid = np.linspace(lo, hi, m)
    scales = scale_factors(chart, theta_grid)
    n_modes = chart.base.geometry.n_sites - 1
    dof = n_modes * n_obs
    law = stats.chi2(dof)
    q = 2.5e-7
    required = (
        float(np.min(scales) / 2.0 * law.ppf(q)),
        float(np.max(scales) / 2.0 * law.isf(q)),
    )
    if bin_range is None:
        bin_range = required
    # log-spaced edges: the statistic is positive and its scale can span
    # many decades across the theta grid
    edges = np.geomspace(bin_range[0], bin_range[1], b + 1)
    cdfs = law.cdf(2.0 * edges[None, :] / scales[:, None])
    rows = np.diff(cdfs, axis=1)
    coverage = rows.sum(axis=1)
    if np.any(coverage < 1.0 - 1e-6):
        worst = float(np.min(coverage))
        raise ChannelCoverageError(
            f"bins cover only {worst:.9f} of the mass; required statistic range "
            f"is [{required[0]:.6g}, {required[1]:.6g}]"
        )
    rows = rows / rows.sum(axis=1, keepdims=True)
    return DiscreteChannel(
        theta_grid=theta_grid,
        bin_edges=edges,
        likelihood=rows,
        dof=dof,
        scales=scales,
        n_obs=n_obs,
    )


def _row_entropies(likelihood):
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(likelihood > 0, np.log(likelihood), 0.0)
    return np.sum(likelihood * logp, axis=1)


def _information_terms(channel, weights, row_plogp=None):
    """Per-theta KL divergence D(P_theta || marginal) under the prior."""
    p = channel.likelihood
    if row_plogp is None:
        row_plogp = _row_entropies(p)
    marginal = weights @ p
    support = marginal > 0
    logm = np.zeros_like(marginal)
    logm[support] = np.log(marginal[support])
    return row_plogp - p[:, support] @ logm[support]


def mutual_information(channel, prior):
    weights = prior.weights if isinstance(prior, PriorDistribution) else np.asarray(prior)
    return float(weights @ _information_terms(channel, weights))


def tv_distance(p, q):
    wp = p.weights if isinstance(p, PriorDistribution) else np.asarray(p)
    wq = q.weights if isinstance(q, PriorDistribution) else np.asarray(q)
    return float(0.5 * np.sum(np.abs(wp - wq)))


@dataclass(frozen=True)
class ReferencePriorResult:
    prior: PriorDistribution
    mutual_information: float
    iterations: int
    mi_trace: np.ndarray
    fixed_point_residual: float


def reference_prior_fixed_point(channel, max_iter=200000, tol=1e-6):
    """Iterate p <- normalize(p * exp(D(P_theta || marginal))) to the capacity prior.

    This is the fixed point p proportional to exp over the channel of the
    log posterior; mutual information is nondecreasing along the iteration.
    Stops when the total-variation step drops below tol; otherwise raises
    with the last iterate attached.  The boundary atoms of the optimal
    prior form at a ~1/k rate, so tol should not be pushed much below 1e-7.
    """
    m = channel.likelihood.shape[0]
    row_plogp = _row_entropies(channel.likelihood)
    weights = np.full(m, 1.0 / m)
    mi_trace = []

    def advance(w):
        d = _information_terms(channel, w, row_plogp)
        raw = w * np.exp(d - np.max(d))
        new = raw / raw.sum()
        return new, float(w @ d), 0.5 * float(np.sum(np.abs(new - w)))

    for iteration in range(1, max_iter + 1):
        new, mi, step = advance(weights)
        mi_trace.append(mi)
        weights = new
        if step < tol:
            residual = advance(weights)[2]
            prior = PriorDistribution(channel.theta_grid, weights)
            return ReferencePriorResult(
                prior=prior,
                mutual_information=mutual_information(channel, prior),
                iterations=iteration,
                mi_trace=np.asarray(mi_trace),
                fixed_point_residual=residual,
            )
    raise FixedPointNotConverged(
        f"no fixed point within {max_iter} iterations (last step {step:.3e})",
        last_weights=weights,
        last_step=float(step),
    )


def jeffreys_prior(chart, theta_grid):
    """Grid prior with weights proportional to sqrt(F(theta))."""
    import warnings

    f_vals = np.empty(len(theta_grid))
    for i, th in enumerate(theta_grid):
        f_vals[i] = fisher_analytic(chart, [th]).matrix[0, 0]
    if np.any(f_vals < 0):
        warnings.warn("negative Fisher values clamped to zero in Jeffreys prior")
        f_vals = np.clip(f_vals, 0.0, None)
    w = np.sqrt(f_vals)
    return PriorDistribution(np.asarray(theta_grid, dtype=float), w / w.sum())


@dataclass(frozen=True)
class FluctuationPrior:
    """Gaussian prior on chart fluctuations with the Fisher matrix as precision."""

    theta0: np.ndarray
    fisher: object
    rank_deficient: bool

    def log_density(self, theta):
        d = np.asarray(theta, dtype=float) - self.theta0
        return float(-0.5 * d @ self.fisher.matrix @ d)

    def sample(self, count, rng):
        """Fluctuations with covariance F^+ on the identifiable subspace."""
        vals = self.fisher.eigenvalues
        vecs = np.linalg.eigh(self.fisher.matrix)[1]
        keep = vals > self.fisher.eps_rank * max(float(vals[-1]), 0.0)
        z = rng.standard_normal((count, int(np.count_nonzero(keep))))
        amp = 1.0 / np.sqrt(vals[keep])
        return self.theta0[None, :] + (z * amp[None, :]) @ vecs[:, keep].T


def gaussian_fluctuation_prior(chart, theta0):
    theta0 = np.asarray(theta0, dtype=float)
    fisher = fisher_analytic(chart, theta0)
    return FluctuationPrior(
        theta0=theta0,
        fisher=fisher,
        rank_deficient=not fisher.full_rank,
    )
