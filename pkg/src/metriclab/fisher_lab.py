"""Fisher information over metric charts and Cramer-Rao diagnostics.

The analytic path evaluates the Gaussian closed form
F_ij = 1/2 tr(Sigma dL_i Sigma dL_j) in the eigenbasis of (L, M); the
Monte Carlo path is the empirical covariance of per-sample scores.  Both
are covariances of the same centered quadratic forms, so they must agree
within sampling error, which is what the lab checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import field_model as fm
from .estimator import MleProblem, OptimizerSettings, fit
from .geometry import chart_metric
from .streams import stream_for

RANK_EPS = 1e-10


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric PSD information matrix with spectral pseudo-inverse."""

    matrix: np.ndarray
    eigenvalues: np.ndarray
    pseudo_inverse: np.ndarray
    rank: int
    eps_rank: float = RANK_EPS

    @classmethod
    def from_matrix(cls, mat, eps_rank=RANK_EPS):
        mat = 0.5 * (mat + mat.T)
        vals, vecs = np.linalg.eigh(mat)
        lam_max = max(float(vals[-1]), 0.0)
        cut = eps_rank * lam_max if lam_max > 0 else np.inf
        keep = vals > cut
        inv_vals = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
        pinv = (vecs * inv_vals[None, :]) @ vecs.T
        return cls(
            matrix=mat,
            eigenvalues=vals,
            pseudo_inverse=pinv,
            rank=int(np.count_nonzero(keep)),
            eps_rank=eps_rank,
        )

    @property
    def full_rank(self):
        return self.rank == self.matrix.shape[0]


def fisher_analytic(chart, theta):
    """Closed-form Fisher matrix of the chart at theta.

    Built from the mode-space matrices G_i = Theta'^T dL_i Theta' scaled by
    1/sqrt(lambda_n lambda_m); F_ij is half their Frobenius inner product.
    """
    theta = np.asarray(theta, dtype=float)
    metric = chart_metric(chart, theta)
    geom = metric.geometry
    spec = fm.spectral_decomposition(fm.assemble_precision(metric))
    lam = spec.nonzero_eigenvalues
    modes = spec.nonzero_modes  # (N, m)
    diffs = [geom.shift(modes.T, mu, +1).T - modes for mu in range(geom.dim)]
    dweights = fm._direction_weight_derivs(metric, chart)
    inv_sqrt = 1.0 / np.sqrt(lam)
    sandwiches = []
    for dws in dweights:
        g = np.zeros((lam.size, lam.size))
        for mu in range(geom.dim):
            g += diffs[mu].T @ (dws[mu][:, None] * diffs[mu])
        sandwiches.append(g * inv_sqrt[:, None] * inv_sqrt[None, :])
    k = chart.n_params
    f = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            f[i, j] = f[j, i] = 0.5 * float(np.sum(sandwiches[i] * sandwiches[j]))
    return FisherMatrix.from_matrix(f)


def fisher_monte_carlo(chart, theta, n_samples, rng):
    """Empirical covariance of score vectors, with entrywise standard errors."""
    if n_samples < 100:
        raise ValueError("need at least 100 samples")
    theta = np.asarray(theta, dtype=float)
    metric = chart_metric(chart, theta)
    samples = fm.sample_fields(metric, n_samples, rng)
    scores = fm.score_vectors(chart, theta, samples)
    cov = np.cov(scores, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    centered = scores - scores.mean(axis=0, keepdims=True)
    prods = centered[:, :, None] * centered[:, None, :]
    std_err = prods.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return FisherMatrix.from_matrix(cov), std_err


@dataclass(frozen=True)
class CramerRaoReport:
    fisher: FisherMatrix
    theta_hats: np.ndarray
    covariance: np.ndarray
    n_samples_per_fit: int
    n_converged: int
    margin: float
    eps_stat: float
    bootstrap_pass_fraction: float
    matrix_bound_ok: bool
    efficiency: np.ndarray        # C (n F) on the identifiable subspace
    component_bounds: tuple       # per-component dicts
    identifiable_only: bool
    warning: str = ""


def _bound_reference(fisher, n):
    """(n F)^{-1} (pseudo-inverse on the identifiable subspace)."""
    return fisher.pseudo_inverse / n


def cramer_rao_check(chart, theta0, n_samples_per_fit, replicas, seed,
                     bootstrap=200, settings=None):
    """Replicated MLE fits against the information bound.

    Checks (a) the matrix bound min-eig(C - (nF)^{-1}) >= -eps_stat with
    eps_stat from a bootstrap over replicas, (b) near-efficiency C (nF) ~ I,
    and (c) the per-component chain C_ii >= ((nF)^{-1})_ii >= 1/(n F_ii).
    A rank-deficient Fisher drops to the identifiable subspace and is
    flagged in the report.
    """
    theta0 = np.asarray(theta0, dtype=float)
    k = chart.n_params
    fisher = fisher_analytic(chart, theta0)
    identifiable_only = not fisher.full_rank
    warning = (
        "Fisher matrix is singular on this chart; bounds restricted to the "
        "identifiable subspace via the pseudo-inverse"
        if identifiable_only
        else ""
    )
    settings = settings or OptimizerSettings()
    metric0 = chart_metric(chart, theta0)
    hats = []
    n_converged = 0
    for rep in range(replicas):
        rng = stream_for(seed, rep, "cramer-rao-sampling")
        samples = fm.sample_fields(metric0, n_samples_per_fit, rng)
        result = fit(MleProblem(chart=chart, samples=samples,
                                settings=settings, initial_theta=theta0))
        hats.append(result.theta)
        n_converged += int(result.converged)
    hats = np.asarray(hats)
    cov = np.atleast_2d(np.cov(hats, rowvar=False, ddof=1))
    ref = _bound_reference(fisher, n_samples_per_fit)

    proj = None
    if identifiable_only:
        vals, vecs = np.linalg.eigh(fisher.matrix)
        keep = vals > fisher.eps_rank * max(vals[-1], 0.0)
        proj = vecs[:, keep]

    def bound_margin(c):
        diff = c - ref
        if proj is not None:
            diff = proj.T @ diff @ proj
        return float(np.linalg.eigvalsh(diff)[0])

    margin = bound_margin(cov)
    boot_rng = stream_for(seed, 0, "cramer-rao-bootstrap")
    margins = np.empty(bootstrap)
    cov_diag = np.empty((bootstrap, k))
    for b in range(bootstrap):
        idx = boot_rng.integers(0, replicas, size=replicas)
        c_b = np.atleast_2d(np.cov(hats[idx], rowvar=False, ddof=1))
        margins[b] = bound_margin(c_b)
        cov_diag[b] = np.diag(c_b)
    eps_stat = 2.0 * float(np.std(margins, ddof=1))
    pass_fraction = float(np.mean(margins >= -eps_stat))
    matrix_bound_ok = margin >= -eps_stat

    nf = n_samples_per_fit * fisher.matrix
    if identifiable_only:
        eff = proj.T @ cov @ proj @ (proj.T @ nf @ proj)
    else:
        eff = cov @ nf

    components = []
    for i in range(k):
        f_ii = fisher.matrix[i, i]
        inv_diag = ref[i, i]
        weak = 1.0 / (n_samples_per_fit * f_ii) if f_ii > 0 else np.inf
        eps_i = 2.0 * float(np.std(cov_diag[:, i], ddof=1))
        components.append({
            "component": i,
            "empirical": float(cov[i, i]),
            "inverse_diagonal": float(inv_diag),
            "weak_bound": float(weak),
            "eps_stat": eps_i,
            "chain_ok": bool(
                cov[i, i] + eps_i >= inv_diag and inv_diag >= weak - 1e-12 * abs(weak)
            ),
        })
    return CramerRaoReport(
        fisher=fisher,
        theta_hats=hats,
        covariance=cov,
        n_samples_per_fit=n_samples_per_fit,
        n_converged=n_converged,
        margin=margin,
        eps_stat=eps_stat,
        bootstrap_pass_fraction=pass_fraction,
        matrix_bound_ok=bool(matrix_bound_ok),
        efficiency=eff,
        component_bounds=tuple(components),
        identifiable_only=identifiable_only,
        warning=warning,
    )


@dataclass(frozen=True)
class NormalityReport:
    z_scores: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    variance: np.ndarray
    qq_deviation: np.ndarray


def normality_test(theta_hats, theta0, fisher, n_samples_per_fit):
    """Standardize MLE replicas by (n F)^{1/2} and test against N(0, 1).

    Reports per-component skewness, excess kurtosis, variance and the
    maximum quantile-quantile deviation from the standard normal.
    """
    hats = np.asarray(theta_hats, dtype=float)
    if hats.ndim == 1:
        hats = hats[:, None]
    if hats.shape[0] < 200:
        raise ValueError("need at least 200 replicas")
    theta0 = np.asarray(theta0, dtype=float)
    vals, vecs = np.linalg.eigh(n_samples_per_fit * fisher.matrix)
    vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)[None, :]) @ vecs.T
    z = (hats - theta0[None, :]) @ root
    # Kolmogorov-Smirnov distance as the quantile-quantile deviation statistic
    qq = np.array([
        stats.kstest(z[:, i], "norm").statistic for i in range(z.shape[1])
    ])
    return NormalityReport(
        z_scores=z,
        skewness=np.atleast_1d(stats.skew(z, axis=0)),
        excess_kurtosis=np.atleast_1d(stats.kurtosis(z, axis=0)),
        variance=np.var(z, axis=0, ddof=1),
        qq_deviation=qq,
    )
