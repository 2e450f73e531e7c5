"""Constrained maximum-likelihood estimation of metric chart parameters.

The objective is the total log likelihood of the observed field samples;
its gradient is assembled from the centered action gradients (the score),
which makes the stationarity condition a discrete balance equation between
the sample-mean stress and its model expectation, plus a volume term when
the volume constraint is active.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import field_model as fm
from .geometry import (
    CONFORMAL_FLAT,
    ChartRangeError,
    chart_metric,
    volume,
    volume_gradient,
)


@dataclass(frozen=True)
class FixedVolume:
    """Constrain the total Riemannian volume to a target value."""

    target: float


@dataclass(frozen=True)
class OptimizerSettings:
    tol: float = 1e-6          # convergence: projected gradient < tol * n_samples
    max_iter: int = 500
    initial_step: float = 0.1
    armijo: float = 1e-4
    min_step: float = 1e-14


@dataclass(frozen=True)
class MleProblem:
    chart: object
    samples: list
    constraint: object = None
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    initial_theta: np.ndarray = None

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("need at least one sample")
        theta0 = (
            np.zeros(self.chart.n_params)
            if self.initial_theta is None
            else np.asarray(self.initial_theta, dtype=float)
        )
        object.__setattr__(self, "initial_theta", theta0)


@dataclass(frozen=True)
class MleResult:
    theta: np.ndarray
    log_lik: float
    gradient_norm: float
    lagrange_multiplier: float
    iterations: int
    converged: bool
    stationarity_residual: float


@dataclass(frozen=True)
class StationarityCertificate:
    """Balance-equation residual at a fitted point.

    per_site is the tensor field (sample-mean stress) - (expected stress);
    chart_residual is its chart projection minus the volume term, whose
    norm is exactly the projected gradient norm of the objective.
    """

    per_site: np.ndarray
    chart_residual: np.ndarray
    norm: float


def total_log_likelihood(theta, problem):
    """Objective value and gradient at theta.

    value = sum_i log p(phi_i | g(theta)); the gradient per direction is
    n <dS/dtheta> - sum_i dS/dtheta(phi_i), exact through the spectral
    trace identity.
    """
    chart = problem.chart
    theta = np.asarray(theta, dtype=float)
    metric = chart_metric(chart, theta)
    op = fm.assemble_precision(metric)
    spec = fm.spectral_decomposition(op)
    phi = fm.sample_matrix(problem.samples)
    n = phi.shape[0]
    actions = 0.5 * np.einsum("si,ij,sj->s", phi, op.matrix, phi)
    w = fm.log_partition(metric, spec)
    n_modes = metric.geometry.n_sites - 1
    value = float(-np.sum(actions) - 0.5 * n * n_modes * np.log(2.0 * np.pi) + n * w)
    grad_samples = fm.action_gradient_samples(chart, theta, phi)
    grad = n * fm.expected_action_gradient(chart, theta, spec) - grad_samples.sum(axis=0)
    return value, grad


def _clip_box(chart, theta):
    return np.minimum(np.maximum(theta, chart.lo), chart.hi)


def _constant_direction_shift(chart):
    """Index and level of a spatially constant conformal chart direction."""
    if chart.base.kind != CONFORMAL_FLAT:
        return None
    for k, d in enumerate(chart.directions):
        if np.ptp(d) == 0.0 and d[0] != 0.0:
            return k, float(d[0])
    return None


def project_volume(chart, theta, target):
    """Move theta onto the volume(theta) == target manifold.

    Conformal charts with a constant direction admit the exact closed form
    (a uniform omega shift scales the volume by e^{d c}); otherwise a Newton
    iteration along the volume gradient is used.
    """
    theta = np.asarray(theta, dtype=float)
    shift = _constant_direction_shift(chart)
    if shift is not None:
        k, level = shift
        v = volume(chart_metric(chart, theta))
        c = np.log(target / v) / chart.base.geometry.dim
        out = theta.copy()
        out[k] += c / level
        return _clip_box(chart, out)
    for _ in range(60):
        v = volume(chart_metric(chart, theta))
        if abs(v - target) <= 1e-12 * abs(target):
            return theta
        g = volume_gradient(chart, theta)
        gg = float(g @ g)
        if gg == 0.0:
            raise ChartRangeError("volume gradient vanished during projection")
        theta = _clip_box(chart, theta - (v - target) / gg * g)
    raise ChartRangeError("volume projection did not converge")


def fit(problem):
    """Projected gradient ascent with backtracking line search.

    With a FixedVolume constraint, each trial point is projected back onto
    the constraint manifold and the gradient is projected off the volume
    direction; the Lagrange multiplier is the coefficient of the gradient
    along the (normalized) volume gradient.  Non-convergence is reported in
    the result, never raised.
    """
    chart, cfg = problem.chart, problem.settings
    n = len(problem.samples)
    theta = _clip_box(chart, problem.initial_theta.copy())
    target = problem.constraint.target if isinstance(problem.constraint, FixedVolume) else None
    if target is not None:
        theta = project_volume(chart, theta, target)

    def projected(grad, th):
        if target is None:
            return grad, 0.0
        v = volume_gradient(chart, th)
        nv = float(v @ v)
        if nv == 0.0:
            return grad, 0.0
        mult = float(grad @ v) / nv
        return grad - mult * v, mult

    value, grad = total_log_likelihood(theta, problem)
    step = cfg.initial_step
    iterations = 0
    converged = False
    multiplier = 0.0
    for iterations in range(1, cfg.max_iter + 1):
        pgrad, multiplier = projected(grad, theta)
        gnorm = float(np.linalg.norm(pgrad))
        if gnorm < cfg.tol * n:
            converged = True
            break
        direction = pgrad / gnorm

        def evaluate(size):
            point = _clip_box(chart, theta + size * direction)
            if target is not None:
                point = project_volume(chart, point, target)
            v, g = total_log_likelihood(point, problem)
            return point, v, g

        advanced = False
        while step >= cfg.min_step:
            try:
                trial, trial_value, trial_grad = evaluate(step)
            except ChartRangeError:
                step *= 0.5
                continue
            if trial_value >= value + cfg.armijo * step * gnorm:
                # refine with the vertex of the quadratic through both points;
                # plain Armijo oscillates around the 1-d optimum otherwise
                denom = 2.0 * (gnorm * step - (trial_value - value))
                if denom > 0.0:
                    s_star = gnorm * step**2 / denom
                    if 0.0 < s_star < 10.0 * step:
                        try:
                            t2, v2, g2 = evaluate(s_star)
                            if v2 > trial_value:
                                trial, trial_value, trial_grad = t2, v2, g2
                                step = s_star
                        except ChartRangeError:
                            pass
                theta, value, grad = trial, trial_value, trial_grad
                step = min(step * 2.0, 10.0)
                advanced = True
                break
            step *= 0.5
        if not advanced:
            break
    pgrad, multiplier = projected(grad, theta)
    gnorm = float(np.linalg.norm(pgrad))
    converged = bool(gnorm < cfg.tol * n)
    if target is None:
        multiplier = 0.0
    return MleResult(
        theta=theta,
        log_lik=value,
        gradient_norm=gnorm,
        lagrange_multiplier=multiplier,
        iterations=iterations,
        converged=converged,
        stationarity_residual=gnorm,
    )


def stationarity_certificate(result, problem):
    """Residual of the stress balance equation at the fitted parameters."""
    chart = problem.chart
    theta = result.theta
    metric = chart_metric(chart, theta)
    spec = fm.spectral_decomposition(fm.assemble_precision(metric))
    phi = fm.sample_matrix(problem.samples)
    mean_stress = np.mean(
        [fm.stress_energy(fm.FieldSample(row, metric.geometry), metric) for row in phi],
        axis=0,
    )
    per_site = mean_stress - fm.expected_stress(metric, spec)
    _, grad = total_log_likelihood(theta, problem)
    if isinstance(problem.constraint, FixedVolume):
        chart_residual = grad - result.lagrange_multiplier * volume_gradient(chart, theta)
    else:
        chart_residual = grad
    return StationarityCertificate(
        per_site=per_site,
        chart_residual=chart_residual,
        norm=float(np.linalg.norm(chart_residual)),
    )


@dataclass(frozen=True)
class SweepRow:
    sample_count: int
    replica: int
    converged: bool
    error_norm: float
    log_lik: float
    iterations: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    summary: tuple  # (sample_count, mean_error, sd_error, n_excluded) per count
    slope: float


def consistency_sweep(chart, theta0, sample_counts, replicas, stream_factory,
                      constraint=None, settings=None):
    """Fit independent replicas at increasing sample counts.

    stream_factory(replica_id, purpose) must return an independent RNG per
    replica; rows are produced in (count, replica) order so aggregation is
    deterministic.  Non-converged replicas are recorded and excluded from
    the error statistics.
    """
    theta0 = np.asarray(theta0, dtype=float)
    counts = list(sample_counts)
    if counts != sorted(counts):
        raise ValueError("sample counts must be increasing")
    settings = settings or OptimizerSettings()
    rows = []
    summary = []
    for count in counts:
        errors = []
        excluded = 0
        for rep in range(replicas):
            rng = stream_factory(rep, f"consistency-n{count}")
            metric0 = chart_metric(chart, theta0)
            samples = fm.sample_fields(metric0, count, rng)
            problem = MleProblem(
                chart=chart, samples=samples, constraint=constraint,
                settings=settings, initial_theta=theta0,
            )
            result = fit(problem)
            err = float(np.linalg.norm(result.theta - theta0))
            rows.append(SweepRow(count, rep, result.converged, err,
                                 result.log_lik, result.iterations))
            if result.converged:
                errors.append(err)
            else:
                excluded += 1
        mean = float(np.mean(errors)) if errors else np.nan
        sd = float(np.std(errors, ddof=1)) if len(errors) > 1 else np.nan
        summary.append((count, mean, sd, excluded))
    logn = np.log([s[0] for s in summary])
    loge = np.log([s[1] for s in summary])
    slope = float(np.polyfit(logn, loge, 1)[0])
    return SweepResult(rows=tuple(rows), summary=tuple(summary), slope=slope)
