"""Gaussian field model on a metric background.

The quadratic form S[phi] = 1/2 phi^T L phi is assembled in divergence form
from per-link weights, so L is symmetric positive semidefinite with the
constant field as its exact kernel.  The field's law is the Gaussian
exp(-S)/Z restricted to the complement of that zero mode, which is the
single normalization convention used everywhere (sampling, partition
function, likelihood).

Conventions
-----------
* Spectral data is the generalized eigenproblem L theta = lambda M theta
  with mass matrix M = diag(sqrt(g) a^d); eigenvectors are orthonormal in
  the mass-weighted inner product.
* log_partition returns W = -log Z = half the log pseudo-determinant of L
  on the constant-field complement (fixed Lebesgue measure there).  All
  statistics of the model are invariant under shifting a field by a
  constant, which ties the mass-weighted sampling convention and the
  fixed-measure likelihood together exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .geometry import (
    CONFORMAL_FLAT,
    GeometryError,
    MetricField,
    chart_metric,
)

KERNEL_TOL = 1e-10


class DegenerateSpectrumError(RuntimeError):
    """A nonzero mode collapsed to zero; signals an assembly bug."""


@dataclass(frozen=True)
class FieldSample:
    """One real scalar field configuration (one value per site)."""

    values: np.ndarray
    geometry: object

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.geometry.n_sites,):
            raise GeometryError("sample shape does not match the lattice")
        if not np.all(np.isfinite(v)):
            raise GeometryError("sample has non-finite entries")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PrecisionOperator:
    """Assembled precision matrix with its mass weights.

    matrix is N x N symmetric PSD with matrix @ ones == 0 exactly up to
    rounding; mass_weights holds sqrt(g(x)) a^d per site.
    """

    matrix: np.ndarray
    mass_weights: np.ndarray
    geometry: object
    kernel_dim: int = 1


@dataclass(frozen=True)
class SpectralDecomposition:
    """Generalized eigensystem of (L, M), sorted ascending.

    modes[:, n] is the n-th eigenvector, orthonormal under
    sum_x theta_n(x) theta_m(x) mass_weights(x) = delta_nm.  The lowest
    eigenvalue is the constant zero mode.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    mass_weights: np.ndarray
    geometry: object

    @property
    def nonzero_eigenvalues(self):
        return self.eigenvalues[1:]

    @property
    def nonzero_modes(self):
        return self.modes[:, 1:]


def _neighbor_index(geometry, axis):
    idx = np.arange(geometry.n_sites).reshape(geometry.extents)
    return np.roll(idx, -1, axis=axis).reshape(geometry.n_sites)


def link_fields(metric):
    """Per-axis site fields f_mu = sqrt(g) g^{mu mu} feeding the link weights."""
    sqrtg = metric.sqrt_g()
    ginv = metric.inverse_entries()
    return [sqrtg * ginv[:, mu, mu] for mu in range(metric.geometry.dim)]


def link_weights(geometry, fields):
    """Face-averaged link weights a^{d-2} (f(x) + f(x + mu))/2 per axis."""
    a_pow = geometry.spacing ** (geometry.dim - 2)
    return [
        0.5 * a_pow * (f + geometry.shift(f, mu, +1)) for mu, f in enumerate(fields)
    ]


def assemble_precision(metric):
    """Build the divergence-form precision operator for a metric.

    Each link (x, x + mu) contributes weight * (e_x - e_y)(e_x - e_y)^T, so
    symmetry, positive semidefiniteness and the constant kernel hold by
    construction for any SPD site metric.
    """
    geom = metric.geometry
    n = geom.n_sites
    weights = link_weights(geom, link_fields(metric))
    mat = np.zeros((n, n))
    i = np.arange(n)
    for mu in range(geom.dim):
        j = _neighbor_index(geom, mu)
        w = weights[mu]
        np.add.at(mat, (i, i), w)
        np.add.at(mat, (j, j), w)
        np.add.at(mat, (i, j), -w)
        np.add.at(mat, (j, i), -w)
    mass = metric.sqrt_g() * geom.spacing**geom.dim
    return PrecisionOperator(matrix=mat, mass_weights=mass, geometry=geom)


def spectral_decomposition(op):
    """Solve L theta = lambda M theta via the symmetric similarity transform."""
    m_half = np.sqrt(op.mass_weights)
    b = op.matrix / m_half[:, None] / m_half[None, :]
    b = 0.5 * (b + b.T)
    vals, vecs = linalg.eigh(b)
    modes = vecs / m_half[:, None]
    # canonical sign: largest-magnitude entry positive
    picks = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[picks, np.arange(modes.shape[1])])
    signs[signs == 0] = 1.0
    modes = modes * signs[None, :]
    lam_max = float(vals[-1]) if vals[-1] > 0 else 1.0
    if abs(vals[0]) > KERNEL_TOL * lam_max:
        raise DegenerateSpectrumError(
            f"zero mode missing: lowest eigenvalue {vals[0]:.3e}"
        )
    if np.any(vals[1:] <= KERNEL_TOL * lam_max):
        raise DegenerateSpectrumError("repeated zero eigenvalue in the spectrum")
    return SpectralDecomposition(
        eigenvalues=vals, modes=modes, mass_weights=op.mass_weights, geometry=op.geometry
    )


def _decompose(metric):
    return spectral_decomposition(assemble_precision(metric))


def action(phi, metric):
    """Quadratic action 1/2 phi^T L phi (nonnegative; zero on constants)."""
    op = assemble_precision(metric)
    v = phi.values if isinstance(phi, FieldSample) else np.asarray(phi, dtype=float)
    return float(0.5 * v @ op.matrix @ v)


def log_partition(metric, spec=None):
    """Effective action W = -log Z of the zero-mode-free Gaussian.

    Equals half the log of the product of the nonzero eigenvalues of L
    itself (the pseudo-determinant on the constant-field complement).  It is
    evaluated from the generalized spectrum through the exact identity

        pdet(L) = det(M) * prod_{n>=1} lambda_n * N / (1^T M 1),

    so a single (L, M) decomposition serves both the spectral and the
    statistical layers.
    """
    if spec is None:
        spec = _decompose(metric)
    lam = spec.nonzero_eigenvalues
    if np.any(lam <= 0):
        raise DegenerateSpectrumError("nonpositive eigenvalue in log_partition")
    mass = spec.mass_weights
    n = mass.size
    correction = np.sum(np.log(mass)) + np.log(n) - np.log(np.sum(mass))
    return float(0.5 * (np.sum(np.log(lam)) + correction))


def sample_fields(metric, count, rng):
    """Draw exact Gaussian samples phi = sum_{n>=1} c_n theta_n, c_n ~ N(0, 1/lambda_n).

    The zero-mode coefficient is set to zero, so the mass-weighted mean of
    every sample vanishes identically.  Deterministic for a given generator
    state.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    spec = _decompose(metric)
    lam = spec.nonzero_eigenvalues
    z = rng.standard_normal((lam.size, count))
    fields = spec.nonzero_modes @ (z / np.sqrt(lam)[:, None])
    return [FieldSample(fields[:, i], metric.geometry) for i in range(count)]


def sample_matrix(samples):
    """Stack a list of FieldSample into an (n_samples, n_sites) array."""
    return np.stack([s.values for s in samples])


def log_likelihood(phi, metric):
    """Log density of a field configuration under the metric's Gaussian law.

    log p = -S[phi] - (N-1)/2 log(2 pi) + W, normalized so that the
    integral over the zero-mode complement (plain Lebesgue mode measure)
    is exactly one.
    """
    spec = _decompose(metric)
    op_matrix_action = 0.5 * phi.values @ assemble_precision(metric).matrix @ phi.values
    n_modes = metric.geometry.n_sites - 1
    w = log_partition(metric, spec)
    return float(-op_matrix_action - 0.5 * n_modes * np.log(2.0 * np.pi) + w)


# -- stress-energy tensor --------------------------------------------------

def _link_square_sums(geometry, values):
    """Per-axis G_mu(x): d S / d f_mu(x) given squared link differences.

    G_mu(x) = a^{d-2}/4 * [ (phi(x+mu) - phi(x))^2 + (phi(x) - phi(x-mu))^2 ].
    Accepts a single field (N,) or a batch (n, N).
    """
    a_pow = geometry.spacing ** (geometry.dim - 2)
    out = []
    for mu in range(geometry.dim):
        fwd = geometry.shift(values, mu, +1) - values
        sq = fwd * fwd
        out.append(0.25 * a_pow * (sq + geometry.shift(sq, mu, -1)))
    return out


def _stress_from_g(metric, g_fields):
    """Chain rule from d S / d f_mu to the per-site stress tensor.

    The independent variables are the per-site inverse-metric entries (the
    off-diagonal entry counted once); T is normalized so that
    dS = -1/2 sum_x sqrt(g) a^d T_{mu nu} d g^{mu nu} with symmetric dg.
    """
    geom = metric.geometry
    d = geom.dim
    sqrtg = metric.sqrt_g()
    a_d = geom.spacing**d
    lead = g_fields[0].shape[:-1]
    t = np.zeros(lead + (geom.n_sites, d, d))
    if d == 1:
        # f = sqrt(u11); dS/du11 = G/(2 sqrt(u11)); sqrt(g) = u11^{-1/2}
        u11 = metric.inverse_entries()[:, 0, 0]
        ds_du = g_fields[0] * 0.5 / np.sqrt(u11)
        t[..., 0, 0] = -2.0 / (sqrtg * a_d) * ds_du
        return t
    ginv = metric.inverse_entries()
    u11, u12, u22 = ginv[:, 0, 0], ginv[:, 0, 1], ginv[:, 1, 1]
    det = u11 * u22 - u12 * u12
    g1, g2 = g_fields
    # f1 = sqrt(g) u11, f2 = sqrt(g) u22 with sqrt(g) = det(u)^{-1/2}
    df1_du11 = sqrtg * (1.0 - 0.5 * u11 * u22 / det)
    df1_du22 = -0.5 * sqrtg * u11 * u11 / det
    df1_du12 = sqrtg * u11 * u12 / det
    df2_du11 = -0.5 * sqrtg * u22 * u22 / det
    df2_du22 = sqrtg * (1.0 - 0.5 * u11 * u22 / det)
    df2_du12 = sqrtg * u22 * u12 / det
    ds_du11 = g1 * df1_du11 + g2 * df2_du11
    ds_du22 = g1 * df1_du22 + g2 * df2_du22
    ds_du12 = g1 * df1_du12 + g2 * df2_du12
    norm = sqrtg * a_d
    t[..., 0, 0] = -2.0 / norm * ds_du11
    t[..., 1, 1] = -2.0 / norm * ds_du22
    t[..., 0, 1] = t[..., 1, 0] = -1.0 / norm * ds_du12
    return t


def stress_energy(phi, metric):
    """Per-site stress tensor: metric response of the action at a sample.

    Computed analytically from the link terms; agrees with central finite
    differences of action() under per-site inverse-metric perturbations.
    """
    g_fields = _link_square_sums(metric.geometry, phi.values)
    return _stress_from_g(metric, g_fields)


def expected_link_squares(spec):
    """Per-axis expectation of (phi(x+mu) - phi(x))^2 under the field law."""
    lam = spec.nonzero_eigenvalues
    modes = spec.nonzero_modes
    geom = spec.geometry
    out = []
    for mu in range(geom.dim):
        diff = geom.shift(modes.T, mu, +1) - modes.T  # (m, N)
        out.append((diff * diff).T @ (1.0 / lam))
    return out


def expected_stress(metric, spec=None):
    """Exact Gaussian expectation of the stress tensor via the mode sum."""
    if spec is None:
        spec = _decompose(metric)
    geom = metric.geometry
    v = expected_link_squares(spec)
    a_pow = geom.spacing ** (geom.dim - 2)
    g_fields = [0.25 * a_pow * (v[mu] + geom.shift(v[mu], mu, -1)) for mu in range(geom.dim)]
    return _stress_from_g(metric, g_fields)


# -- chart directional derivatives ----------------------------------------

def direction_link_derivatives(metric, direction):
    """d f_mu along one chart direction, per axis.

    For conformal fields f_mu = e^{(d-2) omega}, so d f_mu = (d-2) u f_mu;
    in two dimensions this vanishes identically (conformal invariance of
    the massless action).  For full 2-d metrics the direction perturbs the
    covariant entries (dg11, dg12, dg22) and the chain runs through
    d sqrt(g) = sqrt(g)/2 tr(g^-1 dg) and d g^{-1} = -g^-1 dg g^-1.
    """
    geom = metric.geometry
    d = geom.dim
    if metric.kind == CONFORMAL_FLAT:
        u = np.asarray(direction, dtype=float)
        fields = link_fields(metric)
        return [(d - 2.0) * u * f for f in fields]
    dg11, dg12, dg22 = np.asarray(direction, dtype=float).T
    sqrtg = metric.sqrt_g()
    ginv = metric.inverse_entries()
    u11, u12, u22 = ginv[:, 0, 0], ginv[:, 0, 1], ginv[:, 1, 1]
    trace = u11 * dg11 + u22 * dg22 + 2.0 * u12 * dg12
    dsqrt = 0.5 * sqrtg * trace
    udu_11 = u11 * u11 * dg11 + 2.0 * u11 * u12 * dg12 + u12 * u12 * dg22
    udu_22 = u12 * u12 * dg11 + 2.0 * u22 * u12 * dg12 + u22 * u22 * dg22
    df1 = dsqrt * u11 - sqrtg * udu_11
    df2 = dsqrt * u22 - sqrtg * udu_22
    return [df1, df2]


def _direction_weight_derivs(metric, chart):
    geom = metric.geometry
    a_pow = geom.spacing ** (geom.dim - 2)
    per_direction = []
    for direction in chart.directions:
        dfs = direction_link_derivatives(metric, direction)
        per_direction.append(
            [0.5 * a_pow * (df + geom.shift(df, mu, +1)) for mu, df in enumerate(dfs)]
        )
    return per_direction


def action_gradient_samples(chart, theta, samples):
    """dS/dtheta_i for every sample: (n_samples, n_params) array."""
    metric = chart_metric(chart, theta)
    geom = metric.geometry
    phi = samples if isinstance(samples, np.ndarray) else sample_matrix(samples)
    dweights = _direction_weight_derivs(metric, chart)
    sq = []
    for mu in range(geom.dim):
        diff = geom.shift(phi, mu, +1) - phi
        sq.append(diff * diff)
    out = np.zeros((phi.shape[0], chart.n_params))
    for i, dws in enumerate(dweights):
        for mu in range(geom.dim):
            out[:, i] += 0.5 * sq[mu] @ dws[mu]
    return out


def expected_action_gradient(chart, theta, spec=None):
    """< dS/dtheta_i > under the field law at the same theta."""
    metric = chart_metric(chart, theta)
    if spec is None:
        spec = _decompose(metric)
    v = expected_link_squares(spec)
    dweights = _direction_weight_derivs(metric, chart)
    out = np.zeros(chart.n_params)
    for i, dws in enumerate(dweights):
        for mu in range(metric.geometry.dim):
            out[i] += 0.5 * float(v[mu] @ dws[mu])
    return out


def score_vectors(chart, theta, samples):
    """Per-sample score <dS> - dS(phi) for each chart direction.

    The mean over the field law vanishes identically; the covariance is the
    Fisher information of the chart.
    """
    mean_grad = expected_action_gradient(chart, theta)
    return mean_grad[None, :] - action_gradient_samples(chart, theta, samples)


# -- persistence -----------------------------------------------------------

def samples_to_csv(samples, path):
    """Write a batch as CSV: one row per sample, one column per site."""
    mat = sample_matrix(samples)
    header = ",".join(str(i) for i in range(mat.shape[1]))
    np.savetxt(path, mat, delimiter=",", header=header, comments="")


def samples_from_csv(path, geometry):
    mat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [FieldSample(row, geometry) for row in mat]
