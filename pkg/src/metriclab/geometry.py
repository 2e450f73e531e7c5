"""Periodic lattices, metric fields and metric parameter charts.

Everything downstream (precision operators, likelihoods, Fisher matrices,
heat kernels) is built on the value types defined here.  All types are
immutable after construction and safe to share between workers.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

CONFORMAL_FLAT = "conformal_flat"
FULL_SYM_2D = "full_sym_2d"

# e^{2*omega} is kept inside (e^-20, e^20) to guard conditioning
OMEGA_BOUND = 10.0


class GeometryError(ValueError):
    """Invalid lattice or metric data."""


class ChartRangeError(ValueError):
    """Chart coordinates left the declared box or broke positivity."""


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic rectangular lattice (torus topology).

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    extents : tuple of int
        Site count per axis.  Each extent must be even and at least 2;
        estimation experiments normally use extents >= 4.
    spacing : float
        Uniform lattice spacing a > 0.
    """

    dim: int
    extents: tuple
    spacing: float

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(int(n) for n in self.extents))
        if self.dim not in (1, 2):
            raise GeometryError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extents) != self.dim:
            raise GeometryError("extents must have one entry per dimension")
        for n in self.extents:
            if n < 2 or n % 2 != 0:
                raise GeometryError(f"extents must be even and >= 2, got {n}")
        if not (self.spacing > 0):
            raise GeometryError(f"spacing must be positive, got {self.spacing}")

    @property
    def n_sites(self):
        return int(np.prod(self.extents))

    @property
    def shape(self):
        return self.extents

    def as_grid(self, values):
        """Reshape a flat per-site array to the lattice grid (row major)."""
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.extents)

    def as_flat(self, grid):
        grid = np.asarray(grid)
        return grid.reshape(grid.shape[: grid.ndim - self.dim] + (self.n_sites,))

    def shift(self, values, axis, step=1):
        """Periodic translation of a per-site field by `step` sites along `axis`.

        The convention is shift(f)[x] = f(x + step * e_axis).
        """
        grid = self.as_grid(values)
        rolled = np.roll(grid, -step, axis=grid.ndim - self.dim + axis)
        return self.as_flat(rolled)

    def coordinate(self, axis):
        """Flat array of integer site coordinates along one axis."""
        idx = np.indices(self.extents)[axis]
        return idx.reshape(self.n_sites)


def _readonly(a):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MetricField:
    """Per-site Riemannian metric on a lattice.

    kind == CONFORMAL_FLAT stores omega with g_ij = e^{2 omega} delta_ij
    (any dimension).  kind == FULL_SYM_2D stores (g11, g12, g22) per site
    and requires a 2-d lattice; each site matrix must be symmetric
    positive definite.
    """

    geometry: LatticeGeometry
    kind: str
    data: np.ndarray

    def __post_init__(self):
        n = self.geometry.n_sites
        data = np.asarray(self.data, dtype=float)
        if self.kind == CONFORMAL_FLAT:
            if data.shape != (n,):
                raise GeometryError(f"conformal data must have shape ({n},)")
            if not np.all(np.isfinite(data)):
                raise GeometryError("omega must be finite")
            if np.any(np.abs(data) >= OMEGA_BOUND):
                raise GeometryError(
                    f"conformal factor out of range: |omega| must stay below {OMEGA_BOUND}"
                )
        elif self.kind == FULL_SYM_2D:
            if self.geometry.dim != 2:
                raise GeometryError("full_sym_2d requires a 2-d lattice")
            if data.shape != (n, 3):
                raise GeometryError(f"full_sym_2d data must have shape ({n}, 3)")
            if not np.all(np.isfinite(data)):
                raise GeometryError("metric entries must be finite")
            g11, g12, g22 = data.T
            det = g11 * g22 - g12 * g12
            if np.any(g11 <= 0) or np.any(det <= 0):
                raise GeometryError("site metric must be positive definite")
        else:
            raise GeometryError(f"unknown metric kind {self.kind!r}")
        object.__setattr__(self, "data", _readonly(data))

    # -- per-site tensors used by the operator assembly ------------------

    def sqrt_g(self):
        """Per-site sqrt(det g)."""
        if self.kind == CONFORMAL_FLAT:
            return np.exp(self.geometry.dim * self.data)
        g11, g12, g22 = self.data.T
        return np.sqrt(g11 * g22 - g12 * g12)

    def inverse_entries(self):
        """Per-site inverse metric as an (n_sites, d, d) array."""
        n, d = self.geometry.n_sites, self.geometry.dim
        out = np.zeros((n, d, d))
        if self.kind == CONFORMAL_FLAT:
            inv = np.exp(-2.0 * self.data)
            for mu in range(d):
                out[:, mu, mu] = inv
            return out
        g11, g12, g22 = self.data.T
        det = g11 * g22 - g12 * g12
        out[:, 0, 0] = g22 / det
        out[:, 1, 1] = g11 / det
        out[:, 0, 1] = out[:, 1, 0] = -g12 / det
        return out


def flat_metric(geometry):
    """Unit flat metric (omega identically zero)."""
    return MetricField(geometry, CONFORMAL_FLAT, np.zeros(geometry.n_sites))


def conformal_metric(geometry, omega):
    return MetricField(geometry, CONFORMAL_FLAT, np.asarray(omega, dtype=float))


def full_sym_metric(geometry, g11, g12, g22):
    n = geometry.n_sites
    data = np.column_stack(
        [np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in (g11, g12, g22)]
    )
    return MetricField(geometry, FULL_SYM_2D, data)


def volume(metric):
    """Total Riemannian volume: sum over sites of sqrt(g) a^d."""
    a = metric.geometry.spacing
    return float(np.sum(metric.sqrt_g()) * a**metric.geometry.dim)


def flat_laplacian(geometry, values):
    """5-point (3-point in 1-d) periodic finite-difference Laplacian."""
    values = np.asarray(values, dtype=float)
    acc = np.zeros_like(values)
    for axis in range(geometry.dim):
        acc += geometry.shift(values, axis, +1) + geometry.shift(values, axis, -1)
        acc -= 2.0 * values
    return acc / geometry.spacing**2


def scalar_curvature_2d(metric):
    """Scalar curvature of a 2-d conformally flat metric.

    Uses the conformal identity R = -2 e^{-2 omega} Lap_flat omega with the
    periodic finite-difference Laplacian.  Curvature of a general symmetric
    2-d metric is out of scope and rejected.
    """
    if metric.kind != CONFORMAL_FLAT:
        raise GeometryError("scalar curvature is only defined for conformally flat metrics")
    if metric.geometry.dim != 2:
        raise GeometryError("scalar curvature requires a 2-d lattice")
    omega = metric.data
    return -2.0 * np.exp(-2.0 * omega) * flat_laplacian(metric.geometry, omega)


@dataclass(frozen=True)
class MetricChart:
    """Finite-dimensional affine chart theta -> metric.

    The base metric is perturbed additively at the data level:
    omega -> omega + sum_i theta_i * direction_i for conformal fields,
    entries -> entries + sum_i theta_i * direction_i for full metrics.
    Directions must be linearly independent as site vectors.
    """

    base: MetricField
    directions: tuple
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)

    def __post_init__(self):
        dirs = tuple(_readonly(d) for d in self.directions)
        if not dirs:
            raise GeometryError("chart needs at least one direction")
        for d in dirs:
            if d.shape != self.base.data.shape:
                raise GeometryError("direction shape must match the base metric data")
        stacked = np.stack([d.ravel() for d in dirs])
        if np.linalg.matrix_rank(stacked) < len(dirs):
            raise GeometryError("chart directions are linearly dependent")
        k = len(dirs)
        lo = np.full(k, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float)
        hi = np.full(k, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float)
        if lo.shape != (k,) or hi.shape != (k,) or np.any(lo >= hi):
            raise GeometryError("invalid chart box")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "lo", _readonly(lo))
        object.__setattr__(self, "hi", _readonly(hi))

    @property
    def n_params(self):
        return len(self.directions)

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ChartRangeError(f"theta must have shape ({self.n_params},)")
        if np.any(theta < self.lo) or np.any(theta > self.hi):
            raise ChartRangeError(f"theta {theta} outside declared box")
        return theta


def chart_metric(chart, theta):
    """Evaluate the chart map; raises ChartRangeError if the result is invalid."""
    theta = chart.check_theta(theta)
    data = chart.base.data.copy()
    for t, d in zip(theta, chart.directions):
        data += t * d
    try:
        return MetricField(chart.base.geometry, chart.base.kind, data)
    except GeometryError as exc:
        raise ChartRangeError(f"chart left the valid metric region: {exc}") from exc


def volume_gradient(chart, theta):
    """d volume / d theta for each chart direction (analytic)."""
    metric = chart_metric(chart, theta)
    geom = chart.base.geometry
    a_d = geom.spacing**geom.dim
    sqrtg = metric.sqrt_g()
    grads = np.zeros(chart.n_params)
    if chart.base.kind == CONFORMAL_FLAT:
        for i, d in enumerate(chart.directions):
            grads[i] = geom.dim * np.sum(sqrtg * d) * a_d
    else:
        g11, g12, g22 = metric.data.T
        det = g11 * g22 - g12 * g12
        for i, d in enumerate(chart.directions):
            # d sqrt(g) = sqrt(g)/2 * tr(g^-1 dg); dg has the off-diagonal twice
            ddet = d[:, 0] * g22 + g11 * d[:, 2] - 2.0 * g12 * d[:, 1]
            grads[i] = np.sum(0.5 * ddet / np.sqrt(det)) * a_d
    return grads


# -- serialization --------------------------------------------------------

def metric_to_json(metric):
    """Serialize to a JSON document that round-trips bit-exactly.

    The shortest round-trip decimal form (at most 17 significant digits)
    is used for every float.
    """
    doc = {
        "dim": metric.geometry.dim,
        "extents": list(metric.geometry.extents),
        "spacing": metric.geometry.spacing,
        "kind": metric.kind,
        "data": metric.data.ravel().tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def metric_from_json(text):
    doc = json.loads(text)
    geom = LatticeGeometry(int(doc["dim"]), tuple(doc["extents"]), float(doc["spacing"]))
    data = np.asarray(doc["data"], dtype=float)
    if doc["kind"] == FULL_SYM_2D:
        data = data.reshape(geom.n_sites, 3)
    return MetricField(geom, doc["kind"], data)


def metric_hash(metric):
    """Stable content hash used to tag sample batches."""
    return hashlib.sha256(metric_to_json(metric).encode()).hexdigest()[:16]
