"""Scratch verification of core field_model math (not part of the package)."""
import numpy as np
from scipy import linalg

from metriclab.geometry import (
    LatticeGeometry, MetricChart, chart_metric, conformal_metric, flat_metric,
    full_sym_metric, volume,
)
from metriclab import field_model as fm

rng = np.random.default_rng(0)

# 1. 1D n=4 flat spectrum
g4 = LatticeGeometry(1, (4,), 1.0)
spec = fm.spectral_decomposition(fm.assemble_precision(flat_metric(g4)))
print("1D n=4 gen eigenvalues:", np.round(spec.eigenvalues, 12), "expect {0,2,2,4}")

# 2. 2D flat Kronecker sum (non-unit spacing)
a = 0.7
g2d = LatticeGeometry(2, (4, 6), a)
spec2 = fm.spectral_decomposition(fm.assemble_precision(flat_metric(g2d)))
e1 = (2 - 2 * np.cos(2 * np.pi * np.arange(4) / 4)) / a**2
e2 = (2 - 2 * np.cos(2 * np.pi * np.arange(6) / 6)) / a**2
kron = np.sort((e1[:, None] + e2[None, :]).ravel())
print("2D Kronecker max abs diff:", np.max(np.abs(np.sort(spec2.eigenvalues) - kron)))

# 3. W on flat n=4 and W-shift
m4 = flat_metric(g4)
W0 = fm.log_partition(m4)
print("W flat n=4:", W0, "expect", np.log(4))

g8 = LatticeGeometry(1, (8,), 1.0)
N = 8
for c in (0.3, -0.7):
    w_shift = fm.log_partition(conformal_metric(g8, np.full(8, c)))
    w_base = fm.log_partition(flat_metric(g8))
    print(f"W-shift c={c}: got {w_shift - w_base:.12f} expect {-(N-1)*c/2:.12f}")

# pdet identity vs direct plain eigendecomposition on a random-ish curved 1D metric
om = 0.3 * np.cos(2 * np.pi * np.arange(8) / 8) + 0.1
met = conformal_metric(g8, om)
op = fm.assemble_precision(met)
plain = np.linalg.eigvalsh(op.matrix)
w_plain = 0.5 * np.sum(np.log(plain[1:]))
w_identity = fm.log_partition(met)
print("pdet identity check:", w_plain, w_identity, "diff", abs(w_plain - w_identity))

# 4. dW/dtheta == <dS/dtheta> on 1D n=8 constant-scale chart (exactness!)
chart = MetricChart(base=flat_metric(g8), directions=(np.ones(8),))
for th in (0.0, 0.4):
    t = np.array([th])
    eps = 1e-6
    wp = fm.log_partition(chart_metric(chart, t + eps))
    wm = fm.log_partition(chart_metric(chart, t - eps))
    fd = (wp - wm) / (2 * eps)
    an = fm.expected_action_gradient(chart, t)[0]
    print(f"theta={th}: dW fd={fd:.10f} <dS>={an:.10f} diff={abs(fd-an):.2e}")

# 5. stress FD on random 2D 4x4 FullSym2D
g44 = LatticeGeometry(2, (4, 4), 0.8)
n = g44.n_sites
g11 = 1.0 + 0.3 * rng.standard_normal(n) * 0.5
g22 = 1.0 + 0.3 * rng.standard_normal(n) * 0.5
g12 = 0.15 * rng.standard_normal(n)
met44 = full_sym_metric(g44, g11, g12, g22)
phi = fm.FieldSample(rng.standard_normal(n), g44)
T = fm.stress_energy(phi, met44)

# FD wrt inverse-metric entries: rebuild a metric from perturbed ginv
def action_from_ginv(u11, u12, u22, phi):
    det = u11 * u22 - u12 * u12
    G11, G12, G22 = u22 / det, -u12 / det, u11 / det  # invert back to metric entries
    m = full_sym_metric(g44, G11, G12, G22)
    return fm.action(phi, m)

ginv = met44.inverse_entries()
u11, u12, u22 = ginv[:, 0, 0].copy(), ginv[:, 0, 1].copy(), ginv[:, 1, 1].copy()
h = 1e-6
sqrtg = met44.sqrt_g()
a_d = g44.spacing**2
T_fd = np.zeros_like(T)
for x in range(n):
    for comp, (arr, factor) in enumerate(((u11, -2.0), (u12, -1.0), (u22, -2.0))):
        orig = arr[x]
        arr[x] = orig + h
        sp_ = action_from_ginv(u11, u12, u22, phi)
        arr[x] = orig - h
        sm_ = action_from_ginv(u11, u12, u22, phi)
        arr[x] = orig
        d = (sp_ - sm_) / (2 * h)
        val = factor / (sqrtg[x] * a_d) * d
        if comp == 0:
            T_fd[x, 0, 0] = val
        elif comp == 1:
            T_fd[x, 0, 1] = T_fd[x, 1, 0] = val
        else:
            T_fd[x, 1, 1] = val
rel = np.max(np.abs(T - T_fd)) / np.max(np.abs(T))
print("stress FD max rel err:", rel)

# 6. score identity + variance: 1D n=8, 2-param chart, MC
x = np.arange(8)
chart2 = MetricChart(base=flat_metric(g8),
                     directions=(2.0 * np.ones(8), np.cos(2 * np.pi * x / 8)))
met0 = chart_metric(chart2, np.zeros(2))
samples = fm.sample_fields(met0, 20000, np.random.default_rng(42))
scores = fm.score_vectors(chart2, np.zeros(2), samples)
mean = scores.mean(axis=0)
se = scores.std(axis=0, ddof=1) / np.sqrt(scores.shape[0])
print("score mean/SE:", mean / se)
print("empirical Fisher diag:", np.cov(scores.T)[(0, 1), (0, 1)],
      "expect dir0: 2*(N-1) =", 2 * 7)

# 7. action of eigenmode and expectation of action
lam = spec.eigenvalues
md = fm._decompose(flat_metric(g8))
phi_mode = fm.FieldSample(md.nonzero_modes[:, 2], g8)
print("action(eigenmode) vs lam/2:", fm.action(phi_mode, flat_metric(g8)),
      md.nonzero_eigenvalues[2] / 2)

s_vals = [fm.action(s, met0) for s in samples[:5000]]
print("mean action:", np.mean(s_vals), "expect", (8 - 1) / 2)

# 8. mass-weighted mean zero per sample (curved metric)
met_c = conformal_metric(g8, om)
sc = fm.sample_fields(met_c, 3, np.random.default_rng(1))
opc = fm.assemble_precision(met_c)
for s in sc:
    print("mass-weighted mean:", float(s.values @ opc.mass_weights))
