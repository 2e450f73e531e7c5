"""Scratch verification of estimator + fisher_lab (not part of the package)."""
import time

import numpy as np

from metriclab.geometry import LatticeGeometry, MetricChart, chart_metric, flat_metric, volume
from metriclab import field_model as fm
from metriclab.estimator import (
    FixedVolume, MleProblem, OptimizerSettings, consistency_sweep, fit,
    stationarity_certificate, total_log_likelihood,
)
from metriclab.fisher_lab import cramer_rao_check, fisher_analytic, fisher_monte_carlo, normality_test
from metriclab.streams import stream_for

g8 = LatticeGeometry(1, (8,), 1.0)
x = np.arange(8)
scale2 = MetricChart(base=flat_metric(g8), directions=(2.0 * np.ones(8),),
                     lo=[-3], hi=[3])
chart2p = MetricChart(base=flat_metric(g8),
                      directions=(2.0 * np.ones(8), np.cos(2 * np.pi * x / 8)),
                      lo=[-3, -3], hi=[3, 3])

# Fisher analytic: F = 2 (N-1) = 14 for scale2, independent of theta
for th in (0.0, 0.5):
    F = fisher_analytic(scale2, [th])
    print("F(scale2) at", th, "=", F.matrix[0, 0], "expect 14")

# gradient vs FD of total loglik on 2-param chart
met0 = chart_metric(chart2p, np.zeros(2))
samples = fm.sample_fields(met0, 32, np.random.default_rng(7))
prob = MleProblem(chart=chart2p, samples=samples)
theta = np.array([0.05, -0.1])
val, grad = total_log_likelihood(theta, prob)
eps = 1e-6
fd = np.zeros(2)
for i in range(2):
    tp, tm = theta.copy(), theta.copy()
    tp[i] += eps
    tm[i] -= eps
    fd[i] = (total_log_likelihood(tp, prob)[0] - total_log_likelihood(tm, prob)[0]) / (2 * eps)
print("grad vs fd rel err:", np.abs(grad - fd) / np.abs(fd))

# N=1 closed form: theta_hat = log(2 S0 / (N-1)) / alpha, alpha=2
one = MleProblem(chart=scale2, samples=samples[:1])
res1 = fit(one)
s0 = fm.action(samples[0], flat_metric(g8))
closed = np.log(2 * s0 / 7) / 2
print("1-sample fit:", res1.theta[0], "closed form:", closed, "diff:", abs(res1.theta[0] - closed),
      "converged:", res1.converged, "iters:", res1.iterations)

# consistency of fit at N=4096
t0 = time.time()
big = fm.sample_fields(chart_metric(scale2, [0.0]), 4096, np.random.default_rng(3))
resb = fit(MleProblem(chart=scale2, samples=big))
print("N=4096 fit:", resb.theta, "time:", time.time() - t0)

# constraint: FixedVolume
target = volume(flat_metric(g8))
cres = fit(MleProblem(chart=chart2p, samples=samples, constraint=FixedVolume(target)))
print("constrained fit volume err:", abs(volume(chart_metric(chart2p, cres.theta)) - target),
      "delta1:", cres.lagrange_multiplier, "converged:", cres.converged)
cert = stationarity_certificate(cres, MleProblem(chart=chart2p, samples=samples,
                                                 constraint=FixedVolume(target)))
print("certificate norm:", cert.norm, "grad norm:", cres.gradient_norm)

# Fisher MC vs analytic on the 2-param chart
t0 = time.time()
Fa = fisher_analytic(chart2p, np.zeros(2))
Fm, se = fisher_monte_carlo(chart2p, np.zeros(2), 10_000, stream_for(11, 0, "fisher-mc"))
rel = np.linalg.norm(Fm.matrix - Fa.matrix) / np.linalg.norm(Fa.matrix)
print("Fisher analytic:\n", Fa.matrix)
print("Fisher MC rel frob err:", rel, " time:", time.time() - t0)

# Cramer-Rao: 400 replicas x 256 samples
t0 = time.time()
report = cramer_rao_check(scale2, [0.0], 256, 400, seed=2024)
el = time.time() - t0
cnf = report.efficiency[0, 0]
print(f"CR: C*N*F = {cnf:.4f}  margin={report.margin:.3e} eps={report.eps_stat:.3e} "
      f"boot_frac={report.bootstrap_pass_fraction:.3f} ok={report.matrix_bound_ok} "
      f"converged={report.n_converged}/400 time={el:.1f}s")
for c in report.component_bounds:
    print("  chain:", c)

# Normality on the same replicas
nrep = normality_test(report.theta_hats, [0.0], report.fisher, 256)
print("normality: skew", nrep.skewness, "exkurt", nrep.excess_kurtosis,
      "var", nrep.variance, "qq", nrep.qq_deviation)

# consistency sweep
t0 = time.time()
sweep = consistency_sweep(scale2, [0.0], [16, 64, 256, 1024], 64,
                          lambda rep, purpose: stream_for(5, rep, purpose))
print("sweep slope:", sweep.slope, "time:", time.time() - t0)
for s in sweep.summary:
    print("   ", s)
