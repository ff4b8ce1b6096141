"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with the measured numbers so a full run doubles as a report.

Runs the four benchmark problems at their reference configurations with
fixed master seeds, plus the integrator-order and equilibrium properties and
a compact re-assertion of the cross-module invariants.  Expected total
runtime is a few minutes, dominated by the d = 50 study.
"""

import math

import numpy as np
import pytest

import cbree
from cbree.bench import McConfig, rep_seed, run_benchmark
from cbree.cbs import coefficients_from_log_weights, ess_from_log_weights, solve_beta
from cbree.densities import gaussian_logpdf, gaussian_sample, make_gaussian
from cbree.numkit import RandomStream
from cbree.problems import get_problem, kl_eigenpairs, make_flowrate_lsf
from cbree.smoothing import empirical_cv, log_target, smooth_indicator
from cbree.stepctl import bhat_coefficients, phi_scalar

PF_LINEAR = 0.5 * math.erfc(3.5 / math.sqrt(2.0))  # 2.3263e-4
PF_OSCILLATOR = 6.43e-6
PF_FLOWRATE_REPORTED = 3.026e-4


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}", flush=True)


def run_many(runner, problem_name, reps, master, **config):
    records = []
    for rep in range(reps):
        problem = get_problem(problem_name)
        cfg = cbree.CbreeConfig(seed=rep_seed(master, rep), **config)
        records.append(runner(problem, cfg))
    return records


def test_c1_linear_2d_median_and_success():
    records = run_many(
        cbree.run_cbree, "linear", 20, 11,
        n_particles=2000, delta_target=1.0, eps_target=1.0, n_obs=2,
    )
    median = float(np.median([r.estimate for r in records]))
    success = float(np.mean([r.termination != "max_iter" for r in records]))
    rel = median / PF_LINEAR - 1.0
    ok = abs(rel) <= 0.15 and success >= 0.90
    report("C1 linear d=2", ok, f"median={median:.4e} rel={rel:+.1%} success={success:.0%}")
    assert abs(rel) <= 0.15
    assert success >= 0.90


def test_c2_linear_50d_vmfn_vs_gaussian():
    # the d = 50 study; the divergence window is disabled to mirror the
    # reported behavior ("no stopping criterion inside 100 iterations" for
    # the plain-Gaussian variant) and the step tolerance follows the
    # high-dimensional experiment setup
    vmfn = run_many(
        cbree.run_cbree_vmfn, "linear-50", 20, 41,
        n_particles=4000, delta_target=4.0, eps_target=0.5, n_obs=0,
    )
    median = float(np.median([r.estimate for r in vmfn]))
    rel = median / PF_LINEAR - 1.0

    gauss = run_many(
        cbree.run_cbree, "linear-50", 20, 61,
        n_particles=4000, delta_target=2.0, eps_target=0.5, n_obs=0,
    )
    non_converged = float(np.mean([r.termination != "converged" for r in gauss]))
    ok = abs(rel) <= 0.30 and non_converged >= 0.50
    report(
        "C2 linear d=50", ok,
        f"vMFN median={median:.4e} rel={rel:+.1%}; plain-Gaussian non-convergence={non_converged:.0%}",
    )
    assert abs(rel) <= 0.30
    assert non_converged >= 0.50


def test_c3_flowrate_oracle_and_cbree():
    # own crude Monte Carlo oracle with 1e6 samples
    problem = get_problem("flowrate")
    stream = RandomStream(31)
    fails = 0
    for _ in range(10):
        pts = stream.standard_normal((100_000, 10))
        fails += int(np.count_nonzero(np.asarray(problem.lsf(pts)) <= 0.0))
    oracle = fails / 1e6
    se = math.sqrt(oracle * (1.0 - oracle) / 1e6)
    oracle_ok = abs(oracle - PF_FLOWRATE_REPORTED) <= 3.0 * se

    records = run_many(
        cbree.run_cbree, "flowrate", 20, 31,
        n_particles=4000, delta_target=1.0, eps_target=1.0, n_obs=2,
    )
    median = float(np.median([r.estimate for r in records]))
    rel = median / oracle - 1.0
    ok = oracle_ok and abs(rel) <= 0.30
    report(
        "C3 flowrate", ok,
        f"oracle={oracle:.4e} ({(oracle - PF_FLOWRATE_REPORTED) / se:+.1f} SE of reported); "
        f"median={median:.4e} rel to oracle={rel:+.1%}",
    )
    assert oracle_ok
    assert abs(rel) <= 0.30


def test_c4_oscillator_median_and_efficiency():
    records = run_many(
        cbree.run_cbree, "oscillator", 20, 21,
        n_particles=6000, delta_target=1.0, eps_target=1.0, n_obs=2,
    )
    estimates = np.array([r.estimate for r in records])
    median = float(np.median(estimates))
    rel = median / PF_OSCILLATOR - 1.0
    mse = float(np.mean((estimates - PF_OSCILLATOR) ** 2))
    mean_cost = float(np.mean([r.cost for r in records]))
    eff = cbree.rel_eff(mse, mean_cost, PF_OSCILLATOR)
    ok = abs(rel) <= 0.30
    report(
        "C4 oscillator", ok,
        f"median={median:.4e} rel={rel:+.1%} relEff={eff:.2f} (reported, no hard bound)",
    )
    assert abs(rel) <= 0.30


def test_c5_crude_mc_efficiency_calibration():
    result, _ = run_benchmark(
        "mc", "linear", McConfig(n_particles=100_000), reps=50, master_seed=71
    )
    ok = 0.5 <= result.rel_eff <= 2.0
    report("C5 MC calibration", ok, f"relEff={result.rel_eff:.3f} over K=50")
    assert 0.5 <= result.rel_eff <= 2.0


def test_c6_integrator_orders():
    # d/dt x + x = sin(t), x(0) = 1/2; exact solution (sin t - cos t)/2 + e^-t
    def forcing(t):
        return math.sin(t)

    def exact(t):
        return 0.5 * (math.sin(t) - math.cos(t)) + math.exp(-t)

    t_end = 2.0

    def euler_error(h):
        steps = round(t_end / h)
        x = 0.5
        for n in range(steps):
            x = math.exp(-h) * x + h * float(phi_scalar(h)) * forcing(n * h)
        return abs(x - exact(t_end))

    def midpoint_error(h):
        steps = round(t_end / h)
        x = 0.5
        b1, b2 = (float(v) for v in bhat_coefficients(h))
        for n in range(steps):
            t = n * h
            x = math.exp(-h) * x + h * (b1 * forcing(t) + b2 * forcing(t + 0.5 * h))
        return abs(x - exact(t_end))

    hs = np.array([2.0**-k for k in range(3, 8)])
    euler_slope = float(np.polyfit(np.log2(hs), np.log2([euler_error(h) for h in hs]), 1)[0])
    midpoint_slope = float(np.polyfit(np.log2(hs), np.log2([midpoint_error(h) for h in hs]), 1)[0])
    ok = abs(euler_slope - 1.0) <= 0.2 and abs(midpoint_slope - 2.0) <= 0.2
    report(
        "C6 integrator orders", ok,
        f"exponential Euler slope={euler_slope:.3f}, exponential midpoint slope={midpoint_slope:.3f}",
    )
    assert abs(euler_slope - 1.0) <= 0.2
    assert abs(midpoint_slope - 2.0) <= 0.2


def test_c7_gaussian_target_equilibrium():
    target_mean = np.array([1.0, -1.0])
    target_cov = np.diag([0.5, 2.0])
    precision = np.linalg.inv(target_cov)
    beta, h, n_particles, steps = 10.0, 0.1, 5000, 300
    alpha = math.exp(-h)
    means, covs = [], []
    for seed in range(5):
        root = RandomStream(81 + seed)
        pts = root.substream(0).standard_normal((n_particles, 2))
        for n in range(steps):
            diff = pts - target_mean
            logw = -beta * 0.5 * np.sum((diff @ precision) * diff, axis=1)
            coeffs = coefficients_from_log_weights(pts, logw, beta)
            noise = root.substream(1, n).standard_normal((n_particles, 2))
            pts = (
                alpha * pts
                + (1.0 - alpha) * coeffs.m_beta
                + math.sqrt(1.0 - alpha**2) * noise @ coeffs.c_beta_factor.T
            )
        means.append(pts.mean(axis=0))
        centered = pts - pts.mean(axis=0)
        covs.append(centered.T @ centered / n_particles)
    mean_avg = np.mean(means, axis=0)
    cov_avg = np.mean(covs, axis=0)
    mean_err = float(np.max(np.abs(mean_avg - target_mean)))
    diag_rel = np.abs(np.diag(cov_avg) / np.diag(target_cov) - 1.0)
    cross_rel = abs(cov_avg[0, 1]) / math.sqrt(target_cov[0, 0] * target_cov[1, 1])
    ok = mean_err <= 0.1 and float(diag_rel.max()) <= 0.2 and cross_rel <= 0.2
    report(
        "C7 Gaussian-target equilibrium", ok,
        f"|mean err|={mean_err:.3f}, cov diag rel err={diag_rel.max():.3f}, cross={cross_rel:.3f}",
    )
    assert mean_err <= 0.1
    assert float(diag_rel.max()) <= 0.2
    assert cross_rel <= 0.2


def test_c8_invariant_suite():
    checks = []

    # ESS non-increasing in beta
    rng = np.random.default_rng(0)
    lw = rng.normal(size=40) * 2.0
    vals = [ess_from_log_weights(lw, b) for b in np.linspace(0.0, 10.0, 60)]
    checks.append(("ESS monotone", bool(np.all(np.diff(vals) <= 1e-9))))

    # indicator complement identity
    g = rng.normal(size=300)
    total = smooth_indicator(g, 2.7) + smooth_indicator(-g, 2.7)
    checks.append(("indicator complement", bool(np.allclose(total, 1.0, atol=1e-12))))

    # cv scale invariance
    w = rng.uniform(0.1, 3.0, size=25)
    checks.append(
        ("cv scale invariance",
         empirical_cv(w) == pytest.approx(empirical_cv(1e5 * w), rel=1e-9))
    )

    # importance identity
    p = make_gaussian([0.0, 0.0], np.eye(2))
    q = make_gaussian([0.4, -0.3], 1.4 * np.eye(2))
    draws = gaussian_sample(q, RandomStream(1), 200_000)
    ratio = np.exp(gaussian_logpdf(p, draws) - gaussian_logpdf(q, draws))
    se = ratio.std() / math.sqrt(draws.shape[0])
    checks.append(("importance identity", abs(float(ratio.mean()) - 1.0) < 3.0 * se))

    # cost audits and seed reproducibility
    problem = get_problem("linear")
    cfg = cbree.CbreeConfig(n_particles=500, seed=19)
    rec_a = cbree.run_cbree(problem, cfg)
    checks.append(("cbree cost audit", rec_a.cost == problem.evaluations))
    rec_b = cbree.run_cbree(get_problem("linear"), cfg)
    checks.append(
        ("seed reproducibility",
         rec_a.estimate == rec_b.estimate and rec_a.cost == rec_b.cost)
    )
    enkf_problem = get_problem("linear")
    enkf_rec = cbree.run_enkf(enkf_problem, cbree.EnkfConfig(n_particles=400, max_iter=5, seed=2))
    checks.append(("enkf cost audit", enkf_rec.cost == enkf_problem.evaluations))

    # KL spectrum against a dense Nystrom oracle
    n = 2000
    y = np.linspace(0.0, 1.0, n)
    wts = np.full(n, 1.0 / (n - 1))
    wts[0] *= 0.5
    wts[-1] *= 0.5
    kernel = 0.04 * np.exp(-np.abs(y[:, None] - y[None, :]) / 0.3)
    root_w = np.sqrt(wts)
    oracle = np.linalg.eigvalsh(root_w[:, None] * kernel * root_w[None, :])[::-1][:10]
    fld = kl_eigenpairs(10)
    checks.append(
        ("KL vs Nystrom", bool(np.max(np.abs(fld.eigenvalues - oracle) / oracle) < 1e-3))
    )

    # FEM exactness for the constant coefficient field
    lsf, _ = make_flowrate_lsf()
    checks.append(
        ("FEM constant-coefficient exactness",
         float(lsf(np.zeros(10))[0]) == pytest.approx(1.7 - math.exp(0.1), abs=1e-12))
    )

    # temperature solve self-consistency
    pts = RandomStream(3).standard_normal((400, 3))
    g_vals = 3.5 - pts.sum(axis=1) / math.sqrt(3.0)
    beta, capped = solve_beta(g_vals, pts, 1.0, 200.0)
    ess_val = ess_from_log_weights(log_target(g_vals, pts, 1.0), beta)
    checks.append(("beta-solve self-consistency", (not capped) and abs(ess_val - 200.0) <= 0.01))

    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{name}={'ok' if passed else 'FAIL'}" for name, passed in checks)
    report("C8 invariant suite", ok, detail)
    assert ok, detail


def test_c9_parameter_study_smoke():
    def cell(delta, n_obs):
        records = run_many(
            cbree.run_cbree, "oscillator", 30, 91,
            n_particles=6000, delta_target=delta, eps_target=1.0, n_obs=n_obs,
        )
        success = [r.termination != "max_iter" for r in records]
        good = np.array([r.estimate for r, s in zip(records, success) if s])
        rrmse = float(np.sqrt(np.mean((good - PF_OSCILLATOR) ** 2)) / PF_OSCILLATOR)
        return rrmse, float(np.mean(success))

    rrmse_tight, success_tight = cell(1.0, 2)
    rrmse_loose, _ = cell(8.0, 2)
    _, success_nodiv = cell(1.0, 0)

    # qualitative trends with a generous noise allowance
    trend_rmse = rrmse_loose >= 0.7 * rrmse_tight
    trend_success = success_tight >= success_nodiv
    ok = trend_rmse and trend_success
    report(
        "C9 parameter study", ok,
        f"rel RMSE delta 1 -> 8: {rrmse_tight:.3f} -> {rrmse_loose:.3f}; "
        f"success n_obs=2 {success_tight:.0%} vs n_obs=0 {success_nodiv:.0%}",
    )
    assert trend_rmse
    assert trend_success
