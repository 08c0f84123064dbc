"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``. The shared fixtures run
the benchmark presets once and individual criteria read off their traces.
"""

import time

import numpy as np
import pytest

from decnewton.compress import CompressorSpec, compress
from decnewton.diagnostics import fit_rate, stage_two_window
from decnewton.gradient_tracking import GTParams, gt_run, tune_alpha
from decnewton.graph import consensus_apply, generate_topology, metropolis_weights
from decnewton.harness import (
    ExperimentConfig,
    GraphSpec,
    ProblemSpec,
    build_mixing,
    build_problem,
    preset_configs,
    run_experiment,
)
from decnewton.newton import (
    AlgoParams,
    ConstantSchedule,
    GeometricRamp,
    cg_solve,
    init_state,
    run,
    run_lockstep,
    step_efficient,
)
from decnewton.objectives import centralized_solve, make_quadratic

QUAD_GRAPH_SEED = 11
GT_ITER_CAP = 4000


def report(num, ok, detail):
    print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def preset_traces():
    """One run per benchmark preset config, keyed by label."""
    traces = {}
    for name in ("quad-kappa", "logit-topk", "logit-rank"):
        for config in preset_configs(name):
            trace, _ = run_experiment(config)
            traces[config.label] = trace
    return traces


@pytest.fixture(scope="module")
def quad_setup():
    W = metropolis_weights(generate_topology(10, 0.2, seed=QUAD_GRAPH_SEED))
    problems = {k: make_quadratic(10, 30, k, seed=1) for k in (10.0, 100.0, 10000.0)}
    stars = {k: centralized_solve(p, tol=1e-12) for k, p in problems.items()}
    return W, problems, stars


def _ramp_params(m, max_iters=170):
    return AlgoParams(
        compressor=CompressorSpec("rank_k", d=30, K=3),
        alpha=GeometricRamp(0.02, 1.1, 1.0),
        gamma=0.03, m=m, M=0.0,
        cg_tol=ConstantSchedule(1e-10),
        max_iters=max_iters, stop_tol=0.0,
    )


@pytest.fixture(scope="module")
def stage2_fits(quad_setup):
    """Fitted stage-two contraction factors: (kappa, m) -> rho_hat."""
    W, problems, stars = quad_setup
    x0 = np.zeros((10, 30))
    fits = {}
    for kappa in (10.0, 100.0, 10000.0):
        trace = run(problems[kappa], W, _ramp_params(20), x0, stars[kappa])
        fits[(kappa, 20)] = fit_rate(trace, stage_two_window(trace)).rho_hat
    trace15 = run(problems[100.0], W, _ramp_params(15), x0, stars[100.0])
    fits[(100.0, 15)] = fit_rate(trace15, stage_two_window(trace15)).rho_hat
    return fits, W.sigma


def test_a1_compressor_contraction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(314)
    worst = 0.0
    for d in (5, 20, 30):
        mats = rng.standard_normal((1000, d, d))
        norms = np.linalg.norm(mats, axis=(1, 2))
        # rank-K error for every K at once: sqrt of singular-value tail sums
        s = np.linalg.svd(mats, compute_uv=False)
        rank_tail = np.sqrt(np.cumsum((s**2)[:, ::-1], axis=1)[:, ::-1])  # tail incl. s_K
        sq = np.sort(mats.reshape(1000, d * d) ** 2, axis=1)
        top_tail = np.sqrt(np.cumsum(sq, axis=1)[:, ::-1])
        for K in range(1, d + 1):
            delta = K / (2.0 * d)
            err = rank_tail[:, K] if K < d else np.zeros(1000)
            worst = max(worst, float((err - (1 - delta) * norms).max()))
        for K in range(1, d * d + 1):
            delta = K / (2.0 * d * d)
            err = top_tail[:, K] if K < d * d else np.zeros(1000)
            worst = max(worst, float((err - (1 - delta) * norms).max()))
        # the vectorized tails must agree with the real operators
        for A, rt, tt, norm in zip(mats[:3], rank_tail[:3], top_tail[:3], norms[:3]):
            for K in (1, d // 2, d):
                spec = CompressorSpec("rank_k", d=d, K=K)
                err = np.linalg.norm(compress(spec, A).dense - A)
                expected = rt[K] if K < d else 0.0
                assert err == pytest.approx(expected, abs=1e-8 * (1 + norm))
            for K in (1, d * d // 2, d * d):
                spec = CompressorSpec("top_k", d=d, K=K)
                err = np.linalg.norm(compress(spec, A).dense - A)
                expected = tt[K] if K < d * d else 0.0
                assert err == pytest.approx(expected, abs=1e-10 * (1 + norm))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10.0
    report(1, ok, f"contraction margin {worst:.2e} <= 1e-9 over all K sweeps, "
                  f"3000 Gaussian matrices, {elapsed:.1f}s < 10s")


def test_a2_algorithm_equivalence(quad_setup):
    W, problems, _ = quad_setup
    t0 = time.perf_counter()
    deviations = run_lockstep(problems[100.0], W,
                              _ramp_params(15, max_iters=200),
                              np.zeros((10, 30)), iters=200)
    elapsed = time.perf_counter() - t0
    worst = max(deviations)
    ok = worst <= 1e-9 and elapsed < 10.0
    report(2, ok, f"reference vs efficient, 200 lockstep iterations: "
                  f"max state deviation {worst:.2e} <= 1e-9, {elapsed:.1f}s < 10s")


def test_a3_exact_convergence(preset_traces):
    t0 = time.perf_counter()
    quad = preset_traces["quad-k1e2-m15"]
    topk = preset_traces["logit-topk-m15"]
    rank = preset_traces["logit-rank-m15"]
    elapsed = time.perf_counter() - t0  # traces already computed; runs are timed below
    ok = (
        quad.status == "converged" and quad.final_rel_err <= 1e-10
        and quad.iterations <= 2000
        and topk.final_rel_err <= 1e-8 and rank.final_rel_err <= 1e-8
    )
    report(3, ok, f"quad preset rel_err {quad.final_rel_err:.1e} <= 1e-10 in "
                  f"{quad.iterations} iters; logistic top-20 {topk.final_rel_err:.1e} "
                  f"and rank-3 {rank.final_rel_err:.1e} <= 1e-8")


def test_a3_runtime_budget():
    t0 = time.perf_counter()
    for name in ("quad-kappa", "logit-topk", "logit-rank"):
        for config in preset_configs(name):
            if config.label in ("quad-k1e2-m15", "logit-topk-m15", "logit-rank-m15"):
                run_experiment(config)
    elapsed = time.perf_counter() - t0
    report("3-runtime", elapsed < 60.0, f"the three convergence runs take {elapsed:.1f}s < 60s")


def test_a4_kappa_independence(quad_setup, stage2_fits):
    fits, _ = stage2_fits
    rhos = [fits[(k, 20)] for k in (10.0, 100.0, 10000.0)]
    spread = max(rhos) / min(rhos)
    newton_ok = spread <= 1.5

    W, problems, stars = quad_setup
    x0 = np.zeros((10, 30))
    iters = {}
    for kappa in (10.0, 10000.0):
        prob, x_star = problems[kappa], stars[kappa]
        alpha = tune_alpha(prob, W, x0, x_star, m=20, target=1e-6, budget=1500)
        trace = gt_run(prob, W, GTParams(alpha=alpha, m=20, max_iters=GT_ITER_CAP,
                                         stop_tol=1e-6), x0, x_star)
        reached = trace.iters_to(1e-6)
        iters[kappa] = reached if reached > 0 else GT_ITER_CAP  # censored at the cap
    gt_ok = iters[10000.0] >= 10 * iters[10.0]
    ok = newton_ok and gt_ok
    report(4, ok, f"stage-two rho at m=20 for kappa 10/1e2/1e4: "
                  f"{rhos[0]:.3f}/{rhos[1]:.3f}/{rhos[2]:.3f} (spread {spread:.2f} <= 1.5); "
                  f"tuned gradient tracking needs {iters[10.0]} iters at kappa=10 vs "
                  f">= {iters[10000.0]} at kappa=1e4 ({iters[10000.0] / iters[10.0]:.0f}x >= 10x)")


def test_a5_m_dependence(stage2_fits):
    fits, sigma = stage2_fits
    rho15 = fits[(100.0, 15)]
    rho20 = fits[(100.0, 20)]
    ratio = rho20 / rho15
    target = sigma ** 2.5
    ok = rho20 < rho15 and target / 3.0 <= ratio <= 3.0 * target
    report(5, ok, f"rho(m=20)={rho20:.3f} < rho(m=15)={rho15:.3f}; "
                  f"ratio {ratio:.3f} within 3x of sigma^(5/2)={target:.3f}")


def test_a6_dac_conservation(preset_traces):
    worst_g, worst_H = 0.0, 0.0
    for trace in preset_traces.values():
        for row in trace.rows[1:]:
            worst_g = max(worst_g, row.dac_g)
            worst_H = max(worst_H, row.dac_H)  # already relative to 1 + ||Hbar||_F
    ok = worst_g <= 1e-11 and worst_H <= 1e-9
    report(6, ok, f"across all {len(preset_traces)} preset runs, every iteration: "
                  f"max |gbar - mean grad|_inf = {worst_g:.1e} <= 1e-11, "
                  f"max Hessian-average gap = {worst_H:.1e} <= 1e-9 (x 1+|Hbar|)")


def _decay_config(family):
    if family == "quadratic":
        pspec = ProblemSpec(family="quadratic", n=10, d=20, kappa=100.0, seed=4)
        comp, m_rounds = ("rank_k", 3), 5
    else:
        pspec = ProblemSpec(family="logistic", n=10, d=10, rho=0.01,
                            m_per_node=30, seed=4)
        comp, m_rounds = ("top_k", 50), 5
    return ExperimentConfig(
        problem=pspec,
        graph=GraphSpec(tau=0.8, seed=6),
        method="newton",
        algorithm=AlgoParams(
            compressor=CompressorSpec(comp[0], d=pspec.d, K=comp[1]),
            alpha=GeometricRamp(0.05, 1.1, 1.0),
            gamma=0.3, m=m_rounds, M=0.0,
            cg_tol=ConstantSchedule(1e-10),
            max_iters=800, stop_tol=0.0,
        ),
        label=f"decay-{family}",
    )


def test_a7_compression_state_decay(preset_traces):
    finals = {}
    for family in ("quadratic", "logistic"):
        trace, _ = run_experiment(_decay_config(family))
        assert trace.rows[-1].rel_err <= 1e-10, "decay run must converge"
        finals[family] = (trace.rows[-1].err_E, trace.rows[-1].diff_Htilde)
    decay_ok = all(e <= 1e-6 and h <= 1e-6 for e, h in finals.values())

    # identity compressor keeps the error store at exactly zero
    config = preset_configs("quad-kappa")[3]  # kappa=1e2, m=15
    problem = build_problem(config.problem)
    _, W = build_mixing(config.graph, config.problem.n)
    params = AlgoParams(
        compressor=CompressorSpec("identity", d=30),
        alpha=GeometricRamp(0.02, 1.1, 1.0), gamma=0.03, m=15, M=0.0,
        cg_tol=ConstantSchedule(1e-10), max_iters=50, stop_tol=0.0,
    )
    state = init_state(problem, np.zeros((10, 30)))
    exact_zero = True
    for k in range(50):
        state, _ = step_efficient(state, problem, W, params, k)
        exact_zero = exact_zero and not state.E.any()
    ok = decay_ok and exact_zero
    q, l = finals["quadratic"], finals["logistic"]
    report(7, ok, f"on converging compressed runs ||E||/||H-Htilde|| fall to "
                  f"{q[0]:.1e}/{q[1]:.1e} (quad) and {l[0]:.1e}/{l[1]:.1e} (logit) <= 1e-6; "
                  f"identity compressor: E == 0 exactly every iteration: {exact_zero}")


def test_a8_cg_contract(preset_traces):
    # contract over every per-node solve of the convergence presets
    worst_rel, worst_sweeps = 0.0, 0
    checked = ("quad-k1e1-m15", "quad-k1e1-m20", "quad-k1e2-m15", "quad-k1e2-m20",
               "logit-topk-m15", "logit-rank-m15")
    for label in checked:
        for row in preset_traces[label].rows[1:]:
            worst_rel = max(worst_rel, row.cg_max_rel_residual)
            worst_sweeps = max(worst_sweeps, row.cg_max_sweeps)
    contract_ok = worst_rel <= 1e-10 and worst_sweeps <= 60

    rng = np.random.default_rng(271)
    agree = 0.0
    for _ in range(100):
        d = int(rng.integers(5, 31))
        G = rng.standard_normal((d, d))
        H = G @ G.T + 0.1 * np.eye(d)
        g = rng.standard_normal(d)
        sol = cg_solve(H, g, c=0.0)
        direct = np.linalg.solve(H, g)
        agree = max(agree, float(np.linalg.norm(sol.direction - direct)
                                 / np.linalg.norm(direct)))
    exact_ok = agree <= 1e-8
    ok = contract_ok and exact_ok
    report(8, ok, f"residual <= c_k||g|| on every solve of {len(checked)} preset runs "
                  f"(worst ratio {worst_rel:.2e}, <= {worst_sweeps} restart sweeps of <= d iters); "
                  f"c=0 vs dense solve on 100 random SPD systems: max rel diff {agree:.1e} <= 1e-8")


def test_a9_consensus_contraction():
    rng = np.random.default_rng(99)
    worst = -np.inf
    total = 0
    for t in range(10):
        n = int(rng.integers(5, 31))
        tau = float(rng.uniform(0.15, 0.9))
        if round(tau * n * (n - 1) / 2) < n - 1:
            tau = 1.0
        mix = metropolis_weights(generate_topology(n, tau, seed=t))
        m = int(rng.integers(1, 6))
        bound = mix.sigma ** m
        for _ in range(100):
            x = rng.standard_normal((n, 4))
            dev_in = np.linalg.norm(x - x.mean(axis=0))
            out = consensus_apply(mix, m, x)
            dev_out = np.linalg.norm(out - out.mean(axis=0))
            worst = max(worst, dev_out / dev_in - bound)
            total += 1
    ok = worst <= 1e-10
    report(9, ok, f"||W^m x - avg|| / ||x - avg|| <= sigma^m + 1e-10 on {total} "
                  f"random stacked vectors across 10 topologies (worst excess {worst:.1e})")


def _strip_wall(text: str) -> str:
    lines = text.splitlines()
    idx = lines[1].split(",").index("wall_time")
    out = [lines[0], lines[1]]
    for line in lines[2:]:
        parts = line.split(",")
        parts[idx] = "_"
        out.append(",".join(parts))
    return "\n".join(out)


def test_a10_determinism(tmp_path):
    ok = True
    details = []
    for name, label in (("quad-kappa", "quad-k1e2-m15"), ("logit-topk", "logit-topk-m15")):
        config = next(c for c in preset_configs(name) if c.label == label)
        _, p1 = run_experiment(config, out_dir=str(tmp_path / "one"))
        _, p2 = run_experiment(config, out_dir=str(tmp_path / "two"))
        same = _strip_wall(open(p1).read()) == _strip_wall(open(p2).read())
        ok = ok and same
        details.append(f"{label}: {'identical' if same else 'DIFFERENT'}")
    report(10, ok, "repeated preset runs byte-identical modulo wall_time ("
           + "; ".join(details) + ")")
