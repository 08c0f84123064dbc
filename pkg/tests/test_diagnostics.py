import math

import numpy as np
import pytest

from conftest import quad_params
from decnewton.diagnostics import (
    MetricWeights,
    RoundMetrics,
    Trace,
    compute_metrics,
    fit_rate,
    gamma_cap,
    stage2_m_threshold,
    stage_two_window,
    theoretical_caps,
)
from decnewton.newton import (
    AlgoParams,
    ConstantSchedule,
    NetworkState,
    init_state,
    run,
)
from decnewton.objectives import Problem, QuadraticInstance, batch_gradients


def scalar_problem():
    q = np.array([2.0, 3.0])
    p = np.array([1.0, -2.0])
    data = QuadraticInstance(Q=q.reshape(2, 1, 1), p=p.reshape(2, 1))
    return Problem(family="quadratic", n=2, d=1, data=data, L1=3.0, L2=0.5, mu=2.5)


def make_trace(rel_errs, alphas=None):
    rows = []
    for k, v in enumerate(rel_errs):
        rows.append(RoundMetrics(iter=k, rel_err=v,
                                 alpha_k=1.0 if alphas is None else alphas[k]))
    return Trace(rows=rows)


def test_metrics_vanish_at_exact_optimum(quad_problem, quad_xstar):
    n, d = quad_problem.n, quad_problem.d
    state = NetworkState(
        x=np.tile(quad_xstar, (n, 1)),
        g=np.zeros((n, d)),
        H=np.tile(quad_problem.data.Q.mean(axis=0), (n, 1, 1)),
        H_tilde=np.tile(quad_problem.data.Q.mean(axis=0), (n, 1, 1)),
        E=np.zeros((n, d, d)),
        local_grads=batch_gradients(quad_problem, np.tile(quad_xstar, (n, 1))),
    )
    w = MetricWeights(sigma=0.9, m=15, delta=0.05, L1=quad_problem.L1,
                      L2=0.0, mu=quad_problem.mu, M1=1.0)
    row = compute_metrics(state, quad_problem, quad_xstar, w, rel_err_den=1.0)
    assert row.rel_err <= 1e-25
    assert row.u1 == pytest.approx(0.0, abs=1e-12)
    assert row.delta_k == 0.0
    assert row.cons_x <= 1e-12 and row.track_g == 0.0


def test_u2_vanishes_for_consensual_uncompressed_hessians(quad_problem, quad_xstar):
    n, d = quad_problem.n, quad_problem.d
    Qbar = quad_problem.data.Q.mean(axis=0)
    state = NetworkState(
        x=np.zeros((n, d)), g=np.zeros((n, d)),
        H=np.tile(Qbar, (n, 1, 1)), H_tilde=np.tile(Qbar, (n, 1, 1)),
        E=np.zeros((n, d, d)),
    )
    w = MetricWeights(sigma=0.9, m=15, delta=0.05, L1=quad_problem.L1,
                      L2=0.0, mu=quad_problem.mu, M1=1.0)
    row = compute_metrics(state, quad_problem, quad_xstar, w, rel_err_den=1.0)
    scale = np.linalg.norm(Qbar)
    assert row.u2 <= 1e-12 * scale
    assert row.err_E == 0.0 and row.diff_Htilde == 0.0
    assert row.track_H <= 1e-12 * scale  # averaging identical blocks rounds


def test_u1_u3_scalar_hand_evaluation():
    prob = scalar_problem()
    x = np.array([[0.5], [-0.25]])
    g = np.array([[2.0], [-2.75]])
    state = NetworkState(x=x, g=g)
    sigma, m = 0.8, 4
    w = MetricWeights(sigma=sigma, m=m, delta=0.05, L1=prob.L1, L2=prob.L2,
                      mu=prob.mu, M1=1.0)
    x_star = np.array([-(0.5 * (1.0 - 2.0)) / (0.5 * (2.0 + 3.0))])  # -pbar/qbar
    row = compute_metrics(state, prob, x_star, w, rel_err_den=1.0, ck=0.0)

    xbar = 0.125
    cons2 = (0.5 - xbar) ** 2 + (-0.25 - xbar) ** 2
    gbar = (2.0 - 2.75) / 2
    track2 = (2.0 - gbar) ** 2 + (-2.75 - gbar) ** 2
    qbar, pbar = 2.5, -0.5
    fbar = 0.5 * qbar * xbar**2 + pbar * xbar
    fstar = 0.5 * qbar * x_star[0] ** 2 + pbar * x_star[0]
    u1 = cons2 + (1 - sigma**2) ** 2 / 50 * track2 / prob.L1**2 \
        + 2 * sigma ** (m - 1) * 2 * (fbar - fstar) / prob.L1
    assert row.u1 == pytest.approx(u1, rel=1e-12)
    u3 = math.sqrt(cons2) + sigma ** (-m / 4) * math.sqrt(track2) / prob.L1 \
        + 0.5 * sigma ** (-3 * m / 4) * math.sqrt(2) * abs(xbar - x_star[0])
    assert row.u3 == pytest.approx(u3, rel=1e-12)
    assert row.delta_k == pytest.approx(prob.L2 / (2 * prob.mu) * abs(xbar - x_star[0]))


def test_eps_k_formula(quad_problem, quad_xstar):
    n, d = quad_problem.n, quad_problem.d
    state = init_state(quad_problem, np.zeros((n, d)))
    w = MetricWeights(sigma=0.9, m=15, delta=0.05, L1=quad_problem.L1,
                      L2=2.0, mu=quad_problem.mu, M1=0.7)
    ck = 1e-3
    row = compute_metrics(state, quad_problem, quad_xstar, w, rel_err_den=1.0, ck=ck)
    track_H = np.linalg.norm(state.H - state.H.mean(axis=0))
    expected = (2.0 / math.sqrt(n) * row.cons_x + track_H / math.sqrt(n)
                + ck * quad_problem.mu) / 0.7
    assert row.eps_k == pytest.approx(expected, rel=1e-12)


def test_fit_rate_exact_geometric():
    trace = make_trace([0.25**k for k in range(30)])
    fit = fit_rate(trace, (0, 29))
    assert fit.rho_hat == pytest.approx(0.5, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_rate_unsquared_column():
    rows = [RoundMetrics(iter=k, rel_err=1.0, cons_x=0.7**k) for k in range(20)]
    fit = fit_rate(Trace(rows=rows), (0, 19), field="cons_x")
    assert fit.rho_hat == pytest.approx(0.7, abs=1e-6)


def test_fit_rate_rejects_degenerate_windows():
    with pytest.raises(ValueError):
        fit_rate(make_trace([0.5, 0.25, 0.125]), (0, 2))  # too short
    with pytest.raises(ValueError):
        fit_rate(make_trace([1.0] * 10), (0, 9))  # constant
    with pytest.raises(ValueError):
        fit_rate(make_trace([0.5, 0.4, 0.0, 0.2, 0.1, 0.05]), (0, 5))  # nonpositive


def test_pure_consensus_rate_matches_sigma_m(quad_problem, quad_graph, quad_xstar):
    _, W = quad_graph
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((quad_problem.n, quad_problem.d))
    m = 2
    params = quad_params(alpha=ConstantSchedule(0.0), m=m, max_iters=60, stop_tol=0.0)
    trace = run(quad_problem, W, params, x0, quad_xstar)
    fit = fit_rate(trace, (5, 55), field="cons_x")
    assert fit.rho_hat == pytest.approx(W.sigma**m, rel=0.05)


def test_stage_two_window():
    alphas = [0.0] * 5 + [1.0] * 20
    rels = [1e-2 * 0.5**k for k in range(25)]
    trace = make_trace(rels, alphas)
    lo, hi = stage_two_window(trace, floor=1e-30)
    assert lo == 7  # skips the first two saturated rows
    assert hi == 24
    with pytest.raises(ValueError):
        stage_two_window(make_trace([1.0] * 5, [0.5] * 5))


def test_gamma_cap_value():
    # delta = 0.05, sigma = 0.9 -> 0.05^2 * 0.1 / 50 = 5e-6
    assert gamma_cap(0.05, 0.9) == pytest.approx(5e-6)


def test_stage2_m_threshold_values():
    assert stage2_m_threshold(10.0, 0.5) == pytest.approx(4 * math.log(40) / math.log(2), rel=1e-12)
    assert stage2_m_threshold(10.0, 0.5) == pytest.approx(21.288, abs=0.01)
    assert stage2_m_threshold(25.0, 0.0) == 0.0


def test_theoretical_caps_report(quad_problem, quad_graph, quad_xstar):
    _, W = quad_graph
    state = init_state(quad_problem, np.zeros((quad_problem.n, quad_problem.d)))
    w = MetricWeights(sigma=W.sigma, m=15, delta=0.05, L1=quad_problem.L1,
                      L2=quad_problem.L2, mu=quad_problem.mu, M1=1.0)
    row = compute_metrics(state, quad_problem, quad_xstar, w, rel_err_den=1.0)
    report = theoretical_caps(quad_problem, W.sigma, 15, 0.05, row.u1, row.u2)
    assert report.gamma_cap == pytest.approx(gamma_cap(0.05, W.sigma))
    assert report.M_lower > 0
    assert report.alpha_cap_stage1 > 0
    assert report.cg_cap_stage2 == pytest.approx(W.sigma**7.5 / (41.0 * quad_problem.kappa_F))
    text = report.render()
    assert "alpha <=" in text and "gamma <=" in text and "K  >=" in text


def test_identity_compressor_tracking_decay():
    # a well-connected graph and a healthy consensus step drive the Hessian
    # tracking error below 1e-6 while the error store stays exactly zero
    from decnewton.graph import generate_topology, metropolis_weights
    from decnewton.objectives import centralized_solve, make_quadratic
    from decnewton.compress import CompressorSpec
    from decnewton.newton import GeometricRamp

    prob = make_quadratic(8, 12, 100.0, seed=4)
    W = metropolis_weights(generate_topology(8, 0.8, seed=6))
    x_star = centralized_solve(prob, tol=1e-12)
    params = AlgoParams(
        compressor=CompressorSpec("identity", d=12),
        alpha=GeometricRamp(0.05, 1.1, 1.0),
        gamma=0.5, m=4, M=0.0,
        cg_tol=ConstantSchedule(1e-10),
        max_iters=400, stop_tol=0.0,
    )
    trace = run(prob, W, params, np.zeros((8, 12)), x_star)
    assert trace.rows[-1].rel_err <= 1e-12
    assert trace.rows[-1].track_H <= 1e-6
    assert all(r.err_E == 0.0 for r in trace.rows)


def test_u1_monotone_under_stage1_caps(quad_problem, quad_graph, quad_xstar):
    # constant small step below the cap, M above its bound: u1 never grows
    # by more than one percent per iteration
    _, W = quad_graph
    state = init_state(quad_problem, np.zeros((quad_problem.n, quad_problem.d)))
    w = MetricWeights(sigma=W.sigma, m=15, delta=0.05, L1=quad_problem.L1,
                      L2=quad_problem.L2, mu=quad_problem.mu, M1=1.0)
    den = float(np.linalg.norm(np.zeros((quad_problem.n, quad_problem.d)) - quad_xstar) ** 2)
    row0 = compute_metrics(state, quad_problem, quad_xstar, w, rel_err_den=den)
    caps = theoretical_caps(quad_problem, W.sigma, 15, 0.05, row0.u1, row0.u2)
    params = quad_params(
        alpha=ConstantSchedule(caps.alpha_cap_stage1),
        gamma=min(caps.gamma_cap, 1.0),
        M=caps.M_lower * 1.5,
        cg_tol=ConstantSchedule(min(caps.cg_cap_stage1, 1.0)),
        max_iters=50,
        stop_tol=0.0,
    )
    trace = run(quad_problem, W, params, np.zeros((quad_problem.n, quad_problem.d)),
                quad_xstar)
    u1 = [r.u1 for r in trace.rows]
    assert all(b <= 1.01 * a for a, b in zip(u1, u1[1:]))
