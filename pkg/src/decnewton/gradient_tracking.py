"""First-order gradient-tracking baseline.

Each node descends along a tracker of the network-average gradient and both
the iterates and the trackers are averaged with ``m`` gossip rounds per
iteration:

    x' = W^m (x - alpha g),    g' = W^m (g + grad f(x') - grad f(x)),

with ``g`` initialized to the local gradients so the tracker mean equals the
mean local gradient at every iteration. The constant step size is the only
knob that matters; ``tune_alpha`` picks it by golden-section search on a log
grid, scoring candidates by iterations-to-target (with a smooth penalty for
runs that fall short).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import MetricWeights, RoundMetrics, Trace, fill_state_metrics
from .graph import MixingMatrix, consensus_apply
from .newton import DIVERGENCE_LIMIT, NetworkState
from .objectives import Problem, batch_gradients, global_value

__all__ = ["GTParams", "gt_step", "gt_run", "tune_alpha"]


@dataclass(frozen=True)
class GTParams:
    alpha: float
    m: int = 1
    max_iters: int = 5000
    stop_tol: float = 1e-10

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


def gt_step(x: np.ndarray, g: np.ndarray, problem: Problem, W: MixingMatrix,
            params: GTParams, grads_x: np.ndarray | None = None):
    """One tracking iteration; returns (x', g', grad f(x')) so callers can
    chain steps without re-evaluating gradients."""
    if grads_x is None:
        grads_x = batch_gradients(problem, x)
    x_new = consensus_apply(W, params.m, x - params.alpha * g)
    grads_new = batch_gradients(problem, x_new)
    g_new = consensus_apply(W, params.m, g + grads_new - grads_x)
    if not np.all(np.isfinite(x_new)) or not np.all(np.isfinite(g_new)):
        raise FloatingPointError("gradient-tracking iterate became non-finite")
    return x_new, g_new, grads_new


def gt_run(problem: Problem, W: MixingMatrix, params: GTParams, x0: np.ndarray,
           oracle_xstar: np.ndarray) -> Trace:
    """Full gradient-tracking run with the shared trace schema.

    Hessian-side metrics are NaN (the method carries no curvature state);
    bits count the x and g exchanges, m * d * 64 each per node per iteration.
    """
    x_star = np.asarray(oracle_xstar, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (problem.n, problem.d):
        raise ValueError(f"x0 must have shape ({problem.n}, {problem.d}), got {x.shape}")
    grads = batch_gradients(problem, x)
    g = grads.copy()
    den = float(np.linalg.norm(x - x_star[None, :]) ** 2)
    f_star = global_value(problem, x_star)
    weights = MetricWeights(
        sigma=W.sigma, m=params.m, delta=1.0,
        L1=problem.L1, L2=problem.L2, mu=problem.mu, M1=40.0 * problem.mu / 41.0,
    )
    bits_per_iter = problem.n * 2 * params.m * problem.d * 64

    def metrics(k, x, g, grads, bits_cum):
        state = NetworkState(x=x, g=g, local_grads=grads)
        row = RoundMetrics(iter=k, alpha_k=params.alpha if k > 0 else 0.0, bits_cum=bits_cum)
        fill_state_metrics(row, state, problem, x_star, weights,
                           rel_err_den=den, f_star=f_star)
        return row

    rows = [metrics(0, x, g, grads, 0)]
    status = "max_iters"
    note = ""
    for k in range(params.max_iters):
        try:
            x, g, grads = gt_step(x, g, problem, W, params, grads)
        except FloatingPointError:
            status = "diverged"
            note = f"non-finite iterate at iteration {k + 1}"
            break
        row = metrics(k + 1, x, g, grads, (k + 1) * bits_per_iter)
        rows.append(row)
        if not np.isfinite(row.rel_err) or row.rel_err > DIVERGENCE_LIMIT:
            status = "diverged"
            note = f"relative error {row.rel_err:.3e} exceeded {DIVERGENCE_LIMIT:.0e}"
            break
        if row.rel_err <= params.stop_tol:
            status = "converged"
            break
    return Trace(rows=rows, status=status, note=note)


def tune_alpha(problem: Problem, W: MixingMatrix, x0: np.ndarray,
               oracle_xstar: np.ndarray, m: int = 1, target: float = 1e-6,
               budget: int = 1500, evals: int = 22) -> float:
    """Golden-section search over log10(alpha) for the fastest run to target.

    Candidates that converge within the budget score by iteration count.
    Candidates still running score by iterations-to-target extrapolated from
    the tail slope of log(rel_err). The grid tops out at 2/L1: steps beyond
    that can be unstable with a growth rate too slow for any budget-limited
    run to notice, while 2/L1 <= 2/lambda_max(average Hessian) keeps the
    near-centralized regime contractive.
    """
    hi = math.log10(2.0 / problem.L1)
    lo = hi - 5.0

    def score(log_alpha: float) -> float:
        alpha = 10.0 ** log_alpha
        params = GTParams(alpha=alpha, m=m, max_iters=budget, stop_tol=target)
        trace = gt_run(problem, W, params, x0, oracle_xstar)
        if trace.status == "diverged":
            return 1e12 * (1.0 + log_alpha - lo)
        if trace.final_rel_err <= target:
            return float(trace.iterations)
        tail = [r for r in trace.rows[len(trace.rows) // 2:] if r.rel_err > 0]
        if len(tail) >= 5:
            ks = np.array([r.iter for r in tail], dtype=float)
            ys = np.log([r.rel_err for r in tail])
            slope = float(np.polyfit(ks, ys, 1)[0])
            if slope < 0:
                shortfall = math.log(trace.final_rel_err) - math.log(target)
                return float(trace.iterations + shortfall / -slope)
        return 1e9 * (1.0 + log_alpha - lo)  # flat or growing tail

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = score(c), score(d)
    for _ in range(evals - 2):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = score(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = score(d)
    best = c if fc <= fd else d
    return float(10.0 ** best)
