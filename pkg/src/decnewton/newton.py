"""Decentralized Newton iteration with multi-step consensus and compression.

One iteration, per node:

1. move along the local direction and average for ``m`` gossip rounds:
   ``x^{k+1} = W^m (x^k - alpha_k d^k)``;
2. refresh the gradient tracker the same way:
   ``g^{k+1} = W^m (g^k + grad f(x^{k+1}) - grad f(x^k))``;
3. refresh the Hessian tracker through the compression pipeline. The
   difference ``H - Htilde`` is compressed, the leftover accumulates in the
   error store ``E`` and is fed back into the next compression, and the
   reconstruction ``Hhat`` drives one gossip round of Hessian averaging:
   ``H^{k+1} = H^k - gamma (I - W) Hhat^k + hess f(x^{k+1}) - hess f(x^k)``;
4. solve ``(sym(H_i^{k+1}) + M I) d_i^{k+1} = g_i^{k+1}`` per node with
   early-terminated conjugate gradients (residual <= c_k ||g_i||).

``step_reference`` implements the plain form above, which would ship the
uncompressed reconstruction ``Hhat``. ``step_efficient`` is the equivalent
implementation that ships only the two compressed packets per node and
maintains the extra accumulator ``H_tilde_w`` tracking ``W @ H_tilde``; the
two produce the same trajectory up to floating-point reassociation.

Node averages are conserved by construction: the mean of ``g`` equals the
mean of the current local gradients and likewise for ``H`` (dynamic average
consensus), which the metrics record every iteration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .compress import CompressorSpec, compress, delta_bound, payload_bits
from .diagnostics import MetricWeights, RoundMetrics, Trace, fill_state_metrics
from .graph import MixingMatrix, consensus_apply, save_matrix
from .objectives import Problem, batch_gradients, batch_hessians, global_value

__all__ = [
    "ConstantSchedule",
    "GeometricRamp",
    "TwoStageSchedule",
    "AlgoParams",
    "NetworkState",
    "CGBreakdownError",
    "CGResult",
    "init_state",
    "cg_solve",
    "step_reference",
    "step_efficient",
    "run",
    "run_lockstep",
    "max_state_deviation",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e6

# Roundoff-restart guard for CG: recompute the true residual and continue for
# at most this many sweeps of <= d iterations each. Badly conditioned systems
# (condition number ~1e4) genuinely need tens of sweeps in floating point to
# reach relative residuals near 1e-10.
CG_MAX_SWEEPS = 60


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class ConstantSchedule:
    value: float

    def at(self, k: int) -> float:
        return self.value


@dataclass(frozen=True)
class GeometricRamp:
    """min(cap, base * growth**k); the experiments ramp alpha up to 1."""

    base: float
    growth: float
    cap: float = 1.0

    def __post_init__(self):
        if self.base <= 0 or self.growth <= 0 or self.cap <= 0:
            raise ValueError("ramp parameters must be positive")

    def at(self, k: int) -> float:
        if self.growth > 1.0 and k * math.log(self.growth) >= math.log(self.cap / self.base):
            return self.cap  # saturated; also dodges float overflow at huge k
        return min(self.cap, self.base * self.growth ** k)


@dataclass(frozen=True)
class TwoStageSchedule:
    """Constant stage-one value, switching to the stage-two value at a fixed k."""

    stage1: float
    switch_iter: int
    stage2: float = 1.0

    def at(self, k: int) -> float:
        return self.stage1 if k < self.switch_iter else self.stage2


@dataclass(frozen=True)
class AlgoParams:
    """Everything that parameterizes one decentralized Newton run."""

    compressor: CompressorSpec
    alpha: object  # schedule
    gamma: float
    m: object = 1  # positive int, or the string "k" for m growing with k
    M: float = 0.0
    cg_tol: object = ConstantSchedule(1e-10)
    max_iters: int = 2000
    stop_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.m != "k" and (not isinstance(self.m, int) or self.m < 1):
            raise ValueError(f"m must be a positive integer or 'k', got {self.m!r}")
        if self.M < 0:
            raise ValueError(f"M must be non-negative, got {self.M}")

    def rounds(self, k: int) -> int:
        return max(1, k) if self.m == "k" else self.m


# ---------------------------------------------------------------------------
# state


@dataclass
class NetworkState:
    """Per-node iterates stacked on axis 0.

    ``local_grads``/``local_hessians`` cache grad f_i(x_i) and hess f_i(x_i)
    at the current iterate; the tracking updates need the previous values
    and the average-conservation metrics read them directly.
    """

    x: np.ndarray                 # (n, d)
    g: np.ndarray                 # (n, d)
    H: np.ndarray | None = None   # (n, d, d)
    H_tilde: np.ndarray | None = None
    E: np.ndarray | None = None
    H_tilde_w: np.ndarray | None = None
    d_dir: np.ndarray | None = None
    local_grads: np.ndarray | None = None
    local_hessians: np.ndarray | None = None

    def copy(self) -> "NetworkState":
        dup = lambda a: None if a is None else a.copy()
        return NetworkState(
            x=self.x.copy(), g=self.g.copy(), H=dup(self.H),
            H_tilde=dup(self.H_tilde), E=dup(self.E), H_tilde_w=dup(self.H_tilde_w),
            d_dir=dup(self.d_dir), local_grads=dup(self.local_grads),
            local_hessians=dup(self.local_hessians),
        )

    def arrays(self) -> dict:
        out = {"x": self.x, "g": self.g}
        for name in ("H", "H_tilde", "E", "H_tilde_w", "d_dir"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out


def init_state(problem: Problem, x0: np.ndarray) -> NetworkState:
    """Start from x0 with trackers seeded by the true local derivatives.

    The compression stores start at zero: E0 = Htilde0 = 0, which makes the
    efficient variant's accumulator W @ Htilde0 = 0 trivially consistent.
    The direction starts at zero, so the first x-update is pure consensus.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n, problem.d):
        raise ValueError(f"x0 must have shape ({problem.n}, {problem.d}), got {x0.shape}")
    grads = batch_gradients(problem, x0)
    hessians = batch_hessians(problem, x0)
    shape3 = (problem.n, problem.d, problem.d)
    return NetworkState(
        x=x0.copy(),
        g=grads.copy(),
        H=hessians.copy(),
        H_tilde=np.zeros(shape3),
        E=np.zeros(shape3),
        H_tilde_w=np.zeros(shape3),
        d_dir=np.zeros_like(x0),
        local_grads=grads,
        local_hessians=hessians,
    )


# ---------------------------------------------------------------------------
# conjugate gradients


class CGBreakdownError(RuntimeError):
    """Nonpositive curvature or non-finite arithmetic: the system is not SPD."""


@dataclass(frozen=True)
class CGResult:
    direction: np.ndarray
    residual_norm: float
    iterations: int
    sweeps: int


def cg_solve(H_reg: np.ndarray, g: np.ndarray, c: float,
             max_sweeps: int = CG_MAX_SWEEPS, x0: np.ndarray | None = None) -> CGResult:
    """Solve H_reg d = g to relative residual c with conjugate gradients.

    Each sweep runs at most d iterations (exact-arithmetic termination);
    if roundoff leaves the true residual above target, the sweep restarts
    from the recomputed residual, up to ``max_sweeps`` times or until two
    consecutive sweeps stop improving (the roundoff floor). ``c = 0`` solves
    to that floor. ``x0`` warm-starts the iterate (the previous direction is
    an excellent guess late in a run). Raises CGBreakdownError on
    nonpositive curvature.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"cg tolerance must lie in [0, 1], got {c}")
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)) or not np.all(np.isfinite(H_reg)):
        raise CGBreakdownError("non-finite entries in CG input")
    d = g.shape[0]
    gnorm = float(np.linalg.norm(g))
    x = np.zeros_like(g) if x0 is None else np.array(x0, dtype=float)
    if gnorm == 0.0:
        return CGResult(direction=np.zeros_like(g), residual_norm=0.0, iterations=0, sweeps=0)
    target = c * gnorm
    floor = 1e-14 * gnorm
    tol = max(target, floor)
    total_iters = 0
    res = gnorm
    stalled = 0
    for sweep in range(1, max_sweeps + 1):
        r = g - H_reg @ x
        res = float(np.linalg.norm(r))
        if res <= tol:
            return CGResult(x, res, total_iters, sweep - 1)
        prev_res = res
        p = r.copy()
        rs = float(r @ r)
        for _ in range(d):
            Hp = H_reg @ p
            curv = float(p @ Hp)
            if not np.isfinite(curv) or curv <= 0.0:
                raise CGBreakdownError(
                    f"nonpositive curvature {curv:.3e} at CG iteration {total_iters}"
                )
            a = rs / curv
            x += a * p
            r -= a * Hp
            total_iters += 1
            rs_new = float(r @ r)
            if np.sqrt(rs_new) <= 0.5 * tol:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        if not np.all(np.isfinite(x)):
            raise CGBreakdownError("CG iterate became non-finite")
        res = float(np.linalg.norm(g - H_reg @ x))
        if res <= tol:
            return CGResult(x, res, total_iters, sweep)
        stalled = stalled + 1 if res >= 0.9 * prev_res else 0
        if stalled >= 2:
            break
    return CGResult(x, res, total_iters, max_sweeps)


def _solve_directions(H: np.ndarray, g: np.ndarray, M: float, ck: float, L1: float,
                      warm: np.ndarray | None = None):
    """Per-node CG solves on the symmetrized regularized Hessians.

    Compressed tracking can leave H_i slightly asymmetric (top-k keeps
    different entries above and below the diagonal), so CG runs on
    (H + H^T)/2 + M I, warm-started from the previous direction. Nodes whose
    system exhibits nonpositive curvature fall back to the scaled gradient
    g_i / L1 for this iteration.
    """
    n, d = g.shape
    directions = np.empty_like(g)
    eye = np.eye(d)
    fallbacks = 0
    max_rel = 0.0
    max_iters = 0
    max_sweeps = 0
    asym = 0.0
    for i in range(n):
        Hi = H[i]
        asym = max(asym, float(np.linalg.norm(Hi - Hi.T)))
        H_reg = 0.5 * (Hi + Hi.T) + M * eye
        try:
            result = cg_solve(H_reg, g[i], ck, x0=None if warm is None else warm[i])
        except CGBreakdownError:
            directions[i] = g[i] / L1
            fallbacks += 1
            continue
        directions[i] = result.direction
        gnorm = float(np.linalg.norm(g[i]))
        if gnorm > 0:
            max_rel = max(max_rel, result.residual_norm / gnorm)
        max_iters = max(max_iters, result.iterations)
        max_sweeps = max(max_sweeps, result.sweeps)
    return directions, fallbacks, max_rel, max_iters, max_sweeps, asym


# ---------------------------------------------------------------------------
# one iteration, both variants


def _compress_stack(spec: CompressorSpec, blocks: np.ndarray):
    out = np.empty_like(blocks)
    for i in range(blocks.shape[0]):
        out[i] = compress(spec, blocks[i]).dense
    return out


def _xg_updates(state, problem, W, m, alpha):
    x_new = consensus_apply(W, m, state.x - alpha * state.d_dir)
    grads_new = batch_gradients(problem, x_new)
    g_new = consensus_apply(W, m, state.g + grads_new - state.local_grads)
    return x_new, grads_new, g_new


def _finish_step(state, problem, W, params, k, x_new, grads_new, g_new,
                 E_new, H_tilde_new, H_tilde_w_new, H_new, hess_new, bits):
    ck = params.cg_tol.at(k)
    d_new, fallbacks, max_rel, max_it, max_sw, asym = _solve_directions(
        H_new, g_new, params.M, ck, problem.L1, warm=state.d_dir
    )
    new_state = NetworkState(
        x=x_new, g=g_new, H=H_new, H_tilde=H_tilde_new, E=E_new,
        H_tilde_w=H_tilde_w_new, d_dir=d_new,
        local_grads=grads_new, local_hessians=hess_new,
    )
    row = RoundMetrics(
        iter=k + 1, alpha_k=params.alpha.at(k), c_k=ck, bits=bits,
        fallback_count=fallbacks, cg_max_rel_residual=max_rel,
        cg_max_iters=max_it, cg_max_sweeps=max_sw, hess_asymmetry=asym,
    )
    return new_state, row


def step_reference(state: NetworkState, problem: Problem, W: MixingMatrix,
                   params: AlgoParams, k: int):
    """Plain-form iteration: Hessian averaging applies W to the
    reconstruction directly (communication-heavy, analysis-friendly)."""
    m = params.rounds(k)
    alpha = params.alpha.at(k)
    x_new, grads_new, g_new = _xg_updates(state, problem, W, m, alpha)

    diff = state.H - state.H_tilde
    Q1 = _compress_stack(params.compressor, diff)
    fed = state.E + diff
    Q2 = _compress_stack(params.compressor, fed)
    E_new = fed - Q2
    H_tilde_new = state.H_tilde + Q1
    H_hat = state.H_tilde + Q2
    hess_new = batch_hessians(problem, x_new)
    H_new = state.H - params.gamma * (H_hat - consensus_apply(W, 1, H_hat)) \
        + hess_new - state.local_hessians
    H_tilde_w_new = state.H_tilde_w + consensus_apply(W, 1, Q1)

    n, d = state.x.shape
    bits = n * (2 * m * d * 64 + d * d * 64)  # ships the raw reconstruction
    return _finish_step(state, problem, W, params, k, x_new, grads_new, g_new,
                        E_new, H_tilde_new, H_tilde_w_new, H_new, hess_new, bits)


def step_efficient(state: NetworkState, problem: Problem, W: MixingMatrix,
                   params: AlgoParams, k: int):
    """Communication-efficient iteration: only the two compressed packets
    move per node; the accumulator H_tilde_w supplies W @ Hhat."""
    m = params.rounds(k)
    alpha = params.alpha.at(k)
    x_new, grads_new, g_new = _xg_updates(state, problem, W, m, alpha)

    diff = state.H - state.H_tilde
    Q1 = _compress_stack(params.compressor, diff)
    Q2 = _compress_stack(params.compressor, state.E + diff)
    H_tilde_new = state.H_tilde + Q1
    H_tilde_w_new = state.H_tilde_w + consensus_apply(W, 1, Q1)
    H_hat = state.H_tilde + Q2
    H_hat_w = state.H_tilde_w + consensus_apply(W, 1, Q2)
    E_new = state.E + diff - Q2
    hess_new = batch_hessians(problem, x_new)
    H_new = state.H - params.gamma * (H_hat - H_hat_w) + hess_new - state.local_hessians

    n, d = state.x.shape
    bits = n * (2 * m * d * 64 + 2 * payload_bits(params.compressor))
    return _finish_step(state, problem, W, params, k, x_new, grads_new, g_new,
                        E_new, H_tilde_new, H_tilde_w_new, H_new, hess_new, bits)


_STEPS = {"reference": step_reference, "efficient": step_efficient}


# ---------------------------------------------------------------------------
# full runs


def run(problem: Problem, W: MixingMatrix, params: AlgoParams, x0: np.ndarray,
        oracle_xstar: np.ndarray, variant: str = "efficient",
        dump_iters=(), dump_dir=None) -> Trace:
    """Iterate until rel_err <= stop_tol, divergence, or max_iters.

    rel_err uses the stacked squared distance against the supplied oracle
    minimizer. Blows past DIVERGENCE_LIMIT or non-finite state abort the
    run with status "diverged".
    """
    step = _STEPS[variant]
    x_star = np.asarray(oracle_xstar, dtype=float)
    state = init_state(problem, x0)
    den = float(np.linalg.norm(state.x - x_star[None, :]) ** 2)
    f_star = global_value(problem, x_star)
    weights = MetricWeights(
        sigma=W.sigma, m=params.rounds(0), delta=delta_bound(params.compressor),
        L1=problem.L1, L2=problem.L2, mu=problem.mu, M1=40.0 * problem.mu / 41.0,
    )
    first = RoundMetrics(iter=0)
    fill_state_metrics(first, state, problem, x_star, weights,
                       ck=0.0, rel_err_den=den, f_star=f_star)
    rows = [first]
    bits_cum = 0
    status = "max_iters"
    note = ""
    dump_iters = set(dump_iters)
    for k in range(params.max_iters):
        t0 = time.perf_counter()
        state, row = step(state, problem, W, params, k)
        wall = time.perf_counter() - t0
        w_k = weights if params.m != "k" else replace(weights, m=params.rounds(k))
        fill_state_metrics(row, state, problem, x_star, w_k,
                           ck=row.c_k, rel_err_den=den, f_star=f_star)
        bits_cum += row.bits
        row.bits_cum = bits_cum
        row.wall_time = wall
        rows.append(row)
        if dump_dir is not None and (k + 1) in dump_iters:
            save_matrix(f"{dump_dir}/state_x_iter{k + 1:05d}.txt", state.x)
        if not np.isfinite(row.rel_err) or row.rel_err > DIVERGENCE_LIMIT:
            status = "diverged"
            note = f"relative error {row.rel_err:.3e} exceeded {DIVERGENCE_LIMIT:.0e} at iteration {k + 1}"
            break
        if row.rel_err <= params.stop_tol:
            status = "converged"
            break
    return Trace(rows=rows, status=status, note=note)


def max_state_deviation(a: NetworkState, b: NetworkState) -> float:
    """Largest entrywise difference across all shared state arrays."""
    arrays_a, arrays_b = a.arrays(), b.arrays()
    dev = 0.0
    for name, arr in arrays_a.items():
        if name in arrays_b:
            dev = max(dev, float(np.max(np.abs(arr - arrays_b[name]))))
    return dev


def run_lockstep(problem: Problem, W: MixingMatrix, params: AlgoParams,
                 x0: np.ndarray, iters: int, resync: bool = True):
    """Compare the two variants in lockstep; returns per-iteration deviations.

    With ``resync`` (the default) both steps start from the same state each
    iteration and the trajectory continues from the efficient output, so the
    deviations measure the post-state equivalence of single steps. Without
    resync the trajectories evolve independently; note that rank/top
    truncation is discontinuous (near-crossing singular values), so any
    roundoff-level divergence can be amplified arbitrarily inside the
    error-feedback stores over a long horizon even though the iterates
    themselves stay put.
    """
    ref = init_state(problem, x0)
    eff = ref.copy() if not resync else None
    deviations = []
    for k in range(iters):
        if resync:
            ref_next, _ = step_reference(ref, problem, W, params, k)
            eff_next, _ = step_efficient(ref, problem, W, params, k)
            deviations.append(max_state_deviation(ref_next, eff_next))
            ref = eff_next
        else:
            ref, _ = step_reference(ref, problem, W, params, k)
            eff, _ = step_efficient(eff, problem, W, params, k)
            deviations.append(max_state_deviation(ref, eff))
    return deviations
