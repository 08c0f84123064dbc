"""Finite-sum problem instances with per-node gradient/Hessian evaluators.

Two families:

* quadratic: ``f_i(x) = 0.5 x^T Q_i x + p_i^T x`` with every ``Q_i``
  symmetric positive definite and the average ``Qbar`` conditioned exactly
  to a requested ``kappa``.
* logistic: ``f_i(x) = (rho/2) ||x||^2 + n * sum_j ln(1 + exp(-(o_ij^T x) p_ij))``.
  The ``n`` multiplier on the sample loss and the per-node split of the
  ridge term make the network average ``(1/n) sum_i f_i`` equal to the
  plain (un-averaged) regularized logistic loss over all samples.

A ``Problem`` carries the instance data plus the smoothness/convexity
constants L1 (gradient Lipschitz), L2 (Hessian Lipschitz), and mu (strong
convexity of the average objective F). ``centralized_solve`` is the oracle
that pre-computes the minimizer of F to high accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "Problem",
    "QuadraticInstance",
    "LogisticInstance",
    "make_quadratic",
    "make_logistic",
    "eval_gradient",
    "eval_hessian",
    "batch_gradients",
    "batch_hessians",
    "global_value",
    "global_gradient",
    "global_hessian",
    "centralized_solve",
    "estimate_constants",
    "save_problem",
    "load_problem",
]


@dataclass(frozen=True)
class QuadraticInstance:
    Q: np.ndarray  # (n, d, d), each symmetric positive definite
    p: np.ndarray  # (n, d)


@dataclass(frozen=True)
class LogisticInstance:
    samples: np.ndarray  # (n, m, d)
    labels: np.ndarray   # (n, m), entries in {-1, +1}
    rho: float


@dataclass(frozen=True)
class Problem:
    """Immutable finite-sum instance: data plus (L1, L2, mu)."""

    family: str
    n: int
    d: int
    data: object
    L1: float
    L2: float
    mu: float
    seed: int | None = None

    @property
    def kappa_F(self) -> float:
        return self.L1 / self.mu


def make_quadratic(n: int, d: int, kappa_target: float, seed: int, spread: float = 0.4) -> Problem:
    """Quadratic instance whose average Hessian has condition number kappa_target.

    All nodes share one random eigenbasis. The mean spectrum is log-uniform
    on [1, kappa] with the extremes pinned to 1 and kappa, and each node
    perturbs it with a zero-mean multiplicative jitter, so ``Qbar`` hits the
    target condition number exactly while every ``Q_i`` stays positive
    definite and the nodes remain genuinely heterogeneous.
    """
    if kappa_target < 1:
        raise ValueError(f"kappa_target must be >= 1, got {kappa_target}")
    if d == 1 and kappa_target != 1:
        raise ValueError("a 1-dimensional quadratic cannot have kappa > 1")
    if not 0 <= spread < 0.5:
        raise ValueError(f"jitter spread must lie in [0, 0.5), got {spread}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((d, d))
    U, R = np.linalg.qr(G)
    U = U * np.sign(np.diag(R))  # make the QR factor deterministic in sign
    s = np.exp(rng.uniform(0.0, np.log(kappa_target) if kappa_target > 1 else 0.0, size=d))
    s = np.sort(s)
    if d >= 2:
        s[0] = 1.0
        s[-1] = kappa_target
    eta = rng.uniform(-spread, spread, size=(n, d))
    eta -= eta.mean(axis=0)  # exact zero mean per direction -> cond(Qbar) exact
    lam = s[None, :] * (1.0 + eta)
    Q = np.einsum("ij,nj,kj->nik", U, lam, U)
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    p = rng.standard_normal((n, d))
    data = QuadraticInstance(Q=Q, p=p)
    L1, L2, mu = _constants_quadratic(data)
    return Problem(family="quadratic", n=n, d=d, data=data, L1=L1, L2=L2, mu=mu, seed=seed)


def make_logistic(n: int, d: int, m_per_node: int, rho: float, seed: int) -> Problem:
    """Regularized logistic regression with standard Gaussian features."""
    if m_per_node < 1:
        raise ValueError(f"m_per_node must be >= 1, got {m_per_node}")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((n, m_per_node, d))
    labels = rng.choice(np.array([-1.0, 1.0]), size=(n, m_per_node))
    data = LogisticInstance(samples=samples, labels=labels, rho=rho)
    L1, L2, mu = _constants_logistic(data)
    return Problem(family="logistic", n=n, d=d, data=data, L1=L1, L2=L2, mu=mu, seed=seed)


# ---------------------------------------------------------------------------
# evaluators


def _check_index(problem: Problem, i: int) -> None:
    if not 0 <= i < problem.n:
        raise IndexError(f"node index {i} out of range for n={problem.n}")


def local_value(problem: Problem, i: int, x: np.ndarray) -> float:
    _check_index(problem, i)
    x = np.asarray(x, dtype=float)
    if problem.family == "quadratic":
        Q, p = problem.data.Q[i], problem.data.p[i]
        return float(0.5 * x @ Q @ x + p @ x)
    O, y, rho = problem.data.samples[i], problem.data.labels[i], problem.data.rho
    z = (O @ x) * y
    # ln(1 + exp(-z)) evaluated stably
    return float(0.5 * rho * x @ x + problem.n * np.logaddexp(0.0, -z).sum())


def eval_gradient(problem: Problem, i: int, x: np.ndarray) -> np.ndarray:
    _check_index(problem, i)
    x = np.asarray(x, dtype=float)
    if problem.family == "quadratic":
        return problem.data.Q[i] @ x + problem.data.p[i]
    O, y, rho = problem.data.samples[i], problem.data.labels[i], problem.data.rho
    z = (O @ x) * y
    return rho * x - problem.n * ((expit(-z) * y) @ O)


def eval_hessian(problem: Problem, i: int, x: np.ndarray) -> np.ndarray:
    _check_index(problem, i)
    x = np.asarray(x, dtype=float)
    if problem.family == "quadratic":
        return problem.data.Q[i].copy()
    O, y, rho = problem.data.samples[i], problem.data.labels[i], problem.data.rho
    z = (O @ x) * y
    w = expit(z) * expit(-z)
    return rho * np.eye(problem.d) + problem.n * ((O.T * w) @ O)


def batch_gradients(problem: Problem, xb: np.ndarray) -> np.ndarray:
    """Gradients of every f_i at its own block: xb (n, d) -> (n, d)."""
    xb = np.asarray(xb, dtype=float)
    if problem.family == "quadratic":
        return np.einsum("nij,nj->ni", problem.data.Q, xb) + problem.data.p
    O, y, rho = problem.data.samples, problem.data.labels, problem.data.rho
    z = np.einsum("nmd,nd->nm", O, xb) * y
    return rho * xb - problem.n * np.einsum("nm,nmd->nd", expit(-z) * y, O)


def batch_hessians(problem: Problem, xb: np.ndarray) -> np.ndarray:
    """Hessians of every f_i at its own block: xb (n, d) -> (n, d, d)."""
    xb = np.asarray(xb, dtype=float)
    if problem.family == "quadratic":
        return problem.data.Q.copy()
    O, y, rho = problem.data.samples, problem.data.labels, problem.data.rho
    z = np.einsum("nmd,nd->nm", O, xb) * y
    w = expit(z) * expit(-z)
    H = problem.n * np.einsum("nm,nmd,nme->nde", w, O, O)
    H += rho * np.eye(problem.d)[None, :, :]
    return H


def global_value(problem: Problem, x: np.ndarray) -> float:
    """F(x) = (1/n) sum_i f_i(x) at one common point."""
    x = np.asarray(x, dtype=float)
    if problem.family == "quadratic":
        Qbar = problem.data.Q.mean(axis=0)
        pbar = problem.data.p.mean(axis=0)
        return float(0.5 * x @ Qbar @ x + pbar @ x)
    O, y, rho = problem.data.samples, problem.data.labels, problem.data.rho
    z = np.einsum("nmd,d->nm", O, x) * y
    return float(0.5 * rho * x @ x + np.logaddexp(0.0, -z).sum())


def global_gradient(problem: Problem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if problem.family == "quadratic":
        return problem.data.Q.mean(axis=0) @ x + problem.data.p.mean(axis=0)
    O, y, rho = problem.data.samples, problem.data.labels, problem.data.rho
    z = np.einsum("nmd,d->nm", O, x) * y
    return rho * x - np.einsum("nm,nmd->d", expit(-z) * y, O)


def global_hessian(problem: Problem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if problem.family == "quadratic":
        return problem.data.Q.mean(axis=0)
    O, y, rho = problem.data.samples, problem.data.labels, problem.data.rho
    z = np.einsum("nmd,d->nm", O, x) * y
    w = expit(z) * expit(-z)
    return rho * np.eye(problem.d) + np.einsum("nm,nmd,nme->de", w, O, O)


# ---------------------------------------------------------------------------
# oracles


def centralized_solve(problem: Problem, tol: float = 1e-12, max_iters: int = 100) -> np.ndarray:
    """Minimize F with a damped Newton iteration until ||grad F|| <= tol."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    x = np.zeros(problem.d)
    fx = global_value(problem, x)
    for _ in range(max_iters):
        grad = global_gradient(problem, x)
        if np.linalg.norm(grad) <= tol:
            return x
        H = global_hessian(problem, x)
        step = np.linalg.solve(H, grad)
        t = 1.0
        decrement = float(grad @ step)
        for _ in range(60):
            trial = x - t * step
            f_trial = global_value(problem, trial)
            if f_trial <= fx - 1e-4 * t * decrement:
                break
            t *= 0.5
        x = x - t * step
        fx = global_value(problem, x)
    grad = global_gradient(problem, x)
    if np.linalg.norm(grad) <= tol:
        return x
    raise RuntimeError(
        f"centralized Newton did not reach tol={tol} in {max_iters} iterations "
        f"(final ||grad||={np.linalg.norm(grad):.3e}); instance may be ill-posed"
    )


def estimate_constants(problem: Problem):
    """Return (L1, L2, mu) recomputed from the instance data."""
    if problem.family == "quadratic":
        return _constants_quadratic(problem.data)
    return _constants_logistic(problem.data)


def _constants_quadratic(data: QuadraticInstance):
    L1 = float(max(np.linalg.eigvalsh(Qi)[-1] for Qi in data.Q))
    mu = float(np.linalg.eigvalsh(data.Q.mean(axis=0))[0])
    return L1, 0.0, mu


def _constants_logistic(data: LogisticInstance):
    n = data.samples.shape[0]
    rho = data.rho
    lmax = max(
        float(np.linalg.eigvalsh(O.T @ O)[-1]) for O in data.samples
    )
    L1 = rho + n * 0.25 * lmax
    cubes = np.linalg.norm(data.samples, axis=2) ** 3  # (n, m)
    L2 = n * float(cubes.sum(axis=1).max()) / (6.0 * np.sqrt(3.0))
    return float(L1), L2, float(rho)


# ---------------------------------------------------------------------------
# serialization: self-describing plain text, full float round-trip


def save_problem(path, problem: Problem) -> None:
    lines = [
        f"family {problem.family}",
        f"n {problem.n}",
        f"d {problem.d}",
        f"seed {problem.seed if problem.seed is not None else 'none'}",
    ]
    if problem.family == "quadratic":
        for i in range(problem.n):
            lines.append(f"Q {i}")
            lines.extend(_fmt_row(row) for row in problem.data.Q[i])
        lines.append("p")
        lines.extend(_fmt_row(row) for row in problem.data.p)
    else:
        lines.append(f"rho {problem.data.rho!r}")
        lines.append(f"m_per_node {problem.data.samples.shape[1]}")
        for i in range(problem.n):
            lines.append(f"samples {i}")
            lines.extend(_fmt_row(row) for row in problem.data.samples[i])
        lines.append("labels")
        lines.extend(_fmt_row(row) for row in problem.data.labels)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path) -> Problem:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = dict(ln.split(" ", 1) for ln in lines[:4])
    family = header["family"]
    n, d = int(header["n"]), int(header["d"])
    seed = None if header["seed"] == "none" else int(header["seed"])
    pos = 4
    if family == "quadratic":
        Q = np.empty((n, d, d))
        for i in range(n):
            assert lines[pos] == f"Q {i}"
            pos += 1
            Q[i] = [_parse_row(lines[pos + r]) for r in range(d)]
            pos += d
        assert lines[pos] == "p"
        pos += 1
        p = np.array([_parse_row(lines[pos + r]) for r in range(n)])
        data = QuadraticInstance(Q=Q, p=p)
        L1, L2, mu = _constants_quadratic(data)
    elif family == "logistic":
        rho = float(lines[pos].split(" ", 1)[1])
        m = int(lines[pos + 1].split(" ", 1)[1])
        pos += 2
        samples = np.empty((n, m, d))
        for i in range(n):
            assert lines[pos] == f"samples {i}"
            pos += 1
            samples[i] = [_parse_row(lines[pos + r]) for r in range(m)]
            pos += m
        assert lines[pos] == "labels"
        pos += 1
        labels = np.array([_parse_row(lines[pos + r]) for r in range(n)])
        data = LogisticInstance(samples=samples, labels=labels, rho=rho)
        L1, L2, mu = _constants_logistic(data)
    else:
        raise ValueError(f"unknown problem family {family!r}")
    return Problem(family=family, n=n, d=d, data=data, L1=L1, L2=L2, mu=mu, seed=seed)


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in row)


def _parse_row(line: str) -> list:
    return [float(tok) for tok in line.split()]
