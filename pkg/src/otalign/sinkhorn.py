"""Log-domain Sinkhorn solver for entropy-regularized optimal transport.

Solves  min_{A in Pi(mu, nu)}  <A, C> + gamma * <A, log A>  by alternating
log-space scaling updates.  All arithmetic runs in float64 on log potentials,
so small gamma values stay stable; the plan is materialized once per
iteration to measure marginal violation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, xlogy

from .core import TransportPlan, TransportProblem


class InvalidProblem(ValueError):
    """Raised when a transport problem violates its invariants."""


class NonConvergence(RuntimeError):
    """Raised when the solver exhausts its iteration budget.

    Carries the last marginal violation and the iteration count; trainers
    re-raise it annotated with the offending pair id.
    """

    def __init__(self, marginal_violation: float, iterations: int, pair_id: str | None = None):
        self.marginal_violation = float(marginal_violation)
        self.iterations = int(iterations)
        self.pair_id = pair_id
        where = f" (pair {pair_id})" if pair_id is not None else ""
        super().__init__(
            f"no convergence after {iterations} iterations{where}: "
            f"marginal violation {self.marginal_violation:.3e}"
        )


def _validate_problem(problem: TransportProblem) -> None:
    cost, mu, nu = problem.cost, problem.mu, problem.nu
    if cost.ndim != 2:
        raise InvalidProblem(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidProblem("cost contains non-finite entries")
    m, n = cost.shape
    if mu.shape != (m,) or nu.shape != (n,):
        raise InvalidProblem(
            f"marginal shapes {mu.shape}, {nu.shape} do not match cost shape {cost.shape}"
        )
    for name, marginal in (("mu", mu), ("nu", nu)):
        if not np.all(np.isfinite(marginal)) or np.any(marginal <= 0):
            raise InvalidProblem(f"{name} must be strictly positive and finite")
        if abs(marginal.sum() - 1.0) > 1e-12:
            raise InvalidProblem(f"{name} must sum to 1 within 1e-12, got {marginal.sum()!r}")
    if not np.isfinite(problem.gamma) or problem.gamma <= 0:
        raise InvalidProblem(f"gamma must be positive and finite, got {problem.gamma}")


def solve_entropic_ot(
    problem: TransportProblem, tol: float = 1e-9, max_iter: int = 10000
) -> TransportPlan:
    """Run log-domain Sinkhorn until both marginals match within tol.

    Convergence is the max-abs violation of row and column sums; potentials
    start at zero, so identical inputs give bit-identical outputs.
    """
    _validate_problem(problem)
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    log_mu = np.log(problem.mu)
    log_nu = np.log(problem.nu)
    log_kernel = -problem.cost / problem.gamma
    log_u = np.zeros_like(log_mu)
    log_v = np.zeros_like(log_nu)
    violation = np.inf
    for iteration in range(1, max_iter + 1):
        log_u = log_mu - logsumexp(log_kernel + log_v[None, :], axis=1)
        log_v = log_nu - logsumexp(log_kernel + log_u[:, None], axis=0)
        plan = np.exp(log_u[:, None] + log_kernel + log_v[None, :])
        violation = max(
            np.abs(plan.sum(axis=1) - problem.mu).max(),
            np.abs(plan.sum(axis=0) - problem.nu).max(),
        )
        if violation <= tol:
            return TransportPlan(
                plan=plan,
                log_u=log_u,
                log_v=log_v,
                gamma=problem.gamma,
                iterations=iteration,
                marginal_violation=float(violation),
            )
    raise NonConvergence(violation, max_iter)


def plan_objective(plan: np.ndarray | TransportPlan, problem: TransportProblem) -> float:
    """Entropic transport objective <A, C> + gamma * sum(a log a), with 0 log 0 = 0."""
    a = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if a.shape != problem.cost.shape:
        raise ValueError(f"plan shape {a.shape} != cost shape {problem.cost.shape}")
    return float(np.sum(a * problem.cost) + problem.gamma * xlogy(a, a).sum())
