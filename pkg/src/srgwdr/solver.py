"""
Conditional gradient solver for semi-relaxed (fused) GW.

The feasible set ``U_n(h)`` only fixes the row marginal, so the linear
minimization oracle separates by row and returns a vertex ``diag(h) M`` with
one-hot rows ``M``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, SolverError
from .gw_core import (
    GWObjective,
    check_alpha,
    check_loss,
    feature_cost_matrix,
)

STEP_POLICIES = ("exact_quadratic", "armijo")
EMPTY_TOL = 1e-12


@dataclass
class SolverOptions:
    """Options of the conditional gradient solver.

    Attributes
    ----------
    max_cg_iters : int
    rel_tol : float
        Stop once ``|cost_t - cost_{t-1}| <= rel_tol * max(1, |cost_t|)``.
    seed : int
        Restart ``r`` draws its initial plan from ``default_rng(seed + r)``.
    restarts : int
    step_policy : {"exact_quadratic", "armijo"} or None
        ``None`` picks the exact step for L2 and Armijo for KL.
    """

    max_cg_iters: int = 200
    rel_tol: float = 1e-9
    seed: int = 0
    restarts: int = 1
    step_policy: Optional[str] = None

    def __post_init__(self):
        if int(self.max_cg_iters) < 1:
            raise ValueError("max_cg_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if int(self.restarts) < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_policy not in (None,) + STEP_POLICIES:
            raise ValueError(
                f"step_policy must be one of {STEP_POLICIES} or None, "
                f"got {self.step_policy!r}"
            )
        self.max_cg_iters = int(self.max_cg_iters)
        self.restarts = int(self.restarts)
        self.seed = int(self.seed)

    def policy_for(self, loss: str) -> str:
        if self.step_policy is not None:
            return self.step_policy
        return "exact_quadratic" if check_loss(loss) == "l2" else "armijo"


@dataclass
class SolveReport:
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list = field(default_factory=list)
    empty_columns: list = field(default_factory=list)
    restart: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_marginal(h, N):
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.shape != (N,):
        raise ValueError(f"marginal has length {h.size}, expected {N}")
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise ValueError("marginal must be finite and nonnegative")
    if abs(h.sum() - 1.0) > 1e-9:
        raise ValueError(f"marginal must sum to 1, got {h.sum():.12g}")
    return h


def uniform_marginal(N: int) -> np.ndarray:
    return np.full(N, 1.0 / N)


def random_plan(h, n: int, rng) -> np.ndarray:
    """Uniform ``[0, 1]`` entries with rows rescaled to ``h``."""
    h = np.asarray(h, dtype=np.float64)
    U = rng.uniform(0.0, 1.0, size=(h.size, n))
    return U * (h / U.sum(axis=1))[:, None]


def empty_columns(T, tol: float = EMPTY_TOL) -> list:
    return [int(j) for j in np.flatnonzero(np.asarray(T).sum(axis=0) < tol)]


def semi_relaxed_lmo(G, h) -> np.ndarray:
    """Vertex of ``U_n(h)`` minimizing ``<G, T>``.

    Row ``i`` puts its whole mass ``h_i`` on ``argmin_j G_ij``; ties go to
    the lowest column index.
    """
    G = np.asarray(G, dtype=np.float64)
    if not np.all(np.isfinite(G)):
        raise ValueError("gradient has non-finite entries")
    h = np.asarray(h, dtype=np.float64)
    D = np.zeros_like(G)
    D[np.arange(G.shape[0]), np.argmin(G, axis=1)] = h
    return D


def _quadratic_step(a: float, b: float) -> float:
    """Minimizer over ``[0, 1]`` of ``b g + a g^2``."""
    if a > 0:
        return float(min(1.0, max(0.0, -b / (2.0 * a))))
    return 1.0 if a + b < 0 else 0.0


def exact_line_search(C_X, C_Z, T, D, loss="l2") -> float:
    """Optimal step on the segment ``T + g (D - T)``, ``g`` in ``[0, 1]``.

    The objective is quadratic along the segment; a concave restriction
    returns the better endpoint. ``D == T`` returns 0.
    """
    T = np.asarray(T, dtype=np.float64)
    Delta = np.asarray(D, dtype=np.float64) - T
    if not Delta.any():
        return 0.0
    a, b = GWObjective(C_X, C_Z, loss).segment(T, Delta)
    return _quadratic_step(a, b)


class _Problem:
    """``alpha * E(T) + (1 - alpha) <M, T>``; ``alpha == 1`` skips ``M``."""

    def __init__(self, C_X, C_Z, loss, M=None, alpha=1.0):
        self.alpha = alpha
        self.gw = GWObjective(C_X, C_Z, loss) if alpha > 0 else None
        self.M = None if alpha == 1.0 else np.asarray(M, dtype=np.float64)

    def cost(self, T):
        if self.M is None:
            return self.gw.cost(T)
        lin = float(np.sum(self.M * T))
        if self.gw is None:
            return lin
        return self.alpha * self.gw.cost(T) + (1.0 - self.alpha) * lin

    def gradient(self, T):
        if self.M is None:
            return self.gw.gradient(T)
        if self.gw is None:
            return self.M.copy()
        return self.alpha * self.gw.gradient(T) + (1.0 - self.alpha) * self.M

    def segment(self, T, Delta, G):
        if self.gw is None:
            return 0.0, float(np.sum(G * Delta))
        a, b = self.gw.segment(T, Delta, G)
        if self.M is None:
            return a, b
        return self.alpha * a, float(np.sum(G * Delta))


def _armijo(problem, T, Delta, G, cost, c=1e-4, max_backtracks=30):
    slope = float(np.sum(G * Delta))
    if slope >= 0:
        return 0.0, cost
    gamma = 1.0
    for _ in range(max_backtracks + 1):
        try:
            trial = problem.cost(T + gamma * Delta)
        except DomainError:
            trial = np.inf
        if np.isfinite(trial) and trial <= cost + c * gamma * slope:
            return gamma, trial
        gamma *= 0.5
    return 0.0, cost


def _conditional_gradient(problem, h, T, opts: SolverOptions, policy: str):
    cost = problem.cost(T)
    if not np.isfinite(cost):
        raise SolverError("initial cost is not finite")
    trace = [cost]
    converged = False
    it = 0
    for it in range(1, opts.max_cg_iters + 1):
        G = problem.gradient(T)
        if not np.all(np.isfinite(G)):
            raise SolverError(f"non-finite gradient at iteration {it}")
        D = semi_relaxed_lmo(G, h)
        Delta = D - T
        if not Delta.any():
            converged = True
            break
        if policy == "exact_quadratic":
            a, b = problem.segment(T, Delta, G)
            gamma = _quadratic_step(a, b)
            try:
                new_cost = problem.cost(T + gamma * Delta) if gamma > 0 else cost
            except DomainError:
                gamma = 0.0
        else:
            gamma, new_cost = _armijo(problem, T, Delta, G, cost)
        if gamma == 0.0:
            converged = True
            break
        if not np.isfinite(new_cost):
            raise SolverError(f"non-finite cost at iteration {it}")
        if new_cost > cost:
            # round-off only; keep the current iterate
            converged = True
            break
        T = T + gamma * Delta
        trace.append(new_cost)
        done = abs(cost - new_cost) <= opts.rel_tol * max(1.0, abs(new_cost))
        cost = new_cost
        if done:
            converged = True
            break
    return T, cost, trace, converged, it


def _solve(C_X, h, C_Z, loss, opts, M=None, alpha=1.0, init=None):
    opts = SolverOptions() if opts is None else opts
    loss = check_loss(loss)
    C_X = np.asarray(C_X, dtype=np.float64)
    C_Z = np.asarray(C_Z, dtype=np.float64)
    N = C_X.shape[0]
    n = C_Z.shape[0]
    h = _check_marginal(h, N)
    policy = opts.policy_for(loss)
    problem = _Problem(C_X, C_Z, loss, M=M, alpha=alpha)
    if init is not None:
        inits = [np.array(init, dtype=np.float64)]
        if inits[0].shape != (N, n):
            raise ValueError(f"init has shape {inits[0].shape}, expected {(N, n)}")
        if np.abs(inits[0].sum(axis=1) - h).max() > 1e-9:
            raise ValueError("init violates the row marginal")
    else:
        inits = (
            random_plan(h, n, np.random.default_rng(opts.seed + r))
            for r in range(opts.restarts)
        )
    best = None
    for r, T0 in enumerate(inits):
        T, cost, trace, converged, it = _conditional_gradient(
            problem, h, T0, opts, policy
        )
        if best is None or cost < best[1]:
            best = (T, cost, trace, converged, it, r)
    T, cost, trace, converged, it, r = best
    report = SolveReport(
        final_cost=float(cost),
        iterations=int(it),
        converged=bool(converged),
        cost_trace=[float(c) for c in trace],
        empty_columns=empty_columns(T),
        restart=int(r),
    )
    return T, report


def solve_srgw(C_X, h, C_Z, loss="l2", opts: Optional[SolverOptions] = None, init=None):
    """Semi-relaxed GW: ``min_{T in U_n(h)} E(T)``.

    Parameters
    ----------
    C_X : (N, N) array
    h : (N,) array
        Row marginal, sums to one.
    C_Z : (n, n) array
    loss : {"l2", "kl"}
    opts : SolverOptions, optional
    init : (N, n) array, optional
        Starting plan; when given, no random restarts are drawn.

    Returns
    -------
    T : (N, n) array
    report : SolveReport
    """
    return _solve(C_X, h, C_Z, loss, opts, init=init)


def solve_srfgw(
    C_X, X, h, C_Z, F, alpha, loss="l2", opts: Optional[SolverOptions] = None, init=None
):
    """Semi-relaxed fused GW with feature cost ``M_ij = sum_k L(X_ik, F_jk)``.

    ``alpha = 1`` runs exactly the :func:`solve_srgw` iteration.
    """
    alpha = check_alpha(alpha)
    M = None if alpha == 1.0 else feature_cost_matrix(X, F, loss)
    return _solve(C_X, h, C_Z, loss, opts, M=M, alpha=alpha, init=init)
