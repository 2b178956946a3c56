"""
Joint clustering and dimensionality reduction (GW-DR and its fused variant).

Prototypes ``Z`` (n, d) define an embedding similarity ``C_Z(Z)``; block
coordinate descent alternates a srGW solve for the plan ``T``, Adam steps on
``Z`` and, for the fused objective, the closed-form feature prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .affinity import AffinityMatrix, squared_distance_matrix, symmetric_sinkhorn
from .barycenter import BarycenterGraph, feature_barycenter, prototype_weights
from .errors import SolverError
from .gw_core import (
    LOG_FLOOR,
    _matrix,
    _source_parts,
    _target_parts,
    check_alpha,
    check_loss,
    fused_cost,
    gw_cost,
)
from .solver import (
    SolveReport,
    SolverOptions,
    _check_marginal,
    empty_columns,
    random_plan,
    solve_srfgw,
)

MODELS = ("gram", "student", "student_doubly_stochastic")


@dataclass
class Embedding:
    """Prototype coordinates ``Z`` (n, d) and the model mapping them to ``C_Z``."""

    Z: np.ndarray
    model: str = "gram"

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim != 2 or self.Z.shape[0] < 1 or self.Z.shape[1] < 1:
            raise ValueError(f"Z must be a non-empty 2-d array, got {self.Z.shape}")
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("Z has non-finite entries")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]


@dataclass
class AdamOptions:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr > 0 and self.eps > 0):
            raise ValueError("lr and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


@dataclass
class GwdrOptions:
    solver: SolverOptions = field(default_factory=SolverOptions)
    adam: AdamOptions = field(default_factory=AdamOptions)
    z_steps_per_block: int = 50
    bcd_iters: int = 30
    alpha: float = 1.0

    def __post_init__(self):
        if int(self.z_steps_per_block) < 1 or int(self.bcd_iters) < 1:
            raise ValueError("z_steps_per_block and bcd_iters must be >= 1")
        self.alpha = check_alpha(self.alpha)


def init_embeddings(n: int, d: int, seed: int = 0, model: str = "gram") -> Embedding:
    """I.i.d. standard normal prototype coordinates."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    Z = np.random.default_rng(seed).standard_normal((n, d))
    return Embedding(Z, model)


def _student(Z):
    return 1.0 / (1.0 + squared_distance_matrix(Z))


def _structure(Z, model, duals=None):
    """``C_Z`` plus what the chain rule needs (kernel and Sinkhorn scaling)."""
    if model == "gram":
        return Z @ Z.T, None, None
    K = _student(Z)
    if model == "student":
        return K, K, None
    u = symmetric_sinkhorn(K) if duals is None else duals
    P = u[:, None] * K * u[None, :]
    return 0.5 * (P + P.T), K, u


def embedding_affinity(E: Embedding) -> AffinityMatrix:
    """``C_Z`` of an embedding: ``Z Z'`` or a (normalized) Cauchy kernel."""
    Cz, _, _ = _structure(E.Z, E.model)
    kinds = {"gram": "gram", "student": "student"}
    return AffinityMatrix(
        Cz,
        kind=kinds.get(E.model, "student_doubly_stochastic"),
        symmetric=True,
        nonnegative=E.model != "gram",
    )


class _ZTerms:
    """Pieces of ``E(T)`` that do not depend on ``C_Z`` for a fixed plan."""

    def __init__(self, C_X, T, loss):
        self.loss = loss
        self.p = T.sum(axis=1)
        self.q = T.sum(axis=0)
        f1, h1 = _source_parts(C_X, loss, self.p)
        self.const = float(self.p @ f1 @ self.p)
        self.A = T.T @ h1 @ T
        self.qq = np.outer(self.q, self.q)

    def value(self, Cz) -> float:
        f2, h2 = _target_parts(Cz, self.loss, self.q)
        return float(self.const + self.q @ f2 @ self.q - np.sum(self.A * h2))

    def gradient(self, Cz) -> np.ndarray:
        """``dE/dC_Z = f2'(Cz) q q' - h2'(Cz) A``."""
        if self.loss == "l2":
            return 2.0 * Cz * self.qq - 2.0 * self.A
        return self.qq - self.A / np.maximum(Cz, LOG_FLOOR)


def _chain(Z, model, Gamma, K, u):
    S = Gamma + Gamma.T
    if model == "gram":
        return S @ Z
    if u is not None:
        S = S * np.outer(u, u)
    W = S * K * K
    return -2.0 * (np.diag(W.sum(axis=1)) - W) @ Z


def z_gradient(C_X, h, E: Embedding, T, loss="l2", duals=None) -> np.ndarray:
    """Gradient in ``Z`` of ``gw_cost(C_X, C_Z(Z), T)``.

    For the doubly stochastic student model the Sinkhorn scaling is held
    fixed (``duals``, recomputed at ``Z`` when omitted), so this is the exact
    gradient of the frozen-duals objective.
    """
    C_X = _matrix(C_X, "C_X")
    T = _matrix(T, "T")
    _check_marginal(h, C_X.shape[0])
    loss = check_loss(loss)
    Cz, K, u = _structure(E.Z, E.model, duals)
    terms = _ZTerms(C_X, T, loss)
    _target_parts(Cz, loss, terms.q)  # domain check
    return _chain(E.Z, E.model, terms.gradient(Cz), K, u)


def frozen_objective(C_X, E: Embedding, T, loss="l2"):
    """``Z -> gw_cost(C_X, C_Z(Z), T)`` with Sinkhorn duals frozen at ``E.Z``.

    Returns the objective and the frozen duals (``None`` unless the model is
    doubly stochastic).
    """
    _, _, u = _structure(E.Z, E.model)

    def objective(Z):
        Cz, _, _ = _structure(Z, E.model, u)
        return gw_cost(C_X, Cz, T, loss)

    return objective, u


def _adam(fun, Z0, adam: AdamOptions, steps: int):
    """Adam on ``fun(Z) -> (value, grad)``; returns the best iterate seen."""
    Z = Z0.copy()
    m = np.zeros_like(Z)
    v = np.zeros_like(Z)
    best_val, grad = fun(Z)
    best_Z = Z.copy()
    for t in range(1, steps + 1):
        m = adam.beta1 * m + (1.0 - adam.beta1) * grad
        v = adam.beta2 * v + (1.0 - adam.beta2) * grad * grad
        m_hat = m / (1.0 - adam.beta1**t)
        v_hat = v / (1.0 - adam.beta2**t)
        Z = Z - adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
        value, grad = fun(Z)
        if not np.isfinite(value):
            break
        if value < best_val:
            best_val, best_Z = value, Z.copy()
    return best_Z, best_val


def _z_step(C_X, T, Z, model, loss, alpha, opts: GwdrOptions):
    terms = _ZTerms(C_X, T, loss)
    active = terms.q > 0

    def fun(Zc):
        # true objective (fresh Sinkhorn scaling); frozen-duals gradient
        try:
            Cz, K, u = _structure(Zc, model)
            value = terms.value(Cz)
            G = _chain(Zc, model, terms.gradient(Cz), K, u)
        except (ValueError, ArithmeticError, RuntimeError):
            return np.inf, np.zeros_like(Zc)
        G[~active] = 0.0
        return alpha * value, alpha * G

    Z_new, _ = _adam(fun, Z, opts.adam, opts.z_steps_per_block)
    return Z_new


def _bcd(C_X, X, h, n, d, model, loss, opts: GwdrOptions, alpha, init=None, init_plan=None):
    """Best of ``opts.solver.restarts`` BCD runs; run ``r`` uses seed ``seed + r``
    for both ``Z`` and the first plan. With an explicit ``init`` there is a
    single run whose first plan solve keeps the solver restarts."""
    if init is not None or init_plan is not None:
        return _bcd_run(C_X, X, h, n, d, model, loss, opts, alpha, init, init_plan)
    best = None
    for r in range(opts.solver.restarts):
        sub = replace(opts, solver=replace(opts.solver, seed=opts.solver.seed + r, restarts=1))
        out = _bcd_run(C_X, X, h, n, d, model, loss, sub, alpha)
        if best is None or out[4].final_cost < best[4].final_cost:
            out[4].restart = r
            best = out
    return best


def _bcd_run(C_X, X, h, n, d, model, loss, opts: GwdrOptions, alpha, init=None, init_plan=None):
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    loss = check_loss(loss)
    C_X = _matrix(C_X, "C_X")
    N = C_X.shape[0]
    if not 1 <= n <= N:
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={N}")
    h = _check_marginal(h, N)
    seed = opts.solver.seed
    E0 = init if init is not None else init_embeddings(n, d, seed, model)
    Z = E0.Z.copy()
    fused = alpha < 1.0
    T = None if init_plan is None else np.array(init_plan, dtype=np.float64)
    F = None
    if fused:
        X = _matrix(X, "X")
        if X.shape[0] != N:
            raise ValueError(f"X has {X.shape[0]} rows, expected {N}")
        # same draw as restart 0 of the first plan solve
        start = random_plan(h, n, np.random.default_rng(seed)) if T is None else T
        F = feature_barycenter(X, start)

    def objective(T, Z, F):
        Cz = _structure(Z, model)[0]
        if fused:
            return fused_cost(C_X, X, Cz, F, T, alpha, loss)
        return gw_cost(C_X, Cz, T, loss)

    trace = []
    converged = False
    it = 0
    for it in range(1, opts.bcd_iters + 1):
        Cz = _structure(Z, model)[0]
        solver_opts = opts.solver
        T, _ = solve_srfgw(C_X, X, h, Cz, F, alpha, loss, solver_opts, init=T)
        if alpha > 0:
            Z = _z_step(C_X, T, Z, model, loss, alpha, opts)
        if fused:
            F = feature_barycenter(X, T)
        value = objective(T, Z, F)
        if not np.isfinite(value):
            raise SolverError(f"non-finite objective at BCD iteration {it}")
        trace.append(value)
        if len(trace) > 1 and trace[-2] - value <= 1e-12 * max(1.0, abs(value)):
            converged = True
            break
    E = Embedding(Z, model)
    graph = BarycenterGraph(structure=_structure(Z, model)[0], weights=prototype_weights(T))
    report = SolveReport(
        final_cost=float(trace[-1]),
        iterations=int(it),
        converged=bool(converged),
        cost_trace=[float(c) for c in trace],
        empty_columns=empty_columns(T),
    )
    return E, F, T, graph, report


def solve_gwdr(
    C_X,
    h,
    n: int,
    d: int,
    model: str = "gram",
    loss="l2",
    opts: Optional[GwdrOptions] = None,
    init: Optional[Embedding] = None,
    init_plan=None,
):
    """GW-DR: ``min_{Z, T in U_n(h)} E(C_X, C_Z(Z), T)``.

    Each block solves srGW for ``T`` (warm-started from the previous plan)
    and then runs ``z_steps_per_block`` Adam steps on
    ``Z``, keeping the best iterate so the outer objective never increases.
    Rows of ``Z`` for empty prototypes receive no updates. With
    ``opts.solver.restarts = R`` the whole descent is run from ``R`` seeds
    and the lowest final objective wins. ``init`` fixes the starting ``Z``
    and ``init_plan`` the starting plan; either one means a single run.

    Returns
    -------
    embedding : Embedding
    T : (N, n) array
    graph : BarycenterGraph
        ``C_Z`` of the final embedding and the prototype weights.
    report : SolveReport
    """
    opts = GwdrOptions() if opts is None else opts
    E, _, T, graph, report = _bcd(C_X, None, h, n, d, model, loss, opts, 1.0, init, init_plan)
    return E, T, graph, report


def solve_fgwdr(
    C_X,
    X,
    h,
    n: int,
    d: int,
    model: str = "gram",
    loss="l2",
    opts: Optional[GwdrOptions] = None,
    init: Optional[Embedding] = None,
    init_plan=None,
):
    """Fused GW-DR with trade-off ``opts.alpha``.

    Blocks update ``T``, then ``Z``, then the feature prototypes
    ``F = T' X / hbar``. ``alpha = 1`` reproduces :func:`solve_gwdr`;
    ``alpha = 0`` drops the structure term and the iteration becomes Lloyd's
    K-means on ``X``.

    Returns
    -------
    embedding, F, T, graph, report
    """
    opts = GwdrOptions() if opts is None else opts
    alpha = opts.alpha
    if alpha == 1.0:
        E, _, T, graph, report = _bcd(C_X, None, h, n, d, model, loss, opts, 1.0, init, init_plan)
        F = feature_barycenter(X, T)
        return E, F, T, graph, report
    return _bcd(C_X, X, h, n, d, model, loss, opts, alpha, init, init_plan)
