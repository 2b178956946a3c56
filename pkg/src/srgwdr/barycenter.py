"""
Semi-relaxed GW barycenters.

For a fixed plan ``T`` the best target structure has the closed form
``Cbar(T) = T' C T / (hbar hbar')`` on pairs of nonempty prototypes and 0
elsewhere, for the L2 loss and (with ``C >= 0``) for the KL loss. The
barycenter is found by block coordinate descent alternating a warm-started
srGW solve and this update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DomainError
from .gw_core import LOG_FLOOR, _matrix, check_loss, gw_cost
from .solver import (
    SolveReport,
    SolverOptions,
    _check_marginal,
    empty_columns,
    random_plan,
    solve_srgw,
)

ZERO_WEIGHT = 1e-12


@dataclass
class BarycenterGraph:
    """Target graph: structure ``Cbar`` (n, n) and weights ``hbar`` (n,)."""

    structure: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.size

    def active(self) -> np.ndarray:
        return self.weights > ZERO_WEIGHT


@dataclass
class HardClustering:
    labels: np.ndarray
    effective_clusters: int


def prototype_weights(T) -> np.ndarray:
    """Column marginal with entries below ``1e-12`` set to 0."""
    hb = np.asarray(T, dtype=np.float64).sum(axis=0)
    hb[hb < ZERO_WEIGHT] = 0.0
    return hb


def _pair_support(hb):
    return np.outer(hb, hb) > 0


def barycenter_structure(C, T, loss="l2") -> np.ndarray:
    """``Cbar(T) = T' C T / (hbar hbar')`` on nonempty pairs, else 0.

    With the KL loss ``C`` must be nonnegative; entries that would be 0 on
    nonempty pairs are floored at ``1e-30`` so the next KL solve stays in
    its domain.
    """
    C = _matrix(C, "C")
    T = _matrix(T, "T")
    loss = check_loss(loss)
    if loss == "kl" and np.any(C < 0):
        raise DomainError("KL barycenter needs a nonnegative input structure")
    hb = prototype_weights(T)
    support = _pair_support(hb)
    A = T.T @ C @ T
    Cb = np.zeros_like(A)
    Cb[support] = A[support] / np.outer(hb, hb)[support]
    if loss == "kl":
        Cb[support] = np.maximum(Cb[support], LOG_FLOOR)
    return Cb


def factorized_objective(C, T) -> float:
    """``F(T) = sum_ij C_ij^2 h_i h_j - sum_{kl} (T_k' C T_l)^2 / (hbar_k hbar_l)``,
    the L2 GW cost of ``T`` against ``Cbar(T)``."""
    C = _matrix(C, "C")
    T = _matrix(T, "T")
    h = T.sum(axis=1)
    hb = prototype_weights(T)
    support = _pair_support(hb)
    A = T.T @ C @ T
    return float(h @ (C * C) @ h - np.sum(A[support] ** 2 / np.outer(hb, hb)[support]))


def feature_barycenter(X, T) -> np.ndarray:
    """Rows ``(T' X)_j / hbar_j``; empty prototypes get a zero row."""
    X = _matrix(X, "X")
    T = _matrix(T, "T")
    hb = prototype_weights(T)
    F = T.T @ X
    keep = hb > 0
    F[keep] /= hb[keep, None]
    F[~keep] = 0.0
    return F


def hard_assignments(T) -> HardClustering:
    """``label_i = argmax_j T_ij`` with ties to the lowest index."""
    T = _matrix(T, "T")
    labels = np.argmax(T, axis=1)
    return HardClustering(labels=labels, effective_clusters=int(np.unique(labels).size))


def _inner_options(opts: SolverOptions) -> SolverOptions:
    return replace(opts, restarts=1)


def _membership_objective(A, hb, const, loss):
    """Barycenter objective of a membership plan from ``A = T' C T``."""
    outer = np.outer(hb, hb)
    support = outer > 0
    if loss == "l2":
        return const - np.sum(A[support] ** 2 / outer[support])
    a = A[support]
    Cb = np.maximum(a / outer[support], LOG_FLOOR)
    return const + np.sum(a - a * np.log(Cb))


def _source_constant(C, h, loss):
    if loss == "l2":
        return float(h @ (C * C) @ h)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(C > 0, C * np.log(C), 0.0) - C
    return float(h @ f1 @ h)


def refine_memberships(C, h, labels, n: int, loss="l2", max_sweeps: int = 100):
    """Single-sample relabeling descent on membership plans.

    Moves sample ``i`` to the prototype that most lowers the barycenter
    objective (empty prototypes included) until no move helps. ``A`` and
    ``hbar`` are updated in ``O(n^2)`` per candidate move.

    Returns
    -------
    labels : (N,) int array
    cost : float
    """
    C = _matrix(C, "C")
    loss = check_loss(loss)
    labels = np.array(labels, dtype=np.int64)
    N = labels.size
    T = np.zeros((N, n))
    T[np.arange(N), labels] = h
    S = C @ T  # S[:, k] = C T_k
    R = C.T @ T
    A = T.T @ S
    hb = T.sum(axis=0)
    const = _source_constant(C, h, loss)
    cost = _membership_objective(A, np.where(hb < ZERO_WEIGHT, 0.0, hb), const, loss)
    eye = np.eye(n)
    for _ in range(max_sweeps):
        moved = False
        for i in range(N):
            a = labels[i]
            best_k, best_cost, best_A = a, cost, None
            for k in range(n):
                if k == a:
                    continue
                d = eye[k] - eye[a]
                Ak = (
                    A
                    + h[i] * (np.outer(R[i], d) + np.outer(d, S[i]))
                    + h[i] ** 2 * C[i, i] * np.outer(d, d)
                )
                hk = hb + h[i] * d
                hk = np.where(hk < ZERO_WEIGHT, 0.0, hk)
                ck = _membership_objective(Ak, hk, const, loss)
                if ck < best_cost - 1e-13 * max(1.0, abs(best_cost)):
                    best_k, best_cost, best_A = k, ck, Ak
            if best_k != a:
                d = eye[best_k] - eye[a]
                S += h[i] * np.outer(C[:, i], d)
                R += h[i] * np.outer(C[i, :], d)
                A = best_A
                hb = hb + h[i] * d
                labels[i] = best_k
                cost = best_cost
                moved = True
        if not moved:
            break
    return labels, float(cost)


def solve_srgw_barycenter(
    C,
    h,
    n: int,
    loss="l2",
    opts: Optional[SolverOptions] = None,
    init=None,
    max_outer: int = 100,
    outer_tol: float = 1e-9,
    refine: bool = True,
):
    """srGW barycenter of ``(C, h)`` with ``n`` prototypes.

    Block coordinate descent: a srGW solve toward the current ``Cbar``
    (warm-started at the current plan), then the closed-form ``Cbar``
    update. Stops when the relative decrease falls to ``outer_tol``. Each
    restart ``r`` starts from a random plan drawn with ``seed + r``.

    With ``refine`` the BCD output is rounded to its hard assignment and
    improved by single-sample relabeling moves (:func:`refine_memberships`);
    the refined membership plan is kept only if it lowers the cost. For PSD
    ``C`` and the L2 loss an optimal plan exists among membership plans, and
    BCD on its own tends to stall with collapsed prototypes.

    Returns
    -------
    graph : BarycenterGraph
    T : (N, n) array
    report : SolveReport
        ``iterations`` counts outer alternations and ``cost_trace`` holds
        the outer objective after each one.
    """
    opts = SolverOptions() if opts is None else opts
    loss = check_loss(loss)
    C = _matrix(C, "C")
    N = C.shape[0]
    if not 1 <= n <= N:
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={N}")
    h = _check_marginal(h, N)
    inner = _inner_options(opts)
    if init is not None:
        starts = [np.array(init, dtype=np.float64)]
    else:
        starts = (
            random_plan(h, n, np.random.default_rng(opts.seed + r))
            for r in range(opts.restarts)
        )
    best = None
    for r, T in enumerate(starts):
        Cb = barycenter_structure(C, T, loss)
        cost = gw_cost(C, Cb, T, loss)
        trace = [cost]
        converged = False
        it = 0
        for it in range(1, max_outer + 1):
            T_new, _ = solve_srgw(C, h, Cb, loss, inner, init=T)
            Cb_new = barycenter_structure(C, T_new, loss)
            new = gw_cost(C, Cb_new, T_new, loss)
            if new > cost:
                converged = True
                break
            T, Cb = T_new, Cb_new
            trace.append(new)
            done = cost - new <= outer_tol * abs(cost)
            cost = new
            if done:
                converged = True
                break
        if refine:
            labels, _ = refine_memberships(
                C, h, hard_assignments(T).labels, n, loss, max_sweeps=max_outer
            )
            T_ref = np.zeros_like(T)
            T_ref[np.arange(N), labels] = h
            Cb_ref = barycenter_structure(C, T_ref, loss)
            ref_cost = gw_cost(C, Cb_ref, T_ref, loss)
            if ref_cost < cost:
                T, Cb, cost = T_ref, Cb_ref, ref_cost
                trace.append(ref_cost)
        if best is None or cost < best[0]:
            best = (cost, T, Cb, trace, converged, it, r)
    cost, T, Cb, trace, converged, it, r = best
    graph = BarycenterGraph(structure=Cb, weights=prototype_weights(T))
    report = SolveReport(
        final_cost=float(cost),
        iterations=int(it),
        converged=bool(converged),
        cost_trace=[float(c) for c in trace],
        empty_columns=empty_columns(T),
        restart=int(r),
    )
    return graph, T, report


def solve_srgwi(C, h, n: int, loss="l2", opts: Optional[SolverOptions] = None):
    """srGW toward the fixed identity structure ``I_n``.

    The KL loss is undefined against ``I_n`` as soon as two prototypes carry
    mass, so only L2 is accepted.
    """
    if check_loss(loss) == "kl":
        raise DomainError("the identity target has zero entries; srGWI needs L2")
    C = _matrix(C, "C")
    if not 1 <= n <= C.shape[0]:
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={C.shape[0]}")
    return solve_srgw(C, h, np.eye(n), loss, opts)
