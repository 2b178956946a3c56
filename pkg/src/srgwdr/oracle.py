"""
Brute-force and finite-difference oracles for small instances.

These are slow by design and exist to check the solvers and the closed
forms: exhaustive search over membership plans ``diag(h) M``, sampled
concavity probes of the factorized objective, the low-rank gluing identity
and a central-difference gradient check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barycenter import factorized_objective, prototype_weights
from .gw_core import LOG_FLOOR, _matrix, check_loss
from .solver import _check_marginal, random_plan

BUDGET = 2**20


@dataclass
class SmallInstance:
    C: np.ndarray
    h: np.ndarray
    n: int
    loss: str = "l2"

    def __post_init__(self):
        self.C = _matrix(self.C, "C")
        N = self.C.shape[0]
        if N > 12:
            raise ValueError(f"brute force is limited to N <= 12, got {N}")
        if not 1 <= self.n <= min(4, N):
            raise ValueError(f"need 1 <= n <= min(4, N), got n={self.n}")
        if float(self.n) ** N > BUDGET:
            raise ValueError(f"n^N = {self.n}^{N} exceeds the budget 2^20")
        self.h = _check_marginal(self.h, N)
        self.loss = check_loss(self.loss)


def _label_chunk(start, stop, N, n):
    # base-n digits, first sample most significant: lexicographic order
    codes = np.arange(start, stop)
    powers = n ** np.arange(N - 1, -1, -1)
    return (codes[:, None] // powers[None, :]) % n


def _membership_costs(C, h, labels, n, loss):
    B, N = labels.shape
    W = np.zeros((B, N, n))
    W[np.arange(B)[:, None], np.arange(N)[None, :], labels] = h[None, :]
    hb = W.sum(axis=1)
    hb[hb < 1e-12] = 0.0
    A = np.einsum("bik,ij,bjl->bkl", W, C, W, optimize=True)
    outer = hb[:, :, None] * hb[:, None, :]
    support = outer > 0
    safe = np.where(support, outer, 1.0)
    if loss == "l2":
        const = h @ (C * C) @ h
        return const - np.where(support, A * A / safe, 0.0).sum(axis=(1, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(C > 0, C * np.log(C), 0.0) - C
    const = h @ f1 @ h
    Cb = np.maximum(np.where(support, A / safe, 0.0), LOG_FLOOR)
    return const + np.where(support, A - A * np.log(Cb), 0.0).sum(axis=(1, 2))


def brute_force_membership_optimum(inst: SmallInstance, chunk: int = 8192):
    """Exact minimum over membership plans of the barycenter objective.

    Every label vector in ``{0..n-1}^N`` is scored with ``Cbar(T)`` plugged
    in (the factorized objective for L2). Enumeration is lexicographic; the
    first minimizer wins.

    Returns
    -------
    labels : (N,) int array
    cost : float
    """
    if inst.loss == "kl" and np.any(inst.C < 0):
        raise ValueError("KL brute force needs a nonnegative C")
    N, n = inst.C.shape[0], inst.n
    total = n**N
    best_cost, best_labels = np.inf, None
    for start in range(0, total, chunk):
        labels = _label_chunk(start, min(total, start + chunk), N, n)
        costs = _membership_costs(inst.C, inst.h, labels, n, inst.loss)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost, best_labels = float(costs[k]), labels[k].copy()
    return best_labels, best_cost


def membership_plan(labels, h, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    T = np.zeros((labels.size, n))
    T[np.arange(labels.size), labels] = h
    return T


def _interior_plan(h, n, rng):
    # positive column marginals, as the probes require
    while True:
        T = random_plan(h, n, rng)
        if np.all(T.sum(axis=0) > 1e-8):
            return T


def concavity_probe(
    C, h, n: int = 3, num_pairs: int = 100, lambdas=(0.25, 0.5, 0.75), seed: int = 0
) -> float:
    """Worst ``lam F(T1) + (1 - lam) F(T2) - F(lam T1 + (1 - lam) T2)``
    over random interior pairs in ``U_n(h)``.

    A value ``<= 0`` is consistent with concavity of ``F``. Sampled
    evidence, not a proof.
    """
    C = _matrix(C, "C")
    h = _check_marginal(h, C.shape[0])
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(num_pairs):
        T1 = _interior_plan(h, n, rng)
        T2 = _interior_plan(h, n, rng)
        F1, F2 = factorized_objective(C, T1), factorized_objective(C, T2)
        for lam in lambdas:
            mid = factorized_objective(C, lam * T1 + (1.0 - lam) * T2)
            worst = max(worst, lam * F1 + (1.0 - lam) * F2 - mid)
    return float(worst)


def sinkhorn_projection(K, a, b, tol: float = 1e-13, max_iter: int = 10000):
    """Scale a positive matrix ``K`` to marginals ``(a, b)``."""
    K = np.asarray(K, dtype=np.float64)
    u = np.ones(K.shape[0])
    v = np.ones(K.shape[1])
    for _ in range(max_iter):
        u = a / (K @ v)
        v = b / (K.T @ u)
        P = u[:, None] * K * v[None, :]
        if np.abs(P.sum(axis=1) - a).max() <= tol:
            break
    return u[:, None] * K * v[None, :]


def fixed_marginal_concavity_probe(
    C, h, hbar, num_pairs: int = 100, lambdas=(0.25, 0.5, 0.75), seed: int = 0
) -> float:
    """Same probe on couplings with both marginals fixed to ``(h, hbar)``.

    Pairs are random positive matrices projected by Sinkhorn scaling; each
    is checked to satisfy both marginals to ``1e-8``.
    """
    C = _matrix(C, "C")
    h = _check_marginal(h, C.shape[0])
    hbar = np.asarray(hbar, dtype=np.float64)
    if abs(hbar.sum() - 1.0) > 1e-9 or np.any(hbar <= 0):
        raise ValueError("hbar must be a positive probability vector")
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(num_pairs):
        pair = []
        for _ in range(2):
            T = sinkhorn_projection(rng.uniform(0.05, 1.0, (h.size, hbar.size)), h, hbar)
            if (
                np.abs(T.sum(axis=1) - h).max() > 1e-8
                or np.abs(T.sum(axis=0) - hbar).max() > 1e-8
            ):
                raise RuntimeError("Sinkhorn projection missed the marginals")
            pair.append(T)
        T1, T2 = pair
        F1, F2 = factorized_objective(C, T1), factorized_objective(C, T2)
        for lam in lambdas:
            mid = factorized_objective(C, lam * T1 + (1.0 - lam) * T2)
            worst = max(worst, lam * F1 + (1.0 - lam) * F2 - mid)
    return float(worst)


def lowrank_gluing_cost(C, T) -> float:
    """``g = Tr(U C' U C)`` with ``U = T diag(hbar)^-1 T'``.

    Equals ``sum_kl (T_k' C T_l)^2 / (hbar_k hbar_l)``; the Kronecker form
    is never built.
    """
    C = _matrix(C, "C")
    T = _matrix(T, "T")
    hb = prototype_weights(T)
    if np.any(hb <= 0):
        raise ValueError("low-rank gluing cost needs positive column marginals")
    U = (T / hb[None, :]) @ T.T
    return float(np.sum((U @ C.T) * (U @ C).T))


def finite_difference_check(objective, gradient, point, h_step: float = 1e-6) -> float:
    """``max |g_fd - g| / max |g|`` with central differences of step ``h_step``."""
    x = np.array(point, dtype=np.float64)
    g = np.asarray(gradient(x), dtype=np.float64)
    fd = np.zeros_like(x)
    flat = x.reshape(-1)
    out = fd.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h_step
        up = objective(x)
        flat[i] = keep - h_step
        down = objective(x)
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h_step)
    scale = max(np.abs(g).max(), np.finfo(float).tiny)
    return float(np.abs(fd - g).max() / scale)
