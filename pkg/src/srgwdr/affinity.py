"""
Input-side and embedding-side similarity matrices.

Every constructor returns an :class:`AffinityMatrix`, a thin wrapper around a
square ``float64`` array that also records which kernel produced it. The
wrapper implements ``__array__`` so it can be handed directly to numpy or to
the transport routines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError

KINDS = (
    "gram",
    "mds",
    "laplacian",
    "sne_row_stochastic",
    "entropic_doubly_stochastic",
    "student",
    "student_doubly_stochastic",
    "sqeuclidean",
    "custom",
)


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    values: np.ndarray
    kind: str = "custom"
    symmetric: bool = False
    nonnegative: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"affinity must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("affinity contains non-finite entries")
        if self.kind not in KINDS:
            raise ValueError(f"unknown affinity kind {self.kind!r}")
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.shape[0]


def _as_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"data matrix must be N x p with N, p >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data matrix contains non-finite entries")
    return X


def squared_distance_matrix(X) -> np.ndarray:
    """Pairwise squared Euclidean distances between the rows of ``X``."""
    X = _as_data(X)
    sq = np.einsum("ij,ij->i", X, X)
    E = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    E = 0.5 * (E + E.T)
    np.fill_diagonal(E, 0.0)
    np.maximum(E, 0.0, out=E)
    return E


def gram_kernel(X) -> AffinityMatrix:
    X = _as_data(X)
    K = X @ X.T
    return AffinityMatrix(0.5 * (K + K.T), kind="gram", symmetric=True)


def mds_kernel(X) -> AffinityMatrix:
    """Double-centred negative squared distances, ``-H E H``."""
    E = squared_distance_matrix(X)
    # -H E H without forming H
    D = -(E - E.mean(axis=0, keepdims=True) - E.mean(axis=1, keepdims=True) + E.mean())
    D = 0.5 * (D + D.T)
    return AffinityMatrix(D, kind="mds", symmetric=True)


def sqeuclidean_kernel(X) -> AffinityMatrix:
    return AffinityMatrix(
        squared_distance_matrix(X), kind="sqeuclidean", symmetric=True, nonnegative=True
    )


def knn_graph(X, k: int = 10) -> AffinityMatrix:
    """Symmetrized binary k-nearest-neighbour graph (ties go to the lower index)."""
    E = squared_distance_matrix(X)
    N = E.shape[0]
    if not 1 <= k:
        raise ValueError("k must be >= 1")
    k = min(k, N - 1)
    W = np.zeros_like(E)
    if k > 0:
        order = E + np.diag(np.full(N, np.inf))
        nn = np.argsort(order, axis=1, kind="stable")[:, :k]
        W[np.repeat(np.arange(N), k), nn.ravel()] = 1.0
        W = np.maximum(W, W.T)
    return AffinityMatrix(W, kind="custom", symmetric=True, nonnegative=True)


def graph_laplacian(W) -> AffinityMatrix:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    scale = max(np.abs(W).max(initial=0.0), 1.0)
    if np.abs(W - W.T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("graph weights must be symmetric")
    if np.any(W < 0):
        raise ValueError("graph weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise ValueError("graph weights must have a zero diagonal")
    L = np.diag(W.sum(axis=1)) - W
    return AffinityMatrix(L, kind="laplacian", symmetric=True)


def laplacian_kernel(X, k: int = 10) -> AffinityMatrix:
    return graph_laplacian(knn_graph(X, k))


def entropy(P, axis=1):
    """Row entropies ``-sum p (log p - 1)`` with ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * (np.log(P) - 1.0), 0.0)
    return -plogp.sum(axis=axis)


def _check_perplexity(N: int, xi: float):
    if N < 3:
        raise ValueError("perplexity calibration needs at least 3 samples")
    if not 1.0 < xi < N:
        raise ValueError(f"perplexity must satisfy 1 < xi < N={N}, got {xi}")


def _row_log_affinity(D, log_bw):
    logits = -D / np.exp(log_bw)[:, None]
    return logits - logsumexp(logits, axis=1, keepdims=True)


def _calibrate_bandwidths(D, xi, tol=1e-4, max_iter=200):
    """Bisection on log-bandwidth so that every row hits entropy log(xi) + 1.

    ``D`` must carry ``inf`` on entries that receive no mass.
    """
    N = D.shape[0]
    target = np.log(xi) + 1.0
    finite = np.where(np.isfinite(D), D, np.nan)
    scale = np.nanmax(finite, axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    lo = np.log(scale) - 40.0
    hi = np.log(scale) + 40.0
    log_bw = 0.5 * (lo + hi)
    done = np.zeros(N, dtype=bool)
    for _ in range(max_iter):
        H = entropy(np.exp(_row_log_affinity(D, log_bw)))
        gap = H - target
        done = np.abs(gap) <= tol
        if done.all():
            return log_bw
        # entropy increases with bandwidth
        too_high = gap > 0
        hi = np.where(~done & too_high, log_bw, hi)
        lo = np.where(~done & ~too_high, log_bw, lo)
        log_bw = np.where(done, log_bw, 0.5 * (lo + hi))
    raise ConvergenceError(
        f"bandwidth bisection did not reach entropy tolerance {tol} for "
        f"{int((~done).sum())} rows after {max_iter} iterations"
    )


def sne_affinity(X, xi: float, tol: float = 1e-4, max_iter: int = 200) -> AffinityMatrix:
    """Row-stochastic Gaussian affinity with per-row calibrated bandwidth.

    Each row ``P[i]`` is ``exp(-||x_i - x_j||^2 / bw_i)`` normalized over
    ``j != i``, with ``bw_i`` found by bisection so that the row entropy equals
    ``log(xi) + 1``.
    """
    E = squared_distance_matrix(X)
    N = E.shape[0]
    _check_perplexity(N, xi)
    D = E + np.diag(np.full(N, np.inf))
    log_bw = _calibrate_bandwidths(D, xi, tol=tol, max_iter=max_iter)
    P = np.exp(_row_log_affinity(D, log_bw))
    return AffinityMatrix(P, kind="sne_row_stochastic", nonnegative=True)


def _symmetric_log_affinity(C, eps, mu):
    e = eps[:, None] + eps[None, :]
    return (mu[:, None] + mu[None, :] - 2.0 * C) / e, e


class _SymmetricEntropicDual:
    """Dual of the symmetric entropic affinity problem.

    ``g(eps, mu) = sum(mu) + target * sum(eps) - 1/2 sum_ij (eps_i + eps_j) P_ij``
    with ``log P_ij = (mu_i + mu_j - 2 C_ij) / (eps_i + eps_j)``; ``g`` is
    jointly concave, its ``mu``-gradient is ``1 - P 1`` and its
    ``eps``-gradient is ``target - H(P)``.
    """

    def __init__(self, C, target):
        self.C = C
        self.target = target
        self.off = ~np.eye(C.shape[0], dtype=bool)

    def __call__(self, eps, mu):
        logP, e = _symmetric_log_affinity(self.C, eps, mu)
        logP = np.where(self.off, logP, 0.0)
        with np.errstate(over="ignore"):
            P = np.where(self.off, np.exp(logP), 0.0)
        value = mu.sum() + self.target * eps.sum() - 0.5 * (e * P).sum(where=self.off)
        return value, P, logP, e

    def blocks(self, P, logP, e):
        # negative Hessian [[A, -B], [-B, D]] in (mu, eps)
        W = np.where(self.off, P / e, 0.0)
        WL = W * logP
        WL2 = WL * logP
        A = np.diag(W.sum(1)) + W
        B = np.diag(WL.sum(1)) + WL
        D = np.diag(WL2.sum(1)) + WL2
        return A, B, D


def _barrier_newton(dual, eps, mu, tau, max_steps, tol):
    """Damped Newton ascent on ``g(eps, mu) + tau * sum(log eps)``."""
    N = eps.size
    value, P, logP, e = dual(eps, mu)
    psi = value + tau * np.log(eps).sum()
    steps = 0
    best, stalled = np.inf, 0
    while steps < max_steps:
        g_mu = 1.0 - P.sum(axis=1)
        g_eps = dual.target - (P * (1.0 - logP)).sum(axis=1) + tau / eps
        grad = np.concatenate([g_mu, g_eps])
        r = np.abs(grad).max()
        if r <= tol:
            break
        # round-off floor: residual no longer improves and psi is flat
        if stalled >= 5:
            break
        steps += 1
        A, B, D = dual.blocks(P, logP, e)
        D[np.diag_indices_from(D)] += tau / eps**2
        M = np.block([[A, -B], [-B, D]])
        try:
            step = np.linalg.solve(M, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(M, grad, rcond=None)[0]
        decrement = grad @ step
        if not decrement > 0.0:
            break
        d_mu, d_eps = step[:N], step[N:]
        t = 1.0
        shrink = d_eps < 0
        if shrink.any():
            t = min(1.0, 0.99 * np.min(-eps[shrink] / d_eps[shrink]))
        for _ in range(60):
            cand_eps = eps + t * d_eps
            cand = dual(cand_eps, mu + t * d_mu)
            cand_psi = cand[0] + tau * np.log(cand_eps).sum()
            if np.isfinite(cand_psi) and cand_psi >= psi + 1e-4 * t * decrement:
                break
            t *= 0.5
        else:
            break
        flat = cand_psi - psi <= 1e-15 * max(1.0, abs(psi))
        stalled = stalled + 1 if flat and r > 0.5 * best else 0
        best = min(best, r)
        eps, mu = cand_eps, mu + t * d_mu
        value, P, logP, e = cand
        psi = cand_psi
    return eps, mu, P, logP, steps


def entropic_affinity(
    X, xi: float, tol: float = 1e-7, max_iter: int = 1000
) -> AffinityMatrix:
    """Symmetric doubly stochastic affinity with per-row entropy control.

    Solves ``min <P, C>`` over symmetric ``P >= 0`` with unit row sums and
    row entropies at least ``log(xi) + 1``, where ``C`` holds squared
    distances. The solution has the form
    ``log P_ij = (mu_i + mu_j - 2 C_ij) / (eps_i + eps_j)`` with ``eps >= 0``.

    The concave dual is maximized jointly in ``(mu, eps)`` by damped Newton
    steps on a log-barrier for ``eps >= 0`` whose weight is shrunk tenfold
    per stage, started from the row-wise calibrated bandwidths. Rows whose
    entropy constraint is slack at the optimum end with ``eps_i`` at the
    barrier scale and entropy above the bound.

    Parameters
    ----------
    X : (N, p) array
    xi : float
        Perplexity, ``1 < xi < N``.
    tol : float
        Tolerance on row sums and on the entropy residual of active rows.
    max_iter : int
        Budget of Newton steps over all barrier stages.

    Raises
    ------
    ConvergenceError
        If the KKT residuals are not below ``tol`` within ``max_iter`` steps.
    """
    E = squared_distance_matrix(X)
    N = E.shape[0]
    _check_perplexity(N, xi)
    target = np.log(xi) + 1.0
    C = E + np.diag(np.full(N, np.inf))
    dual = _SymmetricEntropicDual(C, target)

    eps = np.exp(_calibrate_bandwidths(C, xi))
    mu = -eps * logsumexp(-C / eps[:, None], axis=1)
    scale = np.median(eps)
    tau = 0.1 * scale
    used = 0
    while True:
        eps, mu, P, logP, steps = _barrier_newton(
            dual, eps, mu, tau, max_iter - used, 0.1 * tol
        )
        used += steps
        slack = target - (P * (1.0 - logP)).sum(axis=1)
        r_mu = np.abs(1.0 - P.sum(axis=1)).max()
        # active rows: residual must vanish; rows with eps ~ 0: only the sign
        active = eps > 1e-6 * scale
        r_eps = max(np.abs(slack[active]).max(initial=0.0), slack.max(initial=0.0))
        if r_mu <= tol and r_eps <= tol:
            break
        if used >= max_iter or tau < 1e-16 * scale:
            raise ConvergenceError(
                f"entropic affinity did not converge in {used} Newton steps "
                f"(marginal residual {r_mu:.3e}, entropy residual {r_eps:.3e})"
            )
        tau *= 0.1
    P = np.where(dual.off, P, 0.0)
    P = 0.5 * (P + P.T)
    return AffinityMatrix(
        P, kind="entropic_doubly_stochastic", symmetric=True, nonnegative=True
    )


def symmetric_sinkhorn(K, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Scaling ``u`` such that ``diag(u) K diag(u)`` has unit row sums."""
    K = np.asarray(K, dtype=np.float64)
    u = 1.0 / np.sqrt(K.sum(axis=1))
    for _ in range(max_iter):
        Ku = K @ u
        if np.abs(u * Ku - 1.0).max() <= tol:
            return u
        u = np.sqrt(u / Ku)
    raise ConvergenceError(f"symmetric Sinkhorn did not converge in {max_iter} iterations")


def student_kernel(Z, normalize: str = "none") -> AffinityMatrix:
    """Cauchy kernel ``1 / (1 + ||z_k - z_l||^2)``.

    With ``normalize="doubly_stochastic"`` the kernel is rescaled by a
    symmetric Sinkhorn projection so rows (and columns) sum to one.
    """
    K = 1.0 / (1.0 + squared_distance_matrix(Z))
    if normalize == "none":
        return AffinityMatrix(K, kind="student", symmetric=True, nonnegative=True)
    if normalize == "doubly_stochastic":
        u = symmetric_sinkhorn(K)
        P = u[:, None] * K * u[None, :]
        P = 0.5 * (P + P.T)
        return AffinityMatrix(
            P, kind="student_doubly_stochastic", symmetric=True, nonnegative=True
        )
    raise ValueError(f"unknown normalization {normalize!r}")


def input_affinity(X, kind: str, xi: float = 30.0, k: int = 10) -> AffinityMatrix:
    """Build an input affinity by short name (used by the CLI)."""
    builders = {
        "gram": lambda: gram_kernel(X),
        "mds": lambda: mds_kernel(X),
        "laplacian": lambda: laplacian_kernel(X, k),
        "sne": lambda: sne_affinity(X, xi),
        "entropic": lambda: entropic_affinity(X, xi),
        "sqeuclidean": lambda: sqeuclidean_kernel(X),
    }
    if kind not in builders:
        raise ValueError(f"unknown kernel {kind!r}; choose from {sorted(builders)}")
    return builders[kind]()
