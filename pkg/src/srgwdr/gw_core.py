"""
Gromov-Wasserstein and fused Gromov-Wasserstein costs.

Both inner losses are decomposable, ``L(a, b) = f1(a) + f2(b) - h1(a) h2(b)``,
which turns the quartic sum ``sum_ijkl L(C_ij, Cz_kl) T_ik T_jl`` into a
handful of matrix products costing ``O(n N^2 + n^2 N)``:

    E(T) = p' f1(C) p + q' f2(Cz) q - <h1(C) T h2(Cz)', T>

with ``p = T 1`` and ``q = T' 1``. For a fixed pair of structures, ``E`` is a
quadratic form in ``T``.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

LOSSES = ("l2", "kl")
LOG_FLOOR = 1e-30


def check_loss(loss: str) -> str:
    key = str(loss).lower()
    if key not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    return key


def _matrix(A, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def _check_dims(C_X, C_Z, T):
    N, n = T.shape
    if C_X.shape != (N, N):
        raise ValueError(f"C_X has shape {C_X.shape}, expected {(N, N)}")
    if C_Z.shape != (n, n):
        raise ValueError(f"C_Z has shape {C_Z.shape}, expected {(n, n)}")


def _source_parts(C, loss, p=None):
    """``f1(C)`` and ``h1(C)``."""
    if loss == "l2":
        return C * C, C
    if p is None:
        bad = C < 0
    else:
        bad = (C < 0) & (np.outer(p, p) > 0)
    if bad.any():
        raise DomainError("KL loss needs a nonnegative source structure")
    Cp = np.maximum(C, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(Cp > 0, Cp * np.log(Cp), 0.0) - Cp
    return f1, Cp


def _target_parts(C_Z, loss, q):
    """``f2(Cz)`` and ``h2(Cz)``; KL entries off the support are floored."""
    if loss == "l2":
        return C_Z * C_Z, 2.0 * C_Z
    support = np.outer(q, q) > 0
    if np.any(C_Z[support] <= 0):
        raise DomainError(
            "KL loss needs target entries > 0 wherever the plan places mass"
        )
    return C_Z, np.log(np.maximum(C_Z, LOG_FLOOR))


class GWObjective:
    """The map ``T -> E(T)`` for fixed structures, with gradient and the
    coefficients of its restriction to a segment.

    Parameters
    ----------
    C_X : (N, N) array
    C_Z : (n, n) array
    loss : {"l2", "kl"}
    """

    def __init__(self, C_X, C_Z, loss="l2"):
        self.loss = check_loss(loss)
        self.C_X = _matrix(C_X, "C_X")
        self.C_Z = _matrix(C_Z, "C_Z")
        self.f1, self.h1 = _source_parts(self.C_X, self.loss)
        self.sym1 = np.array_equal(self.h1, self.h1.T) and np.array_equal(
            self.f1, self.f1.T
        )
        # KL target parts depend on the column support; set on first use
        self._target_q_support = None

    def _set_target(self, q):
        support = q > 0
        if self._target_q_support is not None and np.array_equal(
            support, self._target_q_support
        ):
            return
        if self.loss == "kl":
            self.f2, self.h2 = _target_parts(self.C_Z, "kl", support.astype(float))
        else:
            self.f2, self.h2 = _target_parts(self.C_Z, "l2", q)
        self.sym2 = np.array_equal(self.h2, self.h2.T) and np.array_equal(
            self.f2, self.f2.T
        )
        self._target_q_support = support

    def cost(self, T) -> float:
        T = np.asarray(T, dtype=np.float64)
        p = T.sum(axis=1)
        q = T.sum(axis=0)
        self._set_target(q)
        value = p @ self.f1 @ p + q @ self.f2 @ q
        value -= np.sum(((self.h1 @ T) @ self.h2.T) * T)
        return float(value)

    def gradient(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=np.float64)
        p = T.sum(axis=1)
        q = T.sum(axis=0)
        self._set_target(q)
        HT = self.h1 @ T
        if self.sym1 and self.sym2:
            cross = 2.0 * (HT @ self.h2)
            a = 2.0 * (self.f1 @ p)
            b = 2.0 * (self.f2 @ q)
        else:
            cross = HT @ self.h2.T + (self.h1.T @ T) @ self.h2
            a = (self.f1 + self.f1.T) @ p
            b = (self.f2 + self.f2.T) @ q
        return a[:, None] + b[None, :] - cross

    def segment(self, T, Delta, G=None):
        """Coefficients ``(a, b)`` with ``E(T + g Delta) = E(T) + b g + a g^2``.

        Valid when ``Delta`` has zero row sums.
        """
        if G is None:
            G = self.gradient(T)
        qd = Delta.sum(axis=0)
        a = qd @ self.f2 @ qd - np.sum(((self.h1 @ Delta) @ self.h2.T) * Delta)
        b = np.sum(G * Delta)
        return float(a), float(b)


def gw_cost(C_X, C_Z, T, loss="l2") -> float:
    """GW cost ``sum_ijkl L([C_X]_ij, [C_Z]_kl) T_ik T_jl``.

    Evaluated through the separable decomposition, never the quartic sum.

    Raises
    ------
    DomainError
        For the KL loss when ``C_X`` is negative on the support or ``C_Z``
        is not strictly positive on the support of the plan.
    """
    T = _matrix(T, "T")
    C_X = _matrix(C_X, "C_X")
    C_Z = _matrix(C_Z, "C_Z")
    _check_dims(C_X, C_Z, T)
    loss = check_loss(loss)
    p = T.sum(axis=1)
    q = T.sum(axis=0)
    f1, h1 = _source_parts(C_X, loss, p)
    f2, h2 = _target_parts(C_Z, loss, q)
    value = p @ f1 @ p + q @ f2 @ q - np.sum(((h1 @ T) @ h2.T) * T)
    return float(value)


def gw_plan_gradient(C_X, C_Z, T, loss="l2") -> np.ndarray:
    """Gradient of :func:`gw_cost` with respect to ``T`` (marginals free)."""
    T = _matrix(T, "T")
    C_X = _matrix(C_X, "C_X")
    C_Z = _matrix(C_Z, "C_Z")
    _check_dims(C_X, C_Z, T)
    loss = check_loss(loss)
    p = T.sum(axis=1)
    q = T.sum(axis=0)
    f1, h1 = _source_parts(C_X, loss, p)
    f2, h2 = _target_parts(C_Z, loss, q)
    cross = (h1 @ T) @ h2.T + (h1.T @ T) @ h2
    return ((f1 + f1.T) @ p)[:, None] + ((f2 + f2.T) @ q)[None, :] - cross


def feature_cost_matrix(X, F, loss="l2") -> np.ndarray:
    """``M_ij = sum_k L(X_ik, F_jk)``."""
    X = _matrix(X, "X")
    F = _matrix(F, "F")
    if X.shape[1] != F.shape[1]:
        raise ValueError(
            f"feature dimensions differ: X has {X.shape[1]}, F has {F.shape[1]}"
        )
    loss = check_loss(loss)
    if loss == "l2":
        diff = X[:, None, :] - F[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    if np.any(X < 0):
        raise DomainError("KL feature loss needs nonnegative features")
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogx = np.where(X > 0, X * np.log(X), 0.0)
    logF = np.log(np.maximum(F, LOG_FLOOR))
    return (xlogx - X).sum(axis=1)[:, None] + F.sum(axis=1)[None, :] - X @ logF.T


def fused_cost(C_X, X, C_Z, F, T, alpha, loss="l2") -> float:
    """``alpha * GW + (1 - alpha) * sum_ij M_ij T_ij`` with
    ``M_ij = sum_k L(X_ik, F_jk)``.

    ``alpha = 1`` returns :func:`gw_cost` unchanged and ``alpha = 0`` skips
    the structure term altogether.
    """
    alpha = check_alpha(alpha)
    if alpha == 1.0:
        return gw_cost(C_X, C_Z, T, loss)
    T = _matrix(T, "T")
    linear = float(np.sum(feature_cost_matrix(X, F, loss) * T))
    if alpha == 0.0:
        return linear
    return alpha * gw_cost(C_X, C_Z, T, loss) + (1.0 - alpha) * linear


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def quartic_gw_cost(C_X, C_Z, T, loss="l2") -> float:
    """Reference quartic sum (small instances only)."""
    C_X = _matrix(C_X, "C_X")
    C_Z = _matrix(C_Z, "C_Z")
    T = _matrix(T, "T")
    loss = check_loss(loss)
    a = C_X[:, :, None, None]
    b = C_Z[None, None, :, :]
    if loss == "l2":
        L = (a - b) ** 2
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            alog = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0) / b), 0.0)
        L = alog - a + b
    # L[i, j, k, l] T[i, k] T[j, l]
    return float(np.einsum("ijkl,ik,jl->", L, T, T))
