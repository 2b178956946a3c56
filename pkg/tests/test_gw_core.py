import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_marginal
from srgwdr.errors import DomainError
from srgwdr.gw_core import (
    feature_cost_matrix,
    fused_cost,
    gw_cost,
    gw_plan_gradient,
    quartic_gw_cost,
)
from srgwdr.oracle import finite_difference_check
from srgwdr.solver import random_plan


def instance(seed, loss, N=None, n=None, symmetric=True):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, 13)) if N is None else N
    n = int(rng.integers(1, 5)) if n is None else n
    if loss == "kl":
        C_X = rng.uniform(0.1, 2.0, (N, N))
        C_Z = rng.uniform(0.1, 2.0, (n, n))
    else:
        C_X = rng.standard_normal((N, N))
        C_Z = rng.standard_normal((n, n))
    if symmetric:
        C_X, C_Z = C_X + C_X.T, C_Z + C_Z.T
    h = random_marginal(rng, N)
    return C_X, C_Z, random_plan(h, n, rng)


def test_self_matching_is_free(rng):
    C = rng.uniform(0.1, 1.0, (5, 5))
    h = random_marginal(rng, 5)
    T = np.diag(h)
    assert gw_cost(C, C, T, "l2") == pytest.approx(0.0, abs=1e-14)
    assert gw_cost(C, C, T, "kl") == pytest.approx(0.0, abs=1e-14)


def test_two_points_one_prototype():
    C_X = np.array([[0.0, 1.0], [1.0, 0.0]])
    T = np.array([[0.5], [0.5]])
    assert gw_cost(C_X, [[0.0]], T, "l2") == pytest.approx(0.5, rel=1e-14)


def test_kl_constant_structures():
    T = np.full((4, 2), 0.125)
    assert gw_cost(np.full((4, 4), 0.7), np.full((2, 2), 0.7), T, "kl") == pytest.approx(
        0.0, abs=1e-14
    )


def test_kl_domain_error_on_support():
    T = np.full((3, 2), 1.0 / 6)
    with pytest.raises(DomainError):
        gw_cost(np.ones((3, 3)), np.array([[1.0, 0.0], [0.0, 1.0]]), T, "kl")


def test_kl_zero_target_off_support_is_allowed():
    T = np.zeros((3, 2))
    T[:, 0] = 1.0 / 3
    Cz = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert np.isfinite(gw_cost(np.ones((3, 3)), Cz, T, "kl"))


@pytest.mark.parametrize("loss", ["l2", "kl"])
@pytest.mark.parametrize("symmetric", [True, False])
def test_decomposition_matches_quartic_sum(loss, symmetric):
    for seed in range(25):
        C_X, C_Z, T = instance(seed, loss, symmetric=symmetric)
        fast = gw_cost(C_X, C_Z, T, loss)
        slow = quartic_gw_cost(C_X, C_Z, T, loss)
        assert fast == pytest.approx(slow, rel=1e-10, abs=1e-14)
        assert fast >= -1e-12


@pytest.mark.parametrize("loss", ["l2", "kl"])
@pytest.mark.parametrize("symmetric", [True, False])
def test_plan_gradient_finite_differences(loss, symmetric):
    for seed in range(10):
        C_X, C_Z, T = instance(seed, loss, N=6, n=3, symmetric=symmetric)
        err = finite_difference_check(
            lambda P: gw_cost(C_X, C_Z, P, loss),
            lambda P: gw_plan_gradient(C_X, C_Z, P, loss),
            T,
        )
        assert err <= 1e-5


def test_symmetric_l2_gradient_is_twice_the_tensor_product(rng):
    C_X, C_Z, T = instance(3, "l2", N=5, n=3)
    # d/dT of <L (x) T, T> for a symmetric tensor is 2 (L (x) T)
    L = (C_X[:, :, None, None] - C_Z[None, None, :, :]) ** 2
    expected = 2.0 * np.einsum("ijkl,jl->ik", L, T)
    np.testing.assert_allclose(gw_plan_gradient(C_X, C_Z, T), expected, rtol=1e-11)


@pytest.mark.parametrize("loss", ["l2", "kl"])
def test_constant_structures_give_constant_gradient(loss):
    T = random_plan(np.full(5, 0.2), 3, np.random.default_rng(0))
    G = gw_plan_gradient(np.full((5, 5), 0.4), np.full((3, 3), 0.4), T, loss)
    np.testing.assert_allclose(G, G[0, 0], atol=1e-14)


@given(st.integers(0, 10_000), st.sampled_from(["l2", "kl"]))
@settings(max_examples=30, deadline=None)
def test_cost_invariant_under_sample_permutation(seed, loss):
    C_X, C_Z, T = instance(seed, loss)
    perm = np.random.default_rng(seed).permutation(C_X.shape[0])
    a = gw_cost(C_X, C_Z, T, loss)
    b = gw_cost(C_X[np.ix_(perm, perm)], C_Z, T[perm], loss)
    assert b == pytest.approx(a, rel=1e-10, abs=1e-13)


def test_fused_cost_endpoints_and_midpoint(rng):
    C_X, C_Z, T = instance(7, "l2", N=6, n=2)
    X = rng.standard_normal((6, 3))
    F = rng.standard_normal((2, 3))
    g = gw_cost(C_X, C_Z, T)
    w = float(np.sum(feature_cost_matrix(X, F) * T))
    assert fused_cost(C_X, X, C_Z, F, T, 1.0) == g
    assert fused_cost(C_X, X, C_Z, F, T, 0.0) == pytest.approx(w, rel=1e-15)
    assert fused_cost(C_X, X, C_Z, F, T, 0.5) == pytest.approx(0.5 * (g + w), rel=1e-13)


def test_fused_cost_alpha_zero_is_within_cluster_sum_of_squares():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 1.0], [10.0, 3.0]])
    h = np.full(4, 0.25)
    T = np.zeros((4, 2))
    T[[0, 1], 0] = h[:2]
    T[[2, 3], 1] = h[2:]
    F = np.array([[1.0, 0.0], [10.0, 2.0]])
    # each point is at squared distance 1 from its mean
    assert fused_cost(np.zeros((4, 4)), X, np.zeros((2, 2)), F, T, 0.0) == pytest.approx(1.0)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        gw_cost(np.eye(3), np.eye(2), np.ones((3, 3)) / 9)
    with pytest.raises(ValueError):
        fused_cost(np.eye(2), np.ones((2, 3)), np.eye(2), np.ones((2, 2)), np.eye(2) / 2, 0.5)
    with pytest.raises(ValueError):
        fused_cost(np.eye(2), np.ones((2, 2)), np.eye(2), np.ones((2, 2)), np.eye(2) / 2, 1.5)
