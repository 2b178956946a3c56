import numpy as np
import pytest

from conftest import psd_instance, random_marginal
from srgwdr.affinity import gram_kernel, mds_kernel
from srgwdr.barycenter import barycenter_structure, hard_assignments, solve_srgw_barycenter
from srgwdr.data import make_blobs
from srgwdr.gw_core import gw_cost
from srgwdr.gwdr import (
    MODELS,
    AdamOptions,
    Embedding,
    GwdrOptions,
    embedding_affinity,
    frozen_objective,
    init_embeddings,
    solve_fgwdr,
    solve_gwdr,
    z_gradient,
)
from srgwdr.metrics import adjusted_rand_index
from srgwdr.oracle import finite_difference_check
from srgwdr.solver import SolverOptions, random_plan


def test_init_embeddings_deterministic_and_standard_normal():
    a = init_embeddings(100, 100, seed=3)
    b = init_embeddings(100, 100, seed=3)
    assert np.array_equal(a.Z, b.Z)
    assert -0.05 <= a.Z.mean() <= 0.05
    assert 0.95 <= a.Z.var() <= 1.05
    with pytest.raises(ValueError):
        init_embeddings(0, 2)


def test_embedding_affinity_gram():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    np.testing.assert_allclose(embedding_affinity(Embedding(Q)).values, np.eye(4), atol=1e-12)
    C = embedding_affinity(init_embeddings(6, 2, seed=1)).values
    assert np.linalg.matrix_rank(C) <= 2


def test_embedding_affinity_student():
    Z = np.array([[0.0, 1.0], [0.0, 1.0], [2.0, 0.0]])
    K = embedding_affinity(Embedding(Z, "student")).values
    assert K[0, 1] == 1.0
    P = embedding_affinity(Embedding(Z, "student_doubly_stochastic")).values
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-6)


def _gradient_instance(seed, model, loss, N=7, n=3, d=2):
    rng = np.random.default_rng(seed)
    if loss == "kl":
        C = rng.uniform(0.05, 1.0, (N, N))
    else:
        C = rng.standard_normal((N, N))
    C = C + C.T
    h = random_marginal(rng, N)
    T = random_plan(h, n, rng)
    Z = rng.standard_normal((n, d))
    if model == "gram" and loss == "kl":
        # keep Z Z' positive
        Z = np.abs(Z) + 0.5
    return C, h, T, Embedding(Z, model)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("loss", ["l2", "kl"])
def test_z_gradient_finite_differences(model, loss):
    for seed in range(10):
        C, h, T, E = _gradient_instance(seed, model, loss)
        objective, duals = frozen_objective(C, E, T, loss)
        err = finite_difference_check(
            objective,
            lambda Z: z_gradient(C, h, Embedding(Z, model), T, loss, duals=duals),
            E.Z,
        )
        assert err <= 1e-5


def test_z_gradient_vanishes_at_stationary_point():
    C, h, n = psd_instance(2, N=8, n=3)
    T = random_plan(h, n, np.random.default_rng(0))
    w, V = np.linalg.eigh(barycenter_structure(C, T))
    Z = V * np.sqrt(np.maximum(w, 0.0))
    assert np.linalg.norm(z_gradient(C, h, Embedding(Z), T)) <= 1e-6


def test_z_gradient_scaling():
    C, h, T, E = _gradient_instance(4, "gram", "l2")
    s = 3.0
    g = z_gradient(C, h, E, T)
    gs = z_gradient(s * C, h, Embedding(np.sqrt(s) * E.Z), T)
    # E(sC, sqrt(s) Z) = s^2 E(C, Z), so grad_Z picks up s^1.5
    np.testing.assert_allclose(gs, s**1.5 * g, rtol=1e-12)
    a = gw_cost(C, E.Z @ E.Z.T, T)
    b = gw_cost(s * C, s * (E.Z @ E.Z.T), T)
    assert b == pytest.approx(s**2 * a, rel=1e-12)


@pytest.mark.parametrize("model", MODELS)
def test_gwdr_trace_monotone(model):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 4))
    C = mds_kernel(X).values if model == "gram" else np.exp(-mds_kernel(X).values ** 2)
    loss = "l2" if model == "gram" else "kl"
    h = np.full(30, 1 / 30)
    opts = GwdrOptions(solver=SolverOptions(seed=2), bcd_iters=10, z_steps_per_block=20)
    E, T, graph, rep = solve_gwdr(C, h, 4, 2, model, loss, opts)
    assert np.all(np.diff(rep.cost_trace) <= 1e-9)
    np.testing.assert_allclose(graph.weights, np.where(T.sum(0) < 1e-12, 0, T.sum(0)))
    assert rep.final_cost == pytest.approx(gw_cost(C, graph.structure, T, loss), rel=1e-10)


def test_empty_prototype_rows_frozen():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))])
    C = mds_kernel(X).values
    h = np.full(20, 1 / 20)
    init = init_embeddings(6, 2, seed=7)
    opts = GwdrOptions(solver=SolverOptions(seed=0), bcd_iters=5)
    E, T, graph, rep = solve_gwdr(C, h, 6, 2, "gram", "l2", opts, init=init)
    empty = ~graph.active()
    if empty.any():
        never_used = empty & np.all(np.isclose(E.Z, init.Z), axis=1)
        assert never_used.any()


def test_d_at_least_n_matches_barycenter():
    """With d >= n the gram/L2 rank constraint is inactive; most instances
    reach the same optimum as srGWB (BCD can still stall elsewhere)."""
    matched = 0
    total = 15
    for s in range(total):
        C, h, n = psd_instance(s)
        _, _, rb = solve_srgw_barycenter(C, h, n, "l2", SolverOptions(seed=s, restarts=20))
        opts = GwdrOptions(
            solver=SolverOptions(seed=s, restarts=20), z_steps_per_block=200, bcd_iters=60
        )
        _, _, _, rg = solve_gwdr(C, h, n, n, "gram", "l2", opts)
        # PSD structures are a subset of all structures
        assert rg.final_cost >= rb.final_cost - 1e-6 or rb.final_cost > rg.final_cost
        matched += abs(rg.final_cost - rb.final_cost) <= 1e-6
    assert matched >= 0.8 * total


def test_self_embedding_reaches_zero():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((5, 5))
    C = gram_kernel(Y).values
    h = np.full(5, 0.2)
    opts = GwdrOptions(solver=SolverOptions(seed=0), bcd_iters=5)
    E, T, graph, rep = solve_gwdr(
        C, h, 5, 5, "gram", "l2", opts, init=Embedding(Y), init_plan=np.diag(h)
    )
    assert rep.final_cost <= 1e-10
    np.testing.assert_allclose(T, np.diag(h))


def test_fgwdr_alpha_one_reproduces_gwdr():
    X, _ = make_blobs(60, 4, 3, seed=1)
    C = mds_kernel(X).values
    h = np.full(60, 1 / 60)
    opts = GwdrOptions(solver=SolverOptions(seed=5), bcd_iters=5, alpha=1.0)
    E1, T1, g1, r1 = solve_gwdr(C, h, 3, 2, "gram", "l2", opts)
    E2, F2, T2, g2, r2 = solve_fgwdr(C, X, h, 3, 2, "gram", "l2", opts)
    assert np.array_equal(E1.Z, E2.Z)
    assert np.array_equal(T1, T2)
    assert r1.to_dict() == r2.to_dict()


def kmeans_fixed_point_error(X, labels, F):
    d = ((X[:, None, :] - F[None]) ** 2).sum(-1)
    nearest_ok = np.all(d[np.arange(len(X)), labels] <= d.min(axis=1) + 1e-8)
    means = np.array([X[labels == j].mean(0) for j in np.unique(labels)])
    return nearest_ok, np.abs(means - F[np.unique(labels)]).max()


def test_fgwdr_alpha_zero_is_kmeans_fixed_point():
    for seed in range(5):
        X, _ = make_blobs(90, 3, 3, separation=3.0, seed=seed)
        C = mds_kernel(X).values
        h = np.full(90, 1 / 90)
        opts = GwdrOptions(solver=SolverOptions(seed=seed), bcd_iters=100, alpha=0.0)
        E, F, T, graph, rep = solve_fgwdr(C, X, h, 4, 2, "gram", "l2", opts)
        labels = hard_assignments(T).labels
        nearest_ok, mean_err = kmeans_fixed_point_error(X, labels, F)
        assert nearest_ok
        assert mean_err <= 1e-8


def test_gwdr_options_validation():
    with pytest.raises(ValueError):
        GwdrOptions(alpha=1.5)
    with pytest.raises(ValueError):
        GwdrOptions(bcd_iters=0)
    with pytest.raises(ValueError):
        AdamOptions(beta1=1.0)


@pytest.mark.slow
def test_blob_gwdr_benchmark():
    aris = []
    for seed in range(10):
        X, y = make_blobs(300, 10, 3, seed=seed)
        C = mds_kernel(X).values
        h = np.full(300, 1 / 300)
        _, T, _, _ = solve_gwdr(C, h, 3, 2, "gram", "l2", GwdrOptions(solver=SolverOptions(seed=seed)))
        aris.append(adjusted_rand_index(y, hard_assignments(T).labels))
    assert np.median(aris) >= 0.95


@pytest.mark.slow
def test_blob_fgwdr_half_benchmark():
    aris = []
    for seed in range(10):
        X, y = make_blobs(300, 10, 3, seed=seed)
        C = mds_kernel(X).values
        h = np.full(300, 1 / 300)
        opts = GwdrOptions(solver=SolverOptions(seed=seed), alpha=0.5)
        _, _, T, _, _ = solve_fgwdr(C, X, h, 3, 2, "gram", "l2", opts)
        aris.append(adjusted_rand_index(y, hard_assignments(T).labels))
    assert np.median(aris) >= 0.95
