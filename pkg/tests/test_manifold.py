import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from spdvae import linalg, manifold
from spdvae.errors import InvalidInput, NonConvergence
from spdvae.manifold import ReferencePoint

from conftest import random_spd, random_symmetric, spd_matrices
from oracles import geodesic_midpoint, scipy_airm


def test_reference_point_roots(rng):
    ref = ReferencePoint.from_point(random_spd(rng, 13, cond=100))
    np.testing.assert_allclose(ref.sqrt @ ref.sqrt, ref.point, atol=1e-8)
    np.testing.assert_allclose(ref.inv_sqrt @ ref.point @ ref.inv_sqrt, np.eye(13), atol=1e-8)
    assert ref.dim == 13


def test_airm_examples():
    assert manifold.airm_distance(np.eye(2), np.eye(2)) == 0.0
    assert manifold.airm_distance(np.eye(2), np.e * np.eye(2)) == pytest.approx(np.sqrt(2), rel=1e-14)
    with pytest.raises(InvalidInput):
        manifold.airm_distance(np.eye(2), np.eye(3))


def test_airm_matches_scipy_route(rng):
    for _ in range(20):
        a, b = random_spd(rng, 6, 50), random_spd(rng, 6, 50)
        assert manifold.airm_distance(a, b) == pytest.approx(scipy_airm(a, b), rel=1e-9)


def test_airm_broadcasts(rng):
    a = random_spd(rng, 4)
    bs = random_spd(rng, 4, size=5)
    d = manifold.airm_distance(a, bs)
    assert d.shape == (5,)
    np.testing.assert_allclose(d, [manifold.airm_distance(a, b) for b in bs])


def test_log_exp_examples(rng):
    ref = ReferencePoint.from_point(random_spd(rng, 5))
    np.testing.assert_allclose(manifold.log_map(ref.point, ref), 0, atol=1e-12)
    np.testing.assert_allclose(manifold.exp_map(np.zeros((5, 5)), ref), ref.point, atol=1e-12)
    x = random_spd(rng, 5)
    eye = ReferencePoint.identity(5)
    np.testing.assert_allclose(manifold.log_map(x, eye), linalg.matrix_log(x), atol=1e-13)
    s = random_symmetric(rng, 5)
    np.testing.assert_allclose(manifold.exp_map(s, eye), linalg.matrix_exp(s), rtol=1e-12)


def test_log_map_matches_closed_form(rng):
    # Log_P(X) = P^{1/2} log(P^{-1/2} X P^{-1/2}) P^{1/2}, by scipy
    p, x = random_spd(rng, 6), random_spd(rng, 6)
    rp = sla.sqrtm(p).real
    rip = np.linalg.inv(rp)
    expected = rp @ sla.logm(rip @ x @ rip).real @ rp
    np.testing.assert_allclose(manifold.log_map(x, ReferencePoint.from_point(p)), expected, atol=1e-10)


def test_frechet_examples(rng):
    a = random_spd(rng, 4)
    np.testing.assert_allclose(manifold.frechet_mean([a, a, a]), a, atol=1e-10)
    g = manifold.frechet_mean([np.eye(2), 4 * np.eye(2)])
    np.testing.assert_allclose(g, 2 * np.eye(2), atol=1e-8)


def test_frechet_two_point_closed_form(rng):
    for _ in range(10):
        a, b = random_spd(rng, 6, 30), random_spd(rng, 6, 30)
        g = manifold.frechet_mean([a, b])
        np.testing.assert_allclose(g, geodesic_midpoint(a, b), atol=1e-6)


def test_frechet_gradient_condition(rng):
    mats = random_spd(rng, 5, 20, size=30)
    g = manifold.frechet_mean(mats)
    ref = ReferencePoint.from_point(g)
    grad = manifold.whitened_log(mats, ref).sum(axis=0)
    assert np.linalg.norm(grad) <= 1e-8 * len(mats)


def test_frechet_non_convergence(rng):
    mats = random_spd(rng, 5, 1e4, size=8)
    with pytest.raises(NonConvergence) as err:
        manifold.frechet_mean(mats, tol=1e-30, max_iter=2)
    assert err.value.residual > 0
    with pytest.raises(InvalidInput):
        manifold.frechet_mean(np.zeros((0, 3, 3)))


def test_parallel_transport_examples(rng):
    g_s, g_t = random_spd(rng, 6), random_spd(rng, 6)
    x = random_spd(rng, 6)
    np.testing.assert_allclose(manifold.parallel_transport(x, g_s, g_s), x, atol=1e-8)
    np.testing.assert_allclose(manifold.parallel_transport(g_s, g_s, g_t), g_t, atol=1e-6)


def test_transport_relocates_set_mean(rng):
    src = random_spd(rng, 5, size=40)
    g_s = manifold.frechet_mean(src)
    g_t = random_spd(rng, 5)
    moved = manifold.parallel_transport(src, g_s, g_t)
    np.testing.assert_allclose(manifold.frechet_mean(moved), g_t, atol=1e-5)


def test_vectorize_examples(rng):
    np.testing.assert_array_equal(manifold.vectorize(np.array([[1.0, 2.0], [2.0, 3.0]])), [1, 2, 3])
    assert manifold.vectorize(np.eye(13)).shape == (91,)
    s = random_symmetric(rng, 7, size=3)
    assert np.array_equal(manifold.unvectorize(manifold.vectorize(s)), s)
    with pytest.raises(InvalidInput):
        manifold.unvectorize(np.zeros(5))
    with pytest.raises(InvalidInput):
        manifold.unvectorize(np.zeros(6), n=4)


@given(spd_matrices(), spd_matrices(), st.integers(0, 2**32 - 1))
def test_affine_invariance_property(a, b, seed):
    if a.shape != b.shape:
        b = random_spd(np.random.default_rng(seed), a.shape[0])
    w = np.random.default_rng(seed).standard_normal(a.shape) + 2 * np.eye(a.shape[0])
    d0 = manifold.airm_distance(a, b)
    d1 = manifold.airm_distance(w @ a @ w.T, w @ b @ w.T)
    assert abs(d1 - d0) <= 1e-8 * max(1.0, d0)


@given(spd_matrices(n=4), spd_matrices(n=4), spd_matrices(n=4))
def test_metric_axioms_property(a, b, c):
    ab = manifold.airm_distance(a, b)
    assert ab >= 0
    assert ab == pytest.approx(manifold.airm_distance(b, a), rel=1e-8, abs=1e-10)
    assert manifold.airm_distance(a, a) <= 1e-7
    assert manifold.airm_distance(a, c) <= ab + manifold.airm_distance(b, c) + 1e-9
