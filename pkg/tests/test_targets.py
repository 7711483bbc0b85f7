import numpy as np
import pytest
from scipy.linalg import expm
from hypothesis import given, settings, strategies as st

from movingframes.maps import base_point
from movingframes.targets import (Grassmann, OffManifoldError, SpecialOrthogonal, Sphere, killing_flow,
                                  make_target)

TARGETS = [Sphere(2), Sphere(3), SpecialOrthogonal(3), Grassmann(2, 4), Grassmann(1, 3)]


def random_points(target, seed, n=6):
    # move the base point by random isometries; the targets are homogeneous
    rng = np.random.default_rng(seed)
    z0 = base_point(target)
    gens = target.generators
    return np.array([expm(np.einsum("k,kij->ij", rng.normal(size=len(gens)), gens)) @ z0
                     for _ in range(n)])


@pytest.mark.parametrize("target", TARGETS, ids=lambda t: repr(t))
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_projector_identities(target, seed):
    z = random_points(target, seed)
    T = target.tangent_projector(z)
    assert np.allclose(T @ T, T, atol=1e-10)
    assert np.allclose(T, np.swapaxes(T, -1, -2), atol=1e-12)
    assert np.allclose(np.trace(T, axis1=-2, axis2=-1), target.n, atol=1e-9)
    R = target.gauss_reflection(z)
    assert np.allclose(R @ R, np.eye(target.d), atol=1e-10)


@pytest.mark.parametrize("target", TARGETS, ids=lambda t: repr(t))
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_second_fundamental_form_normal_symmetric_and_matches_fd(target, seed):
    rng = np.random.default_rng(seed)
    z = random_points(target, seed, 3)
    X, Y = rng.normal(size=(2, 3, target.d))
    A = target.second_fundamental_form(z, X, Y)
    assert np.allclose(target.tangent(z, A), 0.0, atol=1e-10)
    assert np.allclose(A, target.second_fundamental_form(z, Y, X), atol=1e-10)
    assert np.allclose(A, target.second_fundamental_form_fd(z, X, Y), atol=1e-6)


@pytest.mark.parametrize("target", TARGETS, ids=lambda t: repr(t))
def test_killing_fields_tangent_and_isometric(target):
    z = random_points(target, 7, 4)
    K = target.killing_fields(z)
    for j in range(target.n_generators):
        assert np.allclose(target.normal(z, K[:, j]), 0.0, atol=1e-10)
        w = killing_flow(target, j, 0.37, z)
        assert target.residual(w) < 1e-10
    gens = target.generators
    assert np.allclose(gens, -np.swapaxes(gens, -1, -2))


def test_sphere_second_fundamental_form_closed_form():
    # for S^n: A(X, Y) = -<X, Y> z on tangent vectors
    s = Sphere(2)
    z = np.array([[0.0, 0.0, 1.0]])
    X = np.array([[1.0, 2.0, 0.0]])
    Y = np.array([[3.0, -1.0, 0.0]])
    assert np.allclose(s.second_fundamental_form(z, X, Y), [[0.0, 0.0, -1.0]])


def test_lipschitz_constants():
    assert Sphere(2).lipschitz_constant == pytest.approx(1.0)
    assert Sphere(2).n_generators == 3
    assert SpecialOrthogonal(3).n_generators == 6  # left and right actions


def test_off_manifold_rejected():
    with pytest.raises(OffManifoldError):
        Sphere(2).tangent_projector(np.array([[0.0, 0.0, 2.0]]))


def test_make_target():
    assert make_target("sphere", n=3) == Sphere(3)
    assert isinstance(make_target("so", k=3), SpecialOrthogonal)
    with pytest.raises(ValueError):
        make_target("torus")
