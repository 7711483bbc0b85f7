import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from movingframes.connection import (ConnectionForm, check_projector_identities, compute_divergence_omega,
                                     compute_omega_from_A, compute_omega_from_projector,
                                     compute_omega_from_reflection, convergence_order,
                                     covariant_derivative, curvature, gauge_transform, omega_distance,
                                     tension)
from movingframes.grid import Field, GridDomain, l2_norm
from movingframes.maps import constant_map, perturbed_map
from movingframes.targets import Grassmann, MapField, SpecialOrthogonal, Sphere

DOM = GridDomain(2, 24)


def test_constant_map_has_zero_connection():
    for target in (Sphere(2), SpecialOrthogonal(3), Grassmann(2, 4)):
        u = constant_map(DOM, target)
        for conn in (compute_omega_from_A(u), compute_omega_from_reflection(u),
                     compute_omega_from_projector(u.tangent_projector_field())):
            assert np.abs(conn.omega.values).max() == 0.0


# amplitudes small enough that the projection stays smooth (no gap closing, det > 0)
@pytest.mark.parametrize("target,amp", [(Sphere(2), 0.5), (SpecialOrthogonal(3), 0.2),
                                        (Grassmann(2, 4), 0.1)], ids=repr)
def test_three_constructions_agree_and_converge(target, amp):
    errs = []
    for N in (24, 48):
        u = perturbed_map(GridDomain(2, N), target, amp)
        a = compute_omega_from_A(u)
        errs.append([omega_distance(a, compute_omega_from_reflection(u)),
                     omega_distance(a, compute_omega_from_projector(u.tangent_projector_field()))])
    errs = np.array(errs)
    assert np.all(errs[1] < 0.05)
    assert np.all(errs[0] / errs[1] >= 1.7)


def test_skewness_exact_for_A_and_projector_forms():
    u = perturbed_map(DOM, Sphere(2), 0.7)
    assert compute_omega_from_A(u).skewness < 1e-14
    assert compute_omega_from_projector(u.tangent_projector_field()).skewness < 1e-14


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_omega_equivariant_under_ambient_rotation(seed):
    # u -> M u rotates T to M T M^T; the projector formula is linear in dT, so exact
    rng = np.random.default_rng(seed)
    M = expm(np.einsum("k,kij->ij", rng.normal(size=3), Sphere(2).generators))
    u = perturbed_map(DOM, Sphere(2), 0.5)
    v = MapField(u.u.with_values(u.u.values @ M.T), Sphere(2))
    w_u = compute_omega_from_projector(u.tangent_projector_field()).omega.values
    w_v = compute_omega_from_projector(v.tangent_projector_field()).omega.values
    assert np.allclose(w_v, M @ w_u @ M.T, atol=1e-10)


def test_parallel_T_and_projector_identities_converge():
    vals = []
    for N in (24, 48):
        u = perturbed_map(GridDomain(2, N), Sphere(2), 0.5)
        T = u.tangent_projector_field()
        rep = check_projector_identities(T)
        vals.append([l2_norm(covariant_derivative(T, compute_omega_from_A(u))),
                     rep["TdTT"]["l2"], rep["VdTV"]["l2"], rep["dT_split"]["l2"]])
    vals = np.array(vals)
    assert np.all(vals[0] / vals[1] >= 1.7)


def test_curvature_of_doubled_connection_vanishes_in_the_limit():
    vals = []
    for N in (24, 48):
        dom = GridDomain(2, N)
        u = perturbed_map(dom, Sphere(2), 0.5)
        vals.append(l2_norm(curvature(compute_omega_from_A(u), 2.0), dom.interior))
    assert convergence_order(*vals) >= 0.75
    assert vals[0] / vals[1] >= 1.7


def test_divergence_identity_converges():
    res = []
    for N in (24, 48):
        u = perturbed_map(GridDomain(2, N), Sphere(2), 0.5)
        res.append(compute_divergence_omega(u)["relative_mismatch"])
    assert res[1] < res[0]


def test_gauge_transform_of_zero_is_maurer_cartan():
    dom = DOM
    gen = Sphere(2).generators
    S = np.zeros((dom.n_nodes, 3, 3))
    S[dom.valid] = [expm(x[0] * gen[0] + 0.5 * x[1] * gen[2]) for x in dom.coords[dom.valid]]
    Sf = Field.from_nodes(dom, S)
    zero = ConnectionForm(Field(dom, 1, np.zeros((dom.n_nodes, 2, 3, 3))), "zero")
    g = gauge_transform(zero, Sf)
    # S^T dS is skew up to the O(h^2) product-rule defect of difference quotients
    assert g.skewness < 5e-3
    # the gauge orbit of the zero connection is flat
    assert l2_norm(curvature(g), dom.core(2)) < 5e-3


def test_tension_of_constant_map_is_zero():
    u = constant_map(DOM, Sphere(2))
    assert np.abs(tension(u).values).max() == 0.0


def test_rejects_non_projector():
    bad = Field.from_nodes(DOM, np.broadcast_to(2.0 * np.eye(3), (DOM.n_nodes, 3, 3)).copy())
    with pytest.raises(ValueError):
        compute_omega_from_projector(bad)
    with pytest.raises(ValueError):
        check_projector_identities(bad)
