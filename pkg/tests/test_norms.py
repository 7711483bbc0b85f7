import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from movingframes.grid import Field, GridDomain, exterior_derivative
from movingframes.maps import band_limited
from movingframes.norms import BallFamily, ball_energy, bmo_seminorm, lp_norm, morrey_norm

DOM = GridDomain(2, 48)
# first nonzero Neumann eigenvalue of the unit disk is j'_{1,1}^2
J11_PRIME = 1.8411837813406593


def test_bmo_of_coordinate_closed_form():
    # (r^{-2} int_{B_r} x1^2)^{1/2} = r sqrt(pi)/2, maximal for the largest contained ball
    dom = GridDomain(2, 128)
    f = Field.from_function(dom, lambda x: x[:, 0])
    rep = bmo_seminorm(f)
    assert rep.value == pytest.approx((1 - dom.h) * np.sqrt(np.pi) / 2, rel=2e-3)
    assert rep.radius == pytest.approx(1 - dom.h)


def test_morrey_of_constant_gradient_m2_is_l2():
    f = Field.from_function(DOM, lambda x: 3.0 * x[:, 1])
    rep = morrey_norm(exterior_derivative(f))
    # in two dimensions the weight r^{2-m} is 1, so the largest ball wins
    assert rep.value == pytest.approx(3.0 * np.sqrt(np.pi), rel=0.05)
    assert rep.value <= lp_norm(exterior_derivative(f), 2) + 1e-12


def test_morrey_3d_weight_favors_concentration():
    dom = GridDomain(3, 32)
    f = Field.from_function(dom, lambda x: np.exp(-40 * (x**2).sum(axis=1)))
    rep = morrey_norm(exterior_derivative(f))
    assert rep.radius < 0.5


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3),
       shift=st.floats(-10, 10))
def test_homogeneity_and_shift_invariance(seed, c, shift):
    f = band_limited(DOM, seed)
    df = exterior_derivative(f)
    assert morrey_norm(df * c).value == pytest.approx(abs(c) * morrey_norm(df).value, rel=1e-9)
    assert bmo_seminorm(f + shift).value == pytest.approx(bmo_seminorm(f).value, rel=1e-7, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_subfamily_gives_smaller_supremum(seed):
    f = exterior_derivative(band_limited(DOM, seed))
    full = BallFamily.dyadic(DOM, stride=1)
    coarse = BallFamily.dyadic(DOM, stride=4)
    assert morrey_norm(f, coarse).value <= morrey_norm(f, full).value * (1 + 1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_poincare_bound_on_disks(seed):
    # ||f - f_B||_{L2(B_r)} <= (r / j'_11) ||df||_{L2(B_r)}  gives  BMO <= ||df||_M / j'_11
    dom = GridDomain(2, 64)
    f = band_limited(dom, seed, max_freq=3)
    bmo = bmo_seminorm(f).value
    mor = morrey_norm(exterior_derivative(f)).value
    assert bmo <= 1.05 * mor / J11_PRIME


def test_bmo_rejects_forms_and_foreign_families():
    f = band_limited(DOM, 1)
    with pytest.raises(ValueError):
        bmo_seminorm(exterior_derivative(f))
    with pytest.raises(ValueError):
        morrey_norm(exterior_derivative(f), BallFamily.dyadic(GridDomain(2, 32)))


def test_contained_family_admissibility():
    fam = BallFamily.dyadic(DOM, contained=True)
    adm = fam.pairs()
    cr = DOM.radius[fam.centers]
    for r_i, r in enumerate(fam.radii):
        assert np.all(cr[adm[r_i]] + r <= 1.0 + 1e-12)


def test_lp_norms_and_regions():
    f = Field.from_function(DOM, lambda x: np.ones(len(x)))
    area = lp_norm(f, 1)
    assert lp_norm(f, 2) ** 2 == pytest.approx(area)
    assert lp_norm(f, np.inf) == 1.0
    assert lp_norm(f, "inf") == 1.0
    assert lp_norm(f, 1, (np.zeros(2), 0.5)) == pytest.approx(np.pi / 4, rel=0.05)
    assert ball_energy(f, np.zeros(2), 0.5) == pytest.approx(np.pi / 4, rel=0.05)
    with pytest.raises(ValueError):
        lp_norm(f, 3)


def test_verbose_per_ball_csv():
    rep = morrey_norm(exterior_derivative(band_limited(DOM, 2)), verbose=True)
    text = rep.per_ball_csv()
    assert "\r" not in text
    header, *rows = text.strip().split("\n")
    assert header.split(",")[0] and len(rows) == len(rep.per_ball)
    d = rep.to_dict()
    assert d["kind"] == "morrey" and d["value"] == rep.value
