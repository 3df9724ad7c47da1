import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from collapse_walk.oracle import enumerate_cycle, zeta_closed_forms
from collapse_walk.process import ModelParams


def test_zeta_forms_at_mu_ten():
    f = zeta_closed_forms(1.0, 10.0)
    assert f.e_zeta == pytest.approx(12 / 11, rel=1e-15)
    assert f.e_x_zeta_sq == pytest.approx(14 / 11, rel=1e-15)
    assert f.gap == pytest.approx(2 / 11, rel=1e-15)
    assert f.e_zeta_minus_sigma == pytest.approx(1 / 11, rel=1e-15)


def test_zeta_forms_at_mu_one():
    f = zeta_closed_forms(1.0, 1.0)
    assert f.e_x_zeta_sq == 2.5 and f.gap == 1.0


def test_gap_vanishes_for_fast_repair():
    assert zeta_closed_forms(1.0, 1e12).gap < 1e-11


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_gap_identity(lam, mu):
    f = zeta_closed_forms(lam, mu)
    assert f.gap > 0
    assert math.isclose(f.gap, f.e_x_zeta_sq - lam * f.e_zeta, rel_tol=1e-9, abs_tol=1e-12)


def test_two_event_tree_by_hand():
    res = enumerate_cycle(ModelParams(1.0, 1.0, 1.0), depth=2)
    # origin (rate 1, mass 1) then one broken bond (rate 2, mass 1): 1 + 1/2
    assert res.alpha.absorbed_value == 1.5
    # attempt then repair, probability mu / (lam + mu)
    assert res.alpha.absorbed_mass == 0.5
    assert res.x2.absorbed_value == 0.5
    assert not res.converged


@pytest.mark.parametrize("lam,mu", [(1.0, 1.0), (1.0, 10.0), (2.0, 0.5), (0.3, 7.0)])
def test_two_event_slice_matches_zeta_branches(lam, mu):
    res = enumerate_cycle(ModelParams(lam, 1.0, mu), depth=2)
    assert res.alpha.absorbed_mass == pytest.approx(mu / (lam + mu), rel=1e-15)
    assert res.alpha.residual_mass == pytest.approx(lam / (lam + mu), rel=1e-15)


def test_fast_repair_alpha_near_zeta_mean():
    res = enumerate_cycle(ModelParams(1.0, 1.0, 100.0), depth=400, mass_tol=1e-10)
    assert res.converged
    assert res.alpha.residual_mass <= 1e-10
    assert abs(res.alpha.absorbed_value - (1 + 1 / 101)) <= 2 * (1 / 101) ** 2


@pytest.mark.parametrize("params", [ModelParams(1.0, 1.0, 3.0), ModelParams(1.0, 0.5, 4.0),
                                    ModelParams(2.0, 0.3, 1.0)])
def test_conservation_and_monotonicity(params):
    prev = None
    for depth in range(2, 13):
        res = enumerate_cycle(params, depth)
        a = res.alpha
        assert abs(a.absorbed_mass + a.residual_mass - 1) <= 1e-12
        assert res.x2.absorbed_mass == a.absorbed_mass
        if prev is not None:
            assert a.absorbed_mass >= prev.alpha.absorbed_mass
            assert a.absorbed_value >= prev.alpha.absorbed_value
            assert res.x2.absorbed_value >= prev.x2.absorbed_value
            assert a.residual_mass <= prev.alpha.residual_mass
        prev = res


def test_small_tree_matches_exact_fractions():
    # depth 4 at p = 1 enumerated by hand with rationals
    lam, mu = Fraction(1), Fraction(2)
    r1 = lam + mu
    # after the first jump: repair (mu/r1) absorbs; jump on (lam/r1) gives two broken bonds
    r2 = lam + 2 * mu
    # from two broken bonds the walker is blocked on one side: repairs 2mu/r2, jump lam/r2
    mass_absorbed = mu / r1
    alpha = 1 / lam + 1 / r1 + (lam / r1) / r2
    res = enumerate_cycle(ModelParams(1.0, 1.0, 2.0), depth=3)
    assert res.alpha.absorbed_mass == pytest.approx(float(mass_absorbed), rel=1e-15)
    assert res.alpha.absorbed_value == pytest.approx(float(alpha), rel=1e-15)


def test_rejects_unsupported_inputs():
    with pytest.raises(ValueError):
        enumerate_cycle(ModelParams(1.0, 0.0, 1.0), 5)
    with pytest.raises(ValueError):
        enumerate_cycle(ModelParams(1.0, 0.5, 1.0, dim=2), 5)
    with pytest.raises(ValueError):
        enumerate_cycle(ModelParams(1.0, 0.5, 1.0), 1)
    with pytest.raises(ValueError):
        zeta_closed_forms(0.0, 1.0)
