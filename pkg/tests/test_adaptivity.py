import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinn.adaptivity import (
    AdaptiveConfig,
    AdaptiveState,
    adapt,
    indicators,
    move_candidates,
    move_update,
    p_refine_update,
    scaling_update,
)
from spinn.basis import hermite, laguerre, project
from spinn.expansion import MultiExpansion, SpectralExpansion, frequency_indicator, hyperbolic_index_set, reproject

CFG = AdaptiveConfig()


def gaussian_expansion(center, beta=1.0, n=12, width=1.0):
    b = hermite(beta)
    return SpectralExpansion(b, project(lambda x: np.exp(-((x - center) / width) ** 2), b, n))


# scaling ----------------------------------------------------------------------

def test_scaling_examples():
    assert scaling_update(0.10, 0.10, 2.0, CFG) == 2.0
    assert scaling_update(0.10, 0.12, 2.0, CFG) == pytest.approx(1.9)
    assert scaling_update(0.0, 0.5, 2.0, CFG) == 2.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.floats(0.05, 10))
def test_scaling_sequence_non_increasing(fs, beta):
    seq = [beta]
    for a, b in zip(fs, fs[1:]):
        seq.append(scaling_update(a, b, seq[-1], CFG))
    assert all(x >= y for x, y in zip(seq, seq[1:]))
    assert seq[-1] > 0


# p-refinement -----------------------------------------------------------------

def test_p_refine_examples():
    n, rho = p_refine_update(0.01, 0.02, 8, 1.5, CFG)
    assert n == 9 and rho == pytest.approx(1.95)
    assert p_refine_update(0.01, 0.012, 8, 1.5, CFG) == (8, 1.5)
    dec = AdaptiveConfig(p_decrease=True)
    assert p_refine_update(0.02, 0.005, 8, 1.5, dec) == (7, 1.5)
    # decrease is off by default
    assert p_refine_update(0.02, 0.005, 8, 1.5, CFG) == (8, 1.5)


def test_p_decrease_respects_minimum_order():
    dec = AdaptiveConfig(p_decrease=True, min_order=4)
    assert p_refine_update(0.02, 0.001, 4, 1.5, dec) == (4, 1.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 40), st.floats(1.01, 5), st.booleans())
def test_p_refine_changes_order_by_at_most_one(fp, fc, n, rho, dec):
    n_new, rho_new = p_refine_update(fp, fc, n, rho, AdaptiveConfig(p_decrease=dec))
    assert abs(n_new - n) <= 1
    assert rho_new >= rho


# moving -----------------------------------------------------------------------

def test_move_keeps_symmetric_expansion():
    e = SpectralExpansion(hermite(1.0), np.eye(10)[0])
    assert move_update(e, CFG) == 0.0


def test_move_follows_shifted_gaussian():
    # width matched to the basis so the shifted Gaussian is a translated H_0
    e = gaussian_expansion(0.5, width=math.sqrt(2))
    oracle = [frequency_indicator(reproject(e, e.basis.replace(x_l=d))) for d in (0.0, 0.05, 0.1)]
    assert oracle[0] > oracle[1] > oracle[2]
    x_new = move_update(e, CFG)
    assert x_new > 0.0
    moved = reproject(e, e.basis.replace(x_l=x_new))
    assert frequency_indicator(moved) < frequency_indicator(e)


def test_move_threshold_blocks_small_gains():
    e = gaussian_expansion(0.5)
    f_now = frequency_indicator(e)
    best = min(frequency_indicator(reproject(e, e.basis.replace(x_l=d))) for d in move_candidates(CFG))
    strict = AdaptiveConfig(move_threshold=f_now / best * 1.0005)
    assert move_update(e, strict) == 0.0


def test_move_rejects_non_hermite():
    with pytest.raises(ValueError):
        move_update(SpectralExpansion(laguerre(1.0), np.ones(5)), CFG)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.5, 2))
def test_move_displacement_in_grid(center, width):
    e = gaussian_expansion(center, width=width)
    d = abs(move_update(e, CFG))
    assert d == 0 or CFG.d_min * (1 - 1e-12) <= d <= CFG.d_max * (1 + 1e-12)


# adapt ------------------------------------------------------------------------

def test_adapt_disabled_is_identity():
    e = gaussian_expansion(0.3)
    st0 = AdaptiveState.start(e, CFG)
    e2, m, st1 = adapt(e, st0, CFG)
    np.testing.assert_array_equal(e2.coeffs, e.coeffs)
    np.testing.assert_array_equal(m, np.eye(len(e.coeffs)))
    assert st1.f_ref == st0.f_ref


def test_adapt_scaling_widens_for_spreading_solution():
    cfg = AdaptiveConfig(scaling=True)
    e = gaussian_expansion(0.0, beta=1.0, width=math.sqrt(2))
    state = AdaptiveState.start(e, cfg)
    spread = gaussian_expansion(0.0, beta=1.0, width=2.0)
    assert frequency_indicator(spread) > CFG.nu * state.f_ref[0]
    e2, m, st1 = adapt(spread, state, cfg)
    assert e2.basis.beta < 1.0
    assert frequency_indicator(e2) < frequency_indicator(spread)
    np.testing.assert_allclose(m @ spread.coeffs, e2.coeffs, atol=1e-14)
    assert st1.f_ref[0] == pytest.approx(frequency_indicator(e2))


def test_adapt_p_refine_pads():
    cfg = AdaptiveConfig(p_refine=True)
    e = gaussian_expansion(0.0, n=8, width=2.0)
    state = AdaptiveState([frequency_indicator(e) / 3], [1.5])
    e2, m, st1 = adapt(e, state, cfg)
    assert e2.order == 9
    np.testing.assert_array_equal(e2.coeffs[:9], e.coeffs)
    assert st1.rho[0] == pytest.approx(1.95)


def test_adapt_coefficient_map_with_everything_on():
    cfg = AdaptiveConfig(scaling=True, moving=True, p_refine=True)
    e = gaussian_expansion(0.4, width=1.8)
    state = AdaptiveState([frequency_indicator(e) / 4], [1.5])
    e2, m, _ = adapt(e, state, cfg)
    np.testing.assert_allclose(m @ e.coeffs, e2.coeffs, atol=1e-13)


def test_adapt_multi_scaling_per_axis():
    cfg = AdaptiveConfig(scaling=True)
    iset = hyperbolic_index_set(2, 8)
    b = hermite(1.0)
    cx = project(lambda x: np.exp(-x * x / 6), b, 8)
    cy = project(lambda x: np.exp(-x * x), b, 8)
    coeffs = np.array([cx[i] * cy[j] for i, j in iset.indices])
    e = MultiExpansion((b, b), iset, coeffs)
    c0x = project(lambda x: np.exp(-x * x), b, 8)
    ref = MultiExpansion((b, b), iset, np.array([c0x[i] * cy[j] for i, j in iset.indices]))
    state = AdaptiveState.start(ref, cfg)
    e2, m, st1 = adapt(e, state, cfg)
    assert e2.bases[0].beta < 1.0
    assert e2.bases[1].beta == 1.0
    np.testing.assert_allclose(m @ e.coeffs, e2.coeffs, atol=1e-13)
    assert len(st1.f_ref) == 2 and st1.f_ref[1] == state.f_ref[1]


def test_adapt_multi_rejects_moving():
    iset = hyperbolic_index_set(2, 3)
    e = MultiExpansion((hermite(1.0), hermite(1.0)), iset)
    with pytest.raises(ValueError):
        adapt(e, AdaptiveState([0.0, 0.0], [1.5, 1.5]), AdaptiveConfig(moving=True))


def test_adapt_is_deterministic():
    cfg = AdaptiveConfig(scaling=True, moving=True, p_refine=True)
    e = gaussian_expansion(-0.3, width=1.5)
    state = AdaptiveState([0.001], [1.5])
    a, b = adapt(e, state, cfg), adapt(e, state, cfg)
    np.testing.assert_array_equal(a[0].coeffs, b[0].coeffs)
    assert a[0].basis == b[0].basis


@pytest.mark.parametrize("bad", [dict(q=1.0), dict(nu=1.0), dict(rho=1.0), dict(gamma_ratio=0.9),
                                 dict(d_min=0.2), dict(move_threshold=1.0), dict(max_scalings=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        AdaptiveConfig(**bad)


def test_state_validation_and_start():
    with pytest.raises(ValueError):
        AdaptiveState([1.5], [1.5])
    e = gaussian_expansion(0.0)
    assert AdaptiveState.start(e, CFG).f_ref == indicators(e)
    assert math.isclose(AdaptiveState.start(e, CFG).rho[0], CFG.rho)
