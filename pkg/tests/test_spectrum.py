import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavsim.core import TWO_PI
from cavsim.spectrum import (ETA_S_MAX, CavityGeometry, CavitySpectrum, _mode_histogram, build_spectrum_table,
                             calibrate_spectrum, eta_below_threshold, fold_frequency, mode_density, mode_offset,
                             single_mode_eta)


def test_single_mode_anchor():
    # 24 F / (pi k^2 w0^2) with F = 1000, w0 = 101 um, lambda = 852 nm
    k = 2 * math.pi / 852e-9
    expected = 24 * 1000 / (math.pi * k ** 2 * (101e-6) ** 2)
    assert single_mode_eta(CavityGeometry()) == pytest.approx(expected, rel=1e-12)
    assert single_mode_eta(CavityGeometry()) == pytest.approx(0.0138, rel=0.01)


def test_linewidth_matches_fsr_over_finesse():
    g = CavityGeometry()
    assert g.fsr == pytest.approx(299792458.0 / 0.15)
    assert g.kappa / TWO_PI == pytest.approx(g.fsr / g.finesse_F, rel=0.01)
    with pytest.raises(ValueError):
        CavityGeometry(kappa=TWO_PI * 5e6)


def test_calibrated_peak_width_and_scale(table):
    assert table.peak_detuning() == pytest.approx(-200e6, abs=10e6)
    assert 150e6 <= table.width_above(0.1) <= 250e6
    assert table.eta_s_profile.max() == pytest.approx(ETA_S_MAX, abs=1e-3)
    assert np.all(table.density >= 0)


def test_eta_below_threshold_lookup(table):
    assert eta_below_threshold(table, -200e6) == pytest.approx(0.05, abs=2e-3)
    # far outside the fold the multimode density vanishes
    assert eta_below_threshold(table, 250e6) < 1e-3
    assert mode_density(table, -1e12) == 0.0


def test_tem00_offset_zero_and_order_validation():
    g = CavityGeometry()
    assert mode_offset(0, 0, g) == 0.0
    with pytest.raises(ValueError):
        mode_offset(-1, 0, g)


def test_histogram_matches_brute_force_enumeration():
    g = calibrate_spectrum(CavityGeometry())
    small = CavityGeometry(g.length_L, g.finesse_F, g.kappa, g.waist_w0, g.eps_x, g.eps_y, g.aberr_coeff, 40)
    edges = np.arange(-600e6, 300e6 + 1e6, 1e6)
    offsets = [mode_offset(m, t - m, small) for t in range(41) for m in range(t + 1)]
    ref, _ = np.histogram(offsets, bins=edges)
    got = _mode_histogram(small, edges)
    # np.histogram closes the last bin; the tabulation is half-open throughout
    np.testing.assert_array_equal(got[:-1], ref[:-1])
    assert got.sum() <= 41 * 42 // 2


def test_exact_confocal_has_no_fold():
    with pytest.raises(ValueError, match="confocal"):
        calibrate_spectrum(CavityGeometry(eps_x=0.0, eps_y=0.0))


def test_estimator_api(table):
    est = CavitySpectrum()
    assert est.get_params()["finesse_F"] == 1000.0
    est.table_ = table  # reuse the session calibration
    out = est.transform([-200e6, -150e6])
    assert out.shape == (2,)
    assert out[1] == pytest.approx(0.0148, abs=1e-3)


def test_table_scale_independent_of_grid_resolution(table):
    coarse = build_spectrum_table(table.geometry, step=0.5e6)
    assert coarse.eta_s_profile.max() == pytest.approx(ETA_S_MAX)
    assert coarse.peak_detuning() == pytest.approx(table.peak_detuning(), abs=2e6)


@given(st.floats(-1e10, 1e10, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_fold_frequency_range_and_periodicity(nu):
    fsr = CavityGeometry().fsr
    f = float(fold_frequency(nu, fsr))
    assert -fsr / 2 - 1e-3 < f <= fsr / 2 + 1e-3
    assert float(fold_frequency(nu + fsr, fsr)) == pytest.approx(f, abs=1e-3 * max(1.0, abs(nu) * 1e-12) + 1e-2)
