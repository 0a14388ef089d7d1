import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmsv_forge.fockcore import (DOWN, UP, DensityOperator, ModeDims, StateVector, TMSVParams,
                                 TruncationError, basis_state, squeezed_thermal_state,
                                 superposition_state, tmsv_state, vacuum_state)
from tmsv_forge.tomography import (PLANES, ChiGrid, MeasurementSetting, RngSpec, chi_exact,
                                   chi_gaussian_oracle, chi_via_spin, outcome_probability,
                                   postselect_prep, projection_stderr, sample_chi, scan_grid)

D40 = ModeDims.square(40)
TMSV1 = tmsv_state(TMSVParams(1.0), D40)
VAC = vacuum_state(ModeDims.square(20))
E_INV = math.exp(-1)


def test_chi_origin_is_one():
    for st_ in (VAC, TMSV1, superposition_state(0.5, ModeDims.square(30))):
        assert chi_exact(st_, MeasurementSetting(0, 0)) == pytest.approx(1.0, abs=1e-14)


def test_vacuum_chi_value():
    assert chi_exact(VAC, MeasurementSetting(1, 1)).real == pytest.approx(0.36788, abs=1e-5)
    assert chi_via_spin(VAC, MeasurementSetting(1, 1)) == pytest.approx(E_INV, abs=1e-10)


def test_squeezed_direction_below_vacuum():
    s = MeasurementSetting(0.3, -0.3)
    val = chi_exact(TMSV1, s).real
    assert val < chi_exact(vacuum_state(D40), s).real
    assert val == pytest.approx(chi_gaussian_oracle(TMSVParams(1.0), s), abs=1e-9)


def test_oracle_origin_and_vacuum_reduction():
    assert chi_gaussian_oracle(TMSVParams(0.8, 1.0), MeasurementSetting(0, 0)) == 1.0
    s = MeasurementSetting(0.4 - 0.2j, 0.7j)
    expect = math.exp(-(abs(s.beta_1) ** 2 + abs(s.beta_2) ** 2) / 2)
    assert chi_gaussian_oracle(TMSVParams(0.0), s) == pytest.approx(expect, abs=1e-15)


@pytest.mark.parametrize("phi", [0.0, 0.7, 2.0, math.pi])
def test_oracle_tracks_squeezing_phase(phi):
    params = TMSVParams(0.6, phi)
    state = tmsv_state(params, D40)
    rng = np.random.default_rng(7)
    for b in rng.uniform(-1.2, 1.2, (10, 4)):
        s = MeasurementSetting(b[0] + 1j * b[1], b[2] + 1j * b[3])
        assert chi_exact(state, s).real == pytest.approx(chi_gaussian_oracle(params, s), abs=1e-9)


def test_oracle_rejects_non_tmsv():
    with pytest.raises(TypeError):
        chi_gaussian_oracle(TMSV1, MeasurementSetting(0, 0))


def test_spin_protocol_origin():
    assert chi_via_spin(TMSV1, MeasurementSetting(0, 0)) == pytest.approx(1.0, abs=1e-14)


def test_spin_protocol_random_settings_r1():
    rng = np.random.default_rng(8)
    worst = 0.0
    for b in rng.uniform(-1, 1, (20, 4)):
        s = MeasurementSetting(b[0] + 1j * b[1], b[2] + 1j * b[3])
        worst = max(worst, abs(chi_via_spin(TMSV1, s) - chi_exact(TMSV1, s).real))
    assert worst <= 1e-8


def test_spin_protocol_density_operator():
    rho = squeezed_thermal_state(TMSVParams(0.3), 0.06, 0.06, ModeDims.square(14))
    s = MeasurementSetting(0.5 - 0.1j, -0.3j)
    assert chi_via_spin(rho, s) == pytest.approx(chi_exact(rho, s).real, abs=1e-10)


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.sampled_from(sorted(PLANES)))
def test_chi_bounded_and_real_on_planes(x1, x2, plane):
    s = MeasurementSetting.from_plane(plane, x1, x2)
    c = chi_exact(TMSV1, s)
    assert abs(c) <= 1 + 1e-12
    assert abs(c.imag) <= 1e-8


def test_chi_leakage_error():
    with pytest.raises(TruncationError):
        chi_exact(vacuum_state(ModeDims.square(6)), MeasurementSetting(2.5, 0))


def test_postselect_noop_and_half():
    s, p = postselect_prep(TMSV1)
    assert p == pytest.approx(1.0) and np.allclose(s.amplitudes, TMSV1.amplitudes)
    d = ModeDims.square(3)
    amp = (basis_state(d, DOWN, 0, 0).amplitudes + basis_state(d, UP, 0, 0).amplitudes) / math.sqrt(2)
    _, p = postselect_prep(StateVector(d, amp))
    assert p == pytest.approx(0.5)
    with pytest.raises(ValueError):
        postselect_prep(basis_state(d, UP, 0, 0))


def test_outcome_probability_edges():
    assert outcome_probability(0.5) == 0.75
    sample = sample_chi(VAC, MeasurementSetting(0, 0), 1000, RngSpec(3))
    assert sample.value == 1.0 and sample.stderr == 0.0


def test_sample_stderr_formula():
    sample = sample_chi(VAC, MeasurementSetting(0.5, 0.2), 400, RngSpec(5))
    assert sample.stderr == pytest.approx(math.sqrt((1 - sample.value ** 2) / 400))
    assert projection_stderr(0.0, 100) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        sample_chi(VAC, MeasurementSetting(0, 0), 0, RngSpec(5))


def test_sample_mean_converges():
    s = MeasurementSetting(1, 1)
    sample = sample_chi(VAC, s, 10 ** 6, RngSpec(11))
    assert abs(sample.value - E_INV) <= 4 * sample.stderr


def test_sample_outliers_rare():
    s = MeasurementSetting(1, 1)
    outliers = 0
    for seed in range(200):
        sample = sample_chi(VAC, s, 10 ** 6, RngSpec(seed), value=E_INV)
        outliers += abs(sample.value - E_INV) > 5 * sample.stderr
    assert outliers <= 1


def test_rng_reproducible_and_split():
    a = RngSpec(42, 3).generator().random(5)
    assert np.array_equal(a, RngSpec(42, 3).generator().random(5))
    assert not np.array_equal(a, RngSpec(42, 4).generator().random(5))
    # a child of stream 1 never coincides with a top-level stream
    child = RngSpec(42, 1).substream(2).generator().random(5)
    assert not np.array_equal(child, RngSpec(42, 2).generator().random(5))
    assert not np.array_equal(child, RngSpec(42, 2).substream(1).generator().random(5))
    with pytest.raises(ValueError):
        RngSpec(-1)
    with pytest.raises(ValueError):
        RngSpec(1, algorithm="mt19937")


def test_from_plane_drive_frame():
    s = MeasurementSetting.from_plane("re-im", 0.5, 0.2)
    assert s.beta_1 == pytest.approx(-0.5j) and s.beta_2 == pytest.approx(0.2)
    assert MeasurementSetting.from_drive(1j, 1) == MeasurementSetting(1, -1j)


def test_symmetry_fill_matches_full_grid():
    full = scan_grid(TMSV1, "re-re", 1.5, 0.25)
    half = scan_grid(TMSV1, "re-re", 1.5, 0.25, symmetry_fill=True)
    assert np.max(np.abs(full.re_chi - half.re_chi)) <= 1e-10


def test_single_point_grid():
    g = scan_grid(TMSV1, "im-im", 0.0, 0.5)
    assert g.re_chi.shape == (1, 1) and g.re_chi[0, 0] == pytest.approx(1.0)


def test_vacuum_grid_isotropic():
    g = scan_grid(vacuum_state(ModeDims.square(24)), "im-re", 1.5, 0.25)
    a1, a2 = np.meshgrid(g.axis1, g.axis2, indexing="ij")
    assert np.max(np.abs(g.re_chi - np.exp(-(a1 ** 2 + a2 ** 2) / 2))) <= 1e-10


def test_grid_rejects_bad_plane_and_leak():
    with pytest.raises(ValueError):
        scan_grid(VAC, "re-xx", 1, 0.5)
    with pytest.raises(TruncationError):
        scan_grid(vacuum_state(ModeDims.square(6)), "re-re", 3, 1)


def test_sampled_grid_round_trip(tmp_path):
    g = scan_grid(TMSV1, "re-im", 1.0, 0.5, symmetry_fill=True, shots=500, rng=RngSpec(9))
    again = scan_grid(TMSV1, "re-im", 1.0, 0.5, symmetry_fill=True, shots=500, rng=RngSpec(9))
    assert np.array_equal(g.re_chi, again.re_chi)
    csv, side = g.to_csv(tmp_path / "chi.csv")
    assert csv.read_text().splitlines()[0] == "axis1,axis2,re_chi,stderr,shots"
    back = ChiGrid.from_csv(csv)
    assert back.plane == "re-im"
    assert np.allclose(back.re_chi, g.re_chi, atol=1e-12)
    assert np.array_equal(back.shots, g.shots)
    assert back.metadata["seed"] == 9
