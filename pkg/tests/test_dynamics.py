import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmsv_forge.dynamics import (ControlHamiltonianSpec, SdfParams, SegmentPropagator,
                                 TruncationWarning, apply_conditional_displacement,
                                 bch_coefficients, bch_commutator, bch_third_order_residual, charge,
                                 conditional_displacement, guard_band_indices, hamiltonian,
                                 hamiltonian_segment, propagate)
from tmsv_forge.fockcore import (DOWN, UP, DensityOperator, ModeDims, StateVector, TruncationError,
                                 basis_state, fidelity, ladder_operators, spin_operators)
from tmsv_forge.waveform import PhaseWaveform

OMEGA = 2 * math.pi * 2000
D6 = ModeDims.square(6)


def idx(dims, s, n1, n2):
    return (s * dims.n_max_1 + n1) * dims.n_max_2 + n2


def wave(phi_r, phi_b, T):
    return PhaseWaveform(np.atleast_1d(phi_r), np.atleast_1d(phi_b), T, OMEGA)


def test_jc_matrix_element():
    h = hamiltonian(D6, OMEGA, 0.3, 1.1)
    val = h[idx(D6, UP, 0, 0), idx(D6, DOWN, 1, 0)]
    assert val == pytest.approx(OMEGA / 2 * np.exp(-0.3j), abs=1e-9)


def test_anti_jc_matrix_element():
    h = hamiltonian(D6, OMEGA, 0.3, 1.1)
    val = h[idx(D6, UP, 0, 1), idx(D6, DOWN, 0, 0)]
    assert val == pytest.approx(OMEGA / 2 * np.exp(-1.1j), abs=1e-9)


@given(st.floats(-7, 7), st.floats(-7, 7))
def test_segment_hamiltonian_hermitian(pr, pb):
    spec = ControlHamiltonianSpec(D6, wave([pr, 0.0], [pb, 0.0], 1e-4))
    h = hamiltonian_segment(spec, 0)
    assert np.max(np.abs(h - h.conj().T)) <= 1e-12 * OMEGA


def test_segment_index_range():
    spec = ControlHamiltonianSpec(D6, wave([0.0, 0.0], [0.0, 0.0], 1e-4))
    with pytest.raises(IndexError):
        hamiltonian_segment(spec, 2)
    with pytest.raises(IndexError):
        bch_commutator(spec, 1)


@given(st.floats(-7, 7), st.floats(-7, 7), st.floats(1e-7, 1e-3))
def test_segment_propagator_unitary(pr, pb, dt):
    u = SegmentPropagator(D6, OMEGA).segment_unitary(pr, pb, dt)
    assert np.max(np.abs(u.conj().T @ u - np.eye(D6.joint))) <= 1e-10


def test_rabi_pi_pulse_red_sideband():
    d = ModeDims.square(4)
    spec = ControlHamiltonianSpec(d, wave([0.0], [0.0], 250e-6), sidebands="red")
    out = propagate(spec, basis_state(d, DOWN, 1, 0)).state
    assert abs(out.tensor[UP, 0, 0]) ** 2 == pytest.approx(1.0, abs=1e-6)


def test_zero_duration_is_identity():
    rng = np.random.default_rng(1)
    psi = rng.normal(size=D6.joint) + 1j * rng.normal(size=D6.joint)
    start = StateVector.from_unnormalized(D6, psi)
    spec = ControlHamiltonianSpec(D6, wave(rng.uniform(0, 6, 10), rng.uniform(0, 6, 10), 0.0))
    out = propagate(spec, start, warn=False).state
    assert np.allclose(out.amplitudes, start.amplitudes, atol=1e-14)


def test_reversed_waveform_returns_initial_state():
    # exp(+iH δt) is exp(-iH' δt) with both phases advanced by π
    rng = np.random.default_rng(2)
    d = ModeDims.square(10)
    pr, pb = rng.uniform(0, 2 * math.pi, (2, 40))
    T = 200e-6
    start = basis_state(d, DOWN, 0, 0)
    mid = propagate(ControlHamiltonianSpec(d, wave(pr, pb, T)), start, warn=False).state
    back = propagate(ControlHamiltonianSpec(d, wave(pr[::-1] + math.pi, pb[::-1] + math.pi, T)),
                     mid, warn=False).state
    assert fidelity(back, start) >= 1 - 1e-8


def test_density_and_vector_propagation_agree():
    rng = np.random.default_rng(3)
    d = ModeDims.square(6)
    spec = ControlHamiltonianSpec(d, wave(rng.uniform(0, 6, 12), rng.uniform(0, 6, 12), 80e-6))
    psi = StateVector.from_unnormalized(d, rng.normal(size=d.joint) + 1j * rng.normal(size=d.joint))
    rho = DensityOperator(np.outer(psi.amplitudes, psi.amplitudes.conj()), d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        v = propagate(spec, psi).state
        m = propagate(spec, rho).state
    assert fidelity(v, m) >= 1 - 1e-10
    assert np.trace(m.matrix).real == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(v.amplitudes) == pytest.approx(1.0, abs=1e-10)


def test_leakage_warning_carries_value():
    d = ModeDims.square(4)
    spec = ControlHamiltonianSpec(d, wave(np.zeros(10), np.zeros(10), 1e-3))
    with pytest.warns(TruncationWarning) as rec:
        res = propagate(spec, basis_state(d, DOWN, 0, 0))
    assert rec[0].message.leakage == pytest.approx(res.leakage)
    assert res.leakage > 1e-4


def test_charge_conserved():
    q = charge(D6)
    h = hamiltonian(D6, OMEGA, 0.4, 2.0)
    rows, cols = np.nonzero(np.abs(h) > 0)
    assert np.all(q[rows] == q[cols])


def test_bch_constant_phases_vanish():
    spec = ControlHamiltonianSpec(ModeDims.square(8), wave([0.7, 0.7], [1.3, 1.3], 1e-4))
    b = bch_commutator(spec, 0)
    assert b.squeeze_coeff_create == 0 and b.squeeze_coeff_annih == 0
    assert abs(b.number_coeff_1) < 1e-12 and abs(b.number_coeff_2) < 1e-12
    assert b.residual_norm == pytest.approx(0.0, abs=1e-12 * OMEGA ** 2)


def test_bch_quarter_turn_red():
    sq_c, _, num1, _ = bch_coefficients(OMEGA, [0.0, math.pi / 2], [0.0, 0.0])
    assert sq_c == pytest.approx(OMEGA ** 2 / 4 * (-1 + 1j), rel=1e-14)
    assert num1 == pytest.approx(OMEGA ** 2 / 2 * 1j, rel=1e-14)
    spec = ControlHamiltonianSpec(ModeDims.square(8), wave([0.0, math.pi / 2], [0.0, 0.0], 1e-4))
    b = bch_commutator(spec, 0)
    assert b.fitted[0] == pytest.approx(sq_c, rel=1e-10)
    assert b.residual_norm <= 1e-10 * b.commutator_norm


@given(st.lists(st.floats(0, 2 * math.pi), min_size=4, max_size=4))
def test_bch_random_phase_residual(ph):
    spec = ControlHamiltonianSpec(ModeDims.square(8), wave(ph[:2], ph[2:], 1e-4))
    b = bch_commutator(spec, 0)
    assert b.residual_norm <= 1e-10 * max(b.commutator_norm, OMEGA ** 2)


def test_guard_band_size():
    assert guard_band_indices(ModeDims.square(8)).size == 2 * 16


def test_sdf_beta_from_pulse():
    p = SdfParams.from_pulse(1, 50e-6, 0.4, OMEGA)
    assert p.beta == pytest.approx(-1j * OMEGA / 2 * 50e-6 * np.exp(0.4j), rel=1e-14)
    with pytest.raises(ValueError):
        SdfParams(3, 0.1)


def test_cd_zero_is_identity():
    assert np.allclose(conditional_displacement(SdfParams(2, 0.0), D6), np.eye(D6.joint), atol=1e-15)


@pytest.mark.parametrize("beta", [0.3, 0.8 - 0.5j, 1.0j])
def test_cd_plus_x_gives_coherent_state(beta):
    d = ModeDims(24, 3)
    cd = conditional_displacement(SdfParams(1, beta), d)
    plus = np.zeros(d.joint, complex)
    plus[idx(d, DOWN, 0, 0)] = plus[idx(d, UP, 0, 0)] = 1 / math.sqrt(2)
    out = (cd @ plus).reshape(d.shape)
    n1 = np.arange(d.n_max_1)
    mean_n = np.sum(np.abs(out) ** 2 * n1[None, :, None])
    assert mean_n == pytest.approx(abs(beta) ** 2, abs=1e-6)


def test_cd_inverse_pair():
    d = ModeDims.square(14)
    prod = conditional_displacement(SdfParams(2, 0.7 + 0.2j), d) @ conditional_displacement(SdfParams(2, -0.7 - 0.2j), d)
    g = guard_band_indices(d)
    assert np.max(np.abs((prod - np.eye(d.joint))[np.ix_(g, g)])) <= 1e-8


def test_cd_leakage_rejected():
    with pytest.raises(TruncationError):
        conditional_displacement(SdfParams(1, 3.0), ModeDims.square(8))


def test_factored_cd_matches_matrix():
    rng = np.random.default_rng(4)
    d = ModeDims(10, 12)
    psi = rng.normal(size=d.shape) + 1j * rng.normal(size=d.shape)
    for mode, beta in ((1, 0.4 - 0.3j), (2, -0.5j)):
        ref = (conditional_displacement(SdfParams(mode, beta), d) @ psi.ravel()).reshape(d.shape)
        assert np.allclose(apply_conditional_displacement(psi, beta, mode), ref, atol=1e-13)


def test_bch_remainder_is_third_order():
    # halving δt shrinks the remainder by 8 up to O(δt²) corrections of either sign
    d = ModeDims.square(8)
    rng = np.random.default_rng(12)
    for _ in range(50):
        ph = rng.uniform(0, 2 * math.pi, 4)
        ratio = (bch_third_order_residual(d, OMEGA, ph[:2], ph[2:], 1e-6)
                 / bch_third_order_residual(d, OMEGA, ph[:2], ph[2:], 0.5e-6))
        assert abs(ratio - 8) <= 0.01
