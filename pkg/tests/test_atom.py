import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_state
from photonlock.atom import (
    AtomDetuning,
    RelaxationRates,
    StateError,
    apply_rotation,
    evolve_pulse,
    free_evolve,
    integrate_field,
    new_ground,
    square_pulse,
    validity_errors,
)
from photonlock.sequence import Pulse

PI = np.pi
OFF = RelaxationRates.no_decay()


def test_new_ground():
    rho = new_ground()
    assert rho[0, 0] == 1.0
    assert np.count_nonzero(rho) == 1
    assert np.trace(rho) == pytest.approx(1.0)


def test_ground_is_stationary_without_spin_pumping():
    rates = RelaxationRates(spin_equilibrium=0.0)
    rho = free_evolve(new_ground(), 1e5, AtomDetuning(1.3, 0.2), rates)
    assert np.allclose(rho, new_ground(), atol=1e-15)


def test_half_rotation_from_ground():
    rho = apply_rotation(new_ground(), "1-3", PI / 2, 0.0)
    assert rho[0, 0].real == pytest.approx(0.5)
    assert rho[2, 2].real == pytest.approx(0.5)
    assert abs(rho[2, 0]) == pytest.approx(0.5)


def test_pi_pulse_swaps_spin_transition():
    rho = np.zeros((3, 3), complex)
    rho[2, 2] = 1.0
    out = apply_rotation(rho, "2-3", PI, 0.0)
    assert out[1, 1].real == pytest.approx(1.0)
    assert abs(out[2, 2]) < 1e-15


def test_pi_then_three_pi_is_identity():
    rho = random_state(np.random.default_rng(3))
    out = apply_rotation(apply_rotation(rho, "2-3", PI), "2-3", 3 * PI)
    assert np.max(np.abs(out - rho)) < 1e-12


def test_two_pi_flips_outer_coherences():
    # a 2pi rotation is -1 on the pair, so coherences to |1> change sign
    rho = random_state(np.random.default_rng(4))
    out = apply_rotation(rho, "2-3", 2 * PI)
    assert np.allclose(out[0, 1:], -rho[0, 1:])
    assert np.allclose(out[1:, 1:], rho[1:, 1:])


def test_rotation_rejects_unknown_transition():
    with pytest.raises(StateError):
        apply_rotation(new_ground(), "1-2", PI)


def test_phase_array_broadcasts():
    phases = np.linspace(0, 2 * PI, 5)
    out = apply_rotation(new_ground((5,)), "1-3", PI / 2, phases)
    for k, ph in enumerate(phases):
        ref = apply_rotation(new_ground(), "1-3", PI / 2, ph)
        assert np.allclose(out[k], ref)


@pytest.mark.parametrize("dt", [None, 0.005])
def test_resonant_pi_pulse(dt):
    p = Pulse.square("D", PI, 1.0)
    rho = evolve_pulse(new_ground(), p, AtomDetuning(), OFF, dt=dt)
    assert rho[2, 2].real == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("dt", [None, 1 / np.sqrt(2) / 200])
def test_detuned_half_transfer(dt):
    p = Pulse.square("D", PI / np.sqrt(2), 1 / np.sqrt(2))
    rho = evolve_pulse(new_ground(), p, AtomDetuning(PI), OFF, dt=dt)
    assert rho[2, 2].real == pytest.approx(0.5, abs=1e-4)


def test_sech_pi_matches_hard_pulse():
    p = Pulse.sech("D", PI, beta=2.0)
    rho = evolve_pulse(new_ground(), p, AtomDetuning(), OFF)
    ref = apply_rotation(new_ground(), "1-3", PI)
    assert np.max(np.abs(np.diag(rho - ref))) < 1e-3


def test_short_square_converges_to_rotation():
    area = 2.0
    rho0 = random_state(np.random.default_rng(5))
    rates = RelaxationRates()
    det = AtomDetuning(0.7, 0.1)
    ref = apply_rotation(rho0, "1-3", area, 0.4)
    errs = []
    for dur in (area / 50.0, area / 500.0, area / 5000.0):
        out = evolve_pulse(rho0, Pulse.square("D", area, dur, phase=0.4), det, rates)
        errs.append(np.max(np.abs(out - ref)))
    # first order in the duration
    assert errs[1] < errs[0] / 8 and errs[2] < errs[1] / 8
    assert errs[2] < 1e-4


def test_exact_square_agrees_with_rk4():
    rng = np.random.default_rng(6)
    rho = random_state(rng, (40,))
    det = AtomDetuning(rng.normal(0, 4, 40), rng.normal(0, 0.3, 40))
    rates = RelaxationRates(T1_opt=5.0, T2_opt=3.0, T1_spin=50.0, T2_spin=20.0, branch_31=0.6)
    for tr in ("1-3", "2-3"):
        p = Pulse.square("D", 2.5, 1.1, transition=tr, phase=0.3)
        a = evolve_pulse(rho, p, det, rates)
        b = evolve_pulse(rho, p, det, rates, dt=1.1 / 2000)
        assert np.max(np.abs(a - b)) < 1e-9


def test_step_floor_enforced():
    p = Pulse.sech("D", PI, beta=1.0)
    with pytest.raises(StateError):
        evolve_pulse(new_ground(), p, dt=p.duration / 10)


def test_free_evolve_coherence_decay():
    rho = apply_rotation(new_ground(), "1-3", PI / 2, -PI / 2)
    assert abs(rho[2, 0]) == pytest.approx(0.5)
    out = free_evolve(rho, 25.0, AtomDetuning(), RelaxationRates())
    assert abs(out[2, 0]) == pytest.approx(0.5 * np.exp(-1), rel=1e-4)


def test_free_evolve_population_decay():
    rho = np.diag([0.5, 0.0, 0.5]).astype(complex)
    out = free_evolve(rho, 160.0, AtomDetuning(), RelaxationRates(T1_spin=1e12, T2_spin=1e6))
    assert out[2, 2].real == pytest.approx(0.5 * np.exp(-1), abs=1e-9)
    assert out[0, 0].real - 0.5 == pytest.approx(0.5 * (1 - np.exp(-1)), abs=1e-6)


def test_spin_equilibration():
    out = free_evolve(new_ground(), 1e9, AtomDetuning(), RelaxationRates(T1_spin=1e3, T2_spin=500.0))
    assert out[0, 0].real == pytest.approx(0.5)
    assert out[1, 1].real == pytest.approx(0.5)


def test_free_evolve_matches_integration():
    rng = np.random.default_rng(7)
    rho = random_state(rng, (10,))
    det = AtomDetuning(rng.normal(0, 1, 10), rng.normal(0, 0.2, 10))
    rates = RelaxationRates(T1_opt=3.0, T2_opt=2.0, T1_spin=8.0, T2_spin=6.0, branch_31=0.3, spin_equilibrium=0.3)
    exact = free_evolve(rho, 2.0, det, rates)
    num = integrate_field(rho, "1-3", lambda t: 0.0, 0.0, 2.0, 1e-3, det, rates)
    assert np.max(np.abs(exact - num)) < 1e-10


def test_negative_duration_rejected():
    with pytest.raises(StateError):
        free_evolve(new_ground(), -1.0)


def test_rates_reject_negative_pure_dephasing():
    with pytest.raises(StateError):
        RelaxationRates(T1_opt=10.0, T2_opt=25.0)
    with pytest.raises(StateError):
        RelaxationRates(T1_spin=100.0, T2_spin=500.0)
    with pytest.raises(StateError):
        RelaxationRates(branch_31=1.2)


def test_square_pulse_direct_call_batches():
    rho = square_pulse(new_ground((3,)), "1-3", PI, 1.0, AtomDetuning(np.zeros(3)), OFF)
    assert np.allclose(rho[:, 2, 2].real, 1.0)


# --- randomized invariants ---------------------------------------------

_area = st.floats(0.0, 6 * PI)
_phase = st.floats(-PI, PI)
_det = st.floats(-20.0, 20.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), area=_area, phase=_phase, d_opt=_det, d_spin=st.floats(-1, 1),
       transition=st.sampled_from(["1-3", "2-3"]), shape=st.sampled_from(["square", "sech", "hard"]),
       wait=st.floats(0.0, 1e4))
def test_operations_keep_state_valid(seed, area, phase, d_opt, d_spin, transition, shape, wait):
    rng = np.random.default_rng(seed)
    rho = random_state(rng, (4,))
    rates = RelaxationRates()
    det = AtomDetuning(d_opt, d_spin)
    if shape == "sech":
        p = Pulse.sech("D", area, beta=4.0, transition=transition, phase=phase)
    elif shape == "hard":
        p = Pulse.hard("D", area, transition=transition, phase=phase)
    else:
        p = Pulse.square("D", area, 0.8, transition=transition, phase=phase)
    out = free_evolve(evolve_pulse(rho, p, det, rates), wait, det, rates)
    errs = validity_errors(out)
    assert errs["trace"] <= 1e-9
    assert errs["hermiticity"] <= 1e-10
    assert errs["min_eigenvalue"] >= -1e-8


@settings(max_examples=40, deadline=None)
@given(phi1=st.sampled_from([1, 2, 3, 4, 5]), phi2=st.sampled_from([1, 2, 3, 4, 5]), seed=st.integers(0, 1000))
def test_locking_identity_property(phi1, phi2, seed):
    rho = random_state(np.random.default_rng(seed))
    out = apply_rotation(apply_rotation(rho, "2-3", phi1 * PI), "2-3", phi2 * PI)
    is_identity = np.max(np.abs(out - rho)) < 1e-9
    assert is_identity == ((phi1 + phi2) % 4 == 0)
