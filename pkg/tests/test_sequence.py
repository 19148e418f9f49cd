import json
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from photonlock.sequence import (
    MINUS_Z,
    PLUS_Z,
    SECH_WINDOW,
    LockingWarning,
    Pulse,
    PulseSequence,
    SequenceError,
    WaveVector,
    build_locked_echo,
    build_stimulated_echo,
    phase_match,
    truncation_loss,
    validate_locking,
    with_window,
)

PI = np.pi


def test_square_area():
    p = Pulse.square("D", PI / 2, 2.0)
    assert p.omega0 == pytest.approx(PI / 4)
    assert p.area == pytest.approx(PI / 2)
    assert p.envelope(0.0) == pytest.approx(PI / 4)
    assert p.envelope(1.5) == 0.0


def test_sech_area_and_window():
    p = Pulse.sech("W", PI, beta=3.0, t0=5.0)
    assert p.duration == pytest.approx(2 * SECH_WINDOW / 3.0)
    numeric, _ = quad(p.envelope, p.t_start, p.t_end, limit=200)
    assert numeric == pytest.approx(p.area * (1 - truncation_loss(p)), rel=1e-9)
    assert truncation_loss(p) < 1e-4


def test_truncation_loss_zero_for_square():
    assert truncation_loss(Pulse.square("D", 1.0, 1.0)) == 0.0


def test_hard_area_uses_slot():
    p = Pulse.hard("B1", PI, t0=3.0, duration=0.5)
    assert p.area == pytest.approx(PI)
    assert p.t_end - p.t_start == pytest.approx(0.5)


@pytest.mark.parametrize("kw", [
    dict(label="X"),
    dict(transition="1-2"),
    dict(shape="gauss"),
    dict(carrier="w9"),
    dict(duration=0.0),
    dict(omega0=-1.0),
    dict(omega0=np.inf),
])
def test_pulse_rejects_bad_fields(kw):
    base = dict(label="D", transition="1-3", shape="square", omega0=1.0, duration=1.0)
    base.update(kw)
    with pytest.raises(SequenceError):
        Pulse(**base)


def test_sech_needs_beta():
    with pytest.raises(SequenceError):
        Pulse("D", "1-3", "sech", 1.0, 1.0)


def test_pulse_dict_roundtrip():
    p = Pulse.sech("R", 2.0, 1.5, t0=7.0, transition="2-3", phase=0.3, wavevector=MINUS_Z, carrier="w3")
    assert Pulse.from_dict(json.loads(json.dumps(p.to_dict()))) == p


def test_wavevector_algebra():
    k = WaveVector.parse("-x+2z")
    assert str(WaveVector.parse(str(k))) == str(k)
    assert (PLUS_Z + MINUS_Z).component("z") == 0
    assert (PLUS_Z * 3).component("z") == 3
    assert PLUS_Z.is_physical and not (PLUS_Z * 3).is_physical


def test_phase_match_forward_and_backward():
    fwd = phase_match(PLUS_Z, PLUS_Z, PLUS_Z)
    assert fwd.k_echo == PLUS_Z and fwd.carrier == "w1" and fwd.physical
    bwd = phase_match(PLUS_Z, PLUS_Z, MINUS_Z)
    assert bwd.k_echo == MINUS_Z and bwd.physical


def test_phase_match_unphysical_carrier_mix():
    pm = phase_match(PLUS_Z, PLUS_Z, PLUS_Z, "w1", "w2", "w3")
    assert pm.carrier is None
    assert pm.carrier_terms == {"w1": -1, "w2": 1, "w3": 1}


def test_locking_accepts_pi_3pi():
    rep = validate_locking(PI, 3 * PI)
    assert rep and rep.n_sum == 1 and rep.n_odd == 1 and rep.message == "ok"


@pytest.mark.parametrize("b1,b2,sum_ok,odd_ok", [
    (2 * PI, 2 * PI, True, False),
    (PI, PI, False, True),
    (3.12, 3 * PI, True, True),
    (3.1, 3 * PI, False, False),
    (3.3, 3 * PI, False, False),
    (5 * PI, 3 * PI, True, True),
])
def test_locking_cases(b1, b2, sum_ok, odd_ok):
    rep = validate_locking(b1, b2)
    assert (rep.sum_ok, rep.odd_ok) == (sum_ok, odd_ok)
    assert bool(rep) == (sum_ok and odd_ok)


def test_locking_rejects_bad_input():
    with pytest.raises(SequenceError):
        validate_locking(np.nan, PI)
    with pytest.raises(SequenceError):
        validate_locking(PI, PI, tol=0.0)


def test_stimulated_echo_timing():
    seq = build_stimulated_echo(t_DW=2.0, delta_T=30.0)
    D, W, R = (seq.by_label(k) for k in "DWR")
    assert W.t0 - D.t0 == pytest.approx(2.0)
    assert R.t0 - W.t0 == pytest.approx(30.0)
    assert seq.detection.expected == pytest.approx(R.t0 + 2.0)
    assert seq.detection.start >= R.t_end


def test_stimulated_echo_rejects_overlap():
    with pytest.raises(SequenceError):
        build_stimulated_echo(t_DW=0.5)


def test_locked_echo_layout():
    seq = build_locked_echo(t_DW=2.0, t_B1=6.0, T=50.0, geometry="backward")
    names = [p.label for p in seq.pulses]
    assert names == ["D", "W", "B1", "B2", "R"]
    B1, B2, R = seq.by_label("B1"), seq.by_label("B2"), seq.by_label("R")
    assert B2.t_start - B1.t_end == pytest.approx(50.0)
    assert R.t_start - B2.t_end == pytest.approx(2.0)
    assert B1.transition == B2.transition == "2-3"
    assert R.wavevector == MINUS_Z and seq.detection.direction == MINUS_Z
    assert seq.locking.valid and not seq.problems()


def test_locked_echo_warns_off_condition():
    with pytest.warns(LockingWarning):
        seq = build_locked_echo(areas={"B1": 3.1, "B2": 3.1})
    assert not seq.locking.valid


def test_locked_echo_silent_on_condition():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_locked_echo()


def test_sequence_json_roundtrip():
    seq = build_locked_echo(T=12.0, shapes={"B1": "hard", "B2": "sech"})
    assert seq.by_label("R").t_start - seq.by_label("B2").t_end == pytest.approx(2.0)
    back = PulseSequence.from_dict(json.loads(seq.to_json()))
    assert back.to_json() == seq.to_json()
    assert back.locking.valid


def test_overlap_detection():
    a = Pulse.square("D", 1.0, 2.0, t0=0.0)
    b = Pulse.square("W", 1.0, 2.0, t0=1.0)
    seq = build_stimulated_echo()
    with pytest.raises(SequenceError):
        seq.with_pulses([a, b]).validate()


def test_with_window():
    seq = with_window(build_stimulated_echo(), 40.0, 45.0)
    assert (seq.detection.start, seq.detection.end) == (40.0, 45.0)
    with pytest.raises(SequenceError):
        with_window(seq, 45.0, 40.0)
