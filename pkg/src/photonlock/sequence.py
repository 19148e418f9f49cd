"""Pulse algebra, locking and phase-matching checks, and timeline builders.

Timing conventions (all in microseconds):

* ``Pulse.t0`` is the pulse centre.
* ``t_DW`` and ``delta_T`` are centre-to-centre delays (D->W, W->R), so the
  stimulated echo is expected at ``t_R + t_DW``.
* ``T`` (B1->B2) and ``r_delay`` (B2->R) are gaps: end of the earlier pulse
  to the start of the later one, so ``T = 0`` means back-to-back pulses.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

PI = np.pi
SECH_WINDOW = 10.0  # half-width of the sech support, in units of 1/beta
LABELS = ("D", "W", "R", "B1", "B2", "custom")
SHAPES = ("square", "sech", "hard")
CARRIERS = ("w1", "w2", "w3")


class SequenceError(ValueError):
    pass


class LockingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WaveVector:
    """Integer combination of unit wavevectors along named axes."""

    coeffs: tuple = (("z", 1),)

    def __post_init__(self):
        clean = tuple(sorted((a, int(c)) for a, c in dict(self.coeffs).items() if c != 0))
        object.__setattr__(self, "coeffs", clean)

    @classmethod
    def along(cls, axis: str = "z", sign: int = 1) -> "WaveVector":
        return cls(((axis, sign),))

    def as_dict(self) -> dict:
        return dict(self.coeffs)

    def component(self, axis: str = "z") -> int:
        return self.as_dict().get(axis, 0)

    def __add__(self, other: "WaveVector") -> "WaveVector":
        d = Counter(self.as_dict())
        d.update(other.as_dict())
        return WaveVector(tuple(d.items()))

    def __neg__(self) -> "WaveVector":
        return WaveVector(tuple((a, -c) for a, c in self.coeffs))

    def __sub__(self, other: "WaveVector") -> "WaveVector":
        return self + (-other)

    def __mul__(self, k: int) -> "WaveVector":
        return WaveVector(tuple((a, k * c) for a, c in self.coeffs))

    __rmul__ = __mul__

    @property
    def is_physical(self) -> bool:
        """True when the vector is a single unit propagation direction."""
        return len(self.coeffs) == 1 and abs(self.coeffs[0][1]) == 1

    def __str__(self) -> str:
        if not self.coeffs:
            return "0"
        parts = []
        for a, c in self.coeffs:
            sign = "+" if c > 0 else "-"
            mag = "" if abs(c) == 1 else str(abs(c))
            parts.append(f"{sign}{mag}{a}")
        return "".join(parts)

    @classmethod
    def parse(cls, text: str) -> "WaveVector":
        text = text.replace(" ", "")
        if text == "0":
            return cls(())
        terms = re.findall(r"([+-]?)(\d*)([a-z])", text)
        if not terms or "".join("".join(t) for t in terms) != text:
            raise SequenceError(f"cannot parse wavevector {text!r}")
        d = Counter()
        for sign, mag, axis in terms:
            d[axis] += (-1 if sign == "-" else 1) * int(mag or 1)
        return cls(tuple(d.items()))


PLUS_Z = WaveVector.along("z", 1)
MINUS_Z = WaveVector.along("z", -1)


@dataclass(frozen=True)
class Pulse:
    """A shaped pulse on one transition.

    ``omega0`` is the peak Rabi frequency (rad/us). For sech pulses the
    envelope is ``omega0 * sech(beta (t - t0))`` truncated to
    ``t0 +/- SECH_WINDOW/beta``. A ``hard`` pulse is applied instantaneously
    at ``t0`` with area ``omega0 * duration``; its duration only reserves a
    slot in the timeline.
    """

    label: str
    transition: str
    shape: str
    omega0: float
    duration: float
    t0: float = 0.0
    beta: Optional[float] = None
    phase: float = 0.0
    wavevector: WaveVector = PLUS_Z
    carrier: str = "w1"

    def __post_init__(self):
        if self.label not in LABELS:
            raise SequenceError(f"unknown pulse label {self.label!r}")
        if self.transition not in ("1-3", "2-3"):
            raise SequenceError(f"unknown transition {self.transition!r}")
        if self.shape not in SHAPES:
            raise SequenceError(f"unknown pulse shape {self.shape!r}")
        if self.carrier not in CARRIERS:
            raise SequenceError(f"unknown carrier {self.carrier!r}")
        if self.shape == "sech":
            if not self.beta or self.beta <= 0:
                raise SequenceError("sech pulse needs beta > 0")
            object.__setattr__(self, "duration", 2.0 * SECH_WINDOW / self.beta)
        if not self.duration > 0:
            raise SequenceError(f"pulse duration must be > 0, got {self.duration}")
        if self.omega0 < 0 or not np.isfinite(self.omega0):
            raise SequenceError(f"omega0 must be finite and >= 0, got {self.omega0}")

    # constructors taking the area directly
    @classmethod
    def square(cls, label, area, duration, t0=0.0, transition="1-3", **kw) -> "Pulse":
        return cls(label, transition, "square", area / duration, duration, t0, **kw)

    @classmethod
    def hard(cls, label, area, t0=0.0, duration=1.0, transition="1-3", **kw) -> "Pulse":
        return cls(label, transition, "hard", area / duration, duration, t0, **kw)

    @classmethod
    def sech(cls, label, area, beta, t0=0.0, transition="1-3", **kw) -> "Pulse":
        return cls(label, transition, "sech", area * beta / PI, 1.0, t0, beta=beta, **kw)

    @property
    def t_start(self) -> float:
        return self.t0 - 0.5 * self.duration

    @property
    def t_end(self) -> float:
        return self.t0 + 0.5 * self.duration

    @property
    def area(self) -> float:
        return pulse_area(self)

    def envelope(self, t):
        """Real Rabi envelope at time(s) ``t``; zero outside the support."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t_start - 1e-12) & (t <= self.t_end + 1e-12)
        if self.shape == "sech":
            val = self.omega0 / np.cosh(self.beta * (t - self.t0))
        else:
            val = np.full_like(t, self.omega0)
        out = np.where(inside, val, 0.0)
        return out if out.ndim else float(out)

    def shifted(self, dt: float) -> "Pulse":
        return replace(self, t0=self.t0 + dt)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wavevector"] = str(self.wavevector)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Pulse":
        d = dict(d)
        d["wavevector"] = WaveVector.parse(d.get("wavevector", "+z"))
        return cls(**d)


def pulse_area(p: Pulse) -> float:
    """Time integral of the Rabi envelope (full, untruncated for sech)."""
    if p.shape == "sech":
        return PI * p.omega0 / p.beta
    return p.omega0 * p.duration


def truncation_loss(p: Pulse) -> float:
    """Fraction of the sech area lying outside the simulated window."""
    if p.shape != "sech":
        return 0.0
    x = 0.5 * p.duration * p.beta
    return 1.0 - 4.0 / PI * np.arctan(np.tanh(0.5 * x))


@dataclass(frozen=True)
class LockingReport:
    valid: bool
    sum_ok: bool
    odd_ok: bool
    n_sum: Optional[int]
    n_odd: Optional[int]
    message: str

    def __bool__(self) -> bool:
        return self.valid


def validate_locking(phi_b1: float, phi_b2: float, tol: float = 0.01 * PI, n_max: int = 8) -> LockingReport:
    """Check the deshelling pair against the 4n*pi sum and odd-pi B1 conditions."""
    if not (np.isfinite(phi_b1) and np.isfinite(phi_b2)):
        raise SequenceError("locking areas must be finite")
    if tol <= 0:
        raise SequenceError("tol must be > 0")
    n_sum = n_odd = None
    for n in range(1, n_max + 1):
        if n_sum is None and abs(phi_b1 + phi_b2 - 4 * n * PI) <= tol:
            n_sum = n
        if n_odd is None and abs(phi_b1 - (2 * n - 1) * PI) <= tol:
            n_odd = n
    sum_ok, odd_ok = n_sum is not None, n_odd is not None
    problems = []
    if not sum_ok:
        problems.append(f"Phi_B1 + Phi_B2 = {(phi_b1 + phi_b2) / PI:.4g} pi is not 4n pi")
    if not odd_ok:
        problems.append(f"Phi_B1 = {phi_b1 / PI:.4g} pi is not an odd multiple of pi")
    msg = "ok" if not problems else "; ".join(problems)
    return LockingReport(sum_ok and odd_ok, sum_ok, odd_ok, n_sum, n_odd, msg)


def _combine_carriers(terms: Iterable[tuple]) -> Counter:
    out = Counter()
    for sign, label in terms:
        out[label] += sign
    return Counter({k: v for k, v in out.items() if v})


@dataclass(frozen=True)
class PhaseMatch:
    k_echo: WaveVector
    carrier_terms: dict
    carrier: Optional[str]
    physical: bool


def phase_match(kD: WaveVector, kW: WaveVector, kR: WaveVector, wD="w1", wW="w1", wR="w1") -> PhaseMatch:
    """Echo wavevector and carrier: k_E = -k_D + k_W + k_R, same for frequencies."""
    kE = -kD + kW + kR
    terms = _combine_carriers([(-1, wD), (1, wW), (1, wR)])
    carrier = None
    if len(terms) == 1:
        (lab, c), = terms.items()
        if c == 1:
            carrier = lab
    return PhaseMatch(kE, dict(terms), carrier, kE.is_physical)


@dataclass(frozen=True)
class DetectionWindow:
    start: float
    end: float
    direction: WaveVector = PLUS_Z
    expected: Optional[float] = None


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple
    detection: DetectionWindow
    delays: dict = field(default_factory=dict)
    geometry: str = "forward"
    locking: Optional[LockingReport] = None

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.t_start)))

    def problems(self) -> list:
        out = []
        ps = self.pulses
        for a, b in zip(ps, ps[1:]):
            if b.t_start < a.t_end - 1e-9:
                out.append(f"pulses {a.label} and {b.label} overlap")
        if ps and self.detection.start < ps[-1].t_end - 1e-9:
            out.append("detection window starts before the last pulse ends")
        if self.detection.end <= self.detection.start:
            out.append("empty detection window")
        for k, v in self.delays.items():
            if v < 0:
                out.append(f"delay {k} is negative")
        return out

    def validate(self) -> "PulseSequence":
        probs = self.problems()
        if probs:
            raise SequenceError("; ".join(probs))
        return self

    def by_label(self, label: str) -> Pulse:
        for p in self.pulses:
            if p.label == label:
                return p
        raise KeyError(label)

    def with_pulses(self, pulses) -> "PulseSequence":
        return replace(self, pulses=tuple(pulses))

    def to_dict(self) -> dict:
        det = self.detection
        return {
            "pulses": [p.to_dict() for p in self.pulses],
            "detection": {
                "start": det.start,
                "end": det.end,
                "direction": str(det.direction),
                "expected": det.expected,
            },
            "delays": dict(self.delays),
            "geometry": self.geometry,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSequence":
        det = dict(d["detection"])
        det["direction"] = WaveVector.parse(det.get("direction", "+z"))
        pulses = [Pulse.from_dict(p) for p in d["pulses"]]
        locking = None
        try:
            locking = validate_locking(
                next(p for p in pulses if p.label == "B1").area,
                next(p for p in pulses if p.label == "B2").area,
            )
        except StopIteration:
            pass
        return cls(tuple(pulses), DetectionWindow(**det), d.get("delays", {}), d.get("geometry", "forward"), locking)


def _make(label, area, duration, t0, shape, transition="1-3", carrier="w1", wavevector=PLUS_Z, beta=None):
    if shape == "square":
        return Pulse.square(label, area, duration, t0, transition, carrier=carrier, wavevector=wavevector)
    if shape == "hard":
        return Pulse.hard(label, area, t0, duration, transition, carrier=carrier, wavevector=wavevector)
    if shape == "sech":
        if beta is None:
            # FWHM of sech(beta t) equals the nominal duration
            beta = 2.0 * np.arccosh(2.0) / duration
        return Pulse.sech(label, area, beta, t0, transition, carrier=carrier, wavevector=wavevector)
    raise SequenceError(f"unknown pulse shape {shape!r}")


def _slots(areas, shapes, durs, labels):
    """Occupied length of each pulse; sech pulses span their full window."""
    return {k: _make(k, areas[k], durs[k], 0.0, shapes[k]).duration for k in labels}


def _detection(t_after: float, t_echo: float, direction: WaveVector, half_window: float) -> DetectionWindow:
    half = max(min(half_window, t_echo - t_after), 1e-3)
    return DetectionWindow(max(t_after, t_echo - half), t_echo + half, direction, t_echo)


def _per_pulse(value, labels, default):
    if value is None:
        return {k: default[k] for k in labels}
    if isinstance(value, dict):
        return {k: value.get(k, default[k]) for k in labels}
    return {k: value for k in labels}


DEFAULT_AREAS = {"D": PI / 2, "W": PI / 2, "R": PI / 2, "B1": PI, "B2": 3 * PI}
DEFAULT_DURATIONS = {"D": 1.0, "W": 1.0, "R": 1.0, "B1": 1.2, "B2": 3.6}
DEFAULT_SHAPES = {"D": "square", "W": "square", "R": "square", "B1": "square", "B2": "square"}


def build_stimulated_echo(
    t_DW: float = 2.0,
    delta_T: float = 28.0,
    areas=None,
    shapes=None,
    durations=None,
    half_window: float = 1.5,
    phases=None,
) -> PulseSequence:
    """Three-pulse D, W, R sequence in forward geometry (no locking pulses).

    ``delta_T`` smaller than the abutting separation places R directly after W.
    """
    labels = ("D", "W", "R")
    areas = _per_pulse(areas, labels, DEFAULT_AREAS)
    shapes = _per_pulse(shapes, labels, DEFAULT_SHAPES)
    durs = _per_pulse(durations, labels, DEFAULT_DURATIONS)
    phases = _per_pulse(phases, labels, {k: 0.0 for k in labels})
    slot = _slots(areas, shapes, durs, labels)
    if t_DW < 0 or delta_T < 0:
        raise SequenceError("delays must be >= 0")
    if t_DW < 0.5 * (slot["D"] + slot["W"]) - 1e-12:
        raise SequenceError("overlapping pulses: t_DW shorter than D/W half-durations")
    sep = 0.5 * (slot["W"] + slot["R"])
    t_W = t_DW
    t_R = t_W + max(delta_T, sep)
    pulses = [
        replace(_make(k, areas[k], durs[k], t, shapes[k]), phase=phases[k])
        for k, t in (("D", 0.0), ("W", t_W), ("R", t_R))
    ]
    t_echo = t_R + t_DW
    det = _detection(pulses[-1].t_end, t_echo, PLUS_Z, half_window)
    seq = PulseSequence(tuple(pulses), det, {"t_DW": t_DW, "delta_T": t_R - t_W}, "forward")
    return seq.validate()


def build_locked_echo(
    t_DW: float = 2.0,
    t_B1: float = 6.0,
    T: float = 100.0,
    geometry: str = "forward",
    areas=None,
    shapes=None,
    durations=None,
    r_delay: float = 2.0,
    half_window: float = 1.5,
    phases=None,
    warn: bool = True,
) -> PulseSequence:
    """D, W, B1, B2, R sequence with the deshelling pair on the 2-3 transition.

    Locking-condition violations are attached to the sequence and warned
    about, never raised: off-condition runs are legitimate experiments.
    """
    if geometry not in ("forward", "backward"):
        raise SequenceError(f"unknown geometry {geometry!r}")
    labels = ("D", "W", "B1", "B2", "R")
    areas = _per_pulse(areas, labels, DEFAULT_AREAS)
    shapes = _per_pulse(shapes, labels, DEFAULT_SHAPES)
    durs = _per_pulse(durations, labels, DEFAULT_DURATIONS)
    phases = _per_pulse(phases, labels, {k: 0.0 for k in labels})
    slot = _slots(areas, shapes, durs, labels)
    if min(t_DW, T, r_delay) < 0:
        raise SequenceError("delays must be >= 0")
    if t_DW < 0.5 * (slot["D"] + slot["W"]) - 1e-12:
        raise SequenceError("overlapping pulses: t_DW shorter than D/W half-durations")
    if t_B1 - 0.5 * slot["B1"] < t_DW + 0.5 * slot["W"] - 1e-12:
        raise SequenceError("B1 must start after W ends")
    kW = PLUS_Z
    kR = -kW if geometry == "backward" else kW
    t_B2 = t_B1 + 0.5 * slot["B1"] + T + 0.5 * slot["B2"]
    t_R = t_B2 + 0.5 * slot["B2"] + r_delay + 0.5 * slot["R"]
    layout = [
        ("D", 0.0, "1-3", "w1", PLUS_Z),
        ("W", t_DW, "1-3", "w1", kW),
        ("B1", t_B1, "2-3", "w3", PLUS_Z),
        ("B2", t_B2, "2-3", "w3", PLUS_Z),
        ("R", t_R, "1-3", "w1", kR),
    ]
    pulses = [
        replace(_make(k, areas[k], durs[k], t, shapes[k], tr, car, kv), phase=phases[k])
        for k, t, tr, car, kv in layout
    ]
    report = validate_locking(areas["B1"], areas["B2"])
    if not report.valid and warn:
        warnings.warn(f"locking condition violated: {report.message}", LockingWarning, stacklevel=2)
    direction = -PLUS_Z if geometry == "backward" else PLUS_Z
    t_echo = t_R + t_DW
    det = _detection(pulses[-1].t_end, t_echo, direction, half_window)
    delays = {"t_DW": t_DW, "T": T, "r_delay": r_delay, "t_B1": t_B1}
    return PulseSequence(tuple(pulses), det, delays, geometry, report).validate()


def with_window(seq: PulseSequence, start: float, end: float, expected=None) -> PulseSequence:
    det = DetectionWindow(start, end, seq.detection.direction, expected)
    return replace(seq, detection=det).validate()
