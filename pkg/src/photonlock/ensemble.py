"""Inhomogeneously broadened ensembles: sequence runner, gratings, echo detection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .atom import (
    E3,
    G1,
    G2,
    AtomDetuning,
    RelaxationRates,
    apply_rotation,
    evolve_pulse,
    free_evolve,
    new_ground,
)
from .sequence import Pulse, PulseSequence

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


class EnsembleError(RuntimeError):
    pass


def _axis(width: float, n: int, lineshape: str, span: float):
    if n < 1:
        raise EnsembleError("grid needs at least one sample")
    if width == 0 or n == 1:
        return np.zeros(1), np.ones(1)
    if lineshape == "gaussian":
        sigma = width / FWHM_PER_SIGMA
        x = np.linspace(-span * sigma, span * sigma, n)
        w = np.exp(-0.5 * (x / sigma) ** 2)
    elif lineshape == "uniform":
        x = np.linspace(-width / 2, width / 2, n)
        w = np.ones(n)
    else:
        raise EnsembleError(f"unknown lineshape {lineshape!r}")
    return x, w / w.sum()


@dataclass(frozen=True)
class DetuningGrid:
    """Deterministic product quadrature over optical and spin detunings.

    Widths are full widths at half maximum in rad/us; Gaussian samples are
    uniformly spaced over +/- ``span`` standard deviations. A uniform grid
    rephases every ``revival_time``; keep that well beyond the time any
    optical coherence is expected to survive.
    """

    opt_delta: np.ndarray
    opt_weight: np.ndarray
    spin_delta: np.ndarray
    spin_weight: np.ndarray

    @classmethod
    def build(
        cls,
        width_opt: float = 2 * np.pi * 2.0,
        n_opt: int = 1025,
        width_spin: float = 2 * np.pi * 0.03,
        n_spin: int = 17,
        lineshape: str = "gaussian",
        span: float = 3.5,
    ) -> "DetuningGrid":
        xo, wo = _axis(width_opt, n_opt, lineshape, span)
        xs, ws = _axis(width_spin, n_spin, lineshape, span)
        return cls(xo, wo, xs, ws)

    @property
    def n_opt(self) -> int:
        return self.opt_delta.size

    @property
    def spacing(self) -> float:
        return float(self.opt_delta[1] - self.opt_delta[0]) if self.n_opt > 1 else np.inf

    @property
    def revival_time(self) -> float:
        """Period after which the discrete optical grid rephases spuriously (us)."""
        return 2 * np.pi / self.spacing if self.n_opt > 1 else np.inf

    @property
    def line_density(self) -> float:
        """Discrete spectral density of the optical line at zero detuning (per rad/us)."""
        if self.n_opt == 1:
            return np.inf
        return float(np.interp(0.0, self.opt_delta, self.opt_weight)) / self.spacing

    def flat(self):
        do = np.repeat(self.opt_delta, self.spin_delta.size)
        ds = np.tile(self.spin_delta, self.n_opt)
        w = np.outer(self.opt_weight, self.spin_weight).ravel()
        return do, ds, w


@dataclass
class EnsembleState:
    """Density matrices of every simulated atom class.

    Classes are the product of the detuning grid, a locked/unlocked split
    (``mode_overlap`` is the fraction addressed by the 2-3 locking beams)
    and ``n_positions`` sub-wavelength positions used to emulate phase
    matching between non-collinear pulses.
    """

    rho: np.ndarray
    delta_opt: np.ndarray
    delta_spin: np.ndarray
    weight: np.ndarray
    locked: np.ndarray
    xphase: np.ndarray
    rates: RelaxationRates
    mode_overlap: float = 1.0
    time: float = 0.0

    @classmethod
    def prepare(
        cls,
        grid: DetuningGrid,
        rates: RelaxationRates,
        mode_overlap: float = 1.0,
        n_positions: int = 1,
        time: float = 0.0,
    ) -> "EnsembleState":
        if not 0.0 <= mode_overlap <= 1.0:
            raise EnsembleError("mode_overlap must lie in [0, 1]")
        do, ds, w = grid.flat()
        groups = [(True, mode_overlap)]
        if mode_overlap < 1.0:
            groups.append((False, 1.0 - mode_overlap))
        xs = 2 * np.pi * np.arange(n_positions) / n_positions
        D, S, Wt, L, X = [], [], [], [], []
        for locked, frac in groups:
            for x in xs:
                D.append(do)
                S.append(ds)
                Wt.append(w * frac / n_positions)
                L.append(np.full(do.size, locked))
                X.append(np.full(do.size, x))
        do_all = np.concatenate(D)
        return cls(
            new_ground((do_all.size,)),
            do_all,
            np.concatenate(S),
            np.concatenate(Wt),
            np.concatenate(L),
            np.concatenate(X),
            rates,
            mode_overlap,
            time,
        )

    def copy(self) -> "EnsembleState":
        return replace(self, rho=self.rho.copy())

    @property
    def detuning(self) -> AtomDetuning:
        return AtomDetuning(self.delta_opt, self.delta_spin)

    def detuning_subset(self, mask) -> AtomDetuning:
        return AtomDetuning(self.delta_opt[mask], self.delta_spin[mask])

    def polarization(self, direction: int = 1) -> complex:
        """Phase-matched ensemble coherence <rho31> along ``direction``."""
        return complex(np.sum(self.weight * self.rho[:, E3, G1] * np.exp(-1j * direction * self.xphase)))

    def advance(self, duration: float) -> "EnsembleState":
        out = self.copy()
        out.rho = free_evolve(self.rho, duration, self.detuning, self.rates)
        out.time = self.time + duration
        return out


def _step_for(pulse: Pulse, max_detuning: float, dt: Optional[float]) -> float:
    if dt is not None:
        return dt
    h = pulse.duration / 200.0
    if max_detuning > 0:
        h = min(h, 0.1 / max_detuning)
    return h


def apply_pulse(state: EnsembleState, pulse: Pulse, dt: Optional[float] = None, phase_jitter: float = 0.0) -> EnsembleState:
    """Drive the ensemble with one pulse starting at ``state.time == pulse.t_start``.

    Pulses on the 2-3 transition reach only the locked classes.
    """
    out = state.copy()
    mask = out.locked if pulse.transition == "2-3" else np.ones(out.weight.size, dtype=bool)
    offset = pulse.wavevector.component("z") * out.xphase[mask] + phase_jitter
    det = AtomDetuning(out.delta_opt[mask], out.delta_spin[mask])
    if pulse.shape == "hard":
        out.rho[mask] = free_evolve(out.rho[mask], pulse.t0 - state.time, det, state.rates)
        out.rho[mask] = apply_rotation(out.rho[mask], pulse.transition, pulse.area, pulse.phase + offset)
        out.rho[mask] = free_evolve(out.rho[mask], pulse.t_end - pulse.t0, det, state.rates)
        if not mask.all():
            out.rho[~mask] = free_evolve(out.rho[~mask], pulse.duration, out.detuning_subset(~mask), state.rates)
    else:
        h = dt
        if pulse.shape != "square":
            dmax = float(np.max(np.abs(out.delta_opt))) if out.delta_opt.size else 0.0
            h = _step_for(pulse, dmax, dt)
        out.rho[mask] = evolve_pulse(out.rho[mask], pulse, det, state.rates, h, phase_offset=offset)
        if not mask.all():
            out.rho[~mask] = free_evolve(out.rho[~mask], pulse.duration, out.detuning_subset(~mask), state.rates)
    out.time = pulse.t_end
    return out


@dataclass
class EchoEvent:
    found: bool
    time: float = np.nan
    amplitude: float = 0.0
    intensity: float = 0.0
    energy: float = 0.0
    efficiency: float = 0.0

    @classmethod
    def none(cls) -> "EchoEvent":
        return cls(False)


@dataclass
class EchoTrace:
    """Phase-matched polarization <rho31>(t) in the detection direction.

    ``coupling`` converts polarization into an emitted Rabi field so that
    echo energy and the data-pulse energy ``reference_energy`` share units.
    """

    times: np.ndarray
    polarization: np.ndarray
    reference_energy: float = 1.0
    coupling: float = 1.0
    direction: int = 1
    events: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise EnsembleError("trace time axis must be strictly increasing")

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.polarization) ** 2

    @property
    def field(self) -> np.ndarray:
        return self.coupling * self.polarization

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_us", "re", "im", "abs2"])
            for t, p in zip(self.times, self.polarization):
                w.writerow([f"{t:.6f}", f"{p.real:.12e}", f"{p.imag:.12e}", f"{abs(p) ** 2:.12e}"])
        return path


def detect_echo(trace: EchoTrace, expected_time: float, half_window: float, floor: float = 1e-24) -> EchoEvent:
    """Largest strict local maximum of |P|^2 within ``expected_time +/- half_window``."""
    t = trace.times
    inten = trace.intensity
    if t.size < 3:
        return EchoEvent.none()
    sel = np.nonzero((t >= expected_time - half_window - 1e-12) & (t <= expected_time + half_window + 1e-12))[0]
    sel = sel[(sel > 0) & (sel < t.size - 1)]
    if sel.size == 0:
        return EchoEvent.none()
    peak_mask = (inten[sel] > inten[sel - 1]) & (inten[sel] > inten[sel + 1]) & (inten[sel] > floor)
    cands = sel[peak_mask]
    if cands.size == 0:
        return EchoEvent.none()
    i = cands[np.argmax(inten[cands])]
    win = (t >= t[i] - half_window) & (t <= t[i] + half_window)
    energy = float(np.trapezoid(np.abs(trace.field[win]) ** 2, t[win]))
    eff = energy / trace.reference_energy if trace.reference_energy > 0 else np.nan
    return EchoEvent(True, float(t[i]), float(np.sqrt(inten[i])), float(inten[i]), energy, eff)


def pulse_energy(pulse: Pulse) -> float:
    """Integral of |Omega(t)|^2 over the pulse support."""
    if pulse.shape == "sech":
        return 2.0 * pulse.omega0 ** 2 / pulse.beta
    return pulse.omega0 ** 2 * pulse.duration


@dataclass
class RunResult:
    history: dict
    final: EnsembleState
    trace: EchoTrace


def run_sequence(
    grid: DetuningGrid,
    rates: RelaxationRates,
    seq: PulseSequence,
    mode_overlap: float = 1.0,
    n_positions: Optional[int] = None,
    dt_out: float = 0.01,
    dt: Optional[float] = None,
    optical_depth: float = 1.0,
    phase_jitter: Optional[dict] = None,
    keep_history: bool = True,
    phase_cycle: bool = True,
) -> RunResult:
    """Evolve the ensemble through ``seq`` and record the detection window.

    Between pulses and during detection the evolution is analytic, so long
    storage delays cost nothing. ``optical_depth`` only sets the thin-medium
    scale converting polarization into emitted field for efficiencies.

    With ``phase_cycle`` the run is repeated with the data pulse shifted by
    pi and half the difference is kept. This removes every signal that does
    not depend linearly on the data field (free decay after W or R), which
    in the collinear model would otherwise overlap the echo.
    """
    seq.validate()
    labels = [p.label for p in seq.pulses]
    if phase_cycle and "D" in labels:
        kw = dict(mode_overlap=mode_overlap, n_positions=n_positions, dt_out=dt_out, dt=dt,
                  optical_depth=optical_depth, phase_jitter=phase_jitter, keep_history=keep_history)
        flipped = seq.with_pulses([replace(p, phase=p.phase + np.pi) if p.label == "D" else p for p in seq.pulses])
        a = run_sequence(grid, rates, seq, phase_cycle=False, **kw)
        b = run_sequence(grid, rates, flipped, phase_cycle=False, **kw)
        tr = a.trace
        trace = EchoTrace(tr.times, 0.5 * (tr.polarization - b.trace.polarization),
                          tr.reference_energy, tr.coupling, tr.direction)
        det = seq.detection
        if det.expected is not None:
            half = min(det.expected - det.start, det.end - det.expected)
            trace.events.append(detect_echo(trace, det.expected, half))
        return RunResult(a.history, a.final, trace)
    if n_positions is None:
        dirs = {p.wavevector.component("z") for p in seq.pulses}
        dirs.add(seq.detection.direction.component("z"))
        n_positions = 1 if len(dirs) == 1 else 8
    state = EnsembleState.prepare(grid, rates, mode_overlap, n_positions)
    if not seq.pulses:
        raise EnsembleError("empty sequence")
    state.time = seq.pulses[0].t_start
    history = {}
    jit = phase_jitter or {}
    for p in seq.pulses:
        state = state.advance(p.t_start - state.time)
        state = apply_pulse(state, p, dt, jit.get(p.label, 0.0))
        if keep_history:
            history[p.label] = state.copy()

    det = seq.detection
    state = state.advance(det.start - state.time)
    times = np.arange(det.start, det.end + 0.5 * dt_out, dt_out)
    direction = det.direction.component("z")
    amp = state.weight * state.rho[:, E3, G1] * np.exp(-1j * direction * state.xphase)
    # collapse classes sharing an optical detuning: they evolve identically
    keys, inv = np.unique(state.delta_opt, return_inverse=True)
    a = np.zeros(keys.size, dtype=complex)
    np.add.at(a, inv, amp)
    lam = 1j * keys - rates.g31
    pol = np.exp(np.outer(times - det.start, lam)) @ a

    data = [p for p in seq.pulses if p.label == "D"]
    ref = pulse_energy(data[0]) if data else 1.0
    coupling = optical_depth / (np.pi * grid.line_density) if np.isfinite(grid.line_density) else 1.0
    trace = EchoTrace(times, pol, ref, coupling, direction)
    if det.expected is not None:
        half = min(det.expected - det.start, det.end - det.expected)
        trace.events.append(detect_echo(trace, det.expected, half))
    return RunResult(history, state, trace)


@dataclass
class GratingSpectrum:
    delta: np.ndarray
    p11: np.ndarray
    p22: np.ndarray
    p33: np.ndarray
    weight: np.ndarray
    opposition_error: float
    balance_error: float
    period: float

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["detuning", "rho11", "rho22", "rho33"])
            for row in zip(self.delta, self.p11, self.p22, self.p33):
                w.writerow([f"{v:.12e}" for v in row])
        return path


def _dominant_period(delta: np.ndarray, signal: np.ndarray, pad: int = 64) -> float:
    if delta.size < 4 or np.allclose(signal, 0):
        return np.nan
    step = delta[1] - delta[0]
    n = pad * delta.size
    amp = np.abs(np.fft.rfft(signal - signal.mean(), n))
    freqs = np.fft.rfftfreq(n, step)
    k = int(np.argmax(amp[1:])) + 1
    if 0 < k < amp.size - 1:
        y0, y1, y2 = amp[k - 1], amp[k], amp[k + 1]
        shift = 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)
    else:
        shift = 0.0
    f = freqs[k] + shift * (freqs[1] - freqs[0])
    return 1.0 / f


def grating_spectrum(state: EnsembleState) -> GratingSpectrum:
    """Populations vs optical detuning, averaged over all other class labels."""
    keys, inv = np.unique(state.delta_opt, return_inverse=True)
    wsum = np.zeros(keys.size)
    np.add.at(wsum, inv, state.weight)
    pops = []
    for k in (G1, G2, E3):
        acc = np.zeros(keys.size)
        np.add.at(acc, inv, state.weight * state.rho[:, k, k].real)
        pops.append(acc / wsum)
    p11, p22, p33 = pops
    wn = wsum / wsum.sum()
    opposition = float(np.max(np.abs(p33 + p11 - 1.0)))
    balance = float(abs(np.sum(wn * p11) - np.sum(wn * p33)))
    return GratingSpectrum(keys, p11, p22, p33, wn, opposition, balance, _dominant_period(keys, p33))
