"""One-dimensional Maxwell-Bloch slab for absorption and echo retrieval.

Retardation is neglected, so the field in every slice is an instantaneous
functional of the atomic polarization upstream of it:

    dOmega/dz = -i kappa <rho31>(z)

and the whole slab is a single ODE system in the atomic states, stepped
with RK4. Only one propagation direction is active at a time; pulses on
the 2-3 transition are treated as spatially uniform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .atom import E3, G1, G2, AtomDetuning, RelaxationRates, _coherence_generator, lindblad_rhs, rk4_step
from ._kernels import slab_rk4
from .ensemble import DetuningGrid, EchoTrace, EnsembleState, apply_pulse, detect_echo, pulse_energy
from .sequence import PI, Pulse, build_locked_echo, build_stimulated_echo

log = logging.getLogger(__name__)


class PropagationError(RuntimeError):
    pass


@dataclass
class FieldEnvelope:
    """Complex Rabi envelope on a uniform time grid, travelling along ``direction``."""

    times: np.ndarray
    values: np.ndarray
    direction: int = 1

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise PropagationError("direction must be +1 or -1")
        if not np.all(np.isfinite(self.values)):
            raise PropagationError("non-finite field envelope")

    @classmethod
    def from_pulses(cls, pulses: Sequence[Pulse], t_start: float, t_end: float, step: float, direction: int = 1):
        n = int(round((t_end - t_start) / step))
        times = t_start + step * np.arange(n + 1)
        values = np.zeros(times.size, dtype=complex)
        for p in pulses:
            values += p.envelope(times) * np.exp(1j * p.phase)
        return cls(times, values, direction)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def energy(self, t0: float = -np.inf, t1: float = np.inf) -> float:
        sel = (self.times >= t0) & (self.times <= t1)
        return float(np.trapezoid(np.abs(self.values[sel]) ** 2, self.times[sel]))

    def sample(self, t) -> np.ndarray:
        """Linear interpolation at an array of times (zero-order hold outside)."""
        return np.interp(t, self.times, self.values.real) + 1j * np.interp(t, self.times, self.values.imag)

    def __call__(self, t: float) -> complex:
        return complex(self.sample(t))


@dataclass
class MediumSlab:
    """Slices of identical ensembles along z (length in mm, alpha in 1/mm)."""

    length: float
    alpha: float
    grid: DetuningGrid
    rates: RelaxationRates
    n_z: int = 48
    mode_overlap: float = 1.0
    kappa_scale: float = 1.0
    rho: Optional[np.ndarray] = None
    template: Optional[EnsembleState] = None
    time: float = 0.0
    data_energy: Optional[float] = None

    def __post_init__(self):
        if self.n_z < 16:
            raise PropagationError("n_z must be >= 16")
        if self.length <= 0 or self.alpha < 0:
            raise PropagationError("need length > 0 and alpha >= 0")
        if self.template is None:
            self.template = EnsembleState.prepare(self.grid, self.rates, self.mode_overlap)
        if self.rho is None:
            self.rho = np.broadcast_to(self.template.rho, (self.n_z,) + self.template.rho.shape).copy()

    @classmethod
    def with_depth(cls, d: float, length: float = 1.0, **kw) -> "MediumSlab":
        return cls(length, d / length, **kw)

    @property
    def optical_depth(self) -> float:
        return self.alpha * self.length

    @property
    def dz(self) -> float:
        return self.length / self.n_z

    @property
    def kappa(self) -> float:
        """Coupling giving amplitude attenuation alpha/2 for a slow weak field."""
        return self.kappa_scale * self.alpha / (np.pi * self.grid.line_density)

    def copy(self) -> "MediumSlab":
        return replace(self, rho=self.rho.copy())

    def slice_polarization(self, rho=None) -> np.ndarray:
        rho = self.rho if rho is None else rho
        return rho[..., E3, G1] @ self.template.weight

    def populations(self) -> np.ndarray:
        """(n_z, n_opt, 3) populations averaged over spin and locking classes."""
        t = self.template
        keys, inv = np.unique(t.delta_opt, return_inverse=True)
        wsum = np.zeros(keys.size)
        np.add.at(wsum, inv, t.weight)
        out = np.zeros((self.n_z, keys.size, 3))
        for k in range(3):
            acc = np.zeros((self.n_z, keys.size))
            vals = self.rho[:, :, k, k].real * t.weight
            for j in range(self.n_z):
                np.add.at(acc[j], inv, vals[j])
            out[:, :, k] = acc / wsum
        return out

    def advance(self, duration: float) -> "MediumSlab":
        from .atom import free_evolve

        out = self.copy()
        out.rho = free_evolve(self.rho, duration, self.template.detuning, self.rates)
        out.time = self.time + duration
        return out

    def apply_uniform(self, pulse: Pulse, dt: Optional[float] = None) -> "MediumSlab":
        """Spatially uniform pulse (used for the 2-3 locking beams)."""
        t = self.template
        flat = EnsembleState(
            self.rho.reshape((-1, 3, 3)),
            np.tile(t.delta_opt, self.n_z),
            np.tile(t.delta_spin, self.n_z),
            np.tile(t.weight, self.n_z),
            np.tile(t.locked, self.n_z),
            np.zeros(self.n_z * t.weight.size),
            self.rates,
            self.mode_overlap,
            self.time,
        )
        flat = flat.advance(pulse.t_start - self.time)
        flat = apply_pulse(flat, pulse, dt)
        out = self.copy()
        out.rho = flat.rho.reshape(self.rho.shape)
        out.time = flat.time
        return out

    def drop_optical_coherence(self) -> "MediumSlab":
        """Remove coherences not phase matched to the reversed propagation direction."""
        out = self.copy()
        for a, b in ((E3, G1), (G1, E3), (E3, G2), (G2, E3)):
            out.rho[..., a, b] = 0.0
        return out


@dataclass
class PropagationResult:
    transmitted: FieldEnvelope
    slab: MediumSlab
    input_energy: float
    output_energy: float
    absorbed_energy: float


def _local_fields(pol: np.ndarray, omega_in: complex, kappa: float, dz: float, direction: int) -> np.ndarray:
    src = -1j * kappa * dz * pol
    if direction == -1:
        src = src[::-1]
    acc = np.cumsum(src) - 0.5 * src
    out = omega_in + acc
    return out[::-1] if direction == -1 else out


def propagate(slab: MediumSlab, field: FieldEnvelope, dt: Optional[float] = None, engine: str = "compiled") -> PropagationResult:
    """Drive the slab with ``field`` entering from its upstream face.

    Returns the field leaving the downstream face at every step together
    with an energy ledger: ``absorbed_energy`` counts excitation deposited
    in |3> (including what decayed during the run). ``engine="numpy"``
    selects the slower reference implementation of the same RK4 scheme.
    """
    if dt is None:
        dmax = float(np.max(np.abs(slab.grid.opt_delta)))
        dt = min(2 * field.step, 0.1 / dmax) if dmax > 0 else 2 * field.step
    t0, t1 = float(field.times[0]), float(field.times[-1])
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    if slab.optical_depth / slab.n_z > 0.25:
        raise PropagationError("slices too thick for the optical depth (need d/n_z <= 0.25)")
    if slab.time > t0 + 1e-9:
        raise PropagationError("slab clock is ahead of the field")
    slab = slab.advance(t0 - slab.time)

    rates = slab.rates
    lam = _coherence_generator(slab.template.detuning, rates)
    w = slab.template.weight
    kappa, dz, direction = slab.kappa, slab.dz, field.direction

    def rhs(rho, t):
        pol = rho[..., E3, G1] @ w
        omega = _local_fields(pol, field(t), kappa, dz, direction)
        return lindblad_rhs(rho, lam, rates, omega[:, None], G1)

    def exit_field(rho, t):
        pol = rho[..., E3, G1] @ w
        src = -1j * kappa * dz * pol
        return field(t) + src.sum()

    def excited(rho):
        return float(np.sum(rho[..., E3, E3].real @ w))

    rho = np.ascontiguousarray(slab.rho, dtype=complex).copy()
    p33_start = excited(rho)
    times = t0 + h * np.arange(n + 1)
    if engine == "compiled":
        f_node = field.sample(times)
        f_mid = field.sample(times[:-1] + 0.5 * h)
        out, exc = slab_rk4(
            rho, np.ascontiguousarray(lam), np.ascontiguousarray(w, dtype=float), f_node, f_mid, h,
            kappa * dz, int(direction), rates.gamma_31, rates.gamma_32, rates.gamma_opt, rates.k12, rates.k21,
        )
    elif engine == "numpy":
        out = np.zeros(n + 1, dtype=complex)
        exc = np.zeros(n + 1)
        out[0] = exit_field(rho, t0)
        exc[0] = p33_start
        for i in range(n):
            rho = rk4_step(rhs, rho, times[i], h)
            out[i + 1] = exit_field(rho, times[i + 1])
            exc[i + 1] = excited(rho)
    else:
        raise PropagationError(f"unknown engine {engine!r}")
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    decayed = rates.gamma_opt * np.trapezoid(exc, times)
    absorbed = 2 * kappa * dz * (exc[-1] - p33_start + decayed)

    new = replace(slab, rho=rho, time=t1)
    tx = FieldEnvelope(times, out, direction)
    e_in = float(np.trapezoid(np.abs(np.array([field(t) for t in times])) ** 2, times))
    return PropagationResult(tx, new, e_in, tx.energy(), absorbed)


def weak_probe(beta: float = 1.0, area: float = 1e-3, t0: float = 0.0) -> Pulse:
    return Pulse.sech("custom", area, beta, t0)


def probe_transmission(slab: MediumSlab, probe: Optional[Pulse] = None, dt: float = 0.02) -> PropagationResult:
    """Energy transmission of a weak sech probe through a freshly prepared slab."""
    probe = probe or weak_probe()
    fresh = replace(slab, rho=None, template=None, time=probe.t_start)
    env = FieldEnvelope.from_pulses([probe], probe.t_start, probe.t_end, dt / 2)
    return propagate(fresh, env, dt)


_CALIBRATION: dict = {}


def calibrate_coupling(grid: DetuningGrid, rates: RelaxationRates, n_z: int = 48, d_ref: float = 1.0, iterations: int = 2) -> float:
    """Scale factor on the analytic coupling so a weak probe obeys exp(-d) at ``d_ref``.

    Results are cached per (grid, rates, n_z).
    """
    key = (grid.opt_delta.tobytes(), grid.opt_weight.tobytes(), grid.spin_delta.size, rates, n_z, d_ref)
    if key in _CALIBRATION:
        return _CALIBRATION[key]
    spin_free = DetuningGrid(grid.opt_delta, grid.opt_weight, np.zeros(1), np.ones(1))
    scale = 1.0
    for _ in range(iterations):
        slab = MediumSlab.with_depth(d_ref, grid=spin_free, rates=rates, n_z=n_z, kappa_scale=scale)
        res = probe_transmission(slab)
        trans = res.output_energy / res.input_energy
        scale *= d_ref / -np.log(trans)
    log.info("coupling calibration factor %.6f", scale)
    _CALIBRATION[key] = scale
    return scale


# --- memory protocol -------------------------------------------------------


@dataclass
class MemoryProtocol:
    """Pulse parameters for an absorb / (lock) / retrieve run in a slab."""

    t_DW: float = 2.0
    data_area: float = 0.05
    write_area: float = PI / 2
    read_area: float = PI / 2
    durations: dict = field(default_factory=lambda: {"D": 1.0, "W": 1.0, "R": 1.0, "B1": 1.2, "B2": 3.6})
    locking: bool = True
    lock_shape: str = "hard"
    b1_area: float = PI
    b2_area: float = 3 * PI
    t_B1: float = 6.0
    T: float = 10.0
    delta_T: float = 30.0
    r_delay: float = 2.0
    ring_time: float = 2.0
    half_window: float = 1.0

    def sequence(self, geometry: str = "forward", data_phase: float = 0.0):
        areas = {"D": self.data_area, "W": self.write_area, "R": self.read_area, "B1": self.b1_area, "B2": self.b2_area}
        phases = {"D": data_phase}
        if self.locking:
            shapes = {"B1": self.lock_shape, "B2": self.lock_shape}
            return build_locked_echo(
                self.t_DW, self.t_B1, self.T, geometry, areas, shapes, self.durations,
                self.r_delay, self.half_window, phases, warn=False,
            )
        seq = build_stimulated_echo(self.t_DW, self.delta_T, areas, None, self.durations, self.half_window, phases)
        if geometry == "backward":
            r = seq.by_label("R")
            seq = seq.with_pulses([p for p in seq.pulses if p.label != "R"] + [replace(r, wavevector=-r.wavevector)])
        return seq


@dataclass
class RetrievalResult:
    direction: str
    efficiency: float
    echo_time: float
    trace: EchoTrace


def _store(slab: MediumSlab, seq, protocol: MemoryProtocol, dt) -> MediumSlab:
    D, W = seq.by_label("D"), seq.by_label("W")
    step = dt / 2 if dt else 0.0025
    env = FieldEnvelope.from_pulses([D, W], D.t_start, W.t_end + protocol.ring_time, step, 1)
    res = propagate(replace(slab, time=D.t_start), env, dt)
    out = res.slab
    out.data_energy = pulse_energy(D)
    for p in seq.pulses:
        if p.transition == "2-3":
            out = out.apply_uniform(p)
    return out


def _retrieve_field(slab: MediumSlab, seq, direction: int, protocol: MemoryProtocol, dt) -> FieldEnvelope:
    R = seq.by_label("R")
    t_echo = seq.detection.expected
    if direction == -1:
        slab = slab.drop_optical_coherence()
    step = dt / 2 if dt else 0.0025
    env = FieldEnvelope.from_pulses([R], R.t_start, t_echo + protocol.half_window + 0.5, step, direction)
    return propagate(slab.advance(R.t_start - slab.time), env, dt).transmitted


def retrieve(
    slabs: tuple,
    seqs: tuple,
    direction: str,
    protocol: MemoryProtocol,
    dt: Optional[float] = None,
) -> RetrievalResult:
    """Read out a stored grating and return the phase-cycled echo.

    ``slabs``/``seqs`` hold the two storage runs with data phase 0 and pi;
    half their output difference keeps only the field odd in the data
    pulse, which removes the transmitted read pulse and its free decay.
    """
    if any(s.data_energy is None for s in slabs):
        raise PropagationError("slab holds no stored grating")
    sign = 1 if direction == "forward" else -1
    f0 = _retrieve_field(slabs[0], seqs[0], sign, protocol, dt)
    f1 = _retrieve_field(slabs[1], seqs[1], sign, protocol, dt)
    echo = 0.5 * (f0.values - f1.values)
    t_echo = seqs[0].detection.expected
    trace = EchoTrace(f0.times, echo, slabs[0].data_energy, 1.0, sign)
    ev = detect_echo(trace, t_echo, protocol.half_window)
    win = (f0.times >= t_echo - protocol.half_window) & (f0.times <= t_echo + protocol.half_window)
    energy = float(np.trapezoid(np.abs(echo[win]) ** 2, f0.times[win]))
    trace.events.append(ev)
    return RetrievalResult(direction, energy / slabs[0].data_energy, ev.time, trace)


def run_memory(
    d: float,
    protocol: MemoryProtocol,
    grid: DetuningGrid,
    rates: RelaxationRates,
    directions=("forward", "backward"),
    length: float = 1.0,
    n_z: int = 48,
    mode_overlap: float = 1.0,
    dt: Optional[float] = None,
    kappa_scale: Optional[float] = None,
) -> dict:
    """Absorb, optionally lock, and retrieve in each requested direction."""
    if kappa_scale is None:
        kappa_scale = calibrate_coupling(grid, rates, n_z)
    slab0 = MediumSlab.with_depth(d, length, grid=grid, rates=rates, n_z=n_z, mode_overlap=mode_overlap, kappa_scale=kappa_scale)
    out = {}
    stored = {}
    for direction in directions:
        seqs = tuple(protocol.sequence(direction, ph) for ph in (0.0, PI))
        key = tuple(p.t0 for p in seqs[0].pulses if p.label in ("D", "W", "B1", "B2"))
        if key not in stored:
            stored[key] = tuple(_store(slab0, s, protocol, dt) for s in seqs)
        out[direction] = retrieve(stored[key], seqs, direction, protocol, dt)
    return out


@dataclass
class DepthRow:
    d: float
    eta_forward: float
    eta_backward: float

    @property
    def ratio(self) -> float:
        return self.eta_backward / self.eta_forward if self.eta_forward > 0 else np.inf


def efficiency_vs_depth(protocol: MemoryProtocol, d_list, grid: DetuningGrid, rates: RelaxationRates, **kw) -> list:
    rows = []
    for d in d_list:
        res = run_memory(d, protocol, grid, rates, **kw)
        rows.append(DepthRow(float(d), res["forward"].efficiency, res["backward"].efficiency))
    return rows


def monotonic_flags(rows: list) -> dict:
    fw = [r.eta_forward for r in rows]
    bw = [r.eta_backward for r in rows]
    return {
        "backward_increasing": all(b2 > b1 for b1, b2 in zip(bw, bw[1:])),
        "forward_increasing": all(f2 > f1 for f1, f2 in zip(fw, fw[1:])),
        "backward_ge_forward": all(r.eta_backward >= r.eta_forward for r in rows),
    }
