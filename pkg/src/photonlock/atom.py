"""Single atom-class dynamics for the three-level Lambda system.

Level ordering in every density-matrix array is (|1>, |2>, |3>) -> indices
(0, 1, 2): two ground hyperfine states and one optically excited state.
Units are microseconds and rad/us throughout.

All functions operate on arrays of shape ``(..., 3, 3)`` so that a whole
detuning grid can be pushed through one call; detunings broadcast against
the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.linalg import expm

ArrayLike = Union[float, np.ndarray]

G1, G2, E3 = 0, 1, 2
TRANSITIONS = {"1-3": G1, "2-3": G2}


class StateError(ValueError):
    """Raised when a density matrix or an evolution request is invalid."""


@dataclass(frozen=True)
class RelaxationRates:
    """Relaxation constants in microseconds.

    ``branch_31`` is the fraction of |3> decay that lands in |1>;
    ``spin_equilibrium`` is the equilibrium value of rho22/(rho11+rho22).
    Use ``np.inf`` for a channel that should be switched off.
    """

    T1_opt: float = 160.0
    T2_opt: float = 25.0
    T1_spin: float = 1.0e6
    T2_spin: float = 500.0
    branch_31: float = 1.0
    spin_equilibrium: float = 0.5

    def __post_init__(self):
        for name in ("T1_opt", "T2_opt", "T1_spin", "T2_spin"):
            v = getattr(self, name)
            if not v > 0:
                raise StateError(f"{name} must be > 0, got {v}")
        for name in ("branch_31", "spin_equilibrium"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise StateError(f"{name} must lie in [0, 1], got {v}")
        if self.pure_dephasing_opt < -1e-12:
            raise StateError(
                f"T2_opt={self.T2_opt} is too long for T1_opt={self.T1_opt}: "
                "negative pure optical dephasing"
            )
        if self.pure_dephasing_spin < -1e-12:
            raise StateError(
                f"T2_spin={self.T2_spin} is too long for T1_spin={self.T1_spin}: "
                "negative pure spin dephasing"
            )

    @classmethod
    def no_decay(cls, spin_equilibrium: float = 0.5) -> "RelaxationRates":
        return cls(np.inf, np.inf, np.inf, np.inf, 1.0, spin_equilibrium)

    def scaled(self, time_scale: float) -> "RelaxationRates":
        """All time constants divided by ``time_scale``."""
        return RelaxationRates(
            self.T1_opt / time_scale,
            self.T2_opt / time_scale,
            self.T1_spin / time_scale,
            self.T2_spin / time_scale,
            self.branch_31,
            self.spin_equilibrium,
        )

    # population channels
    @property
    def gamma_opt(self) -> float:
        return 1.0 / self.T1_opt

    @property
    def gamma_31(self) -> float:
        return self.branch_31 / self.T1_opt

    @property
    def gamma_32(self) -> float:
        return (1.0 - self.branch_31) / self.T1_opt

    @property
    def gamma_spin(self) -> float:
        return 1.0 / self.T1_spin

    @property
    def k12(self) -> float:
        """|1> -> |2> spin-flip rate."""
        return self.spin_equilibrium / self.T1_spin

    @property
    def k21(self) -> float:
        return (1.0 - self.spin_equilibrium) / self.T1_spin

    # coherence channels
    @property
    def pure_dephasing_opt(self) -> float:
        return 1.0 / self.T2_opt - 0.5 * (self.gamma_opt + self.k12)

    @property
    def pure_dephasing_spin(self) -> float:
        return 1.0 / self.T2_spin - 0.5 * (self.k12 + self.k21)

    @property
    def g31(self) -> float:
        return 1.0 / self.T2_opt

    @property
    def g21(self) -> float:
        return 1.0 / self.T2_spin

    @property
    def g32(self) -> float:
        return (
            0.5 * (self.gamma_opt + self.k21)
            + max(self.pure_dephasing_opt, 0.0)
            + max(self.pure_dephasing_spin, 0.0)
        )


@dataclass(frozen=True)
class AtomDetuning:
    """Static offsets of one atom class (or arrays of them), rad/us."""

    delta_opt: ArrayLike = 0.0
    delta_spin: ArrayLike = 0.0


def new_ground(shape: tuple = ()) -> np.ndarray:
    """All population in |1>."""
    rho = np.zeros(shape + (3, 3), dtype=complex)
    rho[..., G1, G1] = 1.0
    return rho


def validity_errors(rho: np.ndarray) -> dict:
    """Worst-case trace, Hermiticity and positivity errors over a batch."""
    rho = np.asarray(rho)
    tr = np.trace(rho, axis1=-2, axis2=-1)
    herm = np.abs(rho - np.conj(np.swapaxes(rho, -1, -2)))
    hermitian_part = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    eig = np.linalg.eigvalsh(hermitian_part)
    return {
        "trace": float(np.max(np.abs(tr - 1.0))),
        "hermiticity": float(np.max(herm)),
        "min_eigenvalue": float(np.min(eig)),
    }


def check_state(rho: np.ndarray, tol: float = 1e-9) -> None:
    errs = validity_errors(rho)
    if errs["trace"] > tol or errs["hermiticity"] > tol or errs["min_eigenvalue"] < -tol:
        raise StateError(f"invalid density matrix: {errs}")


def _hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def rotation_unitary(area: float, phase: float = 0.0) -> np.ndarray:
    """2x2 unitary exp(-i area/2 (cos phase sx + sin phase sy)) on (ground, |3>)."""
    c = np.cos(area / 2.0)
    s = np.sin(area / 2.0)
    return np.array(
        [[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]],
        dtype=complex,
    )


def _embed(transition: str, area: float, phase: float) -> np.ndarray:
    try:
        g = TRANSITIONS[transition]
    except KeyError:
        raise StateError(f"unknown transition {transition!r}") from None
    u2 = rotation_unitary(area, phase)
    u = np.eye(3, dtype=complex)
    idx = [g, E3]
    u[np.ix_(idx, idx)] = u2
    return u


def apply_rotation(
    rho: np.ndarray,
    transition: str,
    area: float,
    phase: ArrayLike = 0.0,
) -> np.ndarray:
    """Instantaneous (hard) pulse of the given area on ``transition``.

    ``phase`` may be an array broadcasting against the batch axes of ``rho``.
    """
    if not np.isfinite(area):
        raise StateError("pulse area must be finite")
    phase = np.asarray(phase, dtype=float)
    if phase.ndim == 0:
        u = _embed(transition, area, float(phase))
    else:
        g = TRANSITIONS.get(transition)
        if g is None:
            raise StateError(f"unknown transition {transition!r}")
        c, s = np.cos(area / 2.0), np.sin(area / 2.0)
        u = np.zeros(phase.shape + (3, 3), dtype=complex)
        u[..., 0, 0] = u[..., 1, 1] = u[..., 2, 2] = 1.0
        u[..., g, g] = c
        u[..., E3, E3] = c
        u[..., g, E3] = -1j * s * np.exp(-1j * phase)
        u[..., E3, g] = -1j * s * np.exp(1j * phase)
    out = u @ rho @ np.conj(np.swapaxes(u, -1, -2))
    return _hermitize(out)


def _coherence_generator(detuning: AtomDetuning, rates: RelaxationRates) -> np.ndarray:
    """Elementwise rate matrix L with d(rho_ij)/dt = L_ij rho_ij for the free part.

    Diagonal entries are zero; population exchange is handled separately.
    """
    do = np.asarray(detuning.delta_opt, dtype=float)
    ds = np.asarray(detuning.delta_spin, dtype=float)
    shape = np.broadcast(do, ds).shape
    do = np.broadcast_to(do, shape)
    ds = np.broadcast_to(ds, shape)
    lam = np.zeros(shape + (3, 3), dtype=complex)
    lam[..., E3, G1] = 1j * do - rates.g31
    lam[..., G2, G1] = 1j * ds - rates.g21
    lam[..., E3, G2] = 1j * (do - ds) - rates.g32
    lam[..., G1, E3] = np.conj(lam[..., E3, G1])
    lam[..., G1, G2] = np.conj(lam[..., G2, G1])
    lam[..., G2, E3] = np.conj(lam[..., E3, G2])
    return lam


def lindblad_rhs(
    rho: np.ndarray,
    lam: np.ndarray,
    rates: RelaxationRates,
    rabi: ArrayLike,
    ground: int,
) -> np.ndarray:
    """Time derivative of rho.

    ``rabi`` is the complex Rabi frequency Omega*exp(i phase) on the
    ``ground``-|3> transition, broadcasting against the batch axes.
    """
    d = lam * rho
    p11 = rho[..., G1, G1]
    p22 = rho[..., G2, G2]
    p33 = rho[..., E3, E3]
    d[..., G1, G1] = rates.gamma_31 * p33 + rates.k21 * p22 - rates.k12 * p11
    d[..., G2, G2] = rates.gamma_32 * p33 + rates.k12 * p11 - rates.k21 * p22
    d[..., E3, E3] = -rates.gamma_opt * p33

    c = np.asarray(rabi) * 0.5
    cc = np.conj(c)
    c = c[..., None]
    cc = cc[..., None]
    # -i[V, rho] with V[3,g] = c, V[g,3] = conj(c)
    d[..., ground, :] += -1j * cc * rho[..., E3, :]
    d[..., E3, :] += -1j * c * rho[..., ground, :]
    d[..., :, ground] += 1j * rho[..., :, E3] * c
    d[..., :, E3] += 1j * rho[..., :, ground] * cc
    return d


def rk4_step(f: Callable, rho: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = f(rho, t)
    k2 = f(rho + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(rho + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(rho + dt * k3, t + dt)
    return rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_field(
    rho: np.ndarray,
    transition: str,
    envelope: Callable[[float], complex],
    t_start: float,
    t_end: float,
    dt: float,
    detuning: AtomDetuning,
    rates: RelaxationRates,
    phase: ArrayLike = 0.0,
) -> np.ndarray:
    """Fixed-step RK4 under a driving envelope on ``[t_start, t_end]``.

    The step is shrunk so that it divides the interval exactly.
    """
    try:
        ground = TRANSITIONS[transition]
    except KeyError:
        raise StateError(f"unknown transition {transition!r}") from None
    span = t_end - t_start
    n = max(1, int(np.ceil(span / dt - 1e-9)))
    h = span / n
    lam = _coherence_generator(detuning, rates)
    phasor = np.exp(1j * np.asarray(phase, dtype=float))

    def f(r, t):
        return lindblad_rhs(r, lam, rates, envelope(t) * phasor, ground)

    t = t_start
    out = np.array(rho, dtype=complex)
    for i in range(n):
        out = rk4_step(f, out, t, h)
        t = t_start + (i + 1) * h
    return _hermitize(out)


def liouvillian(
    transition: str,
    rabi: ArrayLike,
    detuning: AtomDetuning,
    rates: RelaxationRates,
) -> np.ndarray:
    """Matrix form (batch, 9, 9) of the constant-field generator acting on row-major vec(rho)."""
    ground = TRANSITIONS[transition]
    lam = _coherence_generator(detuning, rates)
    rabi = np.broadcast_to(np.asarray(rabi, dtype=complex), lam.shape[:-2])
    basis = np.eye(9, dtype=complex).reshape(9, 3, 3)
    rho = np.broadcast_to(basis, lam.shape[:-2] + (9, 3, 3))
    d = lindblad_rhs(rho, lam[..., None, :, :], rates, rabi[..., None], ground)
    # column k of the generator is the derivative of basis matrix k
    return np.swapaxes(d.reshape(lam.shape[:-2] + (9, 9)), -1, -2)


def square_pulse(
    rho: np.ndarray,
    transition: str,
    omega: float,
    duration: float,
    detuning: AtomDetuning,
    rates: RelaxationRates,
    phase: ArrayLike = 0.0,
) -> np.ndarray:
    """Exact evolution through a constant-amplitude pulse by matrix exponentiation."""
    if transition not in TRANSITIONS:
        raise StateError(f"unknown transition {transition!r}")
    rabi = omega * np.exp(1j * np.asarray(phase, dtype=float))
    L = liouvillian(transition, rabi, detuning, rates)
    shape = np.broadcast_shapes(np.shape(rho)[:-2], L.shape[:-2])
    prop = expm(np.broadcast_to(L, shape + (9, 9)) * duration)
    vec = np.broadcast_to(np.asarray(rho, dtype=complex), shape + (3, 3)).reshape(shape + (9,))
    out = np.einsum("...ij,...j->...i", prop, vec).reshape(shape + (3, 3))
    return _hermitize(out)


def evolve_pulse(
    rho: np.ndarray,
    pulse,
    detuning: AtomDetuning = AtomDetuning(),
    rates: RelaxationRates | None = None,
    dt: float | None = None,
    phase_offset: ArrayLike = 0.0,
) -> np.ndarray:
    """Integrate through one shaped pulse (see :class:`photonlock.sequence.Pulse`).

    Hard pulses are applied as instantaneous rotations. Square pulses are
    propagated exactly unless an RK4 step ``dt`` is given. For shaped pulses
    ``dt`` defaults to duration/200 and may not exceed duration/50.
    """
    rates = rates or RelaxationRates.no_decay()
    if pulse.shape == "hard":
        return apply_rotation(rho, pulse.transition, pulse.area, pulse.phase + np.asarray(phase_offset))
    if not np.isfinite(pulse.omega0):
        raise StateError("non-finite Rabi envelope")
    dur = pulse.duration
    if pulse.shape == "square" and dt is None:
        return square_pulse(
            rho, pulse.transition, pulse.omega0, dur, detuning, rates, pulse.phase + np.asarray(phase_offset)
        )
    if dt is None:
        dt = dur / 200.0
    if not 0 < dt <= dur / 50.0 * (1 + 1e-12):
        raise StateError(f"step {dt} violates resolution floor duration/50 = {dur / 50.0}")
    return integrate_field(
        rho,
        pulse.transition,
        pulse.envelope,
        pulse.t_start,
        pulse.t_end,
        dt,
        detuning,
        rates,
        phase=pulse.phase + np.asarray(phase_offset),
    )


def _two_exp(a: float, b: float, t: float) -> float:
    """(exp(-a t) - exp(-b t)) / (b - a), stable including a == b."""
    m = min(a, b)
    gap = abs(b - a)
    if gap * t < 1e-12:
        return t * np.exp(-m * t)
    return np.exp(-m * t) * -np.expm1(-gap * t) / gap


def free_evolve(
    rho: np.ndarray,
    duration: float,
    detuning: AtomDetuning = AtomDetuning(),
    rates: RelaxationRates | None = None,
) -> np.ndarray:
    """Exact field-free evolution over ``duration``."""
    if duration < 0:
        raise StateError(f"negative free-evolution time {duration}")
    rates = rates or RelaxationRates.no_decay()
    rho = np.asarray(rho, dtype=complex)
    if duration == 0:
        return rho.copy()
    t = duration
    lam = _coherence_generator(detuning, rates)
    out = rho * np.exp(lam * t)

    p11 = rho[..., G1, G1].real
    p22 = rho[..., G2, G2].real
    p33 = rho[..., E3, E3].real
    g = rates.gamma_opt
    gs = rates.gamma_spin
    p = rates.spin_equilibrium
    total = p11 + p22 + p33
    p33_t = p33 * np.exp(-g * t)
    # rho22 obeys d/dt x = -gs x + p gs (total - p33) + gamma_32 p33
    decay_s = np.exp(-gs * t)
    x = (
        p22 * decay_s
        + p * total * (-np.expm1(-gs * t))
        + (rates.gamma_32 - p * gs) * p33 * _two_exp(g, gs, t)
    )
    out[..., E3, E3] = p33_t
    out[..., G2, G2] = x
    out[..., G1, G1] = total - p33_t - x
    return out
