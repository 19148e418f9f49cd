"""Decay-constant extraction for echo-vs-delay sweeps.

The fit model is I(t) = A exp(-2 t / tau) + C: intensities decay at twice
the amplitude rate, so ``tau`` is directly comparable with T1/T2 values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares


class FitError(ValueError):
    """Fit could not produce a physical decay constant."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class DecaySeries:
    t: np.ndarray
    intensity: np.ndarray
    sigma: Optional[np.ndarray] = None
    axis: str = "T"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.intensity, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "intensity", y)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if t.shape != y.shape or t.ndim != 1:
            raise FitError("delays and intensities must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise FitError("delays must be strictly increasing")
        if np.any(y < 0):
            raise FitError("intensities must be >= 0")

    def __len__(self) -> int:
        return self.t.size

    def between(self, t0: float, t1: float) -> "DecaySeries":
        sel = (self.t >= t0) & (self.t <= t1)
        sig = None if self.sigma is None else self.sigma[sel]
        return DecaySeries(self.t[sel], self.intensity[sel], sig, self.axis)


@dataclass
class DecayFit:
    amplitude: float
    tau: float
    offset: float
    residual_norm: float
    cov_diag: tuple
    status: str = "ok"
    iterations: int = 0
    grad_norm_initial: float = np.nan
    grad_norm_final: float = np.nan

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def __call__(self, t):
        return self.amplitude * np.exp(-2.0 * np.asarray(t) / self.tau) + self.offset

    def to_json(self) -> str:
        d = asdict(self)
        d["cov_diag"] = list(self.cov_diag)
        return json.dumps(d, sort_keys=True)


def _model(p, t, with_offset):
    a, k = p[0], p[1]
    e = np.exp(-k * t)
    f = a * e
    cols = [e, -a * t * e]
    if with_offset:
        f = f + p[2]
        cols.append(np.ones_like(t))
    return f, np.stack(cols, axis=1)


def _initial_guess(t, y, with_offset):
    c0 = 0.0
    if with_offset:
        span = y.max() - y.min()
        c0 = y.min() - 0.05 * span
    z = y - c0
    good = z > 0
    if good.sum() < 2:
        good = np.ones_like(z, dtype=bool)
        z = np.abs(z) + 1e-300
    slope, icpt = np.polyfit(t[good], np.log(z[good]), 1)
    k = -slope
    a = np.exp(icpt)
    if k <= 0:
        k = 1.0 / max(np.ptp(t), 1e-300)
    p = [a, k] + ([c0] if with_offset else [])
    return np.array(p, dtype=float)


def fit_exp_decay(
    series: DecaySeries,
    with_offset: bool = False,
    max_iter: int = 200,
    xtol: float = 1e-10,
) -> DecayFit:
    """Weighted least-squares fit of A exp(-2t/tau) (+ C), Levenberg-Marquardt."""
    t, y = series.t, series.intensity
    npar = 3 if with_offset else 2
    if len(series) < 4 or len(series) < npar + 1:
        raise FitError(f"need at least 4 points, got {len(series)}")
    if np.allclose(y, y[0], rtol=1e-12, atol=0):
        return DecayFit(float(y[0]), np.inf, 0.0, 0.0, (np.nan,) * npar, "non-decaying")
    wts = 1.0 / series.sigma if series.sigma is not None else np.ones_like(y)
    # shift the time origin for conditioning; A is mapped back afterwards
    t0 = t[0]
    ts = t - t0

    p = _initial_guess(ts, y, with_offset)

    def fun(p):
        return (_model(p, ts, with_offset)[0] - y) * wts

    def jac(p):
        return _model(p, ts, with_offset)[1] * wts[:, None]

    g0 = float(np.linalg.norm(jac(p).T @ fun(p)))
    with np.errstate(over="ignore", invalid="ignore"):
        sol = least_squares(fun, p, jac=jac, method="lm", xtol=xtol, max_nfev=max_iter * (npar + 1))
    p, r, J = sol.x, sol.fun, sol.jac
    cost = float(r @ r)
    it = int(sol.nfev)

    a, k = p[0], p[1]
    c = p[2] if with_offset else 0.0
    diag = {"amplitude": a, "rate": k, "offset": c, "iterations": it, "cost": float(cost)}
    if not np.isfinite(k) or k <= 0:
        raise FitError("fit converged to a non-decaying or growing solution (tau <= 0)", diag)
    dof = max(len(series) - npar, 1)
    try:
        cov = np.linalg.inv(J.T @ J) * cost / dof
        kvar = cov[1, 1]
    except np.linalg.LinAlgError:
        cov = np.full((npar, npar), np.nan)
        kvar = np.nan
    tau = 2.0 / k
    amp = a * np.exp(k * t0)
    # propagate variances to (A at t=0, tau, C)
    var_tau = kvar * (2.0 / k ** 2) ** 2
    cdiag = [cov[0, 0] * np.exp(2 * k * t0), var_tau] + ([cov[2, 2]] if with_offset else [])
    return DecayFit(
        float(amp),
        float(tau),
        float(c),
        float(np.sqrt(cost)),
        tuple(float(v) for v in cdiag),
        "ok",
        it,
        g0,
        float(np.linalg.norm(J.T @ r)),
    )


@dataclass
class TwoScaleFit:
    fast: DecayFit
    slow: DecayFit
    split_time: float

    @property
    def saturation(self) -> float:
        return self.slow.offset


def two_timescale_fit(series: DecaySeries, split_time: float, with_offset: bool = True) -> TwoScaleFit:
    """Independent fits below and above ``split_time``."""
    if not series.t[0] < split_time < series.t[-1]:
        raise FitError(f"split time {split_time} outside the delay range")
    lo = series.between(-np.inf, split_time)
    hi = series.between(split_time, np.inf)
    if len(lo) < 4 or len(hi) < 4:
        raise FitError("need at least 4 points on each side of the split")
    return TwoScaleFit(fit_exp_decay(lo, with_offset), fit_exp_decay(hi, with_offset), split_time)
