"""Scenario execution: sweeps, fits, run records and plot data files."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DecaySeries, FitError, fit_exp_decay, two_timescale_fit
from .config import ExperimentConfig, canonical, make_grid, make_rates, make_sequence, point_config
from .ensemble import run_sequence
from .propagation import MemoryProtocol, calibrate_coupling, run_memory
from .sequence import DEFAULT_AREAS, DEFAULT_DURATIONS

FAIL_FRACTION = 0.10
DECAY_AXES = ("delta_T", "T")


@dataclass
class PointResult:
    index: int
    value: float
    status: str = "ok"
    echo_found: bool = False
    echo_time: float = float("nan")
    amplitude: float = 0.0
    intensity: float = 0.0
    efficiency: float = 0.0
    extra: dict = field(default_factory=dict)
    error: str = ""
    trace: object = None

    def to_dict(self) -> dict:
        d = {
            "index": self.index,
            "value": self.value,
            "status": self.status,
            "echo_found": self.echo_found,
            "echo_time": self.echo_time,
            "amplitude": self.amplitude,
            "intensity": self.intensity,
            "efficiency": self.efficiency,
        }
        d.update(self.extra)
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class RunRecord:
    scenario: str
    config_hash: str
    config: dict
    versions: dict
    points: list
    fits: dict
    summary: dict
    calibration: dict = field(default_factory=dict)
    wall_time: float = 0.0  # reported on the console only, never written

    @property
    def n_failed(self) -> int:
        return sum(p.status != "ok" for p in self.points)

    @property
    def failed_fraction(self) -> float:
        return self.n_failed / len(self.points) if self.points else 0.0

    @property
    def stem(self) -> str:
        return f"{self.scenario}_{self.config_hash}"

    def payload(self) -> dict:
        return _clean({
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "config": canonical(self.config),
            "versions": self.versions,
            "points": [p.to_dict() for p in self.points],
            "fits": self.fits,
            "summary": self.summary,
            "calibration": self.calibration,
        })

    def to_json(self) -> str:
        return json.dumps(self.payload(), sort_keys=True, indent=1)


def _clean(obj):
    """Replace non-finite floats by None so the payload is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def versions() -> dict:
    return {"photonlock": __version__, "numpy": np.__version__, "python": platform.python_version()}


def wiener_phases(seq, phase_diffusion: float, rng) -> dict:
    """Laser phase at each pulse centre; one random walk per carrier."""
    out = {}
    by_carrier = {}
    for p in seq.pulses:
        by_carrier.setdefault(p.carrier, []).append(p)
    for carrier in sorted(by_carrier):
        ps = sorted(by_carrier[carrier], key=lambda p: p.t0)
        phi, last = 0.0, ps[0].t0
        for p in ps:
            phi += math.sqrt(phase_diffusion * (p.t0 - last)) * rng.standard_normal()
            last = p.t0
            out[p.label] = phi
    return out


def _thin_point(cfg: dict, index: int, value) -> PointResult:
    pc = point_config(cfg, value)
    rates, grid = make_rates(pc), make_grid(pc)
    seq = make_sequence(pc)
    ov = pc["sequence"]["mode_overlap"]
    jit = pc["jitter"]
    if not jit["enabled"]:
        res = run_sequence(grid, rates, seq, mode_overlap=ov, keep_history=False)
        ev = res.trace.events[0]
        trace = res.trace
        shots = 1
    else:
        # shot-averaged intensity with a fresh, seeded phase walk per shot
        evs = []
        trace = None
        for shot in range(jit["shots"]):
            rng = np.random.default_rng([pc["seed"], index, shot])
            ph = wiener_phases(seq, jit["phase_diffusion"], rng)
            res = run_sequence(grid, rates, seq, mode_overlap=ov, phase_jitter=ph, keep_history=False)
            evs.append(res.trace.events[0])
            trace = trace or res.trace
        found = [e for e in evs if e.found]
        ev = evs[0]
        if found:
            ev = type(ev)(
                True,
                float(np.mean([e.time for e in found])),
                float(np.mean([e.amplitude for e in evs])),
                float(np.mean([e.intensity for e in evs])),
                float(np.mean([e.energy for e in evs])),
                float(np.mean([e.efficiency for e in evs])),
            )
        shots = jit["shots"]
    if not np.isfinite(ev.intensity):
        raise FloatingPointError("non-finite echo intensity")
    pr = PointResult(index, value, "ok", ev.found, ev.time, ev.amplitude, ev.intensity, ev.efficiency)
    pr.extra = {"expected_time": seq.detection.expected, "shots": shots}
    pr.trace = trace
    return pr


def memory_protocol(pc: dict) -> MemoryProtocol:
    s = pc["sequence"]
    areas = {**DEFAULT_AREAS, **s["areas"]}
    return MemoryProtocol(
        t_DW=s["t_DW"],
        data_area=pc["slab"]["data_area"],
        write_area=areas["W"],
        read_area=areas["R"],
        durations={**DEFAULT_DURATIONS, **s["durations"]},
        locking=s["locking"],
        lock_shape=s["shapes"].get("B1", "hard"),
        b1_area=areas["B1"],
        b2_area=areas["B2"],
        t_B1=s["t_B1"],
        T=s["T"],
        delta_T=s["delta_T"],
        r_delay=s["r_delay"],
        half_window=min(s["half_window"], 1.0),
    )


def _slab_point(cfg: dict, index: int, value, kappa_scale: float) -> PointResult:
    pc = point_config(cfg, value)
    rates, grid = make_rates(pc), make_grid(pc)
    slab = pc["slab"]
    dirs = tuple(slab["directions"])
    res = run_memory(
        slab["optical_depth"], memory_protocol(pc), grid, rates, dirs, slab["length"],
        slab["n_z"], pc["sequence"]["mode_overlap"], kappa_scale=kappa_scale,
    )
    main = pc["sequence"]["geometry"] if pc["sequence"]["geometry"] in res else dirs[0]
    r = res[main]
    ev = r.trace.events[0]
    pr = PointResult(index, value, "ok", ev.found, r.echo_time, ev.amplitude, ev.intensity, r.efficiency)
    extra = {"optical_depth": slab["optical_depth"], "geometry": main}
    for k, v in res.items():
        extra[f"eta_{k}"] = v.efficiency
    if "forward" in res and "backward" in res:
        fw = res["forward"].efficiency
        extra["ratio"] = res["backward"].efficiency / fw if fw > 0 else float("inf")
    pr.extra = extra
    pr.trace = r.trace
    return pr


def _fit_dict(f) -> dict:
    return {
        "amplitude": f.amplitude,
        "tau": f.tau,
        "offset": f.offset,
        "residual_norm": f.residual_norm,
        "cov_diag": list(f.cov_diag),
        "status": f.status,
        "iterations": f.iterations,
    }


def fit_points(points: list, fit_cfg: dict, axis: str) -> dict:
    if not fit_cfg.get("enabled", True) or axis not in DECAY_AXES:
        return {}
    good = sorted((p for p in points if p.status == "ok" and p.echo_found), key=lambda p: p.value)
    t0 = fit_cfg.get("fit_from")
    if t0 is not None:
        good = [p for p in good if p.value >= t0]
    out = {}
    try:
        series = DecaySeries(np.array([p.value for p in good]), np.array([p.intensity for p in good]), axis=axis)
        out["single"] = _fit_dict(fit_exp_decay(series, fit_cfg.get("with_offset", False)))
        if fit_cfg.get("split_time") is not None:
            two = two_timescale_fit(series, fit_cfg["split_time"], fit_cfg.get("with_offset", True))
            out["fast"] = _fit_dict(two.fast)
            out["slow"] = _fit_dict(two.slow)
            out["split_time"] = two.split_time
            out["saturation"] = two.saturation
    except FitError as exc:
        out["error"] = str(exc)
    return out


def _summary(cfg: dict, points: list, fits: dict) -> dict:
    scen = cfg["scenario"]
    rates = make_rates(cfg)
    s = {"n_points": len(points), "n_failed": sum(p.status != "ok" for p in points)}
    ref_name = {"fig2a": "T1_opt", "fig2bc": "T1_spin"}.get(scen)
    key = "slow" if "slow" in fits else "single"
    if key in fits:
        tau = fits[key]["tau"]
        s.update({"tau": tau, "tau_fit": key})
        if ref_name:
            ref = getattr(rates, ref_name)
            s.update({"reference": ref_name, "reference_value": ref, "relative_deviation": (tau - ref) / ref})
    if "fast" in fits and "slow" in fits:
        s["tau_fast"] = fits["fast"]["tau"]
        s["tau_slow"] = fits["slow"]["tau"]
    ratios = [(p.extra.get("optical_depth"), p.extra["ratio"]) for p in points if "ratio" in p.extra]
    if ratios:
        s["ratios"] = [{"optical_depth": d, "ratio": r} for d, r in ratios]
    return s


def run_scenario(config: ExperimentConfig, threads: int = 1, progress=None) -> RunRecord:
    """Execute every sweep point; numeric failures mark the point, not the run."""
    cfg = config.data
    start = time.perf_counter()
    values = cfg["sweep"]["values"] or [None]
    calibration = {}
    kappa = None
    if cfg.get("slab") is not None:
        kappa = calibrate_coupling(make_grid(cfg), make_rates(cfg), cfg["slab"]["n_z"])
        calibration = {"kappa_scale": kappa, "n_z": cfg["slab"]["n_z"]}

    def one(item):
        i, v = item
        try:
            if kappa is None:
                pr = _thin_point(cfg, i, v)
            else:
                pr = _slab_point(cfg, i, v, kappa)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            pr = PointResult(i, v, "failed", error=f"{type(exc).__name__}: {exc}")
        if progress:
            progress(pr)
        return pr

    items = list(enumerate(values))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(one, items))
    else:
        points = [one(it) for it in items]
    axis = cfg["sweep"].get("axis", "")
    fits = fit_points(points, cfg["fit"], axis)
    rec = RunRecord(
        cfg["scenario"], config.hash, cfg, versions(), points, fits, _summary(cfg, points, fits), calibration
    )
    rec.wall_time = time.perf_counter() - start
    return rec


def summary_text(rec: RunRecord) -> str:
    cfg = rec.config
    s = rec.summary
    lines = [
        f"scenario: {rec.scenario}",
        f"config hash: {rec.config_hash}",
        f"sweep axis: {cfg['sweep'].get('axis', '-')} ({len(rec.points)} points, {rec.n_failed} failed)",
    ]
    for p in rec.points:
        if p.status != "ok":
            lines.append(f"  point {p.index} value={p.value}: FAILED {p.error}")
    if "tau" in s and "reference" not in s:
        lines.append(f"fitted tau ({s['tau_fit']}) = {s['tau']:.6g} us")
    elif "tau" in s:
        lines.append(
            f"fitted tau ({s['tau_fit']}) = {s['tau']:.6g} us; configured {s['reference']} = "
            f"{s['reference_value']:.6g} us; deviation {100 * s['relative_deviation']:+.2f}%"
        )
    if "tau_fast" in s:
        lines.append(f"two-timescale fit: tau_fast = {s['tau_fast']:.6g} us, tau_slow = {s['tau_slow']:.6g} us")
    if "error" in rec.fits:
        lines.append(f"fit failed: {rec.fits['error']}")
    for r in s.get("ratios", []):
        lines.append(f"optical depth {r['optical_depth']:g}: backward/forward efficiency ratio = {r['ratio']:.4g}")
    if rec.calibration:
        lines.append(f"coupling calibration factor: {rec.calibration['kappa_scale']:.6f}")
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if not math.isfinite(x) else f"{x:.10g}"
    return str(x)


def emit_plotdata(record, out_dir) -> list:
    """Write ``<stem>.csv`` (points) and, when a fit exists, ``<stem>_fit.csv``."""
    rec = record.payload() if isinstance(record, RunRecord) else record
    points = rec["points"]
    if not points:
        raise ValueError("record holds no sweep points")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{rec['scenario']}_{rec['config_hash']}"
    fits = rec.get("fits", {})
    ok = [p for p in points if p["status"] == "ok"]
    i_ref = ok[0]["intensity"] if ok and ok[0]["intensity"] else None
    e_ref = ok[0]["efficiency"] if ok and ok[0]["efficiency"] else None
    extra_cols = sorted({k for p in points for k in p if k.startswith("eta_") or k == "ratio"})

    def model(f, t):
        return f["amplitude"] * math.exp(-2.0 * t / f["tau"]) + f["offset"]

    files = []
    path = out_dir / f"{stem}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["index", "value", "status", "echo_time", "intensity", "intensity_norm",
                "efficiency", "efficiency_norm"] + extra_cols
        if "single" in fits:
            head.append("fit")
        w.writerow(head)
        for p in points:
            row = [p["index"], _fmt(p["value"]), p["status"], _fmt(p["echo_time"]), _fmt(p["intensity"]),
                   _fmt(p["intensity"] / i_ref if i_ref else None), _fmt(p["efficiency"]),
                   _fmt(p["efficiency"] / e_ref if e_ref else None)]
            row += [_fmt(p.get(k)) for k in extra_cols]
            if "single" in fits:
                row.append(_fmt(model(fits["single"], p["value"])) if p["value"] is not None else "")
            w.writerow(row)
    files.append(path)

    if "single" in fits:
        vals = [p["value"] for p in points if p["value"] is not None]
        grid = np.linspace(min(vals), max(vals), 201)
        names = [k for k in ("single", "fast", "slow") if k in fits]
        path = out_dir / f"{stem}_fit.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value"] + [f"fit_{k}" for k in names])
            for t in grid:
                w.writerow([_fmt(float(t))] + [_fmt(model(fits[k], float(t))) for k in names])
        files.append(path)
    return files


def write_outputs(rec: RunRecord, out_dir=None) -> list:
    """Record JSON, summary text, per-point traces and plot data."""
    out_dir = Path(out_dir or rec.config["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    path = out_dir / f"{rec.stem}.json"
    path.write_text(rec.to_json() + "\n")
    files.append(path)
    path = out_dir / f"{rec.stem}_summary.txt"
    path.write_text(summary_text(rec))
    files.append(path)
    if rec.config["output"].get("traces", True):
        tdir = out_dir / f"{rec.stem}_traces"
        tdir.mkdir(exist_ok=True)
        for p in rec.points:
            if p.trace is not None:
                files.append(p.trace.to_csv(tdir / f"point_{p.index:03d}.csv"))
    files += emit_plotdata(rec, out_dir)
    return files


def load_record(path) -> dict:
    return json.loads(Path(path).read_text())
