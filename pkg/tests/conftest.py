import time
from pathlib import Path

import numpy as np
import pytest

from photonlock.config import load_config
from photonlock.scenarios import run_scenario, write_outputs

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# lines collected by the acceptance module, echoed after the test summary
ACCEPTANCE_LINES = []


def random_state(rng, shape=()):
    """Random full-rank density matrices of the given batch shape."""
    a = rng.normal(size=shape + (3, 3)) + 1j * rng.normal(size=shape + (3, 3))
    rho = a @ np.conj(np.swapaxes(a, -1, -2))
    tr = np.trace(rho, axis1=-2, axis2=-1)
    return rho / tr[..., None, None]


@pytest.fixture(scope="session")
def shipped_runs(tmp_path_factory):
    """Each shipped config run once: name -> (config, record, files, seconds)."""
    out = {}
    base = tmp_path_factory.mktemp("shipped")
    for path in sorted(CONFIGS.glob("*.yaml")):
        cfg = load_config(path)
        t0 = time.perf_counter()
        rec = run_scenario(cfg)
        files = write_outputs(rec, base / path.stem)
        out[path.stem] = (cfg, rec, files, time.perf_counter() - t0)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
