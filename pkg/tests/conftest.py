import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rmss.core import RadarScan, compensate_doppler  # noqa: E402
from rmss.synth import SceneConfig, generate  # noqa: E402


def make_scan(xyz, v_comp=None, ego=(0.0, 0.0), gt=None, rcs=None, frame_idx=0, seq_id="s"):
    """Scan whose raw Doppler is consistent with ``v_comp`` and the ego velocity."""
    xyz = np.asarray(xyz, float).reshape(-1, 3)
    n = len(xyz)
    v_comp = np.zeros(n) if v_comp is None else np.asarray(v_comp, float)
    u = xyz / np.linalg.norm(xyz, axis=1)[:, None]
    v_raw = v_comp - (ego[0] * u[:, 0] + ego[1] * u[:, 1])
    gt = np.zeros(n) if gt is None else gt
    rcs = np.zeros(n) if rcs is None else rcs
    scan = RadarScan(xyz, v_raw, np.zeros(n), rcs, gt, ego, seq_id, frame_idx)
    return compensate_doppler(scan)


@pytest.fixture(scope="session")
def small_dataset():
    return generate(SceneConfig(n_sequences=4, frames_per_sequence=6, val_sequences=1,
                                test_sequences=1, seed=3))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
