import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

LEADS_15 = ("i", "ii", "iii", "avr", "avl", "avf", "v1", "v2", "v3", "v4", "v5", "v6", "vx", "vy", "vz")


def write_record(directory, name, adc, rate=1000, gain=2000, baseline=0, comments=(), leads=LEADS_15):
    """Write a PTB-style format-16 record; ``adc`` is (n_samples, n_leads) int16."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    adc = np.asarray(adc, dtype="<i2")
    n, k = adc.shape
    lines = [f"{name} {k} {rate} {n}"]
    for j in range(k):
        lines.append(f"{name}.dat 16 {gain}({baseline})/mV 16 0 {int(adc[0, j])} 0 0 {leads[j]}")
    lines += ["#" + c for c in comments]
    (directory / f"{name}.hea").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / f"{name}.dat").write_bytes(adc.tobytes())
    return directory / f"{name}.hea"


MI_INFERIOR = ("age: 60", "sex: male", "Reason for admission: Myocardial infarction",
               "Acute infarction (localization): inferior")
HEALTHY = ("age: 40", "sex: female", "Reason for admission: Healthy control")


def smooth_adc(rng, n, k=15, amp=800):
    t = np.arange(n) / 1000.0
    f = rng.uniform(0.5, 3.0, size=k)
    ph = rng.uniform(0, 2 * np.pi, size=k)
    return (amp * np.sin(2 * np.pi * f * t[:, None] + ph)).astype(np.int16)


@pytest.fixture
def record_dir(tmp_path):
    """Two records: 6000 samples (inferior MI) and 9000 samples (healthy)."""
    rng = np.random.default_rng(7)
    d = tmp_path / "ptb"
    write_record(d / "patient001", "s0001", smooth_adc(rng, 6000), comments=MI_INFERIOR)
    write_record(d / "patient002", "s0002", smooth_adc(rng, 9000), comments=HEALTHY)
    return d


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
