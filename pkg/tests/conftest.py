import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from knobdenoise.media import Clip, Frame


def texture(h, w, seed=0, amp=0.2):
    """Band-limited random texture around mid-gray, suitable for flow and SSIM tests."""
    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.normal(size=(h, w)), 1.5, mode="wrap") + 0.5 * gaussian_filter(
        rng.normal(size=(h, w)), 4.0, mode="wrap")
    return np.clip(0.5 + amp * t / t.std(), 0.0, 1.0)


def textured_frame(h, w, seed=0, index=0):
    return Frame(texture(h, w, seed), texture(h, w, seed + 101, 0.05), texture(h, w, seed + 202, 0.05), index)


def static_clip(n, h, w, seed=0):
    f = textured_frame(h, w, seed)
    return Clip(tuple(f.replace(index=i) for i in range(n)))


def constant_clip(n, h, w, value=0.5):
    p = np.full((h, w), value)
    return Clip(tuple(Frame(p, np.full((h, w), 0.5), np.full((h, w), 0.5), i) for i in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_clip(n, h, w, seed=0):
    """Static clip with little energy near Nyquist, where the MAD noise estimator looks."""
    rng = np.random.default_rng(seed)
    planes = []
    for amp in (0.15, 0.04, 0.04):
        t = gaussian_filter(rng.normal(size=(h, w)), 4.0, mode="wrap")
        planes.append(np.clip(0.5 + amp * t / t.std(), 0, 1))
    f = Frame(*planes)
    return Clip(tuple(f.replace(index=i) for i in range(n)))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, from the 'criterion' property each acceptance test records."""
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when in ("call", "setup"):
                lines.append((props["criterion"], outcome.upper(), props.get("measured", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, measured in sorted(lines):
            status = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP"}[status]
            terminalreporter.write_line(f"{status}  {name}  {measured}".rstrip())
