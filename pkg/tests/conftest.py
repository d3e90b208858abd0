import numpy as np
import pytest

from aeda.datasets import SynthConfig, generate_synthetic

_CRITERIA = []


def record_criterion(number, title, passed, detail=""):
    """Remember one acceptance verdict; printed in the terminal summary."""
    _CRITERIA.append((number, title, bool(passed), detail))
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
    print(line + (f" :: {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        tail = f" :: {detail}" if detail else ""
        terminalreporter.write_line(
            f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}{tail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    cfg = SynthConfig(dimension=8, speakers_per_domain=30, channels_per_speaker=3,
                      sessions_per_channel=2, eval_speakers=20, target_trials=100,
                      nontarget_trials=400, seed=7)
    return generate_synthetic(cfg)
