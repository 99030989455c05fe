import datetime as dt

import pytest

from hybridload.data import SynthConfig, synth_generate
from hybridload.train import TrainConfig, fit

SMALL = dict(d=3, n_h=4)


def small_config(**kw):
    base = dict(batch_size=16, max_epochs_offline=3, max_epochs_online=2, n_clusters=3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def short_series():
    """About four months of synthetic load."""
    s = synth_generate(SynthConfig(years=1, seed=5))
    return s.slice(0, 24 * 130)


@pytest.fixture(scope="session")
def small_checkpoint(short_series):
    return fit(short_series, dt.date(2019, 3, 1), small_config(), **SMALL)


# acceptance verdict lines, repeated after the run so plain `pytest -v` shows them
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
