import math
import os
import sys

import pytest

# Add the parent directory to the path so we can import from bell_lab
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from bell_lab.channel_model import ChannelConfig
from bell_lab.event_model import DetectionEvent, EventLog, LogHeader, Mode, Site
from bell_lab.experiment import ExperimentConfig, run_experiment
from bell_lab.setting_source import SettingKind, SettingStrategy

CHSH_A = (0.0, math.pi / 2)
CHSH_B = (math.pi / 4, -math.pi / 4)
QUANTUM_CHSH = 2 * math.sqrt(2)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long simulations and optimizer sweeps")


def make_log(rows, mode=Mode.CONTINUOUS, arity=2, **extras):
    """EventLog from (site, trial, time, setting, channel) tuples."""
    header = LogHeader(mode, arity, extras={k.replace("__", "."): str(v) for k, v in extras.items()})
    events = [
        DetectionEvent(Site(site), trial, time, setting, channel)
        for site, trial, time, setting, channel in rows
    ]
    return EventLog.from_events(header, events)


@pytest.fixture
def simulate():
    """Run a small experiment; keyword arguments go to ExperimentConfig."""

    def run(source, trials=20_000, seed=11, settings=None, **kwargs):
        kwargs.setdefault("angles_a", CHSH_A)
        kwargs.setdefault("angles_b", CHSH_B)
        kwargs.setdefault("channel", ChannelConfig())
        cfg = ExperimentConfig(
            source=source,
            settings=settings or SettingStrategy(SettingKind.IID_UNIFORM),
            trials=trials,
            seed=seed,
            **kwargs,
        )
        return run_experiment(cfg)

    return run
