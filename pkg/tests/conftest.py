from __future__ import annotations

import pytest
from hypothesis import settings

from helpers import CRITERIA_RESULTS

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    """A small noiseless synthetic sequence written to disk."""
    from hiertrack.synth import ScenarioSpec, generate

    spec = ScenarioSpec(name="fixture", n_frames=60, players_per_team=2, n_referees=1,
                        occlusions=((1, 20, 10),), reid_targets=(), speed=(0.2, 0.8))
    out = tmp_path_factory.mktemp("tiny")
    generate(spec, seed=3, out_dir=out)
    return out


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_RESULTS:
            terminalreporter.write_line(line)
