import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trajcurate.synthbench import ModalityConfig, WorldConfig, generate_world  # noqa: E402
from trajcurate.trajstore import Dataset, Trajectory  # noqa: E402


def make_trajectory(tid, n, rng, *, action_dim=2, state_dim=4, mods=(("visual", 8),), lang_dim=None, instruction=""):
    return Trajectory(
        id=tid,
        ee_positions=rng.random((n, 3)),
        states=rng.random((n, state_dim)),
        actions=rng.random((n, action_dim)),
        embeddings={name: rng.standard_normal((n, d)) for name, d in mods},
        instruction=instruction or f"instruction for {tid}",
        instruction_embedding=None if lang_dim is None else rng.standard_normal(lang_dim),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_world():
    cfg = WorldConfig(
        num_tasks=3,
        trajectories_per_task=12,
        target_demos=3,
        modalities=(ModalityConfig("visual", 8, True), ModalityConfig("motion", 8, False)),
        seed=7,
    )
    return generate_world(cfg)


@pytest.fixture
def tiny_dataset(rng):
    trajs = [make_trajectory(f"t{i}", 5 + i, rng, lang_dim=6) for i in range(4)]
    return Dataset.from_trajectories("prior", trajs)


ACCEPTANCE_LINES = []


def report_criterion(number, passed, text):
    """Record one acceptance line; every line is repeated in the terminal summary."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
