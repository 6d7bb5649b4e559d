import numpy as np
import pytest

from gaitstream import synth
from gaitstream.session import SCENARIOS, ScenarioTag

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def subject():
    return synth.study_subjects(2, 0)[0]


def make_session(subject, scenario_id=4, round_index=1):
    sid, p = subject
    tag = ScenarioTag(*SCENARIOS[scenario_id])
    return synth.generate_session(p, tag, round_index, synth.round_plan(p, round_index), subject_id=sid)


@pytest.fixture(scope="session")
def rollator_session(subject):
    return make_session(subject, 4, 1)


@pytest.fixture(scope="session")
def walking_session(subject):
    return make_session(subject, 1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
