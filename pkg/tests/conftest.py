import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# A model and task small enough to train in well under a second per epoch.
TINY_CONFIG = """\
model.frames = 4
model.height = 16
model.width = 16
model.holistic_widths = 2,3,4
model.frame_widths = 2
model.d_f = 4
model.d_r = 3
train.epochs = 2,2,2
train.lr = 0.01,0.01,0.01
synth.frames = 4
synth.height = 16
synth.width = 16
synth.patch = 4
synth.per_class = 3
synth.test_per_class = 2
"""


@pytest.fixture
def tiny_config_text():
    return TINY_CONFIG


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


# One line per acceptance criterion, collected by tests/test_acceptance.py and
# repeated in the terminal summary so they survive output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
