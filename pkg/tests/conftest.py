import json

import pytest

from conecover.generators import entropy_example_spec
from conecover.graph import validate_spec


@pytest.fixture
def entropy_graph():
    return validate_spec(entropy_example_spec())


@pytest.fixture
def entropy_spec_path(tmp_path):
    p = tmp_path / "entropy_example.json"
    p.write_text(json.dumps(entropy_example_spec()))
    return p


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
