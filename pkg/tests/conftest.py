import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
  return np.random.default_rng(20240617)


def pytest_terminal_summary(terminalreporter):
  mod = sys.modules.get("test_acceptance")
  if mod is not None and mod.LINES:
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
      terminalreporter.write_line(line)
