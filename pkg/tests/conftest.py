import os
import sys

import pytest

# Ensure project root is importable as a module path
ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


@pytest.fixture(autouse=True)
def project_root(monkeypatch):
    # config/*.json and config/models/*.json resolve against the working directory
    monkeypatch.chdir(ROOT)
    return ROOT


@pytest.fixture
def two_point():
    from kbrw.model.step_model import calibrate_critical
    return calibrate_critical("two_point", 2)


@pytest.fixture
def simple_walk():
    from kbrw.model.laws import TwoPointLaw
    return TwoPointLaw(0.5)
