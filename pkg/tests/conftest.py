import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from PyQt6 import QtCore  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size particle experiments")


@pytest.fixture
def rng():
    return np.random.default_rng(20240229)


@pytest.fixture(autouse=True)
def _no_env_overrides(monkeypatch):
    for key in list(os.environ):
        if key.startswith("STICKYLDP_"):
            monkeypatch.delenv(key, raising=False)


@pytest.fixture(autouse=True)
def _isolated_settings(tmp_path_factory):
    """Stored settings live in a fresh ini directory, never the user's own store."""
    path = str(tmp_path_factory.mktemp("settings"))
    fmt = QtCore.QSettings.Format
    for form in (fmt.NativeFormat, fmt.IniFormat):
        for scope in (QtCore.QSettings.Scope.UserScope, QtCore.QSettings.Scope.SystemScope):
            QtCore.QSettings.setPath(form, scope, path)
    yield path
