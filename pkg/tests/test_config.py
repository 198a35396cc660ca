import logging
import threading

import pytest

from PyQt6 import QtCore

import config
from config import APP_NAME, APP_ORG, read_config_file, resolve_setting
from core.workers import LogQueue, run_replicas


class FakeSettings:
    def __init__(self, values=None):
        self.values = values or {}

    def value(self, key, default=None):
        return self.values.get(key, default)


@pytest.fixture
def stored(monkeypatch):
    settings = FakeSettings()
    monkeypatch.setattr(config, "_settings", lambda: settings)
    return settings.values


def test_read_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text('# comment\n\nSeed = 5\nnoise-scale="0.5"\nbad line\n', encoding="utf-8")
    assert read_config_file(str(path)) == {"seed": "5", "noise_scale": "0.5"}
    assert read_config_file(None) == {}


class TestResolveSetting:
    def test_flag_wins(self, stored, monkeypatch):
        stored["seed"] = "3"
        monkeypatch.setenv("STICKYLDP_SEED", "4")
        assert resolve_setting("seed", 1, {"seed": "2"}, 0, int) == 1

    def test_file_beats_stored_and_env(self, stored, monkeypatch):
        stored["seed"] = "3"
        monkeypatch.setenv("STICKYLDP_SEED", "4")
        assert resolve_setting("seed", None, {"seed": "2"}, 0, int) == 2

    def test_stored_beats_env(self, stored, monkeypatch):
        stored["seed"] = "3"
        monkeypatch.setenv("STICKYLDP_SEED", "4")
        assert resolve_setting("seed", None, {}, 0, int) == 3

    def test_env_then_default(self, stored, monkeypatch):
        assert resolve_setting("seed", None, {}, 0, int) == 0
        monkeypatch.setenv("STICKYLDP_SEED", "4")
        assert resolve_setting("seed", None, {}, 0, int) == 4

    def test_reads_isolated_store(self, _isolated_settings, monkeypatch):
        store = QtCore.QSettings(APP_NAME, APP_ORG)
        store.setValue("seed", "6")
        store.sync()
        assert store.fileName().startswith(_isolated_settings)
        monkeypatch.setenv("STICKYLDP_SEED", "4")
        assert resolve_setting("seed", None, {}, 0, int) == 6

    def test_weak_truncation_is_at_least_one(self, stored):
        stored["weak_truncation"] = "0"
        assert config.get_configured_weak_truncation() == 1

    def test_unknown_template_falls_back(self, stored):
        stored["report_template"] = "Glossy"
        assert config.get_configured_report_template() is config.REPORT_TEMPLATES["Normal"]


class TestRunReplicas:
    @pytest.mark.parametrize("workers", [1, 3])
    def test_results_keep_task_order(self, workers):
        tasks = [(lambda k=k: k * k) for k in range(6)]
        assert run_replicas(tasks, workers=workers) == [0, 1, 4, 9, 16, 25]

    def test_empty(self):
        assert run_replicas([], workers=2) == []

    @pytest.mark.parametrize("workers", [1, 2])
    def test_first_error_is_raised(self, workers):
        def boom():
            raise RuntimeError("replica failed")

        with pytest.raises(RuntimeError, match="replica failed"):
            run_replicas([lambda: 1, boom, lambda: 3], workers=workers)

    def test_cancelled_tasks_yield_none(self):
        cancel = threading.Event()
        cancel.set()
        assert run_replicas([lambda: 1, lambda: 2], workers=1, cancel_event=cancel) == [None, None]

    def test_progress_reaches_queue(self):
        seen = []
        queue = LogQueue(logging.getLogger("test"), progress=seen.append)
        run_replicas([lambda: 1, lambda: 2], workers=1, queue=queue)
        assert seen == [50, 100]


def test_log_queue_forwards_messages(caplog):
    queue = LogQueue(logging.getLogger("test.queue"))
    with caplog.at_level(logging.INFO, logger="test.queue"):
        queue.put(("log", "hello"))
        queue.put(("done", "3/3 replicas"))
        queue.put(("progress", "not a number"))
        queue.put(None)
    assert "hello" in caplog.text
    assert "done: 3/3 replicas" in caplog.text
