import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.clusters import optimal_deviation
from core.errors import ValidationError
from core.kpz import invert_gradient, shock_fan
from document.export import RunManifest, export_shocks, export_trajectory, read_csv, write_csv
from document.pdf import save_run_report
from utils.helpers import atomic_write_text, fmt_float, load_json, parse_float_list, safe_color, write_json


def test_fmt_float_round_trips():
    for value in (0.1, 1 / 3, -2.5e-17, 6.02214076e23):
        assert float(fmt_float(value)) == value


@pytest.mark.parametrize("text, expected", [("0,1.5,-2", [0.0, 1.5, -2.0]), (" 3 ; 4 ", [3.0, 4.0]), ("7", [7.0])])
def test_parse_float_list(text, expected):
    assert parse_float_list(text) == expected


@pytest.mark.parametrize("text", ["", None, "1,x"])
def test_parse_float_list_rejects(text):
    with pytest.raises(ValidationError):
        parse_float_list(text, "x")


def test_atomic_write_leaves_no_temp_file(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    atomic_write_text(str(target), "first")
    atomic_write_text(str(target), "second")
    assert target.read_text(encoding="utf-8") == "second"
    assert os.listdir(target.parent) == ["out.txt"]


def test_json_helpers(tmp_path):
    path = tmp_path / "a.json"
    write_json(str(path), {"b": 1, "a": [0.1]})
    assert path.read_text(encoding="utf-8").index('"a"') < path.read_text(encoding="utf-8").index('"b"')
    assert load_json(str(path)) == {"a": [0.1], "b": 1}
    (tmp_path / "bad.json").write_text("{", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_json(str(tmp_path / "bad.json"))
    with pytest.raises(ValidationError):
        load_json(str(tmp_path / "missing.json"))


def test_csv_keeps_full_precision(tmp_path):
    path = str(tmp_path / "t.csv")
    write_csv(path, ["s", "x_1"], [[0.0, 1 / 3], [0.1, -2 / 7]])
    table = read_csv(path)
    assert table["x_1"].tolist() == [1 / 3, -2 / 7]
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == "s,x_1"


def test_trajectory_csv(tmp_path):
    dev, _ = optimal_deviation([-1.0, 1.0], [0.5, 0.5], 0.0, 10.0)
    path = str(tmp_path / "trajectory.csv")
    export_trajectory(path, dev)
    table = read_csv(path)
    assert_allclose(table["s"], [0.0, 4.0, 10.0])
    assert_allclose(table["x_1"], [-1.0, 0.0, 0.0], atol=1e-14)
    export_trajectory(path, dev, samples=11)
    assert read_csv(path)["s"].size == 11


def test_shocks_csv_contains_knots(tmp_path):
    x, m = [-1.0, 1.0], [3.0, 3.0]
    fan = shock_fan(1.0, x, invert_gradient(1.0, x, m))
    path = str(tmp_path / "shocks.csv")
    export_shocks(path, fan, samples=5)
    table = read_csv(path)
    assert np.any(np.isclose(table["s"], 2 / 3))
    assert set(table) == {"s", "shock_1", "shock_2"}


class TestManifest:
    def make(self, tmp_path):
        (tmp_path / "a.csv").write_text("s\n0\n", encoding="utf-8")
        (tmp_path / "b.json").write_text("{}\n", encoding="utf-8")
        manifest = RunManifest("optimal", {"x": [0.0]}, seeds=[{"replica": 0}])
        manifest.record(str(tmp_path), ["a.csv", "b.json"])
        return manifest

    def test_save_and_load(self, tmp_path):
        manifest = self.make(tmp_path)
        path = manifest.save(str(tmp_path))
        again = RunManifest.load(path)
        assert again == manifest
        assert json.loads(open(path, encoding="utf-8").read())["digests"].keys() == {"a.csv", "b.json"}

    def test_mismatches(self, tmp_path):
        manifest = self.make(tmp_path)
        assert manifest.mismatches(str(tmp_path)) == []
        (tmp_path / "a.csv").write_text("s\n1\n", encoding="utf-8")
        os.remove(tmp_path / "b.json")
        assert manifest.mismatches(str(tmp_path)) == ["a.csv", "b.json"]

    def test_malformed(self):
        with pytest.raises(ValidationError):
            RunManifest.from_json({"parameters": {}})


def test_pdf_report(tmp_path):
    path = str(tmp_path / "report.pdf")
    save_run_report(path, "shape", {"t": 1.0, "x": [0.0]}, {"i_kpz": 2 / 3, "nested": {"ok": True}},
                    files=["shape.json"], template_name="Compact")
    with open(path, "rb") as f:
        assert f.read(4) == b"%PDF"


@pytest.mark.parametrize("value, expected", [
    ("#DCE6F0", "0xdce6f0"),
    (None, "0x1f3a5f"),
    ("", "0x1f3a5f"),
    ("not a colour", "0x1f3a5f"),
    ("#GG0000", "0x1f3a5f"),
])
def test_safe_color(value, expected):
    assert safe_color(value).hexval() == expected
