import json
import math

import pytest

from ssta.errors import FormatError
from ssta.manifest import SCHEMA, aggregate, build_manifest, load_manifest, write_manifest


def record(success, iterations, **metrics):
    base = dict.fromkeys(["mse", "psnr", "ssim", "uqi", "scc", "vifp"])
    base.update(metrics)
    return {"success": success, "iterations": iterations, "metrics": base}


def test_aggregate_uses_fooled_records_only():
    recs = [record(True, 10, mse=2.0, ssim=0.9), record(True, 30, mse=4.0, ssim=None), record(False, 500, mse=100.0, ssim=0.1)]
    agg = aggregate(recs)
    assert agg["total"] == 3 and agg["successes"] == 2
    assert agg["asr"] == 2 / 3
    assert agg["mean_iterations"] == 20.0
    assert agg["metrics"]["mse"] == 3.0
    assert agg["metrics"]["ssim"] == 0.9  # None left out
    assert agg["metrics"]["vifp"] is None


def test_aggregate_of_nothing():
    agg = aggregate([])
    assert agg["asr"] is None and agg["total"] == 0


def test_written_manifest_round_trips(tmp_path):
    doc = build_manifest("attack", {"lr": 0.05}, [record(True, 3, mse=1.5)], extra={"outputs": ["a.png"]})
    path = tmp_path / "m.json"
    write_manifest(doc, path)
    assert load_manifest(path) == doc
    assert doc["schema"] == SCHEMA
    text = path.read_text()
    write_manifest(json.loads(text), path)
    assert path.read_text() == text


def test_manifest_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        write_manifest(build_manifest("x", {"v": math.nan}), tmp_path / "m.json")


def test_load_rejects_inconsistent_files(tmp_path):
    path = tmp_path / "m.json"
    doc = build_manifest("attack", {}, [record(True, 3, mse=1.5), record(False, 9)])
    doc["aggregate"]["asr"] = 1.0
    write_manifest(doc, path)
    with pytest.raises(FormatError, match="aggregate"):
        load_manifest(path)

    doc = build_manifest("attack-batch", {}, [record(True, 3)])
    doc["baselines"] = {"pgd": {"records": [record(False, 40)], "aggregate": aggregate([record(True, 40)])}}
    write_manifest(doc, path)
    with pytest.raises(FormatError, match="pgd"):
        load_manifest(path)

    path.write_text('{"schema": "other/2"}')
    with pytest.raises(FormatError, match="schema"):
        load_manifest(path)
    path.write_text("{not json")
    with pytest.raises(FormatError, match="JSON"):
        load_manifest(path)
