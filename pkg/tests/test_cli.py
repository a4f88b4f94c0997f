import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from gen import grid_point, random_ensemble, stump
from oracles import exact_radius, search_window, single_feature_radius
from treeverify import Ensemble, emit_native_json, parse_xgboost_json, verify_tree_linear
from treeverify.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_IO,
    EXIT_MODEL,
    EXIT_OK,
    RunConfig,
    main,
    report_without_metadata,
    run_batch,
)
from treeverify.formats import (
    DataFormatError,
    emit_importance_map,
    normalize_binary_labels,
    parse_libsvm,
    read_pgm,
)
from treeverify.verifier import VerifyConfig

DATA = Path(__file__).parent / "data"


# -- LIBSVM --------------------------------------------------------------------


def test_libsvm_line():
    ((label, x),) = parse_libsvm("1 1:0.5 3:0.2\n", 3)
    assert label == 1 and x.tolist() == [0.5, 0.0, 0.2]


def test_libsvm_empty_and_comments():
    assert parse_libsvm("", 3) == []
    assert len(parse_libsvm("# header\n\n-1 2:1  # trailing\n", 3)) == 1


@pytest.mark.parametrize(
    "text, message",
    [
        ("1 5:0.1", "line 1: feature index 5"),
        ("1 0:0.1", "line 1: feature index 0"),
        ("1 1:0.5\nx 1:0.1", "line 2: bad label"),
        ("1 1=0.5", "line 1: expected"),
        ("1 1:abc", "line 1: bad feature"),
    ],
)
def test_libsvm_errors(text, message):
    with pytest.raises(DataFormatError, match=message):
        parse_libsvm(text, 3)


def test_binary_label_normalization():
    assert normalize_binary_labels([0, 1, 1]) == [0, 1, 1]
    assert normalize_binary_labels([-1, 1]) == [0, 1]
    with pytest.raises(DataFormatError):
        normalize_binary_labels([2])


# -- PGM -----------------------------------------------------------------------


def test_pgm_all_saturated():
    img = emit_importance_map([1.0] * 6, 3, 2)
    assert img.startswith(b"P5\n3 2\n255\n")
    assert read_pgm(img).tolist() == [[255] * 3] * 2


def test_pgm_zero_pixel():
    assert read_pgm(emit_importance_map([1.0, 0.0, 1.0, 1.0], 2, 2)).tolist() == [[255, 0], [255, 255]]


def test_pgm_rounding():
    assert read_pgm(emit_importance_map([1.0, 0.5, 0.25, 0.0], 2, 2)).ravel().tolist() == [255, 128, 64, 0]
    assert read_pgm(emit_importance_map([2.0, 1.0], 2, 1, domain_width=2.0)).ravel().tolist() == [255, 128]


def test_pgm_shape_mismatch():
    with pytest.raises(DataFormatError):
        emit_importance_map([1.0] * 5, 2, 2)


# -- batch runs ----------------------------------------------------------------


def write_model(tmp_path, e, name="model.json"):
    path = tmp_path / name
    path.write_bytes(emit_native_json(e))
    return str(path)


def write_data(tmp_path, X, labels, name="data.libsvm"):
    path = tmp_path / name
    lines = [f"{y} " + " ".join(f"{j + 1}:{float(v)!r}" for j, v in enumerate(x) if v != 0) for x, y in zip(X, labels)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_single_tree_mode(tmp_path):
    rng = np.random.default_rng(40)
    e = random_ensemble(rng, 1, 3, max_depth=4)
    X = [grid_point(rng, 3) for _ in range(3)]
    labels = [e.predict(x) for x in X]
    cfg = RunConfig(write_model(tmp_path, e), write_data(tmp_path, X, labels), model_format="native",
                    mode="single-tree")
    doc, _ = run_batch(cfg)
    for row, x in zip(doc["examples"], X):
        y0 = 1 if e.predict(x) == 1 else -1
        assert row["radius"] == verify_tree_linear(e.trees[0], x, y0)


def test_exact_mode_summary_matches_oracle(tmp_path):
    rng = np.random.default_rng(41)
    e = random_ensemble(rng, 4, 2, max_depth=3)
    X = [grid_point(rng, 2) for _ in range(8)]
    labels = [e.predict(x) for x in X]
    cfg = RunConfig(write_model(tmp_path, e), write_data(tmp_path, X, labels), model_format="native", mode="exact")
    doc, _ = run_batch(cfg)
    radii = [row["radius"] for row in doc["examples"]]
    for r, x in zip(radii, X):
        lo, hi = search_window(exact_radius(e, x), 1.0, 10)
        assert lo <= r <= hi
    assert doc["summary"]["mean_radius"] == pytest.approx(np.mean(radii))
    assert doc["summary"]["mean_radius_correct"] == pytest.approx(np.mean(radii))


def test_importance_csv(tmp_path):
    rng = np.random.default_rng(42)
    e = random_ensemble(rng, 2, 4, max_depth=2)
    X = [grid_point(rng, 4) for _ in range(3)]
    labels = [e.predict(x) for x in X]
    out = tmp_path / "imp.csv"
    code = main(["--model", write_model(tmp_path, e), "--format", "native", "--data", write_data(tmp_path, X, labels),
                 "--mode", "importance", "--out", str(out), "--out-format", "csv"])
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 3
    for row, x in zip(rows, X):
        for i in range(4):
            lo, hi = search_window(single_feature_radius(e, x, i), 1.0, 10)
            assert lo <= float(row[f"f{i}"]) <= hi


def test_importance_pgm_files(tmp_path):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0),), 4)
    data = write_data(tmp_path, [[0.3, 0.1, 0.1, 0.1]], [0])
    prefix = tmp_path / "map_"
    code = main(["--model", write_model(tmp_path, e), "--format", "native", "--data", data, "--mode", "importance",
                 "--image-shape", "2", "2", "--pgm", str(prefix), "--out", str(tmp_path / "r.json")])
    assert code == EXIT_OK
    px = read_pgm((tmp_path / "map_0.pgm").read_bytes())
    assert px.ravel().tolist()[1:] == [255, 255, 255]
    assert 50 <= px[0, 0] <= 51  # 255 * 0.2


def test_anchor_mode(tmp_path):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0), stump(1, 0.5, -0.25, 0.25)), 3)
    data = write_data(tmp_path, [[0.3, 0.3, 0.9]], [-1])
    out = tmp_path / "a.json"
    assert main(["--model", write_model(tmp_path, e), "--format", "native", "--data", data, "--mode", "anchor",
                 "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["examples"][0]["anchors"] == [0]
    assert doc["summary"]["mean_anchor_size"] == 1.0


def test_json_report_layout(tmp_path, capsys):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0),), 1)
    data = write_data(tmp_path, [[0.3], [0.7], [0.3]], [0, 1, 1])
    assert main(["--model", write_model(tmp_path, e), "--format", "native", "--data", data]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema_version"] == 1
    assert set(doc) == {"schema_version", "tool", "config", "model", "examples", "summary", "metadata"}
    s = doc["summary"]
    assert s["examples"] == 3 and s["correct"] == 2
    assert s["mean_radius"] == pytest.approx(s["mean_radius_correct"] * 2 / 3)
    acc = {p["eps"]: p["accuracy"] for p in s["verified_accuracy"]}
    assert acc[1.0] == 0.0 and acc[0.125] == pytest.approx(2 / 3)
    assert "wall_time_mean" in doc["metadata"]


def test_csv_verify_output(tmp_path, capsys):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0),), 1)
    data = write_data(tmp_path, [[0.3]], [0])
    assert main(["--model", write_model(tmp_path, e), "--format", "native", "--data", data, "--out-format", "csv"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["example_id"] == "0" and 0.19 < float(rows[0]["radius"]) < 0.2


def test_num_examples_limit(tmp_path):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0),), 1)
    data = write_data(tmp_path, [[0.1 * i] for i in range(6)], [0] * 6)
    doc, _ = run_batch(RunConfig(write_model(tmp_path, e), data, model_format="native", num_examples=4))
    assert len(doc["examples"]) == 4


def test_multiclass_run(tmp_path):
    trees = (stump(0, 0.5, 1.0, 1.0), stump(0, 0.4, 0.0, 2.0), stump(1, 0.6, 0.0, 2.0))
    e = Ensemble(trees, 2, num_classes=3, tree_class=(0, 1, 2))
    data = write_data(tmp_path, [[0.3, 0.3]], [0])
    doc, _ = run_batch(RunConfig(write_model(tmp_path, e), data, model_format="native"))
    assert doc["examples"][0]["target"] == 1
    bad = write_data(tmp_path, [[0.3, 0.3]], [3], name="bad.libsvm")
    assert main(["--model", write_model(tmp_path, e), "--format", "native", "--data", bad]) == EXIT_DATA


# -- exit codes ----------------------------------------------------------------


def test_exit_codes(tmp_path, capsys):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0), stump(0, 0.2, 1.0, 0.0)), 1)
    model = write_model(tmp_path, e)
    data = write_data(tmp_path, [[0.3]], [0])
    bad_model = tmp_path / "bad.json"
    bad_model.write_text("{")
    bad_data = tmp_path / "bad.libsvm"
    bad_data.write_text("1 7:1\n")
    base = ["--format", "native"]
    assert main(base + ["--model", str(bad_model), "--data", data]) == EXIT_MODEL
    assert main(base + ["--model", model, "--data", str(bad_data)]) == EXIT_DATA
    assert main(base + ["--model", str(tmp_path / "missing.json"), "--data", data]) == EXIT_IO
    assert main(base + ["--model", model, "--data", data, "--mode", "single-tree"]) == EXIT_CONFIG
    assert main(base + ["--model", model, "--data", data, "--T", "1"]) == EXIT_CONFIG
    assert main(base + ["--model", model, "--data", data, "--image-shape", "2", "2"]) == EXIT_CONFIG
    assert main(base + ["--model", model, "--data", data, "--out", str(tmp_path / "no" / "dir.json")]) == EXIT_IO
    err = capsys.readouterr().err
    assert err.count("treeverify: error:") == 7
    with pytest.raises(SystemExit) as exc:
        main(["--model", model])
    assert exc.value.code == 2


def test_thread_env_override(tmp_path, monkeypatch):
    e = Ensemble((stump(0, 0.5, -1.0, 1.0),), 1)
    out = tmp_path / "r.json"
    args = ["--model", write_model(tmp_path, e), "--format", "native", "--data", write_data(tmp_path, [[0.3]], [0]),
            "--threads", "2", "--out", str(out)]
    monkeypatch.setenv("TREEVERIFY_THREADS", "3")
    assert main(args) == EXIT_OK
    assert json.loads(out.read_text())["metadata"]["threads"] == 3
    monkeypatch.setenv("TREEVERIFY_THREADS", "lots")
    assert main(args) == EXIT_CONFIG


# -- determinism and formats ------------------------------------------------------


def fixture_cfg(**kw):
    base = dict(model_path=str(DATA / "breast_cancer_xgb.json"), data_path=str(DATA / "breast_cancer.libsvm"),
                num_examples=20, exact_thresholds=True, verify=VerifyConfig(L=2))
    base.update(kw)
    return RunConfig(**base)


def test_reports_deterministic_across_runs_and_threads():
    a = report_without_metadata(run_batch(fixture_cfg())[0])
    b = report_without_metadata(run_batch(fixture_cfg())[0])
    c = report_without_metadata(run_batch(fixture_cfg(threads=4))[0])
    assert a == b == c


def test_native_round_trip_gives_identical_radii(tmp_path):
    e = parse_xgboost_json((DATA / "breast_cancer_xgb.json").read_bytes(), dim=9, exact_thresholds=True)
    native = write_model(tmp_path, e)
    xgb_doc = run_batch(fixture_cfg())[0]
    nat_doc = run_batch(fixture_cfg(model_path=native, model_format="native"))[0]
    assert [r["radius"] for r in xgb_doc["examples"]] == [r["radius"] for r in nat_doc["examples"]]
