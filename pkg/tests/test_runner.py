import json

import pytest

from bgiteach.config import parse_config
from bgiteach.runner import (CURVE_FIELDS, CURVES_SCHEMA, ResultsExistError, build_report, expand_axes,
                             read_curves, result_dir, run_experiment, run_matrix)

TINY = """
name = "tiny"
env = "dtb"
teacher = "pedagogical"
learner = "pragmatic"
demo_budget = 2
teacher_epochs = 60
epochs = 60
seeds = [0, 1]
[hyper]
eval_every = 30
teacher_eval_every = 30
eval_demos = 5
eval_rollouts = 5
"""


@pytest.fixture
def tiny():
    return parse_config(TINY)


def test_result_dir_uses_hash(tiny, monkeypatch, tmp_path):
    monkeypatch.setenv("BGITEACH_OUTPUT_ROOT", str(tmp_path))
    assert result_dir(tiny) == tmp_path / f"tiny-{tiny.config_hash()[:12]}"
    assert result_dir(tiny.with_updates(output_dir="/x/y")).as_posix() == "/x/y"


def test_run_writes_artifacts_and_refuses_overwrite(tiny, tmp_path):
    out = tmp_path / "run"
    summary = run_experiment(tiny, out=out)
    data = json.loads((out / "metrics.json").read_text())
    assert data["config_hash"] == tiny.config_hash()
    assert [s["seed"] for s in data["seeds"]] == [0, 1]
    for s in data["seeds"]:
        m = s["metrics"]
        assert m["gia_x_gra"] == pytest.approx(m["gia"] * m["gra"])
        for art in s["artifacts"]:
            assert (out / art).exists()
    rows = read_curves(out / "curves.csv")
    assert {(r["seed"], r["phase"], r["epoch"]) for r in rows} == {
        (s, p, e) for s in (0, 1) for p in (1, 2) for e in (30, 60)}
    assert (out / "curves.csv").read_text().splitlines()[:2] == [CURVES_SCHEMA, ",".join(CURVE_FIELDS)]
    assert summary["aggregate"]["gia"]["mean"] == pytest.approx(
        sum(s["metrics"]["gia"] for s in data["seeds"]) / 2)
    with pytest.raises(ResultsExistError):
        run_experiment(tiny, out=out)


def test_force_rerun_is_byte_identical_in_parallel(tiny, tmp_path):
    out = tmp_path / "run"
    run_experiment(tiny, out=out)
    first = (out / "curves.csv").read_bytes()
    snap = (out / "seed_1" / "learner.snapshot").read_bytes()
    run_experiment(tiny, force=True, workers=2, out=out)
    assert (out / "curves.csv").read_bytes() == first
    assert (out / "seed_1" / "learner.snapshot").read_bytes() == snap


def test_expand_axes(tiny):
    cells = expand_axes(tiny, {"teacher": ["naive", "pedagogical"], "demo_budget": [0, 2]})
    assert [(c.teacher, c.demo_budget) for c in cells] == [("naive", 0), ("naive", 2), ("pedagogical", 0),
                                                           ("pedagogical", 2)]
    with pytest.raises(ValueError):
        expand_axes(tiny, {"colour": ["red"]})


def test_matrix_and_report(tiny, tmp_path):
    rows = run_matrix(tiny, {"learner": ["literal", "pragmatic"]}, tmp_path / "m")
    assert len(rows) == 2 and not any(r.get("failures") for r in rows)
    for name in ("table.txt", "table.csv", "comparison.csv"):
        assert (tmp_path / "m" / name).exists()
    report = build_report(tmp_path / "m")
    assert report.n_results == 2 and report.problems == []
    assert "[dtb]" in report.text


def test_report_flags_inconsistent_and_missing_files(tiny, tmp_path):
    out = tmp_path / "r" / "one"
    run_experiment(tiny, out=out)
    data = json.loads((out / "metrics.json").read_text())
    data["seeds"][0]["metrics"]["gia_x_gra"] += 0.5
    (out / "metrics.json").write_text(json.dumps(data))
    (out / "curves.csv").unlink()
    report = build_report(tmp_path / "r")
    assert len(report.problems) == 2
    assert build_report(tmp_path / "empty").text == "no results"


@pytest.mark.acceptance
def test_dtb_grid_finishes_within_five_minutes(configs_dir, tmp_path):
    import time

    from bgiteach.config import load_config

    template = load_config(configs_dir / "dtb_pedagogical_pragmatic.toml")
    axes = {"teacher": ["naive", "pedagogical"], "learner": ["literal", "pragmatic"], "demo_budget": [4, 10, 20]}
    start = time.perf_counter()
    rows = run_matrix(template, axes, tmp_path / "grid")
    elapsed = time.perf_counter() - start
    assert len(rows) == 12 and not any(r.get("failures") for r in rows)
    assert elapsed < 300, f"grid took {elapsed:.0f}s"
    # pedagogical+pragmatic beats naive+literal at every budget
    prod = {(r["teacher"], r["learner"], r["demo_budget"]): r["gia_x_gra"]["mean"] for r in rows}
    for b in (4, 10, 20):
        assert prod["pedagogical", "pragmatic", b] > prod["naive", "literal", b]
