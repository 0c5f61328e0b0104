import csv
import io
import json

import pytest

from kdsteal import pipeline
from kdsteal.config import config_from_dict
from kdsteal.data import SyntheticSpec, gen_dataset, save_dataset_pair
from kdsteal.errors import NumericError
from kdsteal.pipeline import (ExperimentReport, config_from_report, emit_report, load_report,
                              report_csv, report_json, run_pipeline, strip_timing)

TINY = {
    "dataset": {"n_classes": 3, "dim": 4, "train_per_class": 40, "test_per_class": 20, "modes": 2},
    "teacher_dims": [4, 12, 3],
    "student_dims": [4, 6, 3],
    "teacher_budget": {"epochs": 3, "learning_rate": 0.01, "batch_size": 32},
    "student_budget": {"epochs": 2, "learning_rate": 0.01, "batch_size": 32},
    "chain": {"k": 3, "steps": [{"omega": 0.01}]},
    "data_fractions": [0.5],
    "seeds": [0, 1],
}


def tiny(**over):
    return config_from_dict({**TINY, **over})


@pytest.fixture(scope="module")
def tiny_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    return run_pipeline(tiny(), out), out


def test_report_contains_every_arm(tiny_report):
    report, _ = tiny_report
    names = report.arm_names()
    for arm in ("vanilla", "normal_kd", "nasty_kd", "htc", "scm", "htc_vs_s2", "kd_vs_s2",
                "htc_vs_nasty_es", "kd_vs_nasty_es", "htc_frac0.5", "nasty_kd_frac0.5",
                "htc_no_label", "nasty_kd_no_label"):
        assert arm in names
    for run in report.runs:
        assert all(a.status in ("ok", "skipped") for a in run.arms)
        assert {"teacher", "nasty", "s1", "s2", "s3"} <= set(run.models)
        assert "kl_ensemble_teacher" in run.comparisons and "peaks_s2" in run.comparisons
        assert "defense_nasty_vs_kd" in run.predicates
    assert report.median("vanilla") is not None
    assert set(report.summary["median_accuracy"]) == set(names)


def test_outputs_written(tiny_report):
    report, out = tiny_report
    assert (out / "report.json").exists() and (out / "report.csv").exists()
    assert (out / "seed_1" / "teacher.ckpt").exists() and (out / "seed_0" / "htc.ckpt").exists()
    assert load_report(out / "report.json").to_dict() == report.to_dict()


def test_csv_rows_equal_seeds_times_arms(tiny_report):
    report, _ = tiny_report
    rows = list(csv.reader(io.StringIO(report_csv(report))))
    assert tuple(rows[0]) == pipeline.CSV_COLUMNS
    assert len(rows) - 1 == len(report.seeds) * len(report.arm_names())


def test_json_roundtrip_structural(tiny_report):
    report, _ = tiny_report
    again = ExperimentReport.from_dict(json.loads(report_json(report)))
    assert again == report


def test_rerun_byte_identical_modulo_timing(tiny_report):
    report, _ = tiny_report
    again = run_pipeline(config_from_report(report))
    assert report_json(again, timing=False) == report_json(report, timing=False)
    assert again.run_id == report.run_id


def test_strip_timing_nulls_only_timing():
    doc = {"seconds": 3.2, "runs": [{"seconds": 1.0, "x": 2}], "wall_seconds": 5}
    assert strip_timing(doc) == {"seconds": None, "runs": [{"seconds": None, "x": 2}], "wall_seconds": None}


def test_empty_attack_list_gives_baselines_only():
    report = run_pipeline(tiny(attacks=[], defense_indices=[], nasty_es=False, data_fractions=[],
                               no_label=False, seeds=[0]))
    assert report.arm_names() == ["vanilla", "normal_kd", "nasty_kd"]
    assert "s2" not in report.runs[0].models


def test_empty_report_csv_is_header_only(tmp_path):
    report = ExperimentReport(run_id="x", seeds=[], dataset={}, config={})
    path = emit_report(report, tmp_path / "r.csv")
    assert path.read_text() == ",".join(pipeline.CSV_COLUMNS) + "\n"


def test_k_sweep_records_each_length():
    report = run_pipeline(tiny(k_sweep=[2, 3, 4], attacks=["scm"], defense_indices=[], nasty_es=False,
                               data_fractions=[], no_label=False, seeds=[0]))
    run = report.runs[0]
    assert all(run.acc(f"scm_k{k}") is not None for k in (2, 3, 4))
    assert "s4" in run.models


def test_failing_arm_is_recorded_and_run_continues(monkeypatch):
    def boom(*args, **kwargs):
        raise NumericError("non-finite loss", layer=1)

    monkeypatch.setattr(pipeline, "attack_htc", boom)
    report = run_pipeline(tiny(seeds=[0], data_fractions=[], no_label=False))
    run = report.runs[0]
    htc = run.arm("htc")
    assert htc.status == "failed" and "layer 1" in htc.error
    assert run.acc("scm") is not None and run.acc("kd_vs_s2") is not None
    assert "htc_beats_nasty_kd" not in run.predicates


def test_dataset_path(tmp_path):
    train, test = gen_dataset(SyntheticSpec(**TINY["dataset"]))
    save_dataset_pair(tmp_path / "d.npz", train, test)
    report = run_pipeline(tiny(dataset_path=str(tmp_path / "d.npz"), seeds=[0], attacks=[],
                               defense_indices=[], nasty_es=False, data_fractions=[], no_label=False))
    assert report.dataset["path"] == str(tmp_path / "d.npz")
    assert report.runs[0].acc("vanilla") is not None
