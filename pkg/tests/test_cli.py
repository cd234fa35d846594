"""End-to-end command line: synth -> train -> predict -> evaluate -> explain."""

from __future__ import annotations

import csv
import json
import os

import pytest

from groupcast.cli import main

PREDICTION_HEADER = (
    "group_id,n_members_end_experience,member_months_experience,"
    "true_allowed_experience,predicted_allowed_projection,predicted_pmpm,"
    "predicted_trend,recommendation,baseline_pmpm,baseline_trend"
)

MODEL_ARTIFACTS = {
    "catalog.csv", "group_model.json", "member_model.json", "pipeline.json",
    "qa_fields.csv", "reconcile_report.csv", "rejects_claims.csv",
    "rejects_eligibility.csv", "rejects_labs.csv", "sweep_report.json",
    "train_summary.json",
}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One full command chain over a 20-group book."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.cfg"
    cfg_path.write_text(
        "# small-book settings\n"
        "pipeline.min_group_rows = 10\n"
        "member.num_trees = 120\n"
        "group.min_data_in_leaf = 3\n"
    )
    book = str(root / "book")
    model = str(root / "model")
    pred = str(root / "pred")
    evaldir = str(root / "eval")
    explain = str(root / "explain.csv")

    assert main(["synth", "--out", book, "--seed", "21", "--n-groups", "20"]) == 0
    data = [
        "--claims", f"{book}/claims.csv",
        "--eligibility", f"{book}/eligibility.csv",
        "--labs", f"{book}/labs.csv",
    ]
    window = ["--renewal", "2017-01-01"]
    assert main(["train", "--config", str(cfg_path), *data, *window,
                 "--out", model]) == 0
    assert main(["predict", *data, *window, "--model", model, "--out", pred]) == 0
    assert main(["evaluate", *data, *window,
                 "--predictions", f"{pred}/predictions.csv", "--out", evaldir]) == 0
    assert main(["explain", *data, *window, "--model", model, "--out", explain,
                 "--top", "3", "--groups", "G0001,G0002"]) == 0
    return {"book": book, "model": model, "pred": pred, "eval": evaldir,
            "explain": explain, "cfg": str(cfg_path), "data": data,
            "window": window}


def test_synth_artifacts(cli_run):
    names = set(os.listdir(cli_run["book"]))
    assert names == {"claims.csv", "eligibility.csv", "labs.csv", "manifest.json"}
    with open(f"{cli_run['book']}/manifest.json") as fh:
        manifest = json.load(fh)
    assert manifest["n_groups"] == 20
    assert manifest["seed"] == 21


def test_train_artifacts(cli_run):
    assert set(os.listdir(cli_run["model"])) == MODEL_ARTIFACTS
    with open(f"{cli_run['model']}/train_summary.json") as fh:
        summary = json.load(fh)
    assert set(summary) == {"group_model", "group_rows", "split_counts",
                            "sweep", "target_dropped", "target_rows"}
    assert summary["split_counts"] == {"train": 14, "test": 4, "evaluate": 2}
    with open(f"{cli_run['model']}/sweep_report.json") as fh:
        sweep = json.load(fh)
    assert set(sweep) == {"best_mse", "chosen_threshold", "rows"}
    reconcile_rows = read_rows(f"{cli_run['model']}/reconcile_report.csv")
    assert all(row["ok"] == "1" for row in reconcile_rows)


def test_predict_artifacts(cli_run):
    with open(f"{cli_run['pred']}/predictions.csv") as fh:
        header = fh.readline().strip()
    assert header == PREDICTION_HEADER
    rows = read_rows(f"{cli_run['pred']}/predictions.csv")
    assert len(rows) == 20
    for row in rows:
        assert row["recommendation"] in ("green", "yellow_red")
        pmpm = float(row["predicted_pmpm"])
        total = float(row["predicted_allowed_projection"])
        assert total == pytest.approx(pmpm * 12.0 * int(row["n_members_end_experience"]))
    assert read_rows(f"{cli_run['pred']}/skips.csv") == []


def test_evaluate_artifacts(cli_run):
    with open(f"{cli_run['eval']}/report.json") as fh:
        report = json.load(fh)
    assert set(report) == {
        "concessions", "gini", "gini_degenerate", "gini_normalized",
        "gini_oracle", "lift", "n_groups", "normalized_mae", "notes", "r_squared",
    }
    assert report["n_groups"] == 20
    assert [c["level"] for c in report["concessions"]] == [0.05, 0.10]
    lift_rows = read_rows(f"{cli_run['eval']}/lift.csv")
    assert len(lift_rows) == 10
    assert list(lift_rows[0]) == ["decile_index", "ae_model", "ae_oracle"]


def test_evaluate_external_baseline(cli_run, tmp_path):
    # quote files carry pmpm only; the trend falls out of experience pmpm
    preds = read_rows(f"{cli_run['pred']}/predictions.csv")
    quotes = tmp_path / "quotes.csv"
    with open(quotes, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_id", "baseline_pmpm"])
        for row in preds:
            writer.writerow([row["group_id"], 400.0])
    out = str(tmp_path / "eval_ext")
    assert main(["evaluate", *cli_run["data"], *cli_run["window"],
                 "--predictions", f"{cli_run['pred']}/predictions.csv",
                 "--baseline", str(quotes), "--out", out]) == 0
    with open(f"{out}/report.json") as fh:
        report = json.load(fh)
    assert report["n_groups"] == 20
    # flat quotes change every expected-paid total, so the lift table moves
    with open(f"{cli_run['eval']}/report.json") as fh:
        original = json.load(fh)
    assert report["lift"]["global_ae"] != original["lift"]["global_ae"]

    headless = tmp_path / "bad.csv"
    headless.write_text("group_id,quote\nG0001,400.0\n")
    assert main(["evaluate", *cli_run["data"], *cli_run["window"],
                 "--predictions", f"{cli_run['pred']}/predictions.csv",
                 "--baseline", str(headless), "--out", out]) == 2


def test_explain_artifacts(cli_run):
    rows = read_rows(cli_run["explain"])
    assert {row["group_id"] for row in rows} == {"G0001", "G0002"}
    assert list(rows[0]) == ["group_id", "feature_name", "pmpm_dollars"]
    for gid in ("G0001", "G0002"):
        assert 0 < sum(1 for r in rows if r["group_id"] == gid) <= 3


def test_synth_set_override_equals_flag(tmp_path):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    assert main(["synth", "--out", a, "--seed", "3", "--n-groups", "4"]) == 0
    assert main(["synth", "--out", b, "--set", "synth.seed=3",
                 "--set", "synth.n_groups=4"]) == 0
    for name in ("claims.csv", "eligibility.csv", "labs.csv", "manifest.json"):
        with open(f"{a}/{name}", "rb") as fa, open(f"{b}/{name}", "rb") as fb:
            assert fa.read() == fb.read()


def test_exit_codes_on_bad_invocations(cli_run, tmp_path, capsys):
    data, window = cli_run["data"], cli_run["window"]
    # no renewal date anywhere
    assert main(["train", *data, "--out", str(tmp_path / "m")]) == 2
    assert "renewal" in capsys.readouterr().err
    # model directory does not exist
    assert main(["predict", *data, *window,
                 "--model", str(tmp_path / "nope"), "--out", str(tmp_path / "p")]) == 2
    # bad config value
    assert main(["synth", "--out", str(tmp_path / "s"),
                 "--set", "synth.n_groups=zero"]) == 2
    # bad date
    assert main(["train", *data, "--renewal", "not-a-date",
                 "--out", str(tmp_path / "m2")]) == 2


def test_evaluate_small_book_needs_quintiles(cli_run, tmp_path):
    pred_path = f"{cli_run['pred']}/predictions.csv"
    with open(pred_path) as fh:
        lines = fh.read().splitlines()
    small = tmp_path / "small.csv"
    small.write_text("\n".join(lines[:8]) + "\n")  # header + 7 groups
    out = str(tmp_path / "eval")
    assert main(["evaluate", *cli_run["data"], *cli_run["window"],
                 "--predictions", str(small), "--out", out]) == 2
    assert main(["evaluate", *cli_run["data"], *cli_run["window"],
                 "--predictions", str(small), "--out", out, "--quintiles"]) == 0
    with open(f"{out}/report.json") as fh:
        assert len(json.load(fh)["lift"]["model"]) == 5
