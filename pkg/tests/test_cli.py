"""End-to-end command-line behavior: exit codes, stdout shapes, reruns."""

import csv
import json
from pathlib import Path

import pytest

from fairrisk.cli import main
from fairrisk.records import shipped_code_list_dir, write_records

from conftest import encounters, make_patient


def run_cli(argv, capsys):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as e:
        code = e.code
    captured = capsys.readouterr()
    return code, captured.out, captured.err


GENERATE_CONFIG = {
    "n_patients": 300,
    "concept_vocab_size": 64,
    "base_incidence": 0.25,
    "mean_events_per_patient": 8.0,
    "seed": 17,
}

TRAIN_CONFIG = {
    "classifier_hidden": [8],
    "discriminator_hidden": [8],
    "epochs": 2,
    "batches_per_epoch": 8,
    "batch_size": 32,
    "eq_auc_floor": 0.0,
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """generate -> prepare once; most tests build on the prepared dir."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "cohort.json"
    config.write_text(json.dumps(GENERATE_CONFIG), encoding="utf-8")
    records = root / "records.jsonl"
    prep = root / "prep"
    train_cfg = root / "train.json"
    train_cfg.write_text(json.dumps(TRAIN_CONFIG), encoding="utf-8")

    assert main(["generate", str(config), str(records)]) == 0
    assert main(["prepare", str(records), str(prep)]) == 0

    run_dir = root / "run_std"
    assert main(
        ["train", str(prep), str(run_dir), "--config", str(train_cfg)]
    ) == 0
    return {
        "root": root,
        "config": config,
        "records": records,
        "prep": prep,
        "train_cfg": train_cfg,
        "checkpoint": run_dir / "checkpoint.bin",
        "run_dir": run_dir,
    }


class TestGenerate:
    def test_summary_table_layout(self, pipeline, capsys, tmp_path):
        code, out, _ = run_cli(
            ["generate", pipeline["config"], tmp_path / "r.jsonl"], capsys
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].split() == ["group", "count", "incidence", "followup_y"]
        labels = [ln.split()[0] for ln in lines[1:]]
        assert labels == [
            "Asian", "Black", "Hispanic", "Other", "Unknown", "White",
            "Female", "Male", "40-55", "55-65", "65-75", "75+", "All",
        ]
        counts = {ln.split()[0]: int(ln.split()[1]) for ln in lines[1:]}
        assert counts["All"] == 300
        assert counts["Female"] + counts["Male"] == 300

    def test_seed_flag_makes_identical_files(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"n_patients": 40, "concept_vocab_size": 32}))
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run_cli(["generate", config, a, "--seed", 5], capsys)[0] == 0
        assert run_cli(["generate", config, b, "--seed", 5], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_flag_overrides_config(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(
            json.dumps({"n_patients": 40, "concept_vocab_size": 32, "seed": 1})
        )
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run_cli(["generate", config, a, "--seed", 2], capsys)
        run_cli(["generate", config, b], capsys)
        assert a.read_bytes() != b.read_bytes()

    def test_missing_config_exits_3(self, capsys, tmp_path):
        missing = tmp_path / "nope.json"
        code, _, err = run_cli(["generate", missing, tmp_path / "r.jsonl"], capsys)
        assert code == 3
        assert str(missing) in err

    def test_unknown_key_exits_2(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"n_patients": 10, "n_sites": 3}))
        code, _, err = run_cli(["generate", config, tmp_path / "r.jsonl"], capsys)
        assert code == 2
        assert "n_sites" in err

    def test_invalid_json_exits_2(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text("{not json")
        code, _, _ = run_cli(["generate", config, tmp_path / "r.jsonl"], capsys)
        assert code == 2

    def test_bad_proportions_exit_2(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(
            json.dumps({"n_patients": 10, "gender_proportions": [0.7, 0.7]})
        )
        code, _, err = run_cli(["generate", config, tmp_path / "r.jsonl"], capsys)
        assert code == 2
        assert "gender_proportions" in err


class TestPrepare:
    def test_funnel_stdout(self, pipeline, capsys, tmp_path):
        code, out, err = run_cli(
            ["prepare", pipeline["records"], tmp_path / "prep"], capsys
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("records read")
        assert int(lines[0].split()[-1]) == 300
        assert lines[1].startswith("with eligible index")
        assert lines[2].startswith("after exclusions")
        assert lines[3].startswith("positives")
        assert lines[4].startswith("splits")
        assert "train=" in lines[4] and "val=" in lines[4] and "test=" in lines[4]
        assert err == ""

    def test_empty_cohort_warns_but_exits_0(self, capsys, tmp_path):
        # Every patient carries a pre-index CVD diagnosis, so the funnel
        # drains completely at the exclusion stage.
        records = []
        for i in range(4):
            records.append(
                make_patient(
                    pid=f"S{i}",
                    events=[("2002-01-01", "Diagnosis", "410")]
                    + encounters("2005-01-01", "2006-02-01", "2007-06-01"),
                )
            )
        path = tmp_path / "records.jsonl"
        write_records(records, path)
        code, out, err = run_cli(["prepare", path, tmp_path / "prep"], capsys)
        assert code == 0
        assert "after exclusions     0" in out
        assert "warning" in err and "empty" in err

    def test_explicit_code_lists_match_default(self, pipeline, capsys, tmp_path):
        code, out, _ = run_cli(
            [
                "prepare", pipeline["records"], tmp_path / "prep",
                "--code-lists", shipped_code_list_dir(),
            ],
            capsys,
        )
        assert code == 0
        default_out = run_cli(
            ["prepare", pipeline["records"], tmp_path / "prep2"], capsys
        )[1]
        assert out == default_out

    def test_missing_records_exits_3(self, capsys, tmp_path):
        code, _, _ = run_cli(
            ["prepare", tmp_path / "missing.jsonl", tmp_path / "prep"], capsys
        )
        assert code == 3


class TestTrain:
    def test_standard_arm_outputs(self, pipeline, capsys, tmp_path):
        out_dir = tmp_path / "run"
        code, out, _ = run_cli(
            [
                "train", pipeline["prep"], out_dir,
                "--config", pipeline["train_cfg"],
            ],
            capsys,
        )
        assert code == 0
        assert (out_dir / "checkpoint.bin").exists()
        assert (out_dir / "manifest.json").exists()
        assert (out_dir / "val_report" / "report.txt").exists()
        assert "arm                  standard" in out
        assert "selected epoch" in out
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 2

    def test_eq_arm_runs(self, pipeline, capsys, tmp_path):
        code, out, _ = run_cli(
            [
                "train", pipeline["prep"], tmp_path / "run",
                "--config", pipeline["train_cfg"],
                "--sensitive-attr", "gender",
            ],
            capsys,
        )
        assert code == 0
        assert "arm                  eq_gender" in out

    def test_lambda_zero_with_attribute_exits_2(self, pipeline, capsys, tmp_path):
        code, _, err = run_cli(
            [
                "train", pipeline["prep"], tmp_path / "run",
                "--config", pipeline["train_cfg"],
                "--sensitive-attr", "age", "--lambda", 0,
            ],
            capsys,
        )
        assert code == 2
        assert "--lambda" in err

    def test_selection_failure_exits_4(self, pipeline, capsys, tmp_path):
        cfg = dict(TRAIN_CONFIG, eq_auc_floor=1.0)
        cfg_path = tmp_path / "hard.json"
        cfg_path.write_text(json.dumps(cfg))
        code, _, err = run_cli(
            [
                "train", pipeline["prep"], tmp_path / "run",
                "--config", cfg_path, "--sensitive-attr", "gender",
            ],
            capsys,
        )
        assert code == 4
        assert "selection failed" in err
        assert "best validation AUC" in err

    def test_unknown_config_key_exits_2(self, pipeline, capsys, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps(dict(TRAIN_CONFIG, optimizer="sgd")))
        code, _, err = run_cli(
            ["train", pipeline["prep"], tmp_path / "run", "--config", cfg_path],
            capsys,
        )
        assert code == 2
        assert "optimizer" in err

    def test_flag_overrides_config_attribute(self, pipeline, capsys, tmp_path):
        cfg_path = tmp_path / "eq.json"
        cfg_path.write_text(
            json.dumps(dict(TRAIN_CONFIG, sensitive_attribute="gender"))
        )
        code, out, _ = run_cli(
            [
                "train", pipeline["prep"], tmp_path / "run",
                "--config", cfg_path, "--sensitive-attr", "none",
            ],
            capsys,
        )
        assert code == 0
        assert "arm                  standard" in out

    def test_reruns_are_byte_identical(self, pipeline, capsys, tmp_path):
        dirs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            code, _, _ = run_cli(
                [
                    "train", pipeline["prep"], out_dir,
                    "--config", pipeline["train_cfg"], "--seed", 3,
                ],
                capsys,
            )
            assert code == 0
            dirs.append(out_dir)
        for rel in ("checkpoint.bin", "manifest.json", "val_report/report.txt"):
            assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel


class TestEvaluate:
    def test_report_files_and_stdout(self, pipeline, capsys, tmp_path):
        out_dir = tmp_path / "report"
        code, out, _ = run_cli(
            ["evaluate", pipeline["checkpoint"], pipeline["prep"], out_dir],
            capsys,
        )
        assert code == 0
        names = {p.name for p in out_dir.iterdir()}
        assert {
            "report.txt", "summary.csv", "group_metrics.csv",
            "attribute_metrics.csv", "histogram_race.csv",
            "histogram_gender.csv", "histogram_age.csv",
        } <= names
        assert out == (out_dir / "report.txt").read_text()

    def test_rerun_is_byte_identical(self, pipeline, capsys, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out_dir = tmp_path / name
            code, out, _ = run_cli(
                ["evaluate", pipeline["checkpoint"], pipeline["prep"], out_dir],
                capsys,
            )
            assert code == 0
            outs.append((out_dir, out))
        assert outs[0][1] == outs[1][1]
        for p in sorted(outs[0][0].iterdir()):
            assert p.read_bytes() == (outs[1][0] / p.name).read_bytes(), p.name

    def test_threshold_recomputes_confusion_not_emd(self, pipeline, capsys, tmp_path):
        attr_rows, summaries = {}, {}
        for name, threshold in (("lo", "0.075"), ("hi", "0.99")):
            out_dir = tmp_path / name
            code, _, _ = run_cli(
                [
                    "evaluate", pipeline["checkpoint"], pipeline["prep"],
                    out_dir, "--threshold", threshold,
                ],
                capsys,
            )
            assert code == 0
            with open(out_dir / "attribute_metrics.csv") as fh:
                attr_rows[name] = list(csv.DictReader(fh))
            with open(out_dir / "summary.csv") as fh:
                summaries[name] = next(csv.DictReader(fh))
        # Score distributions ignore the threshold entirely.
        for lo, hi in zip(attr_rows["lo"], attr_rows["hi"]):
            assert lo["emd_y0"] == hi["emd_y0"]
            assert lo["emd_y1"] == hi["emd_y1"]
            assert lo["alignment"] == hi["alignment"]
        # Confusion counts do not: a higher cut flags fewer positives.
        assert summaries["lo"]["threshold"] != summaries["hi"]["threshold"]
        assert float(summaries["lo"]["positive_rate"]) > float(
            summaries["hi"]["positive_rate"]
        )
        assert summaries["lo"]["auc"] == summaries["hi"]["auc"]

    def test_validation_split_selectable(self, pipeline, capsys, tmp_path):
        code, _, _ = run_cli(
            [
                "evaluate", pipeline["checkpoint"], pipeline["prep"],
                tmp_path / "r", "--split", "val",
            ],
            capsys,
        )
        assert code == 0

    def test_checkpoint_feature_mismatch_exits_2(self, pipeline, capsys, tmp_path):
        # A dataset prepared from a different vocabulary has a different
        # column count, which the checkpoint header must reject.
        config = tmp_path / "c.json"
        config.write_text(
            json.dumps(dict(GENERATE_CONFIG, concept_vocab_size=128, n_patients=120))
        )
        records = tmp_path / "r.jsonl"
        prep2 = tmp_path / "prep2"
        assert run_cli(["generate", config, records], capsys)[0] == 0
        assert run_cli(["prepare", records, prep2], capsys)[0] == 0
        code, _, err = run_cli(
            ["evaluate", pipeline["checkpoint"], prep2, tmp_path / "rep"], capsys
        )
        assert code == 2
        assert "features" in err

    def test_empty_split_exits_2(self, capsys, tmp_path):
        # Five patients: floor(5 * 0.1) = 0 rows in val and test.
        records = [
            make_patient(
                pid=f"T{i}",
                events=[("2003-06-01", "Diagnosis", "250.00")]
                + encounters("2005-01-01", "2006-02-01", "2007-06-01"),
            )
            for i in range(5)
        ]
        path = tmp_path / "records.jsonl"
        write_records(records, path)
        prep = tmp_path / "prep"
        assert run_cli(["prepare", path, prep], capsys)[0] == 0
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps(dict(TRAIN_CONFIG, epochs=1, batches_per_epoch=2)))
        run_dir = tmp_path / "run"
        assert run_cli(["train", prep, run_dir, "--config", cfg], capsys)[0] == 0
        code, _, err = run_cli(
            ["evaluate", run_dir / "checkpoint.bin", prep, tmp_path / "rep"],
            capsys,
        )
        assert code == 2
        assert "test" in err and "empty" in err

    def test_missing_checkpoint_exits_3(self, pipeline, capsys, tmp_path):
        code, _, _ = run_cli(
            [
                "evaluate", tmp_path / "missing.bin", pipeline["prep"],
                tmp_path / "rep",
            ],
            capsys,
        )
        assert code == 3


class TestSearch:
    def _grid_doc(self, **train_overrides):
        return {
            "grid": {
                "classifier_layers": [1],
                "classifier_widths": [4, 8],
                "discriminator_layers": [1],
                "discriminator_widths": [4],
                "classifier_lrs": [1e-3],
                "discriminator_lrs": [1e-3],
                "adversary_weights": [1.0],
                "classifier_layer_norm": [False],
                "discriminator_layer_norm": [False],
                "discriminator_spectral_norm": [True],
                "n_trials": 2,
            },
            "train": dict(
                TRAIN_CONFIG, epochs=1, batches_per_epoch=4, **train_overrides
            ),
        }

    def test_outputs_and_ranking(self, pipeline, capsys, tmp_path):
        cfg = tmp_path / "search.json"
        cfg.write_text(json.dumps(self._grid_doc()))
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(
            ["search", pipeline["prep"], cfg, out_dir, "--seed", 1], capsys
        )
        assert code == 0
        assert (out_dir / "ranking.csv").exists()
        assert (out_dir / "trials" / "trial_000.json").exists()
        assert (out_dir / "trials" / "trial_001.json").exists()
        lines = out.strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("rank=0 trial=")
        doc = json.loads((out_dir / "trials" / "trial_000.json").read_text())
        assert doc["trial"] == 0
        assert doc["status"] in ("ok", "selection_failed", "error")
        assert len(doc["trace"]) in (0, 1)

    def test_trials_flag_overrides_grid(self, pipeline, capsys, tmp_path):
        cfg = tmp_path / "search.json"
        cfg.write_text(json.dumps(self._grid_doc()))
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(
            ["search", pipeline["prep"], cfg, out_dir, "--trials", 1], capsys
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 1

    def test_same_seed_identical_ranking(self, pipeline, capsys, tmp_path):
        cfg = tmp_path / "search.json"
        cfg.write_text(json.dumps(self._grid_doc()))
        rankings = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            assert run_cli(
                ["search", pipeline["prep"], cfg, out_dir, "--seed", 2], capsys
            )[0] == 0
            rankings.append((out_dir / "ranking.csv").read_bytes())
        assert rankings[0] == rankings[1]

    def test_train_and_train_config_conflict_exits_2(self, pipeline, capsys, tmp_path):
        doc = self._grid_doc()
        doc["train_config"] = "tc.json"
        cfg = tmp_path / "search.json"
        cfg.write_text(json.dumps(doc))
        code, _, err = run_cli(
            ["search", pipeline["prep"], cfg, tmp_path / "out"], capsys
        )
        assert code == 2
        assert "train" in err

    def test_train_config_resolved_relative_to_config_dir(
        self, pipeline, capsys, tmp_path
    ):
        nested = tmp_path / "configs"
        nested.mkdir()
        doc = self._grid_doc()
        train_doc = doc.pop("train")
        doc["train_config"] = "tc.json"
        (nested / "tc.json").write_text(json.dumps(train_doc))
        cfg = nested / "search.json"
        cfg.write_text(json.dumps(doc))
        code, out, _ = run_cli(
            ["search", pipeline["prep"], cfg, tmp_path / "out", "--seed", 1],
            capsys,
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 2


class TestUsageErrors:
    def test_unknown_subcommand_exits_1(self, capsys):
        assert run_cli(["frobnicate"], capsys)[0] == 1

    def test_missing_argument_exits_1(self, capsys):
        assert run_cli(["train"], capsys)[0] == 1

    def test_unknown_flag_exits_1(self, capsys, tmp_path):
        assert run_cli(
            ["prepare", tmp_path / "r.jsonl", tmp_path / "p", "--fast"], capsys
        )[0] == 1

    def test_bad_attr_choice_exits_1(self, capsys, tmp_path):
        assert run_cli(
            ["train", tmp_path / "p", tmp_path / "o", "--sensitive-attr", "zip"],
            capsys,
        )[0] == 1
