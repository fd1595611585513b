import json
import logging

import pytest
import yaml
from click.testing import CliRunner

from fakestack.cli import main
from fakestack.core import PredictionRecord
from fakestack.data_ingest import DatasetSplit, LabeledPost, write_split
from fakestack.errors import ConfigError, PredictionFileError
from fakestack.pipeline import (
    RunManifest,
    StageFailure,
    cache_predictions,
    load_predictions,
    run_experiment,
    validate_config,
)
from fakestack.pipeline.runner import CACHED, DONE, FAILED, SKIPPED
from fakestack.synthetic import toy_split


def official_style(split, name):
    # integer ids restarting at 1 in every split, as in the official files
    return DatasetSplit(name, tuple(LabeledPost(str(i + 1), p.text, p.label) for i, p in enumerate(split.posts)))


@pytest.fixture
def workdir(tmp_path):
    for name, n, seed in (("train", 40, 1), ("validation", 20, 2), ("test", 20, 3)):
        write_split(official_style(toy_split(n, seed=seed), name), tmp_path / f"{name}.csv")
    return tmp_path


def write_config(workdir, name="exp", **overrides):
    doc = {
        "name": name,
        "seed": 3,
        "output_dir": "runs",
        "data": {"train": "train.csv", "validation": "validation.csv", "test": "test.csv"},
        "ensemble": {"members": ["bert", "gpt2"]},
        "backbones": {"provider": "random-init", "size_class": "small-proxy", "hidden_size": 16},
        "train": {"learning_rate": 1e-3, "epochs": 2, "batch_size": 16, "max_seq_len": 24},
        "meta": {"mode": "oof", "k": 2, "epochs": 10},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    path = workdir / f"{name}.yaml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


# -- config -----------------------------------------------------------------

def test_minimal_config_defaults(workdir):
    path = workdir / "min.yaml"
    path.write_text("data: {train: train.csv, validation: validation.csv, test: test.csv}\n", encoding="utf-8")
    cfg = validate_config(path)
    assert cfg.variant == "v3" and len(cfg.members) == 8
    t = cfg.train
    assert (t.learning_rate, t.epochs, t.batch_size, t.max_seq_len) == (2e-6, 10, 32, 128)
    assert (cfg.meta.mode, cfg.meta.k) == ("oof", 5)
    assert cfg.data.train == workdir / "train.csv"


def test_config_errors_are_itemized(workdir):
    path = write_config(workdir, ensemble={"members": ["gpt3"]}, train={"learning_rate": 5e-2}, typo_key=1,
                        meta={"mode": "oof", "k": 1})
    with pytest.raises(ConfigError) as info:
        validate_config(path)
    text = "\n".join(info.value.items)
    assert "unknown member 'gpt3'" in text and "config.typo_key: unknown key" in text
    assert "outside" in text and "meta.k" in text
    assert info.value.exit_code == 2


def test_missing_path_and_force_flag(workdir):
    path = write_config(workdir, data={"test": "nope.csv"}, train={"learning_rate": 5e-2, "force": True})
    with pytest.raises(ConfigError) as info:
        validate_config(path)
    assert any("nope.csv" in item for item in info.value.items)
    assert not any("learning_rate" in item for item in info.value.items)


def test_member_seeds_and_overrides(workdir):
    cfg = validate_config(write_config(workdir, member_overrides={"gpt2": {"learning_rate": 1e-4}}))
    assert cfg.member_seed("bert") == 3 and cfg.member_seed("gpt2") == 4
    assert cfg.train_config_for("gpt2").learning_rate == 1e-4
    assert cfg.train_config_for("bert").learning_rate == 1e-3


# -- prediction cache ---------------------------------------------------------

def test_cache_round_trip_2140(tmp_path):
    recs = [PredictionRecord.from_probs(f"test:{i}", "bert", (i % 997) / 997, 1 - (i % 997) / 997) for i in range(2140)]
    cache_predictions(recs, tmp_path / "bert_test.csv")
    back = load_predictions(tmp_path / "bert_test.csv")
    assert len(back) == 2140
    for a, b in zip(recs, back):
        assert a.post_id == b.post_id and a.model_name == b.model_name and a.predicted == b.predicted
        assert abs(a.probs.p_real - b.probs.p_real) <= 5e-10


def test_cache_rejects_bad_sum_with_line_number(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("post_id,model_name,p_fake,p_real,predicted\na,m,0.5,0.5,fake\nb,m,0.4,0.5,real\n",
                    encoding="utf-8")
    with pytest.raises(PredictionFileError) as info:
        load_predictions(path)
    assert info.value.line == 3


def test_cache_malformed_line(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("post_id,model_name,p_fake,p_real,predicted\na,m,x,0.5,fake\n", encoding="utf-8")
    with pytest.raises(PredictionFileError, match=":2:"):
        load_predictions(path)


def test_empty_cache_is_header_only(tmp_path):
    cache_predictions([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "post_id,model_name,p_fake,p_real,predicted\n"
    assert load_predictions(tmp_path / "e.csv") == []


# -- orchestration ------------------------------------------------------------

def test_run_resume_and_byte_identical_reports(workdir):
    cfg = validate_config(write_config(workdir))
    manifest = run_experiment(cfg)
    run_dir = cfg.run_dir
    assert set(manifest.statuses().values()) == {DONE}
    assert manifest.missing_artifacts() == []
    assert set(manifest.members) == {"bert", "gpt2"}
    for model in ("bert", "gpt2", "ensemble-custom"):
        for split in ("validation", "test"):
            assert (run_dir / "reports" / f"{model}_{split}.json").exists()
            assert (run_dir / "predictions" / f"{model}_{split}.csv").exists()
    assert (run_dir / "predictions" / "bert_train.csv").exists()
    assert (run_dir / "checkpoints" / "gpt2" / "manifest.json").exists()
    ids = [r.post_id for r in load_predictions(run_dir / "predictions" / "bert_validation.csv")]
    assert ids[0] == "validation:1"

    summary = (run_dir / "reports" / "summary.md").read_bytes()
    again = run_experiment(cfg)
    assert set(again.statuses().values()) == {CACHED}

    (run_dir / "reports" / "summary.md").unlink()
    third = run_experiment(cfg)
    assert third.stages["evaluate"].status == DONE and third.stages["train:bert"].status == CACHED
    assert (run_dir / "reports" / "summary.md").read_bytes() == summary

    reloaded = RunManifest.load(run_dir)
    assert reloaded.config["members"] == ["bert", "gpt2"] and reloaded.version


def test_two_runs_identical_reports(workdir):
    a = validate_config(write_config(workdir, name="same", output_dir="runs_a"))
    b = validate_config(write_config(workdir, name="same", output_dir="runs_b"))
    run_experiment(a, resume=False)
    run_experiment(b, resume=False)
    names = sorted(p.name for p in (a.run_dir / "reports").iterdir())
    assert names == sorted(p.name for p in (b.run_dir / "reports").iterdir())
    for name in names:
        assert (a.run_dir / "reports" / name).read_bytes() == (b.run_dir / "reports" / name).read_bytes()


def test_changed_setting_reruns_dependents_only(workdir):
    cfg = validate_config(write_config(workdir))
    run_experiment(cfg)
    cfg2 = validate_config(write_config(workdir, meta={"kind": "random_forest"}))
    manifest = run_experiment(cfg2)
    assert manifest.stages["train:bert"].status == CACHED
    assert manifest.stages["train-meta"].status == DONE and manifest.stages["evaluate"].status == DONE


@pytest.mark.parametrize("mode", ["paper", "val"])
def test_meta_modes(workdir, mode):
    cfg = validate_config(write_config(workdir, name=f"m_{mode}", meta={"mode": mode, "epochs": 5}))
    manifest = run_experiment(cfg)
    assert manifest.stages["evaluate"].status == DONE
    assert ("predict:bert:train" in manifest.stages) == (mode == "paper")


def test_external_data_is_merged_and_logged(workdir, caplog):
    (workdir / "fc.csv").write_text("title,class\n" + "".join(
        f"claim number {i} miracle cure,{'false' if i % 3 else 'true'}\n" for i in range(9)), encoding="utf-8")
    cfg = validate_config(write_config(workdir, name="ext", data={"external": "fc.csv"}))
    with caplog.at_level(logging.INFO, logger="fakestack.pipeline.runner"):
        manifest = run_experiment(cfg)
    assert manifest.stages["prepare"].diagnostics["train_size"] == 49
    assert "training split: 49 posts" in caplog.text
    stats = json.loads((cfg.run_dir / "data" / "stats.json").read_text())
    assert stats["external"]["n_fake"] == 6 and stats["external"]["n_real"] == 3


def test_stage_failure_recorded_and_dependents_skipped(workdir, tmp_path):
    cfg = validate_config(write_config(workdir, name="fail", backbones={"provider": "huggingface", "offline": True,
                                                                       "cache_dir": str(tmp_path / "empty")}))
    with pytest.raises(StageFailure) as info:
        run_experiment(cfg)
    manifest = RunManifest.load(cfg.run_dir)
    failed = [name for name, rec in manifest.stages.items() if rec.status == FAILED]
    assert len(failed) == 1 and manifest.stages[failed[0]].diagnostics["exit_code"] == 4
    assert manifest.stages["evaluate"].status == SKIPPED
    assert all(rec.status in (DONE, FAILED, SKIPPED) for rec in manifest.stages.values())
    assert info.value.exit_code == 4


def test_data_error_maps_to_exit_code_3(workdir):
    (workdir / "bad.csv").write_text("id,tweet,label\n1,a,maybe\n", encoding="utf-8")
    cfg = validate_config(write_config(workdir, name="bad", data={"test": "bad.csv"}))
    with pytest.raises(StageFailure) as info:
        run_experiment(cfg)
    assert info.value.exit_code == 3


# -- CLI ----------------------------------------------------------------------

def test_cli_stage_commands_and_compare(workdir):
    path = write_config(workdir, name="cli")
    runner = CliRunner()
    out = str(workdir / "cli_runs")
    res = runner.invoke(main, ["prepare-data", "--config", str(path), "--out", out])
    assert res.exit_code == 0, res.output
    assert "prepare: done" in res.output
    res = runner.invoke(main, ["train-base", "--config", str(path), "--out", out, "--member", "bert"])
    assert res.exit_code == 0 and "train:bert: done" in res.output
    res = runner.invoke(main, ["predict", "--config", str(path), "--out", out, "--member", "bert",
                               "--split", "test"])
    assert res.exit_code == 0 and "predict:bert:test: done" in res.output
    for cmd in ("build-meta", "train-meta", "evaluate"):
        res = runner.invoke(main, [cmd, "--config", str(path), "--out", out])
        assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["run-experiment", "--config", str(path), "--out", out])
    assert res.exit_code == 0 and "evaluate: cached" in res.output
    res = runner.invoke(main, ["run-experiment", "--config", str(path), "--out", out, "--seed", "9",
                               "--no-resume"])
    assert res.exit_code == 0
    res = runner.invoke(main, ["compare", f"{out}/cli", f"{out}/cli"])
    assert res.exit_code == 0 and "| ensemble:custom | test |" in res.output


def test_cli_exit_codes(workdir):
    runner = CliRunner()
    bad = write_config(workdir, name="bad", ensemble={"members": ["gpt3"]})
    res = runner.invoke(main, ["run-experiment", "--config", str(bad)])
    assert res.exit_code == 2 and "unknown member" in res.output
    res = runner.invoke(main, ["validate-config", str(write_config(workdir, name="ok"))])
    assert res.exit_code == 0 and "variant: custom" in res.output
    (workdir / "bad.csv").write_text("id,tweet,label\n1,a,real\n1,b,fake\n", encoding="utf-8")
    dup = write_config(workdir, name="dup", data={"train": "bad.csv"})
    res = runner.invoke(main, ["prepare-data", "--config", str(dup)])
    assert res.exit_code == 5
