"""Tests for config handling and the five-stage command-line pipeline."""

import configparser
import hashlib
import json

import numpy as np
import pytest

from fairaug import cli
from fairaug.cli import ConfigError, RunConfig, load_config, resolve_config


def write_tiny_dataset(directory):
    """10 users x 12 items, 5 interactions each (per-user split 3/1/1)."""
    rng = np.random.default_rng(21)
    lines = ["# user\titem\ttimestamp"]
    for user in range(10):
        items = rng.choice(12, size=5, replace=False)
        for ts, item in enumerate(items):
            lines.append(f"{user}\t{item}\t{ts}")
    (directory / "interactions.tsv").write_text("\n".join(lines) + "\n")
    labels = ["# user\tgroup"] + [f"{u}\t{'b' if u >= 5 else 'a'}" for u in range(10)]
    (directory / "attributes.tsv").write_text("\n".join(labels) + "\n")


def write_config(path, directory, **overrides):
    values = {"out": directory / "out", "seed": 1, "k": 2, "policy": "ld",
              "policies": "bm,zn", "epochs": 4, "max_epochs": 4}
    values.update(overrides)
    path.write_text(f"""\
[data]
interactions = {directory / 'interactions.tsv'}
attributes = {directory / 'attributes.tsv'}

[run]
out = {values['out']}
seed = {values['seed']}
k = {values['k']}
policy = {values['policy']}
policies = {values['policies']}

[model]
embedding_dim = 16
epochs = {values['epochs']}
batch_size = 16

[augment]
learning_rate = 0.5
max_epochs = {values['max_epochs']}
beta = 0.1
temperature = 0.5
""")
    return path


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="config file not found"):
            load_config(tmp_path / "nope.ini")

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[surprises]\nkey = 1\n")
        with pytest.raises(ConfigError, match=r"unknown config section \[surprises\]"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[run]\nvelocity = 9\n")
        with pytest.raises(ConfigError, match="unknown key 'velocity' in section"):
            load_config(path)

    def test_bad_value_names_its_location(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[run]\nseed = fast\n")
        with pytest.raises(ConfigError, match=r"bad value for \[run\] seed"):
            load_config(path)

    def test_types_parse_per_schema(self, tmp_path):
        path = tmp_path / "full.ini"
        path.write_text("""\
[data]
interactions = a.tsv
attributes = b.tsv
[run]
retrain = yes
seed = 7
[model]
learning_rate = 0.01
[augment]
fairness_target = none
beta = 0.25
""")
        cfg = load_config(path)
        assert cfg.retrain is True
        assert cfg.seed == 7
        assert cfg.model_learning_rate == 0.01
        assert cfg.fairness_target is None
        assert cfg.beta == 0.25

    def test_boolean_spellings(self):
        assert cli._parse_bool("TRUE") is True
        assert cli._parse_bool("0") is False
        with pytest.raises(ValueError, match="expected a boolean"):
            cli._parse_bool("maybe")

    def test_optional_float_spellings(self):
        assert cli._parse_optional_float("") is None
        assert cli._parse_optional_float("None") is None
        assert cli._parse_optional_float("0.05") == 0.05

    def test_dump_round_trips(self, tmp_path):
        cfg = RunConfig(interactions="x.tsv", attributes="y.tsv", seed=3,
                        beta=0.125, fairness_target=None, retrain=True)
        path = tmp_path / "dumped.ini"
        path.write_text(cli.dump_config(cfg))
        assert load_config(path) == cfg


class TestResolveConfig:
    def parse(self, argv):
        return cli.build_arg_parser().parse_args(argv)

    def test_defaults_without_config_or_flags(self):
        cfg = resolve_config(self.parse(["split"]))
        assert cfg == RunConfig()

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[run]\nseed = 5\nk = 3\n")
        cfg = resolve_config(self.parse(["split", "--config", str(path)]))
        assert (cfg.seed, cfg.k) == (5, 3)

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[run]\nseed = 5\n[augment]\nbeta = 0.9\n")
        cfg = resolve_config(self.parse(["augment", "--config", str(path),
                                         "--seed", "7", "--beta", "0.01"]))
        assert cfg.seed == 7
        assert cfg.beta == 0.01

    def test_augment_flags_map_to_attributes(self):
        cfg = resolve_config(self.parse(
            ["augment", "--policy", "zn", "--max-epochs", "9", "--lr", "0.3",
             "--temperature", "0.2", "--fairness-target", "0.05"]))
        assert cfg.policy == "zn"
        assert cfg.max_epochs == 9
        assert cfg.augment_learning_rate == 0.3
        assert cfg.temperature == 0.2
        assert cfg.fairness_target == 0.05


class TestMainErrors:
    def test_split_needs_data_paths(self, capsys):
        assert cli.main(["split"]) == 1
        assert "set [data] interactions" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert cli.main(["split", "--config", "no-such.ini"]) == 1
        assert "config file not found" in capsys.readouterr().err

    def test_missing_data_file(self, tmp_path, capsys):
        config = tmp_path / "run.ini"
        config.write_text(f"[data]\ninteractions = {tmp_path}/a.tsv\n"
                          f"attributes = {tmp_path}/b.tsv\n")
        assert cli.main(["split", "--config", str(config)]) == 1
        assert "interactions file not found" in capsys.readouterr().err

    def test_augment_before_train(self, tmp_path, capsys):
        write_tiny_dataset(tmp_path)
        config = write_config(tmp_path / "run.ini", tmp_path)
        assert cli.main(["augment", "--config", str(config)]) == 1
        assert "run train first" in capsys.readouterr().err

    def test_unknown_policy_flag(self, tmp_path, capsys):
        write_tiny_dataset(tmp_path)
        config = write_config(tmp_path / "run.ini", tmp_path)
        assert cli.main(["train", "--config", str(config)]) == 0
        assert cli.main(["augment", "--config", str(config), "--policy", "xx"]) == 1
        assert "unknown policy" in capsys.readouterr().err

    def test_evaluate_before_augment(self, tmp_path, capsys):
        write_tiny_dataset(tmp_path)
        config = write_config(tmp_path / "run.ini", tmp_path)
        assert cli.main(["train", "--config", str(config)]) == 0
        assert cli.main(["evaluate", "--config", str(config)]) == 1
        assert "run augment first" in capsys.readouterr().err

    def test_checkpoint_dataset_mismatch(self, tmp_path, capsys):
        write_tiny_dataset(tmp_path)
        config = write_config(tmp_path / "run.ini", tmp_path)
        assert cli.main(["train", "--config", str(config)]) == 0
        # Same output directory, different interaction log.
        other = tmp_path / "other"
        other.mkdir()
        rng = np.random.default_rng(3)
        lines = ["# user\titem\ttimestamp"]
        for user in range(11):
            for ts, item in enumerate(rng.choice(12, size=5, replace=False)):
                lines.append(f"{user}\t{item}\t{ts}")
        (other / "interactions.tsv").write_text("\n".join(lines) + "\n")
        (other / "attributes.tsv").write_text(
            "\n".join(f"{u}\t{'b' if u >= 5 else 'a'}" for u in range(11)) + "\n")
        mismatched = write_config(other / "run.ini", other, out=tmp_path / "out")
        assert cli.main(["augment", "--config", str(mismatched)]) == 1
        assert "re-run train" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full split/train/augment/evaluate pass over the tiny dataset."""
    root = tmp_path_factory.mktemp("pipeline")
    write_tiny_dataset(root)
    config = write_config(root / "run.ini", root)
    for command in ("split", "train", "augment", "evaluate"):
        assert cli.main([command, "--config", str(config)]) == 0, command
    return {"root": root, "config": config, "out": root / "out"}


class TestPipeline:
    def test_split_exports_all_three_sets(self, pipeline):
        split_dir = pipeline["out"] / "split"
        for name in ("train", "validation", "test"):
            lines = [l for l in (split_dir / f"{name}.tsv").read_text().splitlines()
                     if not l.startswith("#")]
            assert lines
        train = (split_dir / "train.tsv").read_text().splitlines()
        assert len([l for l in train if not l.startswith("#")]) == 30

    def test_train_saves_a_loadable_checkpoint(self, pipeline):
        from fairaug.lightgcn import load_checkpoint
        params = load_checkpoint(pipeline["out"] / "model.ckpt")
        assert params.num_users == 10
        assert params.embedding_dim == 16

    def test_augment_run_directory_artifacts(self, pipeline):
        run_dir = pipeline["out"] / "runs" / "ld"
        for artifact in ("added_edges.tsv", "trace.tsv", "result.json",
                         "config.ini", "inputs.sha256", "trace.png"):
            assert (run_dir / artifact).exists(), artifact
        assert (run_dir / "trace.png").stat().st_size > 0

    def test_result_json_summarizes_the_run(self, pipeline):
        payload = json.loads((pipeline["out"] / "runs" / "ld" / "result.json").read_text())
        assert payload["policy"] == "ld"
        assert payload["k"] == 2
        assert payload["num_candidate_users"] == 2   # ceil(0.35 * 5)
        assert 0 <= payload["best_epoch"] <= 4
        assert payload["epochs_run"] == 4
        assert {"before", "after", "runtime_seconds"} <= payload.keys()
        assert payload["num_added_edges"] == payload["after"]["num_edges"]

    def test_trace_has_epoch_zero_plus_each_step(self, pipeline):
        lines = (pipeline["out"] / "runs" / "ld" / "trace.tsv").read_text().splitlines()
        assert len(lines) == 1 + 5   # header + epochs 0..4
        assert lines[1].split("\t")[0] == "0"
        assert lines[1].split("\t")[5] == "0"   # epoch 0 has no edges

    def test_provenance_config_reloads_to_resolved_values(self, pipeline):
        cfg = load_config(pipeline["out"] / "runs" / "ld" / "config.ini")
        assert cfg.policy == "ld"
        assert cfg.k == 2
        assert cfg.beta == 0.1
        assert cfg.epochs == 4

    def test_provenance_hashes_match_inputs(self, pipeline):
        lines = (pipeline["out"] / "runs" / "ld" / "inputs.sha256").read_text().splitlines()
        assert len(lines) == 3
        digest, path = lines[0].split("  ")
        assert digest == hashlib.sha256(open(path, "rb").read()).hexdigest()

    def test_evaluate_writes_tables_and_figures(self, pipeline):
        out = pipeline["out"]
        report = (out / "report.tsv").read_text().splitlines()
        assert report[0].startswith("# policy\tmode")
        assert [row.split("\t")[0] for row in report[1:]] == ["baseline", "ld"]
        text = (out / "report.txt").read_text()
        assert "== mitigation by policy ==" in text
        assert "== utility / disparity trade-off ==" in text
        assert (out / "scatter.tsv").read_text().count("ld\t") == 2
        assert (out / "scatter.png").stat().st_size > 0

    def test_evaluate_prints_the_report(self, pipeline, capsys):
        assert cli.main(["evaluate", "--config", str(pipeline["config"])]) == 0
        printed = capsys.readouterr().out
        assert "== mitigation by policy ==" in printed
        assert "baseline" in printed

    def test_sweep_skips_unapplicable_policies(self, pipeline, capsys, caplog):
        # With k=10 every measurable user has a scoring top-k list on this
        # tiny catalogue, so the zero-utility policy matches nobody and the
        # sweep must fall back to a placeholder row instead of dying.
        assert cli.main(["sweep", "--config", str(pipeline["config"]),
                         "--k", "10"]) == 0
        printed = capsys.readouterr().out
        assert "[bm]" in printed
        assert (pipeline["out"] / "runs" / "bm").is_dir()
        assert not (pipeline["out"] / "runs" / "zn").exists()
        text = (pipeline["out"] / "report.txt").read_text()
        zn_rows = [line for line in text.splitlines() if line.startswith("zn")]
        assert zn_rows and "n/a" in zn_rows[0]

    def test_sweep_rejects_typoed_policy_lists(self, pipeline, capsys):
        assert cli.main(["sweep", "--config", str(pipeline["config"]),
                         "--policies", "bm,oops"]) == 1
        assert "unknown policy" in capsys.readouterr().err
