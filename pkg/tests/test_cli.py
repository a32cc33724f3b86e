import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from pillm.cli import main
from pillm.timeseries import load_csv, load_meta, save_csv, save_meta

from .conftest import make_table

RULE_OK = "return $x > 2.5\n"


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def write_spike_corpus(root: Path) -> tuple[Path, Path]:
    x = np.zeros(6)
    x[2:4] = 5.0
    labels = np.array([0, 0, 1, 1, 0, 0], dtype=np.uint8)
    table = make_table({"x": x}, labels=labels)
    data = root / "data.csv"
    meta = root / "meta.json"
    data.write_bytes(save_csv(table))
    meta.write_text(save_meta(table.features), encoding="utf-8")
    return data, meta


def run_dir_from(output: str) -> Path:
    for line in output.splitlines():
        if line.startswith("run_dir="):
            return Path(line.split("=", 1)[1])
    raise AssertionError(f"no run_dir= line in output:\n{output}")


def evolve_config(tmp_path: Path, **overrides) -> Path:
    doc = {
        "population_size": 4,
        "generations": 2,
        "elite_count": 1,
        "pairs_per_gen": 1,
        "seed": 11,
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def sim_corpus(tmp_path, runner) -> tuple[Path, Path]:
    out = tmp_path / "corpus"
    result = runner.invoke(
        main,
        [
            "gen-data",
            "--out",
            str(out),
            "--fault",
            "sensor_bias",
            "--window",
            "1000:1400",
            "--seed",
            "42",
        ],
    )
    assert result.exit_code == 0, result.output
    return out / "data.csv", out / "meta.json"


class TestGenData:
    def test_clean_corpus(self, tmp_path, runner):
        out = tmp_path / "clean"
        result = runner.invoke(main, ["gen-data", "--out", str(out), "--length", "500"])
        assert result.exit_code == 0
        assert "500 rows" in result.output
        metas = load_meta((out / "meta.json").read_bytes())
        table = load_csv((out / "data.csv").read_bytes(), metas)
        assert table.num_rows == 500
        assert table.has_labels
        assert table.labels.sum() == 0

    def test_faulted_corpus_labels_window(self, sim_corpus):
        data, meta = sim_corpus
        table = load_csv(data.read_bytes(), load_meta(meta.read_bytes()))
        assert table.labels.sum() == 400
        assert table.labels[1000] == 1
        assert table.labels[1400] == 0

    def test_fault_requires_window(self, tmp_path, runner):
        result = runner.invoke(
            main, ["gen-data", "--out", str(tmp_path / "x"), "--fault", "sensor_bias"]
        )
        assert result.exit_code == 3
        assert "--window" in result.output

    def test_window_requires_fault(self, tmp_path, runner):
        result = runner.invoke(
            main, ["gen-data", "--out", str(tmp_path / "x"), "--window", "10:20"]
        )
        assert result.exit_code == 3

    def test_unparseable_window(self, tmp_path, runner):
        result = runner.invoke(
            main,
            ["gen-data", "--out", str(tmp_path / "x"), "--fault", "sensor_bias", "--window", "ten"],
        )
        assert result.exit_code == 3

    def test_bad_length(self, tmp_path, runner):
        result = runner.invoke(main, ["gen-data", "--out", str(tmp_path / "x"), "--length", "1"])
        assert result.exit_code == 3


class TestCheck:
    def test_ok_with_meta(self, tmp_path, runner):
        data, meta = write_spike_corpus(tmp_path)
        rule = tmp_path / "rule.txt"
        rule.write_text(RULE_OK)
        result = runner.invoke(main, ["check", "--rule", str(rule), "--meta", str(meta)])
        assert result.exit_code == 0
        assert result.output.startswith("OK:")
        assert "features: x" in result.output

    def test_ok_without_meta_infers_features(self, tmp_path, runner):
        rule = tmp_path / "rule.txt"
        rule.write_text("m = mean($zone_temp, 30)\nreturn zscore($zone_temp, 60) > 3\n")
        result = runner.invoke(main, ["check", "--rule", str(rule)])
        assert result.exit_code == 0
        assert "zone_temp" in result.output

    def test_diagnostic_on_bad_rule(self, tmp_path, runner):
        rule = tmp_path / "rule.txt"
        rule.write_text("return mean($x)\n")
        result = runner.invoke(main, ["check", "--rule", str(rule)])
        assert result.exit_code == 1
        assert "error:" in result.output
        assert "1:" in result.output  # LINE:COL diagnostic

    def test_unknown_feature_with_meta(self, tmp_path, runner):
        _, meta = write_spike_corpus(tmp_path)
        rule = tmp_path / "rule.txt"
        rule.write_text("return $ghost > 1\n")
        result = runner.invoke(main, ["check", "--rule", str(rule), "--meta", str(meta)])
        assert result.exit_code == 1
        assert "ghost" in result.output


class TestEval:
    def test_perfect_rule_line(self, tmp_path, runner):
        data, meta = write_spike_corpus(tmp_path)
        rule = tmp_path / "rule.txt"
        rule.write_text(RULE_OK)
        result = runner.invoke(
            main, ["eval", "--rule", str(rule), "--data", str(data), "--meta", str(meta)]
        )
        assert result.exit_code == 0
        assert (
            result.output.strip()
            == "mode=event_pa precision=1.000000 recall=1.000000 f1=1.000000"
        )

    def test_pointwise_metric_choice(self, tmp_path, runner):
        data, meta = write_spike_corpus(tmp_path)
        rule = tmp_path / "rule.txt"
        rule.write_text(RULE_OK)
        result = runner.invoke(
            main,
            [
                "eval",
                "--rule",
                str(rule),
                "--data",
                str(data),
                "--meta",
                str(meta),
                "--metric",
                "pointwise",
            ],
        )
        assert result.exit_code == 0
        assert result.output.startswith("mode=pointwise ")

    def test_threshold_changes_flags(self, tmp_path, runner):
        data, meta = write_spike_corpus(tmp_path)
        rule = tmp_path / "rule.txt"
        rule.write_text("return $x / 10\n")
        result = runner.invoke(
            main,
            [
                "eval",
                "--rule",
                str(rule),
                "--data",
                str(data),
                "--meta",
                str(meta),
                "--threshold",
                "0.3",
            ],
        )
        assert result.exit_code == 0
        assert "f1=1.000000" in result.output

    def test_unlabeled_data_rejected(self, tmp_path, runner):
        table = make_table({"x": np.zeros(4)})
        data = tmp_path / "data.csv"
        meta = tmp_path / "meta.json"
        data.write_bytes(save_csv(table))
        meta.write_text(save_meta(table.features), encoding="utf-8")
        rule = tmp_path / "rule.txt"
        rule.write_text(RULE_OK.replace("2.5", "1"))
        result = runner.invoke(
            main, ["eval", "--rule", str(rule), "--data", str(data), "--meta", str(meta)]
        )
        assert result.exit_code == 3


class TestEvolve:
    def invoke_evolve(self, runner, data, meta, config, out, *extra):
        return runner.invoke(
            main,
            [
                "evolve",
                "--data",
                str(data),
                "--meta",
                str(meta),
                "--config",
                str(config),
                "--provider",
                "sampler",
                "--out",
                str(out),
                *extra,
            ],
        )

    def test_sampler_run_artifacts(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = self.invoke_evolve(runner, data, meta, config, tmp_path / "runs")
        assert result.exit_code == 0, result.output
        run_dir = run_dir_from(result.output)
        for name in (
            "run.jsonl",
            "config.snapshot",
            "best.rule",
            "train.csv",
            "test.csv",
            "meta.json",
            "requests.log",
        ):
            assert (run_dir / name).exists(), name
        assert "best_fitness=" in result.output
        assert "llm_calls=" in result.output

    def test_run_log_records_are_wellformed(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = self.invoke_evolve(runner, data, meta, config, tmp_path / "runs")
        run_dir = run_dir_from(result.output)
        records = [
            json.loads(line)
            for line in (run_dir / "run.jsonl").read_text().splitlines()
            if line.strip()
        ]
        assert records[0]["operator"] == "seed"
        ids = [r["candidate_id"] for r in records]
        assert len(ids) == len(set(ids))
        assert all("code_hash" in r for r in records)
        snapshot = json.loads((run_dir / "config.snapshot").read_text())
        assert snapshot["provider"]["type"] == "sampler"
        assert snapshot["population_size"] == 4

    def test_split_archives_cover_all_rows(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = self.invoke_evolve(runner, data, meta, config, tmp_path / "runs")
        run_dir = run_dir_from(result.output)
        metas = load_meta((run_dir / "meta.json").read_bytes())
        train = load_csv((run_dir / "train.csv").read_bytes(), metas)
        test = load_csv((run_dir / "test.csv").read_bytes(), metas)
        assert train.num_rows == int(0.7 * 2880)
        assert train.num_rows + test.num_rows == 2880

    def test_unknown_config_key_exits_3(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path, crossover_rate=0.5)
        result = self.invoke_evolve(runner, data, meta, config, tmp_path / "runs")
        assert result.exit_code == 3
        assert "crossover_rate" in result.output

    def test_malformed_json_exits_3(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = tmp_path / "config.json"
        config.write_text("{not json")
        result = self.invoke_evolve(runner, data, meta, config, tmp_path / "runs")
        assert result.exit_code == 3

    def test_scripted_without_script_exits_3(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = runner.invoke(
            main,
            [
                "evolve",
                "--data",
                str(data),
                "--meta",
                str(meta),
                "--config",
                str(config),
                "--provider",
                "scripted",
                "--out",
                str(tmp_path / "runs"),
            ],
        )
        assert result.exit_code == 3

    def test_exhausted_script_aborts_with_exit_2(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        script = tmp_path / "script.jsonl"
        script.write_text("")
        result = runner.invoke(
            main,
            [
                "evolve",
                "--data",
                str(data),
                "--meta",
                str(meta),
                "--config",
                str(config),
                "--provider",
                "scripted",
                "--script",
                str(script),
                "--out",
                str(tmp_path / "runs"),
            ],
        )
        assert result.exit_code == 2
        assert "aborted=true" in result.output

    def test_no_pir_leaves_no_reflection_requests(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = self.invoke_evolve(
            runner, data, meta, config, tmp_path / "runs", "--no-pir"
        )
        assert result.exit_code == 0
        tags = (run_dir_from(result.output) / "requests.log").read_text().split()
        assert tags
        assert "reflection" not in tags
        assert "crossover" in tags

    def test_no_pic_leaves_no_crossover_requests(self, tmp_path, runner, sim_corpus):
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = self.invoke_evolve(
            runner, data, meta, config, tmp_path / "runs", "--no-pic"
        )
        assert result.exit_code == 0
        tags = (run_dir_from(result.output) / "requests.log").read_text().split()
        assert tags
        assert "crossover" not in tags
        assert "mutation" in tags


class TestReport:
    def finished_run(self, tmp_path, runner, sim_corpus) -> Path:
        data, meta = sim_corpus
        config = evolve_config(tmp_path)
        result = runner.invoke(
            main,
            [
                "evolve",
                "--data",
                str(data),
                "--meta",
                str(meta),
                "--config",
                str(config),
                "--provider",
                "sampler",
                "--out",
                str(tmp_path / "runs"),
            ],
        )
        assert result.exit_code == 0, result.output
        return run_dir_from(result.output)

    def test_report_headings_and_file(self, tmp_path, runner, sim_corpus):
        run_dir = self.finished_run(tmp_path, runner, sim_corpus)
        result = runner.invoke(
            main,
            [
                "report",
                "--run",
                str(run_dir),
                "--data",
                str(run_dir / "test.csv"),
                "--meta",
                str(run_dir / "meta.json"),
            ],
        )
        assert result.exit_code == 0, result.output
        for heading in ("Identify the Fault", "Provide Evidence", "Assess Severity"):
            assert heading in result.output
        assert (run_dir / "report.txt").read_text(encoding="utf-8") == result.output

    def test_narrate_is_identity_offline(self, tmp_path, runner, sim_corpus):
        run_dir = self.finished_run(tmp_path, runner, sim_corpus)
        args = [
            "report",
            "--run",
            str(run_dir),
            "--data",
            str(run_dir / "test.csv"),
            "--meta",
            str(run_dir / "meta.json"),
        ]
        plain = runner.invoke(main, args)
        narrated = runner.invoke(main, args + ["--narrate"])
        assert narrated.exit_code == 0, narrated.output
        assert narrated.output == plain.output


class TestVersion:
    def test_version_flag(self, runner):
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert "pillm" in result.output
