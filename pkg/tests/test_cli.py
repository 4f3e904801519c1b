from pathlib import Path

import pytest
from click.testing import CliRunner

from fedtrees.cli import main


CONFIG_TOML = "\n".join(
    [
        "seed = 3",
        "[data]",
        "synthetic = true",
        "synthetic_days = 12",
        "[model]",
        'kind = "gbdt"',
        "[model.gbdt]",
        "batch_size = 5",
        "n_batches = 4",
        "[federation]",
        "max_rounds = 4",
        "measure_time = false",
    ]
)


@pytest.fixture()
def runner():
    return CliRunner()


def _write_config(text=CONFIG_TOML, name="run.toml"):
    Path(name).write_text(text)
    return name


def test_centralized_writes_artifacts_and_report(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(main, ["centralized", "--config", config, "--out-dir", "out"])
        assert result.exit_code == 0, result.output
        assert Path("out/report.csv").exists()
        assert Path("out/model.json").exists()
        assert "gbdt" in result.output
        assert "persistence" in result.output
        assert "wrote" in result.output
        assert "config " in result.output  # provenance line


def test_quiet_suppresses_output(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(
            main, ["prepare-data", "--config", config, "--out-dir", "out", "--quiet"]
        )
        assert result.exit_code == 0, result.output
        assert result.output == ""
        assert Path("out/prepared.csv").exists()


def test_default_out_dir_is_per_operation(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(main, ["prepare-data", "--config", config, "--quiet"])
        assert result.exit_code == 0, result.output
        assert Path("runs/prepare-data/prepared.csv").exists()


def test_out_dir_from_config_file(runner):
    with runner.isolated_filesystem():
        config = _write_config('out_dir = "from_config"\n' + CONFIG_TOML)
        result = runner.invoke(main, ["prepare-data", "--config", config, "--quiet"])
        assert result.exit_code == 0, result.output
        assert Path("from_config/prepared.csv").exists()


def test_seed_override_reaches_report(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(
            main,
            ["centralized", "--config", config, "--out-dir", "out", "--seed", "9"],
        )
        assert result.exit_code == 0, result.output
        report = Path("out/report.csv").read_text()
        assert report.split("\n")[1].split(",")[-2] == "9"


def test_unknown_config_key_exits_2(runner):
    with runner.isolated_filesystem():
        config = _write_config("bogus = 1\n[data]\nsynthetic = true")
        result = runner.invoke(main, ["centralized", "--config", config])
        assert result.exit_code == 2
        assert "bogus" in result.output


def test_missing_config_file_exits_2(runner):
    with runner.isolated_filesystem():
        result = runner.invoke(main, ["centralized", "--config", "absent.toml"])
        assert result.exit_code == 2


def test_missing_data_file_exits_3(runner):
    with runner.isolated_filesystem():
        config = _write_config('[data]\npath = "gone.csv"')
        result = runner.invoke(main, ["centralized", "--config", config])
        assert result.exit_code == 3


def test_federated_run_and_emit_curves(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        run = runner.invoke(main, ["federated", "--config", config, "--out-dir", "fed"])
        assert run.exit_code == 0, run.output
        assert Path("fed/round_log.csv").exists()
        assert Path("fed/checkpoint.json").exists()

        curves = runner.invoke(
            main,
            [
                "emit-curves",
                "--config",
                config,
                "--round-log",
                "fed/round_log.csv",
                "--model",
                "fed/model.json",
                "--out-dir",
                "curves",
            ],
        )
        assert curves.exit_code == 0, curves.output
        assert Path("curves/convergence.csv").exists()
        assert Path("curves/forecast_72h.csv").exists()


def test_emit_curves_without_inputs_exits_2(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(main, ["emit-curves", "--config", config])
        assert result.exit_code == 2


def test_emit_curves_missing_model_file_exits_3(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(
            main, ["emit-curves", "--config", config, "--model", "missing.json"]
        )
        assert result.exit_code == 3


def test_emit_curves_junk_model_exits_3(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        Path("junk.json").write_text("{\"format\": \"surprise\"}")
        result = runner.invoke(
            main, ["emit-curves", "--config", config, "--model", "junk.json"]
        )
        assert result.exit_code == 3


def test_sweep_features_selected_ks(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(
            main,
            ["sweep-features", "--config", config, "--k", "1", "--k", "2",
             "--out-dir", "sweep", "--quiet"],
        )
        assert result.exit_code == 0, result.output
        lines = Path("sweep/feature_sweep.csv").read_text().strip().split("\n")
        assert len(lines) == 3  # header + two rows
        assert lines[1].startswith("1,")
        assert lines[2].startswith("2,")


def test_sweep_stopper_grid(runner):
    with runner.isolated_filesystem():
        config = _write_config()
        result = runner.invoke(
            main,
            ["sweep-stopper", "--config", config, "--delta", "0.001",
             "--window", "1", "--window", "2", "--out-dir", "grid", "--quiet"],
        )
        assert result.exit_code == 0, result.output
        lines = Path("grid/stopper_grid.csv").read_text().strip().split("\n")
        assert len(lines) == 3


def test_version_flag(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "fedtrees" in result.output


def test_help_lists_subcommands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for name in ("prepare-data", "centralized", "federated", "feature-importance",
                 "sweep-features", "sweep-stopper", "emit-curves", "serve"):
        assert name in result.output


def test_serve_help_mentions_bind_options(runner):
    result = runner.invoke(main, ["serve", "--help"])
    assert result.exit_code == 0
    assert "--host" in result.output and "--port" in result.output
