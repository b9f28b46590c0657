"""Orchestration tests: config parsing, experiment runs, flat-file output.

Determinism is the load-bearing property here. A fixed spec must produce
byte-identical summary and replication files no matter how many worker
threads execute the replications, and the CSV path dumps must round-trip
doubles exactly. The exit-code contract (0 ok, 1 solver failure beyond the
budget, 2 usage, 3 I/O) is pinned with forced failures.
"""

import json
from pathlib import Path

import click
import numpy as np
import pytest
from click.testing import CliRunner
from numpy.testing import assert_array_equal

from trigap import cli
from trigap.cli import (
    DEFAULT_ALPHA_PAIRS,
    PRESETS,
    ExperimentSpec,
    build_spec,
    emit_paths,
    run_experiment,
)
from trigap.model import DriftSpec, InitialPositions, SimConfig, SystemKind, TimeGrid
from trigap.skorokhod import NonConvergence
from trigap.systems import simulate_ranks, unfold_names


def tiny_spec(out_dir, *, system=SystemKind.MIDDLE_DIFFUSIVE,
              deltas=(-1.0, 0.0, 1.0), dt=0.01, steps=2000, reps=2,
              seed=707, name="tiny", **kwargs):
    """A spec small enough to run in well under a second."""
    cfg = SimConfig(
        system=system,
        drifts=DriftSpec(*deltas),
        x0=InitialPositions(1.0, 0.0, -1.0),
        grid=TimeGrid(dt=dt, n_steps=steps),
        seed=seed,
    )
    return ExperimentSpec(
        name=name,
        config=cfg,
        replications=reps,
        out_dir=Path(out_dir),
        **kwargs,
    )


def small_run(system=SystemKind.MIDDLE_DIFFUSIVE, deltas=(-1.0, 0.0, 1.0),
              steps=400, dt=1e-3, seed=99):
    """One simulated replication plus its unfolding (None for skew-elastic)."""
    cfg = SimConfig(
        system=system,
        drifts=DriftSpec(*deltas),
        x0=InitialPositions(1.0, 0.0, -1.0),
        grid=TimeGrid(dt=dt, n_steps=steps),
        seed=seed,
    )
    ranks = simulate_ranks(cfg)
    names = None
    if cfg.system is not SystemKind.SKEW_ELASTIC:
        names = unfold_names(ranks, cfg.epsilon, cli.coin_stream(cfg))
    return cfg, ranks, names


def combined_output(result):
    """stdout plus stderr of a CliRunner result, across click versions."""
    text = result.output
    try:
        text += result.stderr
    except (ValueError, AttributeError):
        pass
    return text


class TestParseTriple:
    def test_parses_with_spaces(self):
        assert cli._parse_triple(" 1, 2.5 , -3e-2", "delta") == (1.0, 2.5, -0.03)

    def test_wrong_count_is_usage_error(self):
        with pytest.raises(click.UsageError, match="three comma-separated"):
            cli._parse_triple("1,2", "delta")

    def test_non_numeric_is_usage_error(self):
        with pytest.raises(click.UsageError, match="could not parse"):
            cli._parse_triple("1,two,3", "x0")


class TestParseConfigFile:
    def test_valid_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# full-line comment\n"
            "\n"
            "system = middle-ballistic\n"
            "delta = -1.0, 0.0, 1.0  # inline comment\n"
            "steps=500\n"
            "dt = 0.002\n"
            "paths = true\n"
            "out = results\n"
        )
        settings = cli._parse_config_file(cfg)
        assert settings == {
            "system": "middle-ballistic",
            "delta": (-1.0, 0.0, 1.0),
            "steps": 500,
            "dt": 0.002,
            "paths": True,
            "out": "results",
        }

    def test_missing_equals_reports_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("steps=10\njust words\n")
        with pytest.raises(click.UsageError, match=r":2: expected key=value"):
            cli._parse_config_file(cfg)

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("velocity=3\n")
        with pytest.raises(click.UsageError, match="unknown key 'velocity'"):
            cli._parse_config_file(cfg)

    def test_bad_int(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("steps=many\n")
        with pytest.raises(click.UsageError, match="could not parse"):
            cli._parse_config_file(cfg)

    def test_bad_bool(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("paths=yes\n")
        with pytest.raises(click.UsageError, match="could not parse"):
            cli._parse_config_file(cfg)


class TestBuildSpec:
    def base_settings(self, **overrides):
        settings = dict(cli._DEFAULTS)
        settings.update(overrides)
        return settings

    def test_valid_settings(self, tmp_path):
        spec = build_spec(self.base_settings(out=str(tmp_path / "o")), "custom")
        assert spec.name == "custom"
        assert spec.config.system is SystemKind.MIDDLE_DIFFUSIVE
        assert spec.config.grid.n_steps == 20_000
        assert spec.replications == 4
        assert spec.out_dir == tmp_path / "o"
        assert spec.emit_full_paths is False

    def test_unknown_system(self):
        with pytest.raises(click.UsageError, match="unknown system"):
            build_spec(self.base_settings(system="quantum"), "x")

    def test_unordered_x0(self):
        with pytest.raises(click.UsageError):
            build_spec(self.base_settings(x0=(0.0, 1.0, -1.0)), "x")

    def test_zero_replications(self):
        with pytest.raises(click.UsageError, match="replications"):
            build_spec(self.base_settings(reps=0), "x")


class TestExperimentSpecValidation:
    def test_empty_name(self, tmp_path):
        with pytest.raises(ValueError, match="nonempty"):
            tiny_spec(tmp_path, name="")

    def test_negative_budget(self, tmp_path):
        with pytest.raises(ValueError, match="failure budget"):
            tiny_spec(tmp_path, failure_budget=-1)


class TestPresets:
    def test_expected_presets(self):
        assert set(PRESETS) == {"fig2-lln", "fig1-paths", "fig3-ballistic"}

    def test_keys_are_recognized_settings(self):
        for preset in PRESETS.values():
            assert set(preset) <= cli._ALL_KEYS - {"experiment"}

    def test_presets_build_valid_specs(self):
        for name, preset in PRESETS.items():
            settings = dict(cli._DEFAULTS)
            settings.update(preset)
            spec = build_spec(settings, name)
            assert spec.name == name

    def test_lln_preset_targets_slow_drifts(self):
        preset = PRESETS["fig2-lln"]
        assert preset["system"] == "middle-diffusive"
        assert preset["delta"] == (0.01, 0.02, 0.03)
        assert preset["reps"] == 32
        assert not preset["paths"]

    def test_path_presets_emit_paths(self):
        assert PRESETS["fig1-paths"]["paths"]
        assert PRESETS["fig1-paths"]["delta"] == (-1.0, 0.0, 1.0)
        assert PRESETS["fig3-ballistic"]["system"] == "middle-ballistic"


class TestWorkerCount:
    def test_defaults_to_cpu_count(self, monkeypatch):
        monkeypatch.delenv("DP_THREADS", raising=False)
        assert 1 <= cli._worker_count(4) <= 4

    def test_env_override_capped_by_replications(self, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "3")
        assert cli._worker_count(2) == 2
        assert cli._worker_count(8) == 3

    def test_zero_rejected(self, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "0")
        with pytest.raises(ValueError, match="DP_THREADS"):
            cli._worker_count(4)

    def test_garbage_rejected(self, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "lots")
        with pytest.raises(ValueError):
            cli._worker_count(4)


class TestCoinStream:
    def test_matches_documented_seed_layout(self):
        cfg, _, _ = small_run(steps=10)
        expected = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(cfg.replication_index, 1))
        )
        assert cli.coin_stream(cfg).random(5) == pytest.approx(expected.random(5), abs=0)

    def test_disjoint_from_path_stream(self):
        cfg, _, _ = small_run(steps=10)
        path_stream = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(cfg.replication_index, 0))
        )
        assert not np.allclose(cli.coin_stream(cfg).random(5), path_stream.random(5))


class TestEmitPaths:
    def test_header_and_first_row(self, tmp_path):
        _, ranks, names = small_run()
        out = tmp_path / "paths.csv"
        emit_paths(ranks, out, names=names)
        lines = out.read_text().splitlines()
        assert lines[0] == "t,R1,R2,R3,G,H,A,Gamma,X1,X2,X3,W"
        # t=0, ranks at x0=(1,0,-1), unit gaps, zero regulators and noise,
        # names equal to ranks before the first collision
        assert lines[1] == "0,1,0,-1,1,1,0,0,1,0,-1,0"
        assert len(lines) == 2 + ranks.grid.n_steps

    def test_roundtrip_is_exact(self, tmp_path):
        _, ranks, names = small_run()
        out = tmp_path / "paths.csv"
        emit_paths(ranks, out, names=names)
        arr = np.loadtxt(out, delimiter=",", skiprows=1)
        assert_array_equal(arr[:, 0], ranks.grid.times())
        assert_array_equal(arr[:, 1], ranks.R1.values)
        assert_array_equal(arr[:, 4], ranks.gaps.G.values)
        assert_array_equal(arr[:, 7], ranks.regulators.Gamma.values)
        assert_array_equal(arr[:, 9], names.X2.values)
        assert_array_equal(arr[:, 11], ranks.w_paths["W"].values)

    def test_rewrite_is_byte_identical(self, tmp_path):
        _, ranks, names = small_run()
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_paths(ranks, first, names=names)
        emit_paths(ranks, second, names=names)
        assert first.read_bytes() == second.read_bytes()

    def test_two_noise_columns(self, tmp_path):
        _, ranks, names = small_run(system=SystemKind.MIDDLE_BALLISTIC)
        out = tmp_path / "paths.csv"
        emit_paths(ranks, out, names=names)
        header = out.read_text().splitlines()[0]
        assert header.endswith("X1,X2,X3,W1,W3")

    def test_no_name_columns_without_unfolding(self, tmp_path):
        _, ranks, _ = small_run(system=SystemKind.SKEW_ELASTIC, deltas=(-1.0, -2.0, -1.0))
        out = tmp_path / "paths.csv"
        emit_paths(ranks, out)
        header = out.read_text().splitlines()[0]
        assert header == "t,R1,R2,R3,G,H,A,Gamma,W"


class TestRunExperiment:
    def test_writes_artifacts_with_schema(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        spec = tiny_spec(tmp_path / "run")
        assert run_experiment(spec) == 0
        doc = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert doc["schema_version"] == "1.0"
        assert doc["experiment"] == "tiny"
        assert doc["config"]["system"] == "middle-diffusive"
        assert doc["config"]["steps"] == 2000
        assert doc["config"]["dt"] == 0.01
        assert doc["config"]["seed"] == 707
        assert doc["config"]["replications"] == 2
        assert doc["stationary"]["value"] is True
        # delta = (-1, 0, 1) gives the closed-form rates (2, 2)
        assert doc["lambda_closed_form"] == pytest.approx([2.0, 2.0])
        assert doc["replication_indices"] == [0, 1]
        assert len(doc["lambda_hat"]) == 2
        assert doc["lambda_hat"][0]["n"] == 2
        assert len(doc["laplace_residuals"]) == len(DEFAULT_ALPHA_PAIRS)
        assert "residual" in doc["laplace_residuals"][0]
        assert doc["ks"]["rates"] == pytest.approx([4.0, 4.0])
        assert doc["corner_constants"]["alpha"] == pytest.approx(0.5903344706, abs=1e-9)
        assert set(doc["lyapunov"]) == {
            "kappa", "a", "epsilon", "log_b", "passed", "max_violation",
            "violating_node",
        }

        reps = json.loads((tmp_path / "run" / "replications.json").read_text())
        assert [r["replication_index"] for r in reps] == [0, 1]
        assert all(r["picard_iterations"] >= 1 for r in reps)
        assert all(r["collision"]["eta"] == pytest.approx(0.3) for r in reps)

    def test_rerun_is_byte_identical(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        run_experiment(tiny_spec(tmp_path / "a"))
        run_experiment(tiny_spec(tmp_path / "b"))
        for name in ("summary.json", "replications.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_thread_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        run_experiment(tiny_spec(tmp_path / "serial", reps=3))
        monkeypatch.setenv("DP_THREADS", "2")
        run_experiment(tiny_spec(tmp_path / "threaded", reps=3))
        for name in ("summary.json", "replications.json"):
            assert (tmp_path / "serial" / name).read_bytes() == (
                tmp_path / "threaded" / name
            ).read_bytes()

    def test_invalid_thread_env_is_usage_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DP_THREADS", "0")
        assert run_experiment(tiny_spec(tmp_path / "run")) == 2
        assert "DP_THREADS" in capsys.readouterr().err
        assert not (tmp_path / "run" / "summary.json").exists()

    def test_nonconvergence_exits_1(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DP_THREADS", "1")

        def explode(cfg):
            raise NonConvergence(7, 0.5, 1e-10)

        monkeypatch.setattr(cli, "simulate_ranks", explode)
        assert run_experiment(tiny_spec(tmp_path / "run")) == 1
        assert "non-convergent" in capsys.readouterr().err
        assert not (tmp_path / "run" / "summary.json").exists()

    def test_failure_budget_drops_bad_replication(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        real_simulate = cli.simulate_ranks

        def flaky(cfg):
            if cfg.replication_index == 0:
                raise NonConvergence(7, 0.5, 1e-10)
            return real_simulate(cfg)

        monkeypatch.setattr(cli, "simulate_ranks", flaky)
        spec = tiny_spec(tmp_path / "run", failure_budget=1)
        assert run_experiment(spec) == 0
        doc = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert doc["replication_indices"] == [1]

    def test_unwritable_output_exits_3(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DP_THREADS", "1")
        blocker = tmp_path / "blocked"
        blocker.write_text("in the way\n")
        spec = tiny_spec(blocker / "sub")
        assert run_experiment(spec) == 3
        assert "i/o error" in capsys.readouterr().err

    def test_skew_elastic_skips_unfolding(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        spec = tiny_spec(
            tmp_path / "run",
            system=SystemKind.SKEW_ELASTIC,
            deltas=(-1.0, -2.0, -1.0),
            dt=1e-3,
            reps=1,
            emit_full_paths=True,
        )
        assert run_experiment(spec) == 0
        header = (tmp_path / "run" / "paths_rep0.csv").read_text().splitlines()[0]
        assert "X1" not in header
        doc = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert doc["config"]["system"] == "skew-elastic"
        assert doc["lambda_closed_form"] == pytest.approx([2.0, 2.0])


class TestMainCommand:
    def test_unknown_experiment_exits_2(self):
        result = CliRunner().invoke(cli.main, ["--experiment", "nope"])
        assert result.exit_code == 2
        assert "unknown experiment" in combined_output(result)

    def test_malformed_delta_exits_2(self):
        result = CliRunner().invoke(cli.main, ["--delta", "1,2"])
        assert result.exit_code == 2
        assert "three comma-separated" in combined_output(result)

    def test_preset_run_with_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        out = tmp_path / "fig1"
        result = CliRunner().invoke(
            cli.main,
            ["--experiment", "fig1-paths", "--steps", "300", "--out", str(out)],
        )
        assert result.exit_code == 0, combined_output(result)
        doc = json.loads((out / "summary.json").read_text())
        assert doc["experiment"] == "fig1-paths"
        assert doc["config"]["steps"] == 300
        assert doc["config"]["delta"] == [-1.0, 0.0, 1.0]
        assert (out / "paths_rep0.csv").exists()

    def test_config_file_with_flag_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        file_out, flag_out = tmp_path / "from-file", tmp_path / "from-flag"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "steps=250\n"
            "reps=1\n"
            "delta=-1.0,0.0,1.0\n"
            "paths=true\n"
            f"out={file_out}\n"
        )
        result = CliRunner().invoke(
            cli.main,
            ["--config", str(cfg), "--dt", "0.02", "--out", str(flag_out)],
        )
        assert result.exit_code == 0, combined_output(result)
        assert not file_out.exists()
        doc = json.loads((flag_out / "summary.json").read_text())
        assert doc["config"]["steps"] == 250
        assert doc["config"]["dt"] == 0.02
        assert (flag_out / "paths_rep0.csv").exists()

    def test_config_file_can_select_preset(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DP_THREADS", "1")
        out = tmp_path / "fig3"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"experiment=fig3-ballistic\nsteps=200\nreps=1\nout={out}\n")
        result = CliRunner().invoke(cli.main, ["--config", str(cfg)])
        assert result.exit_code == 0, combined_output(result)
        doc = json.loads((out / "summary.json").read_text())
        assert doc["experiment"] == "fig3-ballistic"
        assert doc["config"]["system"] == "middle-ballistic"
        assert doc["config"]["steps"] == 200
        header = (out / "paths_rep0.csv").read_text().splitlines()[0]
        assert header.endswith("W1,W3")
