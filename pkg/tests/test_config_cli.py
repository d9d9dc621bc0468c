import json

import pytest

from d3gm.cli import EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, run
from d3gm.commands import COMMANDS
from d3gm.commands.lyapunov import build_q
from d3gm.commands.simulate import checkpoint_steps
from d3gm.config import (
    build_params,
    build_schedule,
    build_volatility,
    build_x0,
    int_list,
    load_config,
    opt_float,
    pair_list,
    parse_config_text,
    parse_overrides,
)
from d3gm.errors import AlignmentError, ConfigError
from d3gm.schedules import DecoupledVolatility

CONFIG = """
# forward process
[schedule]
kind = linear   # trailing comment
theta = 2.5

[process]
mu = 1.0, -1.0
d = 2
empty =
"""

SMALL = ["--mc.paths", "50", "--mc.steps", "20"]


class TestConfigText:
    def test_sections_and_values(self):
        out = parse_config_text(CONFIG)
        assert out == {"schedule": {"kind": "linear", "theta": "2.5"}, "process": {"mu": "1.0, -1.0", "d": "2", "empty": ""}}

    def test_case_folded(self):
        assert parse_config_text("[MC]\nPaths = 10") == {"mc": {"paths": "10"}}

    @pytest.mark.parametrize(
        "text",
        [
            "[a]\nx = 1\n[a]\ny = 2\n",
            "[a]\nx = 1\nx = 2\n",
            "x = 1\n[a]\n",
            "[a\nx = 1\n",
            "[a]\n= 1\n",
        ],
    )
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)


class TestValueParsers:
    def test_int_list_range(self):
        assert int_list("0..4") == [0, 1, 2, 3, 4]
        assert int_list("3, 5 7") == [3, 5, 7]

    def test_pair_list(self):
        assert pair_list("0.1:0.5, 0.2:0.7") == [(0.1, 0.5), (0.2, 0.7)]

    def test_opt_float(self):
        assert opt_float("auto") is None
        assert opt_float(" ") is None
        assert opt_float("2.5") == 2.5


class TestOverrides:
    def test_forms(self):
        tokens = ["--schedule.kind", "log", "--mc.paths=100", "--seed", "7", "--out", "x", "--train.loss-weight-mode", "uniform"]
        assert parse_overrides(tokens) == [
            ("schedule", "kind", "log"),
            ("mc", "paths", "100"),
            ("mc", "seed", "7"),
            ("output", "dir", "x"),
            ("train", "loss_weight_mode", "uniform"),
        ]

    @pytest.mark.parametrize("tokens", [["stray"], ["--mc.paths"], ["--paths", "3"]])
    def test_malformed(self, tokens):
        with pytest.raises(ConfigError):
            parse_overrides(tokens)


class TestLoadConfig:
    def test_defaults(self):
        cfg = load_config("simulate")
        assert cfg.schedule.kind == "cosine"
        assert cfg.mc.paths == 10000 and cfg.mc.seed == 42
        assert cfg.compare.seeds == list(range(10))
        assert cfg.get("process", "lambda") == 10.0

    def test_defaults_not_shared(self):
        a = load_config("simulate")
        a.values["mc"]["checkpoints"].append(0.5)
        assert load_config("simulate").mc.checkpoints == []

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[schedule]\nkind = linear\ntheta = 2.5\n[process]\nmu = 1.0, -1.0\nd = 2\n", encoding="utf-8")
        cfg = load_config("simulate", path, [("schedule", "theta", "4")])
        assert cfg.schedule.kind == "linear" and cfg.schedule.theta == 4.0
        params = build_params(cfg)
        assert params.mu.tolist() == [1.0, -1.0]
        assert build_x0(cfg) == [2.0, 2.0]
        assert build_schedule(cfg).theta == 4.0

    @pytest.mark.parametrize(
        "override",
        [("mc", "paths", "many"), ("mc", "nope", "1"), ("nowhere", "x", "1"), ("train", "output_scaling", "maybe")],
    )
    def test_bad_values(self, override):
        with pytest.raises(ConfigError):
            load_config("simulate", overrides=[override])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config("simulate", tmp_path / "absent.cfg")

    def test_vector_length_checked(self):
        cfg = load_config("simulate", overrides=[("process", "d", "3"), ("process", "mu", "1, 2")])
        with pytest.raises(ConfigError):
            build_params(cfg)

    def test_volatility_modes(self):
        cfg = load_config("simulate", overrides=[("process", "volatility", "decoupled"), ("process", "sigma", "3")])
        vol = build_volatility(cfg, build_params(cfg))
        assert isinstance(vol, DecoupledVolatility) and vol.sigma == 3.0
        cfg = load_config("simulate", overrides=[("process", "volatility", "loose")])
        with pytest.raises(ConfigError):
            build_volatility(cfg, build_params(cfg))

    def test_hash_tracks_values(self):
        a = load_config("simulate")
        b = load_config("simulate", overrides=[("mc", "seed", "43")])
        assert a.sha256() == load_config("simulate").sha256()
        assert a.sha256() != b.sha256()


class TestCommandHelpers:
    def test_checkpoints_on_grid(self):
        assert checkpoint_steps([], 1.0, 4) == [0, 1, 2, 3, 4]
        assert checkpoint_steps([1.0, 0.5, 0.5], 1.0, 10) == [5, 10]
        with pytest.raises(AlignmentError):
            checkpoint_steps([0.33], 1.0, 10)

    def test_build_q(self):
        assert build_q([], 2).tolist() == [[1.0, 0.0], [0.0, 1.0]]
        assert build_q([2.0, 3.0], 2).tolist() == [[2.0, 0.0], [0.0, 3.0]]
        with pytest.raises(ConfigError):
            build_q([1.0, 2.0, 3.0], 2)

    def test_registry(self):
        assert set(COMMANDS) == {"simulate", "cocycle", "tdd", "train-and-restore", "compare", "lyapunov", "show-config"}
        assert all(cls.NAME == name for name, cls in COMMANDS.items())


class TestCli:
    def test_show_config(self, capsys):
        assert run(["show-config", "--schedule", "log"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["command"] == "show-config"
        assert out["schedule"]["kind"] == "log"

    def test_simulate_outputs(self, tmp_path):
        out = tmp_path / "a"
        assert run(["simulate", *SMALL, "--out", str(out)]) == EXIT_OK
        for name in ("ensemble.csv", "marginal.csv", "summary.json", "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "simulate"
        assert {o["path"] for o in manifest["outputs"]} == {"ensemble.csv", "marginal.csv", "summary.json"}
        assert all(len(o["sha256"]) == 64 for o in manifest["outputs"])
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["paths"] == 50 and summary["steps"] == 20

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["simulate", *SMALL, "--out", str(a)]) == EXIT_OK
        assert run(["simulate", *SMALL, "--out", str(b)]) == EXIT_OK
        for name in ("ensemble.csv", "marginal.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_trajectories(self, tmp_path):
        assert run(["simulate", *SMALL, "--mc.trajectories", "2", "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "trajectories.csv").exists()

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[mc]\npaths = 40\nsteps = 10\n[schedule]\nkind = constant\n", encoding="utf-8")
        assert run(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["config"]["schedule"]["kind"] == "constant"
        assert manifest["config"]["mc"]["paths"] == 40

    @pytest.mark.parametrize(
        "argv",
        [
            ["simulate", "--mc.paths", "abc"],
            ["simulate", "--bogus.key", "1"],
            ["simulate", "--mc.checkpoints", "0.33", "--mc.steps", "10", "--mc.paths", "10"],
            ["simulate", "--mc.paths", "1", "--mc.steps", "10"],
        ],
    )
    def test_validation_exit(self, argv, tmp_path):
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_VALIDATION

    def test_numeric_exit(self, tmp_path):
        argv = ["simulate", "--schedule", "constant", "--schedule.theta", "1e300", "--mc.steps", "4", "--mc.paths", "10"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_NUMERIC

    def test_lyapunov(self, tmp_path):
        argv = ["lyapunov", "--schedule", "constant", "--mc.paths", "200", "--mc.steps", "20", "--lyapunov.resolution", "5"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_OK
        report = json.loads((tmp_path / "lyapunov.json").read_text(encoding="utf-8"))
        assert report["verdict"] == "violated"
        assert (tmp_path / "expected_v.csv").exists()

    def test_cocycle(self, tmp_path):
        argv = ["cocycle", "--schedule", "constant", "--mc.steps", "50", "--cocycle.paths", "5", "--cocycle.pullback", "-2"]
        argv += ["--cocycle.pullback_paths", "20", "--cocycle.pairs", "0.1:0.5, 0.2:0.9"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_OK
        report = json.loads((tmp_path / "cocycle.json").read_text(encoding="utf-8"))
        assert report["verdict"] == "holds"
        assert (tmp_path / "pullback.json").exists()

    def test_compare(self, tmp_path):
        argv = ["compare", "--compare.runs", "20", "--compare.seeds", "0..1", "--compare.steps", "20"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
        assert set(summary["mean_mse"]) == {"d3gm", "ou", "coef-decoupled", "sgm-vp"}
        assert "d3gm_wins_vs_ou" in summary
        assert len((tmp_path / "table.csv").read_text(encoding="utf-8").splitlines()) == 1 + 4 * 2

    def test_unknown_compare_variant(self, tmp_path):
        assert run(["compare", "--compare.variants", "d3gm, ddpm", "--out", str(tmp_path)]) == EXIT_VALIDATION

    def test_tdd(self, tmp_path):
        argv = ["tdd", "--tdd.runs", "20", "--mc.paths", "100", "--mc.steps", "20", "--tdd.t_grid", "0.5, 1", "--tdd.taus", "1, 2"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_OK
        result = json.loads((tmp_path / "tdd.json").read_text(encoding="utf-8"))
        assert "bound" in result and "I0" in result
        assert len((tmp_path / "kl_tau.csv").read_text(encoding="utf-8").splitlines()) == 3

    def test_tdd_default_toy_is_informative(self, tmp_path):
        argv = ["tdd", "--tdd.runs", "200", "--mc.paths", "100", "--mc.steps", "50", "--tdd.t_grid", "1", "--tdd.taus", "2"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_OK
        result = json.loads((tmp_path / "tdd.json").read_text(encoding="utf-8"))
        assert result["x0"] == [20.0] and result["C"] == 1.0
        assert not result["vacuous"] and result["signed"] == pytest.approx(result["bound"])
        assert result["exceed_fraction"] >= 0.93
        assert result["empirical_lhs"] > result["bound"]

    def test_output_formats(self, tmp_path):
        assert run(["simulate", *SMALL, "--output.formats", "json", "--out", str(tmp_path)]) == EXIT_OK
        assert not (tmp_path / "ensemble.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
        assert [o["path"] for o in manifest["outputs"]] == ["summary.json"]
        assert run(["simulate", *SMALL, "--output.formats", "csv, xml", "--out", str(tmp_path / "x")]) == EXIT_VALIDATION

    def test_single_step_grid(self, tmp_path):
        assert run(["simulate", "--mc.paths", "20", "--mc.steps", "1", "--out", str(tmp_path)]) == EXIT_OK
        lines = (tmp_path / "marginal.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,mean_0,variance"
        assert [line.split(",")[0] for line in lines[1:]] == ["0.0", "1.0"]

    def test_cosine_cocycle_violated(self, tmp_path):
        argv = ["cocycle", "--schedule", "cosine", "--mc.steps", "50", "--cocycle.paths", "3", "--cocycle.pullback", ""]
        argv += ["--cocycle.pairs", "0.1:0.5, 0.2:0.9"]
        assert run([*argv, "--out", str(tmp_path)]) == EXIT_OK
        report = json.loads((tmp_path / "cocycle.json").read_text(encoding="utf-8"))
        assert report["verdict"] == "violated"
        assert len(report["pairs"]) == 2
        assert not (tmp_path / "pullback.json").exists()
