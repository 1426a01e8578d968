"""End-to-end and unit tests for the command-line interface."""

import json
import os

import numpy as np
import pytest

from lyapbound import cli
from lyapbound.cli import (RunConfig, build_parser, main, resolve_config,
                           resolve_metric, resolve_system)
from lyapbound.errors import ConfigError, LyapboundError, TooManyCubes


def parse(*argv):
    return build_parser().parse_args(list(argv))


def run_config(*argv):
    return resolve_config(parse(*argv))


# ---------------------------------------------------------------------------
# configuration resolution
# ---------------------------------------------------------------------------

class TestConfigResolution:
    def test_preset_defaults(self):
        cfg = run_config("cover", "--preset", "henon")
        assert cfg.get("covering", "epsilon") == 0.01
        assert cfg.get("graph", "time_scale") == 2.0
        assert cfg.get("metric", "family") == "henon_polynomial"

    def test_flag_overrides_preset(self):
        cfg = run_config("cover", "--preset", "henon", "--eps", "0.25")
        assert cfg.get("covering", "epsilon") == 0.25

    def test_file_overrides_preset_and_flag_overrides_file(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text('[system]\nname = "henon"\n'
                        '[covering]\nepsilon = 0.5\n'
                        '[rwo]\nladder = [7, 9]\n')
        cfg = run_config("cover", "--config", str(conf))
        assert cfg.get("covering", "epsilon") == 0.5
        assert cfg.get("rwo", "ladder") == [7, 9]
        cfg = run_config("cover", "--config", str(conf), "--eps", "0.25")
        assert cfg.get("covering", "epsilon") == 0.25

    def test_env_dir_and_flag_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path / "env"))
        cfg = run_config("cover", "--preset", "henon")
        assert cfg.out_dir == str(tmp_path / "env")
        cfg = run_config("cover", "--preset", "henon", "--out",
                         str(tmp_path / "flag"))
        assert cfg.out_dir == str(tmp_path / "flag")

    def test_missing_preset_and_config_file(self):
        with pytest.raises(ConfigError, match="system.name"):
            run_config("cover")
        with pytest.raises(ConfigError, match="does not exist"):
            run_config("cover", "--config", "/nonexistent/run.toml")

    def test_bad_toml(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text("[system\nname=")
        with pytest.raises(ConfigError, match="config"):
            run_config("cover", "--config", str(conf))

    def test_unknown_preset_via_file(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text('[system]\nname = "lorenz"\n')
        with pytest.raises(ConfigError, match="unknown preset"):
            run_config("cover", "--config", str(conf))

    def test_ladder_flag_parsing(self):
        cfg = run_config("rwo", "--preset", "henon", "--ladder", "5,50")
        assert cfg.get("rwo", "ladder") == [5, 50]

    def test_hash_stability_and_sensitivity(self):
        a = run_config("cover", "--preset", "henon")
        b = run_config("cover", "--preset", "henon")
        c = run_config("cover", "--preset", "henon", "--eps", "0.25")
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()
        assert a.stamp().startswith("lyapbound=")

    def test_require_missing_field(self):
        cfg = RunConfig({"covering": {}})
        with pytest.raises(ConfigError, match="covering.epsilon"):
            cfg.require("covering", "epsilon")


class TestValidation:
    def test_bad_epsilon(self):
        with pytest.raises(ConfigError, match="covering.epsilon"):
            run_config("cover", "--preset", "henon", "--eps", "-0.5")
        with pytest.raises(ConfigError, match="covering.epsilon"):
            run_config("cover", "--preset", "henon", "--eps", "0")

    def test_bad_box(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text('[system]\nname = "henon"\n'
                        '[covering]\nbox = [[1.0, -1.0], [0.0, 1.0]]\n')
        with pytest.raises(ConfigError, match="covering.box"):
            run_config("cover", "--config", str(conf))

    def test_bad_order_and_mode(self):
        with pytest.raises(ConfigError, match="weights.d"):
            run_config("weights", "--preset", "henon", "--d", "3.5")
        with pytest.raises(ConfigError, match="weights.mode"):
            resolve_config(_with(parse("weights", "--preset", "henon"),
                                 mode="sideways"))

    def test_bad_strategy_and_ladder(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text('[system]\nname = "henon"\n'
                        '[inp]\nstrategy = "XX"\n')
        with pytest.raises(ConfigError, match="inp.strategy"):
            run_config("inp", "--config", str(conf))
        conf.write_text('[system]\nname = "henon"\n'
                        '[rwo]\nladder = [0]\n')
        with pytest.raises(ConfigError, match="rwo.ladder"):
            run_config("rwo", "--config", str(conf))

    def test_missing_checkpoint_file(self):
        with pytest.raises(ConfigError, match="metric.checkpoint"):
            run_config("weights", "--preset", "henon", "--checkpoint",
                       "/nope/params.json")

    def test_plugin_import_failure(self, tmp_path):
        conf = tmp_path / "run.toml"
        conf.write_text('[system]\nname = "no_such_module:factory"\n')
        cfg = run_config("cover", "--config", str(conf))
        with pytest.raises(ConfigError, match="plugin"):
            resolve_system(cfg)


def _with(args, **kw):
    for key, val in kw.items():
        setattr(args, key, val)
    return args


# ---------------------------------------------------------------------------
# system / metric resolution
# ---------------------------------------------------------------------------

class TestResolution:
    def test_henon_bundle(self):
        cfg = run_config("cover", "--preset", "henon")
        bundle = resolve_system(cfg)
        assert bundle.dim == 2 and bundle.field is None
        pts = np.array([[0.1, 0.2]])
        img2, jac2 = bundle.system(pts, 1.0)
        assert img2.shape == (1, 2) and jac2.shape == (1, 2, 2)

    def test_rabinovich_bundle_tau(self):
        cfg = run_config("cover", "--preset", "rabinovich")
        bundle = resolve_system(cfg)
        assert bundle.dim == 3 and bundle.field is not None
        # lag = round((3.52324 / 5) / 1e-3) samples at step 1e-3
        assert bundle.tau_default == pytest.approx(0.705, abs=1e-12)

    def test_metric_euclidean_and_zeros(self):
        cfg = run_config("weights", "--preset", "henon", "--family",
                         "euclidean")
        model, params = resolve_metric(cfg, 2)
        assert model.n_params == 0 and params is None
        cfg = run_config("weights", "--preset", "henon", "--checkpoint",
                         "zeros")
        model, params = resolve_metric(cfg, 2)
        assert model.n_params > 0
        assert not params.any()

    def test_metric_table_checkpoint(self):
        cfg = run_config("weights", "--preset", "henon")
        model, params = resolve_metric(cfg, 2)
        assert model.family == "henon_polynomial"
        assert params is not None and params.any()

    def test_metric_network_checkpoint(self):
        cfg = run_config("weights", "--preset", "rabinovich", "--family",
                         "symmetric_network", "--checkpoint", "network")
        model, params = resolve_metric(cfg, 3)
        assert model.family == "symmetric_network"
        assert model.n_params == len(params)
        assert params.any()

    def test_unknown_family(self):
        cfg = run_config("weights", "--preset", "henon", "--family",
                         "mystery")
        with pytest.raises(ConfigError, match="metric.family"):
            resolve_metric(cfg, 2)


# ---------------------------------------------------------------------------
# subcommand pipelines
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One coarse covering pipeline shared by the command tests."""
    out = str(tmp_path_factory.mktemp("cli"))
    rc = main(["cover", "--preset", "henon", "--eps", "0.25",
               "--grid-density", "8", "--out", out])
    assert rc == 0
    return out


BASE = ["--preset", "henon", "--eps", "0.25"]


class TestPipeline:
    def test_cover_artifacts(self, workdir):
        assert os.path.exists(os.path.join(workdir, "graph.symg"))

    def test_weights_and_rwo(self, workdir):
        assert main(["weights", *BASE, "--out", workdir]) == 0
        assert main(["rwo", *BASE, "--ladder", "5,25", "--t", "25",
                     "--out", workdir]) == 0
        bounds = os.path.join(workdir, "bounds.csv")
        with open(bounds) as fh:
            comment = fh.readline()
            header = fh.readline()
            rows = [line.strip().split(",") for line in fh]
        assert comment.startswith("# lyapbound=")
        assert "config=" in comment
        assert header.strip() == "t,upper_bound,argmax_terminal_vertex"
        assert [int(r[0]) for r in rows] == [5, 25]
        # longer paths can only sharpen the bound
        assert float(rows[1][1]) <= float(rows[0][1]) + 1e-12
        assert os.path.exists(os.path.join(workdir, "cycle.csv"))

    def test_weights_rerun_is_byte_identical(self, workdir):
        path = os.path.join(workdir, "weights.csv")
        with open(path, "rb") as fh:
            first = fh.read()
        assert main(["weights", *BASE, "--out", workdir]) == 0
        with open(path, "rb") as fh:
            assert fh.read() == first

    def test_rwo_without_graph(self, tmp_path):
        rc = main(["rwo", *BASE, "--out", str(tmp_path / "empty")])
        assert rc == 2

    def test_export_graph_and_weights(self, workdir):
        assert main(["export", *BASE, "--what", "graph",
                     "--out", workdir]) == 0
        with open(os.path.join(workdir, "edges.csv")) as fh:
            assert fh.readline().startswith("# lyapbound=")
            assert fh.readline().strip() == "src,dst"
        assert main(["export", *BASE, "--what", "weights",
                     "--out", workdir]) == 0

    def test_export_missing_artifact(self, tmp_path):
        rc = main(["export", *BASE, "--what", "checkpoint",
                   "--out", str(tmp_path / "empty")])
        assert rc == 2

    def test_inp_euclidean_rejected(self, workdir):
        rc = main(["inp", *BASE, "--family", "euclidean", "--iterations",
                   "1", "--out", workdir])
        assert rc == 2

    def test_inp_run_and_resume(self, workdir):
        rc = main(["inp", *BASE, "--checkpoint", "zeros", "--iterations",
                   "2", "--out", workdir])
        assert rc == 0
        history = os.path.join(workdir, "history.csv")
        with open(history) as fh:
            assert fh.readline().startswith("# lyapbound=")
            header = fh.readline().strip()
        assert header.split(",")[:3] == ["iter", "max_path_cycle_weight",
                                         "optimized_ref_weight"]
        assert os.path.exists(os.path.join(workdir,
                                           "checkpoint_final.json"))
        rc = main(["inp", *BASE, "--checkpoint", "zeros", "--iterations",
                   "3", "--resume", "--out", workdir])
        assert rc == 0
        with open(history) as fh:
            rows = [ln for ln in fh if ln[0].isdigit()]
        assert int(rows[-1].split(",")[0]) == 3

    def test_inp_resume_without_state(self, tmp_path):
        rc = main(["inp", *BASE, "--resume", "--out",
                   str(tmp_path / "empty")])
        assert rc == 2


class TestAnalyze:
    def test_henon_report(self, tmp_path):
        out = str(tmp_path)
        assert main(["analyze", "--preset", "henon", "--out", out]) == 0
        with open(os.path.join(out, "analyze.json")) as fh:
            doc = json.load(fh)
        assert doc["lambda1"] == pytest.approx(0.6542706, abs=1e-6)
        assert doc["dimension"] == pytest.approx(1.3520909, abs=1e-6)

    def test_rabinovich_report(self, tmp_path):
        out = str(tmp_path)
        assert main(["analyze", "--preset", "rabinovich", "--out",
                     out]) == 0
        with open(os.path.join(out, "analyze.json")) as fh:
            doc = json.load(fh)
        labels = [e["label"] for e in doc["equilibria"]]
        assert labels == ["q0", "q+", "q-"]
        assert doc["equilibria"][0]["lambda1"] == pytest.approx(0.17029,
                                                                abs=1e-4)
        orbit = doc["orbit"]
        assert orbit["lambda1"] == pytest.approx(0.48265, abs=5e-4)
        assert orbit["dimension"] == pytest.approx(2.09687, abs=5e-4)
        assert orbit["residual"] < 1e-10

    def test_floquet_csv(self, tmp_path):
        out = str(tmp_path)
        assert main(["floquet", "--preset", "rabinovich", "--samples",
                     "16", "--out", out]) == 0
        path = os.path.join(out, "floquet.csv")
        with open(path) as fh:
            fh.readline()
            header = fh.readline().strip().split(",")
            n_rows = sum(1 for _ in fh)
        assert header == ["time", "q_0", "q_1", "q_2", "p_00", "p_01",
                          "p_02", "p_11", "p_12", "p_22"]
        assert n_rows == 17

    def test_floquet_rejects_maps(self, tmp_path):
        rc = main(["floquet", "--preset", "henon", "--out",
                   str(tmp_path)])
        assert rc == 2


# ---------------------------------------------------------------------------
# exit-code mapping
# ---------------------------------------------------------------------------

class TestExitCodes:
    def test_config_error_is_2(self):
        assert main(["cover", "--preset", "henon", "--eps", "-1"]) == 2

    def test_resource_cap_is_4(self, monkeypatch):
        def boom(cfg, args):
            raise TooManyCubes("covering too large")
        monkeypatch.setitem(cli.COMMANDS, "cover", boom)
        assert main(["cover", "--preset", "henon"]) == 4

    def test_memory_error_is_4(self, monkeypatch):
        def boom(cfg, args):
            raise MemoryError()
        monkeypatch.setitem(cli.COMMANDS, "cover", boom)
        assert main(["cover", "--preset", "henon"]) == 4

    def test_numeric_failure_is_3(self, monkeypatch):
        def boom(cfg, args):
            raise LyapboundError("no admissible path")
        monkeypatch.setitem(cli.COMMANDS, "cover", boom)
        assert main(["cover", "--preset", "henon"]) == 3

    def test_linalg_failure_is_3(self, monkeypatch):
        def boom(cfg, args):
            raise np.linalg.LinAlgError("singular")
        monkeypatch.setitem(cli.COMMANDS, "cover", boom)
        assert main(["cover", "--preset", "henon"]) == 3
