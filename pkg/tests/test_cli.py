"""End-to-end tests of the ``deepdgl`` command line."""

import pandas as pd
import pytest

from deepdgl import __version__
from deepdgl.cli import EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, EXIT_USAGE, run_command
from deepdgl.config import SEED_ENV_VAR
from deepdgl.errors import DivergenceError
from deepdgl.training import Checkpoint

SMALL_RUN = """\
# small architecture for a fast run
T = 8
tau = 3
epochs = 1
model.conv_kernels = [3, 2]
model.conv_channels = [4, 4]
model.encoder_dims = [4, 4]
model.encoder_heads = [2, 2]
model.decoder_conv_kernels = [2, 2]
model.decoder_conv_channels = [4, 4]
model.decoder_dims = [4, 1]
model.decoder_heads = [2, 1]
model.ffn_ratio = 2
model.codebook_size = 4
model.context_dim = 2
model.positives = 2
model.negatives = 4
model.hyper_hidden = 4
model.discriminator_hidden = 4
train.b_h = 8
train.b_v = 4
data.stride = 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    panel = root / "panel"
    assert run_command(
        ["synth", "--out", str(panel), "--n-series", "12", "--n-steps", "80", "--period", "8"]
    ) == EXIT_OK
    config = root / "small.cfg"
    config.write_text(SMALL_RUN, encoding="utf-8")
    return root, panel, config


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


def _data_args(panel):
    return ["--values", str(panel / "values.csv"), "--covariates", str(panel / "covariates.csv")]


@pytest.fixture(scope="module")
def trained(workspace):
    root, panel, config = workspace
    out = root / "run"
    code = run_command(["train", *_data_args(panel), "--config", str(config), "--out", str(out)])
    assert code == EXIT_OK
    return out


class TestUsage:
    def test_no_subcommand(self, capsys):
        assert run_command([]) == EXIT_USAGE
        assert "subcommand is required" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert run_command(["synth", "--out", "x", "--bogus"]) == EXIT_USAGE

    def test_missing_required(self):
        assert run_command(["train", "--out", "x"]) == EXIT_USAGE

    def test_bad_config_value(self, workspace, tmp_path):
        _, panel, config = workspace
        args = ["train", *_data_args(panel), "--config", str(config), "--out", str(tmp_path)]
        assert run_command([*args, "--epochs", "0"]) == EXIT_USAGE


class TestSynth:
    def test_writes_panel(self, workspace):
        _, panel, _ = workspace
        values = pd.read_csv(panel / "values.csv")
        assert values.shape == (12, 81)
        assert list(pd.read_csv(panel / "covariates.csv").columns) == ["t", "c0", "c1"]
        assert len(pd.read_csv(panel / "assignments.csv")) == 12
        manifest = (panel / "run_manifest.txt").read_text(encoding="utf-8")
        assert 'command = "synth"' in manifest
        assert "synth.n_series = 12" in manifest


class TestTrain:
    def test_outputs(self, trained):
        assert (trained / "checkpoint.ckpt").exists()
        assert len(pd.read_csv(trained / "training_curve.csv")) == 1
        manifest = (trained / "run_manifest.txt").read_text(encoding="utf-8")
        assert "model.input_length = 8  # file" in manifest

    def test_checkpoint_records_split(self, trained):
        ckpt = Checkpoint.load(trained / "checkpoint.ckpt")
        assert ckpt.manifest["split.T"] == 8
        assert len(ckpt.manifest["split.inductive_test_series"]) == 2
        assert ckpt.model_config.codebook_size == 4

    def test_missing_values_file(self, workspace, tmp_path):
        _, _, config = workspace
        args = ["--values", str(tmp_path / "missing.csv"), "--config", str(config)]
        assert run_command(["train", *args, "--out", str(tmp_path)]) == EXIT_DATA

    def test_divergence_exit_code(self, workspace, tmp_path, monkeypatch):
        _, panel, config = workspace

        def diverge(self):
            raise DivergenceError("Training loss is not finite", {"epoch": 0})

        monkeypatch.setattr("deepdgl.cli.Trainer.fit", diverge)
        args = ["train", *_data_args(panel), "--config", str(config), "--out", str(tmp_path)]
        assert run_command(args) == EXIT_DIVERGENCE


class TestEval:
    @pytest.mark.parametrize("mode", ["transductive", "inductive"])
    def test_writes_metrics(self, workspace, trained, mode, capsys):
        _, panel, _ = workspace
        out = trained / f"{mode}.csv"
        args = ["eval", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        assert run_command([*args, "--mode", mode, "--out", str(out)]) == EXIT_OK
        assert f"mode,{mode}" in out.read_text(encoding="utf-8").splitlines()
        assert "WAPE=" in capsys.readouterr().out
        manifest = (trained / f"{mode}.manifest.txt").read_text(encoding="utf-8")
        assert f'mode = "{mode}"' in manifest
        assert "data.values_path = " in manifest
        assert "train.seed = 0" in manifest

    def test_variant_mismatch(self, workspace, trained, tmp_path):
        _, panel, _ = workspace
        args = ["eval", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        out = ["--out", str(tmp_path / "m.csv")]
        assert run_command([*args, "--variant", "global_only", *out]) == EXIT_USAGE


class TestForecastAndPlot:
    def _future_covariates(self, tmp_path, start=80):
        rows = "".join(f"{t},{0.1 * i},{0.2 * i}\n" for i, t in enumerate(range(start, start + 3)))
        path = tmp_path / "future.csv"
        path.write_text("t,c0,c1\n" + rows, encoding="utf-8")
        return path

    def test_forecast_past_the_end(self, workspace, trained, tmp_path):
        _, panel, _ = workspace
        out = tmp_path / "forecast.csv"
        ckpt_path = trained / "checkpoint.ckpt"
        args = ["forecast", *_data_args(panel), "--checkpoint", str(ckpt_path)]
        future = ["--future-covariates", str(self._future_covariates(tmp_path))]
        assert run_command([*args, *future, "--out", str(out)]) == EXIT_OK
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["series_id", "step", "forecast"]
        assert len(frame) == 12 * 3
        assert sorted(set(frame["step"])) == [80, 81, 82]

        manifest = (tmp_path / "forecast.manifest.txt").read_text(encoding="utf-8")
        assert 'command = "forecast"' in manifest
        assert f'checkpoint.sha256 = "{Checkpoint.load(ckpt_path).checksum()}"' in manifest
        assert f'version = "{__version__}"' in manifest

    def test_forecast_needs_future_covariates(self, workspace, trained, tmp_path, capsys):
        _, panel, _ = workspace
        args = ["forecast", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        assert run_command([*args, "--out", str(tmp_path / "f.csv")]) == EXIT_DATA
        assert "--future-covariates" in capsys.readouterr().err

    def test_future_covariates_must_follow_the_data(self, workspace, trained, tmp_path):
        _, panel, _ = workspace
        args = ["forecast", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        future = ["--future-covariates", str(self._future_covariates(tmp_path, start=77))]
        assert run_command([*args, *future, "--out", str(tmp_path / "f.csv")]) == EXIT_DATA

    def test_forecast_extends_phase_covariates(self, workspace, trained, tmp_path):
        _, panel, _ = workspace
        out = tmp_path / "forecast.csv"
        args = ["forecast", "--values", str(panel / "values.csv")]
        args += ["--checkpoint", str(trained / "checkpoint.ckpt"), "--out", str(out)]
        assert run_command(args) == EXIT_OK
        assert sorted(set(pd.read_csv(out)["step"])) == [80, 81, 82]

    def test_forecast_unknown_series(self, workspace, trained, tmp_path):
        _, panel, _ = workspace
        args = ["forecast", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        out = ["--out", str(tmp_path / "f.csv")]
        assert run_command([*args, "--series", "no-such-series", *out]) == EXIT_DATA

    def test_plot(self, workspace, trained, tmp_path, capsys):
        _, panel, _ = workspace
        args = ["plot", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        assert run_command([*args, "--series", "0", "--out", str(tmp_path)]) == EXIT_OK
        svgs = list(tmp_path.glob("*.svg"))
        assert len(svgs) == 1
        assert svgs[0].read_text(encoding="utf-8").lstrip().startswith("<?xml")
        manifest = (tmp_path / "run_manifest.txt").read_text(encoding="utf-8")
        assert 'command = "plot"' in manifest
        assert "series = [0]" in manifest

    def test_plot_index_out_of_range(self, workspace, trained, tmp_path, capsys):
        _, panel, _ = workspace
        args = ["plot", *_data_args(panel), "--checkpoint", str(trained / "checkpoint.ckpt")]
        assert run_command([*args, "--series", "30", "--out", str(tmp_path)]) == EXIT_DATA
        assert "out of range" in capsys.readouterr().err
