from pathlib import Path

import numpy as np
import pytest

from main import cli_main
from modules.data.checkpoint import load_model
from modules.data.dataset import Dataset, load_npz, save_npz
from modules.data.metrics import read_metrics_csv
from modules.errors import ConfigError, NumericError, exit_code_for
from modules.tensor.ops import one_hot
from runner import ExperimentRunner

TOY = """\
method=block-admm
seed=0
epochs=5
verbose=false
layers=4,4,4
activation=linear
z_optimizer=sgd
theta_optimizer=sgd
z_lr=0.1
theta_lr=0.1
batch_size=32
methods=block-admm,adam,online
"""


@pytest.fixture
def toy_config(tmp_path) -> Path:
    path = tmp_path / "toy.env"
    path.write_text(TOY, encoding="utf-8")
    return path


def _without_clock(path: Path):
    return [
        (r.epoch, r.train_loss, r.test_accuracy, r.total_coupling_residual)
        for r in read_metrics_csv(path)
    ]


class TestTrain:
    def test_writes_artifacts(self, toy_config, tmp_path):
        out = tmp_path / "run"
        assert cli_main(["train", "--config", str(toy_config), "--out", str(out)]) == 0
        records = read_metrics_csv(out / "metrics.csv")
        assert [r.epoch for r in records] == [1, 2, 3, 4, 5]
        assert all(r.wall_clock_seconds >= 0.0 for r in records)
        assert (out / "model.ckpt").exists()
        assert "layers=4,4,4" in (out / "config.env").read_text().splitlines()

    def test_same_seed_same_metrics(self, toy_config, tmp_path):
        for name in ("a", "b"):
            cli_main(["train", "--config", str(toy_config), "--out", str(tmp_path / name)])
        assert _without_clock(tmp_path / "a" / "metrics.csv") == _without_clock(
            tmp_path / "b" / "metrics.csv"
        )

    def test_output_path_from_environment(self, toy_config, tmp_path, monkeypatch):
        monkeypatch.setenv("BLOCKADMM_OUTPUT_PATH", str(tmp_path / "env-out"))
        assert cli_main(["train", "--config", str(toy_config)]) == 0
        assert (tmp_path / "env-out" / "metrics.csv").exists()

    def test_convergence_writes_trace(self, tmp_path):
        config = tmp_path / "conv.env"
        config.write_text(
            TOY.replace("method=block-admm", "method=convergence")
            + "inner_cap=5\neps0=1e-12\n",
            encoding="utf-8",
        )
        with pytest.warns(RuntimeWarning):
            code = cli_main(["train", "--config", str(config), "--out", str(tmp_path / "c")])
        assert code == 0
        lines = (tmp_path / "c" / "trace.csv").read_text().splitlines()
        assert len(lines) == 1 + 5
        assert read_metrics_csv(tmp_path / "c" / "metrics.csv")[0].rho == 1.0


class TestEval:
    def test_untrained_signal_gives_chance_accuracy(self, tmp_path, balanced_data):
        gen = np.random.default_rng(11)
        test = Dataset(gen.normal(size=(20, 1000)), one_hot(np.arange(1000) % 10, 10))
        save_npz(tmp_path / "train.npz", balanced_data)
        save_npz(tmp_path / "test.npz", test)
        config = tmp_path / "noise.env"
        config.write_text(
            "method=adam\nepochs=2\nverbose=false\nlayers=20,16,10\n"
            f"dataset=npz\ntrain_npz={tmp_path / 'train.npz'}\n"
            f"test_npz={tmp_path / 'test.npz'}\n",
            encoding="utf-8",
        )
        out = tmp_path / "run"
        assert cli_main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert cli_main(
            ["eval", "--config", str(config), "--checkpoint", str(out / "model.ckpt")]
        ) == 0

        model = load_model(out / "model.ckpt")
        data = load_npz(tmp_path / "test.npz")
        acc = np.mean(np.argmax(model.predict(data.X), axis=0) == data.labels)
        assert acc == pytest.approx(0.10, abs=0.03)

    def test_missing_checkpoint(self, toy_config, tmp_path):
        code = cli_main(
            ["eval", "--config", str(toy_config), "--checkpoint", str(tmp_path / "none.ckpt")]
        )
        assert code == 2


class TestBench:
    def test_summary_and_per_seed_files(self, toy_config, tmp_path):
        out = tmp_path / "bench"
        code = cli_main(
            ["bench", "--config", str(toy_config), "--out", str(out), "--repeats", "2"]
        )
        assert code == 0
        for method in ("block-admm", "adam", "online"):
            for seed in (0, 1):
                assert (out / f"{method}_seed{seed}.csv").exists()
        rows = (out / "summary.csv").read_text().splitlines()
        assert rows[0].startswith("method,epoch,mean_test_accuracy")
        assert len(rows) == 1 + 3 * 5


class TestNmfProject:
    def test_scores_header(self, tmp_path):
        config = tmp_path / "facto.env"
        config.write_text(
            "method=deepfacto\nepochs=2\nverbose=false\nlayers=12,8,3\n"
            "rank=3\nnmf_position=1\npretrain_iters=10\nbatch_size=16\n"
            "synth_kind=low-rank-nonneg\nsynth_features=12\nsynth_samples=40\n"
            "synth_classes=3\nsynth_rank=3\nsynth_test=10\n",
            encoding="utf-8",
        )
        out = tmp_path / "facto"
        assert cli_main(["train", "--config", str(config), "--out", str(out)]) == 0
        code = cli_main(
            [
                "nmf-project",
                "--config",
                str(config),
                "--out",
                str(out),
                "--checkpoint",
                str(out / "model.ckpt"),
            ]
        )
        assert code == 0
        lines = (out / "scores.csv").read_text().splitlines()
        assert lines[0] == "factor," + ",".join(str(i) for i in range(10))
        assert len(lines) == 1 + 3

    def test_plain_checkpoint_is_refused(self, toy_config, tmp_path):
        out = tmp_path / "run"
        cli_main(["train", "--config", str(toy_config), "--out", str(out)])
        code = cli_main(
            ["nmf-project", "--config", str(toy_config), "--checkpoint", str(out / "model.ckpt")]
        )
        assert code == 1


class TestGenSynth:
    def test_writes_both_splits(self, tmp_path):
        config = tmp_path / "synth.env"
        config.write_text("synth_samples=40\nsynth_test=10\n", encoding="utf-8")
        out = tmp_path / "data"
        assert cli_main(["gen-synth", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "synth_train.npz").exists() and (out / "synth_test.npz").exists()


class TestErrors:
    def test_unknown_key(self, tmp_path, capsys):
        config = tmp_path / "bad.env"
        config.write_text("learning_rate=0.1\n", encoding="utf-8")
        assert cli_main(["train", "--config", str(config)]) == 1
        assert "learning_rate" in capsys.readouterr().out

    def test_missing_data(self, tmp_path):
        config = tmp_path / "npz.env"
        config.write_text(
            f"layers=4,4,4\ndataset=npz\ntrain_npz={tmp_path / 'absent.npz'}\n",
            encoding="utf-8",
        )
        assert cli_main(["train", "--config", str(config), "--out", str(tmp_path)]) == 2

    def test_missing_idx_files(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BLOCKADMM_DATA_PATH", str(tmp_path))
        config = tmp_path / "idx.env"
        config.write_text("dataset=idx\nepochs=1\n", encoding="utf-8")
        assert cli_main(["train", "--config", str(config), "--out", str(tmp_path)]) == 2

    @pytest.mark.parametrize("argv", [["frobnicate"], ["eval"], ["bench", "--repeats", "x"]])
    def test_usage_errors(self, argv):
        assert cli_main(argv) == 1

    def test_bad_repeats(self, toy_config, tmp_path):
        argv = ["bench", "--config", str(toy_config), "--out", str(tmp_path), "--repeats", "0"]
        assert cli_main(argv) == 1

    @pytest.mark.parametrize(
        "error, code",
        [
            (ConfigError("bad"), 1),
            (FileNotFoundError("gone"), 2),
            (NumericError("nan"), 3),
            (FloatingPointError("overflow"), 3),
            (KeyError("lost"), 4),
            (RuntimeError("boom"), 4),
        ],
    )
    def test_exit_code_mapping(self, error, code):
        assert exit_code_for(error) == code

    def test_unexpected_failure_has_its_own_code(self, toy_config, tmp_path, monkeypatch):
        def fail(runner):
            raise KeyError("lost")

        monkeypatch.setattr(ExperimentRunner, "train", fail)
        assert cli_main(["train", "--config", str(toy_config), "--out", str(tmp_path)]) == 4
