"""
命令行端到端：pretrain -> train -> export -> sweep

使用合成数据和 16x16 的自定义小网络。
"""

import json

import pandas as pd
import pytest

from main import EXIT_CONFIG, EXIT_IO, EXIT_OK, main

TINY_RUN = """
[architecture]
pipeline = custom
n_classes = 4
image_size = 16
extractor_layers = conv out=3 k=3; relu
classifier_layers = conv out=4 k=3; relu; pool k=2 s=2; flatten; dense units=4; softmax

[data]
synthetic = true
synthetic_per_class = 12
synthetic_test_per_class = 6
majority_classes = 0, 1
imbalance_ratio = 3

[train]
iterations = 4
batch_size = 4
z_dim = 8
n_critic = 2
n_c1 = 2
n_c2 = 2
n_w = 2
calibration_size = 16
log_every = 1
lr_e = 0.001
lr_c = 0.001
pretrain_epochs = 1

[export]
n_real = 8
n_fake = 6
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """写好配置并完成一次预训练"""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.ini"
    config.write_text(TINY_RUN, encoding="utf-8")
    assert main(["pretrain", "--config", str(config), "--out", str(root / "source")]) == EXIT_OK
    return root, config, root / "source" / "source.ckpt"


@pytest.fixture(scope="module")
def dfg_run(workspace):
    root, config, source = workspace
    out = root / "dfg"
    code = main(["train", "--config", str(config), "--mode", "dfg", "--source", str(source), "--out", str(out)])
    assert code == EXIT_OK
    return out


class TestPretrainAndTrain:

    def test_pretrain_artifacts(self, workspace):
        root, _, source = workspace
        assert source.exists()
        assert (root / "source" / "effective_config.ini").exists()
        metadata = json.loads((root / "source" / "run_metadata.json").read_text(encoding="utf-8"))
        assert metadata["command"] == "pretrain"
        assert metadata["status"] == "ok"
        report = pd.read_csv(root / "source" / "report.csv")
        assert report.loc[0, "mode"] == "pretrain"

    def test_dfg_artifacts(self, dfg_run):
        for name in ("checkpoint.ckpt", "training_log.csv", "report.csv", "effective_config.ini"):
            assert (dfg_run / name).exists(), name
        log = pd.read_csv(dfg_run / "training_log.csv")
        assert list(log["iteration"]) == [1, 2, 3, 4]
        report = pd.read_csv(dfg_run / "report.csv")
        assert report.loc[0, "mode"] == "dfg"
        assert report.loc[0, "n_samples"] == 24
        assert "minority_recall" in report.columns

    def test_same_seed_same_report(self, workspace, dfg_run):
        root, config, source = workspace
        again = root / "dfg-again"
        assert main(["train", "--config", str(config), "--mode", "dfg", "--source", str(source),
                     "--out", str(again)]) == EXIT_OK
        assert (again / "report.csv").read_bytes() == (dfg_run / "report.csv").read_bytes()
        assert (again / "training_log.csv").read_bytes() == (dfg_run / "training_log.csv").read_bytes()

    @pytest.mark.parametrize("mode", ["original", "finetune"])
    def test_baselines(self, workspace, mode):
        root, config, source = workspace
        out = root / mode
        assert main(["train", "--config", str(config), "--mode", mode, "--source", str(source),
                     "--out", str(out)]) == EXIT_OK
        assert pd.read_csv(out / "report.csv").loc[0, "mode"] == mode

    def test_missing_source_is_config_error(self, workspace):
        root, config, _ = workspace
        code = main(["train", "--config", str(config), "--mode", "finetune", "--out", str(root / "nosource")])
        assert code == EXIT_CONFIG

    def test_bad_config_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[train]\nrho = 3\n", encoding="utf-8")
        assert main(["pretrain", "--config", str(bad), "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    def test_missing_checkpoint_is_io_error(self, workspace, tmp_path):
        _, config, _ = workspace
        code = main(["export", "--config", str(config), "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--out", str(tmp_path)])
        assert code == EXIT_IO


class TestExportAndSweep:

    def test_filter_weights(self, workspace, dfg_run, tmp_path):
        _, config, _ = workspace
        code = main(["export", "--config", str(config), "--checkpoint", str(dfg_run / "checkpoint.ckpt"),
                     "--what", "filter-weights", "--out", str(tmp_path)])
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / "filter_weights.csv")
        assert len(frame) == 4 * 3
        assert (frame["weight_masked"] >= 0).all()

    def test_features_with_and_without_generated(self, workspace, dfg_run, tmp_path):
        _, config, _ = workspace
        checkpoint = str(dfg_run / "checkpoint.ckpt")
        assert main(["export", "--config", str(config), "--checkpoint", checkpoint,
                     "--what", "features", "--out", str(tmp_path / "both")]) == EXIT_OK
        both = pd.read_csv(tmp_path / "both" / "features.csv")
        assert (both["origin"] == "real").sum() == 8
        assert (both["origin"] == "generated").sum() == 6
        assert (tmp_path / "both" / "pca.csv").exists()

        assert main(["export", "--config", str(config), "--checkpoint", checkpoint,
                     "--what", "features", "--n-fake", "0", "--out", str(tmp_path / "real")]) == EXIT_OK
        real = pd.read_csv(tmp_path / "real" / "features.csv")
        assert set(real["origin"]) == {"real"}

    def test_filter_weights_need_dfg_checkpoint(self, workspace, tmp_path):
        root, config, source = workspace
        out = root / "finetune-export"
        assert main(["train", "--config", str(config), "--mode", "finetune", "--source", str(source),
                     "--out", str(out)]) == EXIT_OK
        code = main(["export", "--config", str(config), "--checkpoint", str(out / "checkpoint.ckpt"),
                     "--what", "filter-weights", "--out", str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_sweep(self, workspace, tmp_path):
        _, config, source = workspace
        code = main(["sweep", "--config", str(config), "--source", str(source),
                     "--rho-grid", "0,1", "--seeds", "0", "--out", str(tmp_path)])
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / "sweep.csv")
        assert list(frame["rho"]) == [0.0, 1.0]
        assert list(frame["k"]) == [1, 1]
