"""
较长的端到端实验（需要 --run-slow）

- 200 次迭代的更新计数
- 合成数据 10:1 阶梯不平衡：DFG 与 original 对比
- Fashion-MNIST 10% 子集 40:1：需要 DFG_FASHION_MNIST_DIR 指向 IDX 文件目录
- 相同配置与种子的两次运行输出逐字节一致
"""

import os
from pathlib import Path

import numpy as np
import pytest

from config import parse_run_config
from training import dfg_train, pipeline

from conftest import make_tiny_config

pytestmark = pytest.mark.slow

SYNTHETIC_RUN = """
[architecture]
pipeline = lenet

[data]
synthetic = true
synthetic_per_class = 500
synthetic_test_per_class = 100
n_majority = 2
imbalance_ratio = 10

[train]
iterations = 2000
pretrain_epochs = 2
n_w = 500
log_every = 500
"""

FASHION_SOURCE = """
[architecture]
pipeline = lenet

[data]
synthetic = true
synthetic_per_class = 500

[train]
pretrain_epochs = 2
"""

FASHION_TARGET = """
[architecture]
pipeline = lenet

[data]
train_images = {root}/train-images-idx3-ubyte.gz
train_labels = {root}/train-labels-idx1-ubyte.gz
test_images = {root}/t10k-images-idx3-ubyte.gz
test_labels = {root}/t10k-labels-idx1-ubyte.gz
subset_fraction = 0.1
n_majority = 2
imbalance_ratio = 40

[train]
iterations = 2000
n_w = 500
log_every = 500
"""


def run_modes(config, source_config, out: Path, seeds, modes=("original", "dfg")):
    """每个种子预训练一次源模型，再按各方法训练；返回 {mode: [RunReport]}"""
    reports = {mode: [] for mode in modes}
    for seed in seeds:
        seeded_source = source_config.with_overrides({"train.seed": seed})
        pipeline.run_pretrain(seeded_source, out / f"source-{seed}")
        source_path = out / f"source-{seed}" / pipeline.SOURCE_CHECKPOINT_NAME
        for mode in modes:
            run_config = config.with_overrides({"train.seed": seed, "train.mode": mode})
            _, report = pipeline.run_train(run_config, out / f"{mode}-{seed}",
                                           source_path=None if mode == "original" else source_path)
            reports[mode].append(report)
    return reports


def test_schedule_counts_over_200_iterations(tiny_source, tiny_train_set):
    config = make_tiny_config(iterations=200, n_critic=5, n_c1=2, n_c2=10, n_w=50, log_every=50)
    counters = dfg_train(config, tiny_source, tiny_train_set).counters
    assert counters.critic == 1000
    assert counters.generator_adv == 200
    assert counters.generator_cls == counters.extractor == counters.classifier_real == 100
    assert counters.classifier_full == 20
    assert counters.refresh_iterations == [50, 100, 150, 200]


def test_synthetic_step_imbalance(tmp_path):
    config = parse_run_config(SYNTHETIC_RUN)
    reports = run_modes(config, config, tmp_path, seeds=range(5))
    dfg_recall = np.mean([r.minority_recall for r in reports["dfg"]])
    base_recall = np.mean([r.minority_recall for r in reports["original"]])
    dfg_acc = np.mean([r.accuracy for r in reports["dfg"]])
    base_acc = np.mean([r.accuracy for r in reports["original"]])
    assert dfg_recall >= base_recall + 0.02
    assert dfg_acc >= base_acc - 0.005


def test_fashion_mnist_subset(tmp_path):
    root = os.environ.get("DFG_FASHION_MNIST_DIR")
    if not root or not Path(root).is_dir():
        pytest.skip("未设置 DFG_FASHION_MNIST_DIR")
    config = parse_run_config(FASHION_TARGET.format(root=Path(root).as_posix()))
    reports = run_modes(config, parse_run_config(FASHION_SOURCE), tmp_path, seeds=range(3))
    dfg_acc = np.mean([r.accuracy for r in reports["dfg"]])
    base_acc = np.mean([r.accuracy for r in reports["original"]])
    assert dfg_acc >= base_acc + 0.01


def test_identical_runs_are_byte_identical(tmp_path):
    config = parse_run_config(SYNTHETIC_RUN).with_overrides({"train.iterations": 200})
    for name in ("a", "b"):
        run_modes(config, config, tmp_path / name, seeds=[0], modes=("dfg",))
    for artifact in ("training_log.csv", "report.csv"):
        a = (tmp_path / "a" / "dfg-0" / artifact).read_bytes()
        b = (tmp_path / "b" / "dfg-0" / artifact).read_bytes()
        assert a == b, artifact
