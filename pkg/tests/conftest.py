"""
测试公共夹具

测试使用很小的合成数据和自定义小网络：16x16 单通道输入、4 个类别，
E 输出 (3, 14, 14)，可以直接使用内置的 14x14 生成器 / 判别器结构。
"""

import os

# 测试不写日志文件
os.environ.setdefault("LOG_FILE", "")

import numpy as np
import pytest

from autodiff import Config, set_default_dtype
from config.run_config import TrainConfig
from data.preprocess import prepare_dataset
from data.synthetic import synth_dataset
from models.builders import build_split_from_layers
from training.pretrain import pretrain_source

N_CLASSES = 4
IMAGE_SIZE = 16
TINY_EXTRACTOR = "conv out=3 k=3; relu"
TINY_CLASSIFIER = "conv out=4 k=3; relu; pool k=2 s=2; flatten; dense units=4; softmax"


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="运行标记为 slow 的测试")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# ==================== 精度 ====================

@pytest.fixture
def float64():
    """梯度校验在 float64 下进行"""
    old = Config.default_dtype
    set_default_dtype("float64")
    yield
    set_default_dtype(old)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ==================== 模型与数据 ====================

def make_tiny_split(seed: int = 0, dtype=None):
    return build_split_from_layers(
        TINY_EXTRACTOR, TINY_CLASSIFIER, (1, IMAGE_SIZE, IMAGE_SIZE), N_CLASSES, seed=seed, dtype=dtype
    )


def make_tiny_config(**overrides) -> TrainConfig:
    values = dict(
        iterations=4,
        batch_size=4,
        z_dim=8,
        n_critic=2,
        n_c1=2,
        n_c2=2,
        n_w=2,
        calibration_size=16,
        log_every=1,
        lr_e=1e-3,
        lr_c=1e-3,
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def tiny_split():
    return make_tiny_split()


@pytest.fixture(scope="session")
def tiny_source_set():
    return prepare_dataset(synth_dataset(N_CLASSES, 24, size=IMAGE_SIZE, seed=11, name="source"),
                           (IMAGE_SIZE, IMAGE_SIZE))


@pytest.fixture(scope="session")
def tiny_train_set():
    raw = synth_dataset(N_CLASSES, [16, 16, 4, 4], size=IMAGE_SIZE, seed=12, name="train")
    return prepare_dataset(raw, (IMAGE_SIZE, IMAGE_SIZE))


@pytest.fixture(scope="session")
def tiny_test_set():
    return prepare_dataset(synth_dataset(N_CLASSES, 8, size=IMAGE_SIZE, seed=13, name="test"),
                           (IMAGE_SIZE, IMAGE_SIZE))


@pytest.fixture(scope="session")
def tiny_source(tiny_source_set):
    """预训练过的小源模型；使用方只能克隆，不能原地修改"""
    model, _ = pretrain_source(make_tiny_split(seed=3), tiny_source_set, epochs=2, lr=1e-3, batch_size=16, seed=0)
    return model
