"""
评估指标、多次运行汇总、PCA、CSV 导出与 rho 扫描
"""

import numpy as np
import pandas as pd
import pytest

from attention import MaskedWeights
from evaluation import (
    RunReport,
    aggregate,
    evaluate,
    export_features,
    export_pca,
    features_frame,
    generate_features,
    parse_grid,
    parse_seeds,
    pca_project,
    read_features,
    report_from_predictions,
    sweep_rho,
    write_report_csv,
)
from evaluation.sweep import SWEEP_COLUMNS
from models import Network, build_dcgan_pair
from utils.exceptions import ConfigError, LabelError

from conftest import N_CLASSES, make_tiny_split


# =============================================================================
# 指标
# =============================================================================

class TestMetrics:

    def test_report_values(self):
        report = report_from_predictions(
            np.array([0, 1, 1, 1, 0]), np.array([0, 0, 1, 1, 2]), n_classes=4, minority_classes=[2, 3],
            seed=5, mode="dfg",
        )
        assert report.accuracy == pytest.approx(0.6)
        np.testing.assert_allclose(report.per_class_recall[:3], [0.5, 1.0, 0.0])
        assert np.isnan(report.per_class_recall[3])
        np.testing.assert_allclose(report.per_class_accuracy, [0.6, 0.8, 0.8, 1.0])
        # 类别 3 不在测试集中，不参与少数类召回率平均
        assert report.minority_recall == 0.0
        assert report.seed == 5 and report.mode == "dfg"

        metrics = report.metrics()
        assert list(metrics)[:2] == ["accuracy", "minority_recall"]
        assert "recall_3" in metrics and "class_accuracy_0" in metrics

    def test_without_minority_classes(self):
        report = report_from_predictions(np.array([0, 1]), np.array([0, 1]), n_classes=2)
        assert report.accuracy == 1.0
        assert np.isnan(report.minority_recall)

    def test_invalid_predictions(self):
        with pytest.raises(LabelError):
            report_from_predictions(np.array([0, 2]), np.array([0, 1]), n_classes=2)
        with pytest.raises(LabelError):
            report_from_predictions(np.array([0]), np.array([0, 1]), n_classes=2)

    def test_evaluate_model(self, tiny_test_set):
        model = make_tiny_split()
        report = evaluate(model, tiny_test_set, minority_classes=[2, 3], seed=1)
        assert report.n_samples == len(tiny_test_set)
        assert 0.0 <= report.accuracy <= 1.0
        assert report.wall_time >= 0.0
        expected = (model.predict(tiny_test_set.images) == tiny_test_set.labels).mean()
        assert report.accuracy == pytest.approx(expected)


class TestAggregate:

    def _report(self, value):
        return RunReport(
            accuracy=value, per_class_recall=np.array([value, value]),
            per_class_accuracy=np.array([value, value]), n_samples=10, minority_classes=[1],
        )

    def test_mean_and_sample_std(self):
        agg = aggregate([self._report(1.0), self._report(3.0)])
        assert agg.k == 2
        assert agg.mean["accuracy"] == pytest.approx(2.0)
        assert agg.std["accuracy"] == pytest.approx(np.sqrt(2.0))
        assert agg.mean["minority_recall"] == pytest.approx(2.0)
        assert not agg.single_run
        assert agg.format("accuracy", scale=1.0) == "2.00 ± 1.41"

    def test_single_run(self):
        agg = aggregate([self._report(0.7)])
        assert agg.single_run
        assert agg.std["accuracy"] == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])


# =============================================================================
# PCA
# =============================================================================

class TestPCA:

    def test_matches_eigendecomposition(self, rng):
        x = rng.normal(size=(50, 20)) @ np.diag(np.geomspace(5.0, 0.1, 20))
        result = pca_project(x, dims=3, seed=0)

        centered = x - x.mean(axis=0)
        cov = centered.T @ centered / (len(x) - 1)
        values, vectors = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1][:3]
        for i, j in enumerate(order):
            cosine = abs(result.components[i] @ vectors[:, j])
            assert cosine > 0.999
        np.testing.assert_allclose(result.explained_variance_ratio, values[order] / values.sum(), atol=1e-6)
        np.testing.assert_allclose(result.projected, centered @ result.components.T)
        np.testing.assert_allclose(result.components @ result.components.T, np.eye(3), atol=1e-6)
        assert not result.rank_deficient

    def test_sign_convention(self, rng):
        result = pca_project(rng.normal(size=(30, 5)), dims=2)
        for v in result.components:
            assert v[np.argmax(np.abs(v))] > 0

    def test_rank_deficient_line(self):
        t = np.linspace(-1.0, 1.0, 20)[:, None]
        x = t @ np.array([[1.0, 2.0, -2.0]])
        result = pca_project(x, dims=2)
        assert result.rank_deficient
        assert result.components.shape == (1, 3)
        np.testing.assert_allclose(result.explained_variance_ratio, [1.0], atol=1e-9)
        np.testing.assert_allclose(np.abs(result.components[0]), [1 / 3, 2 / 3, 2 / 3], atol=1e-6)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            pca_project(np.zeros((2, 4)), dims=2)


# =============================================================================
# 导出
# =============================================================================

class TestExport:

    @pytest.fixture
    def generator(self):
        g_spec, _ = build_dcgan_pair((3, 14, 14), n_classes=N_CLASSES, z_dim=8)
        return Network(g_spec, seed=2)

    def test_features_frame_layout(self):
        real = np.arange(12, dtype=np.float32).reshape(2, 3, 2, 1)
        fake = np.ones((1, 3, 2, 1))
        frame = features_frame(real, np.array([1, 0]), fake, np.array([2]))
        assert list(frame.columns[:3]) == ["origin", "label", "f_1"]
        assert frame.shape == (3, 2 + 6)
        assert list(frame["origin"]) == ["real", "real", "generated"]
        np.testing.assert_array_equal(frame.loc[1, [f"f_{i}" for i in range(1, 7)]], np.arange(6, 12))
        with pytest.raises(ValueError):
            features_frame(real, np.array([1, 0]), np.ones((1, 5)), np.array([0]))

    def test_generate_features_is_deterministic(self, generator):
        ident = MaskedWeights.identity(N_CLASSES, 3)
        a, ya = generate_features(generator, ident, 5, 8, seed=3)
        b, yb = generate_features(generator, ident, 5, 8, seed=3)
        assert a.shape == (5, 3, 14, 14)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ya, yb)

    def test_export_features_and_pca(self, tmp_path, tiny_test_set, generator):
        model = make_tiny_split()
        ident = MaskedWeights.identity(N_CLASSES, 3)
        frame = export_features(model, generator, ident, tiny_test_set, n_real=8, n_fake=6,
                                path=tmp_path / "features.csv", seed=0)
        assert (frame["origin"] == "real").sum() == 8
        assert (frame["origin"] == "generated").sum() == 6
        assert frame.shape[1] == 2 + 3 * 14 * 14

        read = read_features(tmp_path / "features.csv")
        np.testing.assert_allclose(read.filter(like="f_").to_numpy(), frame.filter(like="f_").to_numpy(),
                                   rtol=1e-6)

        pca = export_pca(read, tmp_path / "pca.csv", dims=2)
        assert list(pca.columns) == ["origin", "label", "pc_1", "pc_2", "ratio_1", "ratio_2"]
        assert len(pca) == 14
        assert pca["ratio_1"].iloc[0] >= pca["ratio_2"].iloc[0]

    def test_export_real_only(self, tmp_path, tiny_test_set):
        frame = export_features(make_tiny_split(), None, None, tiny_test_set, n_real=8, n_fake=0,
                                path=tmp_path / "features.csv")
        assert set(frame["origin"]) == {"real"}
        with pytest.raises(ValueError):
            export_features(make_tiny_split(), None, None, tiny_test_set, 8, 2, tmp_path / "x.csv")

    def test_report_csv_is_reproducible(self, tmp_path):
        reports = [report_from_predictions(np.array([0, 1]), np.array([0, 0]), 2, [1], seed=s, mode="dfg")
                   for s in (1, 2)]
        a = write_report_csv(reports, tmp_path / "a.csv")
        b = write_report_csv(reports, tmp_path / "b.csv")
        assert a.read_bytes() == b.read_bytes()
        frame = pd.read_csv(a)
        assert list(frame.columns[:4]) == ["mode", "seed", "config_hash", "n_samples"]
        assert list(frame["seed"]) == [1, 2]


# =============================================================================
# rho 扫描
# =============================================================================

def fake_run(rho: float, seed: int):
    # 准确率 = rho，少数类召回率随种子变化
    n = 20
    labels = np.zeros(n, dtype=np.int64)
    labels[:4] = 1
    preds = labels.copy()
    wrong = int(round((1 - rho) * n))
    preds[:wrong] = 1 - preds[:wrong]
    return report_from_predictions(preds, labels, 2, [1], seed=seed, mode="dfg")


class TestSweep:

    def test_grid_and_seed_parsing(self):
        assert parse_grid("0, 0.5,1") == [0.0, 0.5, 1.0]
        assert parse_seeds("1,2,3") == [1, 2, 3]
        with pytest.raises(ConfigError):
            parse_grid("0,abc")
        with pytest.raises(ConfigError):
            parse_seeds("1.5")

    def test_rows_per_rho(self):
        frame = sweep_rho(fake_run, [0.0, 0.5, 1.0], seeds=[1, 2], jobs=1)
        assert tuple(frame.columns) == SWEEP_COLUMNS
        assert list(frame["rho"]) == [0.0, 0.5, 1.0]
        assert list(frame["k"]) == [2, 2, 2]
        np.testing.assert_allclose(frame["accuracy_mean"], [0.0, 0.5, 1.0])
        np.testing.assert_allclose(frame["accuracy_std"], 0.0)

    @pytest.mark.parametrize("grid,seeds", [([], [1]), ([1.5], [1]), ([0.5], [])])
    def test_invalid(self, grid, seeds):
        with pytest.raises(ConfigError):
            sweep_rho(fake_run, grid, seeds)
