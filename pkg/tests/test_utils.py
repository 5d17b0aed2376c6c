"""
日志、耗时统计与异常层级
"""

import json
import logging

import pytest

from utils import (
    CheckpointError,
    CheckpointMismatchError,
    ConfigError,
    DFGError,
    NumericError,
    PerformanceTracker,
    ShapeError,
    UnsupportedOpError,
    setup_logger,
)


class TestLogger:

    @pytest.fixture
    def restore_handlers(self):
        yield
        logging.getLogger("dfg-test").handlers.clear()

    def test_json_file_log(self, tmp_path, restore_handlers):
        path = tmp_path / "logs" / "run.log"
        logger = setup_logger("dfg-test", log_file=str(path), log_level="info", json_file=True)
        logger.info("第 3 次迭代")
        for handler in logger.handlers:
            handler.flush()
        record = json.loads(path.read_text(encoding="utf-8").strip().splitlines()[-1])
        assert record["message"] == "第 3 次迭代"
        assert record["levelname"] == "INFO"
        assert record["name"] == "dfg-test"

    def test_plain_file_log_and_level(self, tmp_path, restore_handlers):
        path = tmp_path / "run.log"
        logger = setup_logger("dfg-test", log_file=str(path), log_level="WARNING", json_file=False)
        logger.info("不应写出")
        logger.warning("权重刷新")
        for handler in logger.handlers:
            handler.flush()
        text = path.read_text(encoding="utf-8")
        assert "不应写出" not in text
        assert " - dfg-test - WARNING - 权重刷新" in text

    def test_setup_replaces_handlers(self, restore_handlers):
        setup_logger("dfg-test", log_file="")
        logger = setup_logger("dfg-test", log_file="")
        assert len(logger.handlers) == 1


class TestPerformanceTracker:

    def test_phases_are_counted(self):
        tracker = PerformanceTracker(run_id="dfg-seed0")
        for _ in range(3):
            with tracker.track("critic"):
                pass
        with tracker.track("refresh"):
            pass
        assert tracker.metrics["critic"].calls == 3
        assert tracker.metrics["refresh"].calls == 1
        report = tracker.get_report()
        assert "dfg-seed0" in report
        assert "critic" in report and "refresh" in report

    def test_errors_are_recorded_and_reraised(self):
        tracker = PerformanceTracker(run_id="x")
        with pytest.raises(NumericError):
            with tracker.track("generator"):
                raise NumericError("L_G 不是有限值")
        metric = tracker.metrics["generator"]
        assert metric.errors == 1
        assert metric.calls == 0
        assert "出错 1 次" in str(metric)


class TestExceptions:

    def test_hierarchy(self):
        for cls in (ShapeError, ConfigError, NumericError, CheckpointError, UnsupportedOpError):
            assert issubclass(cls, DFGError)
        assert issubclass(ShapeError, ValueError)
        assert issubclass(NumericError, ArithmeticError)
        assert issubclass(CheckpointMismatchError, CheckpointError)

    def test_unsupported_op_names_operator(self):
        err = UnsupportedOpError("MaxPool2d")
        assert err.op_name == "MaxPool2d"
        assert "MaxPool2d" in str(err)
