"""
网络结构、网络执行器与检查点
"""

import numpy as np
import pytest

from models import (
    LayerSpec,
    Network,
    NetworkSpec,
    build_dcgan_pair,
    build_lenet_split,
    build_split_from_layers,
    format_layers,
    lenet_split_specs,
    load_checkpoint,
    parse_layers,
    restore_networks,
    save_checkpoint,
    vgg16_split_specs,
)
from utils.exceptions import CheckpointError, CheckpointMismatchError, LabelError, ShapeError

from conftest import IMAGE_SIZE, N_CLASSES, make_tiny_split


# =============================================================================
# 结构
# =============================================================================

class TestSpecs:

    def test_lenet_shapes(self):
        e_spec, c_spec = lenet_split_specs(10, (1, 32, 32))
        assert e_spec.output_shape == (6, 14, 14)
        shapes = c_spec.layer_output_shapes()
        assert shapes[0] == (16, 10, 10)
        assert shapes[2] == (16, 5, 5)
        assert shapes[3] == (400,)
        assert [s for s, layer in zip(shapes, c_spec.layers) if layer.kind == "dense"] == [(120,), (84,), (10,)]
        assert c_spec.layers[-1].activation == "softmax"

    def test_vgg_extractor_shape(self):
        e_spec, c_spec = vgg16_split_specs(10, (3, 32, 32))
        assert e_spec.output_shape == (64, 16, 16)
        assert c_spec.output_shape == (10,)
        assert sum(layer.kind == "conv" for layer in e_spec.layers + c_spec.layers) == 13

    def test_generator_and_discriminator_for_14x14(self):
        g_spec, d_spec = build_dcgan_pair((6, 14, 14), n_classes=10, z_dim=100)
        assert g_spec.input_shape == (100,)
        shapes = g_spec.layer_output_shapes()
        assert shapes[0] == (110,)
        assert shapes[1] == (2048,)
        assert shapes[2] == (128, 4, 4)
        deconvs = [s for s, layer in zip(shapes, g_spec.layers) if layer.kind == "deconv"]
        assert deconvs == [(48, 9, 9), (12, 11, 11), (6, 14, 14)]
        assert [layer.kind for layer in g_spec.layers[-3:]] == ["activation", "channel-weight", "batchnorm"]
        assert g_spec.layers[-3].activation == "tanh"
        assert g_spec.output_shape == (6, 14, 14)

        d_shapes = d_spec.layer_output_shapes()
        convs = [s for s, layer in zip(d_shapes, d_spec.layers) if layer.kind == "conv"]
        assert convs == [(32, 7, 7), (64, 4, 4), (128, 2, 2)]
        assert (512,) in d_shapes
        assert d_spec.output_shape == (1,)

        table = g_spec.describe().splitlines()
        assert table[0] == "generator: input (100,)"
        assert len(table) == len(g_spec.layers) + 1
        assert table[-1].endswith("-> (6, 14, 14)")

    def test_generator_for_16x16(self):
        g_spec, d_spec = build_dcgan_pair((64, 16, 16), n_classes=10)
        assert g_spec.output_shape == (64, 16, 16)
        assert d_spec.input_shape == (64, 16, 16)

    def test_unsupported_feature_size(self):
        with pytest.raises(ShapeError):
            build_dcgan_pair((6, 10, 10), n_classes=3)

    def test_generator_bn_affine_flag(self):
        g_spec, _ = build_dcgan_pair((6, 14, 14), n_classes=3, bn_affine=False)
        assert all(not layer.affine for layer in g_spec.layers if layer.kind == "batchnorm")
        params = Network(g_spec).params
        assert not any(name.endswith(".scale") for name in params)

    def test_declared_output_shape_is_checked(self):
        with pytest.raises(ShapeError):
            NetworkSpec("bad", (4,), (LayerSpec("dense", units=3),), output_shape=(2,))

    def test_dense_without_flatten_is_rejected(self):
        with pytest.raises(ShapeError):
            NetworkSpec("bad", (3, 4, 4), (LayerSpec("dense", units=3),))

    def test_spec_hash_ignores_name_and_round_trips(self):
        e_spec, _ = lenet_split_specs()
        renamed = NetworkSpec("other", e_spec.input_shape, e_spec.layers)
        assert renamed.spec_hash() == e_spec.spec_hash()
        assert NetworkSpec.from_dict(e_spec.to_dict()) == e_spec
        _, c_spec = lenet_split_specs()
        assert c_spec.spec_hash() != e_spec.spec_hash()


class TestLayerSyntax:

    def test_parse_and_format(self):
        text = "label; dense units=2048; reshape shape=128x4x4; bn affine=false; deconv out=48 k=3 s=2; lrelu; tanh"
        layers = parse_layers(text, n_classes=5)
        assert layers[0] == LayerSpec("concat-input-label", n_classes=5)
        assert layers[2].shape == (128, 4, 4)
        assert layers[3].kind == "batchnorm" and not layers[3].affine
        assert layers[5].activation == "leaky_relu"
        assert parse_layers(format_layers(layers)) == layers

    def test_newlines_and_aliases(self):
        layers = parse_layers("conv out=3 k=3\nrelu; fc units=4")
        assert [layer.kind for layer in layers] == ["conv", "activation", "dense"]

    def test_pool_stride_defaults_to_kernel(self):
        pool, overlapping, conv = parse_layers("pool k=2; pool k=3 s=1; conv out=2 k=3")
        assert pool.stride == 2
        assert pool.output_shape((4, 8, 8)) == (4, 4, 4)
        assert overlapping.stride == 1
        assert overlapping.output_shape((4, 8, 8)) == (4, 6, 6)
        assert conv.stride == 1
        assert parse_layers(format_layers([pool])) == (pool,)

    @pytest.mark.parametrize("text", ["conv out=3 bogus=1", "wat", "conv out", "label", "bn affine=maybe"])
    def test_bad_syntax(self, text):
        with pytest.raises(ValueError):
            parse_layers(text)

    def test_classifier_output_must_match_classes(self):
        with pytest.raises(ShapeError):
            build_split_from_layers("conv out=3 k=3", "flatten; dense units=5", (1, 8, 8), n_classes=4)


# =============================================================================
# 执行器
# =============================================================================

class TestNetwork:

    def test_same_seed_same_parameters(self):
        a = build_lenet_split(seed=5)
        b = build_lenet_split(seed=5)
        for (ka, va), (kb, vb) in zip(a.extractor.state_dict().items(), b.extractor.state_dict().items()):
            assert ka == kb
            np.testing.assert_array_equal(va, vb)

    def test_parameter_names(self):
        model = make_tiny_split()
        assert list(model.extractor.state_dict()) == ["0.conv.weight", "0.conv.bias"]
        assert model.extractor.last_conv_index() == 0
        assert model.feature_shape == (3, IMAGE_SIZE - 2, IMAGE_SIZE - 2)
        assert model.n_classes == N_CLASSES

    def test_predict_proba(self, rng):
        model = make_tiny_split()
        x = rng.normal(size=(5, 1, IMAGE_SIZE, IMAGE_SIZE)).astype(np.float32)
        proba = model.predict_proba(x, batch_size=2)
        assert proba.shape == (5, N_CLASSES)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-5)
        np.testing.assert_array_equal(model.predict(x), proba.argmax(axis=1))
        assert model.features(x).shape == (5, 3, 14, 14)

    def test_input_shape_is_checked(self):
        model = make_tiny_split()
        with pytest.raises(ShapeError):
            model.extractor(np.zeros((2, 1, 8, 8), dtype=np.float32))

    def test_clone_is_independent(self):
        model = make_tiny_split()
        copy = model.clone()
        copy.extractor.params["0.conv.weight"].data[...] = 0.0
        assert np.any(model.extractor.params["0.conv.weight"].data != 0.0)

    def test_frozen_and_evaluating_restore_flags(self):
        net = make_tiny_split().classifier
        with net.frozen():
            assert net.parameters() == []
        assert len(net.parameters()) == len(net.params)
        with net.evaluating():
            assert not net.training
        assert net.training

    def test_load_state_dict_checks_shapes(self):
        net = make_tiny_split().extractor
        state = net.state_dict()
        state["0.conv.bias"] = np.zeros(7, dtype=np.float32)
        with pytest.raises(ShapeError):
            net.load_state_dict(state)
        del state["0.conv.bias"]
        with pytest.raises(ShapeError):
            net.load_state_dict(state)

    def test_generator_requires_valid_labels(self, rng):
        g_spec, _ = build_dcgan_pair((3, 14, 14), n_classes=N_CLASSES, z_dim=8)
        generator = Network(g_spec, seed=1)
        z = rng.normal(size=(3, 8)).astype(np.float32)
        assert generator(z, labels=np.array([0, 1, 3])).shape == (3, 3, 14, 14)
        with pytest.raises(LabelError):
            generator(z)
        with pytest.raises(LabelError):
            generator(z, labels=np.array([0, 1, N_CLASSES]))

    def test_batchnorm_running_stats_update_only_in_train_mode(self, rng):
        g_spec, _ = build_dcgan_pair((3, 14, 14), n_classes=N_CLASSES, z_dim=8)
        generator = Network(g_spec, seed=1)
        z = rng.normal(size=(4, 8)).astype(np.float32)
        labels = np.array([0, 1, 2, 3])
        key = "3.batchnorm.running_mean"
        with generator.evaluating():
            generator(z, labels=labels)
        np.testing.assert_array_equal(generator.params[key].data, 0.0)
        generator(z, labels=labels)
        assert np.any(generator.params[key].data != 0.0)


# =============================================================================
# 检查点
# =============================================================================

class TestCheckpoint:

    def test_round_trip(self, tmp_path):
        model = make_tiny_split(seed=1)
        extra = {"opt/step": np.array([3], dtype=np.int64), "W/matrix": np.ones((2, 3), dtype=np.float64)}
        path = save_checkpoint(tmp_path / "m.ckpt", model.networks(), extra, meta={"iteration": 7, "seed": 1})

        ckpt = load_checkpoint(path, expected=model.networks())
        assert ckpt.iteration == 7
        assert ckpt.meta["seed"] == 1
        assert ckpt.has_group("opt") and not ckpt.has_group("G")
        np.testing.assert_array_equal(ckpt.group("W")["matrix"], extra["W/matrix"])
        assert ckpt.group("opt")["step"].dtype == np.int64

        fresh = make_tiny_split(seed=2)
        restore_networks(ckpt, fresh.networks())
        for name, net in model.networks().items():
            for key, value in net.state_dict().items():
                np.testing.assert_array_equal(fresh.networks()[name].state_dict()[key], value)

    def test_structure_mismatch(self, tmp_path):
        model = make_tiny_split()
        path = save_checkpoint(tmp_path / "m.ckpt", model.networks())
        other = build_split_from_layers("conv out=2 k=3; relu", "flatten; dense units=4; softmax",
                                        (1, IMAGE_SIZE, IMAGE_SIZE), N_CLASSES)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, expected=other.networks())
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, expected={"G": model.extractor})

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_and_trailing_data(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ckpt", make_tiny_split().networks())
        raw = path.read_bytes()

        truncated = tmp_path / "truncated.ckpt"
        truncated.write_bytes(raw[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(truncated)

        trailing = tmp_path / "trailing.ckpt"
        trailing.write_bytes(raw + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(trailing)
