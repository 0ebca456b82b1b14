import math

import numpy as np
import numpy.testing as npt
import pytest

from rawbench.nn import functional as F
from rawbench.nn.checkpoint import CheckpointError, decode_checkpoint, load_checkpoint, save_checkpoint
from rawbench.nn.gradcheck import check_layer
from rawbench.nn.layers import (BasicBlock, BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Linear,
                                MaxPool2x2, NumericalError, Param, ReLU, Sequential)
from rawbench.nn.models import (Architecture, ModelError, ModelSpec, Variant, build_classifier,
                                build_model, count_params, expected_param_count)
from rawbench.nn.train import (TrainConfig, evaluate, predict_logits, read_history, sgd_momentum_step,
                               top1, train, write_history)

from .oracles import conv_oracle


class TestConvForward:
    def test_ones_kernel_sums(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        out, _ = F.conv2d_forward(x, np.ones((1, 1, 3, 3)))
        assert out.shape == (1, 1, 1, 1) and out.item() == 36.0

    def test_identity_pointwise(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
        out, _ = F.conv2d_forward(x, np.eye(3).reshape(3, 3, 1, 1))
        npt.assert_array_equal(out, x)

    @pytest.mark.parametrize("channels,stride,pad", [(3, 1, 0), (3, 2, 1), (8, 1, 1), (9, 2, 1)])
    def test_matches_loop_oracle(self, channels, stride, pad):
        rng = np.random.default_rng(channels * 10 + stride)
        x = rng.standard_normal((2, channels, 5, 5))
        w, b = rng.standard_normal((4, channels, 3, 3)), rng.standard_normal(4)
        out, _ = F.conv2d_forward(x, w, b, stride, pad)
        npt.assert_allclose(out, conv_oracle(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(F.ShapeError):
            F.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestFunctional:
    def test_relu(self):
        out, _ = F.relu_forward(np.array([-1.0, 2.0]))
        npt.assert_array_equal(out, [0.0, 2.0])

    def test_uniform_logits_loss(self):
        loss, _ = F.softmax_cross_entropy(np.zeros((4, 5)), [0, 1, 2, 3])
        assert math.isclose(loss, math.log(5), rel_tol=1e-12)

    def test_maxpool(self):
        out, _ = F.maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out.item() == 4.0

    def test_maxpool_tie_routes_to_first(self):
        x = np.ones((1, 1, 2, 2))
        out, cache = F.maxpool2x2_forward(x)
        npt.assert_array_equal(F.maxpool2x2_backward(np.ones_like(out), cache)[0, 0], [[1, 0], [0, 0]])

    def test_saturated_softmax_has_no_gradient(self):
        logits = np.array([[1000.0, 0.0, 0.0]])
        loss, d = F.softmax_cross_entropy(logits, [0])
        assert loss == 0.0 and np.abs(d).max() < 1e-300

    def test_scaling_loss_scales_gradients(self):
        rng = np.random.default_rng(1)
        layer = Linear(4, 3, rng)
        x = rng.standard_normal((5, 4))
        layer.forward(x)
        g1 = layer.backward(np.ones((5, 3)))
        w1 = layer.params["weight"].grad.copy()
        layer.zero_grad()
        layer.forward(x)
        g2 = layer.backward(2 * np.ones((5, 3)))
        npt.assert_allclose(g2, 2 * g1)
        npt.assert_allclose(layer.params["weight"].grad, 2 * w1)

    def test_sigmoid_is_stable(self):
        out = F.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        npt.assert_array_equal(out, [0.0, 0.5, 1.0])


def _away_from_kinks(rng, shape):
    x = rng.uniform(0.2, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


class TestGradients:
    TOL = 1e-4

    def check(self, layer, x, rng, train=True):
        errs = check_layer(layer, x, rng, train=train)
        assert max(errs.values()) < self.TOL, errs

    @pytest.mark.parametrize("cin,stride,bias", [(2, 1, True), (2, 2, False), (8, 1, True), (8, 2, False)])
    def test_conv(self, cin, stride, bias):
        rng = np.random.default_rng(cin + stride)
        self.check(Conv2d(cin, 3, 3, stride, bias=bias, rng=rng), rng.standard_normal((2, cin, 5, 6)), rng)

    def test_pointwise_conv(self):
        rng = np.random.default_rng(3)
        self.check(Conv2d(3, 4, 1, rng=rng), rng.standard_normal((2, 3, 3, 3)), rng)

    def test_linear(self):
        rng = np.random.default_rng(4)
        self.check(Linear(6, 3, rng), rng.standard_normal((4, 6)), rng)

    def test_relu(self):
        rng = np.random.default_rng(5)
        self.check(ReLU(), _away_from_kinks(rng, (2, 3, 4)), rng)

    def test_maxpool(self):
        rng = np.random.default_rng(6)
        # distinct values keep the argmax stable under perturbation
        x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) / 10.0
        self.check(MaxPool2x2(), x, rng)

    def test_global_avg_pool(self):
        rng = np.random.default_rng(7)
        self.check(GlobalAvgPool(), rng.standard_normal((2, 3, 4, 4)), rng)

    def test_flatten(self):
        rng = np.random.default_rng(8)
        self.check(Flatten(), rng.standard_normal((2, 3, 2, 2)), rng)

    @pytest.mark.parametrize("train", [True, False])
    def test_batchnorm(self, train):
        rng = np.random.default_rng(9)
        bn = BatchNorm2d(3)
        bn.params["gamma"].data = rng.uniform(0.5, 1.5, 3)
        bn.params["beta"].data = rng.standard_normal(3)
        bn.buffers["running_var"] = rng.uniform(0.5, 2.0, 3)
        self.check(bn, rng.standard_normal((4, 3, 3, 3)), rng, train=train)

    @pytest.mark.parametrize("cin,cout,stride", [(3, 3, 1), (2, 4, 2)])
    def test_basic_block(self, cin, cout, stride):
        rng = np.random.default_rng(10 + cin)
        self.check(BasicBlock(cin, cout, stride, rng), rng.standard_normal((3, cin, 4, 4)), rng)

    @pytest.mark.parametrize("arch", list(Architecture))
    def test_whole_backbone(self, arch):
        rng = np.random.default_rng(11)
        model = build_model(ModelSpec(arch, 2, 8, 3, width_multiplier=0.25), seed=1)
        self.check(model, rng.standard_normal((3, 2, 8, 8)), rng)


class TestSgd:
    def test_plain_step(self):
        p = Param(np.array([1.0, 2.0]))
        p.grad[...] = [0.5, -1.0]
        sgd_momentum_step([p], TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
        npt.assert_allclose(p.data, [0.95, 2.1])

    def test_two_step_unroll(self):
        p = Param(np.zeros(3))
        g = np.array([1.0, -2.0, 0.5])
        cfg = TrainConfig(learning_rate=0.01, momentum=0.9, weight_decay=0.0)
        for _ in range(2):
            p.grad[...] = g
            sgd_momentum_step([p], cfg)
        npt.assert_allclose(p.data, -0.01 * g * 2.9, rtol=1e-12)

    def test_zero_gradient_is_fixed_point(self):
        p = Param(np.array([3.0, -1.0]))
        sgd_momentum_step([p], TrainConfig(weight_decay=0.0))
        npt.assert_array_equal(p.data, [3.0, -1.0])

    def test_decay_skips_flagged_params(self):
        w, b = Param(np.array([1.0])), Param(np.array([1.0]), decay=False)
        sgd_momentum_step([w, b], TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5))
        npt.assert_allclose(w.data, [0.95])
        npt.assert_array_equal(b.data, [1.0])


class TestModels:
    def test_vgg_count_one_channel(self):
        # conv 1*16*9+16, 16*32*9+32, 32*64*9+64; fc 64*5*5*64+64; fc 64*5+5
        spec = ModelSpec(Architecture.TINY_VGG, 1, 40)
        assert count_params(build_model(spec)) == 160 + 4640 + 18496 + 102464 + 325 == 126085

    def test_vgg_count_packed(self):
        # 4 channels at 20x20: flatten 64*2*2
        spec = ModelSpec(Architecture.TINY_VGG, 4, 20)
        assert count_params(build_model(spec)) == 592 + 4640 + 18496 + 16448 + 325 == 40501

    def test_resnet_count_one_channel(self):
        # stem 144+32; block1 2304*2+64; block2 4608+9216+128+512+64; block3 18432+36864+256+2048+128
        spec = ModelSpec(Architecture.TINY_RESNET, 1, 40)
        assert count_params(build_model(spec)) == 176 + 4672 + 14528 + 57728 + 325 == 77429

    @pytest.mark.parametrize("arch", list(Architecture))
    def test_channel_delta_is_first_layer_only(self, arch):
        one = count_params(build_model(ModelSpec(arch, 1)))
        three = count_params(build_model(ModelSpec(arch, 3)))
        assert three - one == 2 * 9 * 16

    @pytest.mark.parametrize("arch", list(Architecture))
    @pytest.mark.parametrize("channels,size,mult", [(1, 40, 1.0), (16, 20, 1.0), (3, 24, 0.5)])
    def test_closed_form_matches_built_model(self, arch, channels, size, mult):
        spec = ModelSpec(arch, channels, size, 5, mult)
        assert expected_param_count(spec) == count_params(build_model(spec))

    def test_too_small_input(self):
        with pytest.raises(ModelError):
            ModelSpec(Architecture.TINY_VGG, 1, 4)

    def test_resnet_skip_only_path(self):
        rng = np.random.default_rng(12)
        model = build_model(ModelSpec(Architecture.TINY_RESNET, 1, 16), seed=2)
        for name in ("block1", "block2", "block3"):
            block = model.children[name]
            for conv in ("conv1", "conv2"):
                block.children[conv].params["weight"].data[...] = 0.0
        x = rng.random((2, 1, 16, 16))
        c = model.children
        h = c["stem_relu"](c["stem_bn"](c["stem"](x)))
        for name in ("block1", "block2", "block3"):
            h = np.maximum(c[name].shortcut(h), 0.0)
        expected = c["fc"](c["pool"](h))
        npt.assert_allclose(model.forward(x), expected, rtol=1e-12, atol=1e-12)

    def test_same_seed_same_weights(self):
        a = build_classifier(Variant.BCA_RAW, Architecture.TINY_VGG, seed=4).state_dict()
        b = build_classifier(Variant.BCA_RAW, Architecture.TINY_VGG, seed=4).state_dict()
        assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_classifier_input_shapes(self, variant):
        model = build_classifier(variant, Architecture.TINY_RESNET, dtype=np.float32)
        logits = model.forward(np.zeros((2, *model.input_shape), dtype=np.float32))
        assert logits.shape == (2, 5)

    def test_biases_start_at_zero(self):
        model = build_model(ModelSpec(Architecture.TINY_VGG, 3, 40), seed=0)
        for name, p in model.named_params():
            if name.endswith("bias"):
                assert not p.data.any(), name

    def test_non_finite_activation_raises(self):
        model = build_classifier(Variant.RGB8, Architecture.TINY_VGG)
        x = np.zeros((2, 3, 40, 40))
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericalError):
            model.forward(x, train=True)


def toy_two_class(n=200, size=8, seed=0):
    """Bright left half for class 0, bright right half for class 1."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = 0.1 * rng.random((n, 1, size, size))
    x[y == 0, :, :, : size // 2] += 0.8
    x[y == 1, :, :, size // 2:] += 0.8
    return x, y


class TestTraining:
    def test_separable_toy_reaches_full_train_accuracy(self):
        x, y = toy_two_class()
        model = build_model(ModelSpec(Architecture.TINY_VGG, 1, 8, num_classes=2), seed=0)
        cfg = TrainConfig(learning_rate=0.01, epochs=20, seed=0, precision=64)
        result = train(model, (x, y), (x[:40], y[:40]), cfg)
        assert max(h.train_acc for h in result.history) == 1.0

    def test_equal_seeds_identical_history(self):
        x, y = toy_two_class(64)
        runs = []
        for _ in range(2):
            model = build_model(ModelSpec(Architecture.TINY_RESNET, 1, 8, num_classes=2), seed=3)
            runs.append(train(model, (x, y), (x[:16], y[:16]), TrainConfig(epochs=2, seed=5)))
        assert runs[0].history == runs[1].history
        assert all(np.array_equal(runs[0].best_state[k], runs[1].best_state[k]) for k in runs[0].best_state)

    def test_selected_epoch_has_lowest_val_loss(self):
        x, y = toy_two_class(96, seed=1)
        model = build_model(ModelSpec(Architecture.TINY_VGG, 1, 8, num_classes=2), seed=1)
        result = train(model, (x, y), (x[:32], y[:32]), TrainConfig(learning_rate=0.05, epochs=4))
        assert result.best_val_loss <= result.history[-1].val_loss
        assert result.best_val_loss == min(h.val_loss for h in result.history)

    def test_history_csv_round_trip(self, tmp_path):
        x, y = toy_two_class(32)
        model = build_model(ModelSpec(Architecture.TINY_VGG, 1, 8, num_classes=2))
        result = train(model, (x, y), (x, y), TrainConfig(epochs=2))
        write_history(tmp_path / "h.csv", result.history)
        assert read_history(tmp_path / "h.csv") == result.history


class ConstantModel:
    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=float)

    def forward(self, x, train=False):
        return np.tile(self.logits, (len(x), 1))


class IdentityModel:
    def forward(self, x, train=False):
        return x


class TestEvaluate:
    def test_all_correct(self):
        y = np.array([0, 3, 1, 4, 2])
        assert evaluate(IdentityModel(), np.eye(5)[y], y) == 1.0

    def test_constant_logits_tie_break(self):
        y = np.repeat(np.arange(5), 10)
        assert evaluate(ConstantModel(np.zeros(5)), np.zeros((50, 1)), y) == 0.2

    def test_monotone_transform_invariance(self):
        logits = np.random.default_rng(13).standard_normal((30, 5))
        npt.assert_array_equal(top1(logits), top1(3 * np.exp(logits) + 1))

    def test_chunking_does_not_change_logits(self):
        model = build_classifier(Variant.PACKED_RAW, Architecture.TINY_VGG)
        x = np.random.default_rng(14).random((21, 1, 40, 40))
        npt.assert_allclose(predict_logits(model, x, chunk=4), predict_logits(model, x, chunk=21),
                            rtol=1e-12, atol=1e-12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = build_classifier(Variant.BCA_RAW, Architecture.TINY_RESNET, seed=6)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, extra={"note": "x"})
        loaded, desc = load_checkpoint(path, dtype=np.float64)
        x = np.random.default_rng(15).random((2, 1, 40, 40))
        npt.assert_array_equal(loaded.forward(x), model.forward(x))
        assert desc["spec"]["variant"] == "bca-raw" and desc["note"] == "x"

    def test_bytes_are_deterministic(self, tmp_path):
        for name in ("a", "b"):
            save_checkpoint(tmp_path / name, build_classifier(Variant.RGB8, Architecture.TINY_VGG, seed=1))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"NOPE" + bytes(16))

    def test_shape_mismatch(self, tmp_path):
        model = build_classifier(Variant.RGB8, Architecture.TINY_VGG)
        state = model.state_dict()
        state["backbone.fc2.bias"] = np.zeros(7)
        save_checkpoint(tmp_path / "bad.ckpt", model, state)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.ckpt")


class TestSequential:
    def test_backward_chains_children(self):
        rng = np.random.default_rng(16)
        seq = Sequential(("a", Linear(3, 4, rng)), ("r", ReLU()), ("b", Linear(4, 2, rng)))
        errs = check_layer(seq, rng.standard_normal((5, 3)), rng)
        assert max(errs.values()) < 1e-6
