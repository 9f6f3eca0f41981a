"""nn-core: initialization, forward, loss, reverse-mode gradients, layout."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subtrain import autodiff as ad
from subtrain import model
from subtrain.errors import LabelError, ShapeError
from conftest import fd_grad


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, floor)])


class TestInitParams:
    def test_biases_exactly_zero(self):
        spec = model.ModelSpec((2, 3))
        w = model.init_params(spec, 42)
        layout = model.param_layout(spec)
        bias = next(e for e in layout if e.name == "dense0.bias")
        assert np.all(w[bias.offset:bias.offset + bias.size] == 0.0)

    def test_deterministic(self):
        spec = model.ModelSpec((4, 8, 3))
        assert np.array_equal(model.init_params(spec, 7), model.init_params(spec, 7))
        assert not np.array_equal(model.init_params(spec, 7), model.init_params(spec, 8))

    def test_param_count_784_64_10(self):
        # 784*64 + 64 + 64*10 + 10
        assert model.param_count(model.ModelSpec((784, 64, 10))) == 50890

    def test_fan_in_bound(self):
        spec = model.ModelSpec((100, 50))
        w = model.init_params(spec, 0)
        bound = math.sqrt(6.0 / 100)
        assert np.abs(w[:100 * 50]).max() <= bound

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            model.ModelSpec((5,))
        with pytest.raises(ValueError):
            model.ModelSpec((5, 2), activation="sigmoid")


class TestForward:
    def test_zero_params_zero_logits(self):
        spec = model.ModelSpec((4, 3))
        w = np.zeros(model.param_count(spec))
        logits = model.forward(spec, w, np.random.default_rng(0).normal(size=(6, 4)))
        assert np.all(logits == 0.0)

    def test_identity_layer(self):
        spec = model.ModelSpec((3, 3))
        w = model.flatten([np.eye(3), np.zeros(3)])
        x = np.random.default_rng(1).normal(size=(5, 3))
        assert np.allclose(model.forward(spec, w, x), x)

    def test_hand_matmul_convention(self):
        # weight rows are output units: logits = x @ W.T + b
        spec = model.ModelSpec((2, 2))
        w = model.flatten([np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5])])
        logits = model.forward(spec, w, np.array([[1.0, 1.0]]))
        assert np.allclose(logits, [[3.5, 6.5]])

    def test_shape_mismatch(self):
        spec = model.ModelSpec((4, 3))
        w = np.zeros(model.param_count(spec))
        with pytest.raises(ShapeError):
            model.forward(spec, w, np.zeros((2, 5)))
        with pytest.raises(ShapeError):
            model.forward(spec, np.zeros(3), np.zeros((2, 4)))


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = np.zeros((4, 10))
        assert model.cross_entropy(logits, np.array([0, 3, 5, 9])) == pytest.approx(
            math.log(10), rel=1e-12)

    def test_saturated_margin(self):
        logits = np.zeros((1, 10))
        logits[0, 2] = 50.0
        assert model.cross_entropy(logits, np.array([2])) < 1e-20

    def test_scalar_oracle(self):
        # -log(e^3 / (e^1 + e^2 + e^3))
        got = model.cross_entropy(np.array([[1.0, 2.0, 3.0]]), np.array([2]))
        assert got == pytest.approx(0.40760596444438079, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            model.cross_entropy(np.zeros((1, 3)), np.array([3]))
        with pytest.raises(LabelError):
            model.cross_entropy(np.zeros((1, 3)), np.array([-1]))

    def test_non_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits = rng.normal(scale=10.0, size=(8, 5))
            labels = rng.integers(0, 5, size=8)
            assert model.cross_entropy(logits, labels) >= 0.0


class TestBackward:
    def test_stationary_point(self):
        # symmetric +/- pairs per class make w = 0 exactly stationary
        rng = np.random.default_rng(9)
        spec = model.ModelSpec((4, 3))
        vs = rng.normal(size=(3, 4))
        x = np.concatenate([np.stack([v, -v]) for v in vs])
        y = np.repeat(np.arange(3), 2)
        _, g = model.backward(spec, np.zeros(model.param_count(spec)), x, y)
        assert np.linalg.norm(g) < 1e-10

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(42)
        spec = model.ModelSpec((2, 16, 3), activation)
        w = model.init_params(spec, 7)
        x = rng.normal(size=(5, 2))
        y = rng.integers(0, 3, size=5)
        _, g = model.backward(spec, w, x, y)
        fd = fd_grad(lambda wv: model.loss(spec, wv, x, y), w)
        assert rel_err(g, fd).max() < 1e-4

    def test_conv_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        spec = model.ModelSpec((8, 5, 3), "tanh", conv_stem=(2, 3, 2))
        w = model.init_params(spec, 3)
        x = rng.normal(size=(3, 1, 5, 5))
        y = rng.integers(0, 3, size=3)
        _, g = model.backward(spec, w, x, y)
        fd = fd_grad(lambda wv: model.loss(spec, wv, x, y), w)
        assert rel_err(g, fd).max() < 1e-4

    def test_duplicated_batch_invariance(self):
        rng = np.random.default_rng(5)
        spec = model.ModelSpec((3, 8, 2))
        w = model.init_params(spec, 1)
        x = rng.normal(size=(4, 3))
        y = rng.integers(0, 2, size=4)
        loss1, g1 = model.backward(spec, w, x, y)
        loss2, g2 = model.backward(spec, w, np.tile(x, (2, 1)), np.tile(y, 2))
        assert loss2 == pytest.approx(loss1, rel=1e-12)
        assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        spec = model.ModelSpec((3, 8, 2))
        w = model.init_params(spec, 1)
        x = rng.normal(size=(4, 3))
        y = rng.integers(0, 2, size=4)
        l1, g1 = model.backward(spec, w, x, y)
        l2, g2 = model.backward(spec, w, x, y)
        assert l1 == l2 and np.array_equal(g1, g2)


class TestLayout:
    GOLDEN_MLP = [("dense0.weight", (3, 2), 0), ("dense0.bias", (3,), 6),
                  ("dense1.weight", (2, 3), 9), ("dense1.bias", (2,), 15)]
    GOLDEN_CONV = [("conv.weight", (2, 1, 3, 3), 0), ("conv.bias", (2,), 18),
                   ("dense0.weight", (4, 8), 20), ("dense0.bias", (4,), 52),
                   ("dense1.weight", (2, 4), 56), ("dense1.bias", (2,), 64)]

    def test_golden_layout_tables(self):
        got = [(e.name, e.shape, e.offset) for e in model.param_layout(model.ModelSpec((2, 3, 2)))]
        assert got == self.GOLDEN_MLP
        spec = model.ModelSpec((8, 4, 2), conv_stem=(2, 3, 1))
        got = [(e.name, e.shape, e.offset) for e in model.param_layout(spec)]
        assert got == self.GOLDEN_CONV

    def test_flat_length_2_3(self):
        assert model.param_count(model.ModelSpec((2, 3))) == 9

    def test_single_index_maps_to_single_entry(self):
        spec = model.ModelSpec((2, 3, 2))
        w = model.init_params(spec, 0)
        base = model.unflatten(spec, w)
        for k in range(w.size):
            w2 = w.copy()
            w2[k] += 1.0
            changed = [int((a != b).sum()) for a, b in zip(base, model.unflatten(spec, w2))]
            assert sum(changed) == 1

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_flatten_unflatten_bijection(self, seed):
        spec = model.ModelSpec((3, 5, 4, 2), "tanh")
        w = np.random.default_rng(seed).normal(size=model.param_count(spec))
        assert np.array_equal(model.flatten(model.unflatten(spec, w)), w)

    def test_unflatten_length_mismatch(self):
        with pytest.raises(ShapeError):
            model.unflatten(model.ModelSpec((2, 3)), np.zeros(10))


class TestAutodiffOps:
    """Per-op gradient checks for the tape primitives."""

    def check(self, build, shapes, seed=0):
        rng = np.random.default_rng(seed)
        arrays = [rng.normal(size=s) for s in shapes]
        out = build([ad.Var(a) for a in arrays])
        out.backward()
        grads = []
        for i, a in enumerate(arrays):
            def f(flat, i=i):
                xs = [x.copy() for x in arrays]
                xs[i] = flat.reshape(shapes[i])
                return float(build([ad.Var(x) for x in xs]).data)
            grads.append(fd_grad(f, a.ravel().copy()).reshape(shapes[i]))
        return arrays, grads

    def test_matmul_add_bias(self):
        def build(vs):
            x, w, b = vs
            out = ad.add_bias(ad.matmul(x, w), b)
            return ad.cross_entropy(out, np.array([0, 1]))
        arrays, fds = self.check(build, [(2, 3), (3, 2), (2,)])
        vars_ = [ad.Var(a) for a in arrays]
        out = build(vars_)
        out.backward()
        for v, fd in zip(vars_, fds):
            assert rel_err(v.grad, fd).max() < 1e-4

    def test_linear_matches_matmul_path(self):
        rng = np.random.default_rng(4)
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
        via_linear = ad.linear(ad.Var(x), ad.Var(w), ad.Var(b)).data
        assert np.allclose(via_linear, x @ w.T + b)

    @pytest.mark.parametrize("op", [ad.relu, ad.tanh])
    def test_activations(self, op):
        def build(vs):
            return ad.cross_entropy(op(vs[0]), np.array([1, 0]))
        arrays, fds = self.check(build, [(2, 3)], seed=2)
        v = ad.Var(arrays[0])
        build([v]).backward()
        assert rel_err(v.grad, fds[0]).max() < 1e-4

    def test_grad_accumulates_over_reuse(self):
        x = ad.Var(np.array([[1.0, 2.0]]))
        out = ad.cross_entropy(ad.add_bias(x, ad.Var(np.zeros(2))), np.array([0]))
        # reuse x through two paths: x + x
        twice = ad.add_bias(ad.matmul(x, ad.Var(np.eye(2))), ad.Var(np.zeros(2)))
        total = ad.cross_entropy(twice, np.array([0]))
        total.backward()
        assert x.grad is not None
