"""Finite-difference verification of every analytic adjoint in the package."""

import numpy as np
import pytest

from ffcdnn.autodiff import GradTape, Parameter, as_tensor, grad_check
from ffcdnn.capsule import FeatureNorm, RoutingLayer, squash, squash_backward
from ffcdnn.config import PipelineConfig
from ffcdnn.errors import InputDataError, NonDifferentiablePointError
from ffcdnn.ffc import BandMask, FFCLayer
from ffcdnn.model import (
    CNNBaseline,
    FFCDNN,
    activation_lengths,
    activation_lengths_vjp,
    margin_loss_batch,
)

TOL = 1e-4


def tiny_config(**overrides):
    base = dict(k=1, K1=8, band_low=1, band_high=3, pool_bands="single", K2=3,
                d_p=2, d_c=4, K3=3, routing_iters=3, seed=11)
    base.update(overrides)
    return PipelineConfig(**base).validate()


def param_op(param: Parameter, compute_loss):
    """Adapt a model parameter into a grad_check-able real-vector op."""
    complex_param = np.iscomplexobj(param.value)
    shape = param.value.shape

    def op(v):
        if complex_param:
            param.value = np.ascontiguousarray(v).view(np.complex128).reshape(shape).copy()
        else:
            param.value = v.reshape(shape).copy()
        param.grad = np.zeros_like(param.value)
        loss = compute_loss()
        g = param.grad.view(np.float64) if complex_param else param.grad
        return loss, g.reshape(v.shape).copy()

    if complex_param:
        flat = np.ascontiguousarray(param.value).view(np.float64).copy()
    else:
        flat = param.value.copy()
    return op, flat


class TestHarness:
    def test_linear_map_is_exact(self):
        def op(x):
            return float(np.sum(3.0 * x)), np.full_like(x, 3.0)

        rng = np.random.default_rng(0)
        for _ in range(3):
            assert grad_check(op, rng.standard_normal(5)) <= 1e-10

    def test_eps_domain(self):
        with pytest.raises(InputDataError):
            grad_check(lambda x: (float(x.sum()), np.ones_like(x)), np.ones(2), eps=0.5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputDataError):
            grad_check(lambda x: (float(x.sum()), np.ones(3)), np.ones(2))

    def test_step_discontinuity_diagnosed(self):
        # A step function: quotient grows like 1/eps, flagged as such.
        def op(x):
            return (1.0 if x[0] > 0 else 0.0), np.zeros_like(x)

        with pytest.raises(NonDifferentiablePointError):
            grad_check(op, np.array([1e-7]), eps=1e-3)

    def test_tape_chains_adjoints(self):
        tape = GradTape()
        x = as_tensor([1.0, 2.0, 3.0])
        tape.record(lambda g: 2.0 * g)        # y = 2x
        tape.record(lambda g: g * np.ones(3))  # z = sum(y)
        grad = tape.backward(np.asarray(1.0))
        assert np.allclose(grad, 2.0)

    def test_as_tensor_rejects_bad_shape(self):
        with pytest.raises(InputDataError):
            as_tensor([1.0, 2.0], shape=(3,))


class TestSquash:
    def test_squash_gradient(self):
        rng = np.random.default_rng(1)

        def op(u):
            w = weights

            def fwd(v):
                return float(np.sum(w * squash(v)))

            return fwd(u), squash_backward(w, u)

        for _ in range(5):
            u = rng.standard_normal(8)
            weights = rng.standard_normal(8)
            assert grad_check(op, u, eps=1e-5) <= TOL

    def test_squash_zero_gradient_convention(self):
        z = np.zeros(4)
        assert np.allclose(squash_backward(np.ones(4), z), 0.0)


class TestFFCLayer:
    def make_layer(self, seed=3):
        rng = np.random.default_rng(seed)
        layer = FFCLayer(k=1, time_steps=8, mask=BandMask(1, 3), rng=rng)
        layer.bias.value = rng.standard_normal(layer.bias.value.shape) * 0.05
        return layer, rng

    def test_parameter_gradients(self):
        layer, rng = self.make_layer()
        x = rng.standard_normal((2, 1, 1, 8))
        weights = rng.standard_normal((2, 1, 1, layer.n_bands))

        def compute_loss():
            out = layer.forward_time(x)
            layer.backward(weights)
            return float(np.sum(weights * out))

        for param in layer.params():
            op, flat = param_op(param, compute_loss)
            assert grad_check(op, flat, eps=1e-5) <= TOL, param.name

    def test_input_gradient(self):
        layer, rng = self.make_layer(seed=4)
        weights = rng.standard_normal((2, 1, 1, layer.n_bands))

        def op(x):
            out = layer.forward_time(x)
            dspec = layer.backward(weights)
            dx = layer.input_time_gradient(dspec)
            return float(np.sum(weights * out)), dx

        for _ in range(3):
            x = rng.standard_normal((2, 1, 1, 8))
            assert grad_check(op, x, eps=1e-5) <= TOL

    def test_zero_upstream_zero_grads(self):
        layer, rng = self.make_layer(seed=5)
        x = rng.standard_normal((2, 1, 1, 8))
        layer.forward_time(x)
        dspec = layer.backward(np.zeros((2, 1, 1, layer.n_bands)))
        assert np.all(layer.weights.grad == 0)
        assert np.all(layer.bias.grad == 0)
        assert np.all(dspec == 0)

    def test_bias_gradient_is_upstream_value(self):
        # One active position: the additive bias adjoint passes the upstream
        # gradient through unchanged.
        rng = np.random.default_rng(6)
        layer = FFCLayer(k=1, time_steps=8, mask=BandMask(2, 2), rng=rng)
        t = np.arange(8.0)
        x = np.cos(2 * np.pi * 2 * t / 8)[None, None, None, :]
        out = layer.forward_time(x)
        assert out.shape == (1, 1, 1, 1)
        upstream = np.array([[[[1.7]]]])
        layer.backward(upstream)
        assert layer.bias.grad[0, 0, 2] == pytest.approx(1.7, abs=1e-12)


class TestNormalization:
    def test_input_gradient_training_mode(self):
        rng = np.random.default_rng(7)
        norm = FeatureNorm(5)
        norm.scale.value = rng.uniform(0.5, 1.5, 5)
        norm.shift.value = rng.standard_normal(5) * 0.1
        weights = rng.standard_normal((4, 5))

        def op(x):
            out = norm.forward(x.reshape(4, 5), training=True)
            dx = norm.backward(weights)
            return float(np.sum(weights * out)), dx.reshape(x.shape)

        for _ in range(3):
            x = rng.standard_normal(20)
            assert grad_check(op, x, eps=1e-5) <= TOL

    def test_affine_parameter_gradients(self):
        rng = np.random.default_rng(8)
        norm = FeatureNorm(4)
        x = rng.standard_normal((6, 4))
        weights = rng.standard_normal((6, 4))

        def compute_loss():
            out = norm.forward(x, training=True)
            norm.backward(weights)
            return float(np.sum(weights * out))

        for param in norm.params():
            op, flat = param_op(param, compute_loss)
            assert grad_check(op, flat, eps=1e-5) <= TOL, param.name


class TestRouting:
    def test_input_gradient_unrolled(self):
        rng = np.random.default_rng(9)
        layer = RoutingLayer(n_capsules=4, primary_dim=2, class_dim=3,
                             iterations=3, rng=rng)
        weights = rng.standard_normal((2, 3, 3))

        def op(u):
            v, _ = layer.forward(u.reshape(2, 4, 2))
            du = layer.backward(weights)
            return float(np.sum(weights * v)), du.reshape(u.shape)

        for _ in range(5):
            u = rng.standard_normal(16) * 0.8
            assert grad_check(op, u, eps=1e-5) <= TOL

    def test_transform_gradient(self):
        rng = np.random.default_rng(10)
        layer = RoutingLayer(n_capsules=3, primary_dim=2, class_dim=3,
                             iterations=2, rng=rng)
        u = rng.standard_normal((2, 3, 2)) * 0.7
        weights = rng.standard_normal((2, 3, 3))

        def compute_loss():
            v, _ = layer.forward(u)
            layer.backward(weights)
            return float(np.sum(weights * v))

        op, flat = param_op(layer.transforms, compute_loss)
        assert grad_check(op, flat, eps=1e-5) <= TOL


class TestClassifierHead:
    def test_margin_loss_gradient(self):
        rng = np.random.default_rng(12)
        labels = np.array([0, 2, 1])

        def op(v):
            vectors = v.reshape(3, 3, 4)
            loss, dv, _ = margin_loss_batch(vectors, labels)
            return loss, dv.reshape(v.shape)

        for _ in range(5):
            v = rng.standard_normal(36) * 0.5
            assert grad_check(op, v, eps=1e-5) <= TOL

    def test_activation_gradient(self):
        rng = np.random.default_rng(13)
        weights = rng.standard_normal(3)

        def op(v):
            vectors = v.reshape(3, 4)
            val = float(np.sum(weights * activation_lengths(vectors)))
            return val, activation_lengths_vjp(weights, vectors).reshape(v.shape)

        for _ in range(5):
            v = rng.standard_normal(12)
            assert grad_check(op, v, eps=1e-5) <= TOL


class TestWholeModels:
    def test_cnn_baseline_gradient(self):
        cfg = tiny_config()
        rng = np.random.default_rng(14)
        model = CNNBaseline(cfg, rng=np.random.default_rng(15))
        labels = np.array([0, 1, 2])

        def op(x):
            batch = x.reshape(3, 1, 1, 8, 2)
            loss, _, dx = model.loss_and_grad((batch,), labels, want_input_grad=True)
            return loss, dx.reshape(x.shape)

        for _ in range(5):
            x = rng.standard_normal(3 * 8 * 2)
            assert grad_check(op, x, eps=1e-5) <= TOL

    def test_full_model_input_gradient(self):
        cfg = tiny_config()
        rng = np.random.default_rng(16)
        model = FFCDNN(cfg, rng=np.random.default_rng(17))
        labels = np.array([0, 1, 2])

        def op(x):
            batch = x.reshape(3, 1, 1, 8, 2)
            prepared = model.prepare(batch)
            loss, _, dx = model.loss_and_grad(prepared, labels, want_input_grad=True)
            return loss, dx.reshape(x.shape)

        for _ in range(5):
            x = rng.standard_normal(3 * 8 * 2)
            assert grad_check(op, x, eps=1e-5) <= TOL

    @staticmethod
    def _randomize(model, seed):
        # Generic parameter point: batch-norm makes a constant bias shift an
        # exact invariance in training mode, so the composite check fixes
        # random running statistics (inference normalization) and random
        # weights/biases; the batch-statistics adjoint has its own check.
        r = np.random.default_rng(seed)
        for br in (model.branch_lai, model.branch_lcc):
            br.weights.value = (r.standard_normal(br.weights.value.shape)
                                + 1j * r.standard_normal(br.weights.value.shape)) * 0.7
            br.bias.value = r.standard_normal(br.bias.value.shape) * 0.2
        model.norm.scale.value = r.uniform(0.5, 1.5, model.norm.scale.value.shape)
        model.norm.shift.value = r.standard_normal(model.norm.shift.value.shape) * 0.2
        model.norm.running_mean = r.standard_normal(model.norm.running_mean.shape) * 0.1
        model.norm.running_var = r.uniform(0.2, 1.0, model.norm.running_var.shape)
        model.routing.transforms.value = (
            r.standard_normal(model.routing.transforms.value.shape) * 0.6
        )

    def test_full_model_parameter_gradients(self):
        cfg = tiny_config(pool_bands="1-2,3-3", K2=2, K3=2)
        labels = np.array([0, 1, 2])
        for point in range(5):
            model = FFCDNN(cfg)
            self._randomize(model, 100 + point)
            rng = np.random.default_rng(200 + point)
            x = rng.standard_normal((3, 1, 1, 8, 2))
            prepared = model.prepare(x)

            def compute_loss():
                loss, _ = model.loss_and_grad(prepared, labels, training=False)
                return loss

            for param in model.params():
                op, flat = param_op(param, compute_loss)
                assert grad_check(op, flat, eps=1e-5) <= TOL, param.name
