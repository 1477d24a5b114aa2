import json
import math

import numpy as np
import pytest

from neurofuse import (
    AdamState,
    ConfigurationError,
    NumericError,
    ParamStore,
    Tensor2,
    ValidationError,
    adam_step,
    dropout,
    finite_difference_check,
    glorot_uniform,
    layer_norm,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    softmax,
)
from reference import adam_scalar_sequence


class TestTensorBasics:
    def test_promotes_scalars_and_vectors(self):
        assert Tensor2(3.0).shape == (1, 1)
        assert Tensor2([1.0, 2.0, 3.0]).shape == (1, 3)
        assert Tensor2([[1.0], [2.0]]).shape == (2, 1)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            Tensor2([np.inf, 1.0])
        with pytest.raises(NumericError):
            Tensor2([[np.nan]])

    def test_item_requires_single_entry(self):
        with pytest.raises(ValidationError):
            Tensor2([[1.0, 2.0]]).item()

    def test_division_overflow_raises(self):
        a = Tensor2([[1.0]])
        b = Tensor2([[0.0]])
        with np.errstate(divide="ignore"), pytest.raises(NumericError):
            a / b

    def test_backward_requires_scalar(self):
        t = Tensor2([[1.0, 2.0]], requires_grad=True)
        with pytest.raises(ValidationError):
            (t * 2.0).backward()

    def test_backward_requires_grad(self):
        t = Tensor2([[1.0]])
        with pytest.raises(ValidationError):
            t.backward()

    def test_no_grad_detaches(self):
        t = Tensor2([[2.0]], requires_grad=True)
        with no_grad():
            out = t * 3.0
        assert not out.requires_grad


def scalar_loss_cases():
    rng = np.random.default_rng(0)
    a_vals = rng.standard_normal((3, 4))
    b_vals = rng.standard_normal((3, 4))
    row = rng.standard_normal((1, 4))
    square = rng.standard_normal((4, 4))
    pos = np.abs(rng.standard_normal((3, 4))) + 0.5

    return [
        ("add_mul", {"a": a_vals, "b": b_vals},
         lambda p: ((p["a"] + p["b"]) * p["a"]).sum()),
        ("sub_div", {"a": a_vals, "p": pos},
         lambda p: (p["a"] / p["p"] - p["a"]).mean()),
        ("matmul", {"a": a_vals, "s": square},
         lambda p: (p["a"] @ p["s"]).sum()),
        ("transpose", {"a": a_vals},
         lambda p: (p["a"].transpose() @ p["a"]).sum()),
        ("sqrt", {"p": pos},
         lambda p: p["p"].sqrt().sum()),
        ("mean_axis0", {"a": a_vals},
         lambda p: (p["a"].mean(axis=0) * p["a"].mean(axis=0)).sum()),
        ("mean_axis1", {"a": a_vals},
         lambda p: (p["a"].mean(axis=1) * p["a"].mean(axis=1)).sum()),
        ("sum_axis", {"a": a_vals},
         lambda p: (p["a"].sum(axis=0) * p["a"].sum(axis=0)).mean()),
        ("broadcast_row", {"a": a_vals, "r": row},
         lambda p: ((p["a"] * p["r"]) + p["r"]).sum()),
        ("gather", {"a": a_vals},
         lambda p: p["a"].gather_rows(np.array([0, 2, 2, 1])).sum()),
        ("slice_concat", {"a": a_vals},
         lambda p: Tensor2.concat_cols(
             [p["a"].slice_cols(0, 2), p["a"].slice_cols(2, 4)]).mean()),
        ("softmax_rows", {"a": a_vals},
         lambda p: (p["a"].softmax_rows() * p["a"]).sum()),
        ("segment_softmax", {"a": a_vals},
         lambda p: (p["a"].slice_cols(0, 1).segment_softmax(np.array([0, 0, 1]), 2)
                    * p["a"].slice_cols(1, 2)).sum()),
        ("segment_sum", {"a": a_vals},
         lambda p: (p["a"].segment_sum(np.array([0, 0, 1]), 2)
                    * p["a"].segment_sum(np.array([0, 0, 1]), 2)).sum()),
    ]


class TestGradients:
    @pytest.mark.parametrize("name,values,loss_fn", scalar_loss_cases(),
                             ids=[c[0] for c in scalar_loss_cases()])
    def test_primitive_gradients_match_finite_differences(self, name, values, loss_fn):
        params = ParamStore()
        for key, arr in values.items():
            params.add(key, arr)

        def loss(p=params):
            entries = {k: p[k] for k, _ in p.items()}
            return loss_fn(entries)

        out = loss()
        params.zero_grads()
        out.backward()
        err = finite_difference_check(loss, params)
        assert err < 1e-6, f"{name}: relative error {err}"

    def test_quadratic_example(self):
        params = ParamStore()
        params.add("theta", np.array([[3.0]]))

        def loss(p=params):
            t = p["theta"]
            return (t * t * 0.5).sum()

        params.zero_grads()
        loss().backward()
        assert params["theta"].grad[0, 0] == pytest.approx(3.0, abs=1e-12)
        assert finite_difference_check(loss, params) < 1e-9

    def test_check_requires_populated_grads(self):
        params = ParamStore()
        params.add("theta", np.array([[1.0]]))
        with pytest.raises(ValidationError):
            finite_difference_check(lambda p: p["theta"].sum(), params)

    def test_check_rejects_bad_delta(self):
        params = ParamStore()
        params.add("theta", np.array([[1.0]]))
        params.zero_grads()
        params["theta"].sum().backward()
        with pytest.raises(ConfigurationError):
            finite_difference_check(lambda p: p["theta"].sum(), params, delta=0.0)

    def test_gradient_accumulates_across_reuse(self):
        params = ParamStore()
        params.add("x", np.array([[2.0]]))
        params.zero_grads()
        x = params["x"]
        (x * x + x * 3.0).sum().backward()  # d/dx (x^2 + 3x) = 2x + 3
        assert params["x"].grad[0, 0] == pytest.approx(7.0, abs=1e-12)


class TestSoftmaxAndLayerNorm:
    def test_softmax_analytic_example(self):
        out = softmax(np.array([0.0, math.log(2.0)]))
        assert out == pytest.approx([1 / 3, 2 / 3], abs=1e-12)

    def test_softmax_uniform_and_singleton(self):
        assert softmax(np.array([4.2, 4.2, 4.2])) == pytest.approx([1 / 3] * 3)
        assert softmax(np.array([-100.0])) == pytest.approx([1.0])

    def test_softmax_shift_invariance_and_sum(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = rng.standard_normal(rng.integers(1, 9))
            out = softmax(v)
            assert out.sum() == pytest.approx(1.0, abs=1e-12)
            assert softmax(v + 13.7) == pytest.approx(out, abs=1e-12)

    def test_softmax_rejects_empty_and_non_finite(self):
        with pytest.raises(ValidationError):
            softmax(np.array([]))
        with pytest.raises(NumericError):
            softmax(np.array([np.nan, 0.0]))

    def test_layer_norm_two_point_example(self):
        out = layer_norm(np.array([1.0, 3.0]), np.ones(2), np.zeros(2), eps=1e-30)
        assert out == pytest.approx([-1.0, 1.0], abs=1e-9)

    def test_layer_norm_constant_vector(self):
        out = layer_norm(np.full(5, 2.5), np.ones(5), np.zeros(5))
        assert out == pytest.approx(np.zeros(5), abs=1e-12)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.standard_normal(8) * 3 + 1
            out = layer_norm(x, np.ones(8), np.zeros(8), eps=1e-12)
            assert out.mean() == pytest.approx(0.0, abs=1e-9)
            assert out.std() == pytest.approx(1.0, abs=1e-6)
            shifted = layer_norm(x + 5.0, np.ones(8), np.zeros(8), eps=1e-12)
            assert shifted == pytest.approx(out, abs=1e-9)

    def test_layer_norm_length_mismatch(self):
        with pytest.raises(ValidationError):
            layer_norm(np.ones(3), np.ones(2), np.zeros(3))


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor2(np.random.default_rng(1).standard_normal((4, 4)))
        out = dropout(x, 0.5, rng=None, training=False)
        assert np.array_equal(out.values, x.values)

    def test_rate_zero_is_identity(self):
        x = Tensor2(np.ones((3, 3)))
        out = dropout(x, 0.0, rng=np.random.default_rng(0), training=True)
        assert np.array_equal(out.values, x.values)

    def test_mask_values_and_mean_preservation(self):
        rng = np.random.default_rng(11)
        x = Tensor2(np.ones((400, 250)))
        out = dropout(x, 0.2, rng=rng, training=True).values
        assert set(np.round(np.unique(out), 12)) == {0.0, 1.25}
        # survivor mean is within 3 standard errors of 1.0
        se = math.sqrt(0.2 / 0.8 / out.size)
        assert abs(out.mean() - 1.0) < 3 * se

    def test_rate_validation(self):
        x = Tensor2(np.ones((2, 2)))
        with pytest.raises(ConfigurationError):
            dropout(x, 1.0, rng=np.random.default_rng(0), training=True)
        with pytest.raises(ConfigurationError):
            dropout(x, -0.1, rng=np.random.default_rng(0), training=True)

    def test_training_requires_rng(self):
        x = Tensor2(np.ones((2, 2)))
        with pytest.raises(ConfigurationError):
            dropout(x, 0.5, rng=None, training=True)

    def test_deterministic_under_seed(self):
        x = Tensor2(np.ones((10, 10)))
        a = dropout(x, 0.3, rng=np.random.default_rng(7), training=True).values
        b = dropout(x, 0.3, rng=np.random.default_rng(7), training=True).values
        assert np.array_equal(a, b)


class TestParamStore:
    def test_sorted_names_and_duplicate_rejection(self):
        params = ParamStore()
        params.add("b", np.zeros((1, 2)))
        params.add("a", np.zeros((2, 2)))
        assert params.names() == ["a", "b"]
        with pytest.raises(ConfigurationError):
            params.add("a", np.zeros((1, 1)))

    def test_copy_values_is_independent(self):
        params = ParamStore()
        params.add("w", np.ones((2, 2)))
        snapshot = params.copy_values()
        params["w"].values[0, 0] = 5.0
        assert snapshot["w"][0, 0] == 1.0

    def test_load_values_shape_check(self):
        params = ParamStore()
        params.add("w", np.ones((2, 2)))
        with pytest.raises(ValidationError):
            params.load_values({"w": np.ones((3, 3))})

    def test_entry_count(self):
        params = ParamStore()
        params.add("w", np.ones((2, 3)))
        params.add("b", np.ones((1, 3)))
        assert params.entry_count() == 9


class TestGlorot:
    def test_bounds_and_determinism(self):
        limit = math.sqrt(6.0 / (20 + 30))
        a = glorot_uniform((20, 30), np.random.default_rng(5))
        b = glorot_uniform((20, 30), np.random.default_rng(5))
        assert np.array_equal(a, b)
        assert np.abs(a).max() <= limit
        assert a.std() > limit / 4  # actually spread out, not degenerate


class TestAdam:
    def make_params(self, value):
        params = ParamStore()
        params.add("theta", np.array([[float(value)]]))
        return params

    def set_grad(self, params, g):
        params.zero_grads()
        (params["theta"] * float(g)).sum().backward()

    def test_first_step_matches_hand_derivation(self):
        # with g = 1: m_hat = 1, v_hat = 1, so the step is -alpha / (1 + eps)
        params = self.make_params(0.0)
        state = AdamState.for_params(params, alpha=1e-4)
        self.set_grad(params, 1.0)
        adam_step(params, state)
        expected = -1e-4 / (1.0 + 1e-8)
        assert params["theta"].values[0, 0] == pytest.approx(expected, rel=1e-12)
        assert state.t == 1

    def test_multi_step_matches_reference_recurrence(self):
        rng = np.random.default_rng(9)
        grads = [float(g) for g in rng.standard_normal(12)]
        params = self.make_params(0.7)
        state = AdamState.for_params(params, alpha=3e-3)
        history = []
        for g in grads:
            self.set_grad(params, g)
            adam_step(params, state)
            history.append(float(params["theta"].values[0, 0]))
        expected = adam_scalar_sequence(0.7, grads, alpha=3e-3)
        assert history == pytest.approx(expected, rel=1e-12)

    def test_constant_gradient_decreases_monotonically(self):
        params = self.make_params(1.0)
        state = AdamState.for_params(params, alpha=1e-2)
        values = [1.0]
        for _ in range(5):
            self.set_grad(params, 1.0)
            adam_step(params, state)
            values.append(float(params["theta"].values[0, 0]))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_zero_gradient_keeps_parameters(self):
        params = self.make_params(2.5)
        state = AdamState.for_params(params, alpha=1e-2)
        params.zero_grads()
        (params["theta"] * 0.0).sum().backward()
        adam_step(params, state)
        assert params["theta"].values[0, 0] == 2.5
        assert state.t == 1

    def test_missing_gradient_names_parameter(self):
        params = ParamStore()
        params.add("left", np.ones((1, 1)))
        params.add("right", np.ones((1, 1)))
        params.zero_grads()
        (params["left"] * 2.0).sum().backward()
        state = AdamState.for_params(params)
        with pytest.raises(ValidationError, match="right"):
            adam_step(params, state)

    def test_hyperparameter_validation(self):
        params = self.make_params(0.0)
        with pytest.raises(ConfigurationError):
            AdamState.for_params(params, alpha=0.0)
        with pytest.raises(ConfigurationError):
            AdamState.for_params(params, beta1=1.0)

    def test_bit_reproducible(self):
        runs = []
        for _ in range(2):
            params = self.make_params(0.3)
            state = AdamState.for_params(params, alpha=2e-3)
            for g in (0.5, -1.25, 2.0):
                self.set_grad(params, g)
                adam_step(params, state)
            runs.append(params["theta"].values.copy())
        assert np.array_equal(runs[0], runs[1])


class TestCheckpoint:
    def build_params(self):
        rng = np.random.default_rng(17)
        params = ParamStore()
        params.add("layer.W", rng.standard_normal((3, 4)))
        params.add("layer.b", rng.standard_normal((1, 4)))
        return params

    def test_round_trip_exact(self, tmp_path):
        params = self.build_params()
        state = AdamState.for_params(params, alpha=1e-3)
        params.zero_grads()
        (params["layer.W"].sum() + params["layer.b"].sum()).backward()
        adam_step(params, state)
        path = tmp_path / "model.json"
        save_checkpoint(path, params, state, config_hash="abc123",
                        meta={"target_name": "fluid"})
        loaded = load_checkpoint(path)
        assert loaded["config_hash"] == "abc123"
        assert loaded["meta"]["target_name"] == "fluid"
        assert loaded["params"].names() == params.names()
        for name, tensor in loaded["params"].items():
            assert np.array_equal(tensor.values, params[name].values)
        assert loaded["adam"].t == 1
        for name in ("layer.W", "layer.b"):
            assert np.array_equal(loaded["adam"].m[name], state.m[name])
            assert np.array_equal(loaded["adam"].v[name], state.v[name])

    def test_format_marker_checked(self, tmp_path):
        path = tmp_path / "bogus.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(ValidationError):
            load_checkpoint(path)
