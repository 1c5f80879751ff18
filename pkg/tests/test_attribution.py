import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relevance_lens.attribution import (
    DEFAULT_EPSILON,
    GRADIENT,
    LRP_Z,
    AttributionMethod,
    Heatmap,
    attribute,
    gradient_saliency,
    lrp,
    normalize_heatmap,
    parse_method,
)
from relevance_lens.errors import InputError, NumericalError
from relevance_lens.nn import Conv2D, Dense, Flatten, Model, ReLU, forward
from relevance_lens.nn.layers import MaxPool2D
from relevance_lens.synthetic import random_model

from .conftest import dense_model
from .oracles import brute_force_lrp


def _eps(e):
    return AttributionMethod("lrp-epsilon", e)


def _weighted_outputs(model, x):
    _, trace = forward(model, x)
    return [rec.output for layer, rec in zip(model.layers, trace.records) if layer.weighted]


def _guarded_bias_free(rng, guard=1e-6):
    while True:
        model = random_model(rng, bias=False)
        x = rng.normal(size=model.input_shape)
        logits, _ = forward(model, x)
        if all(np.all(np.abs(z) >= guard) for z in _weighted_outputs(model, x)):
            return model, x, logits


class TestMethod:
    def test_parse(self):
        assert parse_method("gradient") == GRADIENT
        assert parse_method("lrp-z", 0.5) == LRP_Z
        assert parse_method("lrp-epsilon").epsilon == DEFAULT_EPSILON == 0.01
        assert parse_method("lrp-epsilon", 0.2).epsilon == 0.2

    @pytest.mark.parametrize("eps", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_epsilon(self, eps):
        with pytest.raises(InputError):
            _eps(eps)

    def test_unknown_method(self):
        with pytest.raises(InputError):
            parse_method("deconvnet")


class TestGradientSaliency:
    def test_linear_model_heatmap_is_abs_weight_row(self):
        w = np.array([[1.0, -2.0, 0.5, -3.0], [0.0, 4.0, -1.0, 2.0]])
        model = dense_model(w)
        h = gradient_saliency(model, np.full((1, 2, 2), 0.3), 0)
        np.testing.assert_array_equal(h.values, np.abs(w[0]).reshape(2, 2))
        assert h.method == "gradient" and h.target_class == 0

    def test_max_over_channels(self):
        w = np.array([[1.0, -5.0, 0.5, 2.0, -3.0, 1.0, 0.0, 0.0]])
        model = dense_model(w, input_shape=(2, 2, 2), labels=["a"])
        h = gradient_saliency(model, np.zeros((2, 2, 2)), 0)
        np.testing.assert_array_equal(h.values, [[3.0, 5.0], [0.5, 2.0]])

    def test_target_out_of_range(self):
        model = dense_model(np.ones((2, 4)))
        with pytest.raises(InputError):
            gradient_saliency(model, np.ones((1, 2, 2)), 5)


class TestNormalize:
    @pytest.mark.parametrize(
        "vals,expect",
        [
            ([2.0, 4.0, 6.0], [0.0, 0.5, 1.0]),
            ([-1.0, 0.0, 3.0], [0.0, 0.25, 1.0]),
            ([0.7, 0.7, 0.7], [0.0, 0.0, 0.0]),
        ],
    )
    def test_examples(self, vals, expect):
        h = normalize_heatmap(Heatmap(np.array([vals]), "gradient", 0))
        np.testing.assert_allclose(h.values[0], expect, atol=1e-15)
        assert h.normalized

    def test_records_range_and_inverts(self):
        h = normalize_heatmap(Heatmap(np.array([[-1.0, 0.0, 3.0]]), "lrp-z", 1))
        assert (h.norm_min, h.norm_max) == (-1.0, 3.0)
        np.testing.assert_allclose(h.raw_values(), [[-1.0, 0.0, 3.0]])

    def test_idempotent(self):
        h = normalize_heatmap(Heatmap(np.array([[2.0, 5.0]]), "gradient", 0))
        assert normalize_heatmap(h) is h

    def test_rejects_non_finite(self):
        with pytest.raises(NumericalError):
            Heatmap(np.array([[np.nan]]), "gradient", 0)


class TestLRP:
    def test_single_dense_sums_to_logit(self):
        w = np.array([[1.0, -2.0, 0.5, 3.0], [0.25, 0.5, -1.0, 2.0]])
        model = dense_model(w)
        x = np.array([[[0.2, 0.4], [0.6, 0.8]]])
        h = lrp(model, x, 0)
        # with no bias each pixel gets exactly x_i w_ci
        np.testing.assert_allclose(h.values, (x[0] * w[0].reshape(2, 2)), atol=1e-15)
        assert h.values.sum() == pytest.approx(forward(model, x)[0][0], abs=1e-12)

    def test_signed_channel_sum(self):
        w = np.array([[1.0, -1.0, 2.0, 0.0, -3.0, 1.0, 1.0, 1.0]])
        model = dense_model(w, input_shape=(2, 2, 2), labels=["a"])
        x = np.ones((2, 2, 2))
        h = lrp(model, x, 0)
        np.testing.assert_allclose(h.values, [[-2.0, 0.0], [3.0, 1.0]])

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(20):
            model = random_model(rng)
            x = rng.uniform(size=model.input_shape)
            c = int(rng.integers(model.n_classes))
            for eps in (None, 0.01):
                method = LRP_Z if eps is None else _eps(eps)
                try:
                    got = lrp(model, x, c, method).values
                except NumericalError:
                    continue
                np.testing.assert_allclose(got, brute_force_lrp(model, x, c, eps), rtol=0, atol=1e-12)

    def test_oracle_conv_and_pool(self, rng):
        conv = Conv2D(rng.normal(size=(2, 1, 2, 2)), np.zeros(2), stride=1, padding="same")
        model = Model(
            [conv, ReLU(), MaxPool2D((2, 2), 1), Flatten(), Dense(rng.normal(size=(2, 2 * 4 * 4)), np.zeros(2))],
            (1, 5, 5), [0.0], [1.0], ["a", "b"],
        )
        x = rng.uniform(size=(1, 5, 5))
        got = lrp(model, x, 1, _eps(1e-3)).values
        np.testing.assert_allclose(got, brute_force_lrp(model, x, 1, 1e-3), atol=1e-12)

    def test_conservation_bias_free(self, rng):
        for _ in range(20):
            model, x, logits = _guarded_bias_free(rng)
            c = int(np.argmax(logits))
            total = lrp(model, x, c).values.sum()
            assert abs(total - logits[c]) <= 1e-8 * max(abs(logits[c]), 1e-12)

    def test_single_layer_bias_absorbs_relevance(self):
        # Sum R_in = R_out * (z - b) / z at a single Dense layer
        w = np.array([[1.0, 2.0, 0.5, 0.25]])
        b = np.array([0.7])
        model = dense_model(w, bias=b, labels=["a"])
        x = np.ones((1, 2, 2))
        z = forward(model, x)[0][0]
        total = lrp(model, x, 0).values.sum()
        assert total == pytest.approx(z * (z - b[0]) / z, rel=1e-12)

    def test_epsilon_absorbs_share(self):
        w = np.array([[1.0, -2.0, 0.5, 3.0]])
        model = dense_model(w, labels=["a"])
        x = np.array([[[0.2, 0.4], [0.6, 0.8]]])
        z = forward(model, x)[0][0]
        eps = 0.5
        total = lrp(model, x, 0, _eps(eps)).values.sum()
        assert total == pytest.approx(z * z / (z + eps * np.sign(z)), rel=1e-12)
        assert abs(total) < abs(z)

    def test_epsilon_limit(self, rng):
        for _ in range(10):
            model = random_model(rng, positive=True)
            x = rng.uniform(0.1, 1.0, size=model.input_shape)
            a = lrp(model, x, 0, _eps(1e-9)).values
            b = lrp(model, x, 0, LRP_Z).values
            assert np.abs(a - b).max() < 1e-6

    def test_zero_logit_gives_zero_map(self):
        model = dense_model(np.array([[1.0, -1.0, 0.0, 0.0]]), labels=["a"])
        x = np.array([[[1.0, 1.0], [0.0, 0.0]]])
        h = lrp(model, x, 0, _eps(0.1))
        np.testing.assert_array_equal(h.values, np.zeros((2, 2)))

    def test_zero_denominator_raises_with_layer(self):
        hidden = Dense(np.array([[1.0, -1.0, 0.0, 0.0]]), np.zeros(1))
        out = Dense(np.array([[1.0]]), np.array([1.0]))
        model = Model([Flatten(), hidden, out], (1, 2, 2), [0.0], [1.0], ["a"])
        x = np.array([[[1.0, 1.0], [0.0, 0.0]]])
        with pytest.raises(NumericalError) as exc:
            lrp(model, x, 0)
        assert exc.value.layer_index == 1
        assert "lrp-epsilon" in str(exc.value)
        # the epsilon rule handles the same input
        assert np.all(np.isfinite(lrp(model, x, 0, _eps(0.01)).values))

    def test_any_zero_denominator_raises(self):
        # a black region gives z = 0 even at a unit that would receive no relevance
        w = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        model = dense_model(w)
        x = np.array([[[0.5, 0.0], [0.0, 0.0]]])
        with pytest.raises(NumericalError):
            lrp(model, x, 0)
        assert lrp(model, x, 0, _eps(0.01)).values[0, 0] == pytest.approx(0.5 * 0.5 / 0.51)

    def test_gradient_method_rejected(self):
        model = dense_model(np.ones((2, 4)))
        with pytest.raises(InputError):
            lrp(model, np.ones((1, 2, 2)), 0, GRADIENT)

    def test_attribute_dispatch(self):
        model = dense_model(np.array([[1.0, -2.0, 0.5, 3.0], [0.25, 0.5, -1.0, 2.0]]))
        x = np.full((1, 2, 2), 0.5)
        assert attribute(model, x, 0, GRADIENT, "img").method == "gradient"
        h = attribute(model, x, 0, _eps(0.2), "img")
        assert (h.method, h.epsilon, h.image_id) == ("lrp-epsilon", 0.2, "img")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.1, 10.0))
def test_lrp_scale_covariance(seed, alpha):
    rng = np.random.default_rng(seed)
    model, x, _ = _guarded_bias_free(rng)
    a = lrp(model, alpha * x, 0).values
    b = lrp(model, x, 0).values
    np.testing.assert_allclose(a, alpha * b, rtol=1e-9, atol=1e-12)
