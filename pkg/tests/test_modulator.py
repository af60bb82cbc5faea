import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modfeat import autodiff as ad
from modfeat import modulator as fm


def _features_with_variance(variances):
    """Two samples per class whose population variance is exactly v."""
    variances = np.asarray(variances, dtype=np.float64)
    num_classes, dim = variances.shape
    half = np.sqrt(variances)
    feats, classes = [], []
    for c in range(num_classes):
        feats.append(half[c])
        feats.append(-half[c])
        classes += [c, c]
    return np.array(feats), np.array(classes)


class TestVarianceInit:
    def test_hand_case(self):
        feats, classes = _features_with_variance([[2.0, 0.0, 1.0]])
        out = fm.variance_init(feats, classes, 1)
        np.testing.assert_allclose(out, [[0.0, 1.0, 0.5]], atol=1e-12)

    def test_constant_variance_degenerates_to_ones(self):
        feats, classes = _features_with_variance([[1.0, 1.0], [1.0, 1.0]])
        with pytest.warns(UserWarning):
            out = fm.variance_init(feats, classes, 2)
        np.testing.assert_array_equal(out, np.ones((2, 2)))

    def test_extremes_map_to_zero_and_one(self, rng):
        v = rng.uniform(0.5, 4.0, size=(3, 5))
        feats, classes = _features_with_variance(v)
        out = fm.variance_init(feats, classes, 3)
        assert out.flat[np.argmax(v)] == 0.0
        assert out.flat[np.argmin(v)] == 1.0

    @settings(max_examples=40, deadline=None)
    @given(
        arrays(
            np.float64,
            (2, 4),
            elements=st.floats(0.0, 50.0, allow_nan=False, allow_infinity=False),
        )
    )
    def test_range_is_unit_interval(self, v):
        if v.max() == v.min():
            return
        feats, classes = _features_with_variance(v)
        out = fm.variance_init(feats, classes, 2)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_requires_two_samples_per_class(self):
        with pytest.raises(fm.VarianceUndefinedError):
            fm.variance_init(np.ones((1, 3)), np.array([0]), 1)

    def test_uses_population_variance(self):
        # population variance of {0, 2} is 1, sample variance would be 2
        feats = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 0.0], [4.0, 0.0]])
        classes = np.array([0, 0, 1, 1])
        out = fm.variance_init(feats, classes, 2)
        # var class0 = [1, 0], class1 = [4, 0]; global min 0, max 4
        np.testing.assert_allclose(out, [[0.75, 1.0], [0.0, 1.0]])


class TestModulate:
    def setup_method(self):
        g = np.random.default_rng(3)
        self.z = g.normal(size=(1, 4))
        self.anchors = g.normal(size=(3, 4))

    def _modulate(self, weights):
        return fm.modulate(
            ad.constant(self.z), self.anchors, ad.constant(weights)
        ).value

    def test_all_ones_returns_replicated_input(self):
        out = self._modulate(np.ones((3, 4)))
        np.testing.assert_array_equal(out, np.tile(self.z, (3, 1)))

    def test_all_zeros_returns_anchors(self):
        out = self._modulate(np.zeros((3, 4)))
        np.testing.assert_array_equal(out, self.anchors)

    def test_half_returns_exact_midpoint(self):
        out = self._modulate(np.full((3, 4), 0.5))
        np.testing.assert_array_equal(out, (np.tile(self.z, (3, 1)) + self.anchors) / 2.0)

    def test_batched_rows_grouped_per_sample(self, rng):
        feats = rng.normal(size=(2, 4))
        weights = rng.uniform(size=(3, 4))
        out = fm.modulate(ad.constant(feats), self.anchors, ad.constant(weights)).value
        for i in range(2):
            single = fm.modulate(
                ad.constant(feats[i : i + 1]), self.anchors, ad.constant(weights)
            ).value
            np.testing.assert_array_equal(out[i * 3 : (i + 1) * 3], single)

    def test_anchor_row_fixed_point(self, rng):
        weights = rng.uniform(size=(3, 4))
        out = fm.modulate(
            ad.constant(self.anchors[1:2]), self.anchors, ad.constant(weights)
        ).value
        np.testing.assert_allclose(out[1], self.anchors[1], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(
        arrays(
            np.float64,
            (2, 3),
            elements=st.floats(0.0, 1.0, allow_nan=False, allow_infinity=False),
        )
    )
    def test_output_on_segment_for_unit_weights(self, weights):
        g = np.random.default_rng(0)
        z = g.normal(size=(1, 3))
        anchors = g.normal(size=(2, 3))
        out = fm.modulate(ad.constant(z), anchors, ad.constant(weights)).value
        rep = np.tile(z, (2, 1))
        lo = np.minimum(rep, anchors) - 1e-12
        hi = np.maximum(rep, anchors) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)

    def test_slope_in_input_equals_weights(self):
        weights = np.random.default_rng(1).uniform(size=(3, 4))
        p = ad.DualParam.create("z", self.z.copy())
        w_node = ad.constant(weights)
        mask_index = (2, 1)  # output row 2, coordinate 1

        def loss():
            out = fm.modulate(p.node, self.anchors, w_node)
            mask = np.zeros((3, 4))
            mask[mask_index] = 1.0
            return ad.sum_all(ad.mul(out, ad.constant(mask)))

        ad.backward(loss())
        expected = np.zeros((1, 4))
        expected[0, mask_index[1]] = weights[mask_index]
        np.testing.assert_allclose(p.grad, expected, atol=1e-12)
        report = ad.grad_check(loss, [p], step=1e-6, tolerance=1e-7)
        assert report.passed, report

    def test_gradient_flows_to_weights(self):
        w = ad.DualParam.create("w", np.random.default_rng(2).uniform(size=(3, 4)))

        def loss():
            out = fm.modulate(ad.constant(self.z), self.anchors, w.node)
            return ad.sum_all(ad.mul(out, out))

        report = ad.grad_check(loss, [w], step=1e-6, tolerance=1e-7)
        assert report.passed, report

    def test_shape_mismatch(self):
        with pytest.raises(ad.DimensionError):
            fm.modulate(ad.constant(self.z), self.anchors[:, :2], ad.constant(np.ones((3, 4))))
