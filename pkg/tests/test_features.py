import math

import numpy as np
import pytest

from progresskit.features import (
    FeatureMap,
    FeatureVector,
    PoolingConfig,
    blend_input,
    pool_tube_features,
    roi_pool,
    spp_pool,
)
from progresskit.tubes import BoundingBox, Tube


def grid_map(h, w, c=1, scale=1.0, values=None):
    if values is None:
        values = np.arange(1, h * w * c + 1, dtype=float).reshape(h, w, c)
    return FeatureMap(scale, np.asarray(values, dtype=float).reshape(h, w, c))


FULL_BOX_4 = BoundingBox(0, 0, 4, 4)


class TestRoiPool:
    def test_constant_map_gives_constant(self):
        fmap = FeatureMap(1.0, np.full((5, 7, 3), 2.5))
        out = roi_pool(fmap, BoundingBox(1, 1, 6, 4), pool_h=2, pool_w=4)
        np.testing.assert_allclose(out.values, 2.5)
        assert out.kind == "region"

    def test_global_max_with_1x1(self):
        fmap = grid_map(4, 4)
        out = roi_pool(fmap, FULL_BOX_4, pool_h=1, pool_w=1)
        assert out.values.tolist() == [16.0]

    def test_quadrant_maxes(self):
        # 4x4 map with values 1..16 row-major, full box, 2x2 pooling
        fmap = grid_map(4, 4)
        out = roi_pool(fmap, FULL_BOX_4, pool_h=2, pool_w=2)
        assert out.values.tolist() == [6.0, 8.0, 14.0, 16.0]

    def test_spatial_scale_projection(self):
        # box in 40x40 image space, map is 4x4 -> scale 0.1
        fmap = grid_map(4, 4, scale=0.1)
        out = roi_pool(fmap, BoundingBox(0, 0, 40, 40), pool_h=2, pool_w=2)
        assert out.values.tolist() == [6.0, 8.0, 14.0, 16.0]

    def test_box_outside_grid_is_an_error(self):
        fmap = grid_map(4, 4)
        with pytest.raises(ValueError):
            roi_pool(fmap, BoundingBox(10, 10, 20, 20), 2, 2)

    def test_output_length_independent_of_box(self):
        fmap = grid_map(6, 6, c=2)
        for box in (BoundingBox(0, 0, 1, 1), BoundingBox(0, 0, 6, 6), BoundingBox(2, 3, 5, 4)):
            assert len(roi_pool(fmap, box, 3, 3)) == 18


class TestSppPool:
    def test_level_one_is_global_max(self):
        fmap = grid_map(4, 4)
        assert spp_pool(fmap, [1]).values.tolist() == [16.0]

    def test_constant_map(self):
        fmap = FeatureMap(1.0, np.full((3, 5, 2), -1.5))
        np.testing.assert_allclose(spp_pool(fmap, [1, 2]).values, -1.5)

    def test_two_levels_on_counting_map(self):
        fmap = grid_map(4, 4)
        assert spp_pool(fmap, [1, 2]).values.tolist() == [16.0, 6.0, 8.0, 14.0, 16.0]

    def test_length_formula(self):
        fmap = grid_map(8, 8, c=3)
        out = spp_pool(fmap, [1, 2, 4])
        assert len(out) == (1 + 4 + 16) * 3
        assert out.kind == "context"


def _oracle_pool(data, r0, r1, c0, c1, pool_h, pool_w):
    """Nested-loop max pooling oracle over grid cell range [r0,r1) x [c0,c1)."""
    h, w = r1 - r0, c1 - c0
    out = np.zeros((pool_h, pool_w, data.shape[2]))
    for bi in range(pool_h):
        for bj in range(pool_w):
            rs = range(r0 + math.floor(bi * h / pool_h), r0 + math.ceil((bi + 1) * h / pool_h))
            cs = range(c0 + math.floor(bj * w / pool_w), c0 + math.ceil((bj + 1) * w / pool_w))
            for ch in range(data.shape[2]):
                vals = [data[r, c, ch] for r in rs for c in cs]
                out[bi, bj, ch] = max(vals) if vals else 0.0
    return out.ravel()


class TestPoolingAgainstOracle:
    def test_roi_pool_matches_nested_loops(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            h, w, c = (int(rng.integers(1, 9)) for _ in range(3))
            c = min(c, 3)
            fmap = FeatureMap(1.0, rng.normal(size=(h, w, c)))
            x0 = int(rng.integers(0, w))
            y0 = int(rng.integers(0, h))
            box = BoundingBox(x0, y0, x0 + int(rng.integers(1, w - x0 + 1)), y0 + int(rng.integers(1, h - y0 + 1)))
            ph, pw = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            got = roi_pool(fmap, box, ph, pw).values
            want = _oracle_pool(fmap.data, int(box.y_min), int(box.y_max), int(box.x_min), int(box.x_max), ph, pw)
            np.testing.assert_allclose(got, want)

    def test_spp_pool_matches_nested_loops(self):
        rng = np.random.default_rng(4)
        for _ in range(60):
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            c = int(rng.integers(1, 4))
            fmap = FeatureMap(1.0, rng.normal(size=(h, w, c)))
            levels = [int(v) for v in rng.integers(1, 5, size=int(rng.integers(1, 4)))]
            got = spp_pool(fmap, levels).values
            want = np.concatenate([_oracle_pool(fmap.data, 0, h, 0, w, lv, lv) for lv in levels])
            np.testing.assert_allclose(got, want)

    def test_pooling_is_monotone(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            data = rng.normal(size=(6, 6, 2))
            bigger = data + rng.uniform(0, 1, size=data.shape)
            box = BoundingBox(1, 1, 5, 5)
            for fn in (
                lambda d: roi_pool(FeatureMap(1.0, d), box, 2, 3).values,
                lambda d: spp_pool(FeatureMap(1.0, d), [1, 2]).values,
            ):
                assert np.all(fn(bigger) >= fn(data))


class TestBlend:
    def test_concatenation_length(self):
        region = FeatureVector(np.zeros(4), "region")
        context = FeatureVector(np.zeros(5), "context")
        assert len(blend_input(region, context)) == 9

    def test_zero_in_zero_out(self):
        out = blend_input(FeatureVector(np.zeros(3), "region"), FeatureVector(np.zeros(2), "context"))
        np.testing.assert_allclose(out.values, 0.0)
        assert out.kind == "blended"

    def test_region_comes_first(self):
        out = blend_input(FeatureVector([1, 2], "region"), FeatureVector([3], "context"))
        assert out.values.tolist() == [1.0, 2.0, 3.0]

    def test_wrong_kinds_rejected(self):
        region = FeatureVector([1], "region")
        with pytest.raises(ValueError):
            blend_input(region, region)


class TestPoolTubeFeatures:
    def test_shape_and_config_length(self):
        rng = np.random.default_rng(6)
        maps = [FeatureMap(0.5, rng.normal(size=(4, 4, 2))) for _ in range(6)]
        tube = Tube("v", 0, 2, 4, tuple([BoundingBox(0, 0, 8, 8)] * 3))
        pooling = PoolingConfig(2, 2, (1, 2))
        rows = pool_tube_features(maps, tube, pooling)
        assert rows.shape == (3, pooling.blended_length(2))
