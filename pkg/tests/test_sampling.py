import numpy as np
import pytest

from lidarpgt.bev import BoxGrid, GridSpec
from lidarpgt.sampling import SamplerConfig, grid_centres, sample_pixels, smooth_confidence

SMALL = GridSpec(x_range=(0.0, 20.0), y_range=(-10.0, 10.0), z_range=(-2.0, 2.0), height=80, width=80, stride=4)


def grid_with_confidence(spec, conf):
    grid = BoxGrid.zeros(spec)
    grid.data[:, :, 7] = conf
    return grid


class TestSamplePixels:
    def test_all_low_backfills_entirely(self):
        grid = grid_with_confidence(SMALL, 0.0)
        pixels = sample_pixels(grid, SMALL, SamplerConfig(seed=0))
        assert len(pixels) == 60
        assert len(set(pixels)) == 60

    def test_small_high_set_fully_taken(self):
        conf = np.zeros((20, 20))
        high = [(0, 0), (3, 7), (10, 10), (15, 2), (19, 19)]
        for r, c in high:
            conf[r, c] = 0.9
        grid = grid_with_confidence(SMALL, conf)
        pixels = sample_pixels(grid, SMALL, SamplerConfig(seed=1))
        assert len(pixels) == 60
        assert set(high).issubset(set(pixels))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(2)
        conf = rng.random((20, 20))
        grid = grid_with_confidence(SMALL, conf)
        a = sample_pixels(grid, SMALL, SamplerConfig(seed=42))
        b = sample_pixels(grid, SMALL, SamplerConfig(seed=42))
        assert a == b

    def test_seed_changes_selection_not_partition(self):
        rng = np.random.default_rng(3)
        conf = rng.random((20, 20))
        grid = grid_with_confidence(SMALL, conf)
        cfg = SamplerConfig(confidence_threshold=0.5, sample_count=20)
        a = sample_pixels(grid, SMALL, SamplerConfig(0.5, 20, seed=0))
        b = sample_pixels(grid, SMALL, SamplerConfig(0.5, 20, seed=99))
        assert a != b
        for pixels in (a, b):
            n_high = sum(1 for p in pixels if conf[p] > 0.5)
            assert n_high == 10

    def test_strict_threshold_boundary(self):
        conf = np.full((20, 20), 0.08)
        grid = grid_with_confidence(SMALL, conf)
        pixels = sample_pixels(grid, SMALL, SamplerConfig(confidence_threshold=0.08, seed=0))
        # equal-to-threshold pixels are low side; everything backfills from low
        assert len(pixels) == 60

    def test_small_grid_returns_everything(self):
        spec = GridSpec(x_range=(0, 4), y_range=(-2, 2), z_range=(-1, 1), height=8, width=8, stride=4)
        grid = BoxGrid.zeros(spec)
        pixels = sample_pixels(grid, spec, SamplerConfig(sample_count=60, seed=0))
        assert sorted(pixels) == [(r, c) for r in range(2) for c in range(2)]

    def test_rejects_odd_sample_count(self):
        with pytest.raises(ValueError):
            SamplerConfig(sample_count=61)


class TestSmoothConfidence:
    def test_uniform_grid(self):
        grid = grid_with_confidence(SMALL, 0.37)
        assert smooth_confidence(grid, SMALL, (5, 5)) == pytest.approx(0.37)

    def test_single_hot_pixel(self):
        conf = np.zeros((20, 20))
        conf[10, 10] = 0.9
        grid = grid_with_confidence(SMALL, conf)
        # zero offsets: 3D-nearest equals grid-nearest, 8 zero neighbours
        assert smooth_confidence(grid, SMALL, (10, 10)) == pytest.approx(0.1)

    def test_matches_brute_force_with_random_offsets(self):
        rng = np.random.default_rng(4)
        grid = BoxGrid.zeros(SMALL)
        grid.data[:, :, 0:3] = rng.normal(scale=0.4, size=(20, 20, 3))
        grid.data[:, :, 7] = rng.random((20, 20))
        centres = grid_centres(grid, SMALL).reshape(20, 20, 3)

        def brute(pixel):
            r0, c0 = pixel
            own = centres[r0, c0]
            entries = []
            for r in range(20):
                for c in range(20):
                    if (r, c) == pixel:
                        continue
                    d = float(np.sum((centres[r, c] - own) ** 2))
                    entries.append((d, r, c))
            entries.sort()
            vals = [grid.data[r0, c0, 7]] + [grid.data[r, c, 7] for _, r, c in entries[:8]]
            return sum(vals) / 9.0

        for pixel in [(0, 0), (19, 19), (7, 12), (10, 3), (4, 18)]:
            assert smooth_confidence(grid, SMALL, pixel) == pytest.approx(brute(pixel), abs=1e-12)

    def test_bounded_by_participants(self):
        rng = np.random.default_rng(5)
        grid = BoxGrid.zeros(SMALL)
        grid.data[:, :, 7] = rng.random((20, 20))
        for pixel in [(0, 5), (13, 13)]:
            val = smooth_confidence(grid, SMALL, pixel)
            assert grid.data[:, :, 7].min() <= val <= grid.data[:, :, 7].max()

    def test_tiny_grid_averages_what_exists(self):
        spec = GridSpec(x_range=(0, 4), y_range=(-2, 2), z_range=(-1, 1), height=8, width=8, stride=4)
        grid = BoxGrid.zeros(spec)
        grid.data[:, :, 7] = [[0.8, 0.4], [0.0, 0.2]]
        # only 3 other boxes exist
        assert smooth_confidence(grid, spec, (0, 0)) == pytest.approx((0.8 + 0.4 + 0.0 + 0.2) / 4)
