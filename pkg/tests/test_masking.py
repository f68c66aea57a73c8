import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evkit.events import EventStream, EventVoxel, voxelize
from evkit.masking import PatchGrid, compute_density, make_mask
from evkit.verify import balanced_vs_uniform_gap


def grid_from(densities, patch_size=16):
    n = len(densities)
    rows = 1
    return PatchGrid(patch_size, rows, n, np.asarray(densities, dtype=np.float64))


class TestComputeDensity:
    def test_zero_voxel(self):
        v = EventVoxel(32, 32, 2, np.zeros((32, 32, 2)))
        grid = compute_density(v, 16)
        assert grid.rows == grid.cols == 2
        assert not grid.density.any()

    def test_single_event_in_first_patch(self):
        data = np.zeros((32, 32, 2))
        data[3, 5, 1] = 1.0
        grid = compute_density(EventVoxel(32, 32, 2, data), 16)
        assert grid.density.tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_opposite_polarities_cancel_per_pixel(self):
        data = np.zeros((16, 16, 2))
        data[0, 0, 0] = 1.0
        data[0, 0, 1] = -1.0
        grid = compute_density(EventVoxel(16, 16, 2, data), 16)
        assert grid.density[0] == 0.0

    def test_random_voxel_matches_brute_force(self):
        rng = np.random.default_rng(3)
        n = 800
        t = np.sort(rng.integers(0, 1000, n)).astype(np.uint64)
        s = EventStream(48, 32, 0, 1000, t,
                        rng.integers(0, 48, n).astype(np.uint16),
                        rng.integers(0, 32, n).astype(np.uint16),
                        rng.choice([-1, 1], n).astype(np.int8))
        v = voxelize(s, 4)
        grid = compute_density(v, 16)
        expected = []
        for pr in range(2):
            for pc in range(3):
                acc = 0.0
                for yy in range(pr * 16, pr * 16 + 16):
                    for xx in range(pc * 16, pc * 16 + 16):
                        acc += abs(v.data[yy, xx, :].sum())
                expected.append(acc)
        assert np.allclose(grid.density, expected)

    def test_indivisible_dimensions_rejected(self):
        v = EventVoxel(30, 32, 2, np.zeros((32, 30, 2)))
        with pytest.raises(ValueError):
            compute_density(v, 16)


class TestMakeMask:
    def test_density_strategy_masks_top_two(self):
        mask = make_mask(grid_from([5, 1, 4, 2]), 0.5, "density")
        assert mask.masked == frozenset({0, 2})

    def test_anti_density_masks_bottom_two(self):
        mask = make_mask(grid_from([5, 1, 4, 2]), 0.5, "anti_density")
        assert mask.masked == frozenset({1, 3})

    def test_half_ratio_masks_half(self):
        for total in (4, 16, 64, 196):
            grid = grid_from(np.arange(total))
            mask = make_mask(grid, 0.5, "random_balanced", seed=1)
            assert len(mask.masked) == total // 2

    @pytest.mark.parametrize("ratio", [0.25, 0.5, 0.75, 0.3, 0.61])
    @pytest.mark.parametrize("strategy",
                             ["random_balanced", "density", "anti_density"])
    def test_ratio_exactness(self, ratio, strategy):
        for total in (7, 16, 50, 196):
            grid = grid_from(np.linspace(0, 9, total))
            mask = make_mask(grid, ratio, strategy, seed=5)
            assert len(mask.masked) == int(np.floor(ratio * total + 0.5))
            assert mask.total == total

    def test_density_and_anti_density_complement_at_half(self):
        rng = np.random.default_rng(8)
        densities = rng.integers(0, 5, 24).astype(float)  # plenty of ties
        a = make_mask(grid_from(densities), 0.5, "density")
        b = make_mask(grid_from(densities), 0.5, "anti_density")
        assert a.masked == b.visible
        assert a.visible == b.masked

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), total=st.integers(2, 64),
           ratio=st.floats(0.05, 0.95))
    def test_partition_property(self, seed, total, ratio):
        rng = np.random.default_rng(seed)
        grid = grid_from(rng.uniform(0, 10, total))
        for strategy in ("random_balanced", "density", "anti_density"):
            mask = make_mask(grid, ratio, strategy, seed=seed)
            assert mask.visible | mask.masked == frozenset(range(total))
            assert not (mask.visible & mask.masked)

    def test_deterministic_under_seed(self):
        grid = grid_from(np.arange(64))
        a = make_mask(grid, 0.5, "random_balanced", seed=33)
        b = make_mask(grid, 0.5, "random_balanced", seed=33)
        assert a.masked == b.masked

    def test_balanced_beats_uniform_on_gradient_grid(self):
        bal, uni = balanced_vs_uniform_gap(seed=0, n_seeds=200)
        assert bal < uni

    def test_invalid_ratio_rejected(self):
        for ratio in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                make_mask(grid_from([1, 2]), ratio, "density")

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError):
            make_mask(grid_from([1, 2]), 0.5, "curriculum")

    def test_json_round_trip(self):
        mask = make_mask(grid_from(np.arange(8)), 0.25, "density", seed=4)
        blob = json.dumps(mask.to_json_dict("density", 4))
        loaded = json.loads(blob)
        assert loaded["ratio"] == 0.25
        assert loaded["masked"] == sorted(mask.masked)
