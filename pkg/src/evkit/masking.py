"""Patch partitioning and visible/masked assignment for event voxels.

Patch density is the absolute per-pixel event accumulation summed over the
patch; it separates edge-dominated (dense) regions from texture/noise
(sparse) ones. Three strategies are provided:

  * ``random_balanced`` -- stratified random masking over density-sorted
    patches, so visible and masked sets end up with near-equal density.
  * ``density``         -- mask the highest-density fraction.
  * ``anti_density``    -- mask the lowest-density fraction.

All strategies are pure functions of (grid, ratio, strategy, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import EventVoxel


@dataclass(eq=False)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int
    density: np.ndarray  # (rows * cols,) float64, row-major patch order

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=np.float64)
        if self.density.shape != (self.rows * self.cols,):
            raise ValueError("density must have rows * cols entries")

    @property
    def total(self) -> int:
        return self.rows * self.cols


@dataclass
class PatchMask:
    visible: frozenset
    masked: frozenset
    ratio: float

    def __post_init__(self):
        self.visible = frozenset(self.visible)
        self.masked = frozenset(self.masked)
        if self.visible & self.masked:
            raise ValueError("visible and masked sets overlap")

    @property
    def total(self) -> int:
        return len(self.visible) + len(self.masked)

    def masked_sorted(self) -> list[int]:
        return sorted(self.masked)

    def visible_sorted(self) -> list[int]:
        return sorted(self.visible)

    def to_json_dict(self, strategy: str = "", seed: int = 0) -> dict:
        return {
            "ratio": self.ratio,
            "strategy": strategy,
            "seed": seed,
            "masked": self.masked_sorted(),
        }


def compute_density(voxel: EventVoxel, patch_size: int) -> PatchGrid:
    """Per-patch density: sum over the patch of |per-pixel polarity sum|."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    if voxel.height % patch_size or voxel.width % patch_size:
        raise ValueError(
            f"voxel {voxel.height}x{voxel.width} not divisible by patch {patch_size}"
        )
    rows = voxel.height // patch_size
    cols = voxel.width // patch_size
    accum = np.abs(voxel.data.sum(axis=2))
    density = (
        accum.reshape(rows, patch_size, cols, patch_size)
        .sum(axis=(1, 3))
        .reshape(-1)
    )
    return PatchGrid(patch_size, rows, cols, density)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _density_order(grid: PatchGrid) -> list[int]:
    # Descending density; ties broken by ascending patch index.
    return sorted(range(grid.total), key=lambda i: (-grid.density[i], i))


def make_mask(grid: PatchGrid, ratio: float, strategy: str, seed: int = 0) -> PatchMask:
    """Assign patches to visible/masked; |masked| = round(ratio * total).

    ``random_balanced`` partitions the density-sorted patch order into
    consecutive strata of size round(1 / min(ratio, 1 - ratio)) and draws
    each stratum's quota uniformly at random, which keeps the density
    distributions of the two sides close. ``density`` / ``anti_density``
    take the top / bottom of the same canonical order, so at ratio 0.5
    they are exact complements.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must lie strictly between 0 and 1")
    if strategy not in ("random_balanced", "density", "anti_density"):
        raise ValueError(f"unknown masking strategy: {strategy!r}")

    total = grid.total
    m = _round_half_up(ratio * total)
    order = _density_order(grid)

    if strategy == "density":
        masked = order[:m]
    elif strategy == "anti_density":
        masked = order[total - m:]
    else:
        rng = np.random.default_rng(seed)
        stratum = max(2, _round_half_up(1.0 / min(ratio, 1.0 - ratio)))
        masked = []
        done = 0
        for start in range(0, total, stratum):
            chunk = order[start:start + stratum]
            # Quota via cumulative rounding: totals sum to m exactly.
            quota = _round_half_up(ratio * (start + len(chunk))) - done
            quota = min(max(quota, 0), len(chunk))
            done += quota
            pick = rng.choice(len(chunk), size=quota, replace=False)
            masked.extend(chunk[i] for i in sorted(pick))

    masked_set = frozenset(masked)
    visible = frozenset(range(total)) - masked_set
    return PatchMask(visible, masked_set, ratio)
