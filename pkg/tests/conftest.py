import math

import numpy as np
import pytest

from evkit.dataset import SampleRecord
from evkit.events import DiffMap, EventStream, EventVoxel
from evkit.model import ModelConfig


def make_stream(n=100, width=64, height=48, t_end=100_000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, t_end + 1, n)).astype(np.uint64)
    return EventStream(
        width, height, 0, t_end, t,
        rng.integers(0, width, n).astype(np.uint16),
        rng.integers(0, height, n).astype(np.uint16),
        rng.choice([-1, 1], n).astype(np.int8),
    )


def synthetic_samples(n, seed, size=32, bins=3, feature_dim=32):
    """Learnable toy samples: smooth fields whose voxels mirror the diffs.

    Half the samples are linear ramps (standardized patches nearly identical
    within a sample), half low-frequency sinusoids (position-dependent
    patches); both give the masked-modeling stage a recoverable signal.
    """
    rng = np.random.default_rng([seed, 55])
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    samples = []
    for i in range(n):
        ang = rng.uniform(0, 2 * math.pi)
        a, b = math.cos(ang), math.sin(ang)
        if i % 2 == 0:
            amp = rng.uniform(20, 60)
            field = amp * ((a * xs + b * ys) - size / 2) / size
        else:
            freq = rng.uniform(0.04, 0.1)
            phase = rng.uniform(0, 2 * math.pi)
            field = 40.0 * np.sin(freq * (a * xs + b * ys) + phase)
        counts = np.rint(field / 10.0)
        voxel = np.tile((counts / bins)[:, :, None], (1, 1, bins))
        voxel = voxel + rng.normal(0, 0.15, voxel.shape)
        feat = rng.standard_normal(feature_dim)
        feat /= np.linalg.norm(feat)
        samples.append(SampleRecord(
            EventVoxel(size, size, bins, voxel),
            DiffMap(size, size, field),
            feat, f"synthetic_{i}", 1, ""))
    return samples


@pytest.fixture
def toy_config():
    return ModelConfig(patch_size=8, bins=3, embed_dim=32, target_dim=32,
                       grid_rows=4, grid_cols=4)
