"""Self-contained invariant suites: physics, gradients, masking, freeze.

Each suite returns a list of Check rows (name, passed, detail) so the CLI
can print one pass/fail line per check and exit nonzero on any failure.
The suites are deterministic for a given seed and never write outside the
caller's control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as toy
from .events import EventVoxel, GrayFrame
from .losses import ContrastBatch, NegativeQueue, info_nce, rec_loss, standardize
from .masking import PatchGrid, make_mask
from .motion import VideoClip, resize_bilinear
from .simulator import DvsConfig, lin_log, simulate


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def all_passed(checks) -> bool:
    return all(c.passed for c in checks)


# ---------------------------------------------------------------------------
# Finite differences


def central_difference(f, x: np.ndarray, h: float = 1e-6,
                       coords=None) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x.

    When ``coords`` is given, only those flat indices are evaluated and the
    rest of the returned gradient is NaN (compare with ``max_rel_err`` over
    the same coordinate subset).
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    grad = np.full(flat.size, np.nan)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def max_rel_err(analytic, numeric) -> float:
    """Componentwise relative error with a scale-aware floor.

    Accepts single arrays or sequences of arrays (concatenated, so the floor
    reflects the whole gradient's scale). Components are compared against
    themselves when significant and against 1% of the largest gradient
    component otherwise, so finite-difference roundoff on negligible entries
    does not dominate the metric. NaNs in the numeric side (unevaluated
    coordinates) are skipped.
    """
    def flat(parts):
        if isinstance(parts, np.ndarray):
            parts = [parts]
        return np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1)
                               for p in parts])

    a = flat(analytic)
    b = flat(numeric)
    keep = ~np.isnan(b)
    a, b = a[keep], b[keep]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-2 * scale)
    return float((np.abs(a - b) / denom).max())


# ---------------------------------------------------------------------------
# Physics suite


def random_clip(rng, size: int = 32, n_frames: int = 5, fps: float = 30.0) -> VideoClip:
    """Small random smooth clip: a blend between two low-resolution fields."""
    lo = 4
    a = resize_bilinear(rng.uniform(10.0, 250.0, (lo, lo)), size, size)
    b = resize_bilinear(rng.uniform(10.0, 250.0, (lo, lo)), size, size)
    frames = []
    for i in range(n_frames):
        u = i / (n_frames - 1)
        frames.append(GrayFrame.from_array(np.clip(a * (1 - u) + b * u, 0, 255)))
    positions = [{"frame": i} for i in range(n_frames)]
    return VideoClip(frames, fps, positions)


def physics_residual(clip: VideoClip, stream, theta: float) -> float:
    """Max over pixels of |theta * polarity sum - (log I_end - log I_start)|."""
    height, width = clip.height, clip.width
    polarity_sum = np.zeros((height, width))
    np.add.at(polarity_sum, (stream.y.astype(np.int64), stream.x.astype(np.int64)),
              stream.p.astype(np.float64))
    delta = lin_log(clip.frames[-1].data) - lin_log(clip.frames[0].data)
    return float(np.abs(theta * polarity_sum - delta).max())


def physics_suite(seed: int = 0, n_clips: int = 50, size: int = 32) -> list[Check]:
    rng = np.random.default_rng([int(seed), 101])
    theta = 0.2
    worst = 0.0
    for _ in range(n_clips):
        clip = random_clip(rng, size=size)
        config = DvsConfig(pos_thres=theta, neg_thres=theta, cutoff_hz=0.0,
                           noiseless=True, seed=int(rng.integers(0, 2**31)))
        stream = simulate(clip, config)
        worst = max(worst, physics_residual(clip, stream, theta))
    return [Check(
        f"physics accumulation bound over {n_clips} clips",
        worst <= theta,
        f"max residual {worst:.6f} <= theta {theta}",
    )]


# ---------------------------------------------------------------------------
# Gradient suite


def check_rec_loss_gradients(seed: int, instances: int = 100, n: int = 64) -> float:
    rng = np.random.default_rng([int(seed), 201])
    worst = 0.0
    for _ in range(instances):
        n_patches = int(rng.integers(1, 4))
        preds = [rng.standard_normal(n) for _ in range(n_patches)]
        targets = [standardize(rng.standard_normal(n) * 3.0 + 1.0)
                   for _ in range(n_patches)]
        _, grads = rec_loss(preds, targets)
        fds = []
        for j in range(n_patches):
            def f(x, j=j):
                trial = list(preds)
                trial[j] = x
                return rec_loss(trial, targets)[0]

            fds.append(central_difference(f, preds[j].copy()))
        worst = max(worst, max_rel_err(grads, fds))
    return worst


def check_info_nce_gradients(seed: int, instances: int = 100, dim: int = 32,
                             n_neg: int = 1024, tau: float = 0.07,
                             neg_coords: int = 64) -> float:
    """FD check over the full query/positive and sampled negative coordinates."""
    rng = np.random.default_rng([int(seed), 202])
    worst = 0.0

    def unit(v):
        return v / np.linalg.norm(v)

    for _ in range(instances):
        q = unit(rng.standard_normal(dim))
        pos = unit(rng.standard_normal(dim))
        negs = rng.standard_normal((n_neg, dim))
        negs /= np.linalg.norm(negs, axis=1, keepdims=True)
        batch = ContrastBatch(q, pos, negs, tau)
        _, gq, gp, gn = info_nce(batch)

        fd_q = central_difference(
            lambda x: info_nce(ContrastBatch(x, pos, negs, tau))[0], q.copy())
        fd_p = central_difference(
            lambda x: info_nce(ContrastBatch(q, x, negs, tau))[0], pos.copy())
        coords = rng.choice(n_neg * dim, size=min(neg_coords, n_neg * dim),
                            replace=False)
        fd_n = central_difference(
            lambda x: info_nce(ContrastBatch(q, pos, x, tau))[0],
            negs.copy(), coords=coords)
        worst = max(worst, max_rel_err([gq, gp, gn], [fd_q, fd_p, fd_n]))
    return worst


def _tiny_config() -> toy.ModelConfig:
    return toy.ModelConfig(patch_size=2, bins=2, embed_dim=4, target_dim=6,
                           grid_rows=2, grid_cols=2)


def _tiny_sample(rng, cfg: toy.ModelConfig):
    from .dataset import SampleRecord
    from .events import DiffMap

    h = cfg.grid_rows * cfg.patch_size
    w = cfg.grid_cols * cfg.patch_size
    voxel = EventVoxel(w, h, cfg.bins,
                       rng.integers(-3, 4, (h, w, cfg.bins)).astype(np.float64))
    diff = DiffMap(w, h, rng.uniform(-50, 50, (h, w)))
    feature = rng.standard_normal(cfg.target_dim)
    feature /= np.linalg.norm(feature)
    return SampleRecord(voxel, diff, feature, "synthetic", 1, "")


def check_end_to_end_gradients(seed: int, instances: int = 100) -> float:
    """FD over every trainable weight of both stage objectives."""
    rng = np.random.default_rng([int(seed), 203])
    cfg = _tiny_config()
    worst = 0.0
    for k in range(instances):
        model = toy.TinyModel(cfg, seed=int(rng.integers(0, 2**31)))
        sample = _tiny_sample(rng, cfg)

        # Masked-modeling objective over encoder + decoder weights.
        mm_cfg = toy.StageConfig("MM")
        grid = PatchGrid(cfg.patch_size, cfg.grid_rows, cfg.grid_cols,
                         np.arange(cfg.n_patches, dtype=np.float64))
        mask = make_mask(grid, 0.5, "random_balanced", seed=k)
        names = model.param_names(mm_cfg.trainable)
        grads = model.zero_grads(names)
        toy.mm_step_loss(model, [sample], [mask], grads)
        analytic = np.concatenate([grads[n].reshape(-1) for n in names])

        def f_mm(vec):
            model.unflatten(names, vec)
            return toy.mm_step_loss(model, [sample], [mask])

        theta0 = model.flatten(names)
        fd = central_difference(f_mm, theta0.copy())
        model.unflatten(names, theta0)
        worst = max(worst, max_rel_err(analytic, fd))

        # Contrastive objective over encoder + head weights. Temperature kept
        # moderate: at 0.07 the softmax saturates and h=1e-6 central
        # differences bottom out on logsumexp cancellation noise.
        cl_cfg = toy.StageConfig("CL", temperature=0.5)
        queue = NegativeQueue(8)
        negs = rng.standard_normal((4, cfg.embed_dim))
        negs /= np.linalg.norm(negs, axis=1, keepdims=True)
        queue.push(negs)
        names = model.param_names(cl_cfg.trainable)
        grads = model.zero_grads(names)
        toy.cl_step_loss(model, [sample], cl_cfg, queue, grads)
        analytic = np.concatenate([grads[n].reshape(-1) for n in names])

        def f_cl(vec):
            model.unflatten(names, vec)
            return toy.cl_step_loss(model, [sample], cl_cfg, queue)[0]

        theta0 = model.flatten(names)
        fd = central_difference(f_cl, theta0.copy())
        model.unflatten(names, theta0)
        worst = max(worst, max_rel_err(analytic, fd))
    return worst


def gradient_suite(seed: int = 0, instances: int = 100) -> list[Check]:
    rec_err = check_rec_loss_gradients(seed, instances)
    nce_err = check_info_nce_gradients(seed, instances)
    e2e_err = check_end_to_end_gradients(seed, max(1, instances // 10))
    return [
        Check("rec_loss gradient vs central differences", rec_err < 1e-6,
              f"max rel err {rec_err:.3e} < 1e-6"),
        Check("info_nce gradient vs central differences", nce_err < 1e-5,
              f"max rel err {nce_err:.3e} < 1e-5"),
        Check("end-to-end gradient vs central differences", e2e_err < 1e-4,
              f"max rel err {e2e_err:.3e} < 1e-4"),
    ]


# ---------------------------------------------------------------------------
# Masking suite


def uniform_mask_indices(rng, total: int, m: int) -> np.ndarray:
    """Plain unstratified uniform masking baseline."""
    return rng.choice(total, size=m, replace=False)


def gradient_density_grid(total: int = 64, patch_size: int = 16) -> PatchGrid:
    rows = int(np.sqrt(total))
    cols = total // rows
    return PatchGrid(patch_size, rows, cols,
                     np.linspace(0.0, 100.0, rows * cols))


def density_gap(density: np.ndarray, masked_idx) -> float:
    masked = np.zeros(len(density), dtype=bool)
    masked[list(masked_idx)] = True
    return abs(float(density[~masked].mean()) - float(density[masked].mean()))


def balanced_vs_uniform_gap(seed: int, n_seeds: int = 1000):
    """Mean visible/masked density gap: stratified vs uniform masking."""
    grid = gradient_density_grid()
    m = grid.total // 2
    rng = np.random.default_rng([int(seed), 301])
    gaps_balanced = []
    gaps_uniform = []
    for i in range(n_seeds):
        mask = make_mask(grid, 0.5, "random_balanced", seed=int(seed) * 100003 + i)
        gaps_balanced.append(density_gap(grid.density, mask.masked))
        gaps_uniform.append(density_gap(grid.density,
                                        uniform_mask_indices(rng, grid.total, m)))
    return float(np.mean(gaps_balanced)), float(np.mean(gaps_uniform))


def masking_suite(seed: int = 0, n_seeds: int = 1000) -> list[Check]:
    checks = []
    ok = True
    detail = []
    for total in (16, 64, 196):
        grid = PatchGrid(16, int(np.sqrt(total)), total // int(np.sqrt(total)),
                         np.arange(total, dtype=np.float64))
        for ratio in (0.25, 0.5, 0.75):
            expected = int(np.floor(ratio * total + 0.5))
            for strategy in ("random_balanced", "density", "anti_density"):
                mask = make_mask(grid, ratio, strategy, seed=seed)
                if len(mask.masked) != expected or mask.total != total:
                    ok = False
                    detail.append(f"{strategy}@{ratio}x{total}")
    checks.append(Check("mask ratio exactness", ok,
                        "all ratios exact" if ok else "; ".join(detail)))

    bal, uni = balanced_vs_uniform_gap(seed, n_seeds)
    checks.append(Check(
        "density-balanced gap below uniform masking", bal < uni,
        f"balanced {bal:.4f} < uniform {uni:.4f} (over {n_seeds} seeds)"))
    return checks


# ---------------------------------------------------------------------------
# Freeze suite


def freeze_suite(seed: int = 0, steps: int = 100) -> list[Check]:
    rng = np.random.default_rng([int(seed), 401])
    cfg = _tiny_config()
    samples = [_tiny_sample(rng, cfg) for _ in range(8)]
    checks = []

    model = toy.TinyModel(cfg, seed=seed)
    frozen = model.snapshot_bytes(groups={"encoder", "decoder"})
    toy.train_stages(samples, [toy.StageConfig.defaults_for("Trans", steps=steps,
                                                            batch_size=4)],
                     seed=seed, model=model)
    after = model.snapshot_bytes(groups={"encoder", "decoder"})
    checks.append(Check("Trans stage leaves backbone bytes untouched",
                        frozen == after, f"{steps} steps"))

    model = toy.TinyModel(cfg, seed=seed)
    heads = model.snapshot_bytes(groups={"projection", "prediction", "target_proj"})
    toy.train_stages(samples, [toy.StageConfig.defaults_for("MM", steps=steps,
                                                            batch_size=4)],
                     seed=seed, model=model)
    after = model.snapshot_bytes(groups={"projection", "prediction", "target_proj"})
    checks.append(Check("MM stage leaves head bytes untouched",
                        heads == after, f"{steps} steps"))
    return checks


SUITES = {
    "physics": physics_suite,
    "gradients": gradient_suite,
    "masking": masking_suite,
    "freeze": freeze_suite,
}
