"""Miniature encoder/decoder/heads stack and the three-stage trainer.

This is a desk-scale stand-in for the transformer backbones used at full
scale: a two-path linear/tanh encoder whose token is the exact sum of a
low-level linear embedding and a high-level nonlinear transform of it, a
decoder that fills masked positions with a learned token and mixes in a
global context so masked predictions depend on visible content, and
projection/prediction/target heads for the contrastive stages. It keeps
every structural contract of the full pipeline (fusion-as-sum, masked-token
decoding, frozen-group training) while making hand-written reverse-mode
gradients tractable and finite-difference checkable.

The trainer runs the staged schedule: masked modeling (encoder+decoder
trainable), feature transition (heads only, backbone frozen), and
contrastive learning (backbone and heads, no decoder). Parameters outside a
stage's trainable set are never touched, so they are byte-identical across
the stage. Optimizer state is rebuilt at each stage boundary.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventVoxel, GrayFrame
from .losses import (ContrastBatch, NegativeQueue, info_nce, rec_loss,
                     standardize)
from .masking import PatchMask, compute_density, make_mask
from .motion import resize_bilinear

STAGE_ORDER = ("MM", "Trans", "CL")
TRAINABLE_GROUPS = {
    "MM": frozenset({"encoder", "decoder"}),
    "Trans": frozenset({"projection", "prediction", "target_proj"}),
    "CL": frozenset({"encoder", "projection", "prediction", "target_proj"}),
}

_FEATURE_STREAM = 7  # substream tag for the target-feature projection


@dataclass
class ModelConfig:
    patch_size: int = 16
    bins: int = 5
    embed_dim: int = 64
    target_dim: int = 64
    grid_rows: int = 14
    grid_cols: int = 14

    @property
    def n_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def patch_input_dim(self) -> int:
        return self.patch_size * self.patch_size * self.bins

    @property
    def patch_output_dim(self) -> int:
        return self.patch_size * self.patch_size


@dataclass
class StageConfig:
    stage: str
    steps: int = 100
    lr: float = 1e-3
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    mask_ratio: float = 0.5
    mask_strategy: str = "random_balanced"
    temperature: float = 0.07
    queue_capacity: int = 1024

    def __post_init__(self):
        if self.stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def trainable(self) -> frozenset:
        return TRAINABLE_GROUPS[self.stage]

    @classmethod
    def defaults_for(cls, stage: str, **overrides) -> "StageConfig":
        # Production base learning rates per stage; everything else shared.
        lr = {"MM": 1e-3, "Trans": 1e-4, "CL": 1e-3}[stage]
        kw = {"lr": lr}
        kw.update(overrides)
        return cls(stage=stage, **kw)


def _uniform_init(rng, shape, fan_in) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class TinyModel:
    """Parameter container plus forward/backward passes for both objectives."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        d = config.embed_dim
        n_in = config.patch_input_dim
        n_out = config.patch_output_dim
        dt = config.target_dim
        p = config.n_patches
        rng = np.random.default_rng([int(seed), 11])

        self.params: dict[str, np.ndarray] = {}
        self.groups: dict[str, list[str]] = {
            "encoder": [], "decoder": [], "projection": [],
            "prediction": [], "target_proj": [],
        }

        def add(group, name, shape, fan_in):
            self.params[name] = _uniform_init(rng, shape, fan_in)
            self.groups[group].append(name)

        add("encoder", "enc.w_low", (d, n_in), n_in)
        add("encoder", "enc.b_low", (d,), n_in)
        add("encoder", "enc.w_hid", (d, d), d)
        add("encoder", "enc.b_hid", (d,), d)

        add("decoder", "dec.mask_token", (d,), d)
        add("decoder", "dec.pos", (p, d), d)
        add("decoder", "dec.w_ctx", (d, d), d)
        add("decoder", "dec.b_ctx", (d,), d)
        add("decoder", "dec.w_out", (n_out, d), d)
        add("decoder", "dec.b_out", (n_out,), d)

        add("projection", "proj.w1", (d, d), d)
        add("projection", "proj.b1", (d,), d)
        add("projection", "proj.w2", (d, d), d)
        add("projection", "proj.b2", (d,), d)
        add("projection", "proj.w3", (d, d), d)
        add("projection", "proj.b3", (d,), d)

        add("prediction", "pred.w1", (d, d), d)
        add("prediction", "pred.b1", (d,), d)
        add("prediction", "pred.w2", (d, d), d)
        add("prediction", "pred.b2", (d,), d)

        add("target_proj", "tproj.w", (d, dt), dt)
        add("target_proj", "tproj.b", (d,), dt)

    # -- parameter bookkeeping ------------------------------------------------

    def group_of(self, name: str) -> str:
        for group, names in self.groups.items():
            if name in names:
                return group
        raise KeyError(name)

    def param_names(self, groups=None) -> list[str]:
        if groups is None:
            return list(self.params)
        return [n for g in self.groups for n in self.groups[g] if g in groups]

    def snapshot_bytes(self, groups=None) -> dict[str, bytes]:
        return {n: self.params[n].tobytes() for n in self.param_names(groups)}

    def flatten(self, names) -> np.ndarray:
        return np.concatenate([self.params[n].reshape(-1) for n in names])

    def unflatten(self, names, vec: np.ndarray) -> None:
        i = 0
        for n in names:
            size = self.params[n].size
            self.params[n] = vec[i:i + size].reshape(self.params[n].shape).copy()
            i += size

    def zero_grads(self, names) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(self.params[n]) for n in names}

    # -- patch plumbing --------------------------------------------------------

    def extract_patches(self, voxel: EventVoxel) -> np.ndarray:
        cfg = self.config
        ps = cfg.patch_size
        if (voxel.height != cfg.grid_rows * ps or voxel.width != cfg.grid_cols * ps
                or voxel.bins != cfg.bins):
            raise ValueError("voxel geometry does not match the model config")
        blocks = voxel.data.reshape(cfg.grid_rows, ps, cfg.grid_cols, ps, cfg.bins)
        return blocks.transpose(0, 2, 1, 3, 4).reshape(cfg.n_patches, -1)

    def extract_diff_patches(self, diff_data: np.ndarray) -> np.ndarray:
        cfg = self.config
        ps = cfg.patch_size
        blocks = diff_data.reshape(cfg.grid_rows, ps, cfg.grid_cols, ps)
        return blocks.transpose(0, 2, 1, 3).reshape(cfg.n_patches, -1)

    # -- masked-modeling pass --------------------------------------------------

    def forward_mm_cached(self, voxel: EventVoxel, mask: PatchMask):
        """Predict pixels at masked positions; returns (preds, cache)."""
        cfg = self.config
        if mask.total != cfg.n_patches:
            raise ValueError("mask size does not match the patch grid")
        p = self.params
        patches = self.extract_patches(voxel)
        vis = np.array(mask.visible_sorted(), dtype=np.int64)
        msk = np.array(mask.masked_sorted(), dtype=np.int64)

        x_vis = patches[vis]
        z = x_vis @ p["enc.w_low"].T + p["enc.b_low"]
        h = np.tanh(z @ p["enc.w_hid"].T + p["enc.b_hid"])
        tok_vis = z + h  # fusion: low-level + high-level paths

        tokens = np.empty((cfg.n_patches, cfg.embed_dim))
        tokens[vis] = tok_vis
        tokens[msk] = p["dec.mask_token"]

        g = tokens.mean(axis=0)
        c = np.tanh(p["dec.w_ctx"] @ g + p["dec.b_ctx"])
        # Additive position/context terms plus their product: the product
        # lets masked predictions vary jointly with position and sample.
        pos_m = p["dec.pos"][msk]
        dec_in = tokens[msk] + pos_m + c + pos_m * c
        preds = dec_in @ p["dec.w_out"].T + p["dec.b_out"]

        cache = dict(x_vis=x_vis, z=z, h=h, vis=vis, msk=msk, g=g, c=c,
                     pos_m=pos_m, dec_in=dec_in, n_patches=cfg.n_patches)
        return preds, cache

    def backward_mm(self, cache, grad_preds, grads) -> None:
        """Accumulate parameter gradients for the masked-modeling pass."""
        p = self.params
        vis, msk = cache["vis"], cache["msk"]
        n_patches = cache["n_patches"]

        grads["dec.w_out"] += grad_preds.T @ cache["dec_in"]
        grads["dec.b_out"] += grad_preds.sum(axis=0)
        d_dec_in = grad_preds @ p["dec.w_out"]

        grads["dec.pos"][msk] += d_dec_in * (1.0 + cache["c"])
        d_c = (d_dec_in * (1.0 + cache["pos_m"])).sum(axis=0)
        d_pre_c = (1.0 - cache["c"] ** 2) * d_c
        grads["dec.w_ctx"] += np.outer(d_pre_c, cache["g"])
        grads["dec.b_ctx"] += d_pre_c
        d_g = p["dec.w_ctx"].T @ d_pre_c

        # Tokens feed the decoder input directly (masked rows) and the
        # global context mean (all rows).
        d_tokens = np.tile(d_g / n_patches, (n_patches, 1))
        d_tokens[msk] += d_dec_in

        grads["dec.mask_token"] += d_tokens[msk].sum(axis=0)

        d_tok_vis = d_tokens[vis]
        d_pre_h = (1.0 - cache["h"] ** 2) * d_tok_vis
        grads["enc.w_hid"] += d_pre_h.T @ cache["z"]
        grads["enc.b_hid"] += d_pre_h.sum(axis=0)
        d_z = d_tok_vis + d_pre_h @ p["enc.w_hid"]
        grads["enc.w_low"] += d_z.T @ cache["x_vis"]
        grads["enc.b_low"] += d_z.sum(axis=0)

    # -- contrastive pass ------------------------------------------------------

    def forward_cl_cached(self, voxel: EventVoxel, target_feature: np.ndarray):
        """Embed a voxel to a normalized query and project the target key.

        The fusion sum is dropped here: the event feature is the mean of the
        high-level tokens only.
        """
        p = self.params
        patches = self.extract_patches(voxel)
        z = patches @ p["enc.w_low"].T + p["enc.b_low"]
        h = np.tanh(z @ p["enc.w_hid"].T + p["enc.b_hid"])
        f = h.mean(axis=0)

        u1 = np.tanh(p["proj.w1"] @ f + p["proj.b1"])
        u2 = np.tanh(p["proj.w2"] @ u1 + p["proj.b2"])
        u3 = p["proj.w3"] @ u2 + p["proj.b3"]
        v1 = np.tanh(p["pred.w1"] @ u3 + p["pred.b1"])
        v2 = p["pred.w2"] @ v1 + p["pred.b2"]
        qn = np.linalg.norm(v2)
        if qn == 0.0:
            raise ValueError("query collapsed to zero norm")
        q = v2 / qn

        y = np.asarray(target_feature, dtype=np.float64).reshape(-1)
        w = p["tproj.w"] @ y + p["tproj.b"]
        wn = np.linalg.norm(w)
        if wn == 0.0:
            raise ValueError("target projection collapsed to zero norm")
        k_pos = w / wn

        cache = dict(patches=patches, z=z, h=h, f=f, u1=u1, u2=u2, u3=u3,
                     v1=v1, v2=v2, qn=qn, q=q, y=y, w=w, wn=wn, k_pos=k_pos)
        return q, k_pos, cache

    def backward_cl(self, cache, grad_q, grad_k, grads,
                    through_encoder: bool) -> None:
        """Accumulate gradients for heads and (optionally) the encoder."""
        p = self.params

        def through_norm(vec, norm, unit, grad_unit):
            return (grad_unit - unit * (unit @ grad_unit)) / norm

        d_v2 = through_norm(cache["v2"], cache["qn"], cache["q"], grad_q)
        grads["pred.w2"] += np.outer(d_v2, cache["v1"])
        grads["pred.b2"] += d_v2
        d_v1 = p["pred.w2"].T @ d_v2
        d_pre_v1 = (1.0 - cache["v1"] ** 2) * d_v1
        grads["pred.w1"] += np.outer(d_pre_v1, cache["u3"])
        grads["pred.b1"] += d_pre_v1
        d_u3 = p["pred.w1"].T @ d_pre_v1

        grads["proj.w3"] += np.outer(d_u3, cache["u2"])
        grads["proj.b3"] += d_u3
        d_u2 = p["proj.w3"].T @ d_u3
        d_pre_u2 = (1.0 - cache["u2"] ** 2) * d_u2
        grads["proj.w2"] += np.outer(d_pre_u2, cache["u1"])
        grads["proj.b2"] += d_pre_u2
        d_u1 = p["proj.w2"].T @ d_pre_u2
        d_pre_u1 = (1.0 - cache["u1"] ** 2) * d_u1
        grads["proj.w1"] += np.outer(d_pre_u1, cache["f"])
        grads["proj.b1"] += d_pre_u1

        d_w = through_norm(cache["w"], cache["wn"], cache["k_pos"], grad_k)
        grads["tproj.w"] += np.outer(d_w, cache["y"])
        grads["tproj.b"] += d_w

        if through_encoder:
            d_f = p["proj.w1"].T @ d_pre_u1
            n = cache["h"].shape[0]
            d_h = np.tile(d_f / n, (n, 1))
            d_pre_h = (1.0 - cache["h"] ** 2) * d_h
            grads["enc.w_hid"] += d_pre_h.T @ cache["z"]
            grads["enc.b_hid"] += d_pre_h.sum(axis=0)
            d_z = d_pre_h @ p["enc.w_hid"]
            grads["enc.w_low"] += d_z.T @ cache["patches"]
            grads["enc.b_low"] += d_z.sum(axis=0)


def forward_mm(voxel: EventVoxel, mask: PatchMask, model: TinyModel) -> list[np.ndarray]:
    """Predicted pixel arrays for the masked positions, in ascending order."""
    preds, _ = model.forward_mm_cached(voxel, mask)
    return [preds[i] for i in range(preds.shape[0])]


def forward_cl(voxel: EventVoxel, target_feature: np.ndarray, model: TinyModel,
               stage: StageConfig, queue: NegativeQueue | None = None) -> ContrastBatch:
    """Build the contrastive batch for a Trans or CL stage."""
    if stage.stage == "MM":
        raise ValueError("contrastive forward is undefined for the MM stage")
    q, k_pos, _ = model.forward_cl_cached(voxel, target_feature)
    negatives = queue.snapshot() if queue is not None and len(queue) else \
        np.empty((0, q.size))
    return ContrastBatch(q, k_pos, negatives, stage.temperature)


def make_target_feature(image: GrayFrame, seed: int, dim: int = 64) -> np.ndarray:
    """Deterministic stand-in for an external image encoder.

    The image is bilinearly reduced to 16x16, flattened, passed through a
    fixed seeded Gaussian projection, and L2-normalized. The projection
    matrix depends on the seed only, so the same image always maps to the
    same unit vector.
    """
    small = resize_bilinear(image.data, 16, 16).reshape(-1)
    small = (small - small.mean()) / (small.std() + 1e-9)
    rng = np.random.default_rng([int(seed), _FEATURE_STREAM])
    proj = rng.standard_normal((dim, small.size)) / math.sqrt(small.size)
    v = proj @ small
    n = np.linalg.norm(v)
    if n == 0.0:
        v = np.zeros(dim)
        v[0] = 1.0
        return v
    return v / n


# ---------------------------------------------------------------------------
# Optimizer and trainer


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter subset."""

    def __init__(self, names, params, cfg: StageConfig):
        self.names = list(names)
        self.cfg = cfg
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}
        self.t = 0

    def step(self, params, grads) -> None:
        c = self.cfg
        if c.grad_clip > 0:
            sq = sum(float(np.sum(grads[n] ** 2)) for n in self.names)
            norm = math.sqrt(sq)
            if norm > c.grad_clip:
                scale = c.grad_clip / norm
                for n in self.names:
                    grads[n] = grads[n] * scale
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = c.beta1 * self.m[n] + (1.0 - c.beta1) * g
            self.v[n] = c.beta2 * self.v[n] + (1.0 - c.beta2) * g * g
            m_hat = self.m[n] / bc1
            v_hat = self.v[n] / bc2
            params[n] -= c.lr * (m_hat / (np.sqrt(v_hat) + c.adam_eps)
                                 + c.weight_decay * params[n])


def mm_step_loss(model: TinyModel, batch, masks, grads=None) -> float:
    """Reconstruction loss over a batch; accumulates grads when given."""
    total = 0.0
    for sample, mask in zip(batch, masks):
        preds, cache = model.forward_mm_cached(sample.voxel, mask)
        targets = [standardize(patch) for patch in
                   model.extract_diff_patches(sample.diff.data)[cache["msk"]]]
        loss, grad_list = rec_loss(list(preds), targets)
        total += loss
        if grads is not None:
            grad_preds = np.stack(grad_list) / len(batch)
            model.backward_mm(cache, grad_preds, grads)
    return total / len(batch)


def cl_step_loss(model: TinyModel, batch, stage: StageConfig,
                 queue: NegativeQueue, grads=None):
    """Contrastive loss over a batch; returns (loss, new positive keys)."""
    through_encoder = stage.stage == "CL"
    total = 0.0
    keys = []
    for sample in batch:
        q, k_pos, cache = model.forward_cl_cached(sample.voxel, sample.target_feature)
        negatives = queue.snapshot() if len(queue) else np.empty((0, q.size))
        cb = ContrastBatch(q, k_pos, negatives, stage.temperature)
        loss, gq, gk, _ = info_nce(cb)
        total += loss
        keys.append(k_pos.copy())
        if grads is not None:
            model.backward_cl(cache, gq / len(batch), gk / len(batch), grads,
                              through_encoder)
    return total / len(batch), keys


@dataclass
class TraceRow:
    step: int
    stage: str
    loss: float


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "stage", "loss"])
        for row in trace:
            writer.writerow([row.step, row.stage, f"{row.loss:.10g}"])


def save_checkpoint(model: TinyModel, path_base, stage: str, step: int) -> None:
    """Flat little-endian float64 parameter blob plus a JSON manifest."""
    names = model.param_names()
    blob = b"".join(model.params[n].astype("<f8").tobytes() for n in names)
    Path(str(path_base) + ".ckpt").write_bytes(blob)
    manifest = {
        "format": "evkit-ckpt-v1",
        "stage": stage,
        "step": step,
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    Path(str(path_base) + ".manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_checkpoint(model: TinyModel, path_base) -> None:
    manifest = json.loads(Path(str(path_base) + ".manifest.json").read_text())
    blob = Path(str(path_base) + ".ckpt").read_bytes()
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        model.params[entry["name"]] = arr.reshape(shape).copy()
        offset += size * 8


def train_stages(samples, schedule, seed: int, model: TinyModel | None = None,
                 config: ModelConfig | None = None, out_dir=None):
    """Run the staged schedule over SampleRecord-like items.

    ``schedule`` is a list of StageConfig whose stages must follow the
    MM -> Trans -> CL order (any subset, each at most once). Returns
    (model, trace). Checkpoints are written per stage when ``out_dir``
    is given.
    """
    ranks = [STAGE_ORDER.index(sc.stage) for sc in schedule]
    if any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise ValueError("schedule must follow MM, Trans, CL order without repeats")

    if model is None:
        if config is None:
            if not samples:
                raise ValueError("need samples or an explicit model config")
            v = samples[0].voxel
            config = ModelConfig(
                patch_size=16, bins=v.bins,
                grid_rows=v.height // 16, grid_cols=v.width // 16,
                target_dim=len(samples[0].target_feature),
            )
        model = TinyModel(config, seed=seed)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    trace: list[TraceRow] = []
    global_step = 0
    for stage_idx, sc in enumerate(schedule):
        trainable = model.param_names(sc.trainable)
        opt = AdamW(trainable, model.params, sc)
        rng = np.random.default_rng([int(seed), 13, stage_idx])
        queue = NegativeQueue(sc.queue_capacity) if sc.stage != "MM" else None

        for local_step in range(sc.steps):
            idx = rng.choice(len(samples), size=min(sc.batch_size, len(samples)),
                             replace=False)
            batch = [samples[i] for i in idx]
            grads = model.zero_grads(trainable)

            if sc.stage == "MM":
                masks = []
                for sample in batch:
                    grid = compute_density(sample.voxel, model.config.patch_size)
                    mask_seed = int(rng.integers(0, 2 ** 31))
                    masks.append(make_mask(grid, sc.mask_ratio, sc.mask_strategy,
                                           seed=mask_seed))
                loss = mm_step_loss(model, batch, masks, grads)
            else:
                loss, keys = cl_step_loss(model, batch, sc, queue, grads)
                queue.push(np.stack(keys))

            opt.step(model.params, grads)
            trace.append(TraceRow(global_step, sc.stage, loss))
            global_step += 1

        if out is not None:
            save_checkpoint(model, out / f"stage_{sc.stage}", sc.stage, global_step)

    if out is not None:
        write_trace_csv(trace, out / "loss_trace.csv")
    return model, trace
