"""Training loop: dynamic key sampling, three-part loss, checkpointing.

Every step re-samples which frames count as keys (always the context start
frames and the target; sometimes one interior anchor), rebuilds the input
by interpolating between those keys, and regresses the encoder output
toward the ground-truth window under scaled L1 losses.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, Tensor, backward, clip_grad_norm, l1_loss
from .dataset import LabelTable, MotionWindow, compute_norm_stats
from .geometry import Skeleton, slerp_segment
from .grp import GRPConfig, augment_windows
from .model import CMIBConfig, CMIBModel, save_checkpoint

DEFAULT_LOSS_WEIGHTS = (1.5, 0.05, 2.0)
SCALE_FLOOR = 1e-8


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite mid-run."""


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    seed: int = 0
    anchor_probability: float = 0.5
    w_sem: float = 1.5
    w_pos: float = 0.05
    w_rot: float = 2.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    augment: bool = False
    augment_samples: int = 1
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not 0.0 <= self.anchor_probability <= 1.0:
            raise ValueError("anchor_probability must be in [0, 1]")
        if min(self.w_sem, self.w_pos, self.w_rot) <= 0:
            raise ValueError("loss weights must be positive")


@dataclass(frozen=True)
class LossScales:
    c_sem: float
    c_pos: float
    c_rot: float

    def __post_init__(self):
        if min(self.c_sem, self.c_pos, self.c_rot) <= 0:
            raise ValueError("loss scales must be positive")


def sample_key_set(
    T: int,
    rng: np.random.Generator,
    anchor_probability: float = 0.5,
    context_frames: int = 1,
) -> set[int]:
    """Fresh key-frame set for one training item.

    Always the first context_frames frames and the target; with the given
    probability also one interior anchor drawn uniformly.
    """
    if T < 3:
        raise ValueError("need at least 3 frames to sample key sets")
    keys = set(range(1, context_frames + 1)) | {T}
    if rng.random() < anchor_probability:
        keys.add(int(rng.integers(context_frames + 1, T)))
    return keys


def interpolate_rows(
    pos: np.ndarray, rot: np.ndarray, key_frames: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Spread key frames across the window by lerp/slerp.

    pos (T, J, 3) and rot (T, J, 4) are ground truth; key rows are copied
    through bit-exactly, everything else is replaced by interpolation
    between the bracketing keys.
    """
    T = pos.shape[0]
    out_pos, out_rot = np.empty_like(pos), np.empty_like(rot)
    frames = sorted(key_frames)
    for f in frames:
        out_pos[f - 1] = pos[f - 1]
        out_rot[f - 1] = rot[f - 1]
    for a, b in zip(frames[:-1], frames[1:]):
        if b - a < 2:
            continue
        us = (np.arange(a + 1, b) - a) / (b - a)
        out_pos[a : b - 1] = (
            (1.0 - us)[:, None, None] * pos[a - 1] + us[:, None, None] * pos[b - 1]
        )
        out_rot[a : b - 1] = slerp_segment(
            rot[a - 1][None], rot[b - 1][None], us[:, None]
        )
    return out_pos, out_rot


def compute_losses(
    pred: Tensor,
    truth: np.ndarray,
    s_embed: np.ndarray,
    scales: LossScales,
    weights: tuple[float, float, float] = DEFAULT_LOSS_WEIGHTS,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """(L_total, L_sem, L_pos, L_rot); components already divided by scales.

    Row 1 of pred is compared with the semantic embedding; the remaining
    rows split into position and rotation blocks, each under mean L1.
    """
    truth = np.asarray(truth)
    t_rows = truth.shape[-2]
    if pred.data.shape[-2] != t_rows + 1 or pred.data.shape[-1] != truth.shape[-1]:
        raise ValueError(
            f"prediction {pred.data.shape} does not match truth {truth.shape} plus one row"
        )
    d = truth.shape[-1]
    split = 3 * (d // 7)
    dtype = pred.data.dtype

    sem_row = ad.slice_rows(pred, 0, 1)
    motion = ad.slice_rows(pred, 1, t_rows + 1)
    s_target = Tensor(np.broadcast_to(np.asarray(s_embed, dtype=dtype), sem_row.data.shape).copy())
    l_sem = ad.scale(l1_loss(sem_row, s_target), 1.0 / scales.c_sem)
    l_pos = ad.scale(
        l1_loss(ad.slice_cols(motion, 0, split), Tensor(truth[..., :split].astype(dtype))),
        1.0 / scales.c_pos,
    )
    l_rot = ad.scale(
        l1_loss(ad.slice_cols(motion, split, d), Tensor(truth[..., split:].astype(dtype))),
        1.0 / scales.c_rot,
    )
    w1, w2, w3 = weights
    total = ad.add(
        ad.add(ad.scale(l_sem, w1), ad.scale(l_pos, w2)), ad.scale(l_rot, w3)
    )
    return total, l_sem, l_pos, l_rot


def calibrate_loss_scales(
    model: CMIBModel,
    batch_rows: np.ndarray,
    batch_truth: np.ndarray,
    batch_labels: np.ndarray,
) -> LossScales:
    """Raw first-batch loss per term, floored, so scaled terms start at 1."""
    x = model.assemble(Tensor(batch_rows.astype(model.dtype)), batch_labels)
    pred = model.encoder_forward(x, train=False)
    s_embed = model.params["sem"].data[np.asarray(batch_labels)][..., None, :]
    unit = LossScales(1.0, 1.0, 1.0)
    _, l_sem, l_pos, l_rot = compute_losses(pred, batch_truth, s_embed, unit)
    return LossScales(
        max(float(l_sem.data), SCALE_FLOOR),
        max(float(l_pos.data), SCALE_FLOOR),
        max(float(l_rot.data), SCALE_FLOOR),
    )


@dataclass
class TrainResult:
    model: CMIBModel
    scales: LossScales
    trace: list[tuple[int, float, float, float, float]]
    metadata: dict
    checkpoint_path: Path | None = None


def _skeleton_dict(skeleton: Skeleton | None) -> dict | None:
    if skeleton is None:
        return None
    return {
        "joint_names": skeleton.joint_names,
        "parents": skeleton.parents.tolist(),
        "ref_lengths": skeleton.ref_lengths.tolist(),
    }


def train(
    windows: list[MotionWindow],
    model_config: CMIBConfig,
    config: TrainConfig,
    labels: LabelTable | None = None,
    skeleton: Skeleton | None = None,
    run_dir: str | Path | None = None,
) -> TrainResult:
    """Train from scratch on fixed-length windows; deterministic per seed."""
    if not windows:
        raise ValueError("training needs a non-empty window set")
    T = len(windows[0])
    J = windows[0].joint_count
    if any(len(w) != T or w.joint_count != J for w in windows):
        raise ValueError("all training windows must share one T and J")
    if J != model_config.J:
        raise ValueError(f"windows have J={J}, model expects {model_config.J}")
    if T > model_config.T_max:
        raise ValueError(f"window length {T} exceeds T_max {model_config.T_max}")

    if config.augment:
        if labels is None:
            raise ValueError("augmentation needs the label table")
        grp_cfg = GRPConfig(n_samples=config.augment_samples, seed=config.seed)
        extra, _ = augment_windows(windows, grp_cfg, labels)
        windows = windows + extra

    norm_stats = compute_norm_stats(windows)
    rng = np.random.default_rng(config.seed)
    model = CMIBModel(model_config, seed=config.seed)

    # per-window f64 views; quaternions stay exactly as stored
    all_pos = np.stack([w.positions().astype(np.float64) for w in windows])
    all_rot = np.stack([w.rotations().astype(np.float64) for w in windows])
    all_X = np.stack([w.X for w in windows])
    all_labels = np.array([w.label for w in windows])

    def build_batch(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.empty((len(idx), T, model_config.d), dtype=model.dtype)
        for b, i in enumerate(idx):
            keys = sample_key_set(
                T, rng, config.anchor_probability, model_config.context_frames
            )
            ipos, irot = interpolate_rows(all_pos[i], all_rot[i], sorted(keys))
            rows[b] = np.concatenate(
                [ipos.reshape(T, -1), irot.reshape(T, -1)], axis=1
            ).astype(model.dtype)
        return rows, all_X[idx], all_labels[idx]

    # calibration batch: first batch_size windows, keys resampled like training
    calib_idx = np.arange(min(config.batch_size, len(windows)))
    calib_rows, calib_truth, calib_labels = build_batch(calib_idx)
    scales = calibrate_loss_scales(model, calib_rows, calib_truth, calib_labels)

    weights = (config.w_sem, config.w_pos, config.w_rot)
    opt = AdamW(
        model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        weight_decay=config.weight_decay,
    )
    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)

    metadata = {
        "seed": config.seed,
        "loss_scales": [scales.c_sem, scales.c_pos, scales.c_rot],
        "loss_weights": list(weights),
        "labels": labels.names if labels is not None else None,
        "skeleton": _skeleton_dict(skeleton),
        "norm_stats": norm_stats.to_dict(),
        "T": T,
        "fps": windows[0].fps,
        "step": 0,
    }

    def save(step: int, name: str) -> Path | None:
        if run_path is None:
            return None
        metadata["step"] = step
        path = run_path / name
        save_checkpoint(model, path, metadata)
        return path

    trace: list[tuple[int, float, float, float, float]] = []
    last_good = save(0, "checkpoint_step0.cmib")
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(windows), config.batch_size)
        rows, truth, batch_labels = build_batch(idx)
        x = model.assemble(Tensor(rows), batch_labels)
        pred = model.encoder_forward(x, train=True, rng=rng)
        s_embed = model.params["sem"].data[batch_labels][..., None, :]
        total, l_sem, l_pos, l_rot = compute_losses(pred, truth, s_embed, scales, weights)
        values = (float(l_sem.data), float(l_pos.data), float(l_rot.data), float(total.data))
        if not all(np.isfinite(v) for v in values):
            path = save(step - 1, "last_good.cmib") or last_good
            raise TrainingDiverged(
                f"non-finite loss at step {step}; last good checkpoint: {path}"
            )
        trace.append((step, *values))
        backward(total)
        clip_grad_norm(model.parameters(), config.grad_clip)
        opt.step()
        opt.zero_grad()
        if run_path is not None and step % config.checkpoint_every == 0:
            last_good = save(step, f"checkpoint_step{step}.cmib")

    checkpoint = save(config.steps, "final.cmib")
    if run_path is not None:
        with open(run_path / "loss_trace.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "L_sem", "L_pos", "L_rot", "L_total"])
            writer.writerows(trace)
        (run_path / "config.json").write_text(
            json.dumps(
                {"model": model_config.to_dict(), "train": config.__dict__},
                indent=2, default=str,
            )
        )
    metadata["step"] = config.steps
    return TrainResult(model, scales, trace, metadata, checkpoint)
