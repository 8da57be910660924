"""Metrics, reference methods, and evaluation protocols for generated motion.

L2P standardizes global positions with train-split statistics and averages
the per-frame L2 norm of the difference; L2Q does the same on quaternions
after hemisphere alignment.  Reference methods are hold-last ("zero
velocity") and piecewise interpolation.  On top of those sit the anchor
placement protocol (perturb the anchor root on the ground plane, measure how
closely the output passes through it), the cross-label conditioning matrix,
and a wall-clock inference benchmark.  Everything funnels into EvalReport,
which serializes to JSON, aligned text tables, and per-window CSV.
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .dataset import LabelTable, MotionWindow, NormStats, window_to_sequence
from .geometry import (
    MotionSequence,
    Pose,
    Skeleton,
    heading_direction,
    interpolate_missing,
    quat_canonical,
    quat_mul,
    quat_rotate,
    yaw_quat,
)
from .model import CMIBModel, infill

RAW_FIELDS = [
    "section", "window", "source", "horizon", "frame", "method",
    "true_label", "given_label", "l2p", "l2q", "l2_m", "l2_norm",
]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _check_pair(pred: MotionSequence, truth: MotionSequence) -> None:
    if len(pred) != len(truth):
        raise ValueError(f"sequence length mismatch: {len(pred)} vs {len(truth)}")
    if pred.joint_count != truth.joint_count:
        raise ValueError(
            f"joint count mismatch: {pred.joint_count} vs {truth.joint_count}"
        )


def l2p(pred: MotionSequence, truth: MotionSequence, stats: NormStats) -> float:
    """Mean per-frame L2 norm of the standardized global-position difference."""
    _check_pair(pred, truth)
    J = truth.joint_count
    if stats.mean.shape != (3 * J,):
        raise ValueError(
            f"stats cover {stats.mean.shape[0]} components, sequences have {3 * J}"
        )
    a = pred.stacked_positions().reshape(len(pred), 3 * J)
    b = truth.stacked_positions().reshape(len(truth), 3 * J)
    diff = (a - stats.mean) / stats.std - (b - stats.mean) / stats.std
    return float(np.linalg.norm(diff, axis=1).mean())


def l2q(pred: MotionSequence, truth: MotionSequence) -> float:
    """Mean per-frame L2 norm of the quaternion difference.

    Both operands are brought onto the ground truth's hemisphere per joint
    first; the raw quaternion distance depends on the sign choice, the
    rotation distance should not.
    """
    _check_pair(pred, truth)
    qt = quat_canonical(truth.stacked_rotations())
    qp = pred.stacked_rotations()
    dots = np.sum(qp * qt, axis=-1, keepdims=True)
    qp = np.where(dots < 0.0, -qp, qp)
    diff = (qp - qt).reshape(len(pred), -1)
    return float(np.linalg.norm(diff, axis=1).mean())


# ---------------------------------------------------------------------------
# reference methods
# ---------------------------------------------------------------------------

def _check_keys(keys: dict[int, Pose], T: int) -> None:
    if 1 not in keys or T not in keys:
        raise ValueError("keys must include the endpoint frames 1 and T")


def zero_velocity_baseline(keys: dict[int, Pose], T: int, fps: float = 30.0) -> MotionSequence:
    """Infill by holding the most recent key pose constant."""
    _check_keys(keys, T)
    frames = []
    last = None
    for t in range(1, T + 1):
        if t in keys:
            last = keys[t]
        frames.append(last.copy())
    return MotionSequence(frames, fps=fps)


def interpolation_baseline(keys: dict[int, Pose], T: int, fps: float = 30.0) -> MotionSequence:
    """Infill by piecewise lerp/slerp between consecutive keys."""
    _check_keys(keys, T)
    return interpolate_missing(keys, T, fps=fps)


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

def compare_methods(
    model: CMIBModel | None,
    skeleton: Skeleton,
    windows: list[MotionWindow],
    stats: NormStats,
    horizons=None,
    raw: list | None = None,
) -> dict[int, dict[str, dict[str, float]]]:
    """L2P/L2Q per horizon and method, meaned over windows.

    Each horizon h scores the first h frames of every window given only the
    endpoint keys {1, h}.  Pass model=None to evaluate the reference methods
    alone.  `raw` collects per-window rows when provided.
    """
    if not windows:
        raise ValueError("need a non-empty window list")
    T = len(windows[0])
    if horizons is None:
        horizons = (T,)
    for h in horizons:
        if not 2 <= h <= T:
            raise ValueError(f"horizon {h} outside [2, {T}]")

    sums: dict[int, dict[str, list]] = {
        h: {m: [] for m in ("zero_velocity", "interpolation", "model")} for h in horizons
    }
    for i, w in enumerate(windows):
        seq = window_to_sequence(w)
        for h in horizons:
            truth = MotionSequence(seq.frames[:h], fps=seq.fps)
            keys = {1: seq.frames[0], h: seq.frames[h - 1]}
            outputs = {
                "zero_velocity": zero_velocity_baseline(keys, h, fps=seq.fps),
                "interpolation": interpolation_baseline(keys, h, fps=seq.fps),
            }
            if model is not None:
                outputs["model"] = infill(
                    model, skeleton, keys[1], keys[h], h, w.label, fps=seq.fps
                )
            for method, out in outputs.items():
                p, q = l2p(out, truth, stats), l2q(out, truth)
                sums[h][method].append((p, q))
                if raw is not None:
                    raw.append({
                        "section": "methods", "window": i, "source": w.source,
                        "horizon": h, "method": method, "l2p": p, "l2q": q,
                    })

    table: dict[int, dict[str, dict[str, float]]] = {}
    for h in horizons:
        table[h] = {}
        for method, vals in sums[h].items():
            if not vals:
                continue
            arr = np.asarray(vals)
            table[h][method] = {
                "l2p": float(arr[:, 0].mean()),
                "l2q": float(arr[:, 1].mean()),
                "n": len(vals),
            }
    return table


def reorient_heading(pose: Pose, direction_xy: np.ndarray) -> Pose:
    """Yaw a pose about the vertical axis through its root so it faces
    ``direction_xy``.  A near-zero direction leaves the pose unchanged.
    """
    direction_xy = np.asarray(direction_xy, dtype=np.float64)
    if np.hypot(direction_xy[0], direction_xy[1]) < 1e-9:
        return pose.copy()
    f = heading_direction(pose)
    delta = float(
        np.arctan2(direction_xy[1], direction_xy[0]) - np.arctan2(f[1], f[0])
    )
    q = yaw_quat(delta)
    pivot = pose.positions[0] * np.array([1.0, 1.0, 0.0])
    positions = quat_rotate(q, pose.positions - pivot) + pivot
    return Pose(positions, quat_mul(q, pose.rotations))


def anchor_eval(
    model: CMIBModel | None,
    skeleton: Skeleton,
    windows: list[MotionWindow],
    stats: NormStats,
    anchor_frames=(20, 40, 60),
    radius: float = 0.5,
    seed: int = 0,
    method: str = "model",
    raw: list | None = None,
) -> dict[int, dict[str, float]]:
    """How closely generated motion passes through a displaced anchor.

    Per window and anchor frame t: translate the ground-truth pose at t by a
    uniform-disk sample of the given radius on the ground plane, turn the
    start pose toward the displaced anchor and the target pose along
    anchor-to-target, regenerate with the anchor as a key, and record the L2
    distance between requested and generated root (x, y) at frame t.
    Reported in meters and in standardized units side by side.
    """
    if method not in ("model", "interpolation"):
        raise ValueError(f"unknown method {method!r}")
    if method == "model" and model is None:
        raise ValueError("model method needs a model")
    rng = np.random.default_rng(seed)
    root = skeleton.root
    std_xy = stats.std[3 * root: 3 * root + 2]

    dists: dict[int, list] = {t: [] for t in anchor_frames}
    for i, w in enumerate(windows):
        seq = window_to_sequence(w)
        T = len(seq)
        for t in anchor_frames:
            if not 1 < t < T:
                raise ValueError(f"anchor frame {t} must lie strictly inside (1, {T})")
            theta = rng.uniform(0.0, 2.0 * np.pi)
            r = radius * np.sqrt(rng.uniform())
            offset = np.array([r * np.cos(theta), r * np.sin(theta), 0.0])
            anchor = seq.frames[t - 1].copy()
            anchor = Pose(anchor.positions + offset, anchor.rotations)
            a_xy = anchor.positions[root, :2]

            start = reorient_heading(seq.frames[0], a_xy - seq.frames[0].positions[root, :2])
            target = reorient_heading(
                seq.frames[-1], seq.frames[-1].positions[root, :2] - a_xy
            )
            keys = {1: start, t: anchor, T: target}
            if method == "interpolation":
                gen = interpolation_baseline(keys, T, fps=seq.fps)
            else:
                gen = infill(
                    model, skeleton, start, target, T, w.label,
                    anchor=(t, anchor), fps=seq.fps,
                )
            g_xy = gen.frames[t - 1].positions[root, :2]
            d_m = float(np.hypot(*(a_xy - g_xy)))
            d_norm = float(np.hypot(*((a_xy - g_xy) / std_xy)))
            dists[t].append((d_m, d_norm))
            if raw is not None:
                raw.append({
                    "section": "anchor", "window": i, "source": w.source,
                    "frame": t, "method": method, "l2_m": d_m, "l2_norm": d_norm,
                })

    table = {}
    for t in anchor_frames:
        arr = np.asarray(dists[t])
        table[t] = {
            "mean_m": float(arr[:, 0].mean()),
            "mean_norm": float(arr[:, 1].mean()),
            "n": len(dists[t]),
        }
    return table


@dataclass
class SemanticMatrix:
    """Cross-label L2P: rows are true labels, columns the label given to
    the model.  diag_min_rows counts rows whose minimum sits on the diagonal.
    """

    row_labels: list[str]
    col_labels: list[str]
    matrix: np.ndarray
    diag_min_rows: int
    raw: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "row_labels": self.row_labels,
            "col_labels": self.col_labels,
            "matrix": self.matrix.tolist(),
            "diag_min_rows": self.diag_min_rows,
        }


def semantic_matrix(
    model: CMIBModel,
    skeleton: Skeleton,
    windows: list[MotionWindow],
    labels: LabelTable,
    stats: NormStats,
) -> SemanticMatrix:
    """Infill every test window under every label, no anchor, and cross-
    tabulate L2P against the window's true label.  Labels with no test
    windows drop out of the rows with a warning.
    """
    raw: list[dict] = []
    rows = []
    row_labels = []
    for true_id, true_name in enumerate(labels.names):
        mine = [(i, w) for i, w in enumerate(windows) if w.label == true_id]
        if not mine:
            warnings.warn(f"label {true_name!r} absent from the test set; row omitted")
            continue
        row_labels.append(true_name)
        row = []
        for given_id, given_name in enumerate(labels.names):
            vals = []
            for i, w in enumerate(mine):
                idx, win = w
                truth = window_to_sequence(win)
                gen = infill(
                    model, skeleton, truth.frames[0], truth.frames[-1],
                    len(truth), given_id, fps=truth.fps,
                )
                p = l2p(gen, truth, stats)
                vals.append(p)
                raw.append({
                    "section": "semantic", "window": idx, "source": win.source,
                    "true_label": true_name, "given_label": given_name, "l2p": p,
                })
            row.append(float(np.mean(vals)))
        rows.append(row)

    matrix = np.asarray(rows, dtype=np.float64)
    diag_min = 0
    for r, name in enumerate(row_labels):
        if labels.names[int(np.argmin(matrix[r]))] == name:
            diag_min += 1
    return SemanticMatrix(row_labels, labels.names, matrix, diag_min, raw)


def bench_inference(
    model: CMIBModel,
    batch_sizes=(1,),
    horizons=None,
    trials: int = 30,
    seed: int = 0,
) -> list[dict]:
    """Wall-clock forward-pass latency per (batch size, horizon), eval mode,
    mean and standard deviation over the given trial count (one warmup run
    excluded).
    """
    if horizons is None:
        horizons = (model.config.T_max,)
    rng = np.random.default_rng(seed)
    out = []
    for B in batch_sizes:
        for h in horizons:
            rows = rng.standard_normal((B, h, model.config.d)).astype(model.dtype)
            ids = np.zeros(B, dtype=np.int64)
            x = model.assemble(Tensor(rows), ids)
            model.encoder_forward(x, train=False)  # warmup
            times = []
            for _ in range(trials):
                t0 = time.perf_counter()
                model.encoder_forward(x, train=False)
                times.append(time.perf_counter() - t0)
            out.append({
                "batch": B, "horizon": h,
                "mean_s": float(np.mean(times)), "std_s": float(np.std(times)),
                "trials": trials,
            })
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _check_numbers(obj, path=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_numbers(v, f"{path}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_numbers(v, f"{path}[{i}]")
    elif isinstance(obj, (int, float)):
        if not np.isfinite(obj):
            raise ValueError(f"non-finite report entry at {path}")
        if obj < 0:
            raise ValueError(f"negative report entry at {path}")


@dataclass
class EvalReport:
    """All evaluation outputs in one serializable bundle."""

    methods: dict[int, dict[str, dict[str, float]]] = field(default_factory=dict)
    anchor: dict[int, dict[str, float]] = field(default_factory=dict)
    semantic: dict | None = None
    latency: list[dict] = field(default_factory=list)
    raw: list[dict] = field(default_factory=list)

    def __post_init__(self):
        _check_numbers(self.methods, "methods")
        _check_numbers(self.anchor, "anchor")
        if self.semantic is not None:
            _check_numbers(self.semantic.get("matrix", []), "semantic.matrix")
        _check_numbers(self.latency, "latency")

    def to_json(self) -> str:
        data = {
            "methods": {str(h): v for h, v in self.methods.items()},
            "anchor": {str(t): v for t, v in self.anchor.items()},
            "semantic": self.semantic,
            "latency": self.latency,
        }
        return json.dumps(data, indent=2)

    def to_text(self) -> str:
        lines = []
        if self.methods:
            lines.append("L2P/L2Q by horizon and method")
            lines.append(f"{'horizon':>8} {'method':<14} {'L2P':>10} {'L2Q':>10} {'n':>5}")
            for h in sorted(self.methods):
                for method, m in self.methods[h].items():
                    lines.append(
                        f"{h:>8} {method:<14} {m['l2p']:>10.4f} {m['l2q']:>10.4f} {m['n']:>5}"
                    )
            lines.append("")
        if self.anchor:
            lines.append("Anchor placement L2 at frame t")
            lines.append(f"{'t':>8} {'meters':>10} {'standardized':>13} {'n':>5}")
            for t in sorted(self.anchor):
                m = self.anchor[t]
                lines.append(
                    f"{t:>8} {m['mean_m']:>10.4f} {m['mean_norm']:>13.4f} {m['n']:>5}"
                )
            lines.append("")
        if self.semantic is not None:
            lines.append("Cross-label L2P (rows true, columns given)")
            cols = self.semantic["col_labels"]
            lines.append(f"{'':<10}" + "".join(f"{c:>10}" for c in cols))
            for name, row in zip(self.semantic["row_labels"], self.semantic["matrix"]):
                lines.append(f"{name:<10}" + "".join(f"{v:>10.4f}" for v in row))
            lines.append(
                f"diagonal row-minima: {self.semantic['diag_min_rows']}"
                f"/{len(self.semantic['row_labels'])}"
            )
            lines.append("")
        if self.latency:
            lines.append("Inference latency (forward pass)")
            lines.append(f"{'batch':>6} {'horizon':>8} {'mean_s':>10} {'std_s':>10} {'trials':>7}")
            for row in self.latency:
                lines.append(
                    f"{row['batch']:>6} {row['horizon']:>8} {row['mean_s']:>10.5f}"
                    f" {row['std_s']:>10.5f} {row['trials']:>7}"
                )
            lines.append("")
        return "\n".join(lines)

    def dump_raw_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RAW_FIELDS)
            writer.writeheader()
            for row in self.raw:
                writer.writerow(row)


def evaluate(
    model: CMIBModel | None,
    skeleton: Skeleton,
    windows: list[MotionWindow],
    stats: NormStats,
    labels: LabelTable | None = None,
    horizons=None,
    anchor_frames=(),
    radius: float = 0.5,
    seed: int = 0,
    bench_batches=(),
    bench_trials: int = 30,
) -> EvalReport:
    """Run every requested protocol and assemble one report.

    The anchor and semantic sections need a model; anchor_frames/labels left
    empty skip them.  bench_batches non-empty adds the latency table.
    """
    raw: list[dict] = []
    methods = compare_methods(model, skeleton, windows, stats, horizons, raw=raw)
    anchor = {}
    if anchor_frames:
        anchor = anchor_eval(
            model, skeleton, windows, stats, anchor_frames, radius, seed, raw=raw
        )
    semantic = None
    if labels is not None and model is not None:
        sem = semantic_matrix(model, skeleton, windows, labels, stats)
        semantic = sem.to_dict()
        raw.extend(sem.raw)
    latency = []
    if bench_batches:
        latency = bench_inference(model, bench_batches, horizons, trials=bench_trials)
    return EvalReport(methods, anchor, semantic, latency, raw)
