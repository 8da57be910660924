"""Smooth random replacement paths for locomotion roots.

A Gaussian-process posterior over lateral root displacement, anchored at the
window's start and target, provides alternative ground-plane trajectories.
Each sampled path is applied rigidly per frame with a heading correction so
the character keeps facing its direction of travel.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabelTable, MotionWindow, devectorize
from .geometry import quat_mul, quat_normalize, yaw_quat

AUGMENTABLE_LABELS = frozenset({"walk", "run"})
MONOTONE_TOL = 1e-6
MAX_JITTER = 1e-2


class MonotonicityViolation(ValueError):
    """Raised when a path's forward coordinate steps backward."""


@dataclass
class PlanarPath:
    """Ground-plane trajectory: forward (xs) and lateral (ys) coordinates."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.xs.shape != self.ys.shape or self.xs.ndim != 1 or len(self.xs) < 2:
            raise ValueError("path needs matching 1-D xs/ys with at least 2 points")
        if not (np.all(np.isfinite(self.xs)) and np.all(np.isfinite(self.ys))):
            raise ValueError("non-finite path coordinate")

    def __len__(self) -> int:
        return len(self.xs)


@dataclass
class GRPConfig:
    length_scale: float | None = None  # None: span / 4
    jitter: float = 1e-8
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.length_scale is not None and self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


@dataclass
class GRPPosterior:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    jitter_used: float

    def __post_init__(self):
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValueError("posterior covariance must be symmetric")


def _sq_exp_kernel(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return np.exp(-(d * d) / (2.0 * length_scale * length_scale))


def check_monotone(xs: np.ndarray) -> None:
    xs = np.asarray(xs, dtype=np.float64)
    span = float(xs[-1] - xs[0])
    steps = np.diff(xs)
    if span <= 0 or np.any(steps < -MONOTONE_TOL * abs(span)):
        raise MonotonicityViolation("path forward coordinate is not monotone")


def rotate_to_x_axis(path: PlanarPath) -> tuple[PlanarPath, float]:
    """Rotate the path about its start so the target lies on the +X ray.

    Returns the applied angle so the caller can invert the rotation.
    """
    dx = path.xs[-1] - path.xs[0]
    dy = path.ys[-1] - path.ys[0]
    if np.hypot(dx, dy) < 1e-9:
        raise ValueError("coincident start and target positions")
    angle = -float(np.arctan2(dy, dx))
    c, s = np.cos(angle), np.sin(angle)
    rx = path.xs - path.xs[0]
    ry = path.ys - path.ys[0]
    xs = path.xs[0] + c * rx - s * ry
    ys = path.ys[0] + s * rx + c * ry
    return PlanarPath(xs, ys), angle


def grp_posterior(xs: np.ndarray, y_anchor: tuple[float, float], cfg: GRPConfig) -> GRPPosterior:
    """GP regression of the lateral coordinate through the two endpoints.

    Squared-exponential kernel; anchors are (xs[0], y_anchor[0]) and
    (xs[-1], y_anchor[1]) observed with variance cfg.jitter.
    """
    xs = np.asarray(xs, dtype=np.float64)
    check_monotone(xs)
    ls = cfg.length_scale
    if ls is None:
        ls = float(xs[-1] - xs[0]) / 4.0
    x_a = np.array([xs[0], xs[-1]])
    y_a = np.asarray(y_anchor, dtype=np.float64)

    K_a = _sq_exp_kernel(x_a, x_a, ls) + cfg.jitter * np.eye(2)
    k_pa = _sq_exp_kernel(xs, x_a, ls)
    solve = np.linalg.solve
    mean = k_pa @ solve(K_a, y_a)
    cov = _sq_exp_kernel(xs, xs, ls) - k_pa @ solve(K_a, k_pa.T)
    cov = 0.5 * (cov + cov.T)

    jitter = max(cfg.jitter, 1e-12)
    while True:
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(len(xs)))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER:
                raise np.linalg.LinAlgError(
                    f"covariance not positive definite even with jitter {MAX_JITTER}"
                )
    return GRPPosterior(mean, cov, chol, jitter)


def sample_paths(post: GRPPosterior, cfg: GRPConfig, n: int | None = None) -> list[np.ndarray]:
    """Draw ỹ = μ + L·u path samples from the seeded generator."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples if n is None else n
    u = rng.standard_normal((len(post.mean), n))
    ys = post.mean[:, None] + post.chol @ u
    return [ys[:, i].copy() for i in range(n)]


# ---------------------------------------------------------------------------
# window augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentationResult:
    windows: list[MotionWindow]
    skip_reason: str | None = None


def _tangents(v: np.ndarray) -> np.ndarray:
    """Finite-difference derivative, central on the interior."""
    d = np.empty_like(v)
    d[1:-1] = 0.5 * (v[2:] - v[:-2])
    d[0] = v[1] - v[0]
    d[-1] = v[-1] - v[-2]
    return d


def _yaw_about(points: np.ndarray, pivot_xy: np.ndarray, angle) -> np.ndarray:
    """Rotate (..., 3) points about a vertical axis through pivot_xy."""
    c, s = np.cos(angle), np.sin(angle)
    out = points.copy()
    rx = points[..., 0] - pivot_xy[..., 0]
    ry = points[..., 1] - pivot_xy[..., 1]
    out[..., 0] = pivot_xy[..., 0] + c * rx - s * ry
    out[..., 1] = pivot_xy[..., 1] + s * rx + c * ry
    return out


def apply_augmentation(
    window: MotionWindow, cfg: GRPConfig, labels: LabelTable,
    dump_csv: str | Path | None = None,
) -> AugmentationResult:
    """Replace the root's lateral path with GP samples, rigidly per frame.

    Locomotion only: other labels are skipped (reason reported, no error),
    as are windows whose rotated forward coordinate is not monotone.
    ``dump_csv`` writes the sampled paths for plotting when augmentation ran.
    """
    name = labels.name(window.label)
    if name not in AUGMENTABLE_LABELS:
        return AugmentationResult([], f"label {name!r} is not augmentable")

    T, J = len(window), window.joint_count
    pos = np.asarray(window.positions(), dtype=np.float64)
    rot = np.asarray(window.rotations(), dtype=np.float64)
    try:
        path, angle = rotate_to_x_axis(PlanarPath(pos[:, 0, 0], pos[:, 0, 1]))
        post = grp_posterior(path.xs, (path.ys[0], path.ys[-1]), cfg)
    except MonotonicityViolation as e:
        return AugmentationResult([], str(e))
    except ValueError as e:
        return AugmentationResult([], f"degenerate root path: {e}")

    # whole window into the rotated frame
    pivot = pos[0, 0, :2].copy()
    pos_r = _yaw_about(pos, pivot, angle)
    rot_r = quat_mul(yaw_quat(angle), rot)
    dx = _tangents(path.xs)
    dy_old = _tangents(path.ys)

    samples = sample_paths(post, cfg)
    if dump_csv is not None:
        dump_grp_csv(dump_csv, path.xs, path.ys, post, samples)

    out = []
    for i, y_new in enumerate(samples):
        dphi = np.arctan2(_tangents(y_new), dx) - np.arctan2(dy_old, dx)  # (T,)
        old_root = pos_r[:, 0:1, :]
        new_root = old_root.copy()
        new_root[:, 0, 1] = y_new
        p = _yaw_about(pos_r, old_root[..., :2], dphi[:, None])
        p = p - old_root + new_root
        q = quat_mul(yaw_quat(dphi)[:, None, :], rot_r)

        p = _yaw_about(p, pivot, -angle)
        q = quat_normalize(quat_mul(yaw_quat(-angle), q))
        X = np.concatenate([p.reshape(T, -1), q.reshape(T, -1)], axis=1)
        out.append(
            MotionWindow(
                X, label=window.label, subject=window.subject,
                source=f"{window.source}+grp{i}", fps=window.fps,
            )
        )
    return AugmentationResult(out)


def augment_windows(
    windows: list[MotionWindow], cfg: GRPConfig, labels: LabelTable,
    dump_dir: str | Path | None = None,
) -> tuple[list[MotionWindow], list[str]]:
    """Augment a batch with per-window derived seeds; returns (windows, skip log)."""
    out, skipped = [], []
    for i, w in enumerate(windows):
        wcfg = GRPConfig(cfg.length_scale, cfg.jitter, cfg.n_samples, cfg.seed ^ i)
        dump = Path(dump_dir) / f"paths{i:06d}.csv" if dump_dir is not None else None
        result = apply_augmentation(w, wcfg, labels, dump_csv=dump)
        out.extend(result.windows)
        if result.skip_reason:
            skipped.append(f"window {i}: {result.skip_reason}")
    return out, skipped


def dump_grp_csv(
    path: str | Path,
    xs: np.ndarray,
    ys: np.ndarray,
    post: GRPPosterior,
    samples: list[np.ndarray],
) -> None:
    """Write (x, original y, posterior mean, samples...) rows for plotting."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "mean"] + [f"sample{i}" for i in range(len(samples))])
        for t in range(len(xs)):
            writer.writerow(
                [xs[t], ys[t], post.mean[t]] + [s[t] for s in samples]
            )
