"""Quaternion and pose math for skeletal motion.

Conventions used throughout the package:

- quaternions are ``[w, x, y, z]`` arrays and denote global-frame rotations
- positions are meters in the global frame
- Z is up; +X is the forward direction; every "heading" rotation is a
  rotation about the Z axis
- frame indices are 1-based, ``t in [1, T]``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_ATOL = 1e-6
MIN_BONE_LENGTH = 1e-9
SMALL_ANGLE = 1e-6


# ---------------------------------------------------------------------------
# quaternion primitives (all accept stacked (..., 4) arrays)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Scale quaternion(s) to unit norm. Raises on zero norm."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("cannot normalize zero-norm quaternion")
    return q / norm


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so that w >= 0 wherever |w| > 1e-9 (q and -q are one rotation)."""
    q = np.asarray(q, dtype=np.float64)
    flip = q[..., 0] < -1e-9
    return np.where(flip[..., None], -q, q)


def quat_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, broadcasting over leading dimensions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q; broadcasts over leading dims."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Unit quaternion for a rotation about ``axis``; ``angle`` may be an array."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise ValueError("rotation axis must be non-zero")
    half = 0.5 * np.asarray(angle, dtype=np.float64)
    w = np.cos(half)[..., None]
    xyz = np.sin(half)[..., None] * (axis / norm)
    return np.concatenate([w, np.broadcast_to(xyz, w.shape[:-1] + (3,))], axis=-1)


def yaw_quat(angle) -> np.ndarray:
    """Rotation about the vertical (Z) axis; ``angle`` may be an array."""
    half = 0.5 * np.asarray(angle, dtype=np.float64)
    w, z = np.cos(half), np.sin(half)
    zero = np.zeros_like(w)
    return np.stack([w, zero, zero, z], axis=-1)


def rotation_angle_between(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic rotation angle between two unit quaternions (hemisphere-safe)."""
    d = np.clip(abs(float(quat_dot(qa, qb))), -1.0, 1.0)
    return 2.0 * np.arccos(d)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def slerp_segment(qa: np.ndarray, qb: np.ndarray, u) -> np.ndarray:
    """Spherical linear interpolation along the shorter arc from qa to qb.

    Accepts stacked quaternions; ``u`` may be a scalar or broadcastable
    against the leading dimensions.  When qa.qb < 0, qb is negated first so
    the path follows the shorter geodesic; for tiny arc angles the result
    degrades to normalized linear interpolation.
    """
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    if np.isscalar(u) or np.ndim(u) == 0:
        if u == 0:
            return qa.copy()
        if u == 1:
            return qb.copy()
    u = np.asarray(u, dtype=np.float64)[..., None]

    dot = quat_dot(qa, qb)[..., None]
    qb = np.where(dot < 0.0, -qb, qb)
    dot = np.abs(dot)

    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    small = theta < SMALL_ANGLE

    # sin(theta) division is singular near 0; guard then overwrite with nlerp
    safe_sin = np.where(small, 1.0, sin_theta)
    wa = np.where(small, 1.0 - u, np.sin((1.0 - u) * theta) / safe_sin)
    wb = np.where(small, u, np.sin(u * theta) / safe_sin)
    out = wa * qa + wb * qb
    return quat_normalize(out)


def piecewise_lerp(p_start, p_k, p_target, t, k: int, T: int) -> np.ndarray:
    """Three-point linear interpolation through an interior anchor at frame k."""
    _check_anchor_frame(k, T)
    p_start = np.asarray(p_start, dtype=np.float64)
    p_k = np.asarray(p_k, dtype=np.float64)
    p_target = np.asarray(p_target, dtype=np.float64)
    # key frames must reproduce their inputs exactly; the blend below only
    # rounds to them
    if t == 1:
        return p_start.copy()
    if t == k:
        return p_k.copy()
    if t == T:
        return p_target.copy()
    if t < k:
        return ((k - t) * p_start + (t - 1) * p_k) / (k - 1)
    return ((T - t) * p_k + (t - k) * p_target) / (T - k)


def piecewise_slerp(q_start, q_k, q_target, t, k: int, T: int) -> np.ndarray:
    """Three-point spherical interpolation through an interior anchor at frame k."""
    _check_anchor_frame(k, T)
    if t < k:
        return slerp_segment(q_start, q_k, (t - 1) / (k - 1))
    return slerp_segment(q_k, q_target, (t - k) / (T - k))


def _check_anchor_frame(k: int, T: int) -> None:
    if not 1 < k < T:
        raise ValueError(f"anchor frame k={k} must satisfy 1 < k < T={T}")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class Pose:
    """Global-frame joint positions (J, 3) and unit quaternions (J, 4)."""

    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (J, 3), got {self.positions.shape}")
        if self.rotations.shape != (self.positions.shape[0], 4):
            raise ValueError(
                f"rotations must be ({self.positions.shape[0]}, 4), got {self.rotations.shape}"
            )
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite position component")
        norms = np.linalg.norm(self.rotations, axis=-1)
        if not np.all(np.abs(norms - 1.0) < QUAT_ATOL):
            raise ValueError("pose rotations must be unit quaternions")

    @property
    def joint_count(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "Pose":
        return Pose(self.positions.copy(), self.rotations.copy())


@dataclass
class Skeleton:
    """Joint tree with reference bone lengths.

    ``parents[j]`` is the parent index of joint j (-1 for the single root).
    ``ref_lengths[j]`` is the bone length from parent to j in meters; the
    root slot is 0 by convention.
    """

    joint_names: list[str]
    parents: np.ndarray
    ref_lengths: np.ndarray

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.ref_lengths = np.asarray(self.ref_lengths, dtype=np.float64)
        J = len(self.joint_names)
        if self.parents.shape != (J,) or self.ref_lengths.shape != (J,):
            raise ValueError("joint_names, parents and ref_lengths must agree in length")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1:
            raise ValueError(f"skeleton must have exactly one root, found {len(roots)}")
        for j in range(J):
            seen = set()
            p = j
            while p >= 0:
                if p in seen:
                    raise ValueError(f"cycle in skeleton at joint {self.joint_names[j]}")
                seen.add(p)
                p = int(self.parents[p])
        non_root = self.parents >= 0
        if np.any(self.ref_lengths[non_root] <= 0):
            raise ValueError("reference bone lengths must be positive")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents < 0)[0])

    def topo_order(self) -> list[int]:
        """Joint indices ordered parent-before-child."""
        depth = np.zeros(self.joint_count, dtype=np.int64)
        for j in range(self.joint_count):
            p = int(self.parents[j])
            d = 0
            while p >= 0:
                d += 1
                p = int(self.parents[p])
            depth[j] = d
        return [int(j) for j in np.argsort(depth, kind="stable")]


@dataclass
class MotionSequence:
    """Fixed-rate sequence of poses; all frames share one joint count."""

    frames: list[Pose]
    fps: float
    label: int | None = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("motion sequence needs at least 2 frames")
        J = self.frames[0].joint_count
        if any(f.joint_count != J for f in self.frames):
            raise ValueError("all frames must share one joint count")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def joint_count(self) -> int:
        return self.frames[0].joint_count

    def stacked_positions(self) -> np.ndarray:
        """(T, J, 3) array view of all frame positions."""
        return np.stack([f.positions for f in self.frames])

    def stacked_rotations(self) -> np.ndarray:
        """(T, J, 4) array view of all frame rotations."""
        return np.stack([f.rotations for f in self.frames])


# ---------------------------------------------------------------------------
# sequence-level operations
# ---------------------------------------------------------------------------

def interpolate_missing(
    keys: dict[int, Pose], T: int, fps: float = 30.0, label: int | None = None
) -> MotionSequence:
    """Fill all non-key frames by per-joint lerp/slerp between consecutive keys.

    ``keys`` must contain frames 1 and T; interior anchors are optional.
    Key frames are reproduced exactly (bit-for-bit copies).
    """
    if 1 not in keys or T not in keys:
        raise ValueError("keys must include the endpoint frames 1 and T")
    frames_sorted = sorted(keys)
    for f in frames_sorted:
        if not 1 <= f <= T:
            raise ValueError(f"key frame {f} outside [1, {T}]")

    out: list[Pose | None] = [None] * T
    for f in frames_sorted:
        out[f - 1] = keys[f].copy()

    for a, b in zip(frames_sorted[:-1], frames_sorted[1:]):
        if b - a < 2:
            continue
        pa, pb = keys[a], keys[b]
        ts = np.arange(a + 1, b, dtype=np.float64)
        us = (ts - a) / (b - a)  # (n,)
        pos = (1.0 - us)[:, None, None] * pa.positions + us[:, None, None] * pb.positions
        rot = slerp_segment(
            pa.rotations[None, :, :], pb.rotations[None, :, :], us[:, None]
        )
        for i, t in enumerate(range(a + 1, b)):
            out[t - 1] = Pose(pos[i], rot[i])

    return MotionSequence([f for f in out if f is not None], fps=fps, label=label)


def heading_direction(pose: Pose, root: int = 0, hip_pair: tuple[int, int] | None = None) -> np.ndarray:
    """Horizontal facing direction (2-vector, unnormalized).

    Default: the root rotation's +X axis projected to the ground plane.
    With ``hip_pair=(left, right)``: the forward normal of the hip vector.
    """
    if hip_pair is None:
        f = quat_rotate(pose.rotations[root], np.array([1.0, 0.0, 0.0]))
        return f[:2]
    left, right = hip_pair
    v = pose.positions[left] - pose.positions[right]
    # v x z_hat projected to the plane: character facing for a left-to-right hip vector
    return np.array([v[1], -v[0]])


def align_heading(
    seq: MotionSequence,
    ref_frame: int = 10,
    hip_pair: tuple[int, int] | None = None,
) -> tuple[MotionSequence, float]:
    """Rotate a whole sequence about the vertical axis so that the facing
    direction at ``ref_frame`` becomes +X.  Returns the applied angle.
    """
    if not 1 <= ref_frame <= len(seq):
        raise ValueError(f"ref_frame {ref_frame} outside sequence of length {len(seq)}")
    f = heading_direction(seq.frames[ref_frame - 1], hip_pair=hip_pair)
    if np.linalg.norm(f) < 1e-9:
        raise ValueError("degenerate facing direction: zero horizontal projection")
    angle = -float(np.arctan2(f[1], f[0]))
    if angle == 0.0:
        return MotionSequence([p.copy() for p in seq.frames], seq.fps, seq.label), 0.0
    rot = yaw_quat(angle)
    frames = [
        Pose(quat_rotate(rot, p.positions), quat_mul(rot, p.rotations))
        for p in seq.frames
    ]
    return MotionSequence(frames, seq.fps, seq.label), angle


def rescale_links(pose: Pose, skeleton: Skeleton) -> Pose:
    """Restore reference bone lengths, walking the tree root to leaves.

    Bone directions are preserved; the root position and all rotations are
    untouched.  Raises when a predicted bone collapses below 1e-9 m.
    """
    if pose.joint_count != skeleton.joint_count:
        raise ValueError(
            f"pose has {pose.joint_count} joints, skeleton {skeleton.joint_count}"
        )
    new_pos = pose.positions.copy()
    for j in skeleton.topo_order():
        p = int(skeleton.parents[j])
        if p < 0:
            continue
        d = pose.positions[j] - pose.positions[p]
        length = float(np.linalg.norm(d))
        if length < MIN_BONE_LENGTH:
            raise ValueError(
                f"zero-length predicted bone at joint '{skeleton.joint_names[j]}'"
            )
        new_pos[j] = new_pos[p] + d * (skeleton.ref_lengths[j] / length)
    return Pose(new_pos, pose.rotations.copy())


def bone_lengths(pose: Pose, skeleton: Skeleton) -> np.ndarray:
    """(J,) bone lengths for non-root joints (root slot is 0)."""
    out = np.zeros(pose.joint_count)
    for j in range(pose.joint_count):
        p = int(skeleton.parents[j])
        if p >= 0:
            out[j] = np.linalg.norm(pose.positions[j] - pose.positions[p])
    return out
