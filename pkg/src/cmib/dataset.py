"""Motion windows: vectorization, binary storage, splits, normalization.

A window is a fixed-length slice of a motion clip flattened to a T×d matrix
with d = 7J (3J global positions followed by 4J quaternion components per
frame).  Windows are the unit of training, evaluation and augmentation.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import MotionSequence, Pose, align_heading

STD_FLOOR = 1e-8
HEADING_REF_FRAME = 10

WINDOW_MAGIC = b"CMIBW\0"
WINDOW_VERSION = 1
_HEADER = struct.Struct("<6sHIIiif")  # magic, version, J, T, label, subject, fps


# ---------------------------------------------------------------------------
# vectorization
# ---------------------------------------------------------------------------

def vectorize_pose(pose: Pose) -> np.ndarray:
    """Flatten one pose to a d-vector: [all 3J positions][all 4J rotations]."""
    return np.concatenate([pose.positions.ravel(), pose.rotations.ravel()])


def vectorize_sequence(seq: MotionSequence) -> np.ndarray:
    """(T, 7J) matrix with one vectorized pose per row."""
    pos = seq.stacked_positions().reshape(len(seq), -1)
    rot = seq.stacked_rotations().reshape(len(seq), -1)
    return np.concatenate([pos, rot], axis=1)


def devectorize(X: np.ndarray, J: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a (T, 7J) matrix back into (T, J, 3) positions, (T, J, 4) rotations."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != 7 * J:
        raise ValueError(f"expected (T, {7 * J}) matrix, got {X.shape}")
    T = X.shape[0]
    pos = X[:, : 3 * J].reshape(T, J, 3)
    rot = X[:, 3 * J :].reshape(T, J, 4)
    return pos, rot


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class MotionWindow:
    """Fixed-length vectorized motion slice, stored float32 for exact IO."""

    X: np.ndarray  # (T, 7J)
    label: int
    subject: int
    source: str = ""
    fps: float = 30.0

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32)
        if self.X.ndim != 2 or self.X.shape[1] % 7 != 0:
            raise ValueError(f"window matrix must be (T, 7J), got {self.X.shape}")
        J = self.joint_count
        rot = self.X[:, 3 * J :].reshape(len(self), J, 4)
        norms = np.linalg.norm(rot.astype(np.float64), axis=-1)
        if not np.all(np.abs(norms - 1.0) < 1e-5):
            raise ValueError("quaternion blocks must be unit-norm within 1e-5")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def joint_count(self) -> int:
        return self.X.shape[1] // 7

    def positions(self) -> np.ndarray:
        return devectorize(self.X, self.joint_count)[0]

    def rotations(self) -> np.ndarray:
        return devectorize(self.X, self.joint_count)[1]


@dataclass
class SubjectSplit:
    """Disjoint train/test subject id sets."""

    train_subjects: frozenset[int]
    test_subjects: frozenset[int]

    def __post_init__(self):
        self.train_subjects = frozenset(self.train_subjects)
        self.test_subjects = frozenset(self.test_subjects)
        if self.train_subjects & self.test_subjects:
            raise ValueError("train and test subject sets overlap")


@dataclass
class NormStats:
    """Per-component mean/std over the position block of the train split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if np.any(self.std <= 0):
            raise ValueError("std components must be positive")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


class LabelTable:
    """Bijective semantic label name ↔ contiguous integer id."""

    def __init__(self, names: list[str]):
        if len(set(names)) != len(names):
            raise ValueError("duplicate label names")
        self._names = list(names)
        self._ids = {n: i for i, n in enumerate(self._names)}

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def id(self, name: str) -> int:
        if name not in self._ids:
            raise KeyError(f"unknown label {name!r}")
        return self._ids[name]

    def name(self, label_id: int) -> str:
        if not 0 <= label_id < len(self._names):
            raise KeyError(f"label id {label_id} out of range")
        return self._names[label_id]

    @property
    def names(self) -> list[str]:
        return list(self._names)


# ---------------------------------------------------------------------------
# windowing, splits, normalization
# ---------------------------------------------------------------------------

def sequence_to_window(
    seq: MotionSequence, label: int, subject: int, source: str = ""
) -> MotionWindow:
    return MotionWindow(
        vectorize_sequence(seq), label=label, subject=subject, source=source, fps=seq.fps
    )


def window_to_sequence(window: MotionWindow) -> MotionSequence:
    pos, rot = devectorize(np.asarray(window.X, dtype=np.float64), window.joint_count)
    # stored f32 rotations drift off unit norm in f64; renormalize for Pose
    rot = rot / np.linalg.norm(rot, axis=-1, keepdims=True)
    frames = [Pose(pos[t], rot[t]) for t in range(len(window))]
    return MotionSequence(frames, fps=window.fps, label=window.label)


def make_windows(
    seq: MotionSequence,
    T: int,
    stride: int,
    label: int = 0,
    subject: int = 0,
    source: str = "",
    hip_pair: tuple[int, int] | None = None,
) -> list[MotionWindow]:
    """Slice a clip into length-T windows starting every `stride` frames.

    Each window is independently rotated about the vertical axis so its
    facing direction at frame 10 becomes +X, then vectorized.  Clips
    shorter than T yield no windows.
    """
    if T < 2:
        raise ValueError("window length must be at least 2")
    if stride < 1:
        raise ValueError("stride must be positive")
    out = []
    for start in range(0, len(seq) - T + 1, stride):
        sub = MotionSequence(
            [seq.frames[start + i].copy() for i in range(T)], seq.fps, seq.label
        )
        aligned, _ = align_heading(sub, ref_frame=min(HEADING_REF_FRAME, T), hip_pair=hip_pair)
        out.append(
            sequence_to_window(
                aligned, label=label, subject=subject,
                source=f"{source}[{start + 1}:{start + T}]" if source else "",
            )
        )
    return out


def split_by_subject(
    windows: list[MotionWindow], split: SubjectSplit
) -> tuple[list[MotionWindow], list[MotionWindow]]:
    known = split.train_subjects | split.test_subjects
    train, test = [], []
    for w in windows:
        if w.subject not in known:
            raise ValueError(f"window subject {w.subject} not in split")
        (train if w.subject in split.train_subjects else test).append(w)
    return train, test


def compute_norm_stats(train_windows: list[MotionWindow]) -> NormStats:
    """Mean/std per position component over every frame of the train split."""
    if not train_windows:
        raise ValueError("cannot compute normalization statistics from no windows")
    J = train_windows[0].joint_count
    rows = np.concatenate(
        [np.asarray(w.X[:, : 3 * J], dtype=np.float64) for w in train_windows]
    )
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


# Published train/test subject assignments for the common benchmarks.
SPLIT_PRESETS: dict[str, SubjectSplit] = {
    "lafan1": SubjectSplit(frozenset({1, 2, 3, 4}), frozenset({5})),
    "humaneva": SubjectSplit(frozenset({1, 2}), frozenset({3})),
    "human4d": SubjectSplit(frozenset(range(1, 8)), frozenset({8})),
    "mpi-hdm05": SubjectSplit(frozenset({0, 1, 2}), frozenset({3})),
}

# mpi-hdm05 names its subjects; windows carry the mapped integer ids.
MPI_HDM05_SUBJECT_IDS = {"bk": 0, "dg": 1, "mm": 2, "tr": 3}


# ---------------------------------------------------------------------------
# binary window files
# ---------------------------------------------------------------------------

def write_window(window: MotionWindow, path: str | Path) -> None:
    """Write one window in the native little-endian binary format."""
    T, d = window.X.shape
    header = _HEADER.pack(
        WINDOW_MAGIC, WINDOW_VERSION, window.joint_count, T,
        window.label, window.subject, window.fps,
    )
    Path(path).write_bytes(header + window.X.tobytes(order="C"))


def read_window(path: str | Path) -> MotionWindow:
    """Read a window written by write_window; X round-trips bit-exact."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated window file")
    magic, version, J, T, label, subject, fps = _HEADER.unpack_from(data)
    if magic != WINDOW_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != WINDOW_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size :]
    expected = T * 7 * J * 4
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    X = np.frombuffer(body, dtype="<f4").reshape(T, 7 * J)
    return MotionWindow(X.copy(), label=label, subject=subject, source=str(path), fps=fps)


# ---------------------------------------------------------------------------
# manifests and filename conventions
# ---------------------------------------------------------------------------

DEFAULT_LABEL_PATTERN = r"^(?P<label>[A-Za-z]+)"
DEFAULT_SUBJECT_PATTERN = r"subject(?P<subject>\d+)"


def label_from_filename(name: str, pattern: str = DEFAULT_LABEL_PATTERN) -> str:
    """Extract the action label from a clip filename (LAFAN1-style prefix)."""
    m = re.search(pattern, Path(name).stem)
    if m is None:
        raise ValueError(f"cannot derive label from filename {name!r}")
    return (m.group("label") if "label" in m.groupdict() else m.group(0)).lower()


def subject_from_filename(name: str, pattern: str = DEFAULT_SUBJECT_PATTERN) -> int:
    m = re.search(pattern, Path(name).stem)
    if m is None:
        raise ValueError(f"cannot derive subject from filename {name!r}")
    return int(m.group("subject") if "subject" in m.groupdict() else m.group(0))


@dataclass
class ManifestEntry:
    path: str
    subject: int
    label: str


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a JSON manifest: a list of {path, subject, label} objects."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list):
        raise ValueError("manifest must be a JSON list")
    entries = []
    for i, item in enumerate(raw):
        try:
            entries.append(
                ManifestEntry(str(item["path"]), int(item["subject"]), str(item["label"]))
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"manifest entry {i} missing field: {e}") from e
    return entries


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(
            [{"path": e.path, "subject": e.subject, "label": e.label} for e in entries],
            indent=2,
        )
    )
