"""BVH motion-capture file support.

Reads the HIERARCHY/MOTION subset needed for ingestion: per-joint offsets,
position/rotation channels with ZYX, ZXY or XYZ rotation orders, and frame
data composed down the hierarchy into global positions and quaternions.
Coordinates are taken as stored; files are assumed to share the package's
Z-up convention (pass ``y_up=True`` for Y-up sources).

The writer emits 6-channel joints with zero offsets so that arbitrary
global-frame sequences survive a write/parse round trip.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import (
    MotionSequence,
    Pose,
    Skeleton,
    quat_canonical,
    quat_conjugate,
    quat_mul,
    quat_normalize,
    quat_rotate,
)

SUPPORTED_ORDERS = ("ZYX", "ZXY", "XYZ")

_POSITION_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
_ROTATION_CHANNELS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}


class BvhParseError(ValueError):
    """Malformed BVH input; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _axis_quat(axis: str, degrees: float) -> np.ndarray:
    half = 0.5 * math.radians(degrees)
    c, s = math.cos(half), math.sin(half)
    if axis == "X":
        return np.array([c, s, 0.0, 0.0])
    if axis == "Y":
        return np.array([c, 0.0, s, 0.0])
    return np.array([c, 0.0, 0.0, s])


def euler_to_quat(order: str, degrees) -> np.ndarray:
    """Compose channel-order intrinsic rotations, e.g. ZYX -> qz*qy*qx."""
    q = np.array([1.0, 0.0, 0.0, 0.0])
    for axis, val in zip(order, degrees):
        q = quat_mul(q, _axis_quat(axis, float(val)))
    return q


def quat_to_euler_zyx(q: np.ndarray) -> tuple[float, float, float]:
    """Angles (z, y, x) in degrees such that q == qz*qy*qx."""
    w, x, y, z = quat_normalize(q)
    m00 = 1 - 2 * (y * y + z * z)
    m10 = 2 * (x * y + w * z)
    m20 = 2 * (x * z - w * y)
    m21 = 2 * (y * z + w * x)
    m22 = 1 - 2 * (x * x + y * y)
    sy = -m20
    sy = min(1.0, max(-1.0, sy))
    beta = math.asin(sy)
    if abs(sy) > 1.0 - 1e-12:
        # gimbal lock: fold x into z
        gamma = math.atan2(2 * (x * y - w * z), 1 - 2 * (x * x + z * z))
        alpha = 0.0
    else:
        gamma = math.atan2(m10, m00)
        alpha = math.atan2(m21, m22)
    return math.degrees(gamma), math.degrees(beta), math.degrees(alpha)


class _Lines:
    def __init__(self, text: str):
        self.raw = text.splitlines()
        self.pos = 0

    def next_tokens(self) -> tuple[list[str], int]:
        while self.pos < len(self.raw):
            self.pos += 1
            tokens = self.raw[self.pos - 1].split()
            if tokens:
                return tokens, self.pos
        return [], self.pos

    def peek_tokens(self) -> tuple[list[str], int]:
        save = self.pos
        tokens, line = self.next_tokens()
        self.pos = save
        return tokens, line


class _JointSpec:
    def __init__(self, name: str, parent: int):
        self.name = name
        self.parent = parent
        self.offset = np.zeros(3)
        self.channels: list[str] = []
        self.rot_order = ""


def _parse_hierarchy(lines: _Lines) -> list[_JointSpec]:
    tokens, line = lines.next_tokens()
    if tokens != ["HIERARCHY"]:
        raise BvhParseError("expected HIERARCHY section", line)
    joints: list[_JointSpec] = []
    stack: list[int] = []

    while True:
        tokens, line = lines.next_tokens()
        if not tokens:
            raise BvhParseError("unexpected end of file: missing MOTION section", line)
        kw = tokens[0]

        if kw in ("ROOT", "JOINT"):
            if kw == "ROOT" and joints:
                raise BvhParseError("multiple ROOT joints", line)
            if kw == "JOINT" and not stack:
                raise BvhParseError("JOINT outside of a ROOT block", line)
            if len(tokens) < 2:
                raise BvhParseError(f"{kw} is missing a name", line)
            parent = stack[-1] if stack else -1
            joints.append(_JointSpec(" ".join(tokens[1:]), parent))
            tokens, line = lines.next_tokens()
            if tokens != ["{"]:
                raise BvhParseError("expected '{' after joint declaration", line)
            stack.append(len(joints) - 1)

        elif kw == "OFFSET":
            if len(tokens) != 4:
                raise BvhParseError("OFFSET needs 3 values", line)
            try:
                off = np.array([float(v) for v in tokens[1:]])
            except ValueError:
                raise BvhParseError("non-numeric OFFSET value", line) from None
            if stack:
                joints[stack[-1]].offset = off
            # offsets inside End Site blocks are ignored

        elif kw == "CHANNELS":
            if not stack:
                raise BvhParseError("CHANNELS outside of a joint block", line)
            try:
                n = int(tokens[1])
            except (IndexError, ValueError):
                raise BvhParseError("CHANNELS needs a count", line) from None
            names = tokens[2:]
            if len(names) != n:
                raise BvhParseError(
                    f"CHANNELS declares {n} channels but lists {len(names)}", line
                )
            spec = joints[stack[-1]]
            rot = []
            for ch in names:
                if ch in _POSITION_CHANNELS:
                    pass
                elif ch in _ROTATION_CHANNELS:
                    rot.append(_ROTATION_CHANNELS[ch])
                else:
                    raise BvhParseError(f"unknown channel '{ch}'", line)
            order = "".join(rot)
            if order and order not in SUPPORTED_ORDERS:
                raise BvhParseError(
                    f"unsupported rotation order {order} (supported: {', '.join(SUPPORTED_ORDERS)})",
                    line,
                )
            spec.channels = names
            spec.rot_order = order

        elif kw == "End":
            tokens, line = lines.next_tokens()
            if tokens != ["{"]:
                raise BvhParseError("expected '{' after End Site", line)
            depth = 1
            while depth:
                tokens, line = lines.next_tokens()
                if not tokens:
                    raise BvhParseError("unterminated End Site block", line)
                if tokens[0] == "{":
                    depth += 1
                elif tokens[0] == "}":
                    depth -= 1

        elif kw == "}":
            if not stack:
                raise BvhParseError("unbalanced '}'", line)
            stack.pop()
            if not stack:
                return joints

        else:
            raise BvhParseError(f"unexpected token '{kw}' in hierarchy", line)


def parse_bvh(data: bytes | str, y_up: bool = False) -> tuple[Skeleton, MotionSequence]:
    """Parse a BVH file into a skeleton and a global-frame motion sequence.

    Reference bone lengths come from hierarchy offsets (falling back to
    first-frame geometry for zero offsets, as written by ``write_bvh``).
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = _Lines(text)
    joints = _parse_hierarchy(lines)

    tokens, line = lines.next_tokens()
    if tokens != ["MOTION"]:
        raise BvhParseError("expected MOTION section", line)
    tokens, line = lines.next_tokens()
    if len(tokens) != 2 or tokens[0] != "Frames:":
        raise BvhParseError("expected 'Frames: <count>'", line)
    try:
        n_frames = int(tokens[1])
    except ValueError:
        raise BvhParseError("non-integer frame count", line) from None
    tokens, line = lines.next_tokens()
    if len(tokens) != 3 or tokens[0] != "Frame" or tokens[1] != "Time:":
        raise BvhParseError("expected 'Frame Time: <seconds>'", line)
    try:
        frame_time = float(tokens[2])
    except ValueError:
        raise BvhParseError("non-numeric frame time", line) from None
    if not math.isfinite(frame_time) or frame_time <= 0:
        raise BvhParseError("frame time must be positive", line)

    total_channels = sum(len(j.channels) for j in joints)
    rows = []
    for _ in range(n_frames):
        tokens, line = lines.next_tokens()
        if len(tokens) != total_channels:
            raise BvhParseError(
                f"frame has {len(tokens)} values, expected {total_channels}", line
            )
        try:
            row = np.array([float(v) for v in tokens])
        except ValueError:
            raise BvhParseError("non-numeric motion value", line) from None
        if not np.all(np.isfinite(row)):
            raise BvhParseError("non-finite motion value", line)
        rows.append(row)

    J = len(joints)
    frames: list[Pose] = []
    for row in rows:
        positions = np.zeros((J, 3))
        rotations = np.zeros((J, 4))
        cursor = 0
        for j, spec in enumerate(joints):
            local_t = np.zeros(3)
            rot_vals: list[float] = []
            for ch in spec.channels:
                v = row[cursor]
                cursor += 1
                if ch in _POSITION_CHANNELS:
                    local_t[_POSITION_CHANNELS[ch]] = v
                else:
                    rot_vals.append(v)
            local_q = euler_to_quat(spec.rot_order, rot_vals)
            if spec.parent < 0:
                rotations[j] = local_q
                positions[j] = spec.offset + local_t
            else:
                pq = rotations[spec.parent]
                rotations[j] = quat_mul(pq, local_q)
                positions[j] = positions[spec.parent] + quat_rotate(
                    pq, spec.offset + local_t
                )
        rotations = quat_canonical(quat_normalize(rotations))
        frames.append(Pose(positions, rotations))

    if y_up:
        swap = np.array([math.cos(math.pi / 4), math.sin(math.pi / 4), 0.0, 0.0])
        frames = [
            Pose(quat_rotate(swap, p.positions), quat_mul(swap, p.rotations))
            for p in frames
        ]

    ref = np.zeros(J)
    for j, spec in enumerate(joints):
        if spec.parent >= 0:
            ref[j] = np.linalg.norm(spec.offset)
            if ref[j] <= 0 and frames:
                ref[j] = np.linalg.norm(
                    frames[0].positions[j] - frames[0].positions[spec.parent]
                )
    skeleton = Skeleton(
        joint_names=[j.name for j in joints],
        parents=np.array([j.parent for j in joints]),
        ref_lengths=ref,
    )
    return skeleton, MotionSequence(frames, fps=1.0 / frame_time)


def write_bvh(skeleton: Skeleton, seq: MotionSequence) -> str:
    """Serialize a global-frame sequence as a 6-channel, zero-offset BVH."""
    J = skeleton.joint_count
    if seq.joint_count != J:
        raise ValueError("sequence and skeleton joint counts differ")
    order = skeleton.topo_order()
    children: dict[int, list[int]] = {j: [] for j in range(J)}
    for j in order:
        p = int(skeleton.parents[j])
        if p >= 0:
            children[p].append(j)

    out: list[str] = ["HIERARCHY"]
    emit_order: list[int] = []  # channel data follows depth-first emission order

    def emit(j: int, indent: int, keyword: str):
        emit_order.append(j)
        pad = "  " * indent
        out.append(f"{pad}{keyword} {skeleton.joint_names[j]}")
        out.append(f"{pad}{{")
        out.append(f"{pad}  OFFSET 0.000000 0.000000 0.000000")
        out.append(
            f"{pad}  CHANNELS 6 Xposition Yposition Zposition"
            " Zrotation Yrotation Xrotation"
        )
        for c in children[j]:
            emit(c, indent + 1, "JOINT")
        if not children[j]:
            out.append(f"{pad}  End Site")
            out.append(f"{pad}  {{")
            out.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            out.append(f"{pad}  }}")
        out.append(f"{pad}}}")

    emit(skeleton.root, 0, "ROOT")
    out.append("MOTION")
    out.append(f"Frames: {len(seq)}")
    out.append(f"Frame Time: {1.0 / seq.fps:.8f}")

    for pose in seq.frames:
        vals: list[float] = []
        for j in emit_order:
            p = int(skeleton.parents[j])
            if p < 0:
                local_t = pose.positions[j]
                local_q = pose.rotations[j]
            else:
                pq = pose.rotations[p]
                local_t = quat_rotate(quat_conjugate(pq), pose.positions[j] - pose.positions[p])
                local_q = quat_mul(quat_conjugate(pq), pose.rotations[j])
            zd, yd, xd = quat_to_euler_zyx(local_q)
            vals.extend([local_t[0], local_t[1], local_t[2], zd, yd, xd])
        out.append(" ".join(f"{v:.6f}" for v in vals))
    return "\n".join(out) + "\n"
