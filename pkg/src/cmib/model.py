"""Transformer encoder over vectorized pose rows.

Input assembly: the key poses are first spread across the window by
piecewise interpolation, each frame row gets a learned positional
embedding, and a per-label semantic token is prepended (without positional
embedding).  The encoder attends over all rows unmasked and emits a matrix
of the same size; dropping the semantic row and devectorizing yields the
predicted motion.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import devectorize, vectorize_sequence
from .geometry import MotionSequence, Pose, Skeleton, interpolate_missing, rescale_links

CHECKPOINT_MAGIC = b"CMIB"
CHECKPOINT_VERSION = 1


@dataclass
class CMIBConfig:
    J: int
    T_max: int
    m: int = 7
    n_layers: int = 8
    d_ff: int = 2048
    dropout: float = 0.05
    n_labels: int = 15
    context_frames: int = 1

    def __post_init__(self):
        if self.T_max < 2:
            raise ValueError("T_max must be at least 2")
        if self.n_labels < 1:
            raise ValueError("need at least one label")
        if self.d % self.m != 0:
            raise ValueError(f"d={self.d} not divisible by m={self.m} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 1 <= self.context_frames < self.T_max:
            raise ValueError("context_frames must be in [1, T_max)")

    @property
    def d(self) -> int:
        return 7 * self.J

    @property
    def d_k(self) -> int:
        return self.d // self.m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CMIBConfig":
        return cls(**d)


class CMIBModel:
    """Encoder parameters plus the forward pass.

    Parameters live in an insertion-ordered dict; that order is the
    canonical serialization order of the checkpoint format.
    """

    def __init__(self, config: CMIBConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        d, d_k, d_ff = config.d, config.d_k, config.d_ff

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return ad.param(rng.uniform(-bound, bound, shape), dtype=dtype)

        p: dict[str, Tensor] = {}
        p["pe"] = ad.param(rng.normal(0.0, 0.02, (config.T_max, d)), dtype=dtype)
        p["sem"] = ad.param(rng.normal(0.0, 0.02, (config.n_labels, d)), dtype=dtype)
        for i in range(config.n_layers):
            for h in range(config.m):
                p[f"layer{i}.head{h}.wq"] = uniform(d, (d, d_k))
                p[f"layer{i}.head{h}.wk"] = uniform(d, (d, d_k))
                p[f"layer{i}.head{h}.wv"] = uniform(d, (d, d_k))
            p[f"layer{i}.wo"] = uniform(d, (d, d))
            p[f"layer{i}.ffn1.w"] = uniform(d, (d, d_ff))
            p[f"layer{i}.ffn1.b"] = ad.param(np.zeros(d_ff), dtype=dtype)
            p[f"layer{i}.ffn2.w"] = uniform(d_ff, (d_ff, d))
            p[f"layer{i}.ffn2.b"] = ad.param(np.zeros(d), dtype=dtype)
            p[f"layer{i}.ln1.g"] = ad.param(np.ones(d), dtype=dtype)
            p[f"layer{i}.ln1.b"] = ad.param(np.zeros(d), dtype=dtype)
            p[f"layer{i}.ln2.g"] = ad.param(np.ones(d), dtype=dtype)
            p[f"layer{i}.ln2.b"] = ad.param(np.zeros(d), dtype=dtype)
        self.params = p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def assemble(self, motion: Tensor, label_ids) -> Tensor:
        """Add positional embeddings and prepend the semantic token.

        motion: (..., T, d) graph tensor of vectorized frames;
        label_ids: length-matching id array (one per leading batch entry).
        """
        T = motion.data.shape[-2]
        if T > self.config.T_max:
            raise ValueError(f"sequence length {T} exceeds T_max {self.config.T_max}")
        ids = np.asarray(label_ids)
        if ids.shape != motion.data.shape[:-2]:
            raise ValueError(
                f"label ids shaped {ids.shape} do not match batch shape {motion.data.shape[:-2]}"
            )
        pe = ad.slice_rows(self.params["pe"], 0, T)
        rows = ad.add(motion, pe)
        sem = ad.embedding_lookup(self.params["sem"], ids)
        sem = ad.reshape(sem, ids.shape + (1, self.config.d))
        return ad.concat_rows([sem, rows])

    def encoder_forward(
        self,
        x,
        train: bool = False,
        rng: np.random.Generator | None = None,
        return_attn: bool = False,
    ):
        """Run the encoder stack; output shape equals input shape.

        Accepts a Tensor (gradients flow) or a bare array.  With
        return_attn, also returns per-layer lists of (..., T+1, T+1)
        attention weight arrays, one per head.
        """
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.shape[-1] != cfg.d:
            raise ValueError(f"input width {x.data.shape[-1]} != d {cfg.d}")
        if x.data.shape[-2] > cfg.T_max + 1:
            raise ValueError(
                f"input rows {x.data.shape[-2]} exceed T_max+1 = {cfg.T_max + 1}"
            )
        keep = 1.0 - cfg.dropout
        p = self.params
        attn_all = []
        for i in range(cfg.n_layers):
            d_k = cfg.d_k
            attn_layer = []
            attn_out = None
            for h in range(cfg.m):
                q = ad.matmul(x, p[f"layer{i}.head{h}.wq"])
                k = ad.matmul(x, p[f"layer{i}.head{h}.wk"])
                v = ad.matmul(x, p[f"layer{i}.head{h}.wv"])
                scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(d_k))
                weights = ad.softmax_lastdim(scores)
                if return_attn:
                    attn_layer.append(weights.data.copy())
                head = ad.matmul(weights, v)
                # summing per-head projections of W_O row blocks equals
                # projecting the concatenated heads by the full (d, d) W_O
                out_h = ad.matmul(head, ad.slice_rows(p[f"layer{i}.wo"], h * d_k, (h + 1) * d_k))
                attn_out = out_h if attn_out is None else ad.add(attn_out, out_h)
            attn_out = ad.dropout(attn_out, keep, train, rng)
            x = ad.layer_norm(ad.add(x, attn_out), p[f"layer{i}.ln1.g"], p[f"layer{i}.ln1.b"])
            ffn = ad.add(ad.matmul(x, p[f"layer{i}.ffn1.w"]), p[f"layer{i}.ffn1.b"])
            ffn = ad.gelu(ffn)
            ffn = ad.add(ad.matmul(ffn, p[f"layer{i}.ffn2.w"]), p[f"layer{i}.ffn2.b"])
            ffn = ad.dropout(ffn, keep, train, rng)
            x = ad.layer_norm(ad.add(x, ffn), p[f"layer{i}.ln2.g"], p[f"layer{i}.ln2.b"])
            if return_attn:
                attn_all.append(attn_layer)
        return (x, attn_all) if return_attn else x


def build_input(keys: dict[int, Pose], T: int, label_id: int, model: CMIBModel) -> np.ndarray:
    """(T+1, d) inference input: semantic row, then interpolated rows + PE."""
    cfg = model.config
    if T > cfg.T_max:
        raise ValueError(f"T={T} exceeds T_max={cfg.T_max}")
    if not 0 <= label_id < cfg.n_labels:
        raise ValueError(f"unknown label id {label_id} (have {cfg.n_labels})")
    seq = interpolate_missing(keys, T)
    rows = vectorize_sequence(seq).astype(model.dtype)
    return model.assemble(Tensor(rows), label_id).data


def infill(
    model: CMIBModel,
    skeleton: Skeleton,
    start: Pose,
    target: Pose,
    T: int,
    label_id: int,
    anchor: tuple[int, Pose] | None = None,
    fps: float = 30.0,
) -> MotionSequence:
    """Generate the full motion between start and target poses.

    An optional anchor (k, pose) pins an interior frame.  Output frames are
    devectorized, quaternions normalized, and bone lengths restored to the
    skeleton's reference values.
    """
    keys = {1: start, T: target}
    if anchor is not None:
        k, pose = anchor
        if not 1 < k < T:
            raise ValueError(f"anchor frame {k} must satisfy 1 < k < {T}")
        keys[k] = pose
    I_sem = build_input(keys, T, label_id, model)
    out = model.encoder_forward(I_sem, train=False)
    motion = np.asarray(out.data[1:], dtype=np.float64)
    pos, rot = devectorize(motion, model.config.J)
    norms = np.linalg.norm(rot, axis=-1)
    if np.any(norms < 1e-12):
        t, j = np.argwhere(norms < 1e-12)[0]
        raise ValueError(f"zero-norm predicted quaternion at frame {t + 1}, joint {j}")
    rot = rot / norms[..., None]
    frames = [
        rescale_links(Pose(pos[t], rot[t]), skeleton) for t in range(T)
    ]
    return MotionSequence(frames, fps=fps, label=label_id)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(model: CMIBModel, path: str | Path, metadata: dict | None = None) -> None:
    """Magic, version, length-prefixed JSON blob, then canonical f32 params."""
    blob = json.dumps(
        {"config": model.config.to_dict(), "metadata": metadata or {}}
    ).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(blob)), blob]
    for name, p in model.params.items():
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[CMIBModel, dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, blob_len = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    blob = json.loads(data[off : off + blob_len])
    off += blob_len
    model = CMIBModel(CMIBConfig.from_dict(blob["config"]))
    for name, p in model.params.items():
        n = p.data.size * 4
        chunk = data[off : off + n]
        if len(chunk) != n:
            raise ValueError(f"{path}: truncated parameter data at {name}")
        p.data = np.frombuffer(chunk, dtype="<f4").reshape(p.data.shape).copy()
        off += n
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return model, blob["metadata"]
