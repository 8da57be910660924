"""Command-line entry point.

One binary with subcommands covering the pipeline: synth and preprocess
produce window datasets, augment expands them, train fits a model, eval and
bench measure it, infill generates motion files, serve exposes the HTTP API.
Flags override values from an optional --config file (TOML or JSON), which
override built-in defaults; every run with an output directory echoes its
fully resolved configuration there for bit-exact reruns.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import service
from .bvh import parse_bvh, write_bvh
from .dataset import (
    LabelTable,
    NormStats,
    SPLIT_PRESETS,
    SubjectSplit,
    compute_norm_stats,
    load_manifest,
    make_windows,
    read_window,
    split_by_subject,
    window_to_sequence,
    write_window,
)
from .evaluation import EvalReport, bench_inference, evaluate
from .geometry import Skeleton
from .grp import GRPConfig, augment_windows
from .model import CMIBConfig, infill, load_checkpoint
from .synthetic import SynthConfig, gen_synthetic
from .training import TrainConfig, train


class UsageError(Exception):
    pass


# defaults double as the set of keys each subcommand resolves
DEFAULTS: dict[str, dict] = {
    "synth": {
        "out": None, "joints": 4, "frames": 32, "windows": 64,
        "labels": "walk,run,jump", "seed": 0, "subjects": 2, "fps": 30.0,
    },
    "preprocess": {
        "manifest": None, "out": None, "frames": 32, "stride": 16,
        "preset": None, "train_subjects": None, "test_subjects": None,
        "y_up": False,
    },
    "augment": {
        "data": None, "out": None, "samples": 1, "seed": 0,
        "length_scale": None, "jitter": 1e-8, "dump_paths": False,
    },
    "train": {
        "data": None, "run_dir": None, "steps": 1000, "batch_size": 32,
        "seed": 0, "lr": 1e-4, "weight_decay": 0.01, "grad_clip": 1.0,
        "anchor_prob": 0.5, "heads": 7, "layers": 8, "d_ff": 2048,
        "dropout": 0.05, "t_max": None, "augment": False,
        "augment_samples": 1, "checkpoint_every": 500,
        "w_sem": 1.5, "w_pos": 0.05, "w_rot": 2.0,
    },
    "eval": {
        "ckpt": None, "data": None, "out": None, "horizons": None,
        "anchor_frames": None, "radius": 0.5, "semantic": False,
        "bench_batches": None, "trials": 30, "seed": 0,
    },
    "infill": {
        "ckpt": None, "window": None, "out": None, "T": None,
        "label": None, "anchor_frame": None, "format": None,
    },
    "serve": {
        "ckpt": None, "host": "127.0.0.1", "port": 8080, "cors_origins": "*",
    },
    "bench": {
        "ckpt": None, "batches": "1", "horizons": None, "trials": 30,
        "out": None,
    },
}

REQUIRED = {
    "synth": ("out",),
    "preprocess": ("manifest", "out"),
    "augment": ("data", "out"),
    "train": ("data", "run_dir"),
    "eval": ("ckpt", "data"),
    "infill": ("ckpt", "window", "out"),
    "serve": (),
    "bench": ("ckpt",),
}


def _load_config_file(path: str) -> dict:
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(raw.decode())
    return json.loads(raw)


def _resolve(args: argparse.Namespace) -> dict:
    defaults = DEFAULTS[args.cmd]
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in defaults.items():
        val = getattr(args, key, None)
        if val is None and key in file_cfg:
            val = file_cfg[key]
        resolved[key] = default if val is None else val
    missing = [k for k in REQUIRED[args.cmd] if resolved[k] is None]
    if missing:
        raise UsageError(f"{args.cmd}: missing required option(s): "
                         + ", ".join(f"--{m.replace('_', '-')}" for m in missing))
    return resolved


def _echo(out_dir: Path, resolved: dict) -> None:
    # the output location is positional, not part of what was computed;
    # dropping it keeps equal-seed runs byte-identical
    echo = {k: v for k, v in resolved.items() if k not in ("out", "run_dir")}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(echo, indent=2, sort_keys=True) + "\n"
    )


def _ints(val, sep=",") -> tuple[int, ...] | None:
    if val is None:
        return None
    if isinstance(val, (list, tuple)):
        return tuple(int(v) for v in val)
    return tuple(int(v) for v in str(val).split(sep) if v)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def _write_dataset(out: Path, windows, table=None, skeleton=None, stats=None) -> None:
    wdir = out / "windows"
    wdir.mkdir(parents=True, exist_ok=True)
    for i, w in enumerate(windows):
        write_window(w, wdir / f"{i:06d}.cmibw")
    if table is not None:
        (out / "labels.json").write_text(json.dumps({"labels": table.names}, indent=2))
    if skeleton is not None:
        (out / "skeleton.json").write_text(json.dumps({
            "joint_names": skeleton.joint_names,
            "parents": skeleton.parents.tolist(),
            "ref_lengths": skeleton.ref_lengths.tolist(),
        }, indent=2))
    if stats is not None:
        (out / "stats.json").write_text(json.dumps(stats.to_dict(), indent=2))


def _load_dataset(path) -> tuple[list, LabelTable | None, Skeleton | None, NormStats | None]:
    root = Path(path)
    wdir = root / "windows" if (root / "windows").is_dir() else root
    files = sorted(wdir.glob("*.cmibw"))
    if not files:
        raise FileNotFoundError(f"no .cmibw windows under {root}")
    windows = [read_window(f) for f in files]
    table = skeleton = stats = None
    if (root / "labels.json").exists():
        table = LabelTable(json.loads((root / "labels.json").read_text())["labels"])
    if (root / "skeleton.json").exists():
        sk = json.loads((root / "skeleton.json").read_text())
        skeleton = Skeleton(sk["joint_names"], sk["parents"], sk["ref_lengths"])
    if (root / "stats.json").exists():
        stats = NormStats.from_dict(json.loads((root / "stats.json").read_text()))
    return windows, table, skeleton, stats


def _skeleton_from_meta(meta: dict, fallback: Skeleton | None) -> Skeleton:
    sk = meta.get("skeleton")
    if sk:
        return Skeleton(sk["joint_names"], sk["parents"], sk["ref_lengths"])
    if fallback is not None:
        return fallback
    raise ValueError("no skeleton in the checkpoint metadata or the data directory")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    sc = SynthConfig(
        J=cfg["joints"], T=cfg["frames"], n_windows=cfg["windows"],
        label_set=[s for s in str(cfg["labels"]).split(",") if s],
        seed=cfg["seed"], n_subjects=cfg["subjects"], fps=cfg["fps"],
    )
    windows, table, skeleton = gen_synthetic(sc)
    _write_dataset(out, windows, table, skeleton)
    _echo(out, cfg)
    print(f"wrote {len(windows)} windows to {out}")
    return 0


def _cmd_preprocess(cfg: dict) -> int:
    manifest = Path(cfg["manifest"])
    entries = load_manifest(manifest)
    table = LabelTable(sorted({e.label for e in entries}))

    skeleton = None
    windows = []
    for e in entries:
        skel, seq = parse_bvh((manifest.parent / e.path).read_text(), y_up=cfg["y_up"])
        skeleton = skeleton or skel
        windows += make_windows(
            seq, cfg["frames"], cfg["stride"],
            label=table.id(e.label), subject=e.subject, source=e.path,
        )

    if cfg["preset"]:
        split = SPLIT_PRESETS[cfg["preset"]]
    elif cfg["train_subjects"] is not None and cfg["test_subjects"] is not None:
        split = SubjectSplit(
            frozenset(_ints(cfg["train_subjects"])), frozenset(_ints(cfg["test_subjects"]))
        )
    else:
        raise UsageError("preprocess: give --preset or both subject lists")

    train_ws, test_ws = split_by_subject(windows, split)
    if not train_ws:
        raise ValueError("empty train split")
    stats = compute_norm_stats(train_ws)

    out = Path(cfg["out"])
    _write_dataset(out / "train", train_ws)
    _write_dataset(out / "test", test_ws)
    _write_dataset(out, [], table, skeleton, stats)  # shared sidecars only
    (out / "windows").rmdir()
    (out / "split.json").write_text(json.dumps({
        "train_subjects": sorted(split.train_subjects),
        "test_subjects": sorted(split.test_subjects),
        "n_train": len(train_ws), "n_test": len(test_ws),
    }, indent=2))
    _echo(out, cfg)
    print(f"{len(train_ws)} train / {len(test_ws)} test windows -> {out}")
    return 0


def _cmd_augment(cfg: dict) -> int:
    windows, table, skeleton, stats = _load_dataset(cfg["data"])
    if table is None:
        raise ValueError("augment needs labels.json alongside the windows")
    out = Path(cfg["out"])
    dump_dir = None
    if cfg["dump_paths"]:
        dump_dir = out / "grp_paths"
        dump_dir.mkdir(parents=True, exist_ok=True)
    gcfg = GRPConfig(
        length_scale=cfg["length_scale"], jitter=cfg["jitter"],
        n_samples=cfg["samples"], seed=cfg["seed"],
    )
    augmented, skipped = augment_windows(windows, gcfg, table, dump_dir=dump_dir)
    _write_dataset(out, augmented, table, skeleton, stats)
    (out / "skipped.txt").write_text("\n".join(skipped) + ("\n" if skipped else ""))
    _echo(out, cfg)
    print(f"augmented {len(windows)} -> {len(augmented)} windows ({len(skipped)} skipped)")
    return 0


def _cmd_train(cfg: dict) -> int:
    windows, table, skeleton, _ = _load_dataset(cfg["data"])
    T, J = len(windows[0]), windows[0].joint_count
    n_labels = len(table) if table is not None else int(max(w.label for w in windows)) + 1
    mc = CMIBConfig(
        J=J, T_max=cfg["t_max"] or T, m=cfg["heads"], n_layers=cfg["layers"],
        d_ff=cfg["d_ff"], dropout=cfg["dropout"], n_labels=n_labels,
    )
    tc = TrainConfig(
        steps=cfg["steps"], batch_size=cfg["batch_size"], seed=cfg["seed"],
        anchor_probability=cfg["anchor_prob"], w_sem=cfg["w_sem"],
        w_pos=cfg["w_pos"], w_rot=cfg["w_rot"], lr=cfg["lr"],
        weight_decay=cfg["weight_decay"], grad_clip=cfg["grad_clip"],
        augment=cfg["augment"], augment_samples=cfg["augment_samples"],
        checkpoint_every=cfg["checkpoint_every"],
    )
    run_dir = Path(cfg["run_dir"])
    result = train(windows, mc, tc, labels=table, skeleton=skeleton, run_dir=run_dir)
    _echo(run_dir, cfg)
    final = result.trace[-1][4] if result.trace else float("nan")
    print(f"final loss {final:.6f}; checkpoint {result.checkpoint_path}")
    return 0


def _load_bundle(ckpt):
    model, meta = load_checkpoint(ckpt)
    labels = LabelTable(meta["labels"]) if meta.get("labels") else None
    return model, meta, labels


def _cmd_eval(cfg: dict) -> int:
    model, meta, labels = _load_bundle(cfg["ckpt"])
    windows, data_table, data_skel, data_stats = _load_dataset(cfg["data"])
    skeleton = _skeleton_from_meta(meta, data_skel)
    if meta.get("norm_stats"):
        stats = NormStats.from_dict(meta["norm_stats"])
    elif data_stats is not None:
        stats = data_stats
    else:
        raise ValueError("no normalization stats in the checkpoint or data directory")

    report = evaluate(
        model, skeleton, windows, stats,
        labels=(labels or data_table) if cfg["semantic"] else None,
        horizons=_ints(cfg["horizons"]),
        anchor_frames=_ints(cfg["anchor_frames"]) or (),
        radius=cfg["radius"], seed=cfg["seed"],
        bench_batches=_ints(cfg["bench_batches"]) or (),
        bench_trials=cfg["trials"],
    )
    print(report.to_text())
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.to_text())
        report.dump_raw_csv(out / "raw.csv")
        _echo(out, cfg)
    return 0


def _cmd_infill(cfg: dict) -> int:
    model, meta, labels = _load_bundle(cfg["ckpt"])
    window = read_window(cfg["window"])
    seq = window_to_sequence(window)
    skeleton = _skeleton_from_meta(meta, None)

    T = cfg["T"] or len(seq)
    if T > len(seq):
        raise ValueError(f"T={T} exceeds the window length {len(seq)}")
    if cfg["label"] is None:
        label_id = window.label
    else:
        raw = str(cfg["label"])
        label_id = int(raw) if raw.lstrip("-").isdigit() else labels.id(raw)
    anchor = None
    if cfg["anchor_frame"] is not None:
        anchor = (cfg["anchor_frame"], seq.frames[cfg["anchor_frame"] - 1])

    t0 = time.perf_counter()
    gen = infill(
        model, skeleton, seq.frames[0], seq.frames[T - 1], T, label_id,
        anchor=anchor, fps=seq.fps,
    )
    ms = (time.perf_counter() - t0) * 1000.0

    out = Path(cfg["out"])
    fmt = cfg["format"] or ("bvh" if out.suffix == ".bvh" else "json")
    if fmt == "bvh":
        out.write_text(write_bvh(skeleton, gen))
    elif fmt == "json":
        name = labels.name(label_id) if labels is not None else str(label_id)
        out.write_text(json.dumps({
            "frames": [
                {"positions": f.positions.tolist(), "rotations": f.rotations.tolist()}
                for f in gen.frames
            ],
            "generation_ms": ms,
            "model_version": str(meta.get("step", 0)),
            "request": {"T": T, "label": name, "label_id": label_id,
                        "anchor_frame": cfg["anchor_frame"], "fps": seq.fps},
        }, indent=2))
    else:
        raise UsageError(f"infill: unknown format {fmt!r} (json or bvh)")
    print(json.dumps(cfg, sort_keys=True))
    print(f"wrote {T} frames to {out}")
    return 0


def _cmd_serve(cfg: dict) -> int:
    origins = [s for s in str(cfg["cors_origins"]).split(",") if s]
    print(json.dumps(cfg, sort_keys=True))
    service.serve(cfg["ckpt"], host=cfg["host"], port=cfg["port"], cors_origins=origins)
    return 0


def _cmd_bench(cfg: dict) -> int:
    model, _, _ = _load_bundle(cfg["ckpt"])
    rows = bench_inference(
        model, batch_sizes=_ints(cfg["batches"]),
        horizons=_ints(cfg["horizons"]), trials=cfg["trials"],
    )
    print(EvalReport(latency=rows).to_text())
    if cfg["out"]:
        Path(cfg["out"]).write_text(json.dumps(rows, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add(sub, name: str, func, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="TOML or JSON file with defaults for this subcommand")
    p.set_defaults(func=func, cmd=name)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmib",
        description="conditional motion in-betweening: data, training, "
                    "evaluation, generation, serving",
    )
    sub = parser.add_subparsers(title="subcommands", dest="cmd")
    parser.set_defaults(func=None, cmd=None)

    p = _add(sub, "synth", _cmd_synth, "generate a procedural window dataset")
    p.add_argument("--out")
    p.add_argument("--joints", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--windows", type=int)
    p.add_argument("--labels")
    p.add_argument("--seed", type=int)
    p.add_argument("--subjects", type=int)
    p.add_argument("--fps", type=float)

    p = _add(sub, "preprocess", _cmd_preprocess, "BVH clips + manifest -> window dataset")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--frames", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--preset", choices=sorted(SPLIT_PRESETS))
    p.add_argument("--train-subjects")
    p.add_argument("--test-subjects")
    p.add_argument("--y-up", action="store_true", default=None)

    p = _add(sub, "augment", _cmd_augment, "resample root trajectories of a dataset")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--length-scale", type=float)
    p.add_argument("--jitter", type=float)
    p.add_argument("--dump-paths", action="store_true", default=None)

    p = _add(sub, "train", _cmd_train, "fit a model on a window dataset")
    p.add_argument("--data")
    p.add_argument("--run-dir")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--anchor-prob", type=float)
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--d-ff", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--t-max", type=int)
    p.add_argument("--augment", action="store_true", default=None)
    p.add_argument("--augment-samples", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--w-sem", type=float)
    p.add_argument("--w-pos", type=float)
    p.add_argument("--w-rot", type=float)

    p = _add(sub, "eval", _cmd_eval, "score a checkpoint against a dataset")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--horizons")
    p.add_argument("--anchor-frames")
    p.add_argument("--radius", type=float)
    p.add_argument("--semantic", action="store_true", default=None)
    p.add_argument("--bench-batches")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)

    p = _add(sub, "infill", _cmd_infill, "generate motion from a window's endpoints")
    p.add_argument("--ckpt")
    p.add_argument("--window")
    p.add_argument("--out")
    p.add_argument("--T", type=int)
    p.add_argument("--label")
    p.add_argument("--anchor-frame", type=int)
    p.add_argument("--format", choices=("json", "bvh"))

    p = _add(sub, "serve", _cmd_serve, "run the HTTP inference service")
    p.add_argument("--ckpt")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--cors-origins")

    p = _add(sub, "bench", _cmd_bench, "measure forward-pass latency")
    p.add_argument("--ckpt")
    p.add_argument("--batches")
    p.add_argument("--horizons")
    p.add_argument("--trials", type=int)
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else int(e.code)
    if args.func is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        cfg = _resolve(args)
        return args.func(cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure: report, don't traceback
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
