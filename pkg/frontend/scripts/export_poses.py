"""Dump a pose library (each window's first and last frame) from a window
dataset directory to JSON for the viewer.

Usage: python3 export_poses.py <data_dir> <out.json> [max_windows]
"""
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from cmib.dataset import LabelTable, read_window, window_to_sequence  # noqa: E402


def main() -> int:
    data_dir, out = Path(sys.argv[1]), sys.argv[2]
    max_windows = int(sys.argv[3]) if len(sys.argv) > 3 else 8

    wdir = data_dir / "windows" if (data_dir / "windows").is_dir() else data_dir
    files = sorted(wdir.glob("*.cmibw"))[:max_windows]
    if not files:
        raise FileNotFoundError(f"no .cmibw windows under {data_dir}")
    table = None
    if (data_dir / "labels.json").exists():
        table = LabelTable(json.loads((data_dir / "labels.json").read_text())["labels"])

    poses = []
    for i, f in enumerate(files):
        w = read_window(f)
        seq = window_to_sequence(w)
        name = table.name(int(w.label)) if table else str(int(w.label))
        for tag, frame in (("first", seq.frames[0]), ("last", seq.frames[-1])):
            poses.append({
                "name": f"window{i}-{name}-{tag}",
                "pose": {
                    "positions": frame.positions.tolist(),
                    "rotations": frame.rotations.tolist(),
                },
            })
    Path(out).write_text(json.dumps({"poses": poses}))
    print(f"wrote {len(poses)} poses to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
