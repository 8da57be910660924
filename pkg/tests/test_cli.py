import json
from pathlib import Path

import numpy as np
import pytest

from cmib.bvh import parse_bvh, write_bvh
from cmib.cli import main
from cmib.dataset import ManifestEntry, read_window, save_manifest
from cmib.synthetic import SynthConfig, gen_synthetic, synthetic_skeleton


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def run_synth(out, extra=()):
    return main(["synth", "--out", str(out), "--windows", "6", "--joints", "2",
                 "--frames", "16", *extra])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "synth"
    assert run_synth(out) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synth_dir):
    run = tmp_path_factory.mktemp("run")
    code = main([
        "train", "--data", str(synth_dir), "--run-dir", str(run),
        "--steps", "10", "--batch-size", "4", "--heads", "2",
        "--layers", "2", "--d-ff", "16",
    ])
    assert code == 0
    return run


class TestDispatch:
    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["synth", "--bogus"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "subcommand" in capsys.readouterr().out.lower() or True

    def test_runtime_error_exits_one(self, tmp_path, capsys):
        code = main(["eval", "--ckpt", str(tmp_path / "missing.bin"),
                     "--data", str(tmp_path)])
        assert code == 1
        assert "missing.bin" in capsys.readouterr().err


class TestSynth:
    def test_artifacts(self, synth_dir):
        files = sorted((synth_dir / "windows").glob("*.cmibw"))
        assert len(files) == 6
        labels = json.loads((synth_dir / "labels.json").read_text())
        assert labels["labels"] == ["walk", "run", "jump"]
        skel = json.loads((synth_dir / "skeleton.json").read_text())
        assert skel["joint_names"] == ["root", "link1"]
        assert (synth_dir / "resolved_config.json").exists()

    def test_deterministic_output_tree(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_synth(a, ("--seed", "7")) == 0
        assert run_synth(b, ("--seed", "7")) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"windows": 4, "joints": 2, "frames": 16}))
        out1 = tmp_path / "from_file"
        assert main(["synth", "--config", str(cfg), "--out", str(out1)]) == 0
        assert len(list((out1 / "windows").glob("*.cmibw"))) == 4

        out2 = tmp_path / "flag_wins"
        assert main(["synth", "--config", str(cfg), "--out", str(out2),
                     "--windows", "2"]) == 0
        assert len(list((out2 / "windows").glob("*.cmibw"))) == 2

    def test_toml_config(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('windows = 3\njoints = 2\nframes = 16\n')
        out = tmp_path / "toml"
        assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        assert len(list((out / "windows").glob("*.cmibw"))) == 3

    def test_resolved_config_reproduces(self, synth_dir, tmp_path):
        resolved = synth_dir / "resolved_config.json"
        out = tmp_path / "replay"
        assert main(["synth", "--config", str(resolved), "--out", str(out)]) == 0
        a = tree_bytes(synth_dir / "windows")
        b = tree_bytes(out / "windows")
        assert a == b


@pytest.fixture(scope="module")
def clips(tmp_path_factory):
    root = tmp_path_factory.mktemp("clips")
    skel = synthetic_skeleton(2)
    entries = []
    for subject in (0, 1):
        ws, table, _ = gen_synthetic(
            SynthConfig(J=2, T=40, n_windows=2, seed=subject, n_subjects=1)
        )
        for i, w in enumerate(ws):
            from cmib.dataset import window_to_sequence

            name = f"{table.name(w.label)}_s{subject}_{i}.bvh"
            (root / name).write_text(write_bvh(skel, window_to_sequence(w)))
            entries.append(ManifestEntry(name, subject, table.name(w.label)))
    save_manifest(entries, root / "manifest.json")
    return root


class TestPreprocess:
    def test_windows_splits_stats(self, clips, tmp_path):
        out = tmp_path / "prep"
        code = main([
            "preprocess", "--manifest", str(clips / "manifest.json"),
            "--out", str(out), "--frames", "16", "--stride", "8",
            "--train-subjects", "0", "--test-subjects", "1",
        ])
        assert code == 0
        train_files = list((out / "train" / "windows").glob("*.cmibw"))
        test_files = list((out / "test" / "windows").glob("*.cmibw"))
        assert train_files and test_files
        w = read_window(train_files[0])
        assert len(w) == 16 and w.joint_count == 2
        stats = json.loads((out / "stats.json").read_text())
        assert len(stats["mean"]) == 6 and len(stats["std"]) == 6
        labels = json.loads((out / "labels.json").read_text())
        assert set(labels["labels"]) <= {"walk", "run", "jump"}
        assert (out / "skeleton.json").exists()
        assert (out / "resolved_config.json").exists()


class TestAugment:
    def test_augments_locomotion_and_logs_skips(self, synth_dir, tmp_path):
        out = tmp_path / "aug"
        code = main([
            "augment", "--data", str(synth_dir), "--out", str(out),
            "--samples", "2", "--seed", "3", "--dump-paths",
        ])
        assert code == 0
        files = list((out / "windows").glob("*.cmibw"))
        # 6 windows round-robin over 3 labels: 4 augmentable x 2 samples
        assert len(files) == 8
        skipped = (out / "skipped.txt").read_text()
        assert "jump" in skipped
        assert list((out / "grp_paths").glob("*.csv"))
        assert (out / "labels.json").exists()


class TestTrain:
    def test_artifacts(self, trained):
        assert (trained / "final.cmib").exists()
        lines = (trained / "loss_trace.csv").read_text().strip().splitlines()
        assert len(lines) == 11  # header + 10 steps
        assert (trained / "resolved_config.json").exists()

    def test_same_config_reproduces_checkpoint(self, synth_dir, tmp_path):
        runs = []
        for name in ("r1", "r2"):
            run = tmp_path / name
            code = main([
                "train", "--data", str(synth_dir), "--run-dir", str(run),
                "--steps", "5", "--batch-size", "4", "--heads", "2",
                "--layers", "2", "--d-ff", "16", "--seed", "11",
            ])
            assert code == 0
            runs.append((run / "final.cmib").read_bytes())
        assert runs[0] == runs[1]


class TestEval:
    def test_report_files(self, trained, synth_dir, tmp_path):
        out = tmp_path / "report"
        code = main([
            "eval", "--ckpt", str(trained / "final.cmib"),
            "--data", str(synth_dir), "--out", str(out),
            "--horizons", "8,16", "--anchor-frames", "8", "--semantic",
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["methods"].keys()) == {"8", "16"}
        assert "8" in report["anchor"]
        assert report["semantic"]["matrix"]
        assert (out / "report.txt").exists()
        assert (out / "raw.csv").exists()


class TestInfill:
    def test_json_output(self, trained, synth_dir, tmp_path):
        window = sorted((synth_dir / "windows").glob("*.cmibw"))[0]
        out = tmp_path / "gen.json"
        code = main([
            "infill", "--ckpt", str(trained / "final.cmib"),
            "--window", str(window), "--out", str(out),
        ])
        assert code == 0
        data = json.loads(out.read_text())
        assert len(data["frames"]) == 16
        assert len(data["frames"][0]["positions"]) == 2
        assert data["request"]["label"] in ("walk", "run", "jump")

    def test_bvh_output_parses(self, trained, synth_dir, tmp_path):
        window = sorted((synth_dir / "windows").glob("*.cmibw"))[0]
        out = tmp_path / "gen.bvh"
        code = main([
            "infill", "--ckpt", str(trained / "final.cmib"),
            "--window", str(window), "--out", str(out),
            "--anchor-frame", "8", "--label", "run",
        ])
        assert code == 0
        skel, seq = parse_bvh(out.read_text())
        assert len(seq) == 16
        assert skel.joint_count == 2


class TestBenchAndServe:
    def test_bench_prints_table(self, trained, capsys):
        code = main([
            "bench", "--ckpt", str(trained / "final.cmib"),
            "--batches", "1,2", "--horizons", "8", "--trials", "2",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean_s" in out and "trials" in out

    def test_serve_wires_flags(self, trained, monkeypatch):
        calls = {}

        def fake_serve(checkpoint, host, port, cors_origins):
            calls.update(ckpt=checkpoint, host=host, port=port, cors=cors_origins)

        import cmib.service

        monkeypatch.setattr(cmib.service, "serve", fake_serve)
        code = main([
            "serve", "--ckpt", str(trained / "final.cmib"),
            "--host", "0.0.0.0", "--port", "9101",
            "--cors-origins", "http://localhost:5173",
        ])
        assert code == 0
        assert calls["port"] == 9101
        assert calls["host"] == "0.0.0.0"
        assert calls["cors"] == ["http://localhost:5173"]
        assert str(calls["ckpt"]).endswith("final.cmib")
