import numpy as np
import pytest

from cmib.autodiff import Tensor, backward, l1_loss
from cmib.dataset import vectorize_pose
from cmib.geometry import Pose, bone_lengths, quat_normalize
from cmib.model import (
    CMIBConfig,
    CMIBModel,
    build_input,
    infill,
    load_checkpoint,
    save_checkpoint,
)
from cmib.synthetic import synthetic_skeleton

TOY = CMIBConfig(J=2, T_max=12, m=2, n_layers=2, d_ff=24, dropout=0.05, n_labels=3)


def random_pose(rng, J=2):
    return Pose(rng.normal(size=(J, 3)), quat_normalize(rng.normal(size=(J, 4))))


class TestConfig:
    def test_dimensions(self):
        cfg = CMIBConfig(J=22, T_max=65, m=7)
        assert cfg.d == 154 and cfg.d_k == 22

    def test_head_divisibility_enforced(self):
        with pytest.raises(ValueError, match="divisible"):
            CMIBConfig(J=2, T_max=8, m=3)

    def test_bounds(self):
        with pytest.raises(ValueError, match="T_max"):
            CMIBConfig(J=2, T_max=1, m=2)
        with pytest.raises(ValueError, match="label"):
            CMIBConfig(J=2, T_max=8, m=2, n_labels=0)
        with pytest.raises(ValueError, match="dropout"):
            CMIBConfig(J=2, T_max=8, m=2, dropout=1.0)
        with pytest.raises(ValueError, match="context"):
            CMIBConfig(J=2, T_max=8, m=2, context_frames=8)

    def test_dict_round_trip(self):
        cfg = CMIBConfig(J=3, T_max=16, m=3, n_layers=1, d_ff=8, n_labels=2)
        assert CMIBConfig.from_dict(cfg.to_dict()) == cfg


class TestParameters:
    def test_shapes(self):
        model = CMIBModel(TOY, seed=0)
        d, d_k = TOY.d, TOY.d_k
        p = model.params
        assert p["pe"].data.shape == (TOY.T_max, d)
        assert p["sem"].data.shape == (TOY.n_labels, d)
        assert p["layer0.head0.wq"].data.shape == (d, d_k)
        assert p["layer0.wo"].data.shape == (d, d)
        assert p["layer1.ffn1.w"].data.shape == (d, TOY.d_ff)
        assert p["layer1.ffn2.b"].data.shape == (d,)
        assert all(t.requires_grad for t in model.parameters())

    def test_initialization_ranges(self):
        model = CMIBModel(CMIBConfig(J=4, T_max=32, m=4, n_layers=1, d_ff=64), seed=1)
        d = 28
        w = model.params["layer0.head0.wq"].data
        assert np.abs(w).max() <= 1.0 / np.sqrt(d) + 1e-7
        assert np.array_equal(model.params["layer0.ln1.g"].data, np.ones(d, np.float32))
        assert np.array_equal(model.params["layer0.ffn1.b"].data, np.zeros(64, np.float32))
        pe = model.params["pe"].data
        assert 0.01 < pe.std() < 0.03

    def test_seeded_construction_reproducible(self):
        a = CMIBModel(TOY, seed=5)
        b = CMIBModel(TOY, seed=5)
        for x, y in zip(a.parameters(), b.parameters()):
            assert np.array_equal(x.data, y.data)


class TestBuildInput:
    def test_semantic_row_is_table_row(self):
        rng = np.random.default_rng(0)
        model = CMIBModel(TOY, seed=0)
        keys = {1: random_pose(rng), 8: random_pose(rng)}
        I = build_input(keys, 8, 2, model)
        assert I.shape == (9, TOY.d)
        assert np.array_equal(I[0], model.params["sem"].data[2])

    def test_key_rows_are_vectorization_plus_pe(self):
        rng = np.random.default_rng(1)
        model = CMIBModel(TOY, seed=0)
        start, mid, end = (random_pose(rng) for _ in range(3))
        I = build_input({1: start, 5: mid, 10: end}, 10, 0, model)
        pe = model.params["pe"].data
        for frame, pose in ((1, start), (5, mid), (10, end)):
            expect = vectorize_pose(pose).astype(np.float32) + pe[frame - 1]
            assert np.array_equal(I[frame], expect)

    def test_constant_pose_rows_differ_only_by_pe(self):
        rng = np.random.default_rng(2)
        model = CMIBModel(TOY, seed=0)
        pose = random_pose(rng)
        I = build_input({1: pose, 6: pose}, 6, 1, model)
        base = vectorize_pose(pose).astype(np.float32)
        expect = base[None, :] + model.params["pe"].data[:6]
        assert np.allclose(I[1:], expect, atol=1e-6)

    def test_rejects_long_windows_and_bad_labels(self):
        rng = np.random.default_rng(3)
        model = CMIBModel(TOY, seed=0)
        keys = {1: random_pose(rng), 20: random_pose(rng)}
        with pytest.raises(ValueError, match="T_max"):
            build_input(keys, 20, 0, model)
        keys = {1: random_pose(rng), 8: random_pose(rng)}
        with pytest.raises(ValueError, match="label"):
            build_input(keys, 8, 7, model)


class TestEncoderForward:
    def test_shape_invariance(self):
        model = CMIBModel(TOY, seed=0)
        for T in (2, 5, TOY.T_max):
            x = np.random.default_rng(T).standard_normal((T + 1, TOY.d))
            out = model.encoder_forward(x)
            assert out.data.shape == (T + 1, TOY.d)

    def test_attention_rows_sum_to_one(self):
        model = CMIBModel(TOY, seed=0)
        x = np.random.default_rng(4).standard_normal((7, TOY.d))
        _, attn = model.encoder_forward(x, return_attn=True)
        assert len(attn) == TOY.n_layers
        for layer in attn:
            assert len(layer) == TOY.m
            for weights in layer:
                assert weights.shape == (7, 7)
                assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_eval_deterministic(self):
        model = CMIBModel(TOY, seed=0)
        x = np.random.default_rng(5).standard_normal((6, TOY.d))
        a = model.encoder_forward(x).data
        b = model.encoder_forward(x).data
        assert a.tobytes() == b.tobytes()

    def test_interior_row_permutation_equivariance(self):
        model = CMIBModel(TOY, seed=3, dtype=np.float64)
        x = np.random.default_rng(6).standard_normal((8, TOY.d))
        out = model.encoder_forward(x).data
        perm = x.copy()
        perm[[2, 5]] = perm[[5, 2]]
        out_p = model.encoder_forward(perm).data
        expect = out.copy()
        expect[[2, 5]] = expect[[5, 2]]
        assert np.allclose(out_p, expect, atol=1e-9)

    def test_batched_matches_single(self):
        model = CMIBModel(TOY, seed=1, dtype=np.float64)
        rng = np.random.default_rng(7)
        batch = rng.standard_normal((3, 6, TOY.d))
        out = model.encoder_forward(batch).data
        for b in range(3):
            single = model.encoder_forward(batch[b]).data
            assert np.allclose(out[b], single, atol=1e-12)

    def test_shape_errors(self):
        model = CMIBModel(TOY, seed=0)
        with pytest.raises(ValueError, match="width"):
            model.encoder_forward(np.zeros((5, 9)))
        with pytest.raises(ValueError, match="rows"):
            model.encoder_forward(np.zeros((TOY.T_max + 2, TOY.d)))

    def test_train_mode_requires_generator(self):
        model = CMIBModel(TOY, seed=0)
        x = np.zeros((4, TOY.d), dtype=np.float32)
        with pytest.raises(ValueError, match="generator"):
            model.encoder_forward(x, train=True)


class TestGradients:
    def toy_loss(self, model, T=6, label=1, seed=8):
        rng = np.random.default_rng(seed)
        motion = Tensor(rng.standard_normal((T, model.config.d)), dtype=model.dtype)
        target = Tensor(
            rng.standard_normal((T + 1, model.config.d)), dtype=model.dtype
        )
        out = model.encoder_forward(model.assemble(motion, label), train=False)
        return l1_loss(out, target)

    def test_gradient_reaches_every_parameter(self):
        model = CMIBModel(TOY, seed=2, dtype=np.float64)
        T, label = 6, 1
        backward(self.toy_loss(model, T=T, label=label))
        for name, p in model.params.items():
            g = p.grad_value()
            if name == "pe":
                assert np.linalg.norm(g[:T]) > 0, "used PE rows must receive gradient"
                assert np.linalg.norm(g[T:]) == 0
            elif name == "sem":
                assert np.linalg.norm(g[label]) > 0
                others = [i for i in range(TOY.n_labels) if i != label]
                assert np.linalg.norm(g[others]) == 0
            else:
                assert np.linalg.norm(g) > 0, f"dead parameter {name}"

    def test_sampled_finite_differences(self):
        cfg = CMIBConfig(J=2, T_max=8, m=2, n_layers=1, d_ff=12, dropout=0.0, n_labels=2)
        model = CMIBModel(cfg, seed=4, dtype=np.float64)
        loss = self.toy_loss(model, T=5, label=0, seed=9)
        backward(loss)
        rng = np.random.default_rng(10)
        h = 1e-6
        for name, p in model.params.items():
            g = p.grad_value()
            flat = p.data.ravel()
            for idx in rng.integers(0, flat.size, size=3):
                orig = flat[idx]
                flat[idx] = orig + h
                fp = float(self.toy_loss(model, T=5, label=0, seed=9).data)
                flat[idx] = orig - h
                fm = float(self.toy_loss(model, T=5, label=0, seed=9).data)
                flat[idx] = orig
                fd = (fp - fm) / (2 * h)
                assert abs(g.ravel()[idx] - fd) < 1e-6 * max(1.0, abs(fd)), name


class TestInfill:
    def test_untrained_output_is_structurally_valid(self):
        skel = synthetic_skeleton(2)
        model = CMIBModel(TOY, seed=0)
        rng = np.random.default_rng(11)
        start, target = random_pose(rng), random_pose(rng)
        seq = infill(model, skel, start, target, T=10, label_id=1)
        assert len(seq) == 10
        assert seq.label == 1
        for frame in seq.frames:
            assert np.allclose(np.linalg.norm(frame.rotations, axis=-1), 1.0, atol=1e-6)
            lengths = bone_lengths(frame, skel)
            assert np.allclose(lengths[1:], skel.ref_lengths[1:], atol=1e-6)

    def test_anchor_passed_through(self):
        skel = synthetic_skeleton(2)
        model = CMIBModel(TOY, seed=0)
        rng = np.random.default_rng(12)
        seq = infill(
            model, skel, random_pose(rng), random_pose(rng),
            T=10, label_id=0, anchor=(5, random_pose(rng)),
        )
        assert len(seq) == 10

    def test_anchor_bounds_enforced(self):
        skel = synthetic_skeleton(2)
        model = CMIBModel(TOY, seed=0)
        rng = np.random.default_rng(13)
        for k in (1, 10, 0, 11):
            with pytest.raises(ValueError, match="anchor"):
                infill(
                    model, skel, random_pose(rng), random_pose(rng),
                    T=10, label_id=0, anchor=(k, random_pose(rng)),
                )

    def test_deterministic(self):
        skel = synthetic_skeleton(2)
        model = CMIBModel(TOY, seed=0)
        rng = np.random.default_rng(14)
        start, target = random_pose(rng), random_pose(rng)
        a = infill(model, skel, start, target, T=8, label_id=2)
        b = infill(model, skel, start, target, T=8, label_id=2)
        assert a.stacked_positions().tobytes() == b.stacked_positions().tobytes()
        assert a.stacked_rotations().tobytes() == b.stacked_rotations().tobytes()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = CMIBModel(TOY, seed=6)
        meta = {"step": 123, "seed": 6, "loss_scales": [1.0, 2.0, 3.0]}
        path = tmp_path / "model.cmib"
        save_checkpoint(model, path, meta)
        loaded, meta2 = load_checkpoint(path)
        assert meta2 == meta
        assert loaded.config == model.config
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_forward_identical_after_reload(self, tmp_path):
        model = CMIBModel(TOY, seed=7)
        path = tmp_path / "model.cmib"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        x = np.random.default_rng(15).standard_normal((5, TOY.d)).astype(np.float32)
        assert (
            model.encoder_forward(x).data.tobytes()
            == loaded.encoder_forward(x).data.tobytes()
        )

    def test_corrupt_files_rejected(self, tmp_path):
        model = CMIBModel(TOY, seed=8)
        path = tmp_path / "model.cmib"
        save_checkpoint(model, path)
        raw = path.read_bytes()

        bad = tmp_path / "bad.cmib"
        bad.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ValueError, match="checkpoint"):
            load_checkpoint(bad)

        bad.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(bad)

        bad.write_bytes(raw + b"\0\0\0\0")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(bad)
