import numpy as np
import pytest

from encoder_oracle import scalar_forward
from fgssl.encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    forward,
    forward_trace,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
)
from fgssl.encoder.autodiff import Tensor, backward as tape_backward, param
from fgssl.encoder import autodiff as ad
from fgssl.encoder.vit import cubic_resize_matrix, pos_interp_matrix
from fgssl.errors import InvalidInputError

TINY = EncoderConfig(patch_size=8, embed_dim=8, depth=1, heads=1, mlp_ratio=2.0,
                     projection_dim=4, head_hidden_dim=8, global_size=32, local_size=16)


def random_params(cfg, seed=0, scale=0.3, dtype=np.float64):
    rng = np.random.default_rng(seed)
    tensors = {k: (rng.normal(0, scale, size=s)).astype(dtype) for k, s in param_shapes(cfg).items()}
    for k in tensors:
        if "norm" in k and k.endswith("weight"):
            tensors[k] = (1 + tensors[k]).astype(dtype)
    return EncoderParams(cfg, tensors)


def rand_views(n, size, seed=1, dtype=np.float64):
    return np.random.default_rng(seed).random((n, size, size, 3)).astype(dtype)


def fd_gradcheck(params, views, mask, gc, gp, per_group=24, h=1e-6, seed=0):
    """Relative error (norm-wise) of analytic vs central-difference gradients, per group."""
    analytic = backward(params, views, mask, gc, gp)
    rng = np.random.default_rng(seed)

    def loss(p):
        out = forward(p, views, mask)
        return float(np.sum(out.cls * gc) + np.sum(out.patches * gp))

    errors = {}
    for name, value in params.tensors.items():
        flat_idx = rng.choice(value.size, size=min(per_group, value.size), replace=False)
        fd, an = [], []
        for fi in flat_idx:
            idx = np.unravel_index(fi, value.shape)
            orig = value[idx]
            value[idx] = orig + h
            up = loss(params)
            value[idx] = orig - h
            down = loss(params)
            value[idx] = orig
            fd.append((up - down) / (2 * h))
            an.append(analytic[name][idx])
        fd, an = np.array(fd), np.array(an)
        denom = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12)
        errors[name] = (np.linalg.norm(fd - an) / denom, np.linalg.norm(an))
    return errors


class TestInit:
    def test_deterministic(self):
        a, b = init_params(TINY, 5), init_params(TINY, 5)
        assert all(np.array_equal(a[k], b[k]) for k in a.names())
        c = init_params(TINY, 6)
        assert not np.array_equal(a["pos_embed"], c["pos_embed"])

    def test_dtype_and_shapes(self):
        p = init_params(TINY, 0)
        p.check()
        assert p.dtype == np.float32

    def test_token_count(self):
        cfg = EncoderConfig(embed_dim=64, patch_size=16, global_size=224, local_size=96)
        assert cfg.n_tokens(224) == 196
        assert cfg.n_tokens(96) == 36

    def test_bad_config(self):
        with pytest.raises(InvalidInputError):
            EncoderConfig(embed_dim=10, heads=3)
        with pytest.raises(InvalidInputError):
            EncoderConfig(patch_size=16, global_size=100)


class TestForward:
    def test_matches_scalar_oracle(self):
        p = random_params(TINY, 3, dtype=np.float32)
        img = rand_views(1, 32, 4, np.float32)[0]
        out = forward(p, img)
        cls, patches = scalar_forward(p.tensors, TINY, img.tolist())
        np.testing.assert_allclose(out.cls, cls, atol=1e-5)
        np.testing.assert_allclose(out.patches, patches, atol=1e-5)

    def test_masked_matches_scalar_oracle(self):
        p = random_params(TINY, 8, dtype=np.float32)
        img = rand_views(1, 32, 9, np.float32)[0]
        out = forward(p, img, mask=[1, 7, 12])
        cls, patches = scalar_forward(p.tensors, TINY, img.tolist(), mask=(1, 7, 12))
        np.testing.assert_allclose(out.cls, cls, atol=1e-5)
        np.testing.assert_allclose(out.patches, patches, atol=1e-5)

    def test_outputs_unit_norm(self):
        p = init_params(TINY, 0)
        out = forward(p, rand_views(3, 16, dtype=np.float32))
        np.testing.assert_allclose(np.linalg.norm(out.cls, axis=-1), 1, atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(out.patches, axis=-1), 1, atol=1e-6)
        assert out.patches.shape == (3, 4, 4)

    def test_empty_mask_equals_no_mask(self):
        p = random_params(TINY, 1)
        v = rand_views(2, 32)
        a, b = forward(p, v), forward(p, v, mask=[[], []])
        assert np.array_equal(a.cls, b.cls) and np.array_equal(a.patches, b.patches)

    def test_full_mask_ignores_pixels(self):
        p = random_params(TINY, 1)
        full = np.arange(16)
        a = forward(p, rand_views(1, 32, 1)[0], mask=full)
        b = forward(p, rand_views(1, 32, 2)[0], mask=full)
        np.testing.assert_allclose(a.patches, b.patches, atol=1e-12)
        np.testing.assert_allclose(a.cls, b.cls, atol=1e-12)

    def test_bad_mask_index(self):
        p = init_params(TINY, 0)
        with pytest.raises(InvalidInputError):
            forward(p, rand_views(1, 32)[0], mask=[16])

    def test_bad_view_size(self):
        p = init_params(TINY, 0)
        with pytest.raises(InvalidInputError):
            forward(p, rand_views(1, 20)[0])

    def test_batch_equals_single(self):
        p = random_params(TINY, 2)
        v = rand_views(3, 32)
        batch = forward(p, v)
        for i in range(3):
            np.testing.assert_allclose(forward(p, v[i]).cls, batch.cls[i], atol=1e-12)

    def test_permutation_equivariance(self):
        p = random_params(TINY, 4)
        img = rand_views(1, 32, 5)[0]
        ps = TINY.patch_size
        # swap patch 0 (row 0, col 0) with patch 5 (row 1, col 1)
        swapped = img.copy()
        a = img[0:ps, 0:ps].copy()
        swapped[0:ps, 0:ps] = img[ps : 2 * ps, ps : 2 * ps]
        swapped[ps : 2 * ps, ps : 2 * ps] = a
        q = p.copy()
        q.tensors["pos_embed"][[0, 5]] = p["pos_embed"][[5, 0]]
        base, perm = forward(p, img), forward(q, swapped)
        np.testing.assert_allclose(perm.cls, base.cls, atol=1e-12)
        order = np.arange(16)
        order[[0, 5]] = [5, 0]
        np.testing.assert_allclose(perm.patches, base.patches[order], atol=1e-12)

    def test_two_resolutions(self):
        cfg = EncoderConfig(global_size=64, local_size=32)
        p = init_params(cfg, 0)
        assert forward(p, rand_views(1, 64, dtype=np.float32)[0]).patches.shape == (16, 32)
        assert forward(p, rand_views(1, 32, dtype=np.float32)[0]).patches.shape == (4, 32)


class TestPosInterp:
    def test_identity_same_size(self):
        assert np.array_equal(cubic_resize_matrix(5, 5), np.eye(5))

    def test_rows_sum_to_one(self):
        m = pos_interp_matrix(14, 6)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_constant_preserved(self):
        pos = np.full((16, 3), 0.7)
        np.testing.assert_allclose(pos_interp_matrix(4, 2) @ pos, 0.7, atol=1e-12)


class TestBackward:
    def test_zero_output_gradient(self):
        p = random_params(TINY, 0)
        g = backward(p, rand_views(2, 32), None, np.zeros((2, 4)), np.zeros((2, 16, 4)))
        assert all(np.all(v == 0) for v in g.values())

    def test_unused_mask_token_has_zero_grad(self):
        p = random_params(TINY, 0)
        rng = np.random.default_rng(0)
        g = backward(p, rand_views(2, 32), None, rng.normal(size=(2, 4)), rng.normal(size=(2, 16, 4)))
        assert np.all(g["mask_token"] == 0)
        assert np.any(g["pos_embed"] != 0)

    def test_grads_cover_every_parameter(self):
        p = random_params(TINY, 0)
        rng = np.random.default_rng(0)
        g = backward(p, rand_views(2, 32), [[0, 3], [5]], rng.normal(size=(2, 4)), rng.normal(size=(2, 16, 4)))
        assert set(g) == set(p.names())
        assert all(np.all(np.isfinite(v)) for v in g.values())
        assert all(g[k].shape == p[k].shape for k in g)

    @pytest.mark.parametrize("size, mask", [(32, [[0, 3, 9], [5]]), (16, None)])
    def test_finite_differences(self, size, mask):
        p = random_params(TINY, 7)
        views = rand_views(2, size, 8)
        n = TINY.n_tokens(size)
        rng = np.random.default_rng(9)
        errors = fd_gradcheck(p, views, mask, rng.normal(size=(2, 4)), rng.normal(size=(2, n, 4)))
        for name, (rel, norm) in errors.items():
            if name == "mask_token" and mask is None:
                assert norm == 0
                continue
            assert rel <= 1e-3, (name, rel)

    def test_float32_trace_stays_float32(self):
        p = init_params(TINY, 0)
        tr = forward_trace(p, rand_views(2, 32, dtype=np.float32))
        g = tr.backward(np.ones((2, 4), np.float32), None)
        assert all(v.dtype == np.float32 for v in g.values())


class TestTape:
    def test_shared_subexpression(self):
        a = param(np.array([1.0, 2.0]))
        b = ad.add(a, a)
        c = ad.add(b, a)
        tape_backward([c], [np.ones(2)])
        np.testing.assert_allclose(a.grad, [3.0, 3.0])

    def test_constants_do_not_record(self):
        x = Tensor(np.ones(3))
        y = ad.scale(x, 2.0)
        assert not y.requires_grad and y.parents == ()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = init_params(TINY, 0)
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {"encoder": TINY.to_dict(), "step": 3}, {f"student/{k}": v for k, v in p.tensors.items()})
        cfg, tensors = load_checkpoint(path)
        assert cfg["step"] == 3 and EncoderConfig.from_dict(cfg["encoder"]) == TINY
        for k, v in p.tensors.items():
            assert np.array_equal(tensors["student/" + k], v)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {}, {"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
        raw = path.read_bytes()
        assert raw[:8] == b"PSSLCKPT"
        assert int.from_bytes(raw[8:12], "little") == 1
        # config "{}", count 1, name "a", rank 2, dims (2, 3), payload
        assert raw[12:16] == (2).to_bytes(4, "little") and raw[16:18] == b"{}"
        tail = raw[18:]
        assert tail[:4] == (1).to_bytes(4, "little")
        assert tail[4:6] == (1).to_bytes(2, "little") and tail[6:7] == b"a"
        assert np.frombuffer(tail[-24:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]

    def test_bad_magic(self, tmp_path):
        from fgssl.errors import DataError

        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(8))
        with pytest.raises(DataError):
            load_checkpoint(path)
