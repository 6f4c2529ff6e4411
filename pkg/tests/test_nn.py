import numpy as np
import pytest
import torch

from cospeech import nn
from cospeech.errors import BadIndex, BadMagic, ShapeMismatch, TruncatedFile, VersionUnsupported


class TestLayers:
    def test_linear_matches_numpy(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 7))
        w = rng.normal(size=(7, 3))
        b = rng.normal(size=3)
        out = nn.linear(torch.as_tensor(x), torch.as_tensor(w), torch.as_tensor(b))
        np.testing.assert_allclose(out.numpy(), x @ w + b, atol=1e-12)

    def test_linear_shape_error(self):
        with pytest.raises(ShapeMismatch):
            nn.linear(torch.zeros(2, 4), torch.zeros(5, 3))

    def test_conv1d_matches_direct_sum(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 20))
        k = rng.normal(size=(3, 2, 5))
        out = nn.conv1d(torch.as_tensor(x), torch.as_tensor(k), stride=2, padding=2)
        xp = np.pad(x, ((0, 0), (2, 2)))
        n_out = (20 + 4 - 5) // 2 + 1
        expected = np.zeros((3, n_out))
        for co in range(3):
            for i in range(n_out):
                expected[co, i] = np.sum(xp[:, 2 * i : 2 * i + 5] * k[co])
        np.testing.assert_allclose(out.numpy(), expected, atol=1e-10)

    def test_conv1d_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.conv1d(torch.zeros(2, 10), torch.zeros(4, 3, 5))

    def test_conv1d_input_too_short(self):
        with pytest.raises(ShapeMismatch):
            nn.conv1d(torch.zeros(1, 3), torch.zeros(1, 1, 7))

    def test_layer_norm_statistics(self):
        rng = np.random.default_rng(2)
        x = torch.as_tensor(rng.normal(size=(4, 16)))
        out = nn.layer_norm(x, torch.ones(16, dtype=x.dtype), torch.zeros(16, dtype=x.dtype))
        np.testing.assert_allclose(out.mean(dim=-1).numpy(), 0.0, atol=1e-10)
        # population variance with eps=1e-5 in the denominator
        np.testing.assert_allclose(out.var(dim=-1, unbiased=False).numpy(), 1.0, atol=1e-4)

    def test_layer_norm_affine(self):
        x = torch.as_tensor(np.random.default_rng(3).normal(size=(2, 8)))
        g = torch.full((8,), 2.0, dtype=x.dtype)
        b = torch.full((8,), -1.0, dtype=x.dtype)
        base = nn.layer_norm(x, torch.ones(8, dtype=x.dtype), torch.zeros(8, dtype=x.dtype))
        out = nn.layer_norm(x, g, b)
        np.testing.assert_allclose(out.numpy(), (base * 2 - 1).numpy(), atol=1e-12)

    def test_silu_oracle(self):
        x = torch.linspace(-4, 4, 33)
        np.testing.assert_allclose(
            nn.silu(x).numpy(), (x * torch.sigmoid(x)).numpy(), atol=1e-7
        )

    def test_leaky_relu(self):
        x = torch.tensor([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(nn.leaky_relu(x, 0.2).numpy(), [-0.4, 0.0, 3.0])

    def test_softmax_rows_sum_to_one(self):
        x = torch.as_tensor(np.random.default_rng(4).normal(size=(5, 9)) * 10)
        s = nn.softmax(x)
        np.testing.assert_allclose(s.sum(dim=-1).numpy(), 1.0, atol=1e-12)
        assert torch.all(s > 0)

    def test_softmax_shift_invariant(self):
        x = torch.as_tensor(np.random.default_rng(5).normal(size=(3, 4)))
        np.testing.assert_allclose(
            nn.softmax(x).numpy(), nn.softmax(x + 100.0).numpy(), atol=1e-12
        )


class TestAttention:
    def test_single_head_matches_manual(self):
        rng = np.random.default_rng(6)
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(5, 4))
        v = rng.normal(size=(5, 4))
        out = nn.multihead_attention(
            torch.as_tensor(q), torch.as_tensor(k), torch.as_tensor(v), heads=1
        )
        logits = q @ k.T / 2.0  # sqrt(d)=2
        a = np.exp(logits - logits.max(axis=-1, keepdims=True))
        a /= a.sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(out.numpy(), a @ v, atol=1e-10)

    def test_two_heads_match_blockwise_single_heads(self):
        rng = np.random.default_rng(7)
        q, k, v = (torch.as_tensor(rng.normal(size=(6, 8))) for _ in range(3))
        full = nn.multihead_attention(q, k, v, heads=2)
        h0 = nn.multihead_attention(q[:, :4], k[:, :4], v[:, :4], heads=1)
        h1 = nn.multihead_attention(q[:, 4:], k[:, 4:], v[:, 4:], heads=1)
        np.testing.assert_allclose(full.numpy(), torch.cat([h0, h1], dim=-1).numpy(),
                                   atol=1e-10)

    def test_mask_blocks_positions(self):
        rng = np.random.default_rng(8)
        q, k, v = (torch.as_tensor(rng.normal(size=(2, 4))) for _ in range(3))
        mask = torch.zeros(2, 2, dtype=q.dtype)
        mask[:, 1] = -torch.inf  # nobody may attend to position 1
        out = nn.multihead_attention(q, k, v, heads=1, mask=mask)
        np.testing.assert_allclose(out.numpy(), np.broadcast_to(v[0].numpy(), (2, 4)),
                                   atol=1e-10)

    def test_indivisible_heads(self):
        with pytest.raises(ShapeMismatch):
            nn.multihead_attention(torch.zeros(2, 6), torch.zeros(2, 6),
                                   torch.zeros(2, 6), heads=4)


class TestEmbedding:
    def test_lookup(self):
        table = torch.arange(12.0).reshape(4, 3)
        out = nn.embedding_lookup(table, [2, 0])
        np.testing.assert_array_equal(out.numpy(), [[6, 7, 8], [0, 1, 2]])

    def test_out_of_range(self):
        with pytest.raises(BadIndex):
            nn.embedding_lookup(torch.zeros(4, 3), [4])
        with pytest.raises(BadIndex):
            nn.embedding_lookup(torch.zeros(4, 3), [-1])


class TestOptimizer:
    """Parity with torch.optim on identical gradient streams."""

    def _run_pair(self, algorithm, wd, steps=7):
        rng = np.random.default_rng(9)
        init = rng.normal(size=(4, 3))
        grads = [rng.normal(size=(4, 3)) for _ in range(steps)]

        mine = {"p": torch.as_tensor(init.copy())}
        state = nn.make_optimizer(mine, algorithm, lr=1e-2, betas=(0.9, 0.999),
                                  weight_decay=wd)
        for g in grads:
            nn.optimizer_step(state, mine, {"p": torch.as_tensor(g)})

        ref = torch.as_tensor(init.copy()).requires_grad_(True)
        cls = torch.optim.AdamW if algorithm == "adamw" else torch.optim.Adam
        opt = cls([ref], lr=1e-2, betas=(0.9, 0.999), weight_decay=wd)
        for g in grads:
            ref.grad = torch.as_tensor(g)
            opt.step()
        return mine["p"].numpy(), ref.detach().numpy()

    def test_adam_matches_torch(self):
        got, want = self._run_pair("adam", 0.0)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_adamw_matches_torch(self):
        got, want = self._run_pair("adamw", 0.01)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_unknown_algorithm(self):
        with pytest.raises(ShapeMismatch):
            nn.make_optimizer({"p": torch.zeros(2)}, "sgd")

    def test_step_counter_advances(self):
        params = {"p": torch.zeros(2)}
        state = nn.make_optimizer(params, "adam")
        nn.optimizer_step(state, params, {"p": torch.ones(2)})
        nn.optimizer_step(state, params, {"p": torch.ones(2)})
        assert state.step == 2


class TestGradCheck:
    def test_quadratic_has_exact_gradient(self):
        params = {"p": torch.as_tensor(np.random.default_rng(10).normal(size=6))}

        def fn(p):
            return (p["p"] ** 2).sum()

        assert nn.grad_check(fn, params, eps=1e-6) < 1e-8

    def test_detects_wrong_gradient(self):
        params = {"p": torch.ones(3, dtype=torch.float64)}

        def fn(p):
            return (p["p"] ** 2).sum()

        wrong = {"p": torch.full((3,), 5.0, dtype=torch.float64)}
        assert nn.grad_check(fn, params, eps=1e-6, analytic=wrong) > 0.5


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        params = {
            "a.w": torch.as_tensor(rng.normal(size=(3, 4)).astype(np.float32)),
            "a.b": torch.as_tensor(rng.normal(size=4).astype(np.float32)),
            "scalarish": torch.as_tensor(rng.normal(size=(1,)).astype(np.float32)),
        }
        p = tmp_path / "m.lsck"
        nn.save_checkpoint(p, params)
        back = nn.load_checkpoint(p)
        assert set(back) == set(params)
        for k in params:
            np.testing.assert_array_equal(back[k].numpy(), params[k].numpy())

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.lsck"
        p.write_bytes(b"JUNK" + b"\x00" * 20)
        with pytest.raises(BadMagic):
            nn.load_checkpoint(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.lsck"
        nn.save_checkpoint(p, {"w": torch.zeros(8, 8)})
        p.write_bytes(p.read_bytes()[:-16])
        with pytest.raises(TruncatedFile):
            nn.load_checkpoint(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "v.lsck"
        nn.save_checkpoint(p, {"w": torch.zeros(2)})
        raw = bytearray(p.read_bytes())
        raw[4] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionUnsupported):
            nn.load_checkpoint(p)
