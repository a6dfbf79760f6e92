import numpy as np
import pytest
import torch

from mmmae.errors import ConfigurationError
from mmmae.tokenizer import (
    ImagePatchifier,
    PointGroupEncoder,
    flatten_patches,
    normalize_depth,
    sincos_pos_2d,
    unflatten_patches,
)

# Scalar re-implementation of the embedding formula at dim=8, position (1, 2).
SINCOS_8_AT_1_2 = [
    0.8414709848078965, 0.009999833334166664, 0.5403023058681398, 0.9999500004166653,
    0.9092974268256817, 0.01999866669333308, -0.4161468365471424, 0.9998000066665778,
]


class TestSincos:
    def test_origin_is_sin_zero_cos_one(self):
        emb = sincos_pos_2d(3, 3, 16)
        row0 = emb[0]
        assert np.all(row0[0:4] == 0) and np.all(row0[8:12] == 0)  # sin halves
        assert np.all(row0[4:8] == 1) and np.all(row0[12:16] == 1)  # cos halves

    def test_pure_function(self):
        np.testing.assert_array_equal(sincos_pos_2d(4, 5, 12), sincos_pos_2d(4, 5, 12))

    def test_matches_scalar_oracle(self):
        emb = sincos_pos_2d(3, 4, 8)
        np.testing.assert_allclose(emb[1 * 4 + 2], SINCOS_8_AT_1_2, rtol=0, atol=1e-15)

    def test_dim_not_divisible_by_four(self):
        with pytest.raises(ConfigurationError):
            sincos_pos_2d(2, 2, 10)


class TestImagePatchifier:
    def test_l_for_224(self):
        p = ImagePatchifier(3, 224, 16, 32)
        assert p.num_tokens == 196

    def test_zero_image_zero_bias_gives_zero_tokens(self):
        p = ImagePatchifier(3, 32, 16, 8)
        with torch.no_grad():
            p.proj.bias.zero_()
        ts = p(torch.zeros(3, 32, 32), "rgb")
        assert torch.all(ts.tokens == 0)

    def test_identity_projection_recovers_hand_flattened_patches(self):
        # 2x2-patch toy image, projection = identity: tokens are the raw patches.
        patch, c = 2, 1
        p = ImagePatchifier(c, 4, patch, c * patch * patch)
        with torch.no_grad():
            p.proj.weight.copy_(torch.eye(c * patch * patch))
            p.proj.bias.zero_()
        img = torch.arange(16, dtype=torch.float32).reshape(1, 4, 4)
        ts = p(img, "depth")
        hand = torch.tensor(
            [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]], dtype=torch.float32
        )
        torch.testing.assert_close(ts.tokens, hand)
        torch.testing.assert_close(ts.raw, hand)

    def test_flatten_unflatten_round_trip(self):
        img = torch.randn(3, 32, 48)
        rows = flatten_patches(img, 16)
        back = unflatten_patches(rows, 3, 16, 2, 3)
        torch.testing.assert_close(back, img)

    def test_shift_by_one_patch_permutes_tokens(self):
        p = ImagePatchifier(3, 64, 16, 24)
        img = torch.randn(3, 64, 64)
        shifted = torch.roll(img, shifts=-16, dims=2)
        t0 = p(img, "rgb").tokens.reshape(4, 4, -1)
        t1 = p(shifted, "rgb").tokens.reshape(4, 4, -1)
        torch.testing.assert_close(t1[:, :3], t0[:, 1:])

    def test_non_divisible_raises(self):
        with pytest.raises(ConfigurationError):
            ImagePatchifier(3, 30, 16, 8)

    def test_tokens_are_per_patch_local(self):
        p = ImagePatchifier(1, 32, 16, 8)
        img = torch.randn(1, 32, 32)
        other = img.clone()
        other[:, 16:, 16:] = 0  # poke patch 3 only
        t0 = p(img, "depth").tokens
        t1 = p(other, "depth").tokens
        torch.testing.assert_close(t0[:3], t1[:3])
        assert not torch.allclose(t0[3], t1[3])


class TestPointGroupEncoder:
    def test_member_permutation_invariance(self):
        enc = PointGroupEncoder(16)
        members = torch.randn(5, 8, 3)
        centers = torch.randn(5, 3)
        base = enc(members, centers).tokens
        g = torch.Generator().manual_seed(0)
        for _ in range(4):
            perm = torch.randperm(8, generator=g)
            torch.testing.assert_close(enc(members[:, perm], centers).tokens, base)

    def test_zero_groups_identical_tokens(self):
        enc = PointGroupEncoder(12)
        ts = enc(torch.zeros(4, 6, 3), torch.zeros(4, 3))
        for row in ts.tokens[1:]:
            torch.testing.assert_close(row, ts.tokens[0])

    def test_hand_computed_single_layer_max(self):
        # 1-layer point MLP (no hidden widths): token = max over points of W p + b.
        enc = PointGroupEncoder(2, hidden=())
        with torch.no_grad():
            enc.point_mlp[0].weight.copy_(torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, -1.0]]))
            enc.point_mlp[0].bias.copy_(torch.tensor([0.5, -0.5]))
        members = torch.tensor([[[1.0, 2.0, 3.0], [4.0, -1.0, 0.0]]])
        ts = enc(members, torch.zeros(1, 3))
        # point 1 -> (1.5, -1.5); point 2 -> (4.5, -1.5); elementwise max (4.5, -1.5)
        torch.testing.assert_close(ts.tokens, torch.tensor([[4.5, -1.5]]))

    def test_pos_comes_from_center_mlp(self):
        enc = PointGroupEncoder(8)
        members = torch.randn(3, 4, 3)
        centers = torch.randn(3, 3)
        ts = enc(members, centers)
        torch.testing.assert_close(ts.pos, enc.center_mlp(centers))

    def test_ragged_groups_rejected(self):
        enc = PointGroupEncoder(8)
        with pytest.raises(ValueError):
            enc(torch.randn(3, 4), torch.randn(3, 3))


class TestDepthNormalization:
    def test_clamps_and_rescales(self):
        d = np.array([[0.0, 1.0], [2.5, np.nan]])
        out = normalize_depth(d, d_max=2.0)
        np.testing.assert_allclose(out, [[0.0, 0.5], [1.0, 0.0]])

    def test_token_sets_share_dim(self):
        rgb = ImagePatchifier(3, 32, 16, 24)
        dep = ImagePatchifier(1, 32, 16, 24)
        pts = PointGroupEncoder(24)
        t1 = rgb(torch.rand(3, 32, 32), "rgb")
        t2 = dep(torch.rand(1, 32, 32), "depth")
        t3 = pts(torch.randn(4, 5, 3), torch.randn(4, 3))
        assert t1.tokens.shape[1] == t2.tokens.shape[1] == t3.tokens.shape[1] == 24
