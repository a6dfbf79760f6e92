import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mmmae.decoder import Reconstruction
from mmmae.losses import (
    mae_loss,
    normalize_group_targets,
    normalize_targets,
    standardize_rows,
    unit_norm_rows,
)
from mmmae.masking import MaskedViews


def views_with(raw_rgb, raw_depth, raw_pc):
    def mk(raw, mod):
        n = raw.shape[0]
        return MaskedViews(
            visible_tokens=torch.zeros(0, 2),
            visible_pos=torch.zeros(0, 2),
            hidden_targets=raw,
            visible_idx=np.arange(0),
            hidden_idx=np.arange(n),
            modality=mod,
        )

    return {"rgb": mk(raw_rgb, "rgb"), "depth": mk(raw_depth, "depth"), "pc": mk(raw_pc, "pc")}


class TestNormalizeTargets:
    def test_constant_patch_goes_to_zero(self):
        rows = torch.full((3, 8), 0.7)
        out = standardize_rows(rows)
        assert out.abs().max() < 1e-3

    def test_two_point_patch(self):
        rows = torch.tensor([[0.0, 1.0, 0.0, 1.0]])
        out = standardize_rows(rows)
        # eps in the denominator pulls the values in by ~2e-6
        torch.testing.assert_close(out, torch.tensor([[-1.0, 1.0, -1.0, 1.0]]), atol=5e-6, rtol=0)

    def test_moment_oracle_on_random_patches(self):
        rows = torch.rand(50, 768, dtype=torch.float64)
        out = standardize_rows(rows)
        assert out.mean(dim=1).abs().max() < 1e-6
        var = out.var(dim=1, unbiased=False)
        assert ((var > 1 - 1e-3) & (var < 1 + 1e-3)).all()

    def test_unit_norm_mode(self):
        rows = torch.randn(10, 32, dtype=torch.float64)
        out = unit_norm_rows(rows)
        torch.testing.assert_close(out.norm(dim=1), torch.ones(10, dtype=torch.float64), atol=1e-4, rtol=0)

    def test_group_targets_idempotent_on_normalized_members(self):
        raw = torch.randn(6, 5, 3, dtype=torch.float64)
        normalized = normalize_group_targets(raw.reshape(6, -1))
        again = normalize_group_targets(normalized.reshape(6, -1))
        torch.testing.assert_close(again, normalized)
        max_norms = normalized.norm(dim=-1).max(dim=-1).values
        torch.testing.assert_close(max_norms, torch.ones(6, dtype=torch.float64))

    def test_mode_validation(self):
        views = views_with(torch.rand(2, 4), torch.rand(2, 4), torch.rand(2, 6))
        with pytest.raises(ValueError):
            normalize_targets(views, mode="banana")


class TestMaeLoss:
    def recon(self, rgb, depth, pc):
        return Reconstruction(rgb=rgb, depth=depth, pc=pc)

    def targets(self, rgb, depth, pc):
        return {"rgb": rgb, "depth": depth, "pc": pc}

    def test_zero_when_equal(self):
        rgb = torch.randn(3, 4)
        depth = torch.randn(2, 4)
        pc = torch.randn(2, 3, 3)
        out = mae_loss(self.recon(rgb, depth, pc), self.targets(rgb, depth, pc))
        assert float(out.total) == 0.0

    def test_constant_offset_gives_one_per_modality(self):
        rgb = torch.zeros(3, 4)
        depth = torch.zeros(2, 4)
        pc = torch.zeros(2, 3, 3)
        pred = self.recon(rgb + 1, depth + 1, pc + 1)
        out = mae_loss(pred, self.targets(rgb, depth, pc))
        assert float(out.rgb_term) == 1.0
        assert float(out.depth_term) == 1.0
        assert float(out.pc_term) == 1.0
        assert float(out.total) == 3.0

    def test_hand_computed_example(self):
        pred = torch.tensor([[0.5, -1.0, 2.0], [0.0, 1.0, -1.0]], dtype=torch.float64)
        tgt = torch.tensor([[0.0, 0.5, 1.0], [1.0, 1.0, 0.0]], dtype=torch.float64)
        empty_pc = torch.zeros(0, 2, 3, dtype=torch.float64)
        out = mae_loss(
            self.recon(pred, torch.zeros(0, 3, dtype=torch.float64), empty_pc),
            self.targets(tgt, torch.zeros(0, 3, dtype=torch.float64), empty_pc),
        )
        assert float(out.rgb_term) == pytest.approx(0.9166666666666666, abs=1e-12)
        assert float(out.depth_term) == 0.0 and float(out.pc_term) == 0.0

    def test_empty_modalities_contribute_zero(self):
        empty = self.recon(torch.zeros(0, 4), torch.zeros(0, 4), torch.zeros(0, 2, 3))
        out = mae_loss(empty, self.targets(torch.zeros(0, 4), torch.zeros(0, 4), torch.zeros(0, 2, 3)))
        assert float(out.total) == 0.0

    @given(st.integers(min_value=1, max_value=30))
    @settings(max_examples=30, deadline=None)
    def test_row_permutation_invariance(self, seed):
        g = torch.Generator().manual_seed(seed)
        rgb = torch.randn(5, 4, generator=g, dtype=torch.float64)
        tgt = torch.randn(5, 4, generator=g, dtype=torch.float64)
        perm = torch.randperm(5, generator=g)
        zero_d = torch.zeros(0, 4, dtype=torch.float64)
        zero_p = torch.zeros(0, 2, 3, dtype=torch.float64)
        a = mae_loss(self.recon(rgb, zero_d, zero_p), self.targets(tgt, zero_d, zero_p))
        b = mae_loss(self.recon(rgb[perm], zero_d, zero_p), self.targets(tgt[perm], zero_d, zero_p))
        assert float(a.rgb_term) == pytest.approx(float(b.rgb_term), rel=1e-12)

    def test_total_is_sum_of_terms(self):
        g = torch.Generator().manual_seed(1)
        k = dict(generator=g, dtype=torch.float64)
        pred = self.recon(torch.randn(2, 4, **k), torch.randn(3, 4, **k), torch.randn(1, 2, 3, **k))
        tgt = self.targets(torch.randn(2, 4, **k), torch.randn(3, 4, **k), torch.randn(1, 2, 3, **k))
        out = mae_loss(pred, tgt)
        assert float(out.total) == pytest.approx(
            float(out.rgb_term) + float(out.depth_term) + float(out.pc_term), abs=1e-9
        )

    def test_gradient_is_two_over_count_times_residual(self):
        pred_rgb = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
        tgt = torch.randn(3, 5, dtype=torch.float64)
        zero_d = torch.zeros(0, 3, dtype=torch.float64)
        zero_p = torch.zeros(0, 2, 3, dtype=torch.float64)
        out = mae_loss(self.recon(pred_rgb, zero_d, zero_p), self.targets(tgt, zero_d, zero_p))
        out.total.backward()
        expect = 2 * (pred_rgb.detach() - tgt) / pred_rgb.numel()
        torch.testing.assert_close(pred_rgb.grad, expect)

    def test_shape_mismatch_is_internal_error(self):
        with pytest.raises(RuntimeError):
            mae_loss(
                self.recon(torch.zeros(2, 4), torch.zeros(0, 4), torch.zeros(0, 2, 3)),
                self.targets(torch.zeros(2, 5), torch.zeros(0, 4), torch.zeros(0, 2, 3)),
            )
