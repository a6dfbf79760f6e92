import numpy as np
import pytest
import torch

from conftest import micro_plan, random_plan
from mmmae.errors import ConfigurationError
from mmmae.model import MICRO_MODEL, ModelConfig, build_model, prepare_sample
from mmmae.tokenizer import MODALITIES


class TestForwardSample:
    def test_loss_terms_nonnegative_and_summed(self, micro_model, micro_prep):
        out = micro_model.forward_sample(micro_prep, random_plan(seed=2))
        f = out.loss.floats()
        assert all(f[m] >= 0 for m in ("rgb", "depth", "pc"))
        assert f["total"] == pytest.approx(f["rgb"] + f["depth"] + f["pc"], rel=1e-6)

    def test_joint_has_budget_rows(self, micro_model, micro_prep):
        plan = random_plan(budget=6, seed=4)
        out = micro_model.forward_sample(micro_prep, plan)
        assert out.joint.h.shape == (6, MICRO_MODEL.encoder.dim)

    def test_deterministic_forward(self, micro_model, micro_prep):
        plan = random_plan(seed=6)
        a = micro_model.forward_sample(micro_prep, plan)
        b = micro_model.forward_sample(micro_prep, plan)
        assert float(a.loss.total) == float(b.loss.total)
        assert torch.equal(a.pred.rgb, b.pred.rgb)

    def test_same_init_seed_same_params(self):
        a = build_model(MICRO_MODEL, seed=5)
        b = build_model(MICRO_MODEL, seed=5)
        for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
            assert n1 == n2
            assert torch.equal(p1, p2)

    def test_plan_size_mismatch_rejected(self, micro_model, micro_prep):
        from mmmae.masking import materialize_masks, plan_from_counts

        bad = plan_from_counts((2, 2, 2), (8, 8, 8), 6)
        materialize_masks(bad, np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            micro_model.forward_sample(micro_prep, bad)

    def test_hidden_targets_match_raw_patches(self, micro_model, micro_prep):
        plan = micro_plan((2, 2, 2))
        tokens = micro_model.tokenize(micro_prep)
        views = micro_model.split(tokens, plan)
        for mod in MODALITIES:
            hid = views[mod].hidden_idx
            torch.testing.assert_close(views[mod].hidden_targets, tokens[mod].raw[hid])


class TestPrepare:
    def test_group_cache_argument_is_equivalent(self, micro_sample):
        from mmmae import geometry

        direct = prepare_sample(micro_sample.rgb, micro_sample.depth, micro_sample.cloud, MICRO_MODEL)
        idx = geometry.farthest_point_sampling(micro_sample.cloud, MICRO_MODEL.n_groups)
        groups = geometry.group_arrays(
            geometry.knn_group(micro_sample.cloud, idx, MICRO_MODEL.group_size - 1)
        )
        cached = prepare_sample(
            micro_sample.rgb, micro_sample.depth, micro_sample.cloud, MICRO_MODEL, groups=groups
        )
        torch.testing.assert_close(direct.members, cached.members)
        torch.testing.assert_close(direct.centers, cached.centers)

    def test_depth_normalized_to_unit_range(self, micro_prep):
        assert micro_prep.depth.min() >= 0.0 and micro_prep.depth.max() <= 1.0
