import numpy as np
import pytest
import torch

from mmmae.masking import materialize_masks, plan_from_counts, sample_allocation
from mmmae.model import MICRO_MODEL, build_model, prepare_sample
from mmmae.synthdata import random_scene, render


@pytest.fixture(scope="session")
def micro_sample():
    return render(random_scene(7, image_size=32, n_points=96))


@pytest.fixture(scope="session")
def micro_prep(micro_sample):
    return prepare_sample(micro_sample.rgb, micro_sample.depth, micro_sample.cloud, MICRO_MODEL)


@pytest.fixture()
def micro_model():
    return build_model(MICRO_MODEL, seed=0)


def micro_plan(counts=(2, 2, 2), seed=0):
    plan = plan_from_counts(counts, MICRO_MODEL.sizes, sum(counts))
    return materialize_masks(plan, np.random.default_rng(seed))


def random_plan(budget=6, seed=0, alpha=1.0):
    rng = np.random.default_rng(seed)
    return materialize_masks(sample_allocation(alpha, budget, MICRO_MODEL.sizes, rng), rng)
