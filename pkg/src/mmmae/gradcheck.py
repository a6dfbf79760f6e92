"""Finite-difference verification of the analytic gradients.

Runs the full training objective (reconstruction + distillation alignment)
on a micro model in float64 and compares autograd's gradients against
central differences at sampled coordinates of every parameter tensor.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .distill import AlignmentProjectors, AlignmentSpec, distill_step, select_alignment_layers
from .masking import materialize_masks, sample_allocation
from .model import MICRO_MODEL, ModelConfig, build_model, prepare_sample
from .synthdata import random_scene, render

FD_STEP = 1e-4
TOLERANCE = 1e-3


@dataclass
class GradLog:
    per_group: dict[str, float]  # parameter name -> max relative error
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _rel_err(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < 1e-9:  # both effectively zero
        return 0.0
    return abs(analytic - numeric) / scale


def micro_batch(cfg: ModelConfig, seed: int = 0, dtype=torch.float64):
    """One prepared sample + mask plan at micro scale (<= 24 tokens total)."""
    scene = random_scene(seed, image_size=cfg.image_size, n_points=96)
    sample = render(scene)
    prep = prepare_sample(
        sample.rgb.astype(np.float64),
        sample.depth.astype(np.float64),
        sample.cloud.astype(np.float64),
        cfg,
        dtype=dtype,
    )
    rng = np.random.default_rng([seed, 13])
    plan = materialize_masks(sample_allocation(1.0, 6, cfg.sizes, rng), rng)
    return prep, plan


def run_gradcheck(
    seed: int = 0,
    coords_per_tensor: int = 6,
    step: float = FD_STEP,
    beta: float = 1.0,
) -> GradLog:
    """Check d(loss)/d(theta) for every student and projector tensor.

    Teacher parameters are frozen and excluded; they must stay gradient-free,
    which distill_step guarantees by running the teacher without grad.
    """
    cfg = MICRO_MODEL
    student = build_model(cfg, seed=seed).double()
    teacher_cfg = ModelConfig(
        image_size=cfg.image_size,
        patch=cfg.patch,
        n_groups=cfg.n_groups,
        group_size=cfg.group_size,
        encoder=type(cfg.encoder)(dim=24, depth=3, heads=2),
        decoder=cfg.decoder,
    )
    teacher = build_model(teacher_cfg, seed=seed + 1).double()
    teacher.requires_grad_(False).eval()

    spec = AlignmentSpec(
        pairs=select_alignment_layers(teacher_cfg.encoder.depth, cfg.encoder.depth), beta=beta
    )
    projectors = AlignmentProjectors(spec, cfg.encoder.dim, teacher_cfg.encoder.dim, seed=seed + 2).double()

    prep, plan = micro_batch(cfg, seed=seed)

    def loss_value() -> torch.Tensor:
        return distill_step(teacher, student, prep, plan, spec, projectors).total

    params = {f"model.{k}": p for k, p in student.named_parameters()}
    params.update({f"proj.{k}": p for k, p in projectors.named_parameters()})

    student.zero_grad(set_to_none=True)
    projectors.zero_grad(set_to_none=True)
    loss_value().backward()
    analytic = {k: (p.grad.clone() if p.grad is not None else torch.zeros_like(p)) for k, p in params.items()}

    rng = np.random.default_rng([seed, 29])
    per_group: dict[str, float] = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            n = flat.numel()
            picks = rng.choice(n, size=min(coords_per_tensor, n), replace=False)
            worst = 0.0
            for i in picks:
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_value().item()
                flat[i] = orig - step
                down = loss_value().item()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                worst = max(worst, _rel_err(analytic[name].view(-1)[i].item(), numeric))
            per_group[name] = worst
    return GradLog(per_group=per_group, max_rel_err=max(per_group.values()))
