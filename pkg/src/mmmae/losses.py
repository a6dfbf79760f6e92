"""Reconstruction targets and the summed per-modality MSE objective.

Image and depth targets are standardized per patch (zero mean, unit
population variance, eps in the denominator); point targets are group
center-relative and max-norm scaled via the same normalization the grouping
step applies, so re-normalizing here is idempotent.
"""

from dataclasses import dataclass

import torch

from .decoder import Reconstruction
from .masking import MaskedViews
from .tokenizer import MODALITIES

EPS = 1e-6

TARGET_MODES = ("standardize", "unit_norm")


@dataclass
class LossBreakdown:
    """Per-modality MSE terms and their sum. Empty modalities contribute 0."""

    rgb_term: torch.Tensor
    depth_term: torch.Tensor
    pc_term: torch.Tensor
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {
            "rgb": float(self.rgb_term),
            "depth": float(self.depth_term),
            "pc": float(self.pc_term),
            "total": float(self.total),
        }


def standardize_rows(rows: torch.Tensor) -> torch.Tensor:
    """Zero-mean, unit-variance per row (population variance, eps-guarded)."""
    if rows.shape[0] == 0:
        return rows
    mean = rows.mean(dim=-1, keepdim=True)
    var = rows.var(dim=-1, unbiased=False, keepdim=True)
    return (rows - mean) / torch.sqrt(var + EPS)


def unit_norm_rows(rows: torch.Tensor) -> torch.Tensor:
    """Alternative literal reading: scale each row to unit L2 norm."""
    return rows / (rows.norm(dim=-1, keepdim=True) + EPS)


def normalize_group_targets(members: torch.Tensor) -> torch.Tensor:
    """Center-relative, max-norm scaled group members (idempotent)."""
    pts = members.reshape(members.shape[0], members.shape[-1] // 3 if members.ndim == 2 else members.shape[1], 3)
    norms = pts.norm(dim=-1)
    scale = norms.max(dim=-1, keepdim=True).values
    scale = torch.where(scale > 0, scale, torch.ones_like(scale))
    return pts / scale.unsqueeze(-1)


def normalize_targets(views: dict[str, MaskedViews], mode: str = "standardize") -> dict[str, torch.Tensor]:
    """Turn each modality's hidden raw contents into loss targets."""
    if mode not in TARGET_MODES:
        raise ValueError(f"unknown target mode {mode!r}; choose from {TARGET_MODES}")
    image_norm = standardize_rows if mode == "standardize" else unit_norm_rows
    return {
        "rgb": image_norm(views["rgb"].hidden_targets),
        "depth": image_norm(views["depth"].hidden_targets),
        "pc": normalize_group_targets(views["pc"].hidden_targets),
    }


def mae_loss(pred: Reconstruction, targets: dict[str, torch.Tensor]) -> LossBreakdown:
    """Mean squared error over each modality's masked entries, summed.

    A modality with zero masked tokens contributes exactly 0. The gradient
    of each term w.r.t. its predictions is 2*(pred - target)/count.
    """
    terms = {}
    for mod in MODALITIES:
        p = pred.term(mod)
        t = targets[mod]
        if p.shape != t.shape:
            raise RuntimeError(f"{mod} prediction shape {tuple(p.shape)} != target {tuple(t.shape)}")
        if p.numel() == 0:
            terms[mod] = p.sum()  # exact 0 of the right dtype, keeps the graph
        else:
            terms[mod] = ((p - t) ** 2).mean()
    total = terms["rgb"] + terms["depth"] + terms["pc"]
    return LossBreakdown(rgb_term=terms["rgb"], depth_term=terms["depth"], pc_term=terms["pc"], total=total)
