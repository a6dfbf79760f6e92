"""Dirichlet-allocated masking under a fixed visible-token budget.

Each sample draws modality fractions (lam_rgb, lam_depth, lam_pc) from a
symmetric Dirichlet(alpha) and converts them to integer visible counts that
sum to the budget exactly. Mask bit 1 marks a visible token.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .tokenizer import MODALITIES, TokenSet


@dataclass
class MaskPlan:
    """Per-sample allocation: fractions, integer counts, and binary masks."""

    lam: np.ndarray  # (3,) fractions summing to 1
    counts: tuple[int, int, int]  # visible tokens per modality, sums to budget
    alpha: float
    budget: int
    sizes: tuple[int, int, int]  # per-modality sequence lengths
    masks: Optional[dict[str, np.ndarray]] = field(default=None)  # modality -> {0,1}^L

    def __post_init__(self):
        assert abs(float(self.lam.sum()) - 1.0) < 1e-9, "fractions must sum to 1"
        assert sum(self.counts) == self.budget, "counts must sum to the budget exactly"
        assert all(c <= l for c, l in zip(self.counts, self.sizes)), "count exceeds modality length"
        if self.masks is not None:
            for mod, c in zip(MODALITIES, self.counts):
                assert int(self.masks[mod].sum()) == c, f"popcount mismatch for {mod}"


@dataclass
class MaskedViews:
    """Complementary split of one modality's TokenSet.

    visible_* rows are in ascending original index order and feed the
    encoder; hidden_targets carries the raw patch contents at masked
    positions for the reconstruction loss.
    """

    visible_tokens: torch.Tensor  # (c, C)
    visible_pos: torch.Tensor  # (c, C)
    hidden_targets: torch.Tensor  # (L-c, D_raw)
    visible_idx: np.ndarray  # (c,)
    hidden_idx: np.ndarray  # (L-c,)
    modality: str
    visible_centers: Optional[torch.Tensor] = None  # (c, 3), pc only
    hidden_centers: Optional[torch.Tensor] = None  # (L-c, 3), pc only


def _largest_remainder(total: int, weights: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Apportion `total` over weights by largest-remainder rounding.

    Ties in the fractional parts break in modality order (rgb, depth, pc).
    Entries with cap 0 receive nothing. Weights need not be normalized.
    """
    w = weights.astype(np.float64).copy()
    w[caps == 0] = 0.0
    if w.sum() <= 0:
        w = (caps > 0).astype(np.float64)  # degenerate draw: spread uniformly
    w = w / w.sum()
    quota = total * w
    base = np.floor(quota).astype(np.int64)
    rem = total - int(base.sum())
    if rem > 0:
        frac = quota - base
        order = np.lexsort((np.arange(len(w)), -frac))  # by largest fraction, then index
        for i in order[:rem]:
            base[i] += 1
    return base


def sample_allocation(
    alpha: float, budget: int, sizes: tuple[int, int, int], rng: np.random.Generator
) -> MaskPlan:
    """Draw lam ~ Dir(alpha, alpha, alpha) and integerize to visible counts.

    Counts are the largest-remainder rounding of budget*lam; a count that
    exceeds its modality length is capped and the overflow redistributed to
    the remaining modalities proportionally to their residual fractions.
    """
    sizes_arr = np.asarray(sizes, dtype=np.int64)
    if budget > int(sizes_arr.sum()):
        raise ValueError(f"budget {budget} exceeds total tokens {int(sizes_arr.sum())}")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    lam = rng.dirichlet([alpha] * 3)

    counts = np.zeros(3, dtype=np.int64)
    remaining = budget
    active = np.ones(3, dtype=bool)
    while remaining > 0:
        caps = sizes_arr - counts
        caps[~active] = 0
        alloc = _largest_remainder(remaining, lam * active, caps)
        overflow = np.maximum(alloc - caps, 0)
        counts += np.minimum(alloc, caps)
        remaining = int(overflow.sum())
        active &= counts < sizes_arr
    assert int(counts.sum()) == budget

    return MaskPlan(
        lam=lam,
        counts=(int(counts[0]), int(counts[1]), int(counts[2])),
        alpha=alpha,
        budget=budget,
        sizes=tuple(int(s) for s in sizes),
    )


def plan_from_counts(counts: tuple[int, int, int], sizes: tuple[int, int, int], budget: int) -> MaskPlan:
    """Build a deterministic plan from explicit counts (reconstruction modes)."""
    if sum(counts) != budget:
        raise ValueError(f"counts {counts} do not sum to the budget {budget}")
    lam = np.asarray(counts, dtype=np.float64)
    lam = lam / lam.sum() if lam.sum() > 0 else np.full(3, 1.0 / 3.0)
    return MaskPlan(lam=lam, counts=tuple(counts), alpha=float("nan"), budget=budget, sizes=tuple(sizes))


def materialize_masks(plan: MaskPlan, rng: np.random.Generator) -> MaskPlan:
    """Fill the plan's binary masks: c_X visible positions chosen uniformly."""
    masks = {}
    for mod, length, count in zip(MODALITIES, plan.sizes, plan.counts):
        mask = np.zeros(length, dtype=np.uint8)
        if count > 0:
            visible = rng.choice(length, size=count, replace=False)
            mask[visible] = 1
        masks[mod] = mask
    plan.masks = masks
    plan.__post_init__()
    return plan


def split_views(tokens: TokenSet, mask: np.ndarray) -> MaskedViews:
    """Split one modality into visible tokens and hidden reconstruction targets."""
    if len(mask) != len(tokens):
        raise ValueError(f"mask length {len(mask)} != token count {len(tokens)}")
    vis_idx = np.nonzero(mask)[0]
    hid_idx = np.nonzero(mask == 0)[0]
    vis_t = torch_index(tokens.tokens, vis_idx)
    vis_p = torch_index(tokens.pos, vis_idx)
    hid_raw = torch_index(tokens.raw, hid_idx)
    vc = torch_index(tokens.centers, vis_idx) if tokens.centers is not None else None
    hc = torch_index(tokens.centers, hid_idx) if tokens.centers is not None else None
    return MaskedViews(
        visible_tokens=vis_t,
        visible_pos=vis_p,
        hidden_targets=hid_raw,
        visible_idx=vis_idx,
        hidden_idx=hid_idx,
        modality=tokens.modality,
        visible_centers=vc,
        hidden_centers=hc,
    )


def torch_index(tensor: torch.Tensor, idx: np.ndarray) -> torch.Tensor:
    """Row-select a torch tensor by a numpy index array (empty-safe)."""
    return tensor[torch.from_numpy(np.ascontiguousarray(idx, dtype=np.int64))]


def marginal_cdf(x: np.ndarray, alpha: float, grid: int = 20001) -> np.ndarray:
    """CDF of one fraction of a symmetric 3-way Dirichlet: Beta(alpha, 2*alpha).

    Evaluated by trapezoid integration of the density; for alpha = 1 this
    reduces to 1 - (1 - x)^2.
    """
    xs = np.linspace(0.0, 1.0, grid)
    a, b = alpha, 2.0 * alpha
    norm = math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))

    def power(base, expo):
        return np.ones_like(base) if expo == 0 else base**expo

    with np.errstate(divide="ignore"):
        pdf = power(xs, a - 1) * power(1 - xs, b - 1) / norm
    pdf[~np.isfinite(pdf)] = 0.0  # integrable endpoint singularities for alpha < 1
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(xs))])
    cdf = np.clip(cdf / cdf[-1], 0.0, 1.0)
    return np.interp(np.asarray(x), xs, cdf)


def ks_statistic(samples: np.ndarray, cdf_values: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a CDF.

    cdf_values must be the model CDF evaluated at the (unsorted) samples.
    """
    order = np.argsort(samples)
    f = np.asarray(cdf_values)[order]
    n = len(f)
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))
