"""Cross-modal reconstruction experiments on a trained checkpoint.

Three masking modes probe what the model can infer:
  two-masked   two modalities nearly fully masked, one major infer source
  cross-modal  one modality fully visible, the others fully hidden
  recolor      depth-to-RGB prediction with a few visible RGB patches whose
               colors were deliberately altered before encoding
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import geometry
from .errors import ConfigurationError
from .masking import MaskPlan, materialize_masks, plan_from_counts
from .model import ForwardResult, ModelConfig, MultiModalMAE, prepare_sample
from .tokenizer import MODALITIES, flatten_patches, unflatten_patches

MODES = ("two-masked", "cross-modal", "recolor")


def plan_for_mode(
    mode: str, source: str, sizes: tuple[int, int, int], budget: int, rng: np.random.Generator
) -> MaskPlan:
    """Deterministic counts for a probe mode; positions drawn from rng."""
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; choose from {MODES}")
    if source not in MODALITIES:
        raise ConfigurationError(f"unknown source modality {source!r}")
    src = MODALITIES.index(source)
    counts = [0, 0, 0]
    if mode == "cross-modal":
        counts[src] = budget
    elif mode == "two-masked":
        keep = 2 if budget >= 12 else 1  # a couple of stray tokens per hidden modality
        counts = [keep, keep, keep]
        counts[src] = budget - 2 * keep
    else:  # recolor: depth carries the budget, a few rgb patches stay visible
        if source != "depth":
            raise ConfigurationError("recolor mode predicts RGB from depth; use --source depth")
        visible_rgb = min(4, max(1, sizes[0] // 2))
        counts = [visible_rgb, budget - visible_rgb, 0]
    if any(c < 0 for c in counts):
        raise ConfigurationError(f"budget {budget} too small for mode {mode!r}")
    for c, l, mod in zip(counts, sizes, MODALITIES):
        if c > l:
            raise ConfigurationError(
                f"mode {mode!r} needs {c} visible {mod} tokens but the model only has {l}"
            )
    if sum(counts) != budget:
        raise ConfigurationError(f"mode counts {counts} do not meet the visible budget {budget}")
    plan = plan_from_counts(tuple(counts), sizes, budget)
    return materialize_masks(plan, rng)


def recolor_patches(rgb: torch.Tensor, patch_idx: np.ndarray, patch: int, grid: int) -> torch.Tensor:
    """Cycle the color channels of the given patches (the altered-patch probe)."""
    out = rgb.clone()
    for p in patch_idx:
        r, c = divmod(int(p), grid)
        block = out[:, r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
        out[:, r * patch : (r + 1) * patch, c * patch : (c + 1) * patch] = block.roll(1, dims=0)
    return out


@dataclass
class ProbeOutput:
    plan: MaskPlan
    result: ForwardResult
    metrics: dict[str, float]
    panels: dict[str, np.ndarray]  # modality -> (3, H, 3W) input|masked|predicted grid
    pred_points: np.ndarray  # (n, 3) predicted masked-group points, absolute frame


def _destandardize(pred_rows: torch.Tensor, raw_rows: torch.Tensor) -> torch.Tensor:
    """Map standardized predictions back to pixel space using the true patch
    statistics (visualization aid only)."""
    mean = raw_rows.mean(dim=-1, keepdim=True)
    var = raw_rows.var(dim=-1, unbiased=False, keepdim=True)
    return pred_rows * torch.sqrt(var + 1e-6) + mean


def _image_panels(img: torch.Tensor, mask: np.ndarray, pred_rows, patch: int, grid: int) -> np.ndarray:
    raw = flatten_patches(img, patch)
    masked = raw.clone()
    masked[torch.from_numpy(np.nonzero(mask == 0)[0])] = 0.5
    pred_img = raw.clone()
    hidden = np.nonzero(mask == 0)[0]
    if len(hidden) > 0:
        hid_t = torch.from_numpy(hidden)
        pred_img[hid_t] = _destandardize(pred_rows, raw[hid_t])
    c = img.shape[0]
    panels = [
        unflatten_patches(rows, c, patch, grid, grid).clamp(0, 1).numpy()
        for rows in (raw, masked, pred_img)
    ]
    rgbified = [np.repeat(p, 3, axis=0) if p.shape[0] == 1 else p for p in panels]
    return np.concatenate(rgbified, axis=2).astype(np.float32)


def run_probe(
    model: MultiModalMAE,
    sample,
    cfg: ModelConfig,
    mode: str,
    source: str,
    budget: int,
    seed: int = 0,
) -> ProbeOutput:
    rng = np.random.default_rng([seed, 41])
    plan = plan_for_mode(mode, source, cfg.sizes, budget, rng)

    prep = prepare_sample(sample.rgb, sample.depth, sample.cloud, cfg)
    if mode == "recolor":
        prep.rgb = recolor_patches(
            prep.rgb, np.nonzero(plan.masks["rgb"])[0], cfg.patch, cfg.image_size // cfg.patch
        )

    with torch.no_grad():
        result = model.forward_sample(prep, plan)

    for mod in MODALITIES:
        if not torch.isfinite(result.pred.term(mod)).all():
            raise RuntimeError(f"non-finite {mod} reconstruction in mode {mode!r}")

    grid = cfg.image_size // cfg.patch
    panels = {
        "rgb": _image_panels(prep.rgb, plan.masks["rgb"], result.pred.rgb, cfg.patch, grid),
        "depth": _image_panels(prep.depth, plan.masks["depth"], result.pred.depth, cfg.patch, grid),
    }

    # Predicted groups re-posed with the true centers and scales (viz aid).
    idx = geometry.farthest_point_sampling(sample.cloud, cfg.n_groups)
    groups = geometry.knn_group(sample.cloud, idx, cfg.group_size - 1)
    hidden_pc = np.nonzero(plan.masks["pc"] == 0)[0]
    pts = []
    for row, gi in enumerate(hidden_pc):
        g = groups[int(gi)]
        pred_members = result.pred.pc[row].numpy()
        pts.append(g.center[None] + pred_members * g.scale)
    pred_points = np.concatenate(pts, axis=0) if pts else np.zeros((0, 3))

    return ProbeOutput(
        plan=plan,
        result=result,
        metrics={m: float(result.loss.floats()[m]) for m in ("rgb", "depth", "pc", "total")},
        panels=panels,
        pred_points=pred_points,
    )


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a (3, H, W) float [0,1] image as binary PPM (P6)."""
    arr = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    h, w = arr.shape[1], arr.shape[2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.transpose(1, 2, 0).tobytes())


def write_xyz(path: str | Path, points: np.ndarray) -> None:
    with open(path, "w") as f:
        for x, y, z in np.asarray(points, dtype=np.float64):
            f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
