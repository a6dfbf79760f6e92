"""Deterministic training loop: AdamW, warmup+cosine schedule, gradient clipping.

Every source of randomness (batch order, mask plans, augmentation) is a pure
function of (seed, step), so a run is bit-reproducible from its seed and a
resumed run continues exactly where the uninterrupted one would be.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckpt
from . import geometry
from .distill import AlignmentProjectors, AlignmentSpec, distill_step, select_alignment_layers
from .errors import ConfigurationError, TrainingAborted
from .masking import materialize_masks, sample_allocation
from .model import ModelConfig, MultiModalMAE, PreparedSample, build_model, prepare_sample
from .synthdata import color_jitter

LOG_COLUMNS = ("step", "lr", "rgb", "depth", "pc", "align", "total")


@dataclass(frozen=True)
class TrainingConfig:
    total_steps: int
    warmup_steps: int = 500
    peak_lr: float = 3e-4
    min_lr: float = 3e-6
    weight_decay: float = 0.01
    grad_clip_norm: float = 0.1
    batch_size: int = 2
    budget: int = 96  # visible tokens across modalities; 60 is the distillation default
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    ckpt_every: int = 0  # 0 = final checkpoint only
    augment: bool = False
    jitter: tuple[float, float, float, float] = (0.1, 0.1, 0.1, 0.05)
    smooth_l1_delta: float = 1.0

    def __post_init__(self):
        if not (0 <= self.warmup_steps < self.total_steps):
            raise ConfigurationError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}"
            )
        if self.grad_clip_norm <= 0:
            raise ConfigurationError("grad_clip_norm must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.budget < 1:
            raise ConfigurationError("budget must be >= 1")


def lr_at(step: int, cfg: TrainingConfig) -> float:
    """Linear 0 -> peak over warmup_steps, then cosine peak -> min_lr."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    t = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * t))


@dataclass
class AdamState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, torch.Tensor]) -> "AdamState":
        return cls(
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds it.

    Returns the pre-clip norm. Scaling happens in place.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = torch.sqrt(sum((g.to(torch.float64) ** 2).sum() for g in grads.values()))
    norm = float(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g.mul_(scale)
    return norm


def adamw_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Decoupled-weight-decay Adam update, in place.

    p <- p * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected
    first/second moments. Aborts with the parameter name on non-finite grads.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if not torch.isfinite(g).all():
                raise TrainingAborted(f"non-finite gradient in parameter {name!r} at optimizer step {t}")
            m = state.m[name]
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            if weight_decay != 0.0:
                p.mul_(1 - lr * weight_decay)
            p.addcdiv_(m_hat, v_hat.sqrt().add_(eps), value=-lr)
    return state


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Indices for 1-based step `step`: seeded shuffled epochs, chunked."""
    per_epoch = math.ceil(n / batch_size)
    epoch, slot = divmod(step - 1, per_epoch)
    perm = np.random.default_rng([seed, 11, epoch]).permutation(n)
    return perm[slot * batch_size : (slot + 1) * batch_size]


def mask_rng(seed: int, step: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, 13, step, slot])


def augment_rng(seed: int, step: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, 17, step, slot])


def format_row(values: dict[str, float | int]) -> str:
    return ",".join(repr(values[c]) for c in LOG_COLUMNS)


class SampleCache:
    """Per-sample point grouping cache; groups depend only on the cloud."""

    def __init__(self, model_cfg: ModelConfig):
        self.cfg = model_cfg
        self._groups: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def prepare(self, sample, rng: Optional[np.random.Generator], jitter) -> PreparedSample:
        if sample.id not in self._groups:
            idx = geometry.farthest_point_sampling(sample.cloud, self.cfg.n_groups)
            self._groups[sample.id] = geometry.group_arrays(
                geometry.knn_group(sample.cloud, idx, self.cfg.group_size - 1)
            )
        rgb = sample.rgb
        if rng is not None:
            rgb = color_jitter(rgb, rng, *jitter)
        return prepare_sample(rgb, sample.depth, sample.cloud, self.cfg, groups=self._groups[sample.id])


@dataclass
class TrainOutcome:
    checkpoint_path: Path
    csv_path: Path
    final_step: int
    last_losses: dict[str, float] = field(default_factory=dict)


def collect_params(model: MultiModalMAE, projectors: Optional[AlignmentProjectors]) -> dict[str, torch.Tensor]:
    params = {f"model.{k}": p for k, p in model.named_parameters()}
    if projectors is not None:
        params.update({f"proj.{k}": p for k, p in projectors.named_parameters()})
    return params


def state_tensors(params: dict[str, torch.Tensor], state: AdamState) -> dict[str, np.ndarray]:
    out = {}
    for k, p in params.items():
        out[k] = p.detach().numpy().astype(np.float32)
        out[f"opt.m.{k}"] = state.m[k].numpy().astype(np.float32)
        out[f"opt.v.{k}"] = state.v[k].numpy().astype(np.float32)
    return out


def load_state(
    tensors: dict[str, np.ndarray], params: dict[str, torch.Tensor], state: AdamState
) -> None:
    missing = [k for k in params if k not in tensors]
    if missing:
        raise ConfigurationError(f"checkpoint is missing parameters: {missing[:5]} ...")
    with torch.no_grad():
        for k, p in params.items():
            p.copy_(torch.from_numpy(tensors[k]))
            state.m[k].copy_(torch.from_numpy(tensors[f"opt.m.{k}"]))
            state.v[k].copy_(torch.from_numpy(tensors[f"opt.v.{k}"]))


def _rewrite_log(csv_path: Path, keep_up_to: int) -> list[str]:
    """Drop CSV rows past the resume step; returns the kept lines."""
    if not csv_path.exists():
        return [",".join(LOG_COLUMNS)]
    lines = csv_path.read_text().splitlines()
    kept = [lines[0]] if lines else [",".join(LOG_COLUMNS)]
    for line in lines[1:]:
        if line and int(line.split(",", 1)[0]) <= keep_up_to:
            kept.append(line)
    return kept


def train(
    model_cfg: ModelConfig,
    cfg: TrainingConfig,
    dataset,
    out_dir: str | Path,
    mode: str = "pretrain",
    teacher: Optional[MultiModalMAE] = None,
    resume: bool = False,
    config_text: str = "",
) -> TrainOutcome:
    """Run pre-training or distillation to cfg.total_steps.

    dataset: indexable collection of samples with .id/.rgb/.depth/.cloud.
    Writes <out>/checkpoint.bin (and step checkpoints at the configured
    cadence) plus an append-only <out>/loss.csv.
    """
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    if mode not in ("pretrain", "distill"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if mode == "distill" and teacher is None:
        raise ConfigurationError("distill mode needs a teacher model")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.bin"
    csv_path = out / "loss.csv"

    model = build_model(model_cfg, seed=cfg.seed)
    projectors = None
    spec = None
    if mode == "distill":
        teacher.eval()
        teacher.requires_grad_(False)
        pairs = select_alignment_layers(teacher.cfg.encoder.depth, model_cfg.encoder.depth)
        spec = AlignmentSpec(pairs=pairs, beta=cfg.beta)
        projectors = AlignmentProjectors(
            spec, model_cfg.encoder.dim, teacher.cfg.encoder.dim, seed=cfg.seed + 23
        )

    params = collect_params(model, projectors)
    state = AdamState.fresh(params)
    start_step = 0
    if resume:
        tensors, meta = ckpt.load(ckpt_path)
        if meta.get("config") != config_text:
            raise ConfigurationError("resume config does not match the checkpoint's config snapshot")
        load_state(tensors, params, state)
        start_step = int(meta["step"])
        state.step = start_step
        log_lines = _rewrite_log(csv_path, start_step)
    else:
        log_lines = [",".join(LOG_COLUMNS)]
    csv_path.write_text("\n".join(log_lines) + "\n")

    cache = SampleCache(model_cfg)
    sizes = model_cfg.sizes
    last_good_step = start_step if resume else None
    last_losses: dict[str, float] = {}

    def save_checkpoint(path: Path, step: int) -> None:
        meta = {
            "format": "trainer-state",
            "step": step,
            "mode": mode,
            "seed": cfg.seed,
            "config": config_text,
            "rng": {"scheme": "stateless", "seed": cfg.seed, "step": step},
        }
        ckpt.save(path, state_tensors(params, state), meta)

    with open(csv_path, "a") as log:
        for step in range(start_step + 1, cfg.total_steps + 1):
            lr = lr_at(step, cfg)
            idx = batch_indices(cfg.seed, step, len(dataset), cfg.batch_size)

            totals, terms = [], {"rgb": [], "depth": [], "pc": [], "align": []}
            for slot, j in enumerate(idx):
                sample = dataset[int(j)]
                arng = augment_rng(cfg.seed, step, slot) if cfg.augment else None
                prep = cache.prepare(sample, arng, cfg.jitter)
                rng = mask_rng(cfg.seed, step, slot)
                plan = materialize_masks(sample_allocation(cfg.alpha, cfg.budget, sizes, rng), rng)

                if mode == "pretrain":
                    result = model.forward_sample(prep, plan)
                    totals.append(result.loss.total)
                    align_val = torch.zeros(())
                    breakdown = result.loss
                else:
                    dres = distill_step(
                        teacher, model, prep, plan, spec, projectors, delta=cfg.smooth_l1_delta
                    )
                    totals.append(dres.total)
                    align_val = dres.align
                    breakdown = dres.mae
                terms["rgb"].append(breakdown.rgb_term)
                terms["depth"].append(breakdown.depth_term)
                terms["pc"].append(breakdown.pc_term)
                terms["align"].append(align_val)

            batch_total = torch.stack(totals).mean()
            if not torch.isfinite(batch_total):
                raise TrainingAborted(
                    f"non-finite loss at step {step}; last good checkpoint at step {last_good_step}"
                )

            model.zero_grad(set_to_none=True)
            if projectors is not None:
                projectors.zero_grad(set_to_none=True)
            batch_total.backward()
            grads = {
                k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in params.items()
            }
            clip_grad_norm(grads, cfg.grad_clip_norm)
            adamw_step(params, grads, state, lr, cfg.weight_decay, cfg.betas, cfg.eps)

            last_losses = {
                "step": step,
                "lr": lr,
                "rgb": float(torch.stack(terms["rgb"]).detach().mean()),
                "depth": float(torch.stack(terms["depth"]).detach().mean()),
                "pc": float(torch.stack(terms["pc"]).detach().mean()),
                "align": float(torch.stack(terms["align"]).detach().mean()),
                "total": float(batch_total.detach()),
            }
            log.write(format_row(last_losses) + "\n")
            log.flush()

            if cfg.ckpt_every > 0 and step % cfg.ckpt_every == 0 and step < cfg.total_steps:
                save_checkpoint(out / f"checkpoint_step{step:06d}.bin", step)
                last_good_step = step

    save_checkpoint(ckpt_path, cfg.total_steps)
    return TrainOutcome(
        checkpoint_path=ckpt_path,
        csv_path=csv_path,
        final_step=cfg.total_steps,
        last_losses=last_losses,
    )
