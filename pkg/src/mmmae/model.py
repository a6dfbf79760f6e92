"""The full masked autoencoder: modal tokenizers, joint encoder, fusion decoder."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from . import geometry
from .blocks import init_parameters, init_token
from .decoder import DecoderConfig, FusionDecoder, Reconstruction
from .encoder import ENCODER_PRESETS, EncoderConfig, JointEncoder, JointRepresentation, encode
from .errors import ConfigurationError
from .losses import LossBreakdown, mae_loss, normalize_targets
from .masking import MaskedViews, MaskPlan, split_views
from .tokenizer import MODALITIES, ImagePatchifier, PointGroupEncoder, TokenSet, normalize_depth


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch: int = 16
    d_max: float = 2.0  # depth clamp range in meters
    n_groups: int = 196  # point groups N (196+196+196 tokens keeps 96 ~ 1/6 visible)
    group_size: int = 32  # points per group, K+1
    encoder: EncoderConfig = field(default_factory=lambda: ENCODER_PRESETS["small"])
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    target_mode: str = "standardize"
    point_mlp_hidden: tuple[int, ...] = (64, 128)

    @property
    def image_tokens(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.image_tokens, self.image_tokens, self.n_groups)


@dataclass
class PreparedSample:
    """Tensors ready for tokenization: one observation, geometry precomputed."""

    rgb: torch.Tensor  # (3, H, W) in [0, 1]
    depth: torch.Tensor  # (1, H, W) rescaled to [0, 1]
    members: torch.Tensor  # (N, K+1, 3) normalized group members
    centers: torch.Tensor  # (N, 3)


def prepare_sample(
    rgb: np.ndarray,
    depth_m: np.ndarray,
    cloud: np.ndarray,
    cfg: ModelConfig,
    groups: Optional[tuple[np.ndarray, np.ndarray]] = None,
    dtype: torch.dtype = torch.float32,
) -> PreparedSample:
    """Normalize raw arrays and group the point cloud for one sample.

    groups may carry precomputed (centers, members) arrays; grouping depends
    only on the cloud, so callers can cache it per sample.
    """
    if groups is None:
        idx = geometry.farthest_point_sampling(cloud, cfg.n_groups)
        centers, members = geometry.group_arrays(geometry.knn_group(cloud, idx, cfg.group_size - 1))
    else:
        centers, members = groups
    return PreparedSample(
        rgb=torch.from_numpy(np.ascontiguousarray(rgb)).to(dtype),
        depth=torch.from_numpy(np.ascontiguousarray(normalize_depth(depth_m, cfg.d_max))).to(dtype),
        members=torch.from_numpy(np.ascontiguousarray(members)).to(dtype),
        centers=torch.from_numpy(np.ascontiguousarray(centers)).to(dtype),
    )


@dataclass
class ForwardResult:
    loss: LossBreakdown
    joint: JointRepresentation
    pred: Reconstruction
    views: dict[str, MaskedViews]
    targets: dict[str, torch.Tensor]


class MultiModalMAE(nn.Module):
    """Reconstruct masked patches of every modality from the joint visible set."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.encoder.dim
        self.patchify_rgb = ImagePatchifier(3, cfg.image_size, cfg.patch, c)
        self.patchify_depth = ImagePatchifier(1, cfg.image_size, cfg.patch, c)
        self.encode_points = PointGroupEncoder(c, cfg.point_mlp_hidden)
        self.encoder = JointEncoder(cfg.encoder)
        self.decoder = FusionDecoder(
            cfg.decoder,
            encoder_dim=c,
            image_grid=cfg.image_size // cfg.patch,
            patch=cfg.patch,
            group_size=cfg.group_size,
        )

    def init_weights(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        init_parameters(self, g)
        for p in self.decoder.mask_tokens.values():
            init_token(p, g)
        for p in self.decoder.modality_encodings.values():
            init_token(p, g)

    def tokenize(self, sample: PreparedSample) -> dict[str, TokenSet]:
        depth = sample.depth[0] if sample.depth.ndim == 3 else sample.depth
        return {
            "rgb": self.patchify_rgb(sample.rgb, "rgb"),
            "depth": self.patchify_depth(depth.unsqueeze(0), "depth"),
            "pc": self.encode_points(sample.members, sample.centers),
        }

    def split(self, tokens: dict[str, TokenSet], plan: MaskPlan) -> dict[str, MaskedViews]:
        if plan.masks is None:
            raise ValueError("plan has no materialized masks")
        for mod, size in zip(MODALITIES, plan.sizes):
            if len(tokens[mod]) != size:
                raise ConfigurationError(
                    f"{mod} token count {len(tokens[mod])} != plan size {size}"
                )
        return {mod: split_views(tokens[mod], plan.masks[mod]) for mod in MODALITIES}

    def forward_sample(
        self, sample: PreparedSample, plan: MaskPlan, taps: Sequence[int] = ()
    ) -> ForwardResult:
        """Full pass for one sample under one mask plan."""
        tokens = self.tokenize(sample)
        views = self.split(tokens, plan)
        visible = {m: views[m].visible_tokens + views[m].visible_pos for m in MODALITIES}
        joint = encode(visible, self.encoder, taps=taps)
        pred = self.decoder(joint, plan, views, tokens["pc"].centers)
        targets = normalize_targets(views, self.cfg.target_mode)
        loss = mae_loss(pred, targets)
        return ForwardResult(loss=loss, joint=joint, pred=pred, views=views, targets=targets)


def build_model(cfg: ModelConfig, seed: int = 0) -> MultiModalMAE:
    model = MultiModalMAE(cfg)
    model.init_weights(seed)
    return model


MICRO_MODEL = ModelConfig(
    image_size=32,
    patch=16,
    n_groups=4,
    group_size=4,
    encoder=ENCODER_PRESETS["micro"],
    decoder=DecoderConfig(dim=16, depth=1, heads=2),
)
