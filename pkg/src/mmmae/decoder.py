"""Cross-attention fusion decoder with a modality-shared trunk.

Queries are the full-length token sequence per modality (projected visible
tokens, learned mask tokens at masked slots) plus positional embeddings;
keys/values are the projected visible tokens tagged with learned modality
encodings. One cross-attention block fuses them, a shared self-attention
trunk refines the fused sequence, and per-modality MLP heads emit the
reconstructions at masked positions.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import Block, CrossBlock
from .encoder import JointRepresentation
from .errors import ConfigurationError
from .masking import MaskedViews, MaskPlan
from .tokenizer import MODALITIES, sincos_pos_2d


@dataclass(frozen=True)
class DecoderConfig:
    dim: int = 512
    depth: int = 4  # trunk blocks after the fusion layer
    heads: int = 8
    mlp_ratio: float = 4.0
    shared_mask_token: bool = False  # one mask token for all modalities instead of per-modality

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigurationError(f"decoder dim {self.dim} not divisible by heads {self.heads}")


@dataclass
class Reconstruction:
    """Decoder outputs at masked positions only."""

    rgb: torch.Tensor  # (L_I - c_I, 3*patch^2)
    depth: torch.Tensor  # (L_D - c_D, patch^2)
    pc: torch.Tensor  # (L_P - c_P, K+1, 3)

    def term(self, modality: str) -> torch.Tensor:
        return getattr(self, modality)


class FusionDecoder(nn.Module):
    """g(h_modality, h): explicit cross-modal fusion + shared trunk + heads."""

    def __init__(
        self,
        cfg: DecoderConfig,
        encoder_dim: int,
        image_grid: int,
        patch: int,
        group_size: int,
    ):
        super().__init__()
        self.cfg = cfg
        self.patch = patch
        self.group_size = group_size  # K+1 points per group
        d = cfg.dim

        self.in_proj = nn.ModuleDict({m: nn.Linear(encoder_dim, d) for m in MODALITIES})
        n_tok = 1 if cfg.shared_mask_token else 3
        self.mask_tokens = nn.ParameterDict(
            {m: nn.Parameter(torch.zeros(d)) for m in (MODALITIES[:n_tok] if cfg.shared_mask_token else MODALITIES)}
        )
        self.modality_encodings = nn.ParameterDict({m: nn.Parameter(torch.zeros(d)) for m in MODALITIES})

        pos = sincos_pos_2d(image_grid, image_grid, d)
        self.register_buffer("grid_pos", torch.from_numpy(pos).float(), persistent=False)
        self.center_mlp = nn.Sequential(nn.Linear(3, d), nn.GELU(), nn.Linear(d, d))

        self.fusion = CrossBlock(d, cfg.heads, cfg.mlp_ratio)
        self.trunk = nn.ModuleList([Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)])
        self.norm = nn.LayerNorm(d)

        self.heads = nn.ModuleDict(
            {
                "rgb": self._head(d, 3 * patch * patch),
                "depth": self._head(d, patch * patch),
                "pc": self._head(d, 3 * group_size),
            }
        )

    @staticmethod
    def _head(dim: int, out_dim: int) -> nn.Module:
        return nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, out_dim))

    def mask_token(self, modality: str) -> torch.Tensor:
        if self.cfg.shared_mask_token:
            return self.mask_tokens[MODALITIES[0]]
        return self.mask_tokens[modality]

    def _pos_for(self, modality: str, length: int, centers_full) -> torch.Tensor:
        """Full-sequence decoder positional embeddings for one modality."""
        if modality == "pc":
            return self.center_mlp(centers_full)
        if length != self.grid_pos.shape[0]:
            raise ConfigurationError(
                f"{modality} length {length} != decoder grid {self.grid_pos.shape[0]}"
            )
        return self.grid_pos

    def build_queries(
        self,
        joint: JointRepresentation,
        plan: MaskPlan,
        views: dict[str, MaskedViews],
        centers: torch.Tensor,
    ) -> torch.Tensor:
        """Full-length query sequence, modalities concatenated rgb, depth, pc.

        Visible slots hold the projected encoder features, masked slots the
        modality's mask token; every slot gets its positional embedding.
        """
        segments = []
        for mod, length, count in zip(MODALITIES, plan.sizes, plan.counts):
            v = views[mod]
            rows = joint.modality_rows(mod)
            if rows.shape[0] != count:
                raise RuntimeError(f"joint slice for {mod} has {rows.shape[0]} rows, plan says {count}")
            proj = self.in_proj[mod](rows)
            seg = self.mask_token(mod).expand(length, -1).clone()
            if count > 0:
                seg[torch.from_numpy(v.visible_idx)] = proj
            seg = seg + self._pos_for(mod, length, centers if mod == "pc" else None)
            segments.append(seg)
        return torch.cat(segments, dim=0)

    def build_kv(self, joint: JointRepresentation) -> torch.Tensor:
        """Key/value sequence: every visible token projected + modality encoding."""
        parts = []
        for mod in MODALITIES:
            rows = joint.modality_rows(mod)
            if rows.shape[0] == 0:
                continue
            parts.append(self.in_proj[mod](rows) + self.modality_encodings[mod])
        return torch.cat(parts, dim=0)

    def decode(
        self,
        queries: torch.Tensor,
        kv: torch.Tensor,
        plan: MaskPlan,
        views: dict[str, MaskedViews],
    ) -> Reconstruction:
        """Fusion layer, shared trunk, then per-modality heads at masked slots."""
        x = self.fusion(queries, kv)
        for blk in self.trunk:
            x = blk(x)
        x = self.norm(x)

        outs = {}
        start = 0
        for mod, length in zip(MODALITIES, plan.sizes):
            seg = x[start : start + length]
            start += length
            hid = torch.from_numpy(views[mod].hidden_idx)
            outs[mod] = self.heads[mod](seg[hid])
        pc = outs["pc"].reshape(-1, self.group_size, 3)
        return Reconstruction(rgb=outs["rgb"], depth=outs["depth"], pc=pc)

    def forward(
        self,
        joint: JointRepresentation,
        plan: MaskPlan,
        views: dict[str, MaskedViews],
        centers: torch.Tensor,
    ) -> Reconstruction:
        queries = self.build_queries(joint, plan, views, centers)
        kv = self.build_kv(joint)
        return self.decode(queries, kv, plan, views)
