"""Modal patchifiers: images/depth to patch tokens, point groups to set tokens.

Every tokenizer emits a TokenSet holding the projected tokens, their
positional embeddings, and the raw (pre-projection) patch contents that the
reconstruction loss later targets.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError

MODALITIES = ("rgb", "depth", "pc")


@dataclass
class TokenSet:
    """Per-modality token matrix (L, C) with positional embeddings.

    raw holds the un-projected patch contents (flattened pixels for images,
    flattened normalized group members for point clouds); centers is only
    set for the pc modality.
    """

    tokens: torch.Tensor  # (L, C)
    pos: torch.Tensor  # (L, C)
    raw: torch.Tensor  # (L, D_raw)
    modality: str
    centers: Optional[torch.Tensor] = None  # (L, 3), pc only

    def __post_init__(self):
        assert self.tokens.shape == self.pos.shape, "tokens and pos must have identical shape"
        assert self.tokens.shape[0] > 0, "a TokenSet must hold at least one token"
        assert self.modality in MODALITIES, f"unknown modality {self.modality}"

    def __len__(self) -> int:
        return self.tokens.shape[0]


def sincos_pos_2d(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2D sine-cosine positional embedding over a patch grid.

    Half the channels encode the row coordinate, half the column; each half
    is [sin(p*w_k), cos(p*w_k)] with w_k = 10000^(-k/(dim/4)).
    Returns (grid_h*grid_w, dim) float64 in row-major grid order.
    """
    if dim % 4 != 0:
        raise ConfigurationError(f"positional embedding dim must be divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter)

    def encode_1d(pos):
        out = np.outer(pos.astype(np.float64), omega)  # (N, dim/4)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)  # (N, dim/2)

    rows = np.arange(grid_h, dtype=np.float64).repeat(grid_w)
    cols = np.tile(np.arange(grid_w, dtype=np.float64), grid_h)
    return np.concatenate([encode_1d(rows), encode_1d(cols)], axis=1)


def flatten_patches(img: torch.Tensor, patch: int) -> torch.Tensor:
    """Split (C, H, W) into (L, C*patch*patch) rows, row-major patch order.

    Within a patch the flattening order is (channel, row, col).
    """
    c, h, w = img.shape
    if h % patch != 0 or w % patch != 0:
        raise ConfigurationError(f"image {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = img.reshape(c, gh, patch, gw, patch)
    x = x.permute(1, 3, 0, 2, 4)  # (gh, gw, C, p, p)
    return x.reshape(gh * gw, c * patch * patch)


def unflatten_patches(rows: torch.Tensor, channels: int, patch: int, grid_h: int, grid_w: int) -> torch.Tensor:
    """Inverse of flatten_patches: (L, C*p*p) rows back to (C, H, W)."""
    x = rows.reshape(grid_h, grid_w, channels, patch, patch)
    x = x.permute(2, 0, 3, 1, 4)
    return x.reshape(channels, grid_h * patch, grid_w * patch)


def normalize_depth(depth_m: np.ndarray, d_max: float) -> np.ndarray:
    """Clamp metric depth to [0, d_max] and rescale to [0, 1]."""
    d = np.nan_to_num(np.asarray(depth_m, dtype=np.float64), nan=0.0, posinf=d_max, neginf=0.0)
    return np.clip(d, 0.0, d_max) / d_max


class ImagePatchifier(nn.Module):
    """Linear patch projection for RGB (3ch) or depth (1ch) maps.

    Tokens are proj(flattened 16x16 patch); positional embeddings are the
    frozen 2D sine-cosine grid. No modality-type embedding is added; the
    projection bias carries the modality identity.
    """

    def __init__(self, channels: int, image_size: int, patch: int, dim: int):
        super().__init__()
        if image_size % patch != 0:
            raise ConfigurationError(f"image size {image_size} not divisible by patch {patch}")
        self.channels = channels
        self.patch = patch
        self.grid = image_size // patch
        self.num_tokens = self.grid * self.grid
        self.proj = nn.Linear(channels * patch * patch, dim)
        pos = sincos_pos_2d(self.grid, self.grid, dim)
        self.register_buffer("pos_embed", torch.from_numpy(pos).float(), persistent=False)

    def forward(self, img: torch.Tensor, modality: str) -> TokenSet:
        raw = flatten_patches(img, self.patch)
        tokens = self.proj(raw)
        return TokenSet(tokens=tokens, pos=self.pos_embed.to(tokens.dtype), raw=raw, modality=modality)


class PointGroupEncoder(nn.Module):
    """Set encoder for normalized point groups: shared per-point MLP + max-pool.

    Per-point widths default to 3 -> 64 -> 128 -> C with GELU between layers;
    the channel-wise max over a group's K+1 points is the group token.
    Group centers pass through a 2-layer MLP to form positional embeddings.
    """

    def __init__(self, dim: int, hidden: tuple[int, ...] = (64, 128)):
        super().__init__()
        widths = (3,) + tuple(hidden) + (dim,)
        layers = []
        for i in range(len(widths) - 1):
            layers.append(nn.Linear(widths[i], widths[i + 1]))
            if i < len(widths) - 2:
                layers.append(nn.GELU())
        self.point_mlp = nn.Sequential(*layers)
        self.center_mlp = nn.Sequential(nn.Linear(3, dim), nn.GELU(), nn.Linear(dim, dim))

    def forward(self, members: torch.Tensor, centers: torch.Tensor) -> TokenSet:
        """members: (N, K+1, 3) normalized group members; centers: (N, 3)."""
        if members.ndim != 3 or members.shape[-1] != 3:
            raise ValueError(f"expected (N, K+1, 3) group members, got {tuple(members.shape)}")
        feats = self.point_mlp(members)  # (N, K+1, C)
        tokens = feats.max(dim=1).values  # (N, C)
        pos = self.center_mlp(centers)
        raw = members.reshape(members.shape[0], -1)
        return TokenSet(tokens=tokens, pos=pos, raw=raw, modality="pc", centers=centers)
