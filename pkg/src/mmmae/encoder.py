"""CLS-free joint transformer encoder over the concatenated visible tokens."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn as nn

from .blocks import Block
from .errors import ConfigurationError


@dataclass(frozen=True)
class EncoderConfig:
    dim: int
    depth: int
    heads: int
    mlp_ratio: float = 4.0
    layerscale: bool = False
    layerscale_init: float = 1e-5

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigurationError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0 (0 is the block-free diagnostic mode)")


# Scale family. Parameter counts track the reference sizes
# (~22M / 87M / 304M / 1.1B encoder trunks); micro exists for tests.
ENCODER_PRESETS: dict[str, EncoderConfig] = {
    "micro": EncoderConfig(dim=16, depth=2, heads=2),
    "small": EncoderConfig(dim=384, depth=12, heads=6),
    "base": EncoderConfig(dim=768, depth=12, heads=12),
    "large": EncoderConfig(dim=1024, depth=24, heads=16),
    "giant": EncoderConfig(dim=1536, depth=40, heads=24),
}


@dataclass
class JointRepresentation:
    """Encoder output over all visible tokens plus per-modality row ranges."""

    h: torch.Tensor  # (B_vis, C)
    slices: dict[str, tuple[int, int]]  # modality -> (start, stop) row range
    per_layer: dict[int, torch.Tensor] = field(default_factory=dict)  # tap -> hidden state

    def modality_rows(self, modality: str) -> torch.Tensor:
        start, stop = self.slices[modality]
        return self.h[start:stop]


class JointEncoder(nn.Module):
    """Stack of pre-norm blocks with full self-attention and a final LayerNorm.

    There is no [CLS] token; the input sequence is exactly the visible
    tokens. Tap 0 records the block-stack input (post-patchifier tokens);
    tap i records the output of block i; tap == depth records the
    final-norm output.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        ls = cfg.layerscale_init if cfg.layerscale else None
        self.blocks = nn.ModuleList(
            [Block(cfg.dim, cfg.heads, cfg.mlp_ratio, layerscale_init=ls) for _ in range(cfg.depth)]
        )
        self.norm = nn.LayerNorm(cfg.dim)

    def forward(
        self, x: torch.Tensor, taps: Sequence[int] = ()
    ) -> tuple[torch.Tensor, dict[int, torch.Tensor]]:
        if x.shape[-1] != self.cfg.dim:
            raise ConfigurationError(f"token dim {x.shape[-1]} != encoder dim {self.cfg.dim}")
        bad = [t for t in taps if not 0 <= t <= self.cfg.depth]
        if bad:
            raise ConfigurationError(f"tap layers {bad} outside [0, {self.cfg.depth}]")
        recorded: dict[int, torch.Tensor] = {}
        if 0 in taps:
            recorded[0] = x
        for i, blk in enumerate(self.blocks, start=1):
            x = blk(x)
            if i in taps and i < self.cfg.depth:
                recorded[i] = x
        x = self.norm(x)
        if self.cfg.depth in taps and self.cfg.depth > 0:
            recorded[self.cfg.depth] = x
        return x, recorded


def encode(
    visible: dict[str, torch.Tensor],
    encoder: JointEncoder,
    taps: Sequence[int] = (),
) -> JointRepresentation:
    """Concatenate per-modality visible tokens (rgb, depth, pc) and encode jointly.

    Positional embeddings must already be added. Modalities with zero visible
    tokens contribute an empty row range.
    """
    order = ("rgb", "depth", "pc")
    parts, slices, start = [], {}, 0
    for mod in order:
        t = visible[mod]
        slices[mod] = (start, start + t.shape[0])
        start += t.shape[0]
        parts.append(t)
    x = torch.cat(parts, dim=0)
    h, recorded = encoder(x, taps=taps)
    return JointRepresentation(h=h, slices=slices, per_layer=recorded)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def encoder_from_preset(name: str) -> EncoderConfig:
    try:
        return ENCODER_PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown encoder preset {name!r}; choose from {sorted(ENCODER_PRESETS)}")
