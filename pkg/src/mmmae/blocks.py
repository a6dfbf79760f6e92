"""Transformer building blocks shared by the encoder and decoder.

Attention is written out explicitly (qkv projection, softmax, value mix) so
tests can inspect attention rows and so the forward pass stays bit-identical
across runs on CPU.
"""

import torch
import torch.nn as nn


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class LayerScale(nn.Module):
    def __init__(self, dim: int, init_value: float):
        super().__init__()
        self.gamma = nn.Parameter(init_value * torch.ones(dim))

    def forward(self, x):
        return x * self.gamma


class Attention(nn.Module):
    """Multi-head self-attention. Set keep_attn to record the last attention map."""

    def __init__(self, dim: int, num_heads: int, qkv_bias: bool = True):
        super().__init__()
        assert dim % num_heads == 0, "dim must be divisible by num_heads"
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=qkv_bias)
        self.proj = nn.Linear(dim, dim)
        self.keep_attn = False
        self.last_attn = None

    def forward(self, x):
        n, c = x.shape[-2], x.shape[-1]
        qkv = self.qkv(x).reshape(n, 3, self.num_heads, c // self.num_heads).permute(1, 2, 0, 3)
        q, k, v = qkv.unbind(0)  # each (heads, N, head_dim)

        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        if self.keep_attn:
            self.last_attn = attn.detach()

        x = (attn @ v).transpose(0, 1).reshape(n, c)
        return self.proj(x)


class CrossAttention(nn.Module):
    """Queries attend to a separate key/value sequence."""

    def __init__(self, dim: int, num_heads: int, qkv_bias: bool = True):
        super().__init__()
        assert dim % num_heads == 0, "dim must be divisible by num_heads"
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.q = nn.Linear(dim, dim, bias=qkv_bias)
        self.kv = nn.Linear(dim, dim * 2, bias=qkv_bias)
        self.proj = nn.Linear(dim, dim)
        self.keep_attn = False
        self.last_attn = None

    def forward(self, x, kv):
        nq, c = x.shape[-2], x.shape[-1]
        nk = kv.shape[-2]
        hd = c // self.num_heads
        q = self.q(x).reshape(nq, self.num_heads, hd).transpose(0, 1)
        k, v = self.kv(kv).reshape(nk, 2, self.num_heads, hd).permute(1, 2, 0, 3).unbind(0)

        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        if self.keep_attn:
            self.last_attn = attn.detach()

        x = (attn @ v).transpose(0, 1).reshape(nq, c)
        return self.proj(x)


class Block(nn.Module):
    """Pre-norm transformer block: LN -> MHSA -> (LayerScale) -> residual, then MLP."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0,
                 layerscale_init: float | None = None):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.ls1 = LayerScale(dim, layerscale_init) if layerscale_init else nn.Identity()
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.ls2 = LayerScale(dim, layerscale_init) if layerscale_init else nn.Identity()

    def forward(self, x):
        x = x + self.ls1(self.attn(self.norm1(x)))
        x = x + self.ls2(self.mlp(self.norm2(x)))
        return x


class CrossBlock(nn.Module):
    """Pre-norm cross-attention block: queries fuse information from kv."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = CrossAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x, kv):
        x = x + self.attn(self.norm_q(x), self.norm_kv(kv))
        x = x + self.mlp(self.norm2(x))
        return x


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministic init through an explicit generator (no global RNG).

    Linear weights are xavier-uniform, biases zero; LayerNorm stays at its
    (1, 0) construction defaults. Parameters named mask_token / modality
    encoding are drawn N(0, 0.02) by their owners via init_token.
    """
    for m in module.modules():
        if isinstance(m, nn.Linear):
            fan_in, fan_out = m.weight.shape[1], m.weight.shape[0]
            bound = (6.0 / (fan_in + fan_out)) ** 0.5
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


def init_token(param: nn.Parameter, generator: torch.Generator, std: float = 0.02) -> None:
    with torch.no_grad():
        param.normal_(0.0, std, generator=generator)
