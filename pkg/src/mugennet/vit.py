"""Transformer encoder branch.

Images are cut into non-overlapping P x P patches, linearly projected and
tagged with a learned positional code, then run through pre-LN blocks
(LN -> multi-head self-attention -> skip, LN -> MLP -> skip). The token grid
is reshaped back to a spatial map and progressively upsampled into a
three-scale feature pyramid plus a full-resolution sigmoid prediction head.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ConvBNReLU, Conv2d, LayerNorm, Linear, Module, ModuleList
from .tensor import ShapeError, Tensor


@dataclass
class PatchConfig:
    patch_size: int = 16
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    mlp_ratio: float = 2.0

    def validate(self, height, width):
        if height % self.patch_size or width % self.patch_size:
            raise ShapeError(
                f"image {height}x{width} not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ShapeError(
                f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")


class MultiHeadSelfAttention(Module):
    def __init__(self, dim, num_heads, rng, dtype=np.float32):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"token dim {dim} not divisible by head count {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = Linear(dim, dim, rng, dtype=dtype)
        self.k = Linear(dim, dim, rng, dtype=dtype)
        self.v = Linear(dim, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def _split_heads(self, x, n, t):
        # (N, T, D) -> (N*h, T, Dh)
        h, dh = self.num_heads, self.head_dim
        return x.reshape((n, t, h, dh)).transpose((0, 2, 1, 3)).reshape((n * h, t, dh))

    def attention(self, x):
        """Returns (output tokens, attention weights (N*h, T, T))."""
        n, t, d = x.shape
        q = self._split_heads(self.q(x), n, t)
        k = self._split_heads(self.k(x), n, t)
        v = self._split_heads(self.v(x), n, t)
        logits = T.matmul(q, k.transpose((0, 2, 1))) * (1.0 / math.sqrt(self.head_dim))
        att = T.softmax_rows(logits)
        out = T.matmul(att, v)
        out = out.reshape((n, self.num_heads, t, self.head_dim))
        out = out.transpose((0, 2, 1, 3)).reshape((n, t, d))
        return self.proj(out), att

    def forward(self, x):
        return self.attention(x)[0]


class Mlp(Module):
    def __init__(self, dim, hidden, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-LN block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim, num_heads, mlp_ratio, rng, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.msa = MultiHeadSelfAttention(dim, num_heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng, dtype=dtype)

    def forward(self, x):
        x = x + self.msa(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class PatchEmbed(Module):
    """P x P non-overlapping linear projection plus learned positional code."""

    def __init__(self, image_hw, in_ch, cfg, rng, dtype=np.float32):
        super().__init__()
        cfg.validate(*image_hw)
        p = cfg.patch_size
        self.patch_size = p
        self.grid = (image_hw[0] // p, image_hw[1] // p)
        self.proj = Linear(p * p * in_ch, cfg.embed_dim, rng, dtype=dtype)
        n_tokens = self.grid[0] * self.grid[1]
        self.pos = Tensor(np.zeros((n_tokens, cfg.embed_dim), dtype=dtype),
                          requires_grad=True)

    def tokens(self, x, add_pos=True):
        n, c, h, w = x.shape
        p = self.patch_size
        gh, gw = h // p, w // p
        if (gh, gw) != self.grid:
            raise ShapeError(f"input {h}x{w} does not match configured grid {self.grid}")
        x = x.reshape((n, c, gh, p, gw, p))
        x = x.transpose((0, 2, 4, 1, 3, 5)).reshape((n, gh * gw, c * p * p))
        out = self.proj(x)
        if add_pos:
            out = out + self.pos
        return out

    def forward(self, x):
        return self.tokens(x)


class TransformerBranch(Module):
    """Token encoder producing the t0/t1/t2 pyramid and the branch prediction."""

    def __init__(self, image_hw, in_ch, cfg, pyramid_channels, rng,
                 dtype=np.float32, upsample_mode="bilinear"):
        super().__init__()
        d0, d1, d2 = pyramid_channels
        self.cfg = cfg
        self.image_hw = image_hw
        self.upsample_mode = upsample_mode
        self.embed = PatchEmbed(image_hw, in_ch, cfg, rng, dtype=dtype)
        self.blocks = ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, rng, dtype=dtype)
            for _ in range(cfg.num_layers))
        self.to_d0 = (Conv2d(cfg.embed_dim, d0, 1, rng, dtype=dtype)
                      if cfg.embed_dim != d0 else None)
        self.up1 = ConvBNReLU(d0, d1, rng, dtype=dtype)
        self.up2 = ConvBNReLU(d1, d2, rng, dtype=dtype)
        self.head = Conv2d(d2, 1, 1, rng, dtype=dtype)
        # t2 sits at stride P/4; the head output is doubled back to full size
        self.head_doublings = int(round(math.log2(max(cfg.patch_size // 4, 1))))

    def forward(self, x):
        n = x.shape[0]
        gh, gw = self.embed.grid
        tok = self.embed(x)
        for blk in self.blocks:
            tok = blk(tok)
        t0 = tok.reshape((n, gh, gw, self.cfg.embed_dim)).transpose((0, 3, 1, 2))
        if self.to_d0 is not None:
            t0 = self.to_d0(t0)
        t1 = self.up1(T.upsample2x(t0, self.upsample_mode))
        t2 = self.up2(T.upsample2x(t1, self.upsample_mode))
        s = self.head(t2)
        for _ in range(self.head_doublings):
            s = T.upsample2x(s, self.upsample_mode)
        return t0, t1, t2, T.sigmoid(s)
