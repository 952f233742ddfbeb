"""Fusion of the transformer and CNN feature streams at one pyramid scale.

The transformer stream is recalibrated by squeeze-excitation channel gates
(average-pool squeeze), the CNN stream by a max-pool-only channel attention
gate. Both gated maps plus the raw inputs are channel-concatenated and pushed
through a residual conv block.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Linear, Module
from .tensor import ShapeError


@dataclass
class MugenConfig:
    channels: int
    out_channels: int
    reduction: int = 16

    def validate(self):
        if self.channels % self.reduction:
            raise ValueError(
                f"channels {self.channels} not divisible by reduction {self.reduction}")


class _ChannelGate(Module):
    """pool -> FC C->C/r -> ReLU -> FC C/r->C -> sigmoid, scaling the input."""

    def __init__(self, channels, reduction, pool, rng, dtype=np.float32):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        self.pool = pool
        self.fc1 = Linear(channels, channels // reduction, rng, dtype=dtype)
        self.fc2 = Linear(channels // reduction, channels, rng, dtype=dtype)

    def gate(self, x):
        squeezed = self.pool(x)                      # (N, C)
        return T.sigmoid(self.fc2(T.relu(self.fc1(squeezed))))

    def forward(self, x):
        n, c = x.shape[0], x.shape[1]
        return x * self.gate(x).reshape((n, c, 1, 1))


class SEAttention(_ChannelGate):
    """Classical squeeze-excitation: average-pool squeeze."""

    def __init__(self, channels, reduction, rng, dtype=np.float32):
        super().__init__(channels, reduction, T.global_avg_pool, rng, dtype=dtype)


class ChannelAttention(_ChannelGate):
    """Max-pool-only channel gate (CBAM channel half without the average path)."""

    def __init__(self, channels, reduction, rng, dtype=np.float32):
        super().__init__(channels, reduction, T.global_max_pool, rng, dtype=dtype)


class MugenFuse(Module):
    """One fusion module: gated streams -> concat -> residual conv block.

    With ``attention_enabled`` false both gates are bypassed (treated as 1),
    which is the fusion-ablation configuration.
    """

    def __init__(self, cfg, rng, dtype=np.float32, attention_enabled=True):
        super().__init__()
        cfg.validate()
        c, out = cfg.channels, cfg.out_channels
        self.attention_enabled = attention_enabled
        self.se = SEAttention(c, cfg.reduction, rng, dtype=dtype)
        self.ca = ChannelAttention(c, cfg.reduction, rng, dtype=dtype)
        self.conv1 = Conv2d(4 * c, out, 3, rng, pad=1, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(out, dtype=dtype)
        self.conv2 = Conv2d(out, out, 3, rng, pad=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(out, dtype=dtype)
        self.short_conv = Conv2d(4 * c, out, 1, rng, bias=False, dtype=dtype)
        self.short_bn = BatchNorm2d(out, dtype=dtype)
        self.head_mid = ConvBNReLU(out, max(out // 2, 1), rng, dtype=dtype)
        self.head_out = Conv2d(max(out // 2, 1), 1, 1, rng, dtype=dtype)

    def forward(self, t, r):
        if t.shape != r.shape:
            raise ShapeError(f"fusion branch shapes disagree: {t.shape} vs {r.shape}")
        if self.attention_enabled:
            t_hat = self.se(t)
            r_hat = self.ca(r)
        else:
            t_hat, r_hat = t, r
        f = T.concat_channels([t_hat, r_hat, t, r])
        main = self.bn2(self.conv2(T.relu(self.bn1(self.conv1(f)))))
        short = self.short_bn(self.short_conv(f))
        return T.relu(main + short)

    def head_1ch(self, y):
        """Conv/BN stack squeezing the fused map to one channel."""
        return self.head_out(self.head_mid(y))
