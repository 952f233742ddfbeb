"""Attention-gated progressive decoder.

Each stage gates the next (finer) fusion output with the running decoder
state, refines it with a conv block, and doubles the spatial extent until the
input resolution is restored; a final 1-channel sigmoid head emits the map.
For patch strides below 16 the later stages skip their doubling so the output
still lands exactly on the input size.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvBNReLU, Module
from .tensor import ShapeError, Tensor


@dataclass
class DecoderState:
    z1: Tensor
    z2: Tensor
    z3: Tensor
    z_out: Tensor


class AttentionGate(Module):
    """Additive attention gate: alpha = sigmoid(psi(relu(Wg g + Wx x))), out = alpha * x."""

    def __init__(self, gate_ch, skip_ch, rng, inter_ch=None, dtype=np.float32):
        super().__init__()
        if inter_ch is None:
            inter_ch = max(skip_ch // 2, 1)
        self.wg = Conv2d(gate_ch, inter_ch, 1, rng, dtype=dtype)
        self.wx = Conv2d(skip_ch, inter_ch, 1, rng, dtype=dtype)
        self.psi = Conv2d(inter_ch, 1, 1, rng, dtype=dtype)

    def gate_map(self, g, x):
        if g.shape[2:] != x.shape[2:]:
            raise ShapeError(f"attention gate spatial mismatch: {g.shape} vs {x.shape}")
        return T.sigmoid(self.psi(T.relu(self.wg(g) + self.wx(x))))

    def forward(self, g, x):
        return x * self.gate_map(g, x)


class Decoder(Module):
    def __init__(self, fused_channels, stage_channels, patch_size, rng,
                 dtype=np.float32, upsample_mode="bilinear"):
        super().__init__()
        c0, c1, c2 = fused_channels
        z1c, z2c, z3c = stage_channels
        self.conv1 = ConvBNReLU(c0, z1c, rng, dtype=dtype)
        self.ag1 = AttentionGate(z1c, c1, rng, dtype=dtype)
        self.conv2 = ConvBNReLU(c1, z2c, rng, dtype=dtype)
        self.ag2 = AttentionGate(z2c, c2, rng, dtype=dtype)
        self.conv3 = ConvBNReLU(c2, z3c, rng, dtype=dtype)
        self.head = Conv2d(z3c, 1, 3, rng, pad=1, dtype=dtype)
        self.upsample_mode = upsample_mode
        # stage i doubles only while the running stride is still above 1
        strides = [patch_size]
        for _ in range(4):
            strides.append(max(strides[-1] // 2, 1))
        self.doubles = [strides[i] > 1 for i in range(4)]

    def _up(self, x, enabled):
        return T.upsample2x(x, self.upsample_mode) if enabled else x

    def forward(self, y1, y2, y3):
        z1 = self._up(self.conv1(y1), self.doubles[0])
        z2 = self._up(self.conv2(self.ag1(z1, y2)), self.doubles[1])
        z3 = self._up(self.conv3(self.ag2(z2, y3)), self.doubles[2])
        z_out = T.sigmoid(self.head(self._up(z3, self.doubles[3])))
        return DecoderState(z1=z1, z2=z2, z3=z3, z_out=z_out)
