"""Residual convolutional encoder branch.

A configurable ResNet-style encoder runs down to the patch-grid stride, its
deepest map is projected to the shared pyramid width, and two upsampling
stages mirror the transformer branch so both pyramids align scale for scale.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Module, ModuleList
from .tensor import ShapeError


@dataclass
class CNNConfig:
    stem_channels: int = 16
    stage_widths: tuple = (16, 32, 64, 64)
    stage_blocks: tuple = (2, 2, 2, 2)
    stage_strides: tuple = (1, 2, 2, 1)
    classical_stem: bool = False   # 7x7 stride-2 conv + 2x2 maxpool (stride 4)

    def total_stride(self):
        s = 4 if self.classical_stem else 1
        for st in self.stage_strides:
            s *= st
        return s

    def validate(self):
        if len(self.stage_widths) != len(self.stage_blocks) or \
           len(self.stage_widths) != len(self.stage_strides):
            raise ValueError("stage widths/blocks/strides lengths disagree")
        if any(a > b for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ValueError(f"stage widths must be non-decreasing, got {self.stage_widths}")

    @staticmethod
    def resnet34():
        return CNNConfig(stem_channels=64, stage_widths=(64, 128, 256, 512),
                         stage_blocks=(3, 4, 6, 3), stage_strides=(1, 2, 2, 1),
                         classical_stem=True)


class BasicBlock(Module):
    """conv3x3-BN-ReLU-conv3x3-BN plus (projected) shortcut, then ReLU."""

    def __init__(self, in_ch, out_ch, rng, stride=1, dtype=np.float32):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError(f"basic block stride must be 1 or 2, got {stride}")
        # even kernels for stride 2: conv extents must divide exactly
        k1 = 4 if stride == 2 else 3
        self.conv1 = Conv2d(in_ch, out_ch, k1, rng, stride=stride, pad=1, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, pad=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            ks = 2 if stride == 2 else 1
            self.short_conv = Conv2d(in_ch, out_ch, ks, rng, stride=stride, bias=False, dtype=dtype)
            self.short_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.short_conv = None

    def forward(self, x):
        out = self.bn2(self.conv2(T.relu(self.bn1(self.conv1(x)))))
        short = self.short_bn(self.short_conv(x)) if self.short_conv is not None else x
        return T.relu(out + short)


class CNNBranch(Module):
    def __init__(self, image_hw, in_ch, cfg, pyramid_channels, patch_size, rng,
                 dtype=np.float32, upsample_mode="bilinear"):
        super().__init__()
        cfg.validate()
        if cfg.total_stride() != patch_size:
            raise ShapeError(
                f"encoder stride {cfg.total_stride()} must equal the patch-grid "
                f"stride {patch_size} so both pyramids align")
        d0, d1, d2 = pyramid_channels
        self.cfg = cfg
        self.upsample_mode = upsample_mode
        self.classical_stem = cfg.classical_stem
        if cfg.classical_stem:
            # 6x6/2 rather than 7x7/2: keeps the output extent exact on even inputs
            self.stem_conv = Conv2d(in_ch, cfg.stem_channels, 6, rng, stride=2, pad=2,
                                    bias=False, dtype=dtype)
        else:
            self.stem_conv = Conv2d(in_ch, cfg.stem_channels, 3, rng, pad=1,
                                    bias=False, dtype=dtype)
        self.stem_bn = BatchNorm2d(cfg.stem_channels, dtype=dtype)
        stages = []
        ch = cfg.stem_channels
        for width, blocks, stride in zip(cfg.stage_widths, cfg.stage_blocks, cfg.stage_strides):
            blks = [BasicBlock(ch, width, rng, stride=stride, dtype=dtype)]
            for _ in range(blocks - 1):
                blks.append(BasicBlock(width, width, rng, dtype=dtype))
            stages.append(ModuleList(blks))
            ch = width
        self.stages = ModuleList(stages)
        self.to_d0 = ConvBNReLU(ch, d0, rng, k=1, dtype=dtype)
        self.up1 = ConvBNReLU(d0, d1, rng, dtype=dtype)
        self.up2 = ConvBNReLU(d1, d2, rng, dtype=dtype)
        self.head = Conv2d(d2, 1, 1, rng, dtype=dtype)
        self.head_doublings = int(round(math.log2(max(patch_size // 4, 1))))

    def forward(self, x):
        h = T.relu(self.stem_bn(self.stem_conv(x)))
        if self.classical_stem:
            h = T.max_pool2d(h, 2)
        for stage in self.stages:
            for blk in stage:
                h = blk(h)
        r0 = self.to_d0(h)
        r1 = self.up1(T.upsample2x(r0, self.upsample_mode))
        r2 = self.up2(T.upsample2x(r1, self.upsample_mode))
        s = self.head(r2)
        for _ in range(self.head_doublings):
            s = T.upsample2x(s, self.upsample_mode)
        return r0, r1, r2, T.sigmoid(s)
