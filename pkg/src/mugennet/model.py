"""Full network assembly: two branches, three fusion modules, gated decoder.

Either branch can be replaced by a learned-constant stream (ablation mode);
the fusion attention gates can likewise be disabled. The image geometry is
fixed at construction time because the positional code and constant streams
are resolution-bound.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .cnn import CNNBranch, CNNConfig
from .decoder import Decoder
from .exceptions import ConfigError
from .mugen import MugenConfig, MugenFuse
from .nn import Module, ModuleList
from .tensor import Tensor
from .vit import PatchConfig, TransformerBranch


@dataclass
class ModelConfig:
    image_size: tuple = (64, 48)          # (width, height)
    in_channels: int = 3
    patch: PatchConfig = field(default_factory=PatchConfig)
    cnn: CNNConfig = field(default_factory=CNNConfig)
    pyramid_channels: tuple = (32, 24, 16)
    decoder_channels: tuple = (24, 16, 16)
    reduction: int = 2
    transformer_branch: bool = True
    cnn_branch: bool = True
    mugen_attention: bool = True
    upsample_mode: str = "bilinear"

    @property
    def height(self):
        return self.image_size[1]

    @property
    def width(self):
        return self.image_size[0]

    def validate(self):
        if not (self.transformer_branch or self.cnn_branch):
            raise ConfigError("at least one branch must be enabled")
        self.patch.validate(self.height, self.width)
        self.cnn.validate()

    @staticmethod
    def desk(**overrides):
        cfg = ModelConfig(
            image_size=(64, 48),
            patch=PatchConfig(patch_size=4, embed_dim=32, num_heads=4,
                              num_layers=2, mlp_ratio=2.0),
            cnn=CNNConfig(stem_channels=16, stage_widths=(16, 32, 64, 64),
                          stage_blocks=(2, 2, 2, 2), stage_strides=(1, 2, 2, 1),
                          classical_stem=False),
            pyramid_channels=(32, 24, 16),
            decoder_channels=(24, 16, 16),
            reduction=2,
        )
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg

    @staticmethod
    def paper(**overrides):
        cfg = ModelConfig(
            image_size=(256, 192),
            patch=PatchConfig(patch_size=16, embed_dim=384, num_heads=6,
                              num_layers=12, mlp_ratio=4.0),
            cnn=CNNConfig.resnet34(),
            pyramid_channels=(384, 192, 96),
            decoder_channels=(192, 96, 64),
            reduction=16,
        )
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg


class ConstantBranch(Module):
    """Learned constant feature stream standing in for a disabled branch.

    Keeps the fusion and decoder geometry intact so ablations compare
    information content, not architecture size.
    """

    def __init__(self, scale_shapes, image_hw, rng, dtype=np.float32):
        super().__init__()
        self._consts = []
        for i, (c, h, w) in enumerate(scale_shapes):
            t = Tensor(rng.normal(0.0, 0.01, (1, c, h, w)).astype(dtype), requires_grad=True)
            setattr(self, f"f{i}", t)
            self._consts.append(t)
        self.s_logit = Tensor(np.zeros((1, 1, *image_hw), dtype=dtype), requires_grad=True)

    def forward(self, x):
        n = x.shape[0]
        outs = [T.broadcast_to(t, (n,) + t.shape[1:]) for t in self._consts]
        s = T.sigmoid(T.broadcast_to(self.s_logit, (n,) + self.s_logit.shape[1:]))
        return (*outs, s)


class MugenNet(Module):
    def __init__(self, cfg, rng=None, dtype=np.float32):
        super().__init__()
        cfg.validate()
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        h, w = cfg.height, cfg.width
        p = cfg.patch.patch_size
        d0, d1, d2 = cfg.pyramid_channels
        scale_shapes = [(d0, h // p, w // p),
                        (d1, 2 * h // p, 2 * w // p),
                        (d2, 4 * h // p, 4 * w // p)]

        if cfg.transformer_branch:
            self.t_branch = TransformerBranch((h, w), cfg.in_channels, cfg.patch,
                                              cfg.pyramid_channels, rng, dtype=dtype,
                                              upsample_mode=cfg.upsample_mode)
        else:
            self.t_branch = ConstantBranch(scale_shapes, (h, w), rng, dtype=dtype)
        if cfg.cnn_branch:
            self.c_branch = CNNBranch((h, w), cfg.in_channels, cfg.cnn,
                                      cfg.pyramid_channels, p, rng, dtype=dtype,
                                      upsample_mode=cfg.upsample_mode)
        else:
            self.c_branch = ConstantBranch(scale_shapes, (h, w), rng, dtype=dtype)

        self.fuse = ModuleList(
            MugenFuse(MugenConfig(channels=c, out_channels=c, reduction=cfg.reduction),
                      rng, dtype=dtype, attention_enabled=cfg.mugen_attention)
            for c in cfg.pyramid_channels)
        self.decoder = Decoder(cfg.pyramid_channels, cfg.decoder_channels, p, rng,
                               dtype=dtype, upsample_mode=cfg.upsample_mode)

    def pyramids(self, x):
        t0, t1, t2, s_t = self.t_branch(x)
        r0, r1, r2, s_r = self.c_branch(x)
        return (t0, t1, t2), (r0, r1, r2), s_t, s_r

    def forward(self, x):
        """Returns the three full-resolution sigmoid maps (S_t, S_r, S_z)."""
        (t0, t1, t2), (r0, r1, r2), s_t, s_r = self.pyramids(x)
        y1 = self.fuse[0](t0, r0)
        y2 = self.fuse[1](t1, r1)
        y3 = self.fuse[2](t2, r2)
        return s_t, s_r, self.decoder(y1, y2, y3).z_out

    def forward_full(self, x):
        """Like ``forward`` but also returns the decoder state (for shape checks)."""
        (t0, t1, t2), (r0, r1, r2), s_t, s_r = self.pyramids(x)
        y1 = self.fuse[0](t0, r0)
        y2 = self.fuse[1](t1, r1)
        y3 = self.fuse[2](t2, r2)
        state = self.decoder(y1, y2, y3)
        return {"t": (t0, t1, t2), "r": (r0, r1, r2), "y": (y1, y2, y3),
                "s_t": s_t, "s_r": s_r, "state": state}
