"""SRGAN generator and discriminator for single-channel images.

The generator follows the SRResNet layout (9x9 head, residual trunk with a
long skip, sub-pixel upscaling stages, 9x9 tail).  Each upscaling stage may
scale height and width by different integer factors, which is how the
anisotropic (height-only) variant is expressed: stages ``[(2, 1)] * 3``
upscale the first spatial axis by 8 and leave the second untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError

ALLOWED_TOTALS = (1, 2, 4, 8)
PROB_EPS = 1e-7


@dataclass(frozen=True)
class UpscaleStage:
    rh: int
    rw: int

    def __post_init__(self):
        if self.rh < 1 or self.rw < 1 or (self.rh == 1 and self.rw == 1):
            raise ConfigError(f"invalid upscale stage ({self.rh}, {self.rw})")


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    base_channels: int = 64
    num_residual_blocks: int = 16
    stages: tuple = (UpscaleStage(2, 2), UpscaleStage(2, 2))

    def __post_init__(self):
        stages = tuple(s if isinstance(s, UpscaleStage) else UpscaleStage(*s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if self.in_channels != 1:
            raise ConfigError("only single-channel (grayscale) inputs are supported")
        if self.base_channels < 1 or self.num_residual_blocks < 1:
            raise ConfigError("base_channels and num_residual_blocks must be positive")
        fh, fw = self.scale
        if fh not in ALLOWED_TOTALS or fw not in ALLOWED_TOTALS:
            raise ConfigError(f"total upscale ({fh}, {fw}) not in {ALLOWED_TOTALS} per axis")

    @property
    def scale(self) -> tuple[int, int]:
        return math.prod(s.rh for s in self.stages), math.prod(s.rw for s in self.stages)

    @classmethod
    def for_factors(cls, factor_h: int, factor_w: int, **kw) -> "GeneratorConfig":
        """Compose ×2 stages per axis, e.g. (8, 1) -> [(2,1), (2,1), (2,1)]."""
        def steps(f):
            if f not in ALLOWED_TOTALS:
                raise ConfigError(f"factor {f} not in {ALLOWED_TOTALS}")
            return int(round(math.log2(f)))

        nh, nw = steps(factor_h), steps(factor_w)
        stages = [UpscaleStage(2 if i < nh else 1, 2 if i < nw else 1) for i in range(max(nh, nw))]
        return cls(stages=tuple(stages), **kw)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "base_channels": self.base_channels,
            "num_residual_blocks": self.num_residual_blocks,
            "stages": [[s.rh, s.rw] for s in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["stages"] = tuple(UpscaleStage(*s) for s in d.get("stages", ()))
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 1
    base_channels: int = 64
    image_size: int = 224
    dense_units: int = 1024

    def __post_init__(self):
        if self.image_size % 16:
            raise ConfigError("discriminator image_size must be divisible by 16")
        if self.in_channels != 1:
            raise ConfigError("only single-channel inputs are supported")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pixel_shuffle_aniso(x, rh: int, rw: int):
    """Sub-pixel rearrangement with independent height/width factors.

    ``out[n, c, h*rh + i, w*rw + j] = x[n, c*rh*rw + i*rw + j, h, w]``.
    Works on torch tensors and numpy arrays.  With ``rh == rw`` this is the
    standard pixel shuffle.
    """
    n, ch, h, w = x.shape
    if ch % (rh * rw):
        raise ShapeError(f"{ch} channels not divisible by rh*rw = {rh * rw}")
    c = ch // (rh * rw)
    x = x.reshape(n, c, rh, rw, h, w)
    x = x.permute(0, 1, 4, 2, 5, 3) if isinstance(x, torch.Tensor) else x.transpose(0, 1, 4, 2, 5, 3)
    return x.reshape(n, c, h * rh, w * rw)


def pixel_unshuffle_aniso(x, rh: int, rw: int):
    """Inverse of :func:`pixel_shuffle_aniso`."""
    n, c, H, W = x.shape
    if H % rh or W % rw:
        raise ShapeError(f"spatial size {H}x{W} not divisible by ({rh}, {rw})")
    h, w = H // rh, W // rw
    x = x.reshape(n, c, h, rh, w, rw)
    x = x.permute(0, 1, 3, 5, 2, 4) if isinstance(x, torch.Tensor) else x.transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * rh * rw, h, w)


class PixelShuffleAniso(nn.Module):
    def __init__(self, rh, rw):
        super().__init__()
        self.rh, self.rw = rh, rw

    def forward(self, x):
        return pixel_shuffle_aniso(x, self.rh, self.rw)

    def extra_repr(self):
        return f"rh={self.rh}, rw={self.rw}"


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.PReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class UpscaleBlock(nn.Sequential):
    def __init__(self, channels, stage: UpscaleStage):
        super().__init__(
            nn.Conv2d(channels, channels * stage.rh * stage.rw, 3, padding=1),
            PixelShuffleAniso(stage.rh, stage.rw),
            nn.PReLU(),
        )


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.head = nn.Sequential(nn.Conv2d(cfg.in_channels, c, 9, padding=4), nn.PReLU())
        self.trunk = nn.Sequential(*[ResidualBlock(c) for _ in range(cfg.num_residual_blocks)])
        self.trunk_tail = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.BatchNorm2d(c))
        self.upscale = nn.Sequential(*[UpscaleBlock(c, s) for s in cfg.stages])
        self.tail = nn.Conv2d(c, cfg.in_channels, 9, padding=4)

    @property
    def scale(self) -> tuple[int, int]:
        return self.cfg.scale

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (n, {self.cfg.in_channels}, h, w) input, got {tuple(x.shape)}")
        feat = self.head(x)
        feat = feat + self.trunk_tail(self.trunk(feat))
        out = self.tail(self.upscale(feat))
        # shifted tanh keeps outputs in [0, 1]
        return 0.5 * (torch.tanh(out) + 1.0)


class Discriminator(nn.Module):
    """Eight-convolution SRGAN discriminator with a sigmoid head, output shape (n,)."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        plan = [(c, 2), (2 * c, 1), (2 * c, 2), (4 * c, 1), (4 * c, 2), (8 * c, 1), (8 * c, 2)]
        layers = [nn.Conv2d(cfg.in_channels, c, 3, padding=1), nn.LeakyReLU(0.2)]
        prev = c
        for out, stride in plan:
            layers += [nn.Conv2d(prev, out, 3, stride=stride, padding=1), nn.BatchNorm2d(out), nn.LeakyReLU(0.2)]
            prev = out
        self.features = nn.Sequential(*layers)
        side = cfg.image_size // 16
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(prev * side * side, cfg.dense_units),
            nn.LeakyReLU(0.2),
            nn.Linear(cfg.dense_units, 1),
        )

    def logits(self, x):
        s = self.cfg.image_size
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels or x.shape[-2:] != (s, s):
            raise ShapeError(f"expected (n, 1, {s}, {s}) input, got {tuple(x.shape)}")
        return self.classifier(self.features(x)).squeeze(1)

    def forward(self, x):
        # clamp keeps float32 outputs strictly inside (0, 1) when the logit saturates
        return torch.sigmoid(self.logits(x)).clamp(PROB_EPS, 1 - PROB_EPS)


def _seeded(seed, factory):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return factory()


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    return _seeded(seed, lambda: Generator(cfg))


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0) -> Discriminator:
    return _seeded(seed, lambda: Discriminator(cfg))


def _run(model: nn.Module, batch):
    if isinstance(batch, np.ndarray):
        dtype = next(model.parameters()).dtype
        was_training = model.training
        model.eval()
        try:
            with torch.no_grad():
                return model(torch.as_tensor(batch, dtype=dtype)).numpy()
        finally:
            model.train(was_training)
    return model(batch)


def generator_forward(g: Generator, lr_batch):
    """Apply ``g``.  Numpy input runs in eval mode without gradients and returns numpy."""
    return _run(g, lr_batch)


def discriminator_forward(d: Discriminator, batch):
    return _run(d, batch)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def upscale_parameter_count(cfg: GeneratorConfig) -> int:
    """Learnable parameters in the upscaling stages: 3x3 conv C -> C*rh*rw with bias, plus one PReLU slope."""
    c = cfg.base_channels
    return sum(9 * c * c * s.rh * s.rw + c * s.rh * s.rw + 1 for s in cfg.stages)
