"""Content, adversarial and pixel losses.

All probability-based losses clamp their inputs to ``[EPS, 1 - EPS]`` before
taking logs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import DomainError, ShapeError

EPS = 1e-7
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class LossWeights:
    w_content: float = 1.0
    w_adversarial: float = 1e-3

    def __post_init__(self):
        if self.w_content < 0 or self.w_adversarial < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w_content == 0 and self.w_adversarial == 0:
            raise ValueError("at least one loss weight must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class FeatureExtractor(nn.Module):
    """Frozen convolutional feature tap.

    Grayscale input is replicated to three channels and standardized with
    ``mean``/``std`` before passing through ``layers``; the output of the
    last layer is the tap.
    """

    def __init__(self, layers: nn.Sequential, tap: str = "", mean=IMAGENET_MEAN, std=IMAGENET_STD, source=None):
        super().__init__()
        self.layers = layers
        self.tap = tap
        self.source = source
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))
        pools = sum(isinstance(m, (nn.MaxPool2d, nn.AvgPool2d)) for m in layers.modules())
        self.min_size = 2 ** pools
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always eval: no dropout/batch-norm state to update
        return super().train(False)

    def forward(self, x):
        if x.shape[-1] < self.min_size or x.shape[-2] < self.min_size:
            raise ShapeError(f"input {tuple(x.shape[-2:])} smaller than extractor minimum {self.min_size}")
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        return self.layers(x)


def _vgg19_layer_names(features: nn.Sequential) -> list[str]:
    names, block, conv = [], 1, 0
    for m in features:
        if isinstance(m, nn.Conv2d):
            conv += 1
            names.append(f"conv{block}_{conv}")
        elif isinstance(m, nn.ReLU):
            names.append(f"relu{block}_{conv}")
        else:
            names.append(f"pool{block}")
            block, conv = block + 1, 0
    return names


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def vgg19_extractor(weights_path=None, tap: str = "conv5_4") -> FeatureExtractor:
    """VGG19 feature tap, by default the pre-activation output of conv5_4.

    ``weights_path`` is a torch state dict for either the full torchvision
    VGG19 or its ``features`` submodule.  Without it the network is randomly
    initialized, which is only meaningful for shape tests.
    """
    from torchvision.models import vgg19

    features = vgg19(weights=None).features
    source = None
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        state = {k.removeprefix("features."): v for k, v in state.items() if not k.startswith("classifier.")}
        features.load_state_dict(state)
        source = {"path": str(Path(weights_path)), "sha256": file_sha256(weights_path)}
    names = _vgg19_layer_names(features)
    if tap not in names:
        raise ValueError(f"unknown VGG19 layer {tap!r}")
    layers = nn.Sequential(*list(features)[: names.index(tap) + 1])
    return FeatureExtractor(layers, tap=tap, source=source)


def stub_extractor(seed: int = 0, channels=(8, 8)) -> FeatureExtractor:
    """Small random frozen conv tap used by the toy profile and tests."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        layers = nn.Sequential(
            nn.Conv2d(3, channels[0], 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels[0], channels[1], 3, padding=1),
        )
    return FeatureExtractor(layers, tap="stub_conv2", source={"stub_seed": seed})


def _check_probs(p):
    p = torch.as_tensor(p)
    if torch.isnan(p).any() or (p <= 0).any() or (p > 1).any():
        raise DomainError("probabilities must lie in (0, 1]")
    return p.clamp(EPS, 1 - EPS)


def content_loss(sr, hr, f: FeatureExtractor):
    if sr.shape != hr.shape:
        raise ShapeError(f"shape mismatch {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return torch.mean((f(sr) - f(hr)) ** 2)


def adversarial_loss_g(d_sr):
    """Mean of -log D(SR)."""
    return torch.mean(-torch.log(_check_probs(d_sr)))


def discriminator_loss(d_hr, d_sr):
    """Binary cross-entropy with targets 1 for HR and 0 for SR, averaged over both terms."""
    d_hr, d_sr = _check_probs(d_hr), _check_probs(d_sr)
    return 0.5 * (torch.mean(-torch.log(d_hr)) + torch.mean(-torch.log1p(-d_sr)))


def pixel_mse(sr, hr):
    sr, hr = torch.as_tensor(sr), torch.as_tensor(hr)
    if sr.shape != hr.shape:
        raise ShapeError(f"shape mismatch {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return torch.mean((sr - hr) ** 2)


def perceptual_loss(sr, hr, d_sr, f: FeatureExtractor | None, w: LossWeights = LossWeights()):
    total = 0.0
    if w.w_content:
        total = total + w.w_content * content_loss(sr, hr, f)
    if w.w_adversarial:
        total = total + w.w_adversarial * adversarial_loss_g(d_sr)
    return torch.as_tensor(total)
