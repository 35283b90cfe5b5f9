"""Synthetic LR generation and the bicubic interpolation baseline.

Resampling is separable: each axis is resampled by a dense (n_out, n_in)
weight matrix built from the Keys cubic kernel, so a 2D resize is
``M_h @ img @ M_w.T``.  Sample centres follow the half-pixel convention
(``x_in = (x_out + 0.5) / scale - 0.5``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dataset import SliceImage
from .errors import DegradeError

BOUNDARY_MODES = ("edge", "reflect")


@dataclass(frozen=True)
class DegradationSpec:
    factor_h: int = 4
    factor_w: int = 4
    kernel: str = "bicubic"
    antialias: bool = True
    a: float = -0.5
    boundary: str = "edge"

    def __post_init__(self):
        for name in ("factor_h", "factor_w"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.kernel != "bicubic":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")

    @property
    def isotropic(self) -> bool:
        return self.factor_h == self.factor_w

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def keys_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel; ``a = -0.5`` reproduces quadratics."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _boundary_index(idx: np.ndarray, n: int, mode: str) -> np.ndarray:
    if mode == "edge":
        return np.clip(idx, 0, n - 1)
    # half-sample symmetric: -1 -> 0, n -> n-1
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


@lru_cache(maxsize=256)
def resize_matrix(
    n_in: int, n_out: int, antialias: bool = True, a: float = -0.5, boundary: str = "edge"
) -> np.ndarray:
    """Dense 1D resampling operator of shape (n_out, n_in); rows sum to 1."""
    scale = n_out / n_in
    stretch = 1.0 / scale if (antialias and scale < 1.0) else 1.0
    support = 2.0 * stretch
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    centres = (rows + 0.5) / scale - 0.5
    lo = np.floor(centres - support).astype(int)
    taps = int(np.ceil(2 * support)) + 2
    for t in range(taps):
        j = lo + t
        w = keys_kernel((j - centres) / stretch, a)
        np.add.at(m, (rows, _boundary_index(j, n_in, boundary)), w)
    m /= m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


def resize_axis(arr: np.ndarray, axis: int, n_out: int, antialias=True, a=-0.5, boundary="edge") -> np.ndarray:
    """Resample one axis of an array of any rank."""
    arr = np.asarray(arr, dtype=np.float64)
    m = resize_matrix(arr.shape[axis], n_out, antialias, a, boundary)
    moved = np.moveaxis(arr, axis, -1)
    return np.moveaxis(moved @ m.T, -1, axis)


def resize(arr: np.ndarray, out_h: int, out_w: int, antialias=True, a=-0.5, boundary="edge") -> np.ndarray:
    """Separable bicubic resize of the last two axes, unclamped."""
    arr = np.asarray(arr, dtype=np.float64)
    mh = resize_matrix(arr.shape[-2], out_h, antialias, a, boundary)
    mw = resize_matrix(arr.shape[-1], out_w, antialias, a, boundary)
    return mh @ arr @ mw.T


def downsample_array(px: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Array form of :func:`downsample`; works on (..., h, w) batches."""
    px = np.asarray(px, dtype=np.float64)
    h, w = px.shape[-2:]
    if h % spec.factor_h or w % spec.factor_w:
        raise DegradeError(
            f"image {h}x{w} not divisible by factors ({spec.factor_h}, {spec.factor_w}); crop_or_pad first"
        )
    if spec.factor_h == 1 and spec.factor_w == 1:
        return px.copy()
    out = resize(px, h // spec.factor_h, w // spec.factor_w, spec.antialias, spec.a, spec.boundary)
    return np.clip(out, 0.0, 1.0)


def upsample_array(px: np.ndarray, factor_h: int, factor_w: int, a=-0.5, boundary="edge") -> np.ndarray:
    """Array form of :func:`bicubic_upsample`; works on (..., h, w) batches."""
    if factor_h < 1 or factor_w < 1:
        raise ValueError("upsampling factors must be >= 1")
    px = np.asarray(px, dtype=np.float64)
    if factor_h == 1 and factor_w == 1:
        return px.copy()
    h, w = px.shape[-2:]
    return np.clip(resize(px, h * factor_h, w * factor_w, False, a, boundary), 0.0, 1.0)


def downsample(img: SliceImage, spec: DegradationSpec) -> SliceImage:
    return SliceImage(downsample_array(img.pixels, spec), img.provenance)


def bicubic_upsample(img: SliceImage, factor_h: int, factor_w: int, a=-0.5, boundary="edge") -> SliceImage:
    return SliceImage(upsample_array(img.pixels, factor_h, factor_w, a, boundary), img.provenance)


def make_pair(img: SliceImage, spec: DegradationSpec) -> tuple[SliceImage, SliceImage]:
    """(lr, hr) training pair; ``hr`` is ``img`` itself."""
    return downsample(img, spec), img
