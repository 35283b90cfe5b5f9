"""Through-plane super-resolution of anisotropic volumes.

Both through-plane slice stacks (height x depth and width x depth) are
super-resolved along depth by a generator that upscales the first spatial
axis only; slices are transposed so depth leads, restacked, and the two
resulting volumes are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataset import Volume, extract_throughplane_slices, stack_throughplane
from .degradation import resize_axis
from .errors import FuseError, PlanError
from .model import ALLOWED_TOTALS


@dataclass(frozen=True, eq=False)
class VolumeSRPlan:
    depth_factor: int
    generator: object  # Generator-like module, or a checkpoint path
    volume: Volume

    def __post_init__(self):
        if self.depth_factor not in ALLOWED_TOTALS:
            raise PlanError(f"depth_factor must be one of {ALLOWED_TOTALS}, got {self.depth_factor}")


def _scale_of(g) -> tuple[int, int]:
    scale = getattr(g, "scale", None)
    if scale is None:
        raise PlanError("generator does not declare its upscale factors")
    return tuple(scale)


def _check_factor(g, depth_factor: int | None) -> int:
    fh, fw = _scale_of(g)
    if fw != 1:
        raise PlanError(f"generator scale ({fh}, {fw}) also upscales the second axis; need (f, 1)")
    if depth_factor is not None and fh != depth_factor:
        raise PlanError(f"generator upscales depth by {fh}, plan requires {depth_factor}")
    return fh


def _sr_batch(g, batch: np.ndarray) -> np.ndarray:
    if isinstance(g, nn.Module):
        params = list(g.parameters())
        # parameter-free modules (stubs) keep the input precision
        dtype = params[0].dtype if params else torch.float64
        was_training = g.training
        g.eval()
        try:
            with torch.no_grad():
                out = g(torch.as_tensor(batch[:, None], dtype=dtype))
        finally:
            g.train(was_training)
    else:
        with torch.no_grad():
            out = g(torch.as_tensor(batch[:, None], dtype=torch.float32))
    out = out.detach().numpy() if isinstance(out, torch.Tensor) else np.asarray(out)
    return out[:, 0].astype(np.float64)


def superresolve_stack(v: Volume, axis: str, g, depth_factor: int | None = None, batch_size: int = 16) -> Volume:
    """Super-resolve every through-plane slice along ``axis`` and restack.

    Output shape is (H, W, D * f); depth spacing is divided by f.
    """
    f = _check_factor(g, depth_factor)
    slices = extract_throughplane_slices(v, axis)
    # (n, A, D) -> (n, D, A): depth becomes the upscaled first axis
    planes = np.stack([s.pixels for s in slices]).transpose(0, 2, 1)
    out = []
    for start in range(0, len(planes), batch_size):
        sr = _sr_batch(g, planes[start : start + batch_size])
        expected = (sr.shape[0], planes.shape[1] * f, planes.shape[2])
        if sr.shape != expected:
            raise PlanError(f"generator produced {sr.shape}, expected {expected}")
        out.append(sr)
    restacked = np.concatenate(out).transpose(0, 2, 1)
    voxels = np.clip(stack_throughplane(list(restacked), axis), 0.0, 1.0)
    sh, sw, sd = v.spacing
    return replace(v, voxels=voxels, spacing=(sh, sw, sd / f))


def fuse_volumes(v1: Volume, v2: Volume) -> Volume:
    """Voxel-wise mean of two aligned volumes."""
    if v1.shape != v2.shape:
        raise FuseError(f"shape mismatch {v1.shape} vs {v2.shape}")
    if not np.allclose(v1.spacing, v2.spacing, rtol=1e-9, atol=0):
        raise FuseError(f"spacing mismatch {v1.spacing} vs {v2.spacing}")
    return replace(v1, voxels=(v1.voxels + v2.voxels) / 2.0)


def run_experiment3(plan: VolumeSRPlan, batch_size: int = 16) -> dict:
    """SR both through-plane stacks and fuse them.

    Returns ``{"fused": Volume, "per_axis": (hd_volume, wd_volume)}``.
    """
    g = plan.generator
    if isinstance(g, (str, Path)):
        from .training import load_generator

        g, _ = load_generator(g)
    _check_factor(g, plan.depth_factor)
    v_hd = superresolve_stack(plan.volume, "hd", g, plan.depth_factor, batch_size)
    v_wd = superresolve_stack(plan.volume, "wd", g, plan.depth_factor, batch_size)
    return {"fused": fuse_volumes(v_hd, v_wd), "per_axis": (v_hd, v_wd)}


def bicubic_volume(v: Volume, depth_factor: int, a: float = -0.5, boundary: str = "edge") -> Volume:
    """Baseline: bicubic interpolation along depth only."""
    if depth_factor == 1:
        return replace(v, voxels=v.voxels.copy())
    voxels = resize_axis(v.voxels, 2, v.shape[2] * depth_factor, False, a, boundary)
    sh, sw, sd = v.spacing
    return replace(v, voxels=np.clip(voxels, 0.0, 1.0), spacing=(sh, sw, sd / depth_factor))


def degrade_volume(v: Volume, depth_factor: int, antialias: bool = True, a: float = -0.5, boundary="edge") -> Volume:
    """Synthesize a thick-slice volume by downsampling depth only."""
    D = v.shape[2]
    if D % depth_factor:
        raise PlanError(f"depth {D} not divisible by {depth_factor}")
    if depth_factor == 1:
        return replace(v, voxels=v.voxels.copy())
    voxels = resize_axis(v.voxels, 2, D // depth_factor, antialias, a, boundary)
    sh, sw, sd = v.spacing
    return replace(v, voxels=np.clip(voxels, 0.0, 1.0), spacing=(sh, sw, sd * depth_factor))
