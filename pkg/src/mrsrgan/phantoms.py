"""Synthetic MR-like volumes for smoke tests and the toy profile.

Each phantom is a soft-edged body ellipsoid with a few internal ellipsoidal
structures of differing intensity plus smooth low-amplitude texture, stored
in a raw (unnormalized) 12-bit-like range.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .dataset import Volume


def _ellipsoid(grid, centre, radii, softness=0.08):
    r = np.sqrt(sum(((g - c) / s) ** 2 for g, c, s in zip(grid, centre, radii)))
    return 1.0 / (1.0 + np.exp((r - 1.0) / softness))


def phantom_volume(
    shape=(64, 64, 16),
    spacing=(0.5, 0.5, 3.6),
    seed: int = 0,
    patient_id: str | None = None,
    n_structures: int = 5,
    texture: float = 0.2,
) -> Volume:
    rng = np.random.default_rng(seed)
    H, W, D = shape
    grid = np.meshgrid(
        np.linspace(-1, 1, H), np.linspace(-1, 1, W), np.linspace(-1, 1, D), indexing="ij"
    )
    vol = 0.55 * _ellipsoid(grid, (0, 0, 0), (0.85, 0.75, 1.2))
    for _ in range(n_structures):
        centre = rng.uniform(-0.45, 0.45, size=3)
        radii = rng.uniform(0.12, 0.35, size=3) * np.array([1.0, 1.0, 2.5])
        vol += rng.uniform(-0.25, 0.4) * _ellipsoid(grid, centre, radii, softness=rng.uniform(0.03, 0.1))
    noise = gaussian_filter(rng.standard_normal(shape), sigma=(1.2, 1.2, 0.5))
    vol += texture * noise / (np.abs(noise).max() + 1e-12)
    vol = np.clip(vol, 0.0, None) * 3000.0 + 20.0
    return Volume(vol, spacing, patient_id or f"phantom-{seed:04d}", "axial")
