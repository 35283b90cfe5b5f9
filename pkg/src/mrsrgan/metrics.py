"""PSNR / SSIM and Table-style method comparison reports."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import SliceImage
from .degradation import DegradationSpec, downsample_array, upsample_array
from .errors import EvalError, ShapeError


class PSNRResult(enum.Enum):
    """Returned by :func:`psnr` when the images are identical (MSE = 0)."""

    IDENTICAL = "identical"

    def __repr__(self):
        return "IDENTICAL"


IDENTICAL = PSNRResult.IDENTICAL


@dataclass(frozen=True)
class MetricParams:
    data_range: float = 1.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03

    def __post_init__(self):
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 3")
        if self.ssim_k1 <= 0 or self.ssim_k2 <= 0 or self.data_range <= 0:
            raise ValueError("ssim_k1, ssim_k2 and data_range must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, SliceImage) else np.asarray(x, dtype=np.float64)


def psnr(a, b, p: MetricParams = MetricParams()):
    """PSNR in dB, or ``IDENTICAL`` when the images match exactly."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(p.data_range**2 / mse)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_map(a, b, p: MetricParams = MetricParams()) -> np.ndarray:
    """Local SSIM over every fully contained Gaussian window (no padding)."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < p.ssim_window:
        raise ShapeError(f"image {a.shape} smaller than SSIM window {p.ssim_window}")
    g = gaussian_window(p.ssim_window, p.ssim_sigma)
    c1 = (p.ssim_k1 * p.data_range) ** 2
    c2 = (p.ssim_k2 * p.data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, p: MetricParams = MetricParams()) -> float:
    return float(np.clip(np.mean(ssim_map(a, b, p)), -1.0, 1.0))


# -- method comparison -------------------------------------------------------


@dataclass(frozen=True)
class Method:
    """An SR method under test.

    ``degradation`` synthesizes the method's LR input from the HR slice and
    ``sr`` maps a batch of LR arrays ``(n, h, w)`` back to HR size.
    """

    name: str
    degradation: DegradationSpec
    sr: Callable[[np.ndarray], np.ndarray]


def bicubic_method(name: str, spec: DegradationSpec) -> Method:
    def sr(lr):
        return upsample_array(lr, spec.factor_h, spec.factor_w, spec.a, spec.boundary)

    return Method(name, spec, sr)


@dataclass
class MetricsRow:
    method_name: str
    mean_psnr_db: float | None
    mean_ssim: float
    n_images: int
    n_identical: int = 0


@dataclass
class MetricsReport:
    rows: list[MetricsRow]
    per_image: list[dict] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    params: MetricParams = field(default_factory=MetricParams)

    def row(self, name: str) -> MetricsRow:
        for r in self.rows:
            if r.method_name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "rows": [r.__dict__ for r in self.rows],
            "errors": self.errors,
        }

    def to_text(self) -> str:
        """Methods as columns, metrics as rows, pipe-delimited."""
        names = [r.method_name for r in self.rows]

        def fmt(v, digits):
            return "identical" if v is None else f"{v:.{digits}f}"

        lines = [
            " | ".join([""] + names),
            " | ".join(["PSNR [dB]"] + [fmt(r.mean_psnr_db, 2) for r in self.rows]),
            " | ".join(["SSIM"] + [fmt(r.mean_ssim, 2) for r in self.rows]),
            " | ".join(["n_images"] + [str(r.n_images) for r in self.rows]),
        ]
        for name, msg in self.errors.items():
            lines.append(f"# {name} failed: {msg}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "metrics") -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out_dir / f"{stem}.json",
            "table": out_dir / f"{stem}_table.txt",
            "per_image": out_dir / f"{stem}_per_image.csv",
        }
        paths["json"].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        paths["table"].write_text(self.to_text())
        with open(paths["per_image"], "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["method", "image_id", "psnr_db", "ssim"])
            writer.writeheader()
            for rec in self.per_image:
                writer.writerow({**rec, "psnr_db": "identical" if rec["psnr_db"] is IDENTICAL else rec["psnr_db"]})
        return paths


def image_id(img: SliceImage, fallback: int) -> str:
    prov = img.provenance
    if prov.volume_id:
        return f"{prov.volume_id}/{prov.plane}/{prov.index:04d}"
    return f"{fallback:06d}"


def evaluate_methods(
    test_set: Sequence[SliceImage],
    methods: Sequence[Method],
    p: MetricParams = MetricParams(),
    on_error: str = "raise",
    batch_size: int = 16,
) -> MetricsReport:
    """Per-method mean PSNR/SSIM over ``test_set``.

    Identical-image PSNR cases are excluded from the PSNR mean and counted in
    ``n_identical``.  Per-image values are sorted by image id before
    averaging.  With ``on_error="record"`` a failing method is listed in
    ``report.errors`` instead of aborting the whole evaluation.
    """
    if not test_set:
        raise EvalError("<all>", "empty test set")
    ids = [image_id(img, i) for i, img in enumerate(test_set)]
    hr = [img.pixels for img in test_set]
    order = np.argsort(ids, kind="stable")
    report = MetricsReport(rows=[], params=p)

    for m in methods:
        try:
            per = _evaluate_one(m, hr, ids, p, batch_size)
        except EvalError as exc:
            if on_error == "raise":
                raise
            report.errors[m.name] = str(exc)
            continue
        per = [per[i] for i in order]
        psnrs = [r["psnr_db"] for r in per if r["psnr_db"] is not IDENTICAL]
        report.rows.append(
            MetricsRow(
                method_name=m.name,
                mean_psnr_db=float(np.mean(psnrs)) if psnrs else None,
                mean_ssim=float(np.mean([r["ssim"] for r in per])),
                n_images=len(per),
                n_identical=len(per) - len(psnrs),
            )
        )
        report.per_image.extend(per)
    return report


def _evaluate_one(m: Method, hr: list, ids: list, p: MetricParams, batch_size: int) -> list[dict]:
    results = []
    # group by shape so batched SR functions see homogeneous stacks
    for start in range(0, len(hr), batch_size):
        chunk = hr[start : start + batch_size]
        shapes = {c.shape for c in chunk}
        groups = [[c for c in chunk if c.shape == s] for s in shapes] if len(shapes) > 1 else [chunk]
        outputs = {}
        for group in groups:
            try:
                lr = downsample_array(np.stack(group), m.degradation)
                sr = np.asarray(m.sr(lr), dtype=np.float64)
            except Exception as exc:
                raise EvalError(m.name, f"{type(exc).__name__}: {exc}") from exc
            if sr.shape != (len(group),) + group[0].shape:
                raise EvalError(m.name, f"output shape {sr.shape[1:]} != HR shape {group[0].shape}")
            for c, s in zip(group, sr):
                outputs[id(c)] = s
        for k, c in enumerate(chunk):
            s = outputs[id(c)]
            results.append(
                {"method": m.name, "image_id": ids[start + k], "psnr_db": psnr(s, c, p), "ssim": ssim(s, c, p)}
            )
    return results
