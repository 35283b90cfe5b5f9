"""Volume ingestion, patient-level splitting and slice extraction.

Everything downstream works on float images in [0, 1].  Volumes are stored
as ``voxels[h, w, d]`` where ``d`` is the acquisition (slice) direction, i.e.
the coarse axis of an anisotropic MR series.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IngestError, NormalizeError, SplitError

log = logging.getLogger(__name__)

PLANES = ("axial", "sagittal", "coronal")
SLICE_PLANES = ("in_plane", "through_hd", "through_wd")
THROUGH_AXES = ("hd", "wd")

VOLUME_FORMAT = "mrvol"
VOLUME_FORMAT_VERSION = 1
VOLUME_SUFFIX = ".mrvol"


@dataclass(frozen=True, eq=False)
class Volume:
    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    patient_id: str = ""
    acquisition_plane: str = "axial"

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D grid, got shape {vox.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if self.acquisition_plane not in PLANES:
            raise ValueError(f"unknown acquisition plane {self.acquisition_plane!r}")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class Provenance:
    volume_id: str = ""
    plane: str = "in_plane"
    index: int = 0


@dataclass(frozen=True, eq=False)
class SliceImage:
    pixels: np.ndarray
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or min(px.shape) < 1:
            raise ValueError(f"slice must be a non-empty 2D image, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("slice pixels must lie in [0, 1]")
        if self.provenance.plane not in SLICE_PLANES:
            raise ValueError(f"unknown slice plane {self.provenance.plane!r}")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class DatasetSplit:
    train_patients: frozenset
    test_patients: frozenset

    def __post_init__(self):
        overlap = set(self.train_patients) & set(self.test_patients)
        if overlap:
            raise SplitError(f"patients in both train and test: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {"train": sorted(self.train_patients), "test": sorted(self.test_patients)}


@dataclass(frozen=True)
class SliceRecord:
    """One line of the dataset manifest."""

    path: str
    patient_id: str
    plane: str
    index: int
    h: int
    w: int


# -- ingestion ---------------------------------------------------------------


def load_volume(path) -> Volume:
    """Read a DICOM series directory or a portable ``.mrvol`` file.

    Intensities are returned as stored (no rescaling); spacing comes from the
    file metadata.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file or directory")
    if path.is_dir():
        return _load_dicom_series(path)
    if path.suffix == VOLUME_SUFFIX:
        return _load_portable(path)
    raise IngestError(f"{path}: unsupported volume file (expected a DICOM directory or {VOLUME_SUFFIX})")


def save_volume(v: Volume, path) -> Path:
    """Write ``v`` in the portable format: one JSON header line, then raw float64 voxels (C order)."""
    path = Path(path)
    header = {
        "format": VOLUME_FORMAT,
        "version": VOLUME_FORMAT_VERSION,
        "H": v.shape[0],
        "W": v.shape[1],
        "D": v.shape[2],
        "spacing": list(v.spacing),
        "patient_id": v.patient_id,
        "acquisition_plane": v.acquisition_plane,
        "dtype": "<f8",
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(v.voxels, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data.tobytes())
    return path


def _load_portable(path: Path) -> Volume:
    try:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            raw = fh.read()
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IngestError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format") != VOLUME_FORMAT or header.get("version") != VOLUME_FORMAT_VERSION:
        raise IngestError(f"{path}: not a {VOLUME_FORMAT} v{VOLUME_FORMAT_VERSION} file")
    try:
        shape = (int(header["H"]), int(header["W"]), int(header["D"]))
        dtype = np.dtype(header.get("dtype", "<f8"))
        expected = int(np.prod(shape)) * dtype.itemsize
        if len(raw) != expected:
            raise IngestError(f"{path}: expected {expected} data bytes, found {len(raw)}")
        voxels = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(np.float64)
        return Volume(
            voxels=voxels,
            spacing=tuple(header["spacing"]),
            patient_id=str(header.get("patient_id", "")),
            acquisition_plane=header.get("acquisition_plane", "axial"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"{path}: corrupt volume ({exc})") from exc


def _plane_from_orientation(iop) -> str:
    row = np.asarray(iop[:3], dtype=float)
    col = np.asarray(iop[3:6], dtype=float)
    normal = np.abs(np.cross(row, col))
    return ("sagittal", "coronal", "axial")[int(np.argmax(normal))]


def _load_dicom_series(path: Path) -> Volume:
    import pydicom
    from pydicom.errors import InvalidDicomError

    datasets = []
    for f in sorted(p for p in path.iterdir() if p.is_file()):
        try:
            datasets.append(pydicom.dcmread(f))
        except InvalidDicomError:
            log.debug("skipping non-DICOM file %s", f)
        except Exception as exc:
            raise IngestError(f"{f}: corrupt DICOM file ({exc})") from exc
    if not datasets:
        raise IngestError(f"{path}: no DICOM files found")

    sizes = {(int(ds.Rows), int(ds.Columns)) for ds in datasets}
    if len(sizes) > 1:
        raise IngestError(f"{path}: inconsistent slice dimensions {sorted(sizes)}")

    iop = getattr(datasets[0], "ImageOrientationPatient", None)
    if iop is not None and all(hasattr(ds, "ImagePositionPatient") for ds in datasets):
        normal = np.cross(np.asarray(iop[:3], float), np.asarray(iop[3:6], float))
        positions = [float(np.dot(normal, np.asarray(ds.ImagePositionPatient, float))) for ds in datasets]
        order = np.argsort(positions, kind="stable")
        positions = np.asarray(positions)[order]
    else:
        order = np.argsort([int(getattr(ds, "InstanceNumber", i)) for i, ds in enumerate(datasets)], kind="stable")
        positions = None
    datasets = [datasets[i] for i in order]

    try:
        voxels = np.stack([ds.pixel_array.astype(np.float64) for ds in datasets], axis=-1)
    except Exception as exc:
        raise IngestError(f"{path}: cannot decode pixel data ({exc})") from exc

    first = datasets[0]
    sh, sw = (float(x) for x in getattr(first, "PixelSpacing", (1.0, 1.0)))
    if positions is not None and len(positions) > 1 and np.ptp(positions) > 0:
        sd = float(np.median(np.diff(positions)))
    else:
        sd = float(getattr(first, "SpacingBetweenSlices", 0) or getattr(first, "SliceThickness", 0) or 1.0)
    plane = _plane_from_orientation(iop) if iop is not None else "axial"
    return Volume(
        voxels=voxels,
        spacing=(sh, sw, sd),
        patient_id=str(getattr(first, "PatientID", path.name)),
        acquisition_plane=plane,
    )


# -- normalization and splitting ---------------------------------------------


def normalize_intensity(v: Volume) -> Volume:
    """Per-volume min-max scaling to [0, 1]; a constant volume maps to zeros."""
    vox = np.asarray(v.voxels, dtype=np.float64)
    if not np.all(np.isfinite(vox)):
        raise NormalizeError(f"volume {v.patient_id!r} has non-finite intensities")
    lo, hi = vox.min(), vox.max()
    if hi == lo:
        out = np.zeros_like(vox)
    else:
        out = np.clip((vox - lo) / (hi - lo), 0.0, 1.0)
    return replace(v, voxels=out)


def split_patients(
    manifest: Iterable[tuple[str, str]],
    train_counts: dict[str, int],
    seed: int = 0,
) -> DatasetSplit:
    """Patient-level train/test split.

    ``manifest`` holds ``(patient_id, dataset_tag)`` pairs.  For each tag (in
    sorted order) the lexicographically sorted IDs are shuffled with a seeded
    generator and the first ``train_counts[tag]`` go to training; everything
    else, including tags absent from ``train_counts``, goes to test.
    """
    by_tag: dict[str, set[str]] = {}
    for pid, tag in manifest:
        by_tag.setdefault(tag, set()).add(pid)
    seen: dict[str, str] = {}
    for tag, ids in by_tag.items():
        for pid in ids:
            if seen.setdefault(pid, tag) != tag:
                raise SplitError(f"patient {pid!r} listed under two datasets")

    rng = np.random.default_rng(seed)
    train, test = set(), set()
    for tag in sorted(set(by_tag) | set(train_counts)):
        ids = sorted(by_tag.get(tag, ()))
        n = int(train_counts.get(tag, 0))
        if n < 0 or n > len(ids):
            raise SplitError(f"dataset {tag!r}: requested {n} training patients, {len(ids)} available")
        perm = rng.permutation(len(ids))
        train.update(ids[i] for i in perm[:n])
        test.update(ids[i] for i in perm[n:])
    return DatasetSplit(frozenset(train), frozenset(test))


# -- slicing -----------------------------------------------------------------


def extract_inplane_slices(v: Volume) -> list[SliceImage]:
    return [
        SliceImage(v.voxels[:, :, k].copy(), Provenance(v.patient_id, "in_plane", k))
        for k in range(v.shape[2])
    ]


def extract_throughplane_slices(v: Volume, axis: str) -> list[SliceImage]:
    """Cut through-plane slices with depth as the second image axis.

    ``"hd"`` yields W slices of shape (H, D) indexed by width position;
    ``"wd"`` yields H slices of shape (W, D) indexed by height position.
    """
    if axis == "hd":
        return [
            SliceImage(v.voxels[:, j, :].copy(), Provenance(v.patient_id, "through_hd", j))
            for j in range(v.shape[1])
        ]
    if axis == "wd":
        return [
            SliceImage(v.voxels[i, :, :].copy(), Provenance(v.patient_id, "through_wd", i))
            for i in range(v.shape[0])
        ]
    raise ValueError(f"axis must be one of {THROUGH_AXES}, got {axis!r}")


def stack_throughplane(slices: Sequence, axis: str) -> np.ndarray:
    """Inverse of :func:`extract_throughplane_slices` on the pixel arrays.

    Accepts SliceImages or bare 2D arrays, ordered by slice index.
    """
    planes = [s.pixels if isinstance(s, SliceImage) else np.asarray(s) for s in slices]
    if axis == "hd":
        return np.stack(planes, axis=1)
    if axis == "wd":
        return np.stack(planes, axis=0)
    raise ValueError(f"axis must be one of {THROUGH_AXES}, got {axis!r}")


def crop_or_pad(img: SliceImage, target_h: int, target_w: int) -> SliceImage:
    """Center-crop or symmetrically zero-pad each axis to the target size."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target dimensions must be >= 1")
    return SliceImage(_crop_or_pad_array(img.pixels, target_h, target_w), img.provenance)


def _crop_or_pad_array(px: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    out = px
    for axis, target in ((0, target_h), (1, target_w)):
        size = out.shape[axis]
        if size > target:
            start = (size - target) // 2
            out = np.take(out, np.arange(start, start + target), axis=axis)
        elif size < target:
            before = (target - size) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, target - size - before)
            out = np.pad(out, pad, mode="constant", constant_values=0.0)
    return np.array(out, dtype=np.float64)


# -- manifest ----------------------------------------------------------------


def slice_records(v: Volume, volume_path, planes: Sequence[str] = ("in_plane",)) -> list[SliceRecord]:
    """Manifest records for every slice of ``v`` in the requested planes."""
    H, W, D = v.shape
    dims = {"in_plane": (D, H, W), "through_hd": (W, H, D), "through_wd": (H, W, D)}
    records = []
    for plane in planes:
        n, h, w = dims[plane]
        records.extend(SliceRecord(str(volume_path), v.patient_id, plane, k, h, w) for k in range(n))
    return records


def write_manifest(records: Iterable[SliceRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.__dict__, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> list[SliceRecord]:
    with open(path) as fh:
        return [SliceRecord(**json.loads(line)) for line in fh if line.strip()]


def slice_from_record(record: SliceRecord, cache: dict | None = None) -> SliceImage:
    """Materialize one manifest record, optionally reusing loaded volumes."""
    if cache is not None and record.path in cache:
        v = cache[record.path]
    else:
        v = load_volume(record.path)
        if cache is not None:
            cache[record.path] = v
    if record.plane == "in_plane":
        px = v.voxels[:, :, record.index]
    elif record.plane == "through_hd":
        px = v.voxels[:, record.index, :]
    else:
        px = v.voxels[record.index, :, :]
    return SliceImage(px.copy(), Provenance(record.patient_id, record.plane, record.index))
