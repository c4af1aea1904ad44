"""CT and label volumes: loading, HU clipping and resampling.

Arrays are indexed ``[i, j, k]`` in file (NIfTI) order. The superior-inferior
axis is recorded per volume; ``si_sign=+1`` means the index grows toward the
head.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import taxonomy as tx
from .errors import DataError, FormatError, ParameterError, ShapeError, TaxonomyError
from .nifti import NiftiFormatError, read_nifti, write_nifti

log = logging.getLogger(__name__)

HU_CLIP = (-1000.0, 2000.0)
NIFTI_SUFFIXES = (".nii.gz", ".nii")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _orientation(affine) -> tuple[int, int, bool]:
    if affine is None:
        return 2, 1, True
    col = np.asarray(affine)[2, :3]
    axis = int(np.argmax(np.abs(col)))
    return axis, (1 if col[axis] >= 0 else -1), False


@dataclass(frozen=True)
class CtVolume:
    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    si_axis: int | None = 2
    si_sign: int = 1
    orientation_assumed: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"CT data must be a non-empty 3D grid, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ParameterError(f"spacings must be positive, got {self.spacing}")
        if not np.all(np.isfinite(data)):
            raise DataError("CT volume contains non-finite HU values")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "CtVolume":
        return replace(self, data=data)


@dataclass(frozen=True)
class LabelSet:
    """Per-class binary masks packed one bit per class into a ``uint64`` grid."""

    bits: np.ndarray
    reliable: np.ndarray = field(default=None)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    si_axis: int | None = 2
    si_sign: int = 1

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 3:
            raise ShapeError(f"label grid must be 3D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits.astype(np.uint64, copy=False)))
        if self.reliable is None:
            rel = self.present()
        else:
            rel = np.asarray(self.reliable, dtype=bool)
            if rel.shape != (tx.NUM_CLASSES,):
                raise ShapeError(f"reliable flags must have length {tx.NUM_CLASSES}")
        object.__setattr__(self, "reliable", _freeze(rel.copy()))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @classmethod
    def from_masks(cls, masks: dict, shape=None, **kwargs) -> "LabelSet":
        """Build from ``{class id or name: bool grid}``."""
        if shape is None:
            shape = next(iter(masks.values())).shape
        bits = np.zeros(shape, dtype=np.uint64)
        for key, m in masks.items():
            cid = tx.class_id(key) if isinstance(key, str) else int(key)
            m = np.asarray(m, dtype=bool)
            if m.shape != tuple(shape):
                raise ShapeError(f"mask for class {key} has shape {m.shape}, expected {tuple(shape)}")
            bits[m] |= np.uint64(1 << cid)
        return cls(bits=bits, **kwargs)

    @property
    def shape(self):
        return self.bits.shape

    def mask(self, cid) -> np.ndarray:
        if isinstance(cid, str):
            cid = tx.class_id(cid)
        return (self.bits & np.uint64(1 << int(cid))) != 0

    def union(self, bitmask: int) -> np.ndarray:
        return (self.bits & np.uint64(bitmask)) != 0

    @property
    def soft(self) -> np.ndarray:
        return self.union(tx.SOFT_BITS)

    @property
    def bone(self) -> np.ndarray:
        return self.union(tx.BONE_BITS)

    @property
    def roi(self) -> np.ndarray:
        return self.bits != 0

    @property
    def vertebrae(self) -> np.ndarray:
        return self.union(tx.VERTEBRA_BITS)

    @property
    def ribs_left(self) -> np.ndarray:
        return self.union(tx.RIB_LEFT_BITS)

    @property
    def ribs_right(self) -> np.ndarray:
        return self.union(tx.RIB_RIGHT_BITS)

    def present(self) -> np.ndarray:
        combined = np.bitwise_or.reduce(self.bits, axis=None) if self.bits.size else np.uint64(0)
        combined = int(combined)
        return np.array([(combined >> c) & 1 == 1 for c in range(tx.NUM_CLASSES)])

    def voxel_counts(self) -> np.ndarray:
        return np.array([int(np.count_nonzero(self.mask(c))) for c in range(tx.NUM_CLASSES)])

    def with_reliable(self, reliable) -> "LabelSet":
        return replace(self, reliable=np.asarray(reliable, dtype=bool))


def load_ct(path) -> CtVolume:
    try:
        img = read_nifti(path)
    except NiftiFormatError as exc:
        raise FormatError(str(exc)) from exc
    if not all(s > 0 for s in img.pixdim):
        raise FormatError(f"{path}: non-positive voxel spacing {img.pixdim}")
    data = img.data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite HU values")
    axis, sign, assumed = _orientation(img.affine)
    if assumed:
        log.warning("%s: no orientation in header, assuming axis 2 is superior-inferior", path)
    origin = tuple(img.affine[:3, 3]) if img.affine is not None else (0.0, 0.0, 0.0)
    return CtVolume(data, img.pixdim, origin, si_axis=axis, si_sign=sign, orientation_assumed=assumed)


def _strip_suffix(name: str) -> str:
    for suf in NIFTI_SUFFIXES:
        if name.endswith(suf):
            return name[: -len(suf)]
    return name


def _read_class_map(class_map) -> dict[str, int]:
    if isinstance(class_map, (str, Path)):
        class_map = json.loads(Path(class_map).read_text(encoding="utf-8"))
    return {str(k): int(v) for k, v in class_map.items()}


def load_labels(path, taxonomy=tx.TAXONOMY, class_map=None, reference: CtVolume | None = None) -> LabelSet:
    """Load partial labels as a :class:`LabelSet`.

    ``path`` is either a directory of one binary NIfTI per class (file stem =
    class name) or a single integer label volume, in which case ``class_map``
    (a ``{name: value}`` dict or JSON path) or a sibling ``<stem>.json`` maps
    voxel values to classes. Classes not in the file get empty masks and are
    flagged unreliable.
    """
    path = Path(path)
    names = {c.name: c.id for c in taxonomy}
    masks: dict[int, np.ndarray] = {}
    affine = None
    shape = None

    def _read(p):
        try:
            return read_nifti(p)
        except NiftiFormatError as exc:
            raise FormatError(str(exc)) from exc

    if path.is_dir():
        for f in sorted(path.iterdir()):
            if not f.name.endswith(NIFTI_SUFFIXES):
                continue
            stem = _strip_suffix(f.name)
            if stem not in names:
                raise TaxonomyError(f"{f}: unknown class {stem!r}")
            img = _read(f)
            if shape is not None and img.data.shape != shape:
                raise ShapeError(f"{f}: shape {img.data.shape} differs from {shape}")
            shape, affine, spacing = img.data.shape, img.affine, img.pixdim
            masks[names[stem]] = img.data != 0
        if shape is None:
            raise FormatError(f"{path}: no label files found")
    else:
        img = _read(path)
        shape, affine, spacing = img.data.shape, img.affine, img.pixdim
        if class_map is None:
            sidecar = path.parent / (_strip_suffix(path.name) + ".json")
            if not sidecar.exists():
                raise FormatError(f"{path}: integer label volume needs a class map ({sidecar} not found)")
            class_map = sidecar
        cmap = _read_class_map(class_map)
        value_to_id = {}
        for name, value in cmap.items():
            if name not in names:
                raise TaxonomyError(f"class map names unknown class {name!r}")
            value_to_id[value] = names[name]
        labels = np.rint(img.data).astype(np.int64)
        values = np.unique(labels)
        unknown = [int(v) for v in values if v != 0 and int(v) not in value_to_id]
        if unknown:
            raise TaxonomyError(f"{path}: label values {unknown} not in class map")
        for v in values:
            if v != 0:
                masks[value_to_id[int(v)]] = labels == v

    if reference is not None and tuple(shape) != reference.shape:
        raise ShapeError(f"label grid {tuple(shape)} does not match CT grid {reference.shape}")

    bits = np.zeros(shape, dtype=np.uint64)
    for cid, m in masks.items():
        bits[m] |= np.uint64(1 << cid)
    axis, sign, _ = _orientation(affine)
    if reference is not None:
        axis, sign, spacing = reference.si_axis, reference.si_sign, reference.spacing
    return LabelSet(bits=bits, spacing=spacing, si_axis=axis, si_sign=sign)


def save_labels_dir(labels: LabelSet, directory, taxonomy=tx.TAXONOMY, affine=None) -> None:
    """Write one binary ``<class>.nii.gz`` per nonempty class."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    present = labels.present()
    for c in taxonomy:
        if present[c.id]:
            write_nifti(directory / f"{c.name}.nii.gz", labels.mask(c.id).astype(np.uint8),
                        spacing=labels.spacing, affine=affine)


def save_label_map(labels: LabelSet, path, taxonomy=tx.TAXONOMY, affine=None) -> None:
    """Write an integer label volume (value = class id + 1) plus its JSON sidecar.

    Overlapping voxels keep the lowest class id.
    """
    path = Path(path)
    out = np.zeros(labels.shape, dtype=np.uint8)
    cmap = {}
    for c in reversed(taxonomy):
        m = labels.mask(c.id)
        if m.any():
            out[m] = c.id + 1
            cmap[c.name] = c.id + 1
    write_nifti(path, out, spacing=labels.spacing, affine=affine)
    sidecar = path.parent / (_strip_suffix(path.name) + ".json")
    sidecar.write_text(json.dumps(dict(sorted(cmap.items(), key=lambda kv: kv[1])), indent=1), encoding="utf-8")


def clip_hu(v: CtVolume, lo: float = HU_CLIP[0], hi: float = HU_CLIP[1]) -> CtVolume:
    if not lo < hi:
        raise ParameterError(f"clip range must satisfy lo < hi, got ({lo}, {hi})")
    return v.with_data(np.clip(v.data, lo, hi))


def _target_grid(shape, spacing, target):
    target = tuple(float(t) for t in target)
    if len(target) != 3 or not all(t > 0 and np.isfinite(t) for t in target):
        raise ParameterError(f"target spacings must be positive, got {target}")
    new_shape = tuple(int(np.floor((n - 1) * s / t + 1e-9)) + 1 for n, s, t in zip(shape, spacing, target))
    return target, new_shape


def _coords(new_shape, spacing, target):
    axes = [np.arange(n) * (t / s) for n, s, t in zip(new_shape, spacing, target)]
    return np.meshgrid(*axes, indexing="ij")


def resample(v: CtVolume, spacing) -> CtVolume:
    """Trilinear resampling onto a grid with the given voxel spacing.

    Voxel (0,0,0) keeps its world position; the new grid stops at the last
    sample that falls inside the old one, so extent shrinks by < 1 voxel.
    """
    target, new_shape = _target_grid(v.shape, v.spacing, spacing)
    if target == v.spacing:
        return v.with_data(v.data.copy())
    out = ndimage.map_coordinates(v.data, _coords(new_shape, v.spacing, target), order=1, mode="nearest")
    return replace(v, data=out, spacing=target)


def resample_labels(labels: LabelSet, spacing) -> LabelSet:
    """Nearest-neighbour counterpart of :func:`resample` for packed labels."""
    target, new_shape = _target_grid(labels.shape, labels.spacing, spacing)
    if target == labels.spacing:
        return labels
    idx = [np.clip(np.rint(c).astype(np.intp), 0, n - 1)
           for c, n in zip(_coords(new_shape, labels.spacing, target), labels.shape)]
    return replace(labels, bits=labels.bits[tuple(idx)], spacing=target)
