"""Discovery and loading of paired CT / label files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .volume import HU_CLIP, NIFTI_SUFFIXES, _strip_suffix, clip_hu, load_ct, load_labels, resample, resample_labels


@dataclass(frozen=True)
class VolumePair:
    volume_id: str
    ct_path: str
    label_path: str | None


def discover_pairs(ct_dir, label_dir) -> list[VolumePair]:
    """Pair ``<id>.nii[.gz]`` CTs with ``<label_dir>/<id>/`` or ``<label_dir>/<id>.nii[.gz]``."""
    ct_dir, label_dir = Path(ct_dir), Path(label_dir)
    pairs = []
    if not ct_dir.is_dir():
        return pairs
    for f in sorted(ct_dir.iterdir()):
        if not f.name.endswith(NIFTI_SUFFIXES):
            continue
        vid = _strip_suffix(f.name)
        label = None
        candidates = [label_dir / vid] + [label_dir / (vid + s) for s in NIFTI_SUFFIXES]
        for cand in candidates:
            if cand.exists():
                label = str(cand)
                break
        pairs.append(VolumePair(vid, str(f), label))
    return pairs


def load_pair(pair: VolumePair, class_map=None, target_spacing=None, clip=HU_CLIP):
    """Load, clip and optionally resample one CT with its labels."""
    if pair.label_path is None:
        raise FileNotFoundError(f"no label file for volume {pair.volume_id}")
    ct = load_ct(pair.ct_path)
    labels = load_labels(pair.label_path, class_map=class_map, reference=ct)
    if clip is not None:
        ct = clip_hu(ct, *clip)
    if target_spacing is not None:
        ct = resample(ct, target_spacing)
        labels = resample_labels(labels, target_spacing)
    return ct, labels
