"""Synthetic chest phantoms with labels, for tests, demos and benchmarks.

Voxel axes follow the projector convention: axis 0 lateral (+ = patient
right), axis 1 anteroposterior (+ = anterior), axis 2 superior-inferior
(+ = head).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import taxonomy as tx
from .nifti import write_nifti
from .volume import CtVolume, LabelSet, save_label_map, save_labels_dir

FIELD_MM = 320.0


def _grid(shape, spacing):
    axes = [(np.arange(n) - 0.5 * (n - 1)) * s for n, s in zip(shape, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def make_chest_phantom(shape=(64, 64, 64), spacing=None, seed: int = 0, defect: str | None = None):
    """Return ``(CtVolume, LabelSet)`` of a coarse chest.

    ``defect`` plants a QC failure: ``"three_in_slice"`` (T4, T5 and T6 share
    an axial slice) or ``"overlap"`` (T7 and T8 about 60% co-located).
    """
    shape = tuple(int(n) for n in shape)
    if spacing is None:
        spacing = tuple(FIELD_MM / n for n in shape)
    rng = np.random.default_rng(seed)
    x, y, z = _grid(shape, spacing)
    jitter = 1.0 + 0.06 * (rng.random(4) - 0.5)
    shift = (rng.random(2) - 0.5) * 8.0

    a_body, b_body = 140.0 * jitter[0], 100.0 * jitter[1]
    zext = 0.5 * shape[2] * spacing[2]
    top, bottom = 0.80 * zext, -0.80 * zext
    xs, ys = x - shift[0], y - shift[1]

    hu = np.full(shape, -1000.0)
    body = (xs / a_body) ** 2 + (ys / b_body) ** 2 <= 1.0
    hu[body] = 20.0
    masks: dict[str, np.ndarray] = {}

    # lungs
    for side, sx in (("right", 1.0), ("left", -1.0)):
        lung = ((xs - sx * 62.0) / 48.0) ** 2 + ((ys - 5.0) / 62.0) ** 2 + (z / (0.72 * zext * jitter[2])) ** 2 <= 1.0
        hu[lung] = -820.0
        split = 0.1 * zext
        if side == "left":
            masks["lung_upper_lobe_left"] = lung & (z >= split)
            masks["lung_lower_lobe_left"] = lung & (z < split)
        else:
            masks["lung_upper_lobe_right"] = lung & (z >= 0.3 * zext)
            masks["lung_middle_lobe_right"] = lung & (z < 0.3 * zext) & (z >= -0.1 * zext)
            masks["lung_lower_lobe_right"] = lung & (z < -0.1 * zext)
    masks["lung"] = np.logical_or.reduce([masks[k] for k in list(masks)])

    # heart, left of midline and anterior
    hx, hy, hz = xs + 22.0, ys - 18.0, z + 0.25 * zext
    heart = (hx / 52.0) ** 2 + (hy / 42.0) ** 2 + (hz / (0.3 * zext * jitter[3])) ** 2 <= 1.0
    hu[heart] = 45.0
    masks["heart"] = heart
    masks["heart_atrium_left"] = heart & (hz > 0) & (hx < 0)
    masks["heart_atrium_right"] = heart & (hz > 0) & (hx >= 0)
    masks["heart_ventricle_left"] = heart & (hz <= 0) & (hx < 0)
    masks["heart_ventricle_right"] = heart & (hz <= 0) & (hx >= 0)
    shell = ((hx / 44.0) ** 2 + (hy / 34.0) ** 2 + (hz / (0.24 * zext)) ** 2) > 1.0
    masks["heart_myocardium"] = heart & shell

    # great vessels
    aorta = ((xs + 8.0) ** 2 + (ys + 25.0) ** 2 <= 12.0 ** 2) & (z > -0.6 * zext) & (z < 0.55 * zext)
    hu[aorta] = 40.0
    masks["aorta"] = aorta & ~heart
    pa = ((xs - 6.0) ** 2 + (ys - 10.0) ** 2 <= 9.0 ** 2) & (z > 0.05 * zext) & (z < 0.35 * zext)
    hu[pa & ~heart] = 40.0
    masks["pulmonary_artery"] = pa & ~heart

    # thoracic vertebrae T2..T12 stacked head to foot, separated by discs
    spine_y = -72.0
    span = top - bottom
    h = span / 11.0
    for k, cid in enumerate(tx.VERTEBRAE):
        z_hi = top - k * h
        z_lo = z_hi - 0.82 * h
        if defect == "three_in_slice" and tx.TAXONOMY[cid].name in ("vertebrae_T4", "vertebrae_T6"):
            # stretch T4 down and T6 up into T5's slab
            mid = top - 3 * h - 0.41 * h
            if tx.TAXONOMY[cid].name == "vertebrae_T4":
                z_lo = mid - 0.5 * spacing[2]
            else:
                z_hi = mid + 0.5 * spacing[2]
        if defect == "overlap" and tx.TAXONOMY[cid].name == "vertebrae_T8":
            prev_hi = top - 5 * h
            z_hi = prev_hi
            z_lo = prev_hi - 0.82 * h + 0.4 * 0.82 * h
        body_v = (xs ** 2 + (ys - spine_y) ** 2 <= 19.0 ** 2) & (z <= z_hi) & (z >= z_lo)
        hu[body_v] = 650.0
        masks[tx.TAXONOMY[cid].name] = body_v

    # ribs: arcs just inside the body outline, sloping down anteriorly
    a_r, b_r = a_body - 14.0, b_body - 12.0
    ring = np.abs(np.sqrt((xs / a_r) ** 2 + ((ys + 5.0) / b_r) ** 2) - 1.0) * min(a_r, b_r)
    rib_top = top - 0.2 * h
    for k in range(12):
        zk = rib_top - k * (span / 12.0) - 0.18 * (ys - spine_y)
        slab = (np.abs(z - zk) <= max(5.0, 0.6 * spacing[2])) & (ring <= max(5.0, 0.6 * spacing[0]))
        slab &= ys > spine_y - 5.0
        for side, sel in (("right", xs > 20.0), ("left", xs < -20.0)):
            rib = slab & sel
            hu[rib] = 550.0
            masks[f"rib_{side}_{k + 1}"] = rib

    # sternum, clavicles, humeri
    sternum = (np.abs(xs) <= 12.0) & (np.abs(ys - (b_body - 12.0)) <= 7.0) & (z < 0.55 * zext) & (z > -0.2 * zext)
    hu[sternum] = 450.0
    masks["sternum"] = sternum
    for side, sx in (("right", 1.0), ("left", -1.0)):
        clav = (np.abs(ys - 40.0) <= 7.0) & (np.abs(z - 0.78 * zext) <= 7.0) & (sx * xs > 15.0) & (sx * xs < 110.0)
        hu[clav] = 600.0
        masks[f"clavicula_{side}"] = clav
        hum = ((xs - sx * 150.0) ** 2 + ys ** 2 <= 16.0 ** 2) & (z > 0.45 * zext)
        hu[hum] = 600.0
        masks[f"humerus_{side}"] = hum

    ct = CtVolume(hu, spacing, si_axis=2, si_sign=1)
    labels = LabelSet.from_masks(masks, shape=shape, spacing=spacing, si_axis=2, si_sign=1)
    return ct, labels


def write_toy_dataset(root, n_volumes: int = 3, shape=(64, 64, 64), seed: int = 0,
                      defects: dict | None = None, label_format: str = "dir") -> list[str]:
    """Write ``root/ct/<id>.nii.gz`` and labels under ``root/labels``; returns the volume ids."""
    root = Path(root)
    (root / "ct").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    defects = defects or {}
    ids = []
    for i in range(n_volumes):
        vid = f"toy{i:03d}"
        ct, labels = make_chest_phantom(shape, seed=seed + i, defect=defects.get(i))
        write_nifti(root / "ct" / f"{vid}.nii.gz", ct.data.astype(np.int16), spacing=ct.spacing)
        if label_format == "dir":
            save_labels_dir(labels, root / "labels" / vid)
        else:
            save_label_map(labels, root / "labels" / f"{vid}.nii.gz")
        ids.append(vid)
    return ids
