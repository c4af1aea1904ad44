"""Anatomical measurements on 2D masks: cardiothoracic ratio and spine curvature.

Image coordinates are continuous with pixel ``k`` covering ``[k, k + 1)``;
``x`` runs along columns and ``y`` along rows. Masks are assumed to be in
standard PA display, with the patient's right on the image left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import taxonomy as tx
from .errors import InsufficientDataError, MeasurementError, ShapeError

SEVERITY_THRESHOLDS = (0.01, 0.025)  # normalized score: low < t0 <= moderate < t1 <= high


@dataclass(frozen=True)
class CtrMeasurement:
    mrd: float
    mld: float
    id: float
    ratio: float
    midline_x: float

    def to_dict(self) -> dict:
        return {"mrd": self.mrd, "mld": self.mld, "id": self.id, "ratio": self.ratio, "midline_x": self.midline_x,
                "midline": "lung_centroid"}


@dataclass(frozen=True)
class SpcaMeasurement:
    centroids: list
    classes: list
    line_point: tuple[float, float]
    line_direction: tuple[float, float]
    score: float
    normalized_score: float
    severity: str

    def to_dict(self) -> dict:
        return {"centroids": [list(c) for c in self.centroids], "classes": self.classes,
                "line": {"point": list(self.line_point), "direction": list(self.line_direction)},
                "score": self.score, "normalized_score": self.normalized_score, "severity": self.severity}


def compute_ctr(heart_mask, lung_mask) -> CtrMeasurement:
    heart = np.asarray(heart_mask, dtype=bool)
    lung = np.asarray(lung_mask, dtype=bool)
    if heart.ndim != 2 or heart.shape != lung.shape:
        raise ShapeError(f"heart {heart.shape} and lung {lung.shape} masks must be matching 2D grids")
    if not heart.any():
        raise MeasurementError("empty heart mask")
    if not lung.any():
        raise MeasurementError("empty lung mask")

    _, lx = np.nonzero(lung)
    midline = float(lx.mean()) + 0.5
    _, hx = np.nonzero(heart)
    mrd = max(0.0, midline - float(hx.min()))
    mld = max(0.0, float(hx.max()) + 1.0 - midline)

    rows = np.flatnonzero(lung.any(axis=1))
    width = 0
    for r in rows:
        cols = np.flatnonzero(lung[r])
        width = max(width, int(cols[-1] - cols[0] + 1))
    if width <= 0:
        raise MeasurementError("degenerate lung mask: zero thoracic width")
    return CtrMeasurement(mrd=mrd, mld=mld, id=float(width), ratio=(mrd + mld) / width, midline_x=midline)


def fit_line_tls(points) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line: centroid of the points and unit principal direction."""
    pts = np.asarray(points, dtype=np.float64)
    centre = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centre, full_matrices=False)
    direction = vt[0]
    # deterministic sign: point down the image (or right if horizontal)
    if direction[1] < 0 or (direction[1] == 0 and direction[0] < 0):
        direction = -direction
    return centre, direction


def perpendicular_distances(points, centre, direction) -> np.ndarray:
    d = np.asarray(points, dtype=np.float64) - centre
    normal = np.array([-direction[1], direction[0]])
    return np.abs(d @ normal)


def severity(normalized_score: float, thresholds=SEVERITY_THRESHOLDS) -> str:
    if normalized_score < thresholds[0]:
        return "low"
    if normalized_score < thresholds[1]:
        return "moderate"
    return "high"


def _vertebra_masks(vertebra_masks, taxonomy):
    if isinstance(vertebra_masks, dict):
        named = {}
        for k, m in vertebra_masks.items():
            cid = tx.class_id(k) if isinstance(k, str) else int(k)
            named[cid] = np.asarray(m, dtype=bool)
        return named
    arr = np.asarray(vertebra_masks, dtype=bool)
    if arr.ndim != 3:
        raise ShapeError("vertebra masks must be a dict or a [classes, H, W] array")
    if arr.shape[0] == len(taxonomy):
        return {cid: arr[cid] for cid in tx.VERTEBRAE}
    if arr.shape[0] == len(tx.VERTEBRAE):
        return dict(zip(tx.VERTEBRAE, arr))
    raise ShapeError(f"cannot map {arr.shape[0]} mask channels to vertebrae")


def compute_spca(vertebra_masks, taxonomy=tx.TAXONOMY, image_height: int | None = None,
                 thresholds=SEVERITY_THRESHOLDS) -> SpcaMeasurement:
    """Mean perpendicular distance (px) of T2-T12 centroids from their TLS centreline."""
    masks = _vertebra_masks(vertebra_masks, taxonomy)
    centroids, classes = [], []
    height = image_height
    for cid in tx.VERTEBRAE:
        m = masks.get(cid)
        if m is None or not m.any():
            continue
        if height is None:
            height = m.shape[0]
        ys, xs = np.nonzero(m)
        centroids.append((float(xs.mean()) + 0.5, float(ys.mean()) + 0.5))
        classes.append(taxonomy[cid].name)
    if len(centroids) < 3:
        raise InsufficientDataError(f"need at least 3 vertebra centroids, got {len(centroids)}")
    centre, direction = fit_line_tls(centroids)
    score = float(perpendicular_distances(centroids, centre, direction).mean())
    norm = score / height
    return SpcaMeasurement(
        centroids=centroids,
        classes=classes,
        line_point=(float(centre[0]), float(centre[1])),
        line_direction=(float(direction[0]), float(direction[1])),
        score=score,
        normalized_score=norm,
        severity=severity(norm, thresholds),
    )


def spca_score(points) -> float:
    """Score for raw centroid coordinates."""
    if len(points) < 3:
        raise InsufficientDataError("need at least 3 points")
    centre, direction = fit_line_tls(points)
    return float(perpendicular_distances(points, centre, direction).mean())
