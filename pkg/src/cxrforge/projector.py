"""Cone-beam DRR rendering and co-registered 2D mask projection.

Frame conventions (all in mm, origin at the volume centre):

* patient axes are taken from the voxel axes: the two non-SI axes in
  ascending order are treated as lateral (+ = patient right) and
  anteroposterior (+ = anterior); the SI axis points to the head;
* at view angle ``theta`` the beam direction is
  ``-(sin(theta) * lateral + cos(theta) * anterior)``, so 0 deg is AP,
  90 deg is left lateral and 180 deg is PA;
* the source sits ``sdd - odd`` before the volume centre and the detector
  plane ``odd`` after it; detector columns run along ``up x beam`` and rows
  run from head (row 0) to foot.

Every ray is marched with a fixed step of half the smallest voxel spacing
between its entry and exit of the zero-padded grid, summing trilinear samples
of ``mu = max(HU + 1000, 0)`` (trapezoid rule; both end samples are zero by
construction). Masks use the same samples with nearest-voxel class lookup.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from numba import njit, prange

from . import taxonomy as tx
from .errors import GeometryError
from .volume import CtVolume, LabelSet

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old; workqueue is always available
    numba.config.THREADING_LAYER = "workqueue"

SDD_MM = 1183.0
ODD_MM = 167.0
DETECTOR_PX = 512
PITCH_MARGIN = 1.05


def default_view_angles() -> list[float]:
    return [22.5 * k for k in range(9)]


@dataclass(frozen=True)
class ProjectionGeometry:
    sdd: float = SDD_MM
    odd: float = ODD_MM
    view_angle: float = 0.0
    nx: int = DETECTOR_PX
    ny: int = DETECTOR_PX
    pixel_pitch: float | None = None  # None: fit the volume, see auto_pitch()

    def __post_init__(self):
        if not (self.sdd > self.odd > 0):
            raise GeometryError(f"need sdd > odd > 0, got sdd={self.sdd}, odd={self.odd}")
        if not 0.0 <= self.view_angle <= 180.0:
            raise GeometryError(f"view angle must lie in [0, 180], got {self.view_angle}")
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("detector needs at least one pixel per axis")
        if self.pixel_pitch is not None and not self.pixel_pitch > 0:
            raise GeometryError("pixel pitch must be positive")

    @property
    def delta(self) -> float:
        """Source to volume-centre distance."""
        return self.sdd - self.odd

    @property
    def magnification(self) -> float:
        return self.sdd / self.delta

    def at(self, angle: float) -> "ProjectionGeometry":
        return replace(self, view_angle=float(angle))

    def to_dict(self) -> dict:
        return {"sdd": self.sdd, "odd": self.odd, "delta": self.delta, "view_angle": self.view_angle,
                "nx": self.nx, "ny": self.ny, "pixel_pitch": self.pixel_pitch}


def auto_pitch(shape, spacing, g: ProjectionGeometry) -> float:
    extent = max(n * s for n, s in zip(shape, spacing))
    return PITCH_MARGIN * g.magnification * extent / min(g.nx, g.ny)


def with_pitch(g: ProjectionGeometry, shape, spacing) -> ProjectionGeometry:
    if g.pixel_pitch is not None:
        return g
    return replace(g, pixel_pitch=auto_pitch(shape, spacing, g))


def _patient_axes(si_axis: int | None, si_sign: int):
    if si_axis is None:
        si_axis = 2
    lat, ap = [a for a in range(3) if a != si_axis]
    e = np.eye(3)
    return e[lat], e[ap], si_sign * e[si_axis]


def ray_setup(shape, spacing, g: ProjectionGeometry, si_axis=2, si_sign=1):
    """Source, detector origin and detector step vectors in voxel-index space.

    The detector point for pixel (r, c) is ``det0 + c * du + r * dv``.
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    pitch = g.pixel_pitch if g.pixel_pitch is not None else auto_pitch(shape, spacing, g)
    lat, ant, up = _patient_axes(si_axis, si_sign)
    th = math.radians(g.view_angle)
    beam = -(math.sin(th) * lat + math.cos(th) * ant)
    col = np.cross(up, beam)
    src_mm = -g.delta * beam
    det_centre = g.odd * beam
    det0_mm = det_centre - 0.5 * (g.nx - 1) * pitch * col + 0.5 * (g.ny - 1) * pitch * up
    centre = 0.5 * (shape - 1)
    src = src_mm / spacing + centre
    det0 = det0_mm / spacing + centre
    du = pitch * col / spacing
    dv = -pitch * up / spacing
    if np.all(src >= -0.5) and np.all(src <= shape - 0.5):
        raise GeometryError("source lies inside the volume")
    return src, det0, du, dv


def _debruijn_table():
    mul = 0x03F79D71B4CB0A89
    table = np.zeros(64, dtype=np.int64)
    for i in range(64):
        table[(((1 << i) * mul) & 0xFFFFFFFFFFFFFFFF) >> 58] = i
    return table


_DEBRUIJN = np.uint64(0x03F79D71B4CB0A89)
_CTZ = _debruijn_table()


@njit(cache=True, nogil=True, inline="always")
def _flush(b, run, counts, ctz, debruijn):
    one = np.uint64(1)
    zero = np.uint64(0)
    while b != zero:
        low = b & (~b + one)
        counts[ctz[(low * debruijn) >> np.uint64(58)]] += run
        b ^= low


@njit(cache=True, nogil=True, parallel=True, fastmath=False)
def _march(mu, bits, do_image, do_masks, spacing, step, tau, src, det0, du, dv, ny, nx, ctz, debruijn):
    if do_image:
        n0, n1, n2 = mu.shape[0] - 2, mu.shape[1] - 2, mu.shape[2] - 2
    else:
        n0, n1, n2 = bits.shape
    image = np.zeros((ny, nx), dtype=np.float64)
    masks = np.zeros((ny, nx), dtype=np.uint64)
    one = np.uint64(1)
    zero = np.uint64(0)
    for r in prange(ny):
        counts = np.zeros(64, dtype=np.int64)
        for c in range(nx):
            # ray direction in index space per mm travelled
            px = det0[0] + c * du[0] + r * dv[0]
            py = det0[1] + c * du[1] + r * dv[1]
            pz = det0[2] + c * du[2] + r * dv[2]
            dx = (px - src[0]) * spacing[0]
            dy = (py - src[1]) * spacing[1]
            dz = (pz - src[2]) * spacing[2]
            norm = math.sqrt(dx * dx + dy * dy + dz * dz)
            ix = dx / norm / spacing[0]
            iy = dy / norm / spacing[1]
            iz = dz / norm / spacing[2]
            t0 = -1e300
            t1 = 1e300
            hit = True
            for a in range(3):
                if a == 0:
                    s, d, hi = src[0], ix, n0
                elif a == 1:
                    s, d, hi = src[1], iy, n1
                else:
                    s, d, hi = src[2], iz, n2
                if d == 0.0:
                    if s <= -1.0 or s >= hi:
                        hit = False
                else:
                    ta = (-1.0 - s) / d
                    tb = (hi - s) / d
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
            if not hit or t1 <= t0:
                continue
            nseg = int(math.ceil((t1 - t0) / step))
            if nseg < 2:
                continue
            h = (t1 - t0) / nseg
            acc = 0.0
            seen = zero
            prev = zero
            run = 0
            for k in range(1, nseg):
                t = t0 + k * h
                x = src[0] + t * ix
                y = src[1] + t * iy
                z = src[2] + t * iz
                if do_image:
                    # mu is zero-padded by one voxel, so no bounds checks are needed
                    fx = math.floor(x)
                    fy = math.floor(y)
                    fz = math.floor(z)
                    i0 = min(max(int(fx) + 1, 0), n0)
                    j0 = min(max(int(fy) + 1, 0), n1)
                    k0 = min(max(int(fz) + 1, 0), n2)
                    wx = x - fx
                    wy = y - fy
                    wz = z - fz
                    c00 = mu[i0, j0, k0] * (1.0 - wz) + mu[i0, j0, k0 + 1] * wz
                    c01 = mu[i0, j0 + 1, k0] * (1.0 - wz) + mu[i0, j0 + 1, k0 + 1] * wz
                    c10 = mu[i0 + 1, j0, k0] * (1.0 - wz) + mu[i0 + 1, j0, k0 + 1] * wz
                    c11 = mu[i0 + 1, j0 + 1, k0] * (1.0 - wz) + mu[i0 + 1, j0 + 1, k0 + 1] * wz
                    acc += (c00 * (1.0 - wy) + c01 * wy) * (1.0 - wx) + (c10 * (1.0 - wy) + c11 * wy) * wx
                if do_masks:
                    ri = int(math.floor(x + 0.5))
                    rj = int(math.floor(y + 0.5))
                    rk = int(math.floor(z + 0.5))
                    b = zero
                    if 0 <= ri < n0 and 0 <= rj < n1 and 0 <= rk < n2:
                        b = bits[ri, rj, rk]
                    # run-length: only touch the counters when the bit pattern changes
                    if b == prev:
                        run += 1
                    else:
                        _flush(prev, run, counts, ctz, debruijn)
                        seen |= prev
                        prev = b
                        run = 1
            if do_masks:
                _flush(prev, run, counts, ctz, debruijn)
                seen |= prev
            if do_image:
                image[r, c] = acc * h
            if do_masks and seen != zero:
                out = zero
                b = seen
                while b != zero:
                    low = b & (~b + one)
                    idx = ctz[(low * debruijn) >> np.uint64(58)]
                    if counts[idx] * h >= tau:
                        out |= low
                    counts[idx] = 0
                    b ^= low
                masks[r, c] = out
    return image, masks


def attenuation(hu: np.ndarray) -> np.ndarray:
    """Air-offset attenuation proxy ``max(HU + 1000, 0)`` as float32."""
    return np.maximum(np.asarray(hu, dtype=np.float64) + 1000.0, 0.0).astype(np.float32)


def default_step(spacing) -> float:
    return 0.5 * min(spacing)


def _run(mu, bits, shape, spacing, g, si_axis, si_sign, tau=None, step=None):
    src, det0, du, dv = ray_setup(shape, spacing, g, si_axis, si_sign)
    step = default_step(spacing) if step is None else float(step)
    tau = default_step(spacing) if tau is None else float(tau)
    do_image = mu is not None
    do_masks = bits is not None
    if mu is None:
        mu = np.zeros((3, 3, 3), dtype=np.float32)
    else:
        mu = np.pad(np.asarray(mu, dtype=np.float32), 1)
    if bits is None:
        bits = np.zeros((1, 1, 1), dtype=np.uint64)
    return _march(
        np.ascontiguousarray(mu, dtype=np.float32),
        np.ascontiguousarray(bits, dtype=np.uint64),
        do_image, do_masks,
        np.asarray(spacing, dtype=np.float64), step, tau,
        src, det0, du, dv, int(g.ny), int(g.nx), _CTZ, _DEBRUIJN,
    )


def project_mu(mu: np.ndarray, spacing, g: ProjectionGeometry, si_axis=2, si_sign=1, step=None) -> np.ndarray:
    """Raw line-integral image of an attenuation grid (linear in ``mu``)."""
    mu = np.asarray(mu)
    return _run(mu, None, mu.shape, spacing, g, si_axis, si_sign, step=step)[0]


def project(v: CtVolume, g: ProjectionGeometry, step=None) -> np.ndarray:
    return project_mu(attenuation(v.data), v.spacing, g, v.si_axis, v.si_sign, step=step)


def project_masks_packed(labels: LabelSet, g: ProjectionGeometry, tau=None, step=None) -> np.ndarray:
    """Projected class masks as one ``uint64`` bitmask per pixel."""
    return _run(None, labels.bits, labels.shape, labels.spacing, g, labels.si_axis, labels.si_sign,
                tau=tau, step=step)[1]


def unpack_masks(packed: np.ndarray, n_classes: int = tx.NUM_CLASSES) -> np.ndarray:
    """``uint64 [H, W]`` bitmask to ``bool [C, H, W]``."""
    shifts = np.arange(n_classes, dtype=np.uint64)[:, None, None]
    return ((packed[None] >> shifts) & np.uint64(1)).astype(bool)


def pack_masks(masks: np.ndarray) -> np.ndarray:
    out = np.zeros(masks.shape[1:], dtype=np.uint64)
    for c in range(masks.shape[0]):
        out[masks[c]] |= np.uint64(1 << c)
    return out


def project_masks(labels: LabelSet, g: ProjectionGeometry, tau=None, step=None) -> np.ndarray:
    """Per-class binary projections, ``bool [54, ny, nx]``."""
    return unpack_masks(project_masks_packed(labels, g, tau=tau, step=step))


def normalize_u8(image: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 with round-half-to-even; constant images map to 0."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.rint(255.0 * (image - lo) / (hi - lo)).astype(np.uint8)


def normalize_unit(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.float64)
    return (image - lo) / (hi - lo)


@dataclass
class DrrSample:
    image_u8: np.ndarray
    image_raw: np.ndarray
    masks_packed: np.ndarray
    availability: np.ndarray
    view_angle: float
    plan_id: str = ""
    geometry: ProjectionGeometry | None = None
    extra: dict = field(default_factory=dict)

    @property
    def class_masks_2d(self) -> np.ndarray:
        return unpack_masks(self.masks_packed)


def render_sample(v: CtVolume, labels: LabelSet, g: ProjectionGeometry, angle: float | None = None,
                  plan_id: str = "", step=None, tau=None) -> DrrSample:
    """Render image and masks for one view in a single shared ray march."""
    if labels.shape != v.shape:
        raise GeometryError(f"label grid {labels.shape} does not match volume {v.shape}")
    g = with_pitch(g if angle is None else g.at(angle), v.shape, v.spacing)
    raw, packed = _run(attenuation(v.data), labels.bits, v.shape, v.spacing, g, v.si_axis, v.si_sign,
                       tau=tau, step=step)
    return DrrSample(
        image_u8=normalize_u8(raw),
        image_raw=raw,
        masks_packed=packed,
        availability=np.array(labels.reliable, dtype=bool),
        view_angle=g.view_angle,
        plan_id=plan_id,
        geometry=g,
    )


def set_threads(n: int) -> int:
    """Limit numba's pixel-parallel threads; returns the count actually used."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
