"""Pre-projection (3D) domain randomization.

A :class:`RandomizationPlan` holds every sampled parameter for one volume
variation and is a pure function of ``(global_seed, stream_key)``. The
stages below only read the plan, so applying a plan is deterministic.

Stage order is fixed: bone/soft contrast, component scaling, vertical
gradient, intra-bone depth gradient, soft tissue, noise, implants. Label
masks are never modified.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

from . import taxonomy as tx
from .errors import GeometryError, ParameterError
from .projector import ProjectionGeometry
from .rng import digest, stream
from .volume import CtVolume, LabelSet

log = logging.getLogger(__name__)

FAMILIES_3D = (
    "bone_soft",
    "component_scaling",
    "vertical_gradient",
    "intra_bone",
    "soft_tissue",
    "noise",
    "implants",
    "geometry",
)
GRADIENT_GROUPS = ("spine", "ribs_left", "ribs_right")
IMPLANT_POSE_CANDIDATES = 11  # first pose plus up to 10 resamples


@dataclass
class Msdr3dConfig:
    """Probabilities and ranges of the 3D randomizations (defaults: the published values)."""

    bone_soft_p: float = 0.4
    bone_soft_high: tuple[float, float] = (1.0, 1.7)
    bone_soft_low: tuple[float, float] = (0.3, 1.0)
    component_p: float = 0.3
    component_range: tuple[float, float] = (0.3, 1.7)
    gradient_p: float = 0.4
    gradient_head: tuple[float, float] = (0.9, 1.5)
    gradient_foot: tuple[float, float] = (0.6, 0.9)
    gradient_alpha: tuple[float, float] = (0.5, 1.5)
    intra_p: float = 0.7
    intra_surf: tuple[float, float] = (0.9, 1.5)
    intra_core: tuple[float, float] = (0.6, 1.1)
    intra_alpha: tuple[float, float] = (0.5, 1.5)
    soft_scale_p: float = 0.6
    soft_scale: tuple[float, float] = (0.3, 1.7)
    soft_invert_p: float = 0.3
    soft_invert_drift: tuple[float, float] = (-0.1, 0.1)
    soft_invert_window: tuple[float, float] = (-900.0, -2.0)
    noise_p: float = 0.3
    noise_sigma: tuple[float, float] = (10.0, 50.0)
    implant_p: float = 0.2
    implant_count: tuple[int, ...] = (1, 2, 3)
    implant_radius: tuple[float, float] = (5.0, 20.0)
    implant_length: tuple[float, float] = (10.0, 60.0)
    implant_hu: tuple[float, float] = (1800.0, 2000.0)
    implant_margin_mm: float = 20.0
    sdd_p: float = 0.4
    sdd_scale: tuple[float, float] = (0.9, 1.1)
    odd_p: float = 0.4
    odd_offset: tuple[float, float] = (-30.0, 30.0)
    enabled: tuple[str, ...] = FAMILIES_3D

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith("_p"):
                p = getattr(self, f.name)
                if not 0.0 <= p <= 1.0:
                    raise ParameterError(f"{f.name}={p} is not a probability")
        if self.soft_scale_p + self.soft_invert_p > 1.0 + 1e-12:
            raise ParameterError("soft-tissue branch probabilities sum above 1")
        unknown = set(self.enabled) - set(FAMILIES_3D)
        if unknown:
            raise ParameterError(f"unknown 3D families {sorted(unknown)}")
        self.enabled = tuple(self.enabled)

    def p(self, family: str, value: float) -> float:
        return value if family in self.enabled else 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "Msdr3dConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


@dataclass(frozen=True)
class BoneSoft:
    s1: float
    s2: float
    high_target: str  # "bone" or "soft"

    @property
    def bone_factor(self) -> float:
        return self.s1 if self.high_target == "bone" else self.s2

    @property
    def soft_factor(self) -> float:
        return self.s2 if self.high_target == "bone" else self.s1


@dataclass(frozen=True)
class Gradient:
    s_head: float
    s_foot: float
    alpha: float


@dataclass(frozen=True)
class IntraBone:
    s_surf: float
    s_core: float
    alpha: float


@dataclass(frozen=True)
class SoftTissue:
    mode: str  # "scale" or "invert"
    value: float  # scale s, or inversion drift


@dataclass(frozen=True)
class Implant:
    shape: str  # "cylinder" or "ellipsoid"
    radius: float
    length: float
    hu: float
    # candidate poses: (fractional centre in the dilated ROI box, unit axis)
    poses: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...]


@dataclass(frozen=True)
class GeometryJitter:
    sdd_scale: float = 1.0
    odd_offset: float = 0.0


@dataclass(frozen=True)
class RandomizationPlan:
    global_seed: int
    stream_key: str
    bone_soft: BoneSoft | None = None
    component_scales: tuple[tuple[int, float], ...] | None = None
    vertical_gradients: tuple[tuple[str, Gradient], ...] = ()
    intra_bone: IntraBone | None = None
    soft_tissue: SoftTissue | None = None
    noise_sigma: float | None = None
    implants: tuple[Implant, ...] | None = None
    geometry: GeometryJitter = field(default_factory=GeometryJitter)

    @property
    def scales_by_class(self) -> dict[int, float]:
        return dict(self.component_scales or ())

    @property
    def gradients_by_group(self) -> dict[str, Gradient]:
        return dict(self.vertical_gradients)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["component_scales"] = (None if self.component_scales is None
                                 else {str(k): v for k, v in self.component_scales})
        d["vertical_gradients"] = {k: asdict(g) for k, g in self.vertical_gradients}
        return _listify(d)

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationPlan":
        def opt(klass, v):
            return None if v is None else klass(**v)

        implants = None
        if d.get("implants") is not None:
            implants = tuple(
                Implant(shape=i["shape"], radius=i["radius"], length=i["length"], hu=i["hu"],
                        poses=tuple((tuple(c), tuple(a)) for c, a in i["poses"]))
                for i in d["implants"]
            )
        scales = d.get("component_scales")
        return cls(
            global_seed=int(d["global_seed"]),
            stream_key=d["stream_key"],
            bone_soft=opt(BoneSoft, d.get("bone_soft")),
            component_scales=None if scales is None else tuple((int(k), float(v)) for k, v in scales.items()),
            vertical_gradients=tuple((k, Gradient(**g)) for k, g in (d.get("vertical_gradients") or {}).items()),
            intra_bone=opt(IntraBone, d.get("intra_bone")),
            soft_tissue=opt(SoftTissue, d.get("soft_tissue")),
            noise_sigma=d.get("noise_sigma"),
            implants=implants,
            geometry=GeometryJitter(**d.get("geometry", {})),
        )

    def digest(self) -> str:
        return digest(self.to_dict())


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def sample_plan(global_seed: int, volume_id: str, cfg: Msdr3dConfig | None = None) -> RandomizationPlan:
    """Draw a full plan from the stream keyed by ``(global_seed, volume_id)``.

    Every parameter is drawn whether or not its family fires, so the stream
    position of each field is fixed and toggling one family never changes the
    values sampled for another.
    """
    cfg = cfg or Msdr3dConfig()
    rng = stream(global_seed, volume_id, "plan3d")
    u = lambda lo_hi: float(rng.uniform(*lo_hi))  # noqa: E731

    fire = rng.random() < cfg.p("bone_soft", cfg.bone_soft_p)
    s1, s2 = u(cfg.bone_soft_high), u(cfg.bone_soft_low)
    high = "bone" if rng.random() < 0.5 else "soft"
    bone_soft = BoneSoft(s1, s2, high) if fire else None

    fire = rng.random() < cfg.p("component_scaling", cfg.component_p)
    scales = tuple((cid, u(cfg.component_range)) for cid in tx.COMPONENT_IDS)
    component_scales = scales if fire else None

    gradients = []
    for group in GRADIENT_GROUPS:
        fire = rng.random() < cfg.p("vertical_gradient", cfg.gradient_p)
        g = Gradient(u(cfg.gradient_head), u(cfg.gradient_foot), u(cfg.gradient_alpha))
        if fire:
            gradients.append((group, g))

    fire = rng.random() < cfg.p("intra_bone", cfg.intra_p)
    ib = IntraBone(u(cfg.intra_surf), u(cfg.intra_core), u(cfg.intra_alpha))
    intra = ib if fire else None

    draw = rng.random()
    s_scale, drift = u(cfg.soft_scale), u(cfg.soft_invert_drift)
    p_scale = cfg.p("soft_tissue", cfg.soft_scale_p)
    p_inv = cfg.p("soft_tissue", cfg.soft_invert_p)
    if draw < p_scale:
        soft = SoftTissue("scale", s_scale)
    elif draw < p_scale + p_inv:
        soft = SoftTissue("invert", drift)
    else:
        soft = None

    fire = rng.random() < cfg.p("noise", cfg.noise_p)
    sigma = u(cfg.noise_sigma)
    noise_sigma = sigma if fire else None

    fire = rng.random() < cfg.p("implants", cfg.implant_p)
    count = int(cfg.implant_count[int(rng.integers(len(cfg.implant_count)))])
    objects = []
    lo_hu = float(np.nextafter(cfg.implant_hu[0], cfg.implant_hu[1]))
    for _ in range(max(cfg.implant_count)):
        shape = "cylinder" if rng.random() < 0.5 else "ellipsoid"
        radius, length = u(cfg.implant_radius), u(cfg.implant_length)
        hu = max(u(cfg.implant_hu), lo_hu)
        poses = []
        for _ in range(IMPLANT_POSE_CANDIDATES):
            centre = tuple(float(x) for x in rng.random(3))
            axis = rng.standard_normal(3)
            axis = axis / np.linalg.norm(axis)
            poses.append((centre, tuple(float(x) for x in axis)))
        objects.append(Implant(shape, radius, length, hu, tuple(poses)))
    implants = tuple(objects[:count]) if fire else None

    fire_sdd = rng.random() < cfg.p("geometry", cfg.sdd_p)
    sdd_scale = u(cfg.sdd_scale)
    fire_odd = rng.random() < cfg.p("geometry", cfg.odd_p)
    odd_offset = u(cfg.odd_offset)
    geometry = GeometryJitter(sdd_scale if fire_sdd else 1.0, odd_offset if fire_odd else 0.0)

    return RandomizationPlan(
        global_seed=int(global_seed),
        stream_key=str(volume_id),
        bone_soft=bone_soft,
        component_scales=component_scales,
        vertical_gradients=tuple(gradients),
        intra_bone=intra,
        soft_tissue=soft,
        noise_sigma=noise_sigma,
        implants=implants,
        geometry=geometry,
    )


def apply_bone_soft_contrast(v: CtVolume, labels: LabelSet, plan: RandomizationPlan) -> CtVolume:
    bs = plan.bone_soft
    if bs is None:
        return v
    bone = labels.bone
    soft = labels.soft & ~bone  # bone wins where families overlap
    data = v.data.copy()
    data[bone] *= bs.bone_factor
    data[soft] *= bs.soft_factor
    return v.with_data(data)


def apply_component_scaling(v: CtVolume, labels: LabelSet, plan: RandomizationPlan) -> CtVolume:
    if plan.component_scales is None:
        return v
    factor = np.ones(v.shape)
    # descending ids so the lowest id is written last and wins on overlap
    for cid, s in sorted(plan.component_scales, reverse=True):
        factor[labels.mask(cid)] = s
    return v.with_data(v.data * factor)


def gradient_factor(zhat, s_head: float, s_foot: float, alpha: float):
    return s_foot + np.power(1.0 - np.asarray(zhat, dtype=np.float64), alpha) * (s_head - s_foot)


def normalized_height(mask: np.ndarray, si_axis: int, si_sign: int) -> np.ndarray | None:
    """Per-slice ``zhat`` over the mask's own SI extent (0 = superior end)."""
    other = tuple(a for a in range(3) if a != si_axis)
    occupied = np.flatnonzero(mask.any(axis=other))
    if occupied.size == 0:
        return None
    lo, hi = occupied[0], occupied[-1]
    z = np.arange(mask.shape[si_axis], dtype=np.float64)
    if hi == lo:
        return np.zeros_like(z)
    zhat = (hi - z) / (hi - lo) if si_sign > 0 else (z - lo) / (hi - lo)
    return zhat


def apply_vertical_gradient(v: CtVolume, labels: LabelSet, plan: RandomizationPlan) -> CtVolume:
    if not plan.vertical_gradients:
        return v
    if v.si_axis is None:
        raise ParameterError("vertical gradient needs a superior-inferior axis")
    masks = {"spine": labels.vertebrae, "ribs_left": labels.ribs_left, "ribs_right": labels.ribs_right}
    data = v.data.copy()
    for group, g in plan.vertical_gradients:
        m = masks[group]
        zhat = normalized_height(m, v.si_axis, v.si_sign)
        if zhat is None:
            continue
        per_slice = gradient_factor(np.clip(zhat, 0.0, 1.0), g.s_head, g.s_foot, g.alpha)
        shape = [1, 1, 1]
        shape[v.si_axis] = -1
        factor = np.broadcast_to(per_slice.reshape(shape), v.shape)
        data[m] *= factor[m]
    return v.with_data(data)


_CROSS = ndimage.generate_binary_structure(3, 1)
_CUBE = np.ones((3, 3, 3), dtype=bool)


def erosion_rounds(mask: np.ndarray) -> np.ndarray:
    """Round (1-based) at which each voxel disappears under repeated 6-connected erosion."""
    mask = np.asarray(mask, dtype=bool)
    rounds = np.zeros(mask.shape, dtype=np.int32)
    cur = mask.copy()
    r = 0
    while cur.any():
        r += 1
        nxt = ndimage.binary_erosion(cur, structure=_CROSS, border_value=0)
        rounds[cur & ~nxt] = r
        cur = nxt
    return rounds


def morphological_depth(mask: np.ndarray) -> np.ndarray:
    """Normalized erosion depth: 0 on the surface layer, 1 on the last surviving layer."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ParameterError("morphological depth of an empty mask")
    rounds = erosion_rounds(mask)
    total = int(rounds.max())
    depth = np.zeros(mask.shape, dtype=np.float64)
    if total > 1:
        depth[mask] = (rounds[mask] - 1) / (total - 1)
    return depth


def component_depth(mask: np.ndarray) -> np.ndarray:
    """Depth computed separately for each 26-connected component."""
    depth = np.zeros(mask.shape, dtype=np.float64)
    lab, n = ndimage.label(mask, structure=_CUBE)
    for k, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None:
            continue
        comp = lab[sl] == k
        d = morphological_depth(comp)
        depth[sl][comp] = d[comp]
    return depth


def intra_factor(delta, s_surf: float, s_core: float, alpha: float):
    return s_surf + np.power(np.asarray(delta, dtype=np.float64), alpha) * (s_core - s_surf)


def apply_intra_bone(v: CtVolume, labels: LabelSet, plan: RandomizationPlan) -> CtVolume:
    ib = plan.intra_bone
    if ib is None:
        return v
    bone = labels.bone
    if not bone.any():
        return v
    depth = component_depth(bone)
    data = v.data.copy()
    data[bone] *= intra_factor(depth[bone], ib.s_surf, ib.s_core, ib.alpha)
    return v.with_data(data)


def apply_soft_tissue(v: CtVolume, labels: LabelSet, plan: RandomizationPlan,
                      window=(-900.0, -2.0)) -> CtVolume:
    st = plan.soft_tissue
    if st is None:
        return v
    soft = labels.soft
    data = v.data.copy()
    if st.mode == "scale":
        data[soft] *= st.value
    elif st.mode == "invert":
        sel = soft & (data >= window[0]) & (data <= window[1])
        data[sel] *= -(1.5 + st.value)
    else:
        raise ParameterError(f"unknown soft-tissue mode {st.mode!r}")
    return v.with_data(data)


def noise_field(plan: RandomizationPlan, shape) -> np.ndarray:
    rng = stream(plan.global_seed, plan.stream_key, "noise")
    return rng.standard_normal(shape) * plan.noise_sigma


def add_gaussian_noise(v: CtVolume, labels: LabelSet, plan: RandomizationPlan) -> CtVolume:
    if plan.noise_sigma is None:
        return v
    roi = labels.roi
    data = v.data.copy()
    data[roi] += noise_field(plan, v.shape)[roi]
    return v.with_data(data)


def object_voxels(shape, spacing, centre_mm, axis, radius: float, length: float, kind: str):
    """Index arrays of voxels whose centres lie inside a cylinder or ellipsoid.

    Voxel ``i`` has its centre at ``i * spacing`` mm. Returns ``None`` when the
    object's bounding box misses the grid.
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    centre = np.asarray(centre_mm, dtype=np.float64)
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * length
    ext = np.abs(axis) * half + radius
    lo = np.maximum(np.ceil((centre - ext) / spacing).astype(int), 0)
    hi = np.minimum(np.floor((centre + ext) / spacing).astype(int), np.asarray(shape) - 1)
    if np.any(hi < lo):
        return None
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
    d = [g * s - c for g, s, c in zip(grids, spacing, centre)]
    t = d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]
    radial2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2 - t * t
    if kind == "cylinder":
        inside = (np.abs(t) <= half) & (radial2 <= radius * radius)
    elif kind == "ellipsoid":
        inside = (t / half) ** 2 + radial2 / (radius * radius) <= 1.0
    else:
        raise ParameterError(f"unknown implant shape {kind!r}")
    if not inside.any():
        return None
    return tuple(g[inside] for g in grids)


def roi_box_mm(labels: LabelSet, spacing, margin_mm: float):
    roi = labels.roi
    spacing = np.asarray(spacing, dtype=np.float64)
    if roi.any():
        idx = [np.flatnonzero(roi.any(axis=tuple(b for b in range(3) if b != a))) for a in range(3)]
        lo = np.array([i[0] for i in idx]) * spacing
        hi = np.array([i[-1] for i in idx]) * spacing
    else:
        lo = np.zeros(3)
        hi = (np.asarray(roi.shape) - 1) * spacing
    return lo - margin_mm, hi + margin_mm


def implant_objects(v: CtVolume, labels: LabelSet, plan: RandomizationPlan,
                    margin_mm: float = 20.0, record: list | None = None) -> CtVolume:
    """Rasterize the plan's foreign objects, overwriting HU; labels untouched.

    Objects whose first pose misses the grid are retried on the plan's
    pre-drawn alternative poses, and skipped (and recorded) if all miss.
    """
    if not plan.implants:
        return v
    lo, hi = roi_box_mm(labels, v.spacing, margin_mm)
    data = v.data.copy()
    for n, obj in enumerate(plan.implants):
        placed = None
        for attempt, (frac, axis) in enumerate(obj.poses):
            centre = lo + np.asarray(frac) * (hi - lo)
            vox = object_voxels(v.shape, v.spacing, centre, axis, obj.radius, obj.length, obj.shape)
            if vox is not None:
                data[vox] = obj.hu
                placed = {"object": n, "attempt": attempt, "centre_mm": centre.tolist(),
                          "voxels": int(vox[0].size)}
                break
        if placed is None:
            log.info("implant %d skipped: every candidate pose misses the volume", n)
            placed = {"object": n, "skipped": True}
        if record is not None:
            record.append(placed)
    return v.with_data(data)


STAGES = (
    ("bone_soft", apply_bone_soft_contrast),
    ("component_scaling", apply_component_scaling),
    ("vertical_gradient", apply_vertical_gradient),
    ("intra_bone", apply_intra_bone),
    ("soft_tissue", apply_soft_tissue),
    ("noise", add_gaussian_noise),
    ("implants", implant_objects),
)


def apply_all_3d(v: CtVolume, labels: LabelSet, plan: RandomizationPlan, record: list | None = None,
                 cfg: Msdr3dConfig | None = None) -> CtVolume:
    """Run every stage in order; ``cfg`` supplies the soft-tissue window and implant margin."""
    cfg = cfg or Msdr3dConfig()
    if labels.shape != v.shape:
        raise ParameterError(f"label grid {labels.shape} does not match volume {v.shape}")
    for name, stage in STAGES:
        if name == "implants":
            v = stage(v, labels, plan, margin_mm=cfg.implant_margin_mm, record=record)
        elif name == "soft_tissue":
            v = stage(v, labels, plan, window=cfg.soft_invert_window)
        else:
            v = stage(v, labels, plan)
    return v


def perturb_geometry(g: ProjectionGeometry, plan: RandomizationPlan) -> ProjectionGeometry:
    sdd = g.sdd * plan.geometry.sdd_scale
    odd = g.odd + plan.geometry.odd_offset
    if not sdd > odd:
        raise GeometryError(f"perturbed geometry has sdd={sdd:.3f} <= odd={odd:.3f}")
    return replace(g, sdd=sdd, odd=odd)


def activation_flags(plan: RandomizationPlan) -> dict[str, bool]:
    """Which families fired; used for the activation-rate audit."""
    grads = plan.gradients_by_group
    out = {
        "bone_soft": plan.bone_soft is not None,
        "component_scaling": plan.component_scales is not None,
        "intra_bone": plan.intra_bone is not None,
        "soft_scale": plan.soft_tissue is not None and plan.soft_tissue.mode == "scale",
        "soft_invert": plan.soft_tissue is not None and plan.soft_tissue.mode == "invert",
        "noise": plan.noise_sigma is not None,
        "implants": plan.implants is not None,
        "sdd": plan.geometry.sdd_scale != 1.0,
        "odd": plan.geometry.odd_offset != 0.0,
    }
    for group in GRADIENT_GROUPS:
        out[f"gradient_{group}"] = group in grads
    return out


def _in(x, lo_hi):
    return lo_hi[0] <= x <= lo_hi[1]


def plan_violations(plan: RandomizationPlan, cfg: Msdr3dConfig | None = None) -> list[str]:
    """Names of sampled parameters outside their declared intervals (empty when valid)."""
    cfg = cfg or Msdr3dConfig()
    bad = []
    if plan.bone_soft is not None:
        if not _in(plan.bone_soft.s1, cfg.bone_soft_high):
            bad.append("bone_soft.s1")
        if not _in(plan.bone_soft.s2, cfg.bone_soft_low):
            bad.append("bone_soft.s2")
        if plan.bone_soft.high_target not in ("bone", "soft"):
            bad.append("bone_soft.high_target")
    for cid, s in plan.component_scales or ():
        if not _in(s, cfg.component_range) or cid not in tx.COMPONENT_IDS:
            bad.append(f"component_scales[{cid}]")
    for group, g in plan.vertical_gradients:
        for name, val, rng in (("s_head", g.s_head, cfg.gradient_head), ("s_foot", g.s_foot, cfg.gradient_foot),
                               ("alpha", g.alpha, cfg.gradient_alpha)):
            if not _in(val, rng):
                bad.append(f"vertical_gradients.{group}.{name}")
    if plan.intra_bone is not None:
        ib = plan.intra_bone
        for name, val, rng in (("s_surf", ib.s_surf, cfg.intra_surf), ("s_core", ib.s_core, cfg.intra_core),
                               ("alpha", ib.alpha, cfg.intra_alpha)):
            if not _in(val, rng):
                bad.append(f"intra_bone.{name}")
    if plan.soft_tissue is not None:
        st = plan.soft_tissue
        rng = cfg.soft_scale if st.mode == "scale" else cfg.soft_invert_drift
        if not _in(st.value, rng):
            bad.append("soft_tissue.value")
    if plan.noise_sigma is not None and not _in(plan.noise_sigma, cfg.noise_sigma):
        bad.append("noise_sigma")
    if plan.implants is not None:
        if len(plan.implants) not in cfg.implant_count:
            bad.append("implants.count")
        for i, obj in enumerate(plan.implants):
            if obj.shape not in ("cylinder", "ellipsoid"):
                bad.append(f"implants[{i}].shape")
            if not _in(obj.radius, cfg.implant_radius):
                bad.append(f"implants[{i}].radius")
            if not _in(obj.length, cfg.implant_length):
                bad.append(f"implants[{i}].length")
            if not cfg.implant_hu[0] < obj.hu < cfg.implant_hu[1]:
                bad.append(f"implants[{i}].hu")
            for frac, axis in obj.poses:
                if not all(0.0 <= f <= 1.0 for f in frac) or not math.isclose(np.linalg.norm(axis), 1.0):
                    bad.append(f"implants[{i}].pose")
                    break
    if not (_in(plan.geometry.sdd_scale, cfg.sdd_scale) or plan.geometry.sdd_scale == 1.0):
        bad.append("geometry.sdd_scale")
    if not _in(plan.geometry.odd_offset, cfg.odd_offset):
        bad.append("geometry.odd_offset")
    return bad
