"""Run configuration: a JSON file plus command-line overrides.

Every randomization probability and range is a named key under ``msdr3d`` or
``msdr2d`` with the published default, so an ablation is a config edit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError, ParameterError
from .msdr2d import FAMILIES_2D, Msdr2dConfig
from .msdr3d import FAMILIES_3D, Msdr3dConfig
from .projector import DETECTOR_PX, ODD_MM, SDD_MM, default_view_angles
from .qc import MIN_FRAC, TAU_OVERLAP

# named ablation settings: which randomization families are switched on
PRESETS = {
    "plain": ((), ()),
    "posthoc": ((), FAMILIES_2D),
    "msdr": (FAMILIES_3D, ()),
    "full": (FAMILIES_3D, FAMILIES_2D),
}


@dataclass
class GeometryConfig:
    sdd: float = SDD_MM
    odd: float = ODD_MM
    nx: int = DETECTOR_PX
    ny: int = DETECTOR_PX
    pixel_pitch: float | None = None


@dataclass
class ForgeConfig:
    ct_dir: str = "ct"
    label_dir: str = "labels"
    class_map: str | None = None
    output_dir: str = "out"
    curation_manifest: str | None = None
    global_seed: int = 0
    angles: list = field(default_factory=default_view_angles)
    variations_per_volume: int = 1
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    geometry_overrides: dict = field(default_factory=dict)  # volume_id -> partial GeometryConfig
    target_spacing: list | None = None
    tau_overlap: float = TAU_OVERLAP
    min_frac: float = MIN_FRAC
    qc_angles: list | None = None  # None: same as ``angles``
    clean_masks: bool = True
    write_raw: bool = False
    dump_plans: bool = False
    msdr3d: Msdr3dConfig = field(default_factory=Msdr3dConfig)
    msdr2d: Msdr2dConfig = field(default_factory=Msdr2dConfig)
    workers: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variations_per_volume < 1:
            raise ConfigurationError("variations_per_volume must be >= 1")
        if not self.angles:
            raise ConfigurationError("angles must be nonempty")
        for a in self.angles:
            if not 0.0 <= float(a) <= 180.0:
                raise ConfigurationError(f"angle {a} outside [0, 180]")
        if not 0.0 <= self.tau_overlap <= 1.0:
            raise ConfigurationError("tau_overlap must lie in [0, 1]")
        if not 0.0 < self.min_frac < 1.0:
            raise ConfigurationError("min_frac must lie in (0, 1)")
        if self.workers is not None and int(self.workers) < 1:
            raise ConfigurationError("workers must be >= 1")

    def geometry_for(self, volume_id: str) -> GeometryConfig:
        over = self.geometry_overrides.get(volume_id, {})
        unknown = set(over) - {f.name for f in fields(GeometryConfig)}
        if unknown:
            raise ConfigurationError(f"unknown geometry keys for {volume_id}: {sorted(unknown)}")
        return replace(self.geometry, **over)

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))  # tuples -> lists


def _section(klass, d, where):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where} must be an object")
    names = {f.name for f in fields(klass)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


def config_from_dict(d: dict) -> ForgeConfig:
    d = dict(d)
    preset = d.pop("preset", None)
    _section(ForgeConfig, d, "config")
    try:
        m3 = Msdr3dConfig.from_dict(_section(Msdr3dConfig, d.pop("msdr3d", {}), "msdr3d"))
        m2 = Msdr2dConfig.from_dict(_section(Msdr2dConfig, d.pop("msdr2d", {}), "msdr2d"))
        geo = GeometryConfig(**_section(GeometryConfig, d.pop("geometry", {}), "geometry"))
        cfg = ForgeConfig(msdr3d=m3, msdr2d=m2, geometry=geo, **d)
    except (TypeError, ParameterError) as exc:
        raise ConfigurationError(str(exc)) from exc
    if preset is not None:
        cfg = apply_preset(cfg, preset)
    return cfg


def load_config(path) -> ForgeConfig:
    """Read a JSON config; missing keys take their defaults."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(d)


def apply_preset(cfg: ForgeConfig, name: str) -> ForgeConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    fam3, fam2 = PRESETS[name]
    return replace(cfg, msdr3d=replace(cfg.msdr3d, enabled=tuple(fam3)),
                   msdr2d=replace(cfg.msdr2d, enabled=tuple(fam2)))


def parse_angles(text: str) -> list[float]:
    try:
        angles = [float(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad angle list {text!r}") from exc
    if not angles:
        raise ConfigurationError("angle list is empty")
    return angles
