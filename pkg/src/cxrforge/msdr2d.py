"""Post-projection (detector-level) randomization on [0, 1] images.

Parameters are drawn per rendered view from the variation's stream keyed by
view index. Masks are never touched here.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .rng import stream

EPSILON = 1e-6
FAMILIES_2D = ("tone_map", "polarity")


@dataclass
class Msdr2dConfig:
    tone_p: float = 0.7
    knot_x: tuple[float, float] = (-0.2, 0.4)
    knot_y: tuple[float, float] = (-0.2, 0.4)
    polarity_p: float = 0.3
    epsilon: float = EPSILON
    enabled: tuple[str, ...] = FAMILIES_2D

    def __post_init__(self):
        for name in ("tone_p", "polarity_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} is not a probability")
        if self.epsilon < 0:
            raise ParameterError("epsilon must be >= 0")
        unknown = set(self.enabled) - set(FAMILIES_2D)
        if unknown:
            raise ParameterError(f"unknown 2D families {sorted(unknown)}")
        self.enabled = tuple(self.enabled)

    @classmethod
    def from_dict(cls, d: dict) -> "Msdr2dConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class ToneMapParams:
    active: bool = False
    knot: tuple[float, float] = (0.5, 0.5)
    polarity_active: bool = False
    epsilon: float = EPSILON

    def to_dict(self) -> dict:
        d = asdict(self)
        d["knot"] = list(self.knot)
        return d


def sample_params_2d(global_seed: int, stream_key: str, view_index: int,
                     cfg: Msdr2dConfig | None = None) -> ToneMapParams:
    cfg = cfg or Msdr2dConfig()
    rng = stream(global_seed, stream_key, "view", int(view_index))
    p_tone = cfg.tone_p if "tone_map" in cfg.enabled else 0.0
    p_pol = cfg.polarity_p if "polarity" in cfg.enabled else 0.0
    tone = bool(rng.random() < p_tone)
    knot = (float(rng.uniform(*cfg.knot_x)), float(rng.uniform(*cfg.knot_y)))
    pol = bool(rng.random() < p_pol)
    return ToneMapParams(active=tone, knot=knot, polarity_active=pol, epsilon=cfg.epsilon)


def tone_map(img: np.ndarray, p: ToneMapParams) -> np.ndarray:
    """Piecewise-linear map through (0,0), knot, (1,1), extended linearly and clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    anchors = sorted([(0.0, 0.0), (1.0, 1.0), (float(p.knot[0]), float(p.knot[1]))], key=lambda a: a[0])
    # drop zero-width segments; a knot on an end anchor's x loses to the fixed anchor
    pts = [anchors[0]]
    for a in anchors[1:]:
        if a[0] > pts[-1][0]:
            pts.append(a)
    xs = np.array([a[0] for a in pts])
    ys = np.array([a[1] for a in pts])
    out = np.interp(img, xs, ys)  # exact at the anchors
    lo, hi = img < xs[0], img > xs[-1]
    if lo.any():
        out[lo] = ys[0] + (img[lo] - xs[0]) * (ys[1] - ys[0]) / (xs[1] - xs[0])
    if hi.any():
        out[hi] = ys[-1] + (img[hi] - xs[-1]) * (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    return np.clip(out, 0.0, 1.0)


def _renormalize(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def invert_polarity_2d(img: np.ndarray, eps: float = EPSILON, renormalize: bool = True) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise ParameterError("cannot invert an empty image")
    out = (float(img.min()) + float(img.max())) - img + eps
    return _renormalize(out) if renormalize else out


def apply_all_2d(img: np.ndarray, p: ToneMapParams) -> np.ndarray:
    out = np.asarray(img, dtype=np.float64)
    if p.active:
        out = tone_map(out, p)
    if p.polarity_active:
        out = invert_polarity_2d(out, p.epsilon)
    return out
