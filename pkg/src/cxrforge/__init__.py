"""Deterministic synthetic chest radiograph generation from labelled CT."""

from __future__ import annotations

from .taxonomy import NUM_CLASSES, TAXONOMY, AnatomyClass
from .volume import CtVolume, LabelSet, clip_hu, load_ct, load_labels

__version__ = "0.1.0"

__all__ = [
    "NUM_CLASSES",
    "TAXONOMY",
    "AnatomyClass",
    "CtVolume",
    "LabelSet",
    "clip_hu",
    "load_ct",
    "load_labels",
]
