"""The 54-class chest anatomy taxonomy and its group structure.

Class ids double as bit positions in packed ``uint64`` label volumes, so the
ordering here is part of the on-disk format.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import TaxonomyError

GROUPS = (
    "vertebrae",
    "rib_left",
    "rib_right",
    "clavicle",
    "humerus",
    "sternum",
    "heart_chamber",
    "great_vessel",
    "lung_lobe",
    "whole_organ",
)

BONE_GROUPS = frozenset({"vertebrae", "rib_left", "rib_right", "clavicle", "humerus", "sternum"})
SOFT_GROUPS = frozenset({"heart_chamber", "great_vessel", "lung_lobe", "whole_organ"})


@dataclass(frozen=True)
class AnatomyClass:
    id: int
    name: str
    group: str

    @property
    def bit(self) -> int:
        return 1 << self.id

    @property
    def is_bone(self) -> bool:
        return self.group in BONE_GROUPS


def _build() -> tuple[AnatomyClass, ...]:
    entries: list[tuple[str, str]] = []
    entries += [(f"vertebrae_T{k}", "vertebrae") for k in range(2, 13)]
    entries += [("clavicula_left", "clavicle"), ("clavicula_right", "clavicle")]
    entries += [("humerus_left", "humerus"), ("humerus_right", "humerus")]
    entries += [(f"rib_left_{k}", "rib_left") for k in range(1, 13)]
    entries += [(f"rib_right_{k}", "rib_right") for k in range(1, 13)]
    entries += [("sternum", "sternum")]
    entries += [("heart", "whole_organ")]
    entries += [
        ("heart_atrium_left", "heart_chamber"),
        ("heart_atrium_right", "heart_chamber"),
        ("heart_myocardium", "heart_chamber"),
        ("heart_ventricle_left", "heart_chamber"),
        ("heart_ventricle_right", "heart_chamber"),
    ]
    entries += [("pulmonary_artery", "great_vessel"), ("aorta", "great_vessel")]
    entries += [("lung", "whole_organ")]
    entries += [
        ("lung_upper_lobe_left", "lung_lobe"),
        ("lung_lower_lobe_left", "lung_lobe"),
        ("lung_upper_lobe_right", "lung_lobe"),
        ("lung_middle_lobe_right", "lung_lobe"),
        ("lung_lower_lobe_right", "lung_lobe"),
    ]
    return tuple(AnatomyClass(i, name, group) for i, (name, group) in enumerate(entries))


TAXONOMY: tuple[AnatomyClass, ...] = _build()
NUM_CLASSES = len(TAXONOMY)
assert NUM_CLASSES == 54

BY_NAME = {c.name: c for c in TAXONOMY}


def class_id(name: str) -> int:
    try:
        return BY_NAME[name].id
    except KeyError:
        raise TaxonomyError(f"unknown anatomy class {name!r}") from None


def ids_in_groups(*groups: str) -> list[int]:
    return [c.id for c in TAXONOMY if c.group in groups]


def bits_for(ids) -> int:
    out = 0
    for i in ids:
        out |= 1 << int(i)
    return out


VERTEBRAE = ids_in_groups("vertebrae")  # T2..T12, superior to inferior
RIBS_LEFT = ids_in_groups("rib_left")
RIBS_RIGHT = ids_in_groups("rib_right")
BONE_IDS = [c.id for c in TAXONOMY if c.group in BONE_GROUPS]
SOFT_IDS = [c.id for c in TAXONOMY if c.group in SOFT_GROUPS]
# bone components that get an individual scale factor
COMPONENT_IDS = VERTEBRAE + RIBS_LEFT + RIBS_RIGHT

HEART_IDS = [class_id("heart")] + ids_in_groups("heart_chamber")
LUNG_IDS = [class_id("lung")] + ids_in_groups("lung_lobe")

BONE_BITS = bits_for(BONE_IDS)
SOFT_BITS = bits_for(SOFT_IDS)
VERTEBRA_BITS = bits_for(VERTEBRAE)
RIB_LEFT_BITS = bits_for(RIBS_LEFT)
RIB_RIGHT_BITS = bits_for(RIBS_RIGHT)
ALL_BITS = bits_for(range(NUM_CLASSES))


def class_map() -> dict[str, int]:
    """Name to bit index, the form written next to packed mask files."""
    return {c.name: c.id for c in TAXONOMY}
