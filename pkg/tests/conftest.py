from __future__ import annotations

import numpy as np
import pytest

from cxrforge import taxonomy as tx
from cxrforge.volume import CtVolume, LabelSet


def vertebra_stack(shape=(12, 12, 44), gap: int = 1, **kwargs) -> LabelSet:
    """Eleven disjoint vertebra slabs stacked along axis 2, T2 at the top."""
    masks = {}
    height = (shape[2] - gap) // 11 - gap
    for k, cid in enumerate(tx.VERTEBRAE):
        m = np.zeros(shape, dtype=bool)
        hi = shape[2] - gap - k * (height + gap)
        m[3:9, 3:9, hi - height:hi] = True
        masks[cid] = m
    return LabelSet.from_masks(masks, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def chest():
    from cxrforge.phantom import make_chest_phantom

    return make_chest_phantom((48, 48, 48), seed=3)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    from cxrforge.phantom import write_toy_dataset

    root = tmp_path_factory.mktemp("toy")
    write_toy_dataset(root, 3, (40, 40, 40), defects={1: "three_in_slice"})
    return root


def random_labels(shape, rng, classes=(0, 5, 15, 27, 40, 48), p=0.3) -> LabelSet:
    return LabelSet.from_masks({c: rng.random(shape) < p for c in classes})


def uniform_ct(shape, value=0.0, spacing=(1.0, 1.0, 1.0)) -> CtVolume:
    return CtVolume(np.full(shape, float(value)), spacing)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
