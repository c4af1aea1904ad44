from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cxrforge import quant
from cxrforge import taxonomy as tx
from cxrforge.errors import InsufficientDataError, MeasurementError, ShapeError


def disk(shape, cy, cx, r):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r


def widest_row(mask):
    best = 0
    for row in mask:
        on = [j for j, v in enumerate(row) if v]
        if on:
            best = max(best, on[-1] - on[0] + 1)
    return best


def test_ctr_rectangles():
    lung = np.zeros((300, 300), bool)
    lung[40:260, 25:275] = True
    heart = np.zeros_like(lung)
    heart[150:230, 100:200] = True
    m = quant.compute_ctr(heart, lung)
    assert (m.mrd, m.mld, m.id, m.midline_x) == (50.0, 50.0, 250.0, 150.0)
    assert m.ratio == 0.4
    assert m.ratio == (m.mrd + m.mld) / m.id


def test_ctr_off_centre_heart():
    lung = np.zeros((100, 200), bool)
    lung[10:90, 20:180] = True
    heart = np.zeros_like(lung)
    heart[50:80, 90:150] = True
    m = quant.compute_ctr(heart, lung)
    assert m.mrd == 10.0 and m.mld == 50.0 and m.ratio == pytest.approx(60 / 160)


def test_ctr_heart_wider_than_thorax():
    lung = np.zeros((50, 200), bool)
    lung[10:40, 60:140] = True
    heart = np.zeros_like(lung)
    heart[20:30, 20:180] = True
    assert quant.compute_ctr(heart, lung).ratio == pytest.approx(2.0)


@pytest.mark.parametrize("rh,rl", [(30.0, 55.0), (41.5, 60.2), (22.0, 47.7)])
def test_ctr_disks_against_raster_width(rh, rl):
    shape = (260, 300)
    lung = disk(shape, 130, 95, rl) | disk(shape, 130, 205, rl)
    heart = disk(shape, 150, 150, rh)
    m = quant.compute_ctr(heart, lung)
    assert m.id == widest_row(lung)
    analytic = 2 * rh / (110 + 2 * rl)
    assert abs(m.ratio - analytic) <= 2.0 / m.id


def test_ctr_invariances():
    shape = (200, 220)
    lung = disk(shape, 100, 70, 40) | disk(shape, 100, 150, 40)
    heart = disk(shape, 120, 115, 25)
    base = quant.compute_ctr(heart, lung)
    shifted = quant.compute_ctr(np.roll(heart, 30, axis=0), np.roll(lung, 30, axis=0))
    assert shifted == base
    up = quant.compute_ctr(np.kron(heart, np.ones((2, 2), bool)), np.kron(lung, np.ones((2, 2), bool)))
    assert abs(up.ratio - base.ratio) < 0.02
    assert quant.compute_ctr(heart.astype(np.uint8) * 255, lung.astype(float) * 0.3) == base


def test_ctr_errors():
    z = np.zeros((10, 10), bool)
    o = np.ones((10, 10), bool)
    with pytest.raises(MeasurementError):
        quant.compute_ctr(z, o)
    with pytest.raises(MeasurementError):
        quant.compute_ctr(o, z)
    with pytest.raises(ShapeError):
        quant.compute_ctr(o, np.ones((10, 11), bool))


def spine_masks(xs, ys, half=(3, 5), shape=(256, 256)):
    masks = {}
    for cid, x, y in zip(tx.VERTEBRAE, xs, ys):
        m = np.zeros(shape, bool)
        m[y - half[0]:y + half[0], x - half[1]:x + half[1]] = True
        masks[cid] = m
    return masks


def test_spca_vertical_spine_scores_zero():
    ys = list(range(20, 240, 20))
    m = quant.compute_spca(spine_masks([128] * 11, ys))
    assert len(m.centroids) == 11 and m.classes[0] == "vertebrae_T2"
    assert m.score <= 1e-6 and m.severity == "low"


def test_spca_slanted_collinear_zero():
    ys = list(range(20, 240, 20))
    xs = [60 + k * 10 for k in range(11)]
    assert quant.compute_spca(spine_masks(xs, ys)).score <= 1e-6


def test_spca_single_offset_matches_angle_search():
    ys = list(range(20, 240, 20))
    xs = [128] * 11
    xs[5] = 140
    m = quant.compute_spca(spine_masks(xs, ys))
    assert m.score > 0
    assert m.score == pytest.approx(oracles.tls_by_angle_search(m.centroids), abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_spca_random_points_match_angle_search(seed):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.normal(0, 3, 8) + 100, np.linspace(10, 200, 8) + rng.normal(0, 2, 8)])
    assert quant.spca_score(pts) == pytest.approx(oracles.tls_by_angle_search(pts), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 2 * math.pi), st.floats(-500, 500), st.floats(-500, 500))
def test_spca_rigid_invariance(seed, theta, tx_, ty_):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 20, (9, 2))
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    moved = pts @ rot.T + [tx_, ty_]
    assert quant.spca_score(moved) == pytest.approx(quant.spca_score(pts), abs=1e-6)


def test_spca_rotated_image_phantom():
    ys = list(range(40, 220, 18))[:11]
    xs = [128, 129, 131, 134, 136, 137, 136, 134, 131, 129, 128]
    a = quant.compute_spca(spine_masks(xs, ys, half=(4, 4)))
    masks = spine_masks(xs, ys, half=(4, 4))
    b = quant.compute_spca({k: np.rot90(v) for k, v in masks.items()})
    assert b.score == pytest.approx(a.score, abs=1e-6)


def test_spca_needs_three_centroids():
    masks = spine_masks([100, 100], [50, 80])
    with pytest.raises(InsufficientDataError):
        quant.compute_spca(masks)
    with pytest.raises(InsufficientDataError):
        quant.spca_score([(0, 0), (1, 1)])


def test_spca_accepts_arrays():
    masks = spine_masks([128] * 11, list(range(20, 240, 20)))
    stack = np.stack([masks[c] for c in tx.VERTEBRAE])
    full = np.zeros((tx.NUM_CLASSES, 256, 256), bool)
    full[: len(tx.VERTEBRAE)] = stack
    assert quant.compute_spca(stack).centroids == quant.compute_spca(full).centroids
    with pytest.raises(ShapeError):
        quant.compute_spca(np.zeros((5, 4, 4), bool))


def test_severity_levels_and_monotone():
    assert quant.severity(0.0) == "low"
    assert quant.severity(0.01) == "moderate"
    assert quant.severity(0.03) == "high"
    order = {"low": 0, "moderate": 1, "high": 2}
    levels = [order[quant.severity(s)] for s in np.linspace(0, 0.1, 500)]
    assert levels == sorted(levels)
    assert quant.severity(0.02, thresholds=(0.03, 0.05)) == "low"
