from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxrforge.errors import ParameterError
from cxrforge.msdr2d import (
    Msdr2dConfig,
    ToneMapParams,
    apply_all_2d,
    invert_polarity_2d,
    sample_params_2d,
    tone_map,
)

knots = st.tuples(st.floats(-0.2, 0.4), st.floats(-0.2, 0.4))


def tone_oracle(x, knot):
    """Evaluate one input by walking the sorted anchor list."""
    pts = sorted([(0.0, 0.0), (1.0, 1.0), tuple(knot)], key=lambda p: p[0])
    pts = [p for i, p in enumerate(pts) if i == 0 or p[0] > pts[i - 1][0]]
    k = 0
    while k < len(pts) - 2 and x >= pts[k + 1][0]:
        k += 1
    (x0, y0), (x1, y1) = pts[k], pts[k + 1]
    return min(1.0, max(0.0, y0 + (x - x0) * (y1 - y0) / (x1 - x0)))


def tm(x, knot):
    return tone_map(np.asarray(x, dtype=float), ToneMapParams(active=True, knot=knot))


def test_tone_map_examples():
    out = tm([0.0, 0.2, 0.6, 1.0], (0.2, 0.4))
    assert out.tolist() == pytest.approx([0.0, 0.4, 0.7, 1.0], abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(knots, st.floats(0.0, 1.0))
def test_tone_map_matches_oracle(knot, x):
    assert float(tm([x], knot)[0]) == pytest.approx(tone_oracle(x, knot), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.floats(0.01, 0.4), st.floats(0.0, 0.4)))
def test_tone_map_endpoints_and_monotone(knot):
    x = np.linspace(0, 1, 201)
    y = tm(x, knot)
    assert y[0] == 0.0 and y[-1] == 1.0
    assert np.all(np.diff(y) >= -1e-15)


@settings(max_examples=100, deadline=None)
@given(knots, st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_tone_map_output_bounds(knot, xs):
    y = tm(xs, knot)
    assert np.all((y >= 0) & (y <= 1))


def test_tone_map_negative_knot_x_extends_segment():
    # knot left of the domain: [0, 1] lies on the (0,0)-(1,1) segment
    assert tm([0.0, 0.3, 1.0], (-0.1, 0.2)).tolist() == pytest.approx([0.0, 0.3, 1.0])


def test_tone_map_knot_on_anchor_keeps_fixed_anchor():
    assert tm([0.0, 0.5], (0.0, 0.3)).tolist() == pytest.approx([0.0, 0.5])


def test_inversion_examples():
    assert np.all(invert_polarity_2d(np.full((3, 3), 0.4)) == 0.0)
    img = np.array([[0.1, 0.5], [0.9, 0.3]])
    raw = invert_polarity_2d(img, eps=1e-6, renormalize=False)
    assert raw[0, 0] == pytest.approx(0.9 + 1e-6)
    out = invert_polarity_2d(img)
    assert np.argmax(out) == np.argmin(img) and np.argmin(out) == np.argmax(img)
    assert out.min() == 0.0 and out.max() == 1.0
    with pytest.raises(ParameterError):
        invert_polarity_2d(np.zeros((0,)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_inversion_involution(seed):
    img = np.random.default_rng(seed).random((8, 9)) * 3 - 1
    twice = invert_polarity_2d(invert_polarity_2d(img, 0.0, False), 0.0, False)
    assert np.allclose(twice, img, atol=1e-12)
    renorm = invert_polarity_2d(invert_polarity_2d(img))
    lo, hi = img.min(), img.max()
    assert np.allclose(renorm, (img - lo) / (hi - lo), atol=1e-6)


def test_apply_all_identity_and_order(rng):
    img = rng.random((6, 6))
    assert np.array_equal(apply_all_2d(img, ToneMapParams()), img)
    p = ToneMapParams(active=True, knot=(0.2, 0.4), polarity_active=True)
    want = invert_polarity_2d(tone_map(img, p), p.epsilon)
    assert np.array_equal(apply_all_2d(img, p), want)
    out = apply_all_2d(img, p)
    assert out.min() >= 0 and out.max() <= 1


def test_activation_rates_over_many_views():
    n = 10_000
    params = [sample_params_2d(0, "vol#0", i) for i in range(n)]
    tone = np.mean([p.active for p in params])
    pol = np.mean([p.polarity_active for p in params])
    assert abs(tone - 0.7) <= 0.02 and abs(pol - 0.3) <= 0.02
    kx = np.array([p.knot[0] for p in params])
    ky = np.array([p.knot[1] for p in params])
    assert kx.min() >= -0.2 and kx.max() <= 0.4 and ky.min() >= -0.2 and ky.max() <= 0.4


def test_sampling_is_keyed_by_view():
    a = sample_params_2d(1, "k", 3)
    assert a == sample_params_2d(1, "k", 3)
    assert any(sample_params_2d(1, "k", i) != a for i in range(4))


def test_disabling_keeps_knot_draws():
    on = sample_params_2d(5, "k", 0)
    off = sample_params_2d(5, "k", 0, Msdr2dConfig(enabled=("polarity",)))
    assert not off.active and off.knot == on.knot and off.polarity_active == on.polarity_active


def test_config_validation():
    with pytest.raises(ParameterError):
        Msdr2dConfig(tone_p=1.2)
    with pytest.raises(ParameterError):
        Msdr2dConfig(epsilon=-1.0)
    with pytest.raises(ParameterError):
        Msdr2dConfig(enabled=("blur",))
    assert Msdr2dConfig.from_dict({"knot_x": [0.0, 0.3]}).knot_x == (0.0, 0.3)
