from __future__ import annotations

import gzip
import json

import numpy as np
import pytest

from cxrforge import taxonomy as tx
from cxrforge.errors import DataError, FormatError, ParameterError, ShapeError, TaxonomyError
from cxrforge.nifti import read_nifti, write_nifti
from cxrforge.volume import (
    CtVolume,
    LabelSet,
    clip_hu,
    load_ct,
    load_labels,
    resample,
    resample_labels,
    save_label_map,
    save_labels_dir,
)


def test_taxonomy_has_54_unique_classes():
    assert len(tx.TAXONOMY) == 54
    assert [c.id for c in tx.TAXONOMY] == list(range(54))
    assert len({c.name for c in tx.TAXONOMY}) == 54
    assert all(c.group in tx.GROUPS for c in tx.TAXONOMY)
    assert len(tx.VERTEBRAE) == 11 and len(tx.RIBS_LEFT) == 12 and len(tx.RIBS_RIGHT) == 12
    assert set(tx.BONE_IDS).isdisjoint(tx.SOFT_IDS)
    assert sorted(tx.BONE_IDS + tx.SOFT_IDS) == list(range(54))


def test_taxonomy_names_roundtrip():
    for c in tx.TAXONOMY:
        assert tx.class_id(c.name) == c.id
    with pytest.raises(TaxonomyError):
        tx.class_id("spleen")


def test_load_trivial_volume(tmp_path):
    write_nifti(tmp_path / "a.nii.gz", np.zeros((2, 2, 2), np.int16))
    v = load_ct(tmp_path / "a.nii.gz")
    assert v.shape == (2, 2, 2)
    assert np.count_nonzero(v.data) == 0


def test_spacing_passthrough(tmp_path):
    write_nifti(tmp_path / "a.nii", np.zeros((3, 4, 5), np.float32), spacing=(0.7, 0.7, 1.5))
    v = load_ct(tmp_path / "a.nii")
    assert v.spacing == pytest.approx((0.7, 0.7, 1.5))
    assert v.shape == (3, 4, 5)


def test_roundtrip_preserves_values_and_order(tmp_path, rng):
    data = rng.integers(-1000, 2000, size=(5, 6, 7)).astype(np.int16)
    write_nifti(tmp_path / "a.nii.gz", data, spacing=(1.0, 2.0, 3.0))
    img = read_nifti(tmp_path / "a.nii.gz")
    assert np.array_equal(img.data, data)
    assert img.affine[2, 2] == pytest.approx(3.0)


def test_gzip_output_is_deterministic(tmp_path):
    data = np.arange(27, dtype=np.int16).reshape(3, 3, 3)
    write_nifti(tmp_path / "a.nii.gz", data)
    write_nifti(tmp_path / "b.nii.gz", data)
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()


def test_truncated_file_is_format_error(tmp_path):
    write_nifti(tmp_path / "a.nii", np.zeros((8, 8, 8), np.int16))
    raw = (tmp_path / "a.nii").read_bytes()
    (tmp_path / "t.nii").write_bytes(raw[:500])
    with pytest.raises(FormatError):
        load_ct(tmp_path / "t.nii")
    (tmp_path / "h.nii.gz").write_bytes(gzip.compress(raw[:100]))
    with pytest.raises(FormatError):
        load_ct(tmp_path / "h.nii.gz")


def test_bad_magic_is_format_error(tmp_path):
    write_nifti(tmp_path / "a.nii", np.zeros((2, 2, 2), np.int16))
    raw = bytearray((tmp_path / "a.nii").read_bytes())
    raw[344:348] = b"xxxx"
    (tmp_path / "a.nii").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_ct(tmp_path / "a.nii")


def test_non_finite_is_data_error(tmp_path):
    data = np.zeros((2, 2, 2), np.float32)
    data[0, 0, 0] = np.nan
    write_nifti(tmp_path / "a.nii", data)
    with pytest.raises(DataError):
        load_ct(tmp_path / "a.nii")


def test_missing_orientation_assumes_axis_two(tmp_path, caplog):
    write_nifti(tmp_path / "a.nii", np.zeros((2, 2, 2), np.int16), affine=False)
    v = load_ct(tmp_path / "a.nii")
    assert v.si_axis == 2 and v.orientation_assumed
    assert "assuming axis 2" in caplog.text


def test_orientation_from_affine(tmp_path):
    aff = np.array([[0, 0, 1.0, 0], [1.0, 0, 0, 0], [0, -2.0, 0, 0], [0, 0, 0, 1]])
    write_nifti(tmp_path / "a.nii", np.zeros((2, 3, 4), np.int16), spacing=(1, 2, 1), affine=aff)
    v = load_ct(tmp_path / "a.nii")
    assert (v.si_axis, v.si_sign, v.orientation_assumed) == (1, -1, False)


def test_ctvolume_invariants():
    with pytest.raises(ParameterError):
        CtVolume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    with pytest.raises(ShapeError):
        CtVolume(np.zeros((2, 2)), (1.0, 1.0, 1.0))
    with pytest.raises(DataError):
        CtVolume(np.full((2, 2, 2), np.inf), (1.0, 1.0, 1.0))
    v = CtVolume(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0  # read-only


def test_partial_labels_from_directory(tmp_path):
    heart = np.zeros((4, 4, 4), np.uint8)
    heart[1:3, 1:3, 1:3] = 1
    (tmp_path / "lab").mkdir()
    write_nifti(tmp_path / "lab" / "heart.nii.gz", heart)
    labels = load_labels(tmp_path / "lab")
    assert labels.mask("heart").sum() == 8
    present = labels.present()
    assert present[tx.class_id("heart")] and present.sum() == 1
    assert labels.reliable.sum() == 1 and labels.reliable[tx.class_id("heart")]


def test_all_classes_reliable(tmp_path, rng):
    shape = (4, 4, 4)
    labels = LabelSet.from_masks({c.id: rng.random(shape) < 0.5 for c in tx.TAXONOMY})
    labels = LabelSet.from_masks({c.id: labels.mask(c.id) | (np.arange(64).reshape(shape) == c.id)
                                  for c in tx.TAXONOMY})
    save_labels_dir(labels, tmp_path / "lab")
    loaded = load_labels(tmp_path / "lab")
    assert loaded.reliable.all()
    assert np.array_equal(loaded.bits, labels.bits)


def test_label_shape_mismatch(tmp_path):
    (tmp_path / "lab").mkdir()
    write_nifti(tmp_path / "lab" / "heart.nii.gz", np.ones((64, 64, 64), np.uint8))
    ct = CtVolume(np.zeros((128, 128, 128), np.float32), (1, 1, 1))
    with pytest.raises(ShapeError):
        load_labels(tmp_path / "lab", reference=ct)


def test_unknown_class_name_in_directory(tmp_path):
    (tmp_path / "lab").mkdir()
    write_nifti(tmp_path / "lab" / "spleen.nii.gz", np.ones((2, 2, 2), np.uint8))
    with pytest.raises(TaxonomyError):
        load_labels(tmp_path / "lab")


def test_integer_label_map_with_sidecar(tmp_path):
    data = np.zeros((4, 4, 4), np.uint8)
    data[0] = 3
    data[1] = 7
    write_nifti(tmp_path / "seg.nii.gz", data)
    (tmp_path / "seg.json").write_text(json.dumps({"sternum": 3, "aorta": 7}))
    labels = load_labels(tmp_path / "seg.nii.gz")
    assert labels.mask("sternum").sum() == 16 and labels.mask("aorta").sum() == 16
    assert labels.present().sum() == 2


def test_integer_label_unknown_value(tmp_path):
    data = np.zeros((2, 2, 2), np.uint8)
    data[0] = 9
    write_nifti(tmp_path / "seg.nii.gz", data)
    (tmp_path / "seg.json").write_text(json.dumps({"sternum": 3}))
    with pytest.raises(TaxonomyError):
        load_labels(tmp_path / "seg.nii.gz")


def test_label_map_roundtrip(tmp_path, rng):
    shape = (5, 5, 5)
    sel = rng.integers(0, 4, size=shape)
    labels = LabelSet.from_masks({"heart": sel == 1, "rib_left_3": sel == 2, "vertebrae_T9": sel == 3})
    save_label_map(labels, tmp_path / "m.nii.gz")
    loaded = load_labels(tmp_path / "m.nii.gz")
    assert np.array_equal(loaded.bits, labels.bits)


def test_unions_are_consistent(rng):
    labels = LabelSet.from_masks({c: rng.random((6, 6, 6)) < 0.2 for c in (0, 12, 20, 33, 39, 41, 48, 52)})
    assert np.array_equal(labels.roi, labels.soft | labels.bone)
    assert not np.any(labels.soft & (labels.bits == 0))
    assert np.array_equal(labels.vertebrae, labels.mask(0))
    assert np.array_equal(labels.ribs_left, labels.mask(20))
    assert np.array_equal(labels.ribs_right, labels.mask(33))


@pytest.mark.parametrize("value,expected", [(2500, 2000), (0, 0), (-1500, -1000)])
def test_clip_hu_examples(value, expected):
    v = CtVolume(np.full((1, 1, 1), float(value)), (1, 1, 1))
    assert clip_hu(v, -1000, 2000).data[0, 0, 0] == expected


def test_clip_hu_idempotent_and_errors(rng):
    v = CtVolume(rng.normal(0, 2000, (5, 5, 5)), (1, 1, 1))
    once = clip_hu(v)
    assert np.array_equal(clip_hu(once).data, once.data)
    inside = (v.data >= -1000) & (v.data <= 2000)
    assert np.array_equal(once.data[inside], v.data[inside])
    with pytest.raises(ParameterError):
        clip_hu(v, 10, 10)


def test_resample_identity_is_bit_exact(rng):
    v = CtVolume(rng.normal(size=(4, 5, 6)), (0.7, 0.8, 1.5))
    r = resample(v, (0.7, 0.8, 1.5))
    assert np.array_equal(r.data, v.data)


def test_resample_constant(rng):
    v = CtVolume(np.full((6, 7, 8), 42.0), (1.0, 1.0, 1.0))
    r = resample(v, (0.6, 1.7, 2.3))
    assert np.allclose(r.data, 42.0, rtol=1e-12, atol=0)


def test_resample_linear_ramp_downsample():
    n = 17
    i, j, k = np.meshgrid(*[np.arange(n)] * 3, indexing="ij")
    ramp = 2.0 * i - 3.0 * j + 0.5 * k
    v = CtVolume(ramp, (1.0, 1.0, 1.0))
    r = resample(v, (2.0, 2.0, 2.0))
    assert r.shape == (9, 9, 9)
    ii, jj, kk = np.meshgrid(*[np.arange(9) * 2.0] * 3, indexing="ij")
    assert np.max(np.abs(r.data - (2.0 * ii - 3.0 * jj + 0.5 * kk))) < 1e-6
    # off-grid ratio: trilinear reproduces a linear field exactly
    r2 = resample(v, (1.5, 0.75, 1.25))
    a, b, c = np.meshgrid(*[np.arange(s) * t for s, t in zip(r2.shape, (1.5, 0.75, 1.25))], indexing="ij")
    assert np.max(np.abs(r2.data - (2.0 * a - 3.0 * b + 0.5 * c))) < 1e-6
    # world extent kept within one voxel
    for n_old, n_new, t in zip(v.shape, r2.shape, (1.5, 0.75, 1.25)):
        assert abs((n_old - 1) * 1.0 - (n_new - 1) * t) < t


def test_resample_rejects_bad_spacing():
    v = CtVolume(np.zeros((3, 3, 3)), (1, 1, 1))
    with pytest.raises(ParameterError):
        resample(v, (1.0, 0.0, 1.0))


def test_resample_labels_nearest(rng):
    labels = LabelSet.from_masks({"heart": rng.random((8, 8, 8)) < 0.5}, spacing=(1, 1, 1))
    r = resample_labels(labels, (2.0, 2.0, 2.0))
    assert np.array_equal(r.mask("heart"), labels.mask("heart")[::2, ::2, ::2])
