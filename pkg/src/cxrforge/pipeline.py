"""Batch orchestration: curate, randomize, project and write a dataset.

Output tree (all paths in manifests are relative to ``output_dir``)::

    curation.jsonl                      QC verdict per input volume
    class_map.json                      class name -> bit index
    <volume_id>/<variation>/<angle>/    angle formatted as 000.00
        image.png                       8-bit grayscale radiograph
        masks.bin                       little-endian uint64 [ny, nx] bitmask
        plan.json                       plan, view parameters, geometry
        image.f32                       optional raw line integrals
    plans.jsonl                         optional, one full plan per variation
    summary.json                        counts per view and per class
    manifest.jsonl                      one record per sample, written last

Nothing written depends on wall-clock time, worker count or task order, so
a rerun with the same config and seed reproduces every byte.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import taxonomy as tx
from .config import ForgeConfig
from .dataset import VolumePair, load_pair
from .errors import ForgeError
from .msdr2d import apply_all_2d, sample_params_2d
from .msdr3d import apply_all_3d, perturb_geometry, sample_plan
from .parallel import parallel_map, resolve_workers
from .projector import ProjectionGeometry, normalize_unit, pack_masks, render_sample, unpack_masks, with_pitch
from .qc import clean_components_2d, curate
from .quant import compute_ctr, compute_spca

log = logging.getLogger(__name__)

CURATION_FILE = "curation.jsonl"
MANIFEST_FILE = "manifest.jsonl"
SUMMARY_FILE = "summary.json"
CLASS_MAP_FILE = "class_map.json"
PLANS_FILE = "plans.jsonl"
QUANT_FILE = "quant.jsonl"

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _write_jsonl(path: Path, records) -> None:
    _atomic_write(path, "".join(_dumps(r) + "\n" for r in records).encode("utf-8"))


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def png_bytes(image_u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image_u8, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def read_masks_bin(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<u8").reshape(shape)


def angle_dir(angle: float) -> str:
    return f"{float(angle):06.2f}"


def variation_key(volume_id: str, variation: int) -> str:
    return f"{volume_id}#{int(variation)}"


# -- qc -----------------------------------------------------------------------

def run_qc(cfg: ForgeConfig) -> tuple[list[dict], int]:
    """Curate every input volume and write ``curation.jsonl``; returns (records, exit code)."""
    out = Path(cfg.output_dir)
    ct_dir = Path(cfg.ct_dir)
    if not ct_dir.is_dir() or not any(ct_dir.iterdir()):
        log.warning("no input volumes found in %s", ct_dir)
    g = ProjectionGeometry(sdd=cfg.geometry.sdd, odd=cfg.geometry.odd, nx=cfg.geometry.nx,
                           ny=cfg.geometry.ny, pixel_pitch=cfg.geometry.pixel_pitch)
    records = curate(cfg.ct_dir, cfg.label_dir, geometry=g, angles=cfg.qc_angles or cfg.angles,
                     tau_overlap=cfg.tau_overlap, min_frac=cfg.min_frac, class_map=cfg.class_map,
                     target_spacing=cfg.target_spacing, workers=resolve_workers(cfg.workers))
    _write_jsonl(out / CURATION_FILE, records)
    errors = sum(r["error"] is not None for r in records)
    for r in records:
        if r["error"]:
            log.error("qc failed for %s: %s", r["volume_id"], r["error"])
        elif not r["accepted"]:
            log.info("rejected %s: %s", r["volume_id"], ",".join(r["reasons"]))
    return records, (EXIT_PARTIAL if errors else EXIT_OK)


# -- generate -----------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    pair: VolumePair
    variation: int
    reliable: tuple[bool, ...]


def _render_variation(task: _Task, cfg: ForgeConfig) -> dict:
    """Render all views of one (volume, variation); returns records or the error."""
    vid, v = task.pair.volume_id, task.variation
    key = variation_key(vid, v)
    out = {"volume_id": vid, "variation_index": v, "records": [], "plan": None, "error": None}
    try:
        ct, labels = load_pair(task.pair, class_map=cfg.class_map, target_spacing=cfg.target_spacing)
        labels = labels.with_reliable(np.asarray(task.reliable, dtype=bool) & labels.present())
        plan = sample_plan(cfg.global_seed, key, cfg.msdr3d)
        placed: list = []
        ct_aug = apply_all_3d(ct, labels, plan, record=placed, cfg=cfg.msdr3d)
        gc = cfg.geometry_for(vid)
        base = with_pitch(ProjectionGeometry(sdd=gc.sdd, odd=gc.odd, nx=gc.nx, ny=gc.ny,
                                             pixel_pitch=gc.pixel_pitch), ct.shape, ct.spacing)
        geom = perturb_geometry(base, plan)
        plan_dict = plan.to_dict()
        digest = plan.digest()
        out["plan"] = {"volume_id": vid, "variation_index": v, "plan_digest": digest, "plan": plan_dict}
        available = [tx.TAXONOMY[c].name for c in np.flatnonzero(labels.reliable)]

        for idx, angle in enumerate(cfg.angles):
            sample = render_sample(ct_aug, labels, geom, angle=float(angle), plan_id=digest)
            params = sample_params_2d(cfg.global_seed, key, idx, cfg.msdr2d)
            img = apply_all_2d(normalize_unit(sample.image_raw), params)
            image_u8 = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
            packed = sample.masks_packed
            if cfg.clean_masks:
                masks = unpack_masks(packed)
                for c in range(tx.NUM_CLASSES):
                    if masks[c].any():
                        masks[c] = clean_components_2d(masks[c], cfg.min_frac)[0]
                packed = pack_masks(masks)

            rel = Path(vid) / str(v) / angle_dir(angle)
            d = Path(cfg.output_dir) / rel
            files = {"image": rel / "image.png", "masks": rel / "masks.bin", "plan": rel / "plan.json"}
            view_plan = {
                "sample_id": str(rel),
                "volume_id": vid,
                "variation_index": v,
                "stream_key": key,
                "view_index": idx,
                "view_angle": float(angle),
                "plan_digest": digest,
                "plan": plan_dict,
                "implants_placed": placed,
                "tone_map": params.to_dict(),
                "geometry": sample.geometry.to_dict(),
                "masks": {"shape": list(packed.shape), "dtype": "<u8", "bit": "class id"},
                "available_classes": available,
            }
            _atomic_write(d / "image.png", png_bytes(image_u8))
            _atomic_write(d / "masks.bin", packed.astype("<u8").tobytes())
            _atomic_write(d / "plan.json", (_dumps(view_plan) + "\n").encode("utf-8"))
            if cfg.write_raw:
                files["raw"] = rel / "image.f32"
                _atomic_write(d / "image.f32", sample.image_raw.astype("<f4").tobytes())
            present = unpack_masks(packed).any(axis=(1, 2))
            out["records"].append({
                "sample_id": str(rel),
                "volume_id": vid,
                "variation_index": v,
                "view_index": idx,
                "view_angle": float(angle),
                "plan_digest": digest,
                "availability": [bool(b) for b in labels.reliable],
                "visible": [bool(b) for b in present],
                "files": {k: str(p) for k, p in files.items()},
                "checksum": {k: sha256_file(Path(cfg.output_dir) / p) for k, p in files.items()},
            })
    except Exception as exc:  # a failed variation never stops the batch
        out["error"] = f"{type(exc).__name__}: {exc}"
        out["records"] = []
    return out


def _load_curation(cfg: ForgeConfig, curation_manifest) -> list[dict]:
    path = Path(curation_manifest or cfg.curation_manifest or Path(cfg.output_dir) / CURATION_FILE)
    if not path.exists():
        raise ForgeError(f"curation manifest {path} not found; run qc first")
    return read_jsonl(path)


def summarize(records: list[dict], cfg: ForgeConfig, failures: list[dict]) -> dict:
    per_view = {angle_dir(a): 0 for a in cfg.angles}
    available = {c.name: 0 for c in tx.TAXONOMY}
    visible = {c.name: 0 for c in tx.TAXONOMY}
    for r in records:
        per_view[angle_dir(r["view_angle"])] += 1
        for c in range(tx.NUM_CLASSES):
            available[tx.TAXONOMY[c].name] += r["availability"][c]
            visible[tx.TAXONOMY[c].name] += r["visible"][c]
    return {
        "samples": len(records),
        "volumes": len({r["volume_id"] for r in records}),
        "failures": failures,
        "per_view": per_view,
        "per_class_available": available,
        "per_class_visible": visible,
        "global_seed": cfg.global_seed,
        "config": cfg.to_dict() | {"workers": None, "output_dir": None},
    }


def run_generate(cfg: ForgeConfig, curation_manifest=None) -> tuple[list[dict], int]:
    """Render the dataset for every retained volume; returns (manifest records, exit code)."""
    from functools import partial

    out = Path(cfg.output_dir)
    curation = _load_curation(cfg, curation_manifest)
    tasks = []
    for rec in sorted(curation, key=lambda r: r["volume_id"]):
        if rec.get("error") or not rec.get("accepted"):
            continue
        rel = rec.get("per_class_reliability") or {}
        reliable = tuple(bool(rel.get(c.name, False)) for c in tx.TAXONOMY)
        pair = VolumePair(rec["volume_id"], rec["ct_path"], rec["label_path"])
        for v in range(cfg.variations_per_volume):
            tasks.append(_Task(pair, v, reliable))
    if not tasks:
        log.warning("no retained volumes to render")

    results = parallel_map(partial(_render_variation, cfg=cfg), tasks, resolve_workers(cfg.workers))
    records, plans, failures = [], [], []
    for res in results:
        if res["error"]:
            log.error("variation %s#%d failed: %s", res["volume_id"], res["variation_index"], res["error"])
            failures.append({"volume_id": res["volume_id"], "variation_index": res["variation_index"],
                             "error": res["error"]})
        records.extend(res["records"])
        if res["plan"] is not None:
            plans.append(res["plan"])

    _atomic_write(out / CLASS_MAP_FILE, (_dumps(tx.class_map()) + "\n").encode("utf-8"))
    if cfg.dump_plans:
        _write_jsonl(out / PLANS_FILE, plans)
    _atomic_write(out / SUMMARY_FILE, (_dumps(summarize(records, cfg, failures)) + "\n").encode("utf-8"))
    _write_jsonl(out / MANIFEST_FILE, records)
    return records, (EXIT_PARTIAL if failures else EXIT_OK)


def verify_manifest(output_dir) -> list[str]:
    """Sample ids whose files are missing or fail their checksum."""
    out = Path(output_dir)
    bad = []
    for r in read_jsonl(out / MANIFEST_FILE):
        for k, p in r["files"].items():
            f = out / p
            if not f.exists() or sha256_file(f) != r["checksum"][k]:
                bad.append(r["sample_id"])
                break
    return bad


def tree_checksums(root) -> dict[str, str]:
    """Relative path -> SHA-256 for every file under ``root``."""
    root = Path(root)
    return {str(p.relative_to(root)): sha256_file(p) for p in sorted(root.rglob("*")) if p.is_file()}


# -- quant --------------------------------------------------------------------

def _load_mask_file(path: Path) -> np.ndarray:
    """``bool [54, H, W]`` from ``masks.bin`` (shape in sibling plan.json) or ``.npy``."""
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.dtype == np.uint64 and arr.ndim == 2:
            return unpack_masks(arr)
        arr = arr.astype(bool)
        if arr.ndim != 3 or arr.shape[0] != tx.NUM_CLASSES:
            raise ForgeError(f"{path}: expected [{tx.NUM_CLASSES}, H, W] masks, got {arr.shape}")
        return arr
    meta = json.loads((path.parent / "plan.json").read_text())
    return unpack_masks(read_masks_bin(path, tuple(meta["masks"]["shape"])))


def quantify(masks: np.ndarray) -> dict:
    rec = {"ctr": None, "spca": None, "severity": None, "errors": {}}
    heart = masks[tx.HEART_IDS].any(axis=0)
    lung = masks[tx.LUNG_IDS].any(axis=0)
    try:
        rec["ctr"] = compute_ctr(heart, lung).to_dict()
    except ForgeError as exc:
        rec["errors"]["ctr"] = f"{type(exc).__name__}: {exc}"
    try:
        spca = compute_spca(masks)
        rec["spca"] = spca.to_dict()
        rec["severity"] = spca.severity
    except ForgeError as exc:
        rec["errors"]["spca"] = f"{type(exc).__name__}: {exc}"
    return rec


def run_quant(cfg: ForgeConfig, mask_dir) -> tuple[list[dict], int]:
    """CTR and spine-curvature records for every mask file under ``mask_dir``."""
    mask_dir = Path(mask_dir)
    files = sorted(p for p in mask_dir.rglob("*") if p.name == "masks.bin" or p.suffix == ".npy") \
        if mask_dir.is_dir() else []
    records = []
    for f in files:
        rel = str(f.relative_to(mask_dir))
        try:
            rec = quantify(_load_mask_file(f))
        except Exception as exc:
            rec = {"ctr": None, "spca": None, "severity": None, "errors": {"load": f"{type(exc).__name__}: {exc}"}}
        rec["inputs"] = rel
        if rec["errors"]:
            log.warning("measurement failed for %s: %s", rel, rec["errors"])
        records.append(rec)
    _write_jsonl(Path(cfg.output_dir) / QUANT_FILE, records)
    failed = sum(bool(r["errors"]) for r in records)
    return records, (EXIT_PARTIAL if failed else EXIT_OK)
