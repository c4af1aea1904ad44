"""Built-in self checks: loss kernels, projector phantoms and plan statistics.

Each suite compares the library against small brute-force references and
returns named checks. Kernels are looked up on their modules at call time,
so a patched (mutated) kernel is caught.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import car, msdr3d, projector


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)


def _close(a, b, rtol=1e-9, atol=1e-12) -> bool:
    return bool(np.allclose(a, b, rtol=rtol, atol=atol))


# -- brute-force references ---------------------------------------------------

def ref_dice(p, g, smooth=1.0):
    inter = s_p = s_g = 0.0
    for idx in np.ndindex(p.shape):
        inter += p[idx] * g[idx]
        s_p += p[idx]
        s_g += g[idx]
    return 1.0 - (2.0 * inter + smooth) / (s_p + s_g + smooth)


def ref_masked_seg(pred, gt, m):
    total, n = 0.0, 0
    for b in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            if m[b, c]:
                total += ref_dice(pred[b, c], gt[b, c])
                n += 1
    return total / n


def ref_compose(pred, gt, m):
    out = np.empty_like(pred)
    for b in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            for i in range(pred.shape[2]):
                for j in range(pred.shape[3]):
                    out[b, c, i, j] = gt[b, c, i, j] if m[b, c] else pred[b, c, i, j]
    return out


def ref_cosine(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        dot = na = nb = 0.0
        for k in range(a.shape[1]):
            dot += a[i, k] * b[i, k]
            na += a[i, k] ** 2
            nb += b[i, k] ** 2
        total += 1.0 - dot / (math.sqrt(na) * math.sqrt(nb))
    return total / a.shape[0]


def ref_mse(a, b):
    total = 0.0
    for idx in np.ndindex(a.shape):
        total += (a[idx] - b[idx]) ** 2
    return total / a.size


# -- suites ---------------------------------------------------------------------

def suite_car(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    shape = (2, 3, 4, 4)
    pred, gt = rng.random(shape), (rng.random(shape) > 0.5).astype(float)
    m = np.array([[True, False, True], [False, True, True]])
    checks = []

    got = car.masked_seg_loss(pred, gt, m)
    checks.append(Check("masked_seg_loss", _close(got, ref_masked_seg(pred, gt, m)), f"{got!r}"))
    got = car.dice_loss(pred[0, 0], gt[0, 0])
    checks.append(Check("dice_loss", _close(got, ref_dice(pred[0, 0], gt[0, 0])), f"{got!r}"))
    garbage = gt.copy()
    garbage[~m] = rng.random((int((~m).sum()), 4, 4)) * 100.0
    checks.append(Check("masked_seg_ignores_unavailable",
                        car.masked_seg_loss(pred, garbage, m) == car.masked_seg_loss(pred, gt, m)))
    tgt = car.compose_reliable_target(pred, gt, m)
    checks.append(Check("compose_reliable_target", np.array_equal(tgt.values, ref_compose(pred, gt, m))))

    za, zb = rng.standard_normal((2, 8)), rng.standard_normal((2, 8))
    got = car.cosine_dist_loss(za, zb)
    checks.append(Check("cosine_dist_loss", _close(got, ref_cosine(za, zb)), f"{got!r}"))
    e0, e1 = np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]])
    anchors = [(e0, e0, 0.0), (e0, e1, 1.0), (e0, -e0, 2.0)]
    checks.append(Check("cosine_anchor_values",
                        all(abs(car.cosine_dist_loss(a, b) - want) <= 1e-12 for a, b, want in anchors)))

    r = [rng.random((2, 1, 4, 4)) for _ in range(4)]
    got = car.recon_loss(*r)
    checks.append(Check("recon_loss", _close(got, ref_mse(r[0], r[1]) + ref_mse(r[2], r[3])), f"{got!r}"))
    got = car.total_loss(0.5, 0.1, 0.2, car.LossWeights())
    checks.append(Check("total_loss_default_weights", got == 1.3, f"{got!r}"))
    return checks


def suite_projector(n: int = 32) -> list[Check]:
    checks = []
    spacing = (1.0, 1.0, 1.0)
    g = projector.ProjectionGeometry(nx=33, ny=33, pixel_pitch=0.5)

    # homogeneous cube: the central ray crosses n/2 mm of material
    mu = np.zeros((n, n, n), dtype=np.float32)
    q = n // 4
    mu[q:n - q, q:n - q, q:n - q] = 1.0
    img = projector.project_mu(mu, spacing, g)
    chord = float(n - 2 * q)
    got = float(img[16, 16])
    checks.append(Check("cube_central_chord", abs(got - chord) <= 0.01 * chord, f"{got:.6f} vs {chord}"))

    rng = np.random.default_rng(1)
    a = rng.random((n, n, n)).astype(np.float32)
    b = rng.random((n, n, n)).astype(np.float32)
    pa, pb = projector.project_mu(a, spacing, g), projector.project_mu(b, spacing, g)
    pab = projector.project_mu((2.0 * a + 3.0 * b).astype(np.float32), spacing, g)
    rel = float(np.max(np.abs(pab - (2.0 * pa + 3.0 * pb))) / np.max(np.abs(pab)))
    checks.append(Check("linearity", rel <= 1e-6, f"max rel err {rel:.2e}"))

    x = np.arange(n) - 0.5 * (n - 1)
    xx, yy, zz = np.meshgrid(x, x, x, indexing="ij")
    sphere = ((xx ** 2 + yy ** 2 + zz ** 2) <= (0.3 * n) ** 2).astype(np.float32)
    front = projector.project_mu(sphere, spacing, g.at(0.0))
    back = projector.project_mu(sphere, spacing, g.at(180.0))
    diff = float(np.mean(np.abs(front - back[:, ::-1])) / front.max())
    checks.append(Check("mirror_0_180", diff < 0.01, f"mean abs diff {diff:.2e} of max"))
    return checks


def suite_plans(n: int = 2000, seed: int = 0) -> list[Check]:
    cfg = msdr3d.Msdr3dConfig()
    expected = activation_probabilities(cfg)
    counts = dict.fromkeys(expected, 0)
    bad = 0
    for i in range(n):
        plan = msdr3d.sample_plan(seed, f"selftest#{i}", cfg)
        for k, fired in msdr3d.activation_flags(plan).items():
            counts[k] += fired
        bad += bool(msdr3d.plan_violations(plan, cfg))
    checks = [Check("parameters_in_range", bad == 0, f"{bad} plans out of range")]
    for k, p in expected.items():
        rate = counts[k] / n
        tol = 4.0 * math.sqrt(p * (1 - p) / n) + 1e-9
        checks.append(Check(f"activation_{k}", abs(rate - p) <= tol, f"{rate:.4f} vs {p}"))
    return checks


def activation_probabilities(cfg: msdr3d.Msdr3dConfig) -> dict[str, float]:
    out = {
        "bone_soft": cfg.bone_soft_p,
        "component_scaling": cfg.component_p,
        "intra_bone": cfg.intra_p,
        "soft_scale": cfg.soft_scale_p,
        "soft_invert": cfg.soft_invert_p,
        "noise": cfg.noise_p,
        "implants": cfg.implant_p,
        "sdd": cfg.sdd_p,
        "odd": cfg.odd_p,
    }
    for group in msdr3d.GRADIENT_GROUPS:
        out[f"gradient_{group}"] = cfg.gradient_p
    return out


SUITES = {"car": suite_car, "projector": suite_projector, "plans": suite_plans}


def run_selftest(suites=None) -> list[SuiteResult]:
    results = []
    for name in suites or SUITES:
        t0 = time.perf_counter()
        try:
            checks = SUITES[name]()
        except Exception as exc:  # a crash is a failure, not an abort
            checks = [Check("crashed", False, f"{type(exc).__name__}: {exc}")]
        results.append(SuiteResult(name, checks, time.perf_counter() - t0))
    return results


def format_report(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        lines.append(f"[{'PASS' if r.ok else 'FAIL'}] {r.name} ({r.seconds:.2f} s)")
        for c in r.checks:
            lines.append(f"    {'ok  ' if c.ok else 'FAIL'} {c.name} {c.detail}".rstrip())
    return "\n".join(lines)
