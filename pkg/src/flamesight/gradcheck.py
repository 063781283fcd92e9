"""Central-difference verification of every closed-form loss derivative.

Nine targets are checked: for each of the triplet, center, and cosine
losses, the gradient with respect to the embeddings, the attention
weights, and the prototypes. Embedding and attention gradients are checked
against finite differences of the batch-mean loss itself; prototype deltas
are checked against the active-set-renormalized scalar each delta is the
exact gradient of (see :mod:`flamesight.dml`).

Instances are drawn randomly but kept away from hinge/activation
boundaries so the step gating cannot flip under the +-h probes; such
boundary draws are resampled. Error per target and trial is the max-norm
relative error ||g_a - g_fd||_inf / max(||g_a||_inf, ||g_fd||_inf, 1e-10).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dml import PrototypePair, loss_center, loss_cosine, loss_triplet

TARGETS = (
    "triplet/d_embedding",
    "triplet/d_attention",
    "triplet/d_prototype",
    "center/d_embedding",
    "center/d_attention",
    "center/d_prototype",
    "cosine/d_embedding",
    "cosine/d_attention",
    "cosine/d_prototype",
)

TOLERANCE = 1e-4
_BOUNDARY_GAP = 1e-3


@dataclass
class GradCheckReport:
    trials: int
    seed: int
    h: float
    max_err: dict[str, float] = field(default_factory=dict)
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(v <= TOLERANCE for v in self.max_err.values())

    def lines(self) -> list[str]:
        out = []
        for name in TARGETS:
            err = self.max_err.get(name, float("nan"))
            status = "PASS" if err <= TOLERANCE else "FAIL"
            out.append(f"{name:<24s} max_rel_err {err:.3e}  {status}")
        verdict = "OK" if self.passed else "FAILED"
        out.append(
            f"{verdict}: {self.trials} trials, h={self.h:g}, tolerance {TOLERANCE:g}, "
            f"{self.elapsed_s:.1f}s"
        )
        return out


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-10)
    return float(np.abs(analytic - numeric).max() / denom)


def _fd(fn, arr: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _triplet_terms(e, y, c, a, margin):
    d_p = (e - c[y]) ** 2
    d_n = (e - c[1 - y]) ** 2
    return (a * (d_p - d_n)).sum(axis=1) + margin * a.mean(axis=1)


def _cosine_brackets(e, y, c, a):
    ne = np.linalg.norm(e, axis=1)
    nc = np.linalg.norm(c, axis=1)
    s_p = e * c[y] / (ne * nc[y])[:, None]
    s_n = e * c[1 - y] / (ne * nc[1 - y])[:, None]
    return (a * (s_p - s_n)).sum(axis=1)


def _draw_instance(rng: np.random.Generator, c_d: int, m: int):
    """Random batch with both classes present, away from gating boundaries."""
    for _ in range(200):
        e = rng.normal(0.0, 1.5, (m, c_d))
        y = rng.integers(0, 2, m)
        y[0], y[1] = 0, 1
        c = rng.normal(0.0, 1.5, (2, c_d))
        a = rng.uniform(0.05, 1.0, (m, c_d))
        margin = rng.uniform(0.5, 2.0)
        if np.linalg.norm(e, axis=1).min() < 0.3 or np.linalg.norm(c, axis=1).min() < 0.3:
            continue
        t = _triplet_terms(e, y, c, a, margin)
        b = _cosine_brackets(e, y, c, a)
        if np.abs(t).min() < _BOUNDARY_GAP or not t.max() > 0:
            continue
        if np.abs(b).min() < _BOUNDARY_GAP or not (b < 0).any():
            continue
        return e, y, c, a, margin
    raise RuntimeError("could not draw a non-degenerate instance")


def run_gradcheck(
    trials: int = 100,
    seed: int = 1,
    c_dims: tuple[int, ...] = (4, 64),
    h: float = 1e-5,
    batch: int = 5,
    inject_fault: str | None = None,
) -> GradCheckReport:
    """Run the full check and return a report; trials alternate over c_dims.

    ``inject_fault`` names a target whose analytic gradient is deliberately
    perturbed before comparison — a self-test that the harness actually
    detects wrong derivatives.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if inject_fault is not None and inject_fault not in TARGETS:
        raise ValueError(f"unknown fault target {inject_fault!r}; choose from {TARGETS}")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(trials=trials, seed=seed, h=h)
    report.max_err = {name: 0.0 for name in TARGETS}
    start = time.perf_counter()

    for trial in range(trials):
        c_d = c_dims[trial % len(c_dims)]
        e, y, c, a, margin = _draw_instance(rng, c_d, batch)
        m = e.shape[0]
        protos = lambda: PrototypePair(c_flame=c[1], c_noflame=c[0])  # noqa: E731

        tri = loss_triplet(e, y, protos(), a, margin)

        def tl_loss():
            return loss_triplet(e, y, protos(), a, margin).loss

        def tl_active_mean():
            t = _triplet_terms(e, y, c, a, margin)
            k = int((t > 0).sum())
            return float(t[t > 0].sum() / (2 * k)) if k else 0.0

        checks = {
            "triplet/d_embedding": (tri.grad_e, _fd(tl_loss, e, h)),
            "triplet/d_attention": (tri.grad_a, _fd(tl_loss, a, h)),
            "triplet/d_prototype": (tri.delta_c, _fd(tl_active_mean, c, h)),
        }

        cen = loss_center(e, y, protos(), a)

        def cl_loss():
            return loss_center(e, y, protos(), a).loss

        checks.update({
            "center/d_embedding": (cen.grad_e, _fd(cl_loss, e, h)),
            "center/d_attention": (cen.grad_a, _fd(cl_loss, a, h)),
            "center/d_prototype": (cen.delta_c, _fd(cl_loss, c, h)),
        })

        cos = loss_cosine(e, y, protos(), a)

        def cos_loss():
            return loss_cosine(e, y, protos(), a).loss

        def cos_active_mean():
            b = _cosine_brackets(e, y, c, a)
            k = int((b < 0).sum())
            return float(-b[b < 0].sum() / (2 * k)) if k else 0.0

        checks.update({
            "cosine/d_embedding": (cos.grad_e, _fd(cos_loss, e, h)),
            "cosine/d_attention": (cos.grad_a, _fd(cos_loss, a, h)),
            "cosine/d_prototype": (cos.delta_c, _fd(cos_active_mean, c, h)),
        })

        for name, (analytic, numeric) in checks.items():
            if name == inject_fault:
                analytic = analytic * 1.01 + 1e-3
            err = _rel_err(analytic, numeric)
            if err > report.max_err[name]:
                report.max_err[name] = err

    report.elapsed_s = time.perf_counter() - start
    return report
