"""Attentive metric-learning losses over embeddings and class prototypes.

Three losses shape the latent space, each weighted per-sample and
per-feature by attention coefficients in (0, 1]:

* **triplet** — hinge on the attention-weighted gap between squared
  distances to the own-class and opposite-class prototype, plus a margin
  scaled by the sample's mean attention. Samples already satisfying the
  margin are inactive: they contribute nothing to the loss and their
  gradients are exactly zero (step-function gating).
* **center** — attention-weighted squared distance to the own-class
  prototype; always active.
* **cosine** — contrast of attention-weighted cosine similarity to the own
  vs the opposite prototype, offset by +2 so the value lies in [1, 3]. The
  offset never touches a gradient. A sample is "active" for the prototype
  update when its pre-offset contrast is margin-violating (negative).

Every gradient here is the exact derivative of the stated scalar:
embedding and attention gradients differentiate the batch-mean loss, while
prototype deltas differentiate the loss renormalized over the active set
(1/k for triplet, 1/(2k') for cosine, 1/m for center — the moving-average
convention for prototype updates). Attention stays *inside* the weighted
inner products of the cosine derivatives; with all attention at 1 every
formula collapses to its plain (non-attentive) textbook counterpart.

Prototypes are a single shared pair updated by all three deltas, each
scaled by its own step size; they are deliberately excluded from the
network's SGD and moved only through these closed-form deltas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import (
    DegenerateBatch,
    EmptyBatch,
    InconsistentBatch,
    NonFinite,
    NonFiniteDelta,
    ShapeMismatch,
    ZeroNormVector,
)
from .model import ModelParams

IDX_NOFLAME = 0
IDX_FLAME = 1

_ZERO_NORM_TOL = 1e-12


@dataclass(frozen=True)
class PrototypePair:
    """Learnable class representatives in embedding space."""

    c_flame: np.ndarray
    c_noflame: np.ndarray

    def __post_init__(self):
        cf = np.asarray(self.c_flame, dtype=np.float64)
        cn = np.asarray(self.c_noflame, dtype=np.float64)
        if cf.ndim != 1 or cf.shape != cn.shape:
            raise ShapeMismatch(f"prototype shapes {cf.shape} vs {cn.shape}")
        if not (np.all(np.isfinite(cf)) and np.all(np.isfinite(cn))):
            raise NonFinite("prototypes must be finite")
        object.__setattr__(self, "c_flame", cf)
        object.__setattr__(self, "c_noflame", cn)

    def as_array(self) -> np.ndarray:
        """(2, c_d) array indexed by class label (0 = no-flame, 1 = flame)."""
        return np.stack([self.c_noflame, self.c_flame])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PrototypePair":
        return cls(c_flame=arr[IDX_FLAME].copy(), c_noflame=arr[IDX_NOFLAME].copy())


@dataclass(frozen=True)
class AttentionWeights:
    """Per-sample, per-feature gates for each loss; entries in (0, 1]."""

    a_tl: np.ndarray
    a_cl: np.ndarray
    a_cos: np.ndarray


@dataclass(frozen=True)
class DmlHyper:
    """Loss weights and prototype step sizes.

    Defaults follow the tuned operating point: loss weights
    gamma1 (triplet) = 0.01, gamma2 (cosine) = 1e-4, gamma3 (center) = 0.01,
    reconstruction weight 1, and prototype step sizes 0.5/0.5/0.1 for
    triplet/center/cosine. The triplet margin has no published value;
    1.0 is the configurable default.
    """

    margin: float = 1.0
    gamma1: float = 0.01
    gamma2: float = 0.0001
    gamma3: float = 0.01
    lambda_: float = 1.0
    proto_lr_tl: float = 0.5
    proto_lr_cl: float = 0.5
    proto_lr_cos: float = 0.1

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        for name in ("gamma1", "gamma2", "gamma3", "lambda_"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("proto_lr_tl", "proto_lr_cl", "proto_lr_cos"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class TripletResult:
    loss: float
    grad_e: np.ndarray
    grad_a: np.ndarray
    delta_c: np.ndarray
    active: np.ndarray  # boolean per-sample mask (the set K)


@dataclass
class CenterResult:
    loss: float
    grad_e: np.ndarray
    grad_a: np.ndarray
    delta_c: np.ndarray


@dataclass
class CosineResult:
    loss: float
    grad_e: np.ndarray
    grad_a: np.ndarray
    delta_c: np.ndarray
    active: np.ndarray  # boolean per-sample mask (the set K')


@dataclass
class LossBreakdown:
    """All loss components of one step plus their aggregated gradients.

    ``grads_e`` is the weighted sum of the three metric-loss embedding
    gradients; ``grads_a`` holds the weighted attention gradients per loss;
    ``delta_c`` holds the *unweighted* prototype deltas (their step sizes
    apply at update time, not here).
    """

    bce: float
    rec: float
    tl: float
    cl: float
    cos: float
    total: float
    grads_e: np.ndarray
    grads_a: dict[str, np.ndarray]
    delta_c: dict[str, np.ndarray]
    k: int
    k_prime: int


def _prep(e, labels, protos):
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    y = np.asarray(labels, dtype=np.intp).reshape(-1)
    if e.shape[0] == 0:
        raise DegenerateBatch("empty batch")
    if y.shape[0] != e.shape[0]:
        raise ShapeMismatch(f"{e.shape[0]} embeddings vs {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (no-flame) or 1 (flame)")
    c = protos.as_array() if isinstance(protos, PrototypePair) else np.asarray(protos, dtype=np.float64)
    if c.shape != (2, e.shape[1]):
        raise ShapeMismatch(f"prototypes {c.shape} vs embeddings (*, {e.shape[1]})")
    return e, y, c


def _attention(a, shape) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = np.broadcast_to(a, shape).copy() if a.shape[0] == shape[1] else a.reshape(shape)
    if a.shape != shape:
        raise ShapeMismatch(f"attention {a.shape} vs embeddings {shape}")
    return a


def attention_weights(e: np.ndarray, params: ModelParams) -> AttentionWeights:
    """Compute the three attention blocks from an embedding batch.

    Each block is sigmoid(W e + b) with its own head, so entries lie in
    the open interval (0, 1).
    """
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    if not np.all(np.isfinite(e)):
        raise NonFinite("embedding contains NaN or infinity")
    blocks = {}
    for name in ("att_tl", "att_cl", "att_cos"):
        z = layers.linear_forward(e, params.tensors[f"{name}.weight"], params.tensors[f"{name}.bias"])
        blocks[name] = layers.sigmoid(z)
    return AttentionWeights(a_tl=blocks["att_tl"], a_cl=blocks["att_cl"], a_cos=blocks["att_cos"])


def loss_bce(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood plus its gradient w.r.t. the logits.

    Assumes ``probs`` came out of a softmax; the logit gradient is then
    (probs - onehot) / m. Log arguments are clamped at 1e-300 so a
    fully-confident correct prediction contributes exactly zero.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(labels, dtype=np.intp).reshape(-1)
    m = probs.shape[0]
    if m == 0:
        raise EmptyBatch("loss_bce on empty batch")
    if y.shape[0] != m:
        raise ShapeMismatch(f"{m} prob rows vs {y.shape[0]} labels")
    picked = probs[np.arange(m), y]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    onehot = np.zeros_like(probs)
    onehot[np.arange(m), y] = 1.0
    return loss, (probs - onehot) / m


def loss_rec(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-sample squared reconstruction error and its x_hat gradient."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"input {x.shape} vs reconstruction {x_hat.shape}")
    if x.shape[0] == 0:
        raise EmptyBatch("loss_rec on empty batch")
    m = x.shape[0]
    diff = x - x_hat
    loss = float((diff ** 2).sum() / m)
    return loss, -2.0 * diff / m


def loss_triplet(e, labels, protos, a_tl, margin: float) -> TripletResult:
    """Attentive prototype-triplet hinge; see the module docstring.

    Per sample: sum_j a_ij * (d_own_j - d_opp_j) + margin * mean_j(a_ij),
    clamped at zero, averaged with a 1/(2m) factor. The prototype delta is
    the exact gradient of the same sum renormalized by the active count k,
    pulling each class prototype toward its own active samples and pushing
    it from opposite-class active samples.
    """
    e, y, c = _prep(e, labels, protos)
    m, c_d = e.shape
    a = _attention(a_tl, e.shape)
    cp = c[y]
    cn = c[1 - y]
    d_p = (e - cp) ** 2
    d_n = (e - cn) ** 2
    terms = (a * (d_p - d_n)).sum(axis=1) + margin * a.mean(axis=1)
    active = terms > 0.0
    k = int(active.sum())
    loss = float(terms[active].sum() / (2 * m))

    gate = active[:, None].astype(np.float64)
    grad_e = gate * a * (cn - cp) / m
    grad_a = gate * (d_p - d_n + margin / c_d) / (2 * m)

    delta_c = np.zeros_like(c)
    if k > 0:
        for cls in (0, 1):
            own = active & (y == cls)
            opp = active & (y != cls)
            pull = (a[own] * (e[own] - c[cls])).sum(axis=0)
            push = (a[opp] * (e[opp] - c[cls])).sum(axis=0)
            delta_c[cls] = -(pull - push) / k
    return TripletResult(loss=loss, grad_e=grad_e, grad_a=grad_a, delta_c=delta_c, active=active)


def loss_center(e, labels, protos, a_cl) -> CenterResult:
    """Attentive squared distance to the own-class prototype (1/2m scaled).

    The prototype delta for a class is the exact loss gradient restricted
    to that class's samples: -(1/m) * sum a * (e - c)."""
    e, y, c = _prep(e, labels, protos)
    m = e.shape[0]
    a = _attention(a_cl, e.shape)
    diff = e - c[y]
    loss = float((a * diff ** 2).sum() / (2 * m))
    grad_e = a * diff / m
    grad_a = diff ** 2 / (2 * m)
    delta_c = np.zeros_like(c)
    for cls in (0, 1):
        sel = y == cls
        delta_c[cls] = -(a[sel] * diff[sel]).sum(axis=0) / m
    return CenterResult(loss=loss, grad_e=grad_e, grad_a=grad_a, delta_c=delta_c)


def loss_cosine(e, labels, protos, a_cos) -> CosineResult:
    """Attentive cosine contrast between own and opposite prototypes.

    The per-sample contrast b_i = sum_j a_ij * (own_sim_j - opp_sim_j) uses
    per-feature similarity fractions e_j * c_j / (|e||c|); the loss is
    -(1/2m) * sum b_i + 2, scale-free in e. Gradients differentiate the
    attention-weighted fractions exactly (the weighted inner product
    appears in the norm-direction terms). Active set for the prototype
    delta: samples with b_i < 0.
    """
    e, y, c = _prep(e, labels, protos)
    m = e.shape[0]
    a = _attention(a_cos, e.shape)

    ne = np.linalg.norm(e, axis=1)
    nc = np.linalg.norm(c, axis=1)
    if np.any(ne < _ZERO_NORM_TOL) or np.any(nc < _ZERO_NORM_TOL):
        raise ZeroNormVector("embedding or prototype with (near-)zero norm")

    cp = c[y]
    cn = c[1 - y]
    ncp = nc[y]
    ncn = nc[1 - y]
    s_p = e * cp / (ne * ncp)[:, None]
    s_n = e * cn / (ne * ncn)[:, None]
    b = (a * (s_p - s_n)).sum(axis=1)
    loss = float(-b.sum() / (2 * m) + 2.0)

    grad_a = -(s_p - s_n) / (2 * m)

    wp = (a * e * cp).sum(axis=1)  # attention-weighted inner products
    wn = (a * e * cn).sum(axis=1)
    term_p = a * cp / (ne * ncp)[:, None] - (wp / (ne ** 3 * ncp))[:, None] * e
    term_n = a * cn / (ne * ncn)[:, None] - (wn / (ne ** 3 * ncn))[:, None] * e
    grad_e = -(term_p - term_n) / (2 * m)

    active = b < 0.0
    k_prime = int(active.sum())
    delta_c = np.zeros_like(c)
    if k_prime > 0:
        d_own = a * e / (ne * ncp)[:, None] - (wp / (ne * ncp ** 3))[:, None] * cp
        d_opp = a * e / (ne * ncn)[:, None] - (wn / (ne * ncn ** 3))[:, None] * cn
        for cls in (0, 1):
            own = active & (y == cls)
            opp = active & (y != cls)
            delta_c[cls] = -(d_own[own].sum(axis=0) - d_opp[opp].sum(axis=0)) / (2 * k_prime)
    return CosineResult(loss=loss, grad_e=grad_e, grad_a=grad_a, delta_c=delta_c, active=active)


def total_loss(
    bce: float,
    rec: float,
    triplet: TripletResult | None,
    center: CenterResult | None,
    cosine: CosineResult | None,
    hyper: DmlHyper,
    batch_size: int,
    c_d: int,
) -> LossBreakdown:
    """Aggregate components into the multi-task objective.

    total = bce + lambda * rec + gamma1 * triplet + gamma2 * cosine
    + gamma3 * center. A ``None`` component counts as zero and contributes
    no gradient (used by ablations to keep disabled code paths untouched).
    """
    grads_e = np.zeros((batch_size, c_d))
    grads_a: dict[str, np.ndarray] = {}
    delta_c: dict[str, np.ndarray] = {}
    tl = cl = cos = 0.0
    k = k_prime = 0
    for res, gamma, name in (
        (triplet, hyper.gamma1, "tl"),
        (cosine, hyper.gamma2, "cos"),
        (center, hyper.gamma3, "cl"),
    ):
        if res is None:
            continue
        if res.grad_e.shape != grads_e.shape:
            raise InconsistentBatch(
                f"{name} gradient shape {res.grad_e.shape} vs batch ({batch_size}, {c_d})"
            )
        grads_e += gamma * res.grad_e
        grads_a[name] = gamma * res.grad_a
        delta_c[name] = res.delta_c
    if triplet is not None:
        tl = triplet.loss
        k = int(triplet.active.sum())
    if cosine is not None:
        cos = cosine.loss
        k_prime = int(cosine.active.sum())
    if center is not None:
        cl = center.loss
    total = bce + hyper.lambda_ * rec + hyper.gamma1 * tl + hyper.gamma2 * cos + hyper.gamma3 * cl
    return LossBreakdown(
        bce=bce, rec=rec, tl=tl, cl=cl, cos=cos, total=total,
        grads_e=grads_e, grads_a=grads_a, delta_c=delta_c, k=k, k_prime=k_prime,
    )


def update_prototypes(
    protos: PrototypePair,
    deltas: dict[str, np.ndarray],
    hyper: DmlHyper,
) -> PrototypePair:
    """Moving-average prototype step: C <- C - sum_loss(step_size * delta).

    ``deltas`` maps any subset of {"tl", "cl", "cos"} to (2, c_d) arrays;
    absent losses simply do not move the prototypes.
    """
    c = protos.as_array()
    rates = {"tl": hyper.proto_lr_tl, "cl": hyper.proto_lr_cl, "cos": hyper.proto_lr_cos}
    for name, delta in deltas.items():
        if name not in rates:
            raise ValueError(f"unknown prototype delta {name!r}")
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != c.shape:
            raise ShapeMismatch(f"{name} delta {delta.shape} vs prototypes {c.shape}")
        if not np.all(np.isfinite(delta)):
            raise NonFiniteDelta(f"{name} delta is not finite")
        c = c - rates[name] * delta
    return PrototypePair.from_array(c)
