"""Desk-scale encoder/decoder/classifier over thermal patches.

The encoder ingests a patch twice: once raw and once gated by its flame
mask (element-wise product), through the *same* strided conv stack. The two
pooled head outputs are averaged into one embedding, so an all-ones mask
collapses the dual path to a single branch — which is exactly how inference
runs, where no mask exists.

Architecture (defaults): ``n_layers`` strided 3x3 convs (channels
8 -> 16 -> c_f) with ReLU, a linear head to a ``c_d``-dimensional embedding
via global average pooling (identity activation so downstream angular
losses are not range-restricted), a mirrored transposed-conv decoder fed
from the raw branch, a 2-way linear classifier, and three sigmoid attention
heads (one per metric-learning loss). Everything is float64 and built on
the kernels in :mod:`flamesight.layers`; every backward pass is analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import (
    DimensionMismatch,
    InvalidDim,
    NonFiniteActivation,
    NonFiniteGradient,
    ShapeMismatch,
)

DEFAULT_C_D = 64
DEFAULT_C_F = 32
DEFAULT_N_LAYERS = 3
DEFAULT_PATCH_SIZE = 32


def _encoder_channels(c_f: int, n_layers: int) -> list[int]:
    """Channel progression 1 -> 8 -> 16 -> ... -> c_f."""
    return [1] + [8 * 2 ** i for i in range(n_layers - 1)] + [c_f]


@dataclass(frozen=True)
class ModelParams:
    """All weights keyed by tensor name, plus the shape configuration.

    Immutable by convention: update steps return a new instance.
    """

    tensors: dict[str, np.ndarray]
    c_d: int = DEFAULT_C_D
    c_f: int = DEFAULT_C_F
    patch_size: int = DEFAULT_PATCH_SIZE
    n_layers: int = DEFAULT_N_LAYERS
    rng_seed: int = 0

    @property
    def trunk_hw(self) -> int:
        return self.patch_size // 2 ** self.n_layers


@dataclass
class ForwardTrace:
    """Cached activations of one full forward pass.

    Holds everything the analytic backward pass needs, plus the outputs a
    caller may want: the embedding, reconstruction, logits and class
    probabilities, and the three attention-weight blocks.
    """

    x: np.ndarray
    mask: np.ndarray
    enc_pre: dict[str, list[np.ndarray]]
    trunk: dict[str, np.ndarray]
    gap: dict[str, np.ndarray]
    e_branch: dict[str, np.ndarray]
    e: np.ndarray
    dec_pre: list[np.ndarray]
    dec_caches: list[tuple]
    reconstruction: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    att_pre: dict[str, np.ndarray]
    att: dict[str, np.ndarray]
    conv_caches: dict[str, list[tuple]] = field(default_factory=dict)


def init_params(
    seed: int,
    c_d: int = DEFAULT_C_D,
    c_f: int = DEFAULT_C_F,
    patch_size: int = DEFAULT_PATCH_SIZE,
    n_layers: int = DEFAULT_N_LAYERS,
) -> ModelParams:
    """Deterministically initialize all weights for a given seed.

    Weight matrices/kernels are drawn uniform(-s, s) with
    s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    if c_d < 2:
        raise InvalidDim(f"embedding length must be >= 2, got {c_d}")
    if c_f < 1 or n_layers < 1:
        raise InvalidDim(f"c_f={c_f}, n_layers={n_layers} must be positive")
    if patch_size % 2 ** n_layers != 0 or patch_size < 2 ** n_layers:
        raise InvalidDim(
            f"patch size {patch_size} must be a positive multiple of {2 ** n_layers}"
        )
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}

    def glorot(shape, fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=shape)

    chans = _encoder_channels(c_f, n_layers)
    for i in range(n_layers):
        ci, co = chans[i], chans[i + 1]
        tensors[f"enc{i + 1}.weight"] = glorot((co, ci, 3, 3), ci * 9, co * 9)
        tensors[f"enc{i + 1}.bias"] = np.zeros(co)
    tensors["head.weight"] = glorot((c_d, c_f), c_f, c_d)
    tensors["head.bias"] = np.zeros(c_d)
    for i in range(n_layers):
        ci, co = chans[n_layers - i], chans[n_layers - i - 1]
        tensors[f"dec{i + 1}.weight"] = glorot((ci, co, 3, 3), ci * 9, co * 9)
        tensors[f"dec{i + 1}.bias"] = np.zeros(co)
    tensors["cls.weight"] = glorot((2, c_d), c_d, 2)
    tensors["cls.bias"] = np.zeros(2)
    for name in ("att_tl", "att_cl", "att_cos"):
        tensors[f"{name}.weight"] = glorot((c_d, c_d), c_d, c_d)
        tensors[f"{name}.bias"] = np.zeros(c_d)
    return ModelParams(
        tensors=tensors,
        c_d=c_d,
        c_f=c_f,
        patch_size=patch_size,
        n_layers=n_layers,
        rng_seed=seed,
    )


def _as_batch(arr: np.ndarray, patch_size: int) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, None]
    elif a.ndim == 3:
        a = a[:, None]
    if a.ndim != 4 or a.shape[2] != patch_size or a.shape[3] != patch_size:
        raise ShapeMismatch(f"expected (m, 1, {patch_size}, {patch_size}), got {a.shape}")
    return a


def _encode_branch(x: np.ndarray, params: ModelParams):
    pre, caches = [], []
    act = x
    for i in range(params.n_layers):
        z, cache = layers.conv_forward(
            act, params.tensors[f"enc{i + 1}.weight"], params.tensors[f"enc{i + 1}.bias"]
        )
        pre.append(z)
        caches.append(cache)
        act = layers.relu(z)
    gap = act.mean(axis=(2, 3))
    e = layers.linear_forward(gap, params.tensors["head.weight"], params.tensors["head.bias"])
    return pre, caches, act, gap, e


def forward(thermal, mask, params: ModelParams) -> ForwardTrace:
    """Run the full network on a batch (or single patch) and cache activations.

    ``thermal`` and ``mask`` accept (h, w), (m, h, w) or (m, 1, h, w) arrays.
    """
    x = _as_batch(thermal, params.patch_size)
    m = _as_batch(mask, params.patch_size)
    if x.shape != m.shape:
        raise DimensionMismatch(f"patch {x.shape} vs mask {m.shape}")

    pre_g, caches_g, trunk_g, gap_g, e_g = _encode_branch(x, params)
    pre_m, caches_m, trunk_m, gap_m, e_m = _encode_branch(x * m, params)
    e = 0.5 * (e_g + e_m)
    if not np.all(np.isfinite(e)):
        raise NonFiniteActivation("embedding contains NaN or infinity")

    # decoder reconstructs the raw patch from the raw-branch trunk
    dec_pre, dec_caches = [], []
    act = trunk_g
    for i in range(params.n_layers):
        z, cache = layers.tconv_forward(
            act, params.tensors[f"dec{i + 1}.weight"], params.tensors[f"dec{i + 1}.bias"]
        )
        dec_pre.append(z)
        dec_caches.append(cache)
        act = layers.relu(z) if i < params.n_layers - 1 else z
    reconstruction = act

    logits = layers.linear_forward(e, params.tensors["cls.weight"], params.tensors["cls.bias"])
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("logits contain NaN or infinity")
    probs = layers.softmax(logits)

    att_pre, att = {}, {}
    for name in ("att_tl", "att_cl", "att_cos"):
        z = layers.linear_forward(e, params.tensors[f"{name}.weight"], params.tensors[f"{name}.bias"])
        att_pre[name] = z
        att[name] = layers.sigmoid(z)

    return ForwardTrace(
        x=x,
        mask=m,
        enc_pre={"g": pre_g, "m": pre_m},
        trunk={"g": trunk_g, "m": trunk_m},
        gap={"g": gap_g, "m": gap_m},
        e_branch={"g": e_g, "m": e_m},
        e=e,
        dec_pre=dec_pre,
        dec_caches=dec_caches,
        reconstruction=reconstruction,
        logits=logits,
        probs=probs,
        att_pre=att_pre,
        att=att,
        conv_caches={"g": caches_g, "m": caches_m},
    )


def encode(thermal, mask, params: ModelParams) -> tuple[np.ndarray, ForwardTrace]:
    """Embed a (patch, mask) pair; returns (embedding, trace).

    For a single patch the embedding is a (c_d,) vector; for a batch it is
    (m, c_d). The trace carries the reconstruction/logits computed on the
    same pass for reuse.
    """
    single = np.asarray(thermal).ndim == 2
    trace = forward(thermal, mask, params)
    e = trace.e[0] if single else trace.e
    return e, trace


def decode(trace: ForwardTrace, params: ModelParams) -> np.ndarray:
    """Reconstruction for the patch(es) behind an encode trace."""
    rec = trace.reconstruction
    if rec.shape != trace.x.shape:
        raise ShapeMismatch(f"reconstruction {rec.shape} vs input {trace.x.shape}")
    return rec[0, 0] if rec.shape[0] == 1 else rec[:, 0]


def classify(e: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Map embedding(s) to (logits, softmax probabilities)."""
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    if not np.all(np.isfinite(e)):
        raise NonFiniteActivation("embedding contains NaN or infinity")
    if e.shape[1] != params.c_d:
        raise ShapeMismatch(f"embedding length {e.shape[1]} != c_d {params.c_d}")
    logits = layers.linear_forward(e, params.tensors["cls.weight"], params.tensors["cls.bias"])
    probs = layers.softmax(logits)
    if logits.shape[0] == 1:
        return logits[0], probs[0]
    return logits, probs


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def backward(
    trace: ForwardTrace,
    params: ModelParams,
    d_e: np.ndarray | None = None,
    d_logits: np.ndarray | None = None,
    d_reconstruction: np.ndarray | None = None,
    d_att: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Exact parameter gradients for upstream gradients on any outputs.

    ``d_e``/``d_logits``/``d_att[name]`` are (m, c_d)/(m, 2)/(m, c_d);
    ``d_reconstruction`` matches the input shape. Omitted upstreams count
    as zero. Both branches of the shared encoder accumulate into the same
    weights; attention-head upstreams also flow back into the embedding.
    """
    m = trace.x.shape[0]
    hw = trace.trunk["g"].shape[2] * trace.trunk["g"].shape[3]
    grads = zero_grads(params)

    de = np.zeros_like(trace.e)
    if d_e is not None:
        de = de + np.asarray(d_e, dtype=np.float64).reshape(de.shape)

    if d_logits is not None:
        dlog = np.asarray(d_logits, dtype=np.float64).reshape(trace.logits.shape)
        dx, dw, db = layers.linear_backward(dlog, trace.e, params.tensors["cls.weight"])
        grads["cls.weight"] += dw
        grads["cls.bias"] += db
        de += dx

    if d_att:
        for name, da in d_att.items():
            if da is None:
                continue
            a = trace.att[name]
            dz = np.asarray(da, dtype=np.float64).reshape(a.shape) * a * (1.0 - a)
            dx, dw, db = layers.linear_backward(dz, trace.e, params.tensors[f"{name}.weight"])
            grads[f"{name}.weight"] += dw
            grads[f"{name}.bias"] += db
            de += dx

    dtrunk = {
        "g": np.zeros_like(trace.trunk["g"]),
        "m": np.zeros_like(trace.trunk["m"]),
    }

    if d_reconstruction is not None:
        dact = np.asarray(d_reconstruction, dtype=np.float64).reshape(trace.reconstruction.shape)
        for i in reversed(range(params.n_layers)):
            if i < params.n_layers - 1:
                dact = layers.relu_backward(dact, trace.dec_pre[i])
            dact, dw, db = layers.tconv_backward(
                dact, params.tensors[f"dec{i + 1}.weight"], trace.dec_caches[i]
            )
            grads[f"dec{i + 1}.weight"] += dw
            grads[f"dec{i + 1}.bias"] += db
        dtrunk["g"] += dact

    # head: e = 0.5 * (e_g + e_m); both branches share head weights
    for branch in ("g", "m"):
        de_branch = 0.5 * de
        dgap, dw, db = layers.linear_backward(
            de_branch, trace.gap[branch], params.tensors["head.weight"]
        )
        grads["head.weight"] += dw
        grads["head.bias"] += db
        dtrunk[branch] += (dgap / hw)[:, :, None, None]

    for branch in ("g", "m"):
        dact = dtrunk[branch]
        for i in reversed(range(params.n_layers)):
            dact = layers.relu_backward(dact, trace.enc_pre[branch][i])
            dact, dw, db = layers.conv_backward(
                dact, params.tensors[f"enc{i + 1}.weight"], trace.conv_caches[branch][i]
            )
            grads[f"enc{i + 1}.weight"] += dw
            grads[f"enc{i + 1}.bias"] += db
        # dact is now the input gradient; the masked branch would scale it by
        # the mask, but no parameters live upstream of the input.

    return grads


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> ModelParams:
    """Vanilla SGD: w <- w - lr * g for every tensor; returns new params."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if set(grads) != set(params.tensors):
        missing = set(params.tensors) ^ set(grads)
        raise ShapeMismatch(f"gradient keys do not match parameters: {sorted(missing)}")
    new_tensors = {}
    for name, w in params.tensors.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs weight {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"{name} gradient is not finite")
        new_tensors[name] = w - lr * g
    return ModelParams(
        tensors=new_tensors,
        c_d=params.c_d,
        c_f=params.c_f,
        patch_size=params.patch_size,
        n_layers=params.n_layers,
        rng_seed=params.rng_seed,
    )
