"""Minimal float64 layer kernels: strided 3x3 conv, its transpose, linear
maps, ReLU, sigmoid, softmax. Forward functions return whatever the exact
analytic backward pass needs; no autograd, no framework.

Convolutions use an im2col layout: ``cols`` has shape (m, ci*9, oh*ow) so a
conv is one matmul per batch. The transposed conv is implemented as the
adjoint of the strided conv (col2im of a matmul), which makes its data
gradient literally the forward conv and keeps both directions exactly
consistent.
"""

from __future__ import annotations

import numpy as np

KSIZE = 3
STRIDE = 2
PAD = 1


def _out_dim(n: int) -> int:
    return (n + 2 * PAD - KSIZE) // STRIDE + 1


def im2col(x: np.ndarray) -> np.ndarray:
    """(m, c, h, w) -> (m, c*9, oh*ow) for the fixed 3x3/stride-2/pad-1 window."""
    m, c, h, w = x.shape
    oh, ow = _out_dim(h), _out_dim(w)
    padded = np.zeros((m, c, h + 2 * PAD, w + 2 * PAD), dtype=x.dtype)
    padded[:, :, PAD:PAD + h, PAD:PAD + w] = x
    cols = np.empty((m, c, KSIZE * KSIZE, oh, ow), dtype=x.dtype)
    for ky in range(KSIZE):
        for kx in range(KSIZE):
            cols[:, :, ky * KSIZE + kx] = padded[
                :, :, ky:ky + STRIDE * oh:STRIDE, kx:kx + STRIDE * ow:STRIDE
            ]
    return cols.reshape(m, c * KSIZE * KSIZE, oh * ow)


def col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to (m, c, h, w)."""
    m = cols.shape[0]
    oh, ow = _out_dim(h), _out_dim(w)
    cols = cols.reshape(m, c, KSIZE * KSIZE, oh, ow)
    padded = np.zeros((m, c, h + 2 * PAD, w + 2 * PAD), dtype=cols.dtype)
    for ky in range(KSIZE):
        for kx in range(KSIZE):
            padded[:, :, ky:ky + STRIDE * oh:STRIDE, kx:kx + STRIDE * ow:STRIDE] += cols[
                :, :, ky * KSIZE + kx
            ]
    return padded[:, :, PAD:PAD + h, PAD:PAD + w]


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Strided conv. x (m,ci,h,w), w (co,ci,3,3), b (co,).

    Returns (out, cache); out has spatial dims halved (h, w even).
    """
    m, ci, h, wid = x.shape
    co = w.shape[0]
    cols = im2col(x)
    out = np.matmul(w.reshape(co, -1)[None], cols) + b.reshape(1, co, 1)
    return out.reshape(m, co, _out_dim(h), _out_dim(wid)), (cols, x.shape)


def conv_backward(dout: np.ndarray, w: np.ndarray, cache):
    """Gradients for conv_forward: (dx, dw, db)."""
    cols, x_shape = cache
    m, ci, h, wid = x_shape
    co = w.shape[0]
    dflat = dout.reshape(m, co, -1)
    dw = np.einsum("mol,mkl->ok", dflat, cols).reshape(w.shape)
    db = dflat.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(co, -1).T[None], dflat)
    dx = col2im(dcols, ci, h, wid)
    return dx, dw, db


def tconv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Transposed strided conv (exact adjoint of conv_forward's data path).

    x (m,ci,h,w), w (ci,co,3,3), b (co,); output spatial dims are doubled.
    """
    m, ci, h, wid = x.shape
    co = w.shape[1]
    cols = np.matmul(w.reshape(ci, -1).T[None], x.reshape(m, ci, -1))
    out = col2im(cols, co, 2 * h, 2 * wid)
    return out + b.reshape(1, co, 1, 1), (x, (2 * h, 2 * wid))


def tconv_backward(dout: np.ndarray, w: np.ndarray, cache):
    """Gradients for tconv_forward: (dx, dw, db)."""
    x, _ = cache
    m, ci, h, wid = x.shape
    co = w.shape[1]
    dcols = im2col(dout)
    dx = np.matmul(w.reshape(ci, -1)[None], dcols).reshape(x.shape)
    dw = np.einsum("mil,mkl->ik", x.reshape(m, ci, -1), dcols).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_backward(dout: np.ndarray, z: np.ndarray) -> np.ndarray:
    return dout * (z > 0.0)


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (m, din), w (dout, din), b (dout,) -> (m, dout)."""
    return x @ w.T + b


def linear_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)
