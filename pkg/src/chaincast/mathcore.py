"""Small dense kernels shared by the rest of the package.

Everything is float64. Matrices here are at most a few dozen rows wide, so
plain numpy is all we need.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    return v


def as_mat(a) -> np.ndarray:
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    return m


def affine(W, b, x) -> np.ndarray:
    """Return ``W @ x + b``.

    ``x`` may also be a batch of row vectors with shape ``(B, cols)``; the
    result then has shape ``(B, rows)``.
    """
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1:] != (W.shape[1],):
        raise ShapeError(
            f"affine: W{W.shape} b{b.shape} x{x.shape} do not match"
        )
    return x @ W.T + b


def tanh_vec(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=DTYPE))


def sigmoid_vec(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    # 0.5*(1+tanh(x/2)) avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=DTYPE)
    truth = np.asarray(truth, dtype=DTYPE)
    if pred.shape != truth.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {truth.shape} differ")
    d = pred - truth
    return float(np.mean(d * d))


def l2_norm(x) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=DTYPE).ravel()))


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator (Philox) for ``seed`` and an optional key path.

    Distinct key paths give independent streams, so a stream's contents do not
    depend on how many draws were made from any other stream.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
