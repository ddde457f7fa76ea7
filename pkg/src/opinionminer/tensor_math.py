"""Dense float64 kernels shared by every layer.

Vectors are 1-D and matrices 2-D ``numpy.float64`` arrays throughout the
package. Everything here is pure: no shared RNG, no in-place mutation of
arguments.
"""

import numpy as np

__all__ = [
    "affine",
    "concat",
    "sigmoid",
    "tanh",
    "activate",
    "seeded_init",
    "glorot_uniform",
    "check_finite",
]


def check_finite(arr, name="array"):
    """Raise ValueError if `arr` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def affine(W, v, b):
    """W @ v + b for a (rows, cols) matrix, length-cols vector and length-rows bias."""
    W = np.asarray(W, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or v.ndim != 1 or b.ndim != 1:
        raise ValueError("affine expects a 2-D matrix and 1-D vectors")
    if W.shape[1] != v.shape[0]:
        raise ValueError(f"affine: W has {W.shape[1]} cols but v has length {v.shape[0]}")
    if W.shape[0] != b.shape[0]:
        raise ValueError(f"affine: W has {W.shape[0]} rows but b has length {b.shape[0]}")
    return W @ v + b


def concat(a, b):
    """[a; b] -- a's entries first."""
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel(),
                           np.asarray(b, dtype=np.float64).ravel()])


def sigmoid(x):
    """Elementwise logistic function, branch form so exp never overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def activate(v, kind):
    """Elementwise activation; `kind` is 'sigmoid' or 'tanh'."""
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "tanh":
        return tanh(v)
    raise ValueError(f"unknown activation kind: {kind!r}")


def glorot_uniform(rng, rows, cols):
    """Uniform(-s, s) draw with s = sqrt(6 / (rows + cols)) from a given Generator."""
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


def seeded_init(rows, cols, seed, scheme="uniform_scaled"):
    """Deterministic (rows, cols) weight matrix for a given seed.

    Identical (rows, cols, seed, scheme) always yields a bit-identical matrix.
    """
    if rows < 1 or cols < 1:
        raise ValueError("seeded_init requires rows, cols >= 1")
    if scheme != "uniform_scaled":
        raise ValueError(f"unknown init scheme: {scheme!r}")
    rng = np.random.default_rng(seed)
    return glorot_uniform(rng, rows, cols)
