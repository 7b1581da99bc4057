"""Numpy implementations of the distance kernels.

Fallback twin of the compiled ``_distkernels`` extension; same signatures,
same contracts. All inputs are C-contiguous float64 arrays, all arithmetic
is 64-bit.
"""

from __future__ import annotations

import numpy as np

IMPLEMENTATION = "python"


def euclidean_pair(x: np.ndarray, y: np.ndarray) -> float:
    d = x - y
    return float(np.sqrt(np.dot(d, d)))


def manhattan_pair(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.abs(x - y)))


def cosine_pair(x: np.ndarray, y: np.ndarray) -> float:
    nx2 = float(np.dot(x, x))
    ny2 = float(np.dot(y, y))
    if nx2 == 0.0 or ny2 == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    c = 1.0 - float(np.dot(x, y)) / float(np.sqrt(nx2 * ny2))
    return c if c > 0.0 else 0.0


def mahalanobis_diag_pair(x: np.ndarray, y: np.ndarray, diag: np.ndarray) -> float:
    d = x - y
    return float(np.sqrt(np.dot(d * d, diag)))


def mahalanobis_full_pair(x: np.ndarray, y: np.ndarray, prec: np.ndarray) -> float:
    d = x - y
    return float(np.sqrt(d @ prec @ d))


def euclidean_panel(q: np.ndarray, panel: np.ndarray) -> np.ndarray:
    d = panel - q[None, :]
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def manhattan_panel(q: np.ndarray, panel: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(panel - q[None, :]), axis=1)


def cosine_panel(q: np.ndarray, panel: np.ndarray) -> np.ndarray:
    nq2 = float(np.dot(q, q))
    np2 = np.einsum("ij,ij->i", panel, panel)
    if nq2 == 0.0 or np.any(np2 == 0.0):
        raise ValueError("cosine distance is undefined for zero vectors")
    out = 1.0 - (panel @ q) / np.sqrt(np2 * nq2)
    return np.maximum(out, 0.0)


def mahalanobis_diag_panel(q: np.ndarray, panel: np.ndarray, diag: np.ndarray) -> np.ndarray:
    d = panel - q[None, :]
    return np.sqrt(np.einsum("ij,ij,j->i", d, d, diag))


def mahalanobis_full_panel(q: np.ndarray, panel: np.ndarray, prec: np.ndarray) -> np.ndarray:
    d = panel - q[None, :]
    return np.sqrt(np.einsum("ij,jk,ik->i", d, prec, d))
