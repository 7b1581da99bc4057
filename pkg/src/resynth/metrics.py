"""Distance functions over feature vectors.

Four distances (euclidean, manhattan, cosine, mahalanobis) plus a shrinkage
precision estimator backing the mahalanobis kind. Inputs are widened to
64-bit before any accumulation; results are 64-bit. Cosine is returned as a
distance (1 - similarity) so argmin semantics are uniform across kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

DISTANCE_NAMES = ("euclidean", "manhattan", "cosine", "mahalanobis")

SYMMETRY_TOL = 1e-9  # max asymmetry accepted for a full precision matrix


class SingularCovarianceError(ValueError):
    """Shrunk covariance is not invertible; advise shrinkage > 0."""


@dataclass(frozen=True)
class PrecisionMatrix:
    """Inverse-covariance parameter of the mahalanobis distance.

    ``mode`` is "diagonal" (values is the positive diagonal) or "full"
    (values is a symmetric positive-definite matrix).
    """

    dim: int
    mode: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", v)
        if self.mode == "diagonal":
            if v.shape != (self.dim,):
                raise ValueError(f"diagonal precision must have shape ({self.dim},)")
            if not np.all(v > 0):
                raise ValueError("diagonal precision entries must be > 0")
        elif self.mode == "full":
            if v.shape != (self.dim, self.dim):
                raise ValueError(f"full precision must have shape ({self.dim}, {self.dim})")
            if not np.all(np.abs(v - v.T) <= SYMMETRY_TOL):
                raise ValueError("full precision must be symmetric within 1e-9")
            try:
                np.linalg.cholesky(v)
            except np.linalg.LinAlgError as exc:
                raise ValueError("full precision must be positive definite") from exc
        else:
            raise ValueError(f"unknown precision mode {self.mode!r}")


@dataclass(frozen=True)
class DistanceKind:
    name: str
    precision: PrecisionMatrix | None = None

    def __post_init__(self) -> None:
        if self.name not in DISTANCE_NAMES:
            raise ValueError(f"unknown distance kind {self.name!r}")
        if self.name == "mahalanobis" and self.precision is None:
            raise ValueError("mahalanobis requires a precision matrix")

    def label(self) -> str:
        if self.name == "mahalanobis":
            assert self.precision is not None
            return f"mahalanobis[{self.precision.mode}]"
        return self.name


EUCLIDEAN = DistanceKind("euclidean")
MANHATTAN = DistanceKind("manhattan")
COSINE = DistanceKind("cosine")


def mahalanobis(precision: PrecisionMatrix) -> DistanceKind:
    return DistanceKind("mahalanobis", precision)


def _as_f64(x) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if a.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {a.shape}")
    return a


def distance(kind: DistanceKind, x, y) -> float:
    """Distance between two equal-dimension vectors under ``kind``."""
    xv = _as_f64(x)
    yv = _as_f64(y)
    if xv.shape[0] != yv.shape[0]:
        raise ValueError(f"dimension mismatch: {xv.shape[0]} vs {yv.shape[0]}")
    if kind.name == "euclidean":
        return float(kernels.euclidean_pair(xv, yv))
    if kind.name == "manhattan":
        return float(kernels.manhattan_pair(xv, yv))
    if kind.name == "cosine":
        return float(kernels.cosine_pair(xv, yv))
    prec = kind.precision
    assert prec is not None
    if prec.dim != xv.shape[0]:
        raise ValueError(f"precision dim {prec.dim} does not match vector dim {xv.shape[0]}")
    if prec.mode == "diagonal":
        return float(kernels.mahalanobis_diag_pair(xv, yv, prec.values))
    return float(kernels.mahalanobis_full_pair(xv, yv, prec.values))


def panel_distances(kind: DistanceKind, query, panel: np.ndarray) -> np.ndarray:
    """Distances from one query to every row of a panel matrix."""
    q = _as_f64(query)
    p = np.ascontiguousarray(np.asarray(panel, dtype=np.float64))
    if p.ndim != 2 or p.shape[1] != q.shape[0]:
        raise ValueError(f"panel shape {p.shape} incompatible with query dim {q.shape[0]}")
    if kind.name == "euclidean":
        return kernels.euclidean_panel(q, p)
    if kind.name == "manhattan":
        return kernels.manhattan_panel(q, p)
    if kind.name == "cosine":
        return kernels.cosine_panel(q, p)
    prec = kind.precision
    assert prec is not None
    if prec.dim != q.shape[0]:
        raise ValueError(f"precision dim {prec.dim} does not match vector dim {q.shape[0]}")
    if prec.mode == "diagonal":
        return kernels.mahalanobis_diag_panel(q, p, prec.values)
    return kernels.mahalanobis_full_panel(q, p, prec.values)


def estimate_precision(
    samples: Sequence, shrinkage: float = 0.1, mode: str = "full"
) -> PrecisionMatrix:
    """Estimate an inverse covariance from a reference sample pool.

    The sample covariance C (1/(n-1) normalization) is shrunk toward a scaled
    identity, C' = (1-lam) C + lam (trace(C)/dim) I, and inverted. Diagonal
    mode inverts the diagonal of C' only. Raises SingularCovarianceError when
    C' is not invertible, which can only happen at shrinkage 0.
    """
    if mode not in ("diagonal", "full"):
        raise ValueError(f"unknown precision mode {mode!r}")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    X = np.asarray([np.asarray(s, dtype=np.float64) for s in samples], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("estimate_precision needs at least 2 samples")
    n, dim = X.shape
    centered = X - X.mean(axis=0)
    cov = (centered.T @ centered) / (n - 1)
    target = float(np.trace(cov)) / dim
    shrunk = (1.0 - shrinkage) * cov + shrinkage * target * np.eye(dim)
    if mode == "diagonal":
        diag = np.diag(shrunk).copy()
        if np.any(diag <= 0):
            raise SingularCovarianceError(
                "shrunk covariance has a non-positive diagonal entry; use shrinkage > 0"
            )
        return PrecisionMatrix(dim=dim, mode="diagonal", values=1.0 / diag)
    try:
        chol = np.linalg.cholesky(shrunk)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"shrunk covariance is singular (n={n}, dim={dim}); use shrinkage > 0"
        ) from exc
    inv_chol = np.linalg.inv(chol)
    prec = inv_chol.T @ inv_chol
    prec = (prec + prec.T) / 2.0  # clean tiny asymmetry from the inversion
    return PrecisionMatrix(dim=dim, mode="full", values=prec)
