"""Per-class-pair triplet margins from rescaled Mahalanobis distances.

The covariance of all class semantic vectors (seen and unseen) is shrunk
toward a scaled identity, pairwise Mahalanobis distances are computed under
its inverse, and the off-diagonal distances are min-max rescaled into a
configurable margin range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import SemanticTable
from .errors import ValidationError

_SPREAD_EPS = 1e-12


@dataclass
class MarginMatrix:
    """Symmetric per-class-pair margins with zero diagonal."""

    class_ids: list[int]
    values: np.ndarray
    rescale_range: tuple[float, float]

    def __post_init__(self) -> None:
        self._index = {c: i for i, c in enumerate(self.class_ids)}

    def margin(self, a: int, n: int) -> float:
        try:
            return float(self.values[self._index[a], self._index[n]])
        except KeyError as exc:
            raise ValidationError(f"class {exc.args[0]} not covered by margin matrix") from None

    def submatrix(self, ids: list[int]) -> np.ndarray:
        idx = [self._index[c] for c in ids]
        return self.values[np.ix_(idx, idx)]


def covariance_of_semantics(table: SemanticTable, shrinkage: float) -> np.ndarray:
    """Shrunk covariance of all class vectors: (1-s)*Sigma + s*(tr(Sigma)/d)*I.

    Sigma uses the population form (denominator n) over every class in the
    table. For s > 0 the result is symmetric positive-definite.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValidationError("shrinkage must lie in [0, 1]")
    vectors = table.matrix()
    if vectors.shape[0] < 2:
        raise ValidationError("need at least 2 classes to estimate covariance")
    centered = vectors - vectors.mean(axis=0)
    sigma = centered.T @ centered / vectors.shape[0]
    scale = np.trace(sigma) / table.dim
    reg = (1.0 - shrinkage) * sigma + shrinkage * scale * np.eye(table.dim)
    reg = 0.5 * (reg + reg.T)
    min_eig = float(np.linalg.eigvalsh(reg)[0])
    if min_eig <= 1e-10 * max(scale, 1.0):
        raise ValidationError("singular covariance, increase shrinkage")
    return reg


def pairwise_mahalanobis(vectors: np.ndarray, sigma_reg: np.ndarray) -> np.ndarray:
    """Pairwise distances sqrt((p_i-p_j)^T Sigma_reg^-1 (p_i-p_j))."""
    chol = np.linalg.cholesky(sigma_reg)
    # Whiten so Mahalanobis distance becomes Euclidean distance.
    white = np.linalg.solve(chol, vectors.T).T
    diff = white[:, None, :] - white[None, :, :]
    dists = np.sqrt(np.maximum((diff**2).sum(-1), 0.0))
    np.fill_diagonal(dists, 0.0)
    return dists


def margin_matrix(
    table: SemanticTable,
    shrinkage: float = 0.5,
    rescale_range: tuple[float, float] = (0.1, 1.0),
) -> MarginMatrix:
    """Min-max rescale pairwise Mahalanobis distances into the margin range."""
    lo, hi = rescale_range
    if not (0.0 < lo < hi):
        raise ValidationError("rescale range must satisfy 0 < low < high")
    sigma_reg = covariance_of_semantics(table, shrinkage)
    ids = table.ids()
    dists = pairwise_mahalanobis(table.matrix(), sigma_reg)
    off = dists[np.triu_indices(len(ids), k=1)]
    d_min, d_max = float(off.min()), float(off.max())
    if d_max - d_min <= _SPREAD_EPS * max(d_max, 1.0):
        raise ValidationError("degenerate semantics: all class pairs equidistant")
    values = lo + (dists - d_min) / (d_max - d_min) * (hi - lo)
    np.fill_diagonal(values, 0.0)
    values = 0.5 * (values + values.T)
    return MarginMatrix(ids, values, (lo, hi))


def save_margin_matrix(mm: MarginMatrix, path: str | Path) -> None:
    """Write the margin matrix as a CSV with a class_id header row/column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id"] + [str(c) for c in mm.class_ids])
        for i, cid in enumerate(mm.class_ids):
            writer.writerow([cid] + [str(float(v)) for v in mm.values[i]])
