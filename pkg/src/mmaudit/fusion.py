"""Unified embedding construction: per-modality standardization, equal-weight
concatenation and PCA."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import Dataset


@dataclass(frozen=True)
class FusedMatrix:
    rows: np.ndarray
    sample_ids: tuple[str, ...]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D), rows are principal directions
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def standardize(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-score each column (population stddev). Constant columns map to zero.

    Returns ``(z, mean, std)``.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardize needs a 2-D matrix with at least 2 rows")
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt((centered**2).mean(axis=0))
    safe = np.where(std > 0, std, 1.0)
    z = np.where(std > 0, centered / safe, 0.0)
    return z, mean, std


def fuse(dataset: Dataset, modalities: Sequence[str], standardize_blocks: bool = True) -> FusedMatrix:
    """Concatenate the requested modality blocks, each standardized on its own."""
    if not modalities:
        raise ValueError("at least one modality is required")
    blocks = []
    for name in modalities:
        if name not in dataset.views:
            raise KeyError(f"unknown modality {name!r}; available: {sorted(dataset.views)}")
        block = dataset.views[name]
        blocks.append(standardize(block)[0] if standardize_blocks else np.array(block))
    rows = np.hstack(blocks)
    if not np.isfinite(rows).all():
        raise ValueError("fused matrix contains non-finite values")
    return FusedMatrix(rows=rows, sample_ids=tuple(dataset.ids))


def fit_pca(matrix, k: int) -> PcaModel:
    """PCA by eigendecomposition of the (N-1)-normalized sample covariance.

    Each component's largest-magnitude entry is made positive.
    """
    x = np.asarray(matrix, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} out of range [1, {min(n, d)}]")
    if not np.isfinite(x).all():
        raise ValueError("PCA input contains non-finite values")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1) if n > 1 else np.zeros((d, d))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(mean=mean, components=comps, explained_variance=evals)


def transform_pca(model: PcaModel, matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ValueError(f"expected {model.mean.shape[0]} columns, got shape {x.shape}")
    return (x - model.mean) @ model.components.T


def embed(dataset: Dataset, modalities: Sequence[str], pca_components: int = 128, standardize_blocks: bool = True):
    """fuse -> fit_pca -> transform, with ``pca_components`` clipped to min(N, D)."""
    fused = fuse(dataset, modalities, standardize_blocks)
    k = max(1, min(pca_components, *fused.rows.shape))
    pca = fit_pca(fused.rows, k)
    return transform_pca(pca, fused.rows), pca
