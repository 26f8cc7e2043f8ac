"""Dense numerical primitives used by every other module.

All routines work on float64 numpy arrays. Data matrices throughout the
package follow the columns-as-samples convention: a matrix of N samples in
D dimensions has shape (D, N).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ClampWarning, NonFiniteError, NonSymmetricError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a float64 2-D array and reject non-finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


def require_symmetric(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Check symmetry to a relative tolerance, then symmetrize exactly."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise NonSymmetricError(f"matrix is {a.shape[0]}x{a.shape[1]}, not square")
    scale = max(np.abs(a).max(), 1.0)
    asym = np.abs(a - a.T).max()
    if asym > tol * scale:
        raise NonSymmetricError(f"asymmetry {asym:.3e} exceeds {tol:.1e} relative")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""

    eigenvalues: np.ndarray   # (d,)
    eigenvectors: np.ndarray  # (d, d), columns orthonormal


def sym_eig(a, tol: float = 1e-10) -> SymEig:
    """Symmetric eigendecomposition with descending eigenvalues.

    Ties are broken by the original (ascending-solver) index so repeated
    eigenvalues come back in a reproducible order.
    """
    a = require_symmetric(a, tol)
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(-vals, kind="stable")
    return SymEig(eigenvalues=vals[order], eigenvectors=vecs[:, order])


def inv_sqrt_psd(a, floor: float | None = None, tol: float = 1e-10) -> np.ndarray:
    """Inverse square root of a symmetric PSD matrix.

    Eigenvalues below ``floor`` are clamped to it before inversion (a
    ClampWarning is emitted in that case). The default floor is
    1e-12 * max(lambda_max, 1), only meant to guard pathological inputs;
    regularized covariances normally stay well above it.
    """
    eig = sym_eig(a, tol)
    vals = eig.eigenvalues
    if floor is None:
        floor = 1e-12 * max(vals[0] if vals.size else 0.0, 1.0)
    if floor <= 0:
        raise ValueError("floor must be positive")
    clamped = vals < floor
    if np.any(clamped):
        warnings.warn(
            f"{int(clamped.sum())} eigenvalue(s) below floor {floor:.3e} were clamped",
            ClampWarning,
            stacklevel=2,
        )
        vals = np.maximum(vals, floor)
    q = eig.eigenvectors
    result = (q / np.sqrt(vals)) @ q.T
    return 0.5 * (result + result.T)


def svd(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD; returns (U, singular_values, V) with A = U @ diag(s) @ V.T."""
    a = as_matrix(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return u, s, vt.T


def spectral_norm(a) -> float:
    """Largest singular value; zero-size matrices have norm 0."""
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, ord=2))


def center_columns(a) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the per-row mean; returns (centered, mean) with mean shape (D,)."""
    a = as_matrix(a)
    mean = a.mean(axis=1)
    return a - mean[:, None], mean
