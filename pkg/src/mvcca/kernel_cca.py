"""Gaussian-kernel CCA: exact small-N solver and scalable approximations.

The exact solver works on doubly-centered kernel matrices and is phrased
as linear CCA over kernel-eigenvector features, then mapped back to
per-sample coefficient matrices. The two approximations (random Fourier
features and Nystrom landmarks) build explicit finite-dimensional feature
maps whose inner products approximate the kernel, so approximate KCCA is
simply linear CCA on the transformed inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    CapExceededError,
    NonPositiveWidthError,
    RankRequestTooLargeError,
    ShapeMismatchError,
    SingularLandmarkKernelWarning,
    ZeroRegularizationError,
)
from .linear_cca import CcaConfig, CcaSolution, solve_cca
from .numerics import as_matrix, sym_eig

EXACT_KCCA_CAP = 2000


def gaussian_kernel_matrix(xs, ys, width: float) -> np.ndarray:
    """Gram matrix exp(-||a - b||^2 / (2 width^2)) between column sets."""
    if width <= 0:
        raise NonPositiveWidthError(f"kernel width must be > 0, got {width}")
    xs = as_matrix(xs, "xs")
    ys = as_matrix(ys, "ys")
    if xs.shape[0] != ys.shape[0]:
        raise ShapeMismatchError(
            f"point dimensions differ: {xs.shape[0]} vs {ys.shape[0]}"
        )
    sq_x = (xs * xs).sum(axis=0)
    sq_y = (ys * ys).sum(axis=0)
    sq_dist = sq_x[:, None] + sq_y[None, :] - 2.0 * xs.T @ ys
    np.maximum(sq_dist, 0.0, out=sq_dist)
    return np.exp(-sq_dist / (2.0 * width * width))


def _center_gram(k: np.ndarray) -> np.ndarray:
    """Double-center a Gram matrix (feature-space mean removal)."""
    row = k.mean(axis=0, keepdims=True)
    col = k.mean(axis=1, keepdims=True)
    return k - row - col + k.mean()


@dataclass
class KccaCoefficients:
    """Per-training-sample coefficient matrices of the exact solver."""

    a: np.ndarray  # (N, L)
    b: np.ndarray  # (N, L)
    correlations: np.ndarray  # (L,)

    @property
    def total_correlation(self) -> float:
        return float(self.correlations.sum())


def exact_kcca(
    x, y, width_x: float, width_y: float, cfg: CcaConfig, cap: int = EXACT_KCCA_CAP
) -> KccaCoefficients:
    """Exact Gaussian-kernel CCA on at most ``cap`` samples.

    Solves the coefficient eigenproblem over centered kernel matrices;
    the returned columns satisfy the quadratic normalization
    a_i' (K^2/N + r K) a_i = 1 and cross terms vanish.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatchError("views must have equal sample counts")
    n = x.shape[1]
    if n > cap:
        raise CapExceededError(f"{n} samples exceeds exact-solver cap {cap}")
    if cfg.reg_x <= 0 or cfg.reg_y <= 0:
        raise ZeroRegularizationError(
            "exact kernel CCA needs strictly positive regularization"
        )
    kx = _center_gram(gaussian_kernel_matrix(x, x, width_x))
    ky = _center_gram(gaussian_kernel_matrix(y, y, width_y))
    eig_x = sym_eig(0.5 * (kx + kx.T))
    eig_y = sym_eig(0.5 * (ky + ky.T))
    vals_x = np.maximum(eig_x.eigenvalues, 0.0)
    vals_y = np.maximum(eig_y.eigenvalues, 0.0)
    feat_x = np.sqrt(vals_x)[:, None] * eig_x.eigenvectors.T
    feat_y = np.sqrt(vals_y)[:, None] * eig_y.eigenvectors.T
    sol = solve_cca(feat_x, feat_y, cfg)
    # Map feature-space directions w back to coefficients: K a = F' w
    # with F = sqrt(L) R', so a = R L^{-1/2} w on the nonzero spectrum.
    floor_x = 1e-12 * max(vals_x[0], 1.0)
    floor_y = 1e-12 * max(vals_y[0], 1.0)
    inv_x = np.where(vals_x > floor_x, 1.0 / np.sqrt(np.maximum(vals_x, floor_x)), 0.0)
    inv_y = np.where(vals_y > floor_y, 1.0 / np.sqrt(np.maximum(vals_y, floor_y)), 0.0)
    a = eig_x.eigenvectors @ (inv_x[:, None] * sol.u)
    b = eig_y.eigenvectors @ (inv_y[:, None] * sol.v)
    return KccaCoefficients(a=a, b=b, correlations=sol.correlations.copy())


@dataclass(frozen=True)
class RffMap:
    """Random cosine features approximating a Gaussian kernel."""

    weights: np.ndarray  # (M, D), rows ~ N(0, I / width^2)
    phases: np.ndarray   # (M,), uniform on [0, 2pi)
    width: float

    @property
    def rank(self) -> int:
        return self.weights.shape[0]


def rff_fit(input_dim: int, width: float, rank: int, seed) -> RffMap:
    if width <= 0:
        raise NonPositiveWidthError(f"kernel width must be > 0, got {width}")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 1.0 / width, size=(rank, input_dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=rank)
    return RffMap(weights=weights, phases=phases, width=width)


def rff_transform(rff: RffMap, x) -> np.ndarray:
    """Features sqrt(2/M) cos(W x + b); inner products estimate the kernel."""
    x = as_matrix(x, "x")
    if x.shape[0] != rff.weights.shape[1]:
        raise ShapeMismatchError(
            f"data has {x.shape[0]} rows, map expects {rff.weights.shape[1]}"
        )
    m = rff.rank
    return np.sqrt(2.0 / m) * np.cos(rff.weights @ x + rff.phases[:, None])


@dataclass(frozen=True)
class NystromMap:
    """Landmark-based low-rank kernel feature map."""

    landmarks: np.ndarray  # (D, M)
    transform: np.ndarray  # (M, M) = R @ diag(lambda)^{-1/2}
    width: float

    @property
    def rank(self) -> int:
        return self.landmarks.shape[1]


def nystrom_fit(x, width: float, rank: int, seed) -> NystromMap:
    """Fit a Nystrom map from ``rank`` landmarks sampled without replacement.

    The landmark Gram matrix is eigendecomposed; eigenvalues below a
    floor are clamped (with a warning) so the map stays finite.
    """
    x = as_matrix(x, "x")
    n = x.shape[1]
    if rank > n:
        raise RankRequestTooLargeError(f"rank {rank} exceeds {n} samples")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=rank, replace=False)
    landmarks = x[:, idx].copy()
    k_mm = gaussian_kernel_matrix(landmarks, landmarks, width)
    eig = sym_eig(0.5 * (k_mm + k_mm.T))
    floor = 1e-12 * max(eig.eigenvalues[0], 1.0)
    if eig.eigenvalues[-1] < floor:
        warnings.warn(
            "landmark kernel matrix is rank deficient; eigenvalue floor applied",
            SingularLandmarkKernelWarning,
            stacklevel=2,
        )
    vals = np.maximum(eig.eigenvalues, floor)
    transform = eig.eigenvectors / np.sqrt(vals)
    return NystromMap(landmarks=landmarks, transform=transform, width=width)


def nystrom_transform(nys: NystromMap, x) -> np.ndarray:
    """Features lambda^{-1/2} R' k(landmarks, x) with F' F approximating K."""
    x = as_matrix(x, "x")
    if x.shape[0] != nys.landmarks.shape[0]:
        raise ShapeMismatchError(
            f"data has {x.shape[0]} rows, map expects {nys.landmarks.shape[0]}"
        )
    cross = gaussian_kernel_matrix(nys.landmarks, x, nys.width)
    return nys.transform.T @ cross


@dataclass
class ApproxKccaModel:
    """Fitted feature maps plus the linear CCA solution in feature space."""

    method: str  # "rff" or "nystrom"
    map_x: RffMap | NystromMap
    map_y: RffMap | NystromMap
    solution: CcaSolution

    def transform_x(self, x) -> np.ndarray:
        return _apply_map(self.map_x, x)

    def transform_y(self, y) -> np.ndarray:
        return _apply_map(self.map_y, y)

    def project_x(self, x) -> np.ndarray:
        return self.solution.project_x(self.transform_x(x))

    def project_y(self, y) -> np.ndarray:
        return self.solution.project_y(self.transform_y(y))

    @property
    def total_correlation(self) -> float:
        return float(self.solution.correlations.sum())


def _apply_map(feature_map, x) -> np.ndarray:
    if isinstance(feature_map, RffMap):
        return rff_transform(feature_map, x)
    return nystrom_transform(feature_map, x)


def approx_kcca(
    x,
    y,
    method: str,
    width_x: float,
    width_y: float,
    rank: int,
    cfg: CcaConfig,
    seed=0,
) -> ApproxKccaModel:
    """Approximate KCCA: map both views to rank-M features, run linear CCA."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if method not in ("rff", "nystrom"):
        raise ValueError(f"method must be 'rff' or 'nystrom', got {method!r}")
    seeds = np.random.SeedSequence(seed).spawn(2)
    if method == "rff":
        map_x = rff_fit(x.shape[0], width_x, rank, seeds[0])
        map_y = rff_fit(y.shape[0], width_y, rank, seeds[1])
    else:
        map_x = nystrom_fit(x, width_x, rank, seeds[0])
        map_y = nystrom_fit(y, width_y, rank, seeds[1])
    feat_x = _apply_map(map_x, x)
    feat_y = _apply_map(map_y, y)
    solution = solve_cca(feat_x, feat_y, cfg)
    return ApproxKccaModel(method=method, map_x=map_x, map_y=map_y, solution=solution)
