"""Exact linear canonical correlation analysis.

Two equivalent solvers are provided: a whitening formulation (inverse
square roots of the auto-covariances followed by an SVD of the whitened
cross-covariance) and a block-eigenvalue formulation whose spectrum is the
signed set of canonical correlations. Covariances are estimated with 1/N
normalization on mean-centered data, with optional ridge terms ``reg_x``
and ``reg_y`` added to the diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCovarianceError, ShapeMismatchError
from .numerics import as_matrix, center_columns, inv_sqrt_psd, svd, sym_eig

_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class CcaConfig:
    """Output dimensionality and per-view ridge regularization."""

    out_dim: int
    reg_x: float = 0.0
    reg_y: float = 0.0

    def __post_init__(self):
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")
        if self.reg_x < 0 or self.reg_y < 0:
            raise ValueError("regularization must be nonnegative")


@dataclass
class CcaSolution:
    """Projection matrices, canonical correlations, and training means.

    ``u`` is (dx, L) and ``v`` is (dy, L); projecting centered data with
    them yields components with identity covariance (in the regularized
    metric) and diagonal cross-correlation ``correlations``.
    """

    u: np.ndarray
    v: np.ndarray
    correlations: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    config: CcaConfig = field(repr=False, default=None)

    def project_x(self, x) -> np.ndarray:
        return project(x, self.u, self.mean_x)

    def project_y(self, y) -> np.ndarray:
        return project(y, self.v, self.mean_y)

    @property
    def total_correlation(self) -> float:
        return float(self.correlations.sum())


def _paired_views(x, y):
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatchError(
            f"views have {x.shape[1]} and {y.shape[1]} samples"
        )
    if x.shape[1] < 2:
        raise ShapeMismatchError("need at least 2 samples")
    return x, y


def _covariances(x, y, cfg: CcaConfig):
    xc, mean_x = center_columns(x)
    yc, mean_y = center_columns(y)
    n = x.shape[1]
    sxx = xc @ xc.T / n + cfg.reg_x * np.eye(x.shape[0])
    syy = yc @ yc.T / n + cfg.reg_y * np.eye(y.shape[0])
    sxy = xc @ yc.T / n
    return sxx, syy, sxy, mean_x, mean_y


def _check_conditioning(s, reg, name):
    if reg > 0:
        return
    vals = np.linalg.eigvalsh(0.5 * (s + s.T))
    if vals[0] < _EIG_FLOOR * max(vals[-1], 1.0):
        raise DegenerateCovarianceError(
            f"{name} covariance is singular and its regularizer is 0"
        )


def _fix_signs(u, v):
    # Largest-magnitude entry of each u column made positive; the matching
    # v column is flipped too so cross-correlations stay nonnegative.
    for j in range(u.shape[1]):
        k = np.argmax(np.abs(u[:, j]))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return u, v


def solve_cca(x, y, cfg: CcaConfig) -> CcaSolution:
    """Solve regularized linear CCA via the whitened cross-covariance.

    With isx = Sxx^{-1/2} and isy = Syy^{-1/2}, the singular triplets of
    T = isx @ Sxy @ isy give the solution: U = isx @ U_T[:, :L],
    V = isy @ V_T[:, :L], correlations = top-L singular values of T.
    """
    x, y = _paired_views(x, y)
    if cfg.out_dim > min(x.shape[0], y.shape[0]):
        raise ShapeMismatchError(
            f"out_dim {cfg.out_dim} exceeds min view dimension "
            f"{min(x.shape[0], y.shape[0])}"
        )
    sxx, syy, sxy, mean_x, mean_y = _covariances(x, y, cfg)
    _check_conditioning(sxx, cfg.reg_x, "view-1")
    _check_conditioning(syy, cfg.reg_y, "view-2")
    isx = inv_sqrt_psd(sxx)
    isy = inv_sqrt_psd(syy)
    u_t, sigma, v_t = svd(isx @ sxy @ isy)
    keep = cfg.out_dim
    u = isx @ u_t[:, :keep]
    v = isy @ v_t[:, :keep]
    u, v = _fix_signs(u, v)
    return CcaSolution(
        u=u, v=v, correlations=sigma[:keep].copy(),
        mean_x=mean_x, mean_y=mean_y, config=cfg,
    )


def borga_eigenvalues(x, y, cfg: CcaConfig) -> np.ndarray:
    """All eigenvalues of A^{-1} B, descending.

    A = blockdiag(Sxx, Syy) and B places Sxy and its transpose on the
    anti-diagonal blocks; the spectrum is the signed set of canonical
    correlations (+sigma_i paired with -sigma_i).
    """
    x, y = _paired_views(x, y)
    sxx, syy, sxy, _, _ = _covariances(x, y, cfg)
    _check_conditioning(sxx, cfg.reg_x, "view-1")
    _check_conditioning(syy, cfg.reg_y, "view-2")
    dx, dy = x.shape[0], y.shape[0]
    ia = np.zeros((dx + dy, dx + dy))
    ia[:dx, :dx] = inv_sqrt_psd(sxx)
    ia[dx:, dx:] = inv_sqrt_psd(syy)
    b = np.zeros((dx + dy, dx + dy))
    b[:dx, dx:] = sxy
    b[dx:, :dx] = sxy.T
    # A^{-1}B is similar to the symmetric A^{-1/2} B A^{-1/2}.
    return sym_eig(ia @ b @ ia).eigenvalues


def solve_cca_borga(x, y, cfg: CcaConfig) -> CcaSolution:
    """Solve CCA through the block eigenvalue formulation.

    Returns the same solution as solve_cca up to per-column sign; used as
    an independent route for cross-checking.
    """
    x, y = _paired_views(x, y)
    if cfg.out_dim > min(x.shape[0], y.shape[0]):
        raise ShapeMismatchError("out_dim exceeds a view dimension")
    sxx, syy, sxy, mean_x, mean_y = _covariances(x, y, cfg)
    _check_conditioning(sxx, cfg.reg_x, "view-1")
    _check_conditioning(syy, cfg.reg_y, "view-2")
    dx, dy = x.shape[0], y.shape[0]
    isx = inv_sqrt_psd(sxx)
    isy = inv_sqrt_psd(syy)
    ia = np.zeros((dx + dy, dx + dy))
    ia[:dx, :dx] = isx
    ia[dx:, dx:] = isy
    b = np.zeros((dx + dy, dx + dy))
    b[:dx, dx:] = sxy
    b[dx:, :dx] = sxy.T
    eig = sym_eig(ia @ b @ ia)
    # Top-L positive eigenvalues; eigenvectors w = [Sxx^{1/2} u; Syy^{1/2} v]
    # recover (u, v) after undoing the whitening and renormalizing each
    # half to satisfy the unit-variance constraints.
    keep = cfg.out_dim
    w = ia @ eig.eigenvectors[:, :keep]
    u = w[:dx]
    v = w[dx:]
    for j in range(keep):
        nu = np.sqrt(u[:, j] @ sxx @ u[:, j])
        nv = np.sqrt(v[:, j] @ syy @ v[:, j])
        if nu > 0:
            u[:, j] /= nu
        if nv > 0:
            v[:, j] /= nv
    u, v = _fix_signs(u, v)
    return CcaSolution(
        u=u, v=v, correlations=eig.eigenvalues[:keep].copy(),
        mean_x=mean_x, mean_y=mean_y, config=cfg,
    )


def project(x, u, mean=None) -> np.ndarray:
    """Project columns of x with u after subtracting the training mean."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    u = as_matrix(u, "u")
    if x.shape[0] != u.shape[0]:
        raise ShapeMismatchError(
            f"data has {x.shape[0]} rows but projection expects {u.shape[0]}"
        )
    if mean is not None:
        x = x - np.asarray(mean, dtype=np.float64)[:, None]
    out = u.T @ x
    return out[:, 0] if squeeze else out


def total_correlation(x_proj, y_proj, reg: float = 1e-8) -> float:
    """Sum of canonical correlations between two already-projected sets.

    Re-solves CCA at the full projection dimensionality with a small
    symmetric ridge; the result lies in [0, L].
    """
    x_proj = as_matrix(x_proj, "x_proj")
    y_proj = as_matrix(y_proj, "y_proj")
    if x_proj.shape != y_proj.shape:
        raise ShapeMismatchError(
            f"projection shapes differ: {x_proj.shape} vs {y_proj.shape}"
        )
    cfg = CcaConfig(out_dim=x_proj.shape[0], reg_x=reg, reg_y=reg)
    sol = solve_cca(x_proj, y_proj, cfg)
    return float(np.clip(sol.correlations, 0.0, 1.0).sum())
