"""Empirical validation of the minibatch covariance-estimation error bound.

The estimator follows the independent-sampling scheme: the two
auto-covariances and the cross-covariance are each built from their own
uniform with-replacement draw of n samples, using uncentered second-moment
sums plus ridge terms (deliberately different from the training modules,
which center within the batch). Measured quantities are spectral-norm
errors of the whitened cross terms against their full-batch versions,
compared with the matrix-Bernstein-based bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatchError, NegativeInputError, ShapeMismatchError
from .numerics import as_matrix, spectral_norm


@dataclass
class EstimatorSample:
    """Independently sampled covariance estimates from one draw."""

    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    n: int


@dataclass
class BoundReport:
    """Measured spectral error at one minibatch size versus the bounds."""

    n: int
    trials: int
    mean_error: float
    e1: float
    e2: float
    b_bound: float
    gamma_x: float
    gamma_y: float
    dx: int
    dy: int

    def as_dict(self) -> dict:
        return dict(vars(self))


def bernstein_bound(r: float, sigma_sq: float, d1: int, d2: int) -> float:
    """Expected-norm bound sqrt(2 sigma^2 log(d1+d2)) + (r/3) log(d1+d2)."""
    if r < 0 or sigma_sq < 0:
        raise NegativeInputError("deviation and variance bounds must be >= 0")
    log_dim = np.log(d1 + d2)
    return float(np.sqrt(2.0 * sigma_sq * log_dim) + r / 3.0 * log_dim)


def sample_a1_estimator(outputs_x, outputs_y, n: int, reg_x: float, reg_y: float,
                        seed) -> EstimatorSample:
    """Draw the three independent with-replacement estimates of size n.

    Auto-covariances use their own index draws; the cross term uses a
    third draw of aligned pairs. Sums are uncentered: (1/n) sum v v' plus
    the ridge.
    """
    fx = as_matrix(outputs_x, "outputs_x")
    gy = as_matrix(outputs_y, "outputs_y")
    if fx.shape[1] != gy.shape[1]:
        raise ShapeMismatchError("output matrices must have equal sample counts")
    if n < 1:
        raise EmptyBatchError("estimator needs at least one sample")
    rng = np.random.default_rng(seed)
    big_n = fx.shape[1]
    ix = rng.integers(big_n, size=n)
    iy = rng.integers(big_n, size=n)
    ixy = rng.integers(big_n, size=n)
    sxx = fx[:, ix] @ fx[:, ix].T / n + reg_x * np.eye(fx.shape[0])
    syy = gy[:, iy] @ gy[:, iy].T / n + reg_y * np.eye(gy.shape[0])
    sxy = fx[:, ixy] @ gy[:, ixy].T / n
    return EstimatorSample(sxx=sxx, syy=syy, sxy=sxy, n=n)


def full_batch_covariances(outputs_x, outputs_y, reg_x: float, reg_y: float):
    """Uncentered full-batch second moments with ridge terms."""
    fx = as_matrix(outputs_x, "outputs_x")
    gy = as_matrix(outputs_y, "outputs_y")
    big_n = fx.shape[1]
    sxx = fx @ fx.T / big_n + reg_x * np.eye(fx.shape[0])
    syy = gy @ gy.T / big_n + reg_y * np.eye(gy.shape[0])
    sxy = fx @ gy.T / big_n
    return sxx, syy, sxy


def theorem_bounds(b: float, gamma_x: float, gamma_y: float,
                   dx: int, dy: int, n: int) -> tuple[float, float]:
    """The two per-view error bounds built from matrix-Bernstein pieces.

    Each combines the auto-covariance deviation (dimension 2d terms) with
    the whitened cross-term deviation (dimension dx+dy terms).
    """
    def one_side(gamma: float, d: int) -> float:
        auto = bernstein_bound(2.0 * b / n, b * b / n, d, d)
        cross = bernstein_bound(
            2.0 * b / (n * gamma), b * b / (n * gamma * gamma), dx, dy
        )
        return (b / gamma**2) * auto + cross

    return one_side(gamma_x, dx), one_side(gamma_y, dy)


def measure_error(outputs_x, outputs_y, n_grid, trials: int,
                  reg_x: float, reg_y: float, seed) -> list[BoundReport]:
    """Mean spectral error of the whitened cross estimates per batch size.

    For each n, averages max(||Sxx^-1 Sxy - ref||, ||Syy^-1 Sxy' - ref'||)
    over seeded trials, then evaluates the theorem bounds with the
    measured output-norm bound and the smallest covariance eigenvalue
    seen across the trials.
    """
    fx = as_matrix(outputs_x, "outputs_x")
    gy = as_matrix(outputs_y, "outputs_y")
    n_grid = list(n_grid)
    sxx, syy, sxy = full_batch_covariances(fx, gy, reg_x, reg_y)
    ref_x = np.linalg.solve(sxx, sxy)
    ref_y = np.linalg.solve(syy, sxy.T)
    b_bound = float(max((fx * fx).sum(axis=0).max(), (gy * gy).sum(axis=0).max()))
    seeds = np.random.SeedSequence(seed).spawn(len(n_grid))
    reports = []
    for grid_i, n in enumerate(n_grid):
        trial_seeds = seeds[grid_i].spawn(trials)
        errors = np.empty(trials)
        gamma_x = np.inf
        gamma_y = np.inf
        for t in range(trials):
            est = sample_a1_estimator(fx, gy, n, reg_x, reg_y, trial_seeds[t])
            err_x = spectral_norm(np.linalg.solve(est.sxx, est.sxy) - ref_x)
            err_y = spectral_norm(np.linalg.solve(est.syy, est.sxy.T) - ref_y)
            errors[t] = max(err_x, err_y)
            gamma_x = min(gamma_x, float(np.linalg.eigvalsh(est.sxx)[0]))
            gamma_y = min(gamma_y, float(np.linalg.eigvalsh(est.syy)[0]))
        e1, e2 = theorem_bounds(b_bound, gamma_x, gamma_y,
                                fx.shape[0], gy.shape[0], n)
        reports.append(BoundReport(
            n=int(n), trials=trials, mean_error=float(errors.mean()),
            e1=e1, e2=e2, b_bound=b_bound,
            gamma_x=gamma_x, gamma_y=gamma_y,
            dx=fx.shape[0], dy=gy.shape[0],
        ))
    return reports


def partial_objective_bias(outputs_x, outputs_y, n: int, trials: int,
                           reg_x: float, reg_y: float, seed):
    """Monte-Carlo summary of the partial objective under A1 sampling.

    Returns (mean, standard_error, full_batch_value) of the sum of
    singular values of the whitened cross-covariance, all uncentered.
    """
    from .numerics import inv_sqrt_psd

    fx = as_matrix(outputs_x, "outputs_x")
    gy = as_matrix(outputs_y, "outputs_y")
    sxx, syy, sxy = full_batch_covariances(fx, gy, reg_x, reg_y)
    full_theta = float(np.linalg.svd(
        inv_sqrt_psd(sxx) @ sxy @ inv_sqrt_psd(syy), compute_uv=False).sum())
    seeds = np.random.SeedSequence(seed).spawn(trials)
    values = np.empty(trials)
    for t in range(trials):
        est = sample_a1_estimator(fx, gy, n, reg_x, reg_y, seeds[t])
        t_hat = inv_sqrt_psd(est.sxx) @ est.sxy @ inv_sqrt_psd(est.syy)
        values[t] = np.linalg.svd(t_hat, compute_uv=False).sum()
    mean = float(values.mean())
    std_err = float(values.std(ddof=1) / np.sqrt(trials))
    return mean, std_err, full_theta
