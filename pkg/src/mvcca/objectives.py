"""Multi-view training objectives and their exact gradients.

The correlation objective treats a minibatch as a self-contained sample:
network outputs are centered within the batch, covariances use 1/n
normalization with ridge terms added to the diagonals, and the objective
value is the sum of singular values of the whitened cross-covariance.
Composite objectives combine that value (or a relaxed / distance-based
surrogate) with autoencoder reconstruction terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCovarianceError,
    MinibatchTooSmallError,
    ShapeMismatchError,
    StaleEstimateError,
    TopologyMismatchError,
)
from .neural import GradientBundle, MlpNetwork, backward, forward
from .numerics import as_matrix, inv_sqrt_psd, svd

METHODS = ("splitae", "dcca", "dccae", "corrae", "distae1", "distae2")

_RATIO_EPS = 1e-12
_EIG_FLOOR = 1e-12


@dataclass
class CorrelationEstimate:
    """Covariance estimates and the correlation objective of one batch.

    ``theta`` is the sum of singular values of ``t_hat`` clipped into
    [0, L]; the raw values are kept in ``singular_values``.
    """

    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    t_hat: np.ndarray
    singular_values: np.ndarray
    theta: float
    n: int
    _isx: np.ndarray = field(repr=False, default=None)
    _isy: np.ndarray = field(repr=False, default=None)
    _u: np.ndarray = field(repr=False, default=None)
    _v: np.ndarray = field(repr=False, default=None)
    _xc: np.ndarray = field(repr=False, default=None)
    _yc: np.ndarray = field(repr=False, default=None)
    _fx: np.ndarray = field(repr=False, default=None)
    _gy: np.ndarray = field(repr=False, default=None)


def _check_regular(cov, reg, n, dim, name):
    if reg > 0:
        return
    vals = np.linalg.eigvalsh(cov)
    if vals[0] < _EIG_FLOOR * max(vals[-1], 1.0):
        raise DegenerateCovarianceError(
            f"{name} covariance is singular with zero regularization "
            f"(batch of {n} samples in {dim} dimensions)"
        )


def dcca_objective(fx, gy, reg_x: float = 0.0, reg_y: float = 0.0) -> CorrelationEstimate:
    """Correlation objective of paired network outputs on one batch."""
    fx = as_matrix(fx, "fx")
    gy = as_matrix(gy, "gy")
    if fx.shape[1] != gy.shape[1]:
        raise ShapeMismatchError(
            f"outputs have {fx.shape[1]} and {gy.shape[1]} samples"
        )
    n = fx.shape[1]
    if n < 2:
        raise MinibatchTooSmallError(f"need >= 2 samples, got {n}")
    if reg_x < 0 or reg_y < 0:
        raise ValueError("regularization must be nonnegative")
    xc = fx - fx.mean(axis=1, keepdims=True)
    yc = gy - gy.mean(axis=1, keepdims=True)
    sxx = xc @ xc.T / n + reg_x * np.eye(fx.shape[0])
    syy = yc @ yc.T / n + reg_y * np.eye(gy.shape[0])
    sxy = xc @ yc.T / n
    _check_regular(sxx, reg_x, n, fx.shape[0], "view-1")
    _check_regular(syy, reg_y, n, gy.shape[0], "view-2")
    isx = inv_sqrt_psd(sxx)
    isy = inv_sqrt_psd(syy)
    t_hat = isx @ sxy @ isy
    u, sigma, v = svd(t_hat)
    out_dim = min(fx.shape[0], gy.shape[0])
    theta = float(np.clip(sigma.sum(), 0.0, out_dim))
    return CorrelationEstimate(
        sxx=sxx, syy=syy, sxy=sxy, t_hat=t_hat,
        singular_values=sigma, theta=theta, n=n,
        _isx=isx, _isy=isy, _u=u, _v=v, _xc=xc, _yc=yc, _fx=fx, _gy=gy,
    )


def dcca_gradient(est: CorrelationEstimate, fx, gy) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of theta with respect to the raw network outputs.

    Uses the singular triplets of the whitened cross-covariance:
    d theta / d Sxy = isx @ U @ V.T @ isy and
    d theta / d Sxx = -0.5 * isx @ U @ diag(s) @ U.T @ isx,
    chained through the within-batch centering (a no-op because the
    factors are already centered).
    """
    fx = np.asarray(fx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    if est._fx is not fx or est._gy is not gy:
        if not (np.array_equal(est._fx, fx) and np.array_equal(est._gy, gy)):
            raise StaleEstimateError("estimate was built from different outputs")
    s = est.singular_values
    grad_sxy = est._isx @ est._u @ est._v.T @ est._isy
    grad_sxx = -0.5 * est._isx @ (est._u * s) @ est._u.T @ est._isx
    grad_syy = -0.5 * est._isy @ (est._v * s) @ est._v.T @ est._isy
    n = est.n
    grad_fx = (2.0 * grad_sxx @ est._xc + grad_sxy @ est._yc) / n
    grad_gy = (2.0 * grad_syy @ est._yc + grad_sxy.T @ est._xc) / n
    return grad_fx, grad_gy


def reconstruction_loss(inputs, reconstructions) -> tuple[float, np.ndarray]:
    """Mean per-sample squared error and its gradient wrt reconstructions."""
    inputs = as_matrix(inputs, "inputs")
    reconstructions = as_matrix(reconstructions, "reconstructions")
    if inputs.shape != reconstructions.shape:
        raise ShapeMismatchError(
            f"shapes differ: {inputs.shape} vs {reconstructions.shape}"
        )
    n = inputs.shape[1]
    diff = reconstructions - inputs
    value = float((diff * diff).sum() / n)
    return value, 2.0 * diff / n


def corrae_correlation(fx, gy, reg_x: float, reg_y: float):
    """Sum of per-dimension correlations and gradients wrt raw outputs.

    This is the relaxed objective: each output dimension pair is
    normalized by its own (regularized) standard deviations, with no
    cross-dimension constraints.
    """
    fx = as_matrix(fx, "fx")
    gy = as_matrix(gy, "gy")
    if fx.shape != gy.shape:
        raise ShapeMismatchError("relaxed correlation needs equal output shapes")
    n = fx.shape[1]
    if n < 2:
        raise MinibatchTooSmallError(f"need >= 2 samples, got {n}")
    xc = fx - fx.mean(axis=1, keepdims=True)
    yc = gy - gy.mean(axis=1, keepdims=True)
    sxy = (xc * yc).sum(axis=1) / n
    sxx = (xc * xc).sum(axis=1) / n + reg_x
    syy = (yc * yc).sum(axis=1) / n + reg_y
    if np.any(sxx <= 0) or np.any(syy <= 0):
        raise DegenerateCovarianceError(
            "a per-dimension variance is zero with zero regularization"
        )
    denom = np.sqrt(sxx * syy)
    corr = sxy / denom
    grad_fx = (yc / denom[:, None] - (corr / sxx)[:, None] * xc) / n
    grad_gy = (xc / denom[:, None] - (corr / syy)[:, None] * yc) / n
    return float(corr.sum()), corr, grad_fx, grad_gy


@dataclass
class DistAeAffine:
    """Trainable affine map predicting view-1 features from view-2 features."""

    a: np.ndarray  # (L, L)
    b: np.ndarray  # (L,)

    @staticmethod
    def zeros(dim: int) -> "DistAeAffine":
        return DistAeAffine(a=np.zeros((dim, dim)), b=np.zeros(dim))


def distance_ratio_term(fx, gy):
    """Mean of ||f-g||^2 / (||f||^2 + ||g||^2) over samples, with gradients."""
    diff = fx - gy
    num = (diff * diff).sum(axis=0)
    den = (fx * fx).sum(axis=0) + (gy * gy).sum(axis=0) + _RATIO_EPS
    n = fx.shape[1]
    value = float((num / den).mean())
    scale = num / (den * den)
    grad_fx = (2.0 / n) * (diff / den - scale * fx)
    grad_gy = (2.0 / n) * (-diff / den - scale * gy)
    return value, grad_fx, grad_gy


def affine_distance_term(fx, gy, affine: DistAeAffine):
    """Mean of ||f - A g - b||^2 over samples, with all gradients."""
    n = fx.shape[1]
    res = fx - affine.a @ gy - affine.b[:, None]
    value = float((res * res).sum() / n)
    grad_fx = 2.0 * res / n
    grad_gy = -2.0 * affine.a.T @ res / n
    grad_a = -2.0 * res @ gy.T / n
    grad_b = -2.0 * res.sum(axis=1) / n
    return value, grad_fx, grad_gy, grad_a, grad_b


@dataclass
class CompositeResult:
    value: float
    net_grads: dict[str, GradientBundle]
    affine_grad: tuple[np.ndarray, np.ndarray] | None
    parts: dict[str, float]


def _require_nets(nets: dict, names, method: str):
    missing = [k for k in names if k not in nets]
    if missing:
        raise TopologyMismatchError(f"{method} needs networks {missing}")


def _check_dims(method, nets, dx, dy):
    f = nets["f"]
    if f.input_dim != dx:
        raise TopologyMismatchError(
            f"encoder f expects {f.input_dim} inputs, data has {dx}"
        )
    if method == "splitae":
        if nets["p"].input_dim != f.output_dim or nets["q"].input_dim != f.output_dim:
            raise TopologyMismatchError("decoder input must match encoder output")
        if nets["p"].output_dim != dx or nets["q"].output_dim != dy:
            raise TopologyMismatchError("decoder outputs must match view dims")
        return
    g = nets["g"]
    if g.input_dim != dy:
        raise TopologyMismatchError(
            f"encoder g expects {g.input_dim} inputs, data has {dy}"
        )
    if f.output_dim != g.output_dim:
        raise TopologyMismatchError("encoders must share output dimensionality")
    if method in ("dccae", "corrae", "distae1", "distae2"):
        if nets["p"].input_dim != f.output_dim or nets["p"].output_dim != dx:
            raise TopologyMismatchError("decoder p must map features back to view 1")
        if nets["q"].input_dim != g.output_dim or nets["q"].output_dim != dy:
            raise TopologyMismatchError("decoder q must map features back to view 2")


def _add_into(total: dict, name: str, bundle: GradientBundle):
    if name not in total:
        total[name] = bundle
        return
    old = total[name]
    total[name] = GradientBundle(
        weights=[a + b for a, b in zip(old.weights, bundle.weights)],
        biases=[a + b for a, b in zip(old.biases, bundle.biases)],
        input_grad=None,
    )


def _autoencode(nets, enc_name, dec_name, data, scale, grads, parts, tag):
    """Add scale * reconstruction(data -> dec(enc(data))) to value and grads."""
    enc, dec = nets[enc_name], nets[dec_name]
    h, enc_cache = forward(enc, data)
    recon, dec_cache = forward(dec, h)
    value, grad_recon = reconstruction_loss(data, recon)
    dec_bundle = backward(dec, dec_cache, scale * grad_recon)
    enc_bundle = backward(enc, enc_cache, dec_bundle.input_grad)
    _add_into(grads, dec_name, dec_bundle)
    _add_into(grads, enc_name, enc_bundle)
    parts[tag] = value
    return scale * value


def composite_loss(
    method: str,
    nets: dict[str, MlpNetwork],
    batch: tuple[np.ndarray, np.ndarray],
    recon_batch: tuple[np.ndarray, np.ndarray] | None = None,
    lam: float = 1.0,
    reg_x: float = 0.0,
    reg_y: float = 0.0,
    affine: DistAeAffine | None = None,
    weight_decay: float = 0.0,
) -> CompositeResult:
    """Value and gradients of one of the six multi-view objectives.

    ``batch`` feeds the correlation (or distance) term; ``recon_batch``
    feeds the reconstruction terms of dccae/corrae and defaults to
    ``batch``. All objectives are phrased as minimizations, so the
    correlation-based values enter with a negative sign.
    """
    if method not in METHODS:
        raise TopologyMismatchError(f"unknown method {method!r}")
    x, y = as_matrix(batch[0], "x"), as_matrix(batch[1], "y")
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatchError("views must have equal sample counts")
    if recon_batch is None:
        recon_batch = (x, y)
    xr = as_matrix(recon_batch[0], "recon x")
    yr = as_matrix(recon_batch[1], "recon y")

    needed = {
        "splitae": ("f", "p", "q"),
        "dcca": ("f", "g"),
        "dccae": ("f", "g", "p", "q"),
        "corrae": ("f", "g", "p", "q"),
        "distae1": ("f", "g", "p", "q"),
        "distae2": ("f", "g", "p", "q"),
    }[method]
    _require_nets(nets, needed, method)
    _check_dims(method, nets, x.shape[0], y.shape[0])

    grads: dict[str, GradientBundle] = {}
    parts: dict[str, float] = {}
    affine_grad = None
    value = 0.0

    if method == "splitae":
        h, f_cache = forward(nets["f"], x)
        rx_hat, p_cache = forward(nets["p"], h)
        ry_hat, q_cache = forward(nets["q"], h)
        val_x, grad_x = reconstruction_loss(x, rx_hat)
        val_y, grad_y = reconstruction_loss(y, ry_hat)
        p_bundle = backward(nets["p"], p_cache, grad_x)
        q_bundle = backward(nets["q"], q_cache, grad_y)
        f_bundle = backward(
            nets["f"], f_cache, p_bundle.input_grad + q_bundle.input_grad
        )
        grads.update(p=p_bundle, q=q_bundle, f=f_bundle)
        parts.update(recon_x=val_x, recon_y=val_y)
        value = val_x + val_y
    elif method in ("dcca", "dccae"):
        fx, f_cache = forward(nets["f"], x)
        gy, g_cache = forward(nets["g"], y)
        est = dcca_objective(fx, gy, reg_x, reg_y)
        grad_fx, grad_gy = dcca_gradient(est, fx, gy)
        _add_into(grads, "f", backward(nets["f"], f_cache, -grad_fx))
        _add_into(grads, "g", backward(nets["g"], g_cache, -grad_gy))
        parts["theta"] = est.theta
        value = -est.theta
        if method == "dccae":
            value += _autoencode(nets, "f", "p", xr, lam, grads, parts, "recon_x")
            value += _autoencode(nets, "g", "q", yr, lam, grads, parts, "recon_y")
    elif method == "corrae":
        fx, f_cache = forward(nets["f"], x)
        gy, g_cache = forward(nets["g"], y)
        corr_sum, _, grad_fx, grad_gy = corrae_correlation(fx, gy, reg_x, reg_y)
        _add_into(grads, "f", backward(nets["f"], f_cache, -grad_fx))
        _add_into(grads, "g", backward(nets["g"], g_cache, -grad_gy))
        parts["corr_sum"] = corr_sum
        value = -corr_sum
        value += _autoencode(nets, "f", "p", xr, lam, grads, parts, "recon_x")
        value += _autoencode(nets, "g", "q", yr, lam, grads, parts, "recon_y")
    elif method == "distae1":
        fx, f_cache = forward(nets["f"], x)
        gy, g_cache = forward(nets["g"], y)
        if fx.shape != gy.shape:
            raise TopologyMismatchError("encoders must share output dimensionality")
        dist, grad_fx, grad_gy = distance_ratio_term(fx, gy)
        _add_into(grads, "f", backward(nets["f"], f_cache, grad_fx))
        _add_into(grads, "g", backward(nets["g"], g_cache, grad_gy))
        parts["distance"] = dist
        value = dist
        value += _autoencode(nets, "f", "p", xr, lam, grads, parts, "recon_x")
        value += _autoencode(nets, "g", "q", yr, lam, grads, parts, "recon_y")
    elif method == "distae2":
        if affine is None:
            raise TopologyMismatchError("distae2 needs an affine component")
        fx, f_cache = forward(nets["f"], x)
        gy, g_cache = forward(nets["g"], y)
        dist, grad_fx, grad_gy, grad_a, grad_b = affine_distance_term(fx, gy, affine)
        _add_into(grads, "f", backward(nets["f"], f_cache, grad_fx))
        _add_into(grads, "g", backward(nets["g"], g_cache, grad_gy))
        affine_grad = (grad_a, grad_b)
        parts["distance"] = dist
        value = dist
        value += _autoencode(nets, "f", "p", xr, lam, grads, parts, "recon_x")
        value += _autoencode(nets, "g", "q", yr, lam, grads, parts, "recon_y")

    if weight_decay > 0.0:
        for name, bundle in grads.items():
            net = nets[name]
            grads[name] = GradientBundle(
                weights=[
                    gw + weight_decay * layer.weight
                    for gw, layer in zip(bundle.weights, net.layers)
                ],
                biases=bundle.biases,
                input_grad=None,
            )

    return CompositeResult(
        value=float(value), net_grads=grads, affine_grad=affine_grad, parts=parts
    )
