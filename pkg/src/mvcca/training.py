"""Optimizers and training loops for the multi-view objectives.

The stochastic trainer (``train_sto``) walks seeded permutations of the
training set each epoch. Correlation terms are estimated on large
minibatches, reconstruction terms on a separate stream of small ones, and
the two gradients are summed. The adaptive-whitening variant
(``train_noi``) keeps running covariance estimates and regresses each
view's outputs against the other view's whitened projections instead of
differentiating through the whitening.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NonFiniteError, NonFiniteLossError
from .linear_cca import CcaConfig, CcaSolution, solve_cca, total_correlation
from .neural import MlpNetwork, backward, forward, init_network
from .objectives import (
    METHODS,
    DistAeAffine,
    composite_loss,
)
from .numerics import inv_sqrt_psd

CORRELATION_METHODS = ("dcca", "dccae")
SINGLE_BATCH_METHODS = ("splitae", "distae1", "distae2")

# Default search grids for grid_search / the sweep command. FULL_GRIDS are
# the workstation-scale ranges; DESK_GRIDS shrink them for quick runs.
FULL_GRIDS = {
    "learning_rate": [1e-4, 1e-3, 1e-2, 1e-1],
    "momentum": [0.0, 0.5, 0.9, 0.95, 0.99],
    "minibatch_corr": [100, 200, 300, 400, 500, 750, 1000],
}
DESK_GRIDS = {
    "learning_rate": [1e-3, 1e-2],
    "momentum": [0.5, 0.9],
    "minibatch_corr": [100, 400],
}


@dataclass(frozen=True)
class TrainConfig:
    method: str
    minibatch_corr: int = 400
    minibatch_recon: int = 100
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    lam: float = 1e-3
    reg_x: float = 1e-4
    reg_y: float = 1e-4
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    noi_rho: float = 0.99
    eval_cap: int = 4096
    tune_corr_reg: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.minibatch_corr < 1 or self.minibatch_recon < 1:
            raise ConfigError("minibatch sizes must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0 <= self.noi_rho < 1:
            raise ConfigError("noi_rho must be in [0, 1)")


@dataclass
class TraceRow:
    epoch: int
    seconds: float
    train_objective: float
    tune_objective: float


@dataclass
class TrainTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def as_dicts(self) -> list[dict]:
        return [vars(r) for r in self.rows]


@dataclass
class TrainedModel:
    """Trained networks plus the projection used for downstream tasks.

    Correlation-trained models carry a final linear CCA fit on the
    training outputs, so view-1 features are cca.project_x(f(x));
    autoencoder-family models use the encoder output directly.
    """

    method: str
    nets: dict[str, MlpNetwork]
    affine: DistAeAffine | None
    cca: CcaSolution | None
    config: TrainConfig

    def project_view1(self, x) -> np.ndarray:
        out, _ = forward(self.nets["f"], x)
        if self.cca is not None:
            return self.cca.project_x(out)
        return out

    def project_view2(self, y) -> np.ndarray:
        if "g" not in self.nets:
            raise ConfigError(f"{self.method} has no view-2 encoder")
        out, _ = forward(self.nets["g"], y)
        if self.cca is not None:
            return self.cca.project_y(out)
        return out


def sgd_momentum_step(params, grads, velocity, learning_rate, momentum):
    """One classical-momentum step over parallel lists of arrays.

    v' = momentum * v - learning_rate * g;  p' = p + v'. Returns new
    lists; inputs are not mutated.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ConfigError("parameter, gradient, and velocity lists must align")
    new_params, new_velocity = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ConfigError("parameter/gradient/velocity shape mismatch")
        nv = momentum * v - learning_rate * g
        new_velocity.append(nv)
        new_params.append(p + nv)
    return new_params, new_velocity


def default_networks(
    method: str,
    dx: int,
    dy: int,
    out_dim: int,
    hidden: tuple[int, ...] = (256, 256, 256),
    hidden_activation: str = "sigmoid",
    decoder_output_activation: str = "linear",
    seed: int = 0,
) -> dict[str, MlpNetwork]:
    """Standard architectures: sigmoid/ReLU hidden stacks, linear feature layer.

    Per-network init streams are spawned from the seed by role, so e.g.
    dcca and dccae started from the same seed share identical encoders.
    """
    roles = {"f": 0, "g": 1, "p": 2, "q": 3}
    seeds = {k: np.random.SeedSequence(entropy=seed, spawn_key=(i,))
             for k, i in roles.items()}
    hidden = tuple(hidden)
    enc_acts = [hidden_activation] * len(hidden) + ["linear"]
    dec_acts = [hidden_activation] * len(hidden) + [decoder_output_activation]
    nets = {"f": init_network((dx, *hidden, out_dim), enc_acts, seeds["f"])}
    if method != "splitae":
        nets["g"] = init_network((dy, *hidden, out_dim), enc_acts, seeds["g"])
    if method != "dcca":
        nets["p"] = init_network((out_dim, *hidden, dx), dec_acts, seeds["p"])
        nets["q"] = init_network((out_dim, *hidden, dy), dec_acts, seeds["q"])
    return nets


class _ChunkStream:
    """Endless stream of fixed-size index chunks over seeded permutations."""

    def __init__(self, n: int, chunk: int, rng):
        self.n = n
        self.chunk = min(chunk, n)
        self.rng = rng
        self._order = None
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._order is None or self._pos + self.chunk > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.chunk]
        self._pos += self.chunk
        return out


def _clone_params(nets):
    return {name: [p.copy() for p in net.parameters()] for name, net in nets.items()}


def _zero_like(params):
    return {name: [np.zeros_like(p) for p in plist] for name, plist in params.items()}


def _rebuild(nets, params):
    return {name: net.with_parameters(params[name]) for name, net in nets.items()}


def _eval_slice(mat, cap):
    return mat[:, :cap] if mat.shape[1] > cap else mat


def _tune_metric(method, nets, affine, dataset, cfg):
    """Tune-set score: total correlation (higher better) for correlation
    methods, composite loss (lower better) for the autoencoder family."""
    xt, yt = dataset.views("tune")
    xt = _eval_slice(xt, cfg.eval_cap)
    yt = _eval_slice(yt, cfg.eval_cap)
    if method in CORRELATION_METHODS:
        fx, _ = forward(nets["f"], xt)
        gy, _ = forward(nets["g"], yt)
        return total_correlation(fx, gy, cfg.tune_corr_reg), True
    value = composite_loss(
        method, nets, (xt, yt), lam=cfg.lam,
        reg_x=cfg.reg_x, reg_y=cfg.reg_y, affine=affine,
    ).value
    return value, False


def _train_objective(method, nets, affine, dataset, cfg):
    xs, ys = dataset.views("train")
    xs = _eval_slice(xs, cfg.eval_cap)
    ys = _eval_slice(ys, cfg.eval_cap)
    return composite_loss(
        method, nets, (xs, ys), lam=cfg.lam,
        reg_x=cfg.reg_x, reg_y=cfg.reg_y, affine=affine,
    ).value


def _fit_final_cca(nets, dataset, cfg) -> CcaSolution:
    xs, ys = dataset.views("train")
    fx, _ = forward(nets["f"], xs)
    gy, _ = forward(nets["g"], ys)
    return solve_cca(
        fx, gy, CcaConfig(fx.shape[0], max(cfg.reg_x, 1e-8), max(cfg.reg_y, 1e-8))
    )


def _run_training(dataset, nets, cfg: TrainConfig, step_fn, state) -> tuple[dict, "DistAeAffine | None", TrainTrace]:
    """Shared epoch loop: streams, early stopping, tracing."""
    xs, ys = dataset.views("train")
    n = xs.shape[1]
    corr_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(10,)))
    recon_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(11,)))
    if cfg.method in SINGLE_BATCH_METHODS:
        main_chunk = cfg.minibatch_recon
    else:
        main_chunk = cfg.minibatch_corr
    main_stream = _ChunkStream(n, main_chunk, corr_rng)
    recon_stream = _ChunkStream(n, cfg.minibatch_recon, recon_rng)
    steps_per_epoch = max(n // main_stream.chunk, 1)

    params = _clone_params(nets)
    velocity = _zero_like(params)
    affine = state.get("affine")
    affine_velocity = state.get("affine_velocity")

    trace = TrainTrace()
    best_score = -np.inf
    best_params = None
    best_affine = None
    best_epoch = -1
    start = time.perf_counter()

    for epoch in range(cfg.max_epochs):
        current = _rebuild(nets, params)
        for _ in range(steps_per_epoch):
            idx = main_stream.next()
            batch = (xs[:, idx], ys[:, idx])
            recon_batch = None
            if cfg.method in ("dccae", "corrae"):
                ridx = recon_stream.next()
                recon_batch = (xs[:, ridx], ys[:, ridx])
            try:
                value, grads, affine_grad = step_fn(current, batch, recon_batch,
                                                    affine, state)
            except NonFiniteError as exc:
                raise NonFiniteLossError(
                    f"training diverged at epoch {epoch} (method {cfg.method}): {exc}"
                ) from exc
            if not np.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} (method {cfg.method})"
                )
            for name, bundle in grads.items():
                params[name], velocity[name] = sgd_momentum_step(
                    params[name], bundle.flat(), velocity[name],
                    cfg.learning_rate, cfg.momentum,
                )
            if affine_grad is not None:
                (new_a, new_b), affine_velocity = sgd_momentum_step(
                    [affine.a, affine.b], list(affine_grad), affine_velocity,
                    cfg.learning_rate, cfg.momentum,
                )
                affine = DistAeAffine(a=new_a, b=new_b)
            current = _rebuild(nets, params)

        train_obj = _train_objective(cfg.method, current, affine, dataset, cfg)
        tune_obj, higher_better = _tune_metric(cfg.method, current, affine, dataset, cfg)
        trace.rows.append(TraceRow(
            epoch=epoch,
            seconds=time.perf_counter() - start,
            train_objective=train_obj,
            tune_objective=tune_obj,
        ))
        score = tune_obj if higher_better else -tune_obj
        if score > best_score:
            best_score = score
            best_params = {k: [p.copy() for p in v] for k, v in params.items()}
            best_affine = affine
            best_epoch = epoch
        elif epoch - best_epoch >= cfg.patience:
            break

    return (
        best_params if best_params is not None else params,
        best_affine if best_affine is not None else affine,
        trace,
    )


def train_sto(dataset, nets: dict[str, MlpNetwork], cfg: TrainConfig):
    """Stochastic training of any of the six objectives.

    Correlation gradients come from ``minibatch_corr``-sized batches and
    reconstruction gradients from an independent ``minibatch_recon``
    stream; trailing partial chunks are dropped. The parameters achieving
    the best tune metric are returned, and training stops early after
    ``patience`` epochs without improvement.
    """
    state = {}
    if cfg.method == "distae2":
        out_dim = nets["f"].output_dim
        state["affine"] = DistAeAffine(a=np.eye(out_dim), b=np.zeros(out_dim))
        state["affine_velocity"] = [np.zeros((out_dim, out_dim)), np.zeros(out_dim)]

    def step(current, batch, recon_batch, affine, _state):
        result = composite_loss(
            cfg.method, current, batch, recon_batch=recon_batch,
            lam=cfg.lam, reg_x=cfg.reg_x, reg_y=cfg.reg_y,
            affine=affine, weight_decay=cfg.weight_decay,
        )
        return result.value, result.net_grads, result.affine_grad

    best_params, affine, trace = _run_training(dataset, nets, cfg, step, state)
    final_nets = _rebuild(nets, best_params)
    cca = None
    if cfg.method in CORRELATION_METHODS:
        cca = _fit_final_cca(final_nets, dataset, cfg)
    return TrainedModel(cfg.method, final_nets, affine, cca, cfg), trace


def train_noi(dataset, nets: dict[str, MlpNetwork], cfg: TrainConfig,
              rho: float | None = None):
    """Adaptive-whitening trainer for the correlation objective.

    Keeps exponentially averaged covariance estimates of both views'
    outputs; every step whitens the batch projections with the running
    estimates and takes a gradient step on the least-squares regression of
    each view's output onto the other view's whitened projection.
    """
    if cfg.method != "dcca":
        raise ConfigError("the adaptive-whitening trainer optimizes the dcca objective")
    if rho is None:
        rho = cfg.noi_rho
    state = {"sxx": None, "syy": None}

    def step(current, batch, _recon, _affine, st):
        xb, yb = batch
        n = xb.shape[1]
        fx, f_cache = forward(current["f"], xb)
        gy, g_cache = forward(current["g"], yb)
        xc = fx - fx.mean(axis=1, keepdims=True)
        yc = gy - gy.mean(axis=1, keepdims=True)
        sxx = xc @ xc.T / n + cfg.reg_x * np.eye(xc.shape[0])
        syy = yc @ yc.T / n + cfg.reg_y * np.eye(yc.shape[0])
        st["sxx"] = sxx if st["sxx"] is None else rho * st["sxx"] + (1 - rho) * sxx
        st["syy"] = syy if st["syy"] is None else rho * st["syy"] + (1 - rho) * syy
        white_y = inv_sqrt_psd(st["syy"]) @ yc
        white_x = inv_sqrt_psd(st["sxx"]) @ xc
        res_f = xc - white_y
        res_g = yc - white_x
        value = float((res_f * res_f).sum() / n + (res_g * res_g).sum() / n)
        f_bundle = backward(current["f"], f_cache, 2.0 * res_f / n, cfg.weight_decay)
        g_bundle = backward(current["g"], g_cache, 2.0 * res_g / n, cfg.weight_decay)
        return value, {"f": f_bundle, "g": g_bundle}, None

    best_params, _, trace = _run_training(dataset, nets, cfg, step, state)
    final_nets = _rebuild(nets, best_params)
    cca = _fit_final_cca(final_nets, dataset, cfg)
    return TrainedModel(cfg.method, final_nets, None, cca, cfg), trace


@dataclass
class GridRow:
    overrides: dict
    tune_metric: float
    higher_better: bool
    best_epoch: int


@dataclass
class GridResult:
    rows: list[GridRow]
    best_model: TrainedModel
    best_trace: TrainTrace


def grid_search(dataset, base_cfg: TrainConfig, grids: dict, build_nets,
                trainer=train_sto) -> GridResult:
    """Train every grid combination and rank by the tune metric.

    ``grids`` maps TrainConfig field names to candidate value lists;
    ``build_nets`` maps a config to freshly initialized networks. Rows
    come back sorted best-first.
    """
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("grids must be nonempty")
    names = sorted(grids)
    combos = [()]
    for name in names:
        combos = [c + (v,) for c in combos for v in grids[name]]
    rows = []
    candidates = []
    for combo in combos:
        overrides = dict(zip(names, combo))
        cfg = replace(base_cfg, **overrides)
        model, trace = trainer(dataset, build_nets(cfg), cfg)
        metric, higher = _tune_metric(cfg.method, model.nets, model.affine, dataset, cfg)
        best_epoch = int(np.argmax([
            r.tune_objective if higher else -r.tune_objective for r in trace.rows
        ]))
        rows.append(GridRow(overrides, metric, higher, best_epoch))
        candidates.append((model, trace))
    order = sorted(
        range(len(rows)),
        key=lambda i: rows[i].tune_metric if rows[i].higher_better else -rows[i].tune_metric,
        reverse=True,
    )
    best_model, best_trace = candidates[order[0]]
    return GridResult(
        rows=[rows[i] for i in order], best_model=best_model, best_trace=best_trace
    )
