"""Command-line experiment runner.

Subcommands: ``gen`` (datasets), ``train`` (models + traces), ``eval``
(clustering/classification metrics), ``bench-stochastic`` (minibatch
estimation-error reports), and ``sweep`` (grid search). Every run writes a
manifest with the resolved configuration, the seed, and SHA-256 digests of
the produced files; re-running with the same configuration and seed
reproduces all numeric outputs byte-for-byte (wall-clock fields in traces
and manifests excepted).

Configuration precedence is flags > ``--config`` JSON file > defaults.
Dataset paths are resolved against ``--data-dir`` (or the MVCCA_DATA_DIR
environment variable) when relative.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    BadMagicError,
    BadSpecError,
    ConfigError,
    DegenerateCovarianceError,
    DimensionMismatchError,
    IncompatibleModelError,
    InfeasibleSpecError,
    LabelClassEmptyError,
    MvccaError,
    NonFiniteError,
    NonFiniteLossError,
    NonSymmetricError,
    TruncatedFileError,
)
from .datasets import (
    MultiViewDataset,
    SyntheticSpec,
    load_dataset,
    load_idx_pair,
    make_noisy_mnist,
    make_synthetic_gaussian,
    make_synthetic_nonlinear,
    render_digit_corpus,
    save_dataset,
)
from .evaluation import clustering_accuracy, linear_svm_ovo, nmi, spectral_cluster
from .kernel_cca import approx_kcca
from .linear_cca import CcaConfig, solve_cca, total_correlation
from .neural import forward, init_network
from .serialize import IdentityModel, load_model, project_view1, save_model
from .training import (
    DESK_GRIDS,
    TrainConfig,
    default_networks,
    grid_search,
    train_noi,
    train_sto,
)

# Exit codes by failure family.
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_INCOMPATIBLE = 5
EXIT_OTHER = 1

_ERROR_CODES = (
    ((ConfigError, BadSpecError), EXIT_CONFIG),
    ((BadMagicError, TruncatedFileError, DimensionMismatchError,
      LabelClassEmptyError, InfeasibleSpecError, FileNotFoundError), EXIT_DATA),
    ((NonFiniteError, NonSymmetricError, DegenerateCovarianceError,
      NonFiniteLossError), EXIT_NUMERIC),
    ((IncompatibleModelError,), EXIT_INCOMPATIBLE),
)


def _exit_code(exc) -> int:
    for classes, code in _ERROR_CODES:
        if isinstance(exc, classes):
            return code
    return EXIT_OTHER


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Manifest:
    """Run record: configuration snapshot plus digests of produced files."""

    def __init__(self, out_dir: Path, command: str, config: dict):
        self.path = out_dir / "manifest.json"
        self.record = {
            "command": command,
            "config": config,
            "toolkit_version": __version__,
            "seed": config.get("seed"),
            "started": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "finished": None,
            "outputs": {},
        }
        self._write()

    def _write(self):
        with open(self.path, "w") as fh:
            json.dump(self.record, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finalize(self, outputs: list[Path]):
        self.record["outputs"] = {p.name: _sha256(p) for p in outputs}
        self.record["finished"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self._write()


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ConfigError("config file must hold a JSON object")
    return loaded


def _merge(args: argparse.Namespace, file_config: dict, keys: list[str]) -> dict:
    """Flags beat config-file entries beat defaults (already in args)."""
    merged = {}
    for key in keys:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
        elif key in file_config:
            merged[key] = file_config[key]
    return merged


def _resolve(path, data_dir) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    base = data_dir or os.environ.get("MVCCA_DATA_DIR")
    return (Path(base) / p) if base else p


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def _write_jsonl(path: Path, rows: list[dict]):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_json(path: Path, record: dict):
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- gen -------------------------------------------------------------------

def cmd_gen(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "kind": args.kind, "seed": args.seed, "n": args.n,
        "n_tune": args.n_tune, "n_test": args.n_test,
        "rho": args.rho, "dx": args.dx, "dy": args.dy,
        "noise": args.noise, "latent_dim": args.latent_dim,
        "ambient_dim": args.ambient_dim,
        "idx_dir": args.idx_dir, "rendered": args.rendered,
    }
    manifest = Manifest(out_dir, "gen", config)
    if args.kind == "synthetic":
        if not args.rho:
            raise ConfigError("synthetic generation needs --rho")
        rho = _parse_floats(args.rho)
        k = len(rho)
        spec = SyntheticSpec(
            rho=rho,
            dx=args.dx or max(2 * k, k + 1),
            dy=args.dy or max(2 * k, k + 1),
            n_train=args.n,
            n_tune=args.n_tune,
            n_test=args.n_test,
            noise_x=args.noise,
            noise_y=args.noise,
            seed=args.seed,
        )
        dataset = make_synthetic_gaussian(spec)
    elif args.kind == "synthetic-nonlinear":
        dataset = make_synthetic_nonlinear(
            n_train=args.n, n_tune=args.n_tune, n_test=args.n_test,
            latent_dim=args.latent_dim, noise=args.noise,
            ambient_dim=args.ambient_dim, seed=args.seed,
        )
    elif args.kind == "noisy-mnist":
        if args.idx_dir:
            idx_dir = _resolve(args.idx_dir, args.data_dir)
            images, labels = load_idx_pair(
                idx_dir / "train-images-idx3-ubyte", idx_dir / "train-labels-idx1-ubyte"
            )
            test_images, test_labels = load_idx_pair(
                idx_dir / "t10k-images-idx3-ubyte", idx_dir / "t10k-labels-idx1-ubyte"
            )
        else:
            # No IDX files: render a jittered digit corpus as the source pool.
            pool = args.rendered or 14000
            test_n = max(pool // 7, 10)
            images, labels = render_digit_corpus(pool, seed=args.seed)
            test_images, test_labels = render_digit_corpus(
                test_n, seed=np.random.SeedSequence(entropy=args.seed, spawn_key=(99,))
            )
        dataset = make_noisy_mnist(
            images, labels, seed=args.seed, n_tune=args.n_tune or None,
            test_images=test_images, test_labels=test_labels,
        )
    else:
        raise ConfigError(f"unknown dataset kind {args.kind!r}")
    data_path = out_dir / "dataset.mvds"
    save_dataset(dataset, data_path)
    manifest.finalize([data_path])
    print(f"wrote {data_path} ({dataset.n_samples} samples)")
    return 0


# --- train -----------------------------------------------------------------

_TRAIN_KEYS = [
    "method", "minibatch_corr", "minibatch_recon", "learning_rate", "momentum",
    "weight_decay", "lam", "reg_x", "reg_y", "max_epochs", "patience", "seed",
    "noi_rho", "optimizer", "hidden", "out_dim", "hidden_activation",
    "decoder_output", "rank", "width_x", "width_y",
]


def _train_once(dataset: MultiViewDataset, settings: dict):
    """Dispatch on method family; returns (model, trace rows as dicts)."""
    method = settings["method"]
    seed = settings.get("seed", 0)
    out_dim = settings.get("out_dim", 10)
    xs, ys = dataset.views("train")
    if method == "cca":
        sol = solve_cca(xs, ys, CcaConfig(
            out_dim, settings.get("reg_x", 1e-4), settings.get("reg_y", 1e-4)))
        xt, yt = dataset.views("tune")
        tune = total_correlation(sol.project_x(xt), sol.project_y(yt)) \
            if xt.shape[1] else 0.0
        rows = [{"epoch": 0, "seconds": 0.0,
                 "train_objective": -sol.total_correlation, "tune_objective": tune}]
        return sol, rows
    if method in ("fkcca", "nkcca"):
        model = approx_kcca(
            xs, ys,
            method="rff" if method == "fkcca" else "nystrom",
            width_x=settings.get("width_x", 1.0),
            width_y=settings.get("width_y", 1.0),
            rank=settings.get("rank", 1000),
            cfg=CcaConfig(out_dim, settings.get("reg_x", 1e-4),
                          settings.get("reg_y", 1e-4)),
            seed=seed,
        )
        xt, yt = dataset.views("tune")
        tune = total_correlation(model.project_x(xt), model.project_y(yt)) \
            if xt.shape[1] else 0.0
        rows = [{"epoch": 0, "seconds": 0.0,
                 "train_objective": -model.total_correlation, "tune_objective": tune}]
        return model, rows
    cfg_fields = {
        k: settings[k] for k in (
            "minibatch_corr", "minibatch_recon", "learning_rate", "momentum",
            "weight_decay", "lam", "reg_x", "reg_y", "max_epochs", "patience",
            "seed", "noi_rho",
        ) if k in settings
    }
    cfg = TrainConfig(method=method, **cfg_fields)
    nets = default_networks(
        method,
        dx=xs.shape[0], dy=ys.shape[0], out_dim=out_dim,
        hidden=settings.get("hidden", (256, 256, 256)),
        hidden_activation=settings.get("hidden_activation", "sigmoid"),
        decoder_output_activation=settings.get("decoder_output", "linear"),
        seed=seed,
    )
    if settings.get("optimizer", "sto") == "noi":
        model, trace = train_noi(dataset, nets, cfg)
    else:
        model, trace = train_sto(dataset, nets, cfg)
    return model, trace.as_dicts()


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    file_config = _load_config_file(args.config)
    settings = _merge(args, file_config, _TRAIN_KEYS)
    settings.setdefault("method", file_config.get("method"))
    if not settings.get("method"):
        raise ConfigError("--method (or a config entry) is required")
    if isinstance(settings.get("hidden"), str):
        settings["hidden"] = _parse_ints(settings["hidden"])
    settings.setdefault("seed", 0)
    manifest = Manifest(out_dir, "train", settings)
    dataset = load_dataset(_resolve(args.data, args.data_dir))
    model, rows = _train_once(dataset, settings)
    model_path = out_dir / "model.mvmd"
    trace_path = out_dir / "trace.jsonl"
    save_model(model, model_path)
    _write_jsonl(trace_path, rows)
    manifest.finalize([model_path, trace_path])
    print(f"wrote {model_path}")
    return 0


# --- eval ------------------------------------------------------------------

def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "model": args.model, "data": args.data, "seed": args.seed,
        "clusters": args.clusters, "k_neighbors": args.k_neighbors,
        "svm": args.svm, "c_grid": args.c_grid,
    }
    manifest = Manifest(out_dir, "eval", config)
    dataset = load_dataset(_resolve(args.data, args.data_dir))
    if dataset.labels is None:
        raise IncompatibleModelError("evaluation needs a labeled dataset")
    model = IdentityModel() if args.model == "identity" \
        else load_model(_resolve(args.model, args.data_dir))

    tune_x, _ = dataset.views("tune")
    test_x, _ = dataset.views("test")
    tune_proj = project_view1(model, tune_x)
    test_proj = project_view1(model, test_x)
    tune_labels = dataset.split_labels("tune")
    test_labels = dataset.split_labels("test")

    k_grid = _parse_ints(args.k_neighbors)
    best_k, best_tune_ac = None, -1.0
    for k in k_grid:
        result = spectral_cluster(tune_proj, args.clusters, k, seed=args.seed)
        ac = clustering_accuracy(tune_labels, result.assignments)
        if ac > best_tune_ac:
            best_k, best_tune_ac = k, ac
    result = spectral_cluster(test_proj, args.clusters, best_k, seed=args.seed)
    record = {
        "ac": clustering_accuracy(test_labels, result.assignments),
        "nmi": nmi(test_labels, result.assignments),
        "k_neighbors": best_k,
        "tune_ac": best_tune_ac,
        "clusters": args.clusters,
        "svm_error": None,
        "svm_c": None,
    }
    if args.svm:
        train_x, _ = dataset.views("train")
        svm = linear_svm_ovo(
            project_view1(model, train_x), dataset.split_labels("train"),
            tune_proj, tune_labels, test_proj, test_labels,
            c_grid=_parse_floats(args.c_grid), seed=args.seed,
        )
        record["svm_error"] = svm.error
        record["svm_c"] = svm.c
    metrics_path = out_dir / "metrics.json"
    _write_json(metrics_path, record)
    manifest.finalize([metrics_path])
    print(json.dumps(record, sort_keys=True))
    return 0


# --- bench-stochastic --------------------------------------------------------

def cmd_bench(args) -> int:
    from .stochastic_bench import measure_error

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "data": args.data, "seed": args.seed, "n_grid": args.n_grid,
        "trials": args.trials, "reg_x": args.reg_x, "reg_y": args.reg_y,
        "out_dim": args.out_dim, "hidden": args.hidden,
    }
    manifest = Manifest(out_dir, "bench-stochastic", config)
    if args.data:
        dataset = load_dataset(_resolve(args.data, args.data_dir))
        xs, ys = dataset.views("train")
    else:
        dataset = make_synthetic_gaussian(SyntheticSpec(
            rho=(0.9, 0.7, 0.5), dx=10, dy=10, n_train=5000, seed=args.seed))
        xs, ys = dataset.views("train")
    hidden = _parse_ints(args.hidden)
    seeds = np.random.SeedSequence(entropy=args.seed, spawn_key=(7,)).spawn(2)
    # Sigmoid outputs keep the squared norms bounded by the output width.
    net_f = init_network((xs.shape[0], *hidden, args.out_dim),
                         ["sigmoid"] * (len(hidden) + 1), seeds[0])
    net_g = init_network((ys.shape[0], *hidden, args.out_dim),
                         ["sigmoid"] * (len(hidden) + 1), seeds[1])
    fx, _ = forward(net_f, xs)
    gy, _ = forward(net_g, ys)
    reports = measure_error(
        fx, gy, _parse_ints(args.n_grid), args.trials,
        args.reg_x, args.reg_y, seed=args.seed,
    )
    rows = [r.as_dict() for r in reports]
    bench_path = out_dir / "bench.jsonl"
    _write_jsonl(bench_path, rows)
    manifest.finalize([bench_path])
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


# --- sweep -------------------------------------------------------------------

def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.grid:
        with open(args.grid) as fh:
            grids = json.load(fh)
    else:
        grids = dict(DESK_GRIDS)
    if not isinstance(grids, dict) or not grids:
        raise ConfigError("grid file must hold a nonempty JSON object")
    file_config = _load_config_file(args.config)
    settings = _merge(args, file_config, _TRAIN_KEYS)
    settings.setdefault("method", file_config.get("method"))
    if not settings.get("method"):
        raise ConfigError("--method (or a config entry) is required")
    if isinstance(settings.get("hidden"), str):
        settings["hidden"] = _parse_ints(settings["hidden"])
    settings.setdefault("seed", 0)
    manifest = Manifest(out_dir, "sweep", {**settings, "grids": grids})
    dataset = load_dataset(_resolve(args.data, args.data_dir))
    xs, ys = dataset.views("train")
    base_fields = {
        k: settings[k] for k in (
            "minibatch_corr", "minibatch_recon", "learning_rate", "momentum",
            "weight_decay", "lam", "reg_x", "reg_y", "max_epochs", "patience",
            "seed", "noi_rho",
        ) if k in settings
    }
    base_cfg = TrainConfig(method=settings["method"], **base_fields)

    def build(cfg):
        return default_networks(
            cfg.method, dx=xs.shape[0], dy=ys.shape[0],
            out_dim=settings.get("out_dim", 10),
            hidden=settings.get("hidden", (256, 256, 256)),
            hidden_activation=settings.get("hidden_activation", "sigmoid"),
            decoder_output_activation=settings.get("decoder_output", "linear"),
            seed=cfg.seed,
        )

    trainer = train_noi if settings.get("optimizer") == "noi" else train_sto
    result = grid_search(dataset, base_cfg, grids, build, trainer=trainer)
    rows = [
        {"rank": i, "overrides": r.overrides, "tune_metric": r.tune_metric,
         "higher_better": r.higher_better, "best_epoch": r.best_epoch}
        for i, r in enumerate(result.rows)
    ]
    table_path = out_dir / "sweep.jsonl"
    model_path = out_dir / "model.mvmd"
    _write_jsonl(table_path, rows)
    save_model(result.best_model, model_path)
    manifest.finalize([table_path, model_path])
    print(f"best: {rows[0]}")
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvcca", description="Multi-view representation learning toolkit"
    )
    parser.add_argument("--data-dir", default=None,
                        help="base directory for relative data paths "
                             "(default: $MVCCA_DATA_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset container")
    gen.add_argument("kind", choices=["synthetic", "synthetic-nonlinear", "noisy-mnist"])
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n", type=int, default=10000, help="training samples")
    gen.add_argument("--n-tune", type=int, default=0, dest="n_tune")
    gen.add_argument("--n-test", type=int, default=0, dest="n_test")
    gen.add_argument("--rho", default=None, help="comma-separated correlations")
    gen.add_argument("--dx", type=int, default=None)
    gen.add_argument("--dy", type=int, default=None)
    gen.add_argument("--noise", type=float, default=1.0)
    gen.add_argument("--latent-dim", type=int, default=2, dest="latent_dim")
    gen.add_argument("--ambient-dim", type=int, default=None, dest="ambient_dim")
    gen.add_argument("--idx-dir", default=None, dest="idx_dir",
                     help="directory holding the four IDX digit files")
    gen.add_argument("--rendered", type=int, default=None,
                     help="render this many digit images instead of reading IDX")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="train a model on a dataset container")
    train.add_argument("--data", required=True)
    train.add_argument("--config", default=None)
    train.add_argument("--out", required=True)
    train.add_argument("--method", default=None,
                       choices=["cca", "fkcca", "nkcca", "splitae", "dcca",
                                "dccae", "corrae", "distae1", "distae2"])
    train.add_argument("--optimizer", default=None, choices=["sto", "noi"])
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--minibatch-corr", type=int, default=None, dest="minibatch_corr")
    train.add_argument("--minibatch-recon", type=int, default=None, dest="minibatch_recon")
    train.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    train.add_argument("--momentum", type=float, default=None)
    train.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    train.add_argument("--lambda", type=float, default=None, dest="lam")
    train.add_argument("--rx", type=float, default=None, dest="reg_x")
    train.add_argument("--ry", type=float, default=None, dest="reg_y")
    train.add_argument("--max-epochs", type=int, default=None, dest="max_epochs")
    train.add_argument("--patience", type=int, default=None)
    train.add_argument("--noi-rho", type=float, default=None, dest="noi_rho")
    train.add_argument("--hidden", default=None, help="comma-separated widths")
    train.add_argument("--L", type=int, default=None, dest="out_dim")
    train.add_argument("--hidden-activation", default=None, dest="hidden_activation")
    train.add_argument("--decoder-output", default=None, dest="decoder_output",
                       choices=["linear", "sigmoid"])
    train.add_argument("--rank", type=int, default=None, help="kernel approximation rank")
    train.add_argument("--width-x", type=float, default=None, dest="width_x")
    train.add_argument("--width-y", type=float, default=None, dest="width_y")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained model")
    ev.add_argument("--model", required=True, help="model path or 'identity'")
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--clusters", type=int, default=10)
    ev.add_argument("--k-neighbors", default="5,10,20", dest="k_neighbors")
    ev.add_argument("--svm", action="store_true")
    ev.add_argument("--c-grid", default="0.1,1.0,10.0", dest="c_grid")
    ev.set_defaults(func=cmd_eval)

    bench = sub.add_parser("bench-stochastic",
                           help="measure minibatch estimation error vs bounds")
    bench.add_argument("--data", default=None)
    bench.add_argument("--out", required=True)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--n-grid", default="50,100,200,400", dest="n_grid")
    bench.add_argument("--trials", type=int, default=200)
    bench.add_argument("--rx", type=float, default=1e-4, dest="reg_x")
    bench.add_argument("--ry", type=float, default=1e-4, dest="reg_y")
    bench.add_argument("--L", type=int, default=8, dest="out_dim")
    bench.add_argument("--hidden", default="16")
    bench.set_defaults(func=cmd_bench)

    sweep = sub.add_parser("sweep", help="grid search over training settings")
    sweep.add_argument("--data", required=True)
    sweep.add_argument("--grid", default=None,
                       help="JSON file: field -> values (default: the desk-scale "
                            "learning-rate/momentum/minibatch grids)")
    sweep.add_argument("--config", default=None)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--method", default=None)
    sweep.add_argument("--optimizer", default=None, choices=["sto", "noi"])
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--hidden", default=None)
    sweep.add_argument("--L", type=int, default=None, dest="out_dim")
    sweep.add_argument("--hidden-activation", default=None, dest="hidden_activation")
    sweep.add_argument("--decoder-output", default=None, dest="decoder_output")
    sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MvccaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
