"""Versioned binary serialization for trained models.

One container format covers every model kind: a magic tag, a
deterministic JSON header (kind, array names and shapes, metadata), then
the named float64 little-endian payloads in header order. Byte output is
a pure function of the model contents, so identical runs produce
identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagicError, IncompatibleModelError, TruncatedFileError
from .kernel_cca import ApproxKccaModel, NystromMap, RffMap
from .linear_cca import CcaConfig, CcaSolution
from .neural import Layer, MlpNetwork
from .objectives import DistAeAffine
from .training import TrainConfig, TrainedModel

_MAGIC = b"MVMD"
_VERSION = 1


class IdentityModel:
    """Pass-through projection used as the raw-feature baseline."""

    method = "identity"

    def project_view1(self, x):
        return np.asarray(x, dtype=np.float64)


def _pack(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = list(arrays)
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [
            {"name": k, "shape": list(np.asarray(arrays[k]).shape)} for k in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = [_MAGIC, struct.pack("<II", _VERSION, len(blob)), blob]
    for k in names:
        out.append(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    return b"".join(out)


def _unpack(data: bytes, path) -> tuple[str, dict, dict[str, np.ndarray]]:
    if data[:4] != _MAGIC:
        raise BadMagicError(f"{path}: not a model file")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise BadMagicError(f"{path}: unsupported model version {version}")
    header = json.loads(data[12:12 + header_len].decode())
    offset = 12 + header_len
    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = 8 * count
        if len(data) < offset + nbytes:
            raise TruncatedFileError(f"{path}: truncated array {spec['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(np.float64)
        offset += nbytes
    return header["kind"], header["meta"], arrays


def _cca_arrays(prefix: str, sol: CcaSolution) -> dict:
    return {
        f"{prefix}u": sol.u,
        f"{prefix}v": sol.v,
        f"{prefix}correlations": sol.correlations,
        f"{prefix}mean_x": sol.mean_x,
        f"{prefix}mean_y": sol.mean_y,
    }


def _cca_from_arrays(prefix: str, arrays: dict, meta: dict) -> CcaSolution:
    cfg = CcaConfig(
        out_dim=int(arrays[f"{prefix}u"].shape[1]),
        reg_x=float(meta.get("reg_x", 0.0)),
        reg_y=float(meta.get("reg_y", 0.0)),
    )
    return CcaSolution(
        u=arrays[f"{prefix}u"],
        v=arrays[f"{prefix}v"],
        correlations=arrays[f"{prefix}correlations"],
        mean_x=arrays[f"{prefix}mean_x"],
        mean_y=arrays[f"{prefix}mean_y"],
        config=cfg,
    )


def _net_meta(net: MlpNetwork) -> list:
    return [
        {"shape": list(l.weight.shape), "activation": l.activation}
        for l in net.layers
    ]


def model_bytes(model) -> bytes:
    """Serialize any supported model to its container bytes."""
    if isinstance(model, IdentityModel):
        return _pack("identity", {}, {})
    if isinstance(model, CcaSolution):
        meta = {
            "reg_x": model.config.reg_x if model.config else 0.0,
            "reg_y": model.config.reg_y if model.config else 0.0,
        }
        return _pack("linear_cca", meta, _cca_arrays("", model))
    if isinstance(model, ApproxKccaModel):
        meta = {
            "approximation": model.method,
            "width_x": model.map_x.width,
            "width_y": model.map_y.width,
            "reg_x": model.solution.config.reg_x if model.solution.config else 0.0,
            "reg_y": model.solution.config.reg_y if model.solution.config else 0.0,
        }
        arrays = _cca_arrays("cca_", model.solution)
        if model.method == "rff":
            arrays.update(
                x_weights=model.map_x.weights, x_phases=model.map_x.phases,
                y_weights=model.map_y.weights, y_phases=model.map_y.phases,
            )
        else:
            arrays.update(
                x_landmarks=model.map_x.landmarks, x_transform=model.map_x.transform,
                y_landmarks=model.map_y.landmarks, y_transform=model.map_y.transform,
            )
        return _pack("approx_kcca", meta, arrays)
    if isinstance(model, TrainedModel):
        meta = {
            "method": model.method,
            "nets": {name: _net_meta(net) for name, net in model.nets.items()},
            "has_cca": model.cca is not None,
            "has_affine": model.affine is not None,
            "reg_x": model.config.reg_x,
            "reg_y": model.config.reg_y,
            "seed": model.config.seed,
        }
        arrays = {}
        for name in sorted(model.nets):
            for i, layer in enumerate(model.nets[name].layers):
                arrays[f"net_{name}_{i}_w"] = layer.weight
                arrays[f"net_{name}_{i}_b"] = layer.bias
        if model.cca is not None:
            arrays.update(_cca_arrays("cca_", model.cca))
        if model.affine is not None:
            arrays["affine_a"] = model.affine.a
            arrays["affine_b"] = model.affine.b
        return _pack("network_model", meta, arrays)
    raise IncompatibleModelError(f"cannot serialize {type(model).__name__}")


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def load_model(path):
    """Load a model container back into its projection-capable object."""
    with open(path, "rb") as fh:
        data = fh.read()
    kind, meta, arrays = _unpack(data, path)
    if kind == "identity":
        return IdentityModel()
    if kind == "linear_cca":
        return _cca_from_arrays("", arrays, meta)
    if kind == "approx_kcca":
        solution = _cca_from_arrays("cca_", arrays, meta)
        if meta["approximation"] == "rff":
            map_x = RffMap(arrays["x_weights"], arrays["x_phases"], meta["width_x"])
            map_y = RffMap(arrays["y_weights"], arrays["y_phases"], meta["width_y"])
        else:
            map_x = NystromMap(arrays["x_landmarks"], arrays["x_transform"], meta["width_x"])
            map_y = NystromMap(arrays["y_landmarks"], arrays["y_transform"], meta["width_y"])
        return ApproxKccaModel(
            method=meta["approximation"], map_x=map_x, map_y=map_y, solution=solution
        )
    if kind == "network_model":
        nets = {}
        for name, layer_meta in meta["nets"].items():
            layers = tuple(
                Layer(
                    weight=arrays[f"net_{name}_{i}_w"],
                    bias=arrays[f"net_{name}_{i}_b"],
                    activation=spec["activation"],
                )
                for i, spec in enumerate(layer_meta)
            )
            nets[name] = MlpNetwork(layers)
        cca = _cca_from_arrays("cca_", arrays, meta) if meta["has_cca"] else None
        affine = None
        if meta["has_affine"]:
            affine = DistAeAffine(a=arrays["affine_a"], b=arrays["affine_b"])
        cfg = TrainConfig(
            method=meta["method"], reg_x=meta["reg_x"], reg_y=meta["reg_y"],
            seed=int(meta["seed"]),
        )
        return TrainedModel(meta["method"], nets, affine, cca, cfg)
    raise BadMagicError(f"{path}: unknown model kind {kind!r}")


def project_view1(model, x) -> np.ndarray:
    """Uniform view-1 projection across model kinds."""
    from .errors import ShapeMismatchError

    x = np.asarray(x, dtype=np.float64)
    try:
        if isinstance(model, CcaSolution):
            return model.project_x(x)
        if isinstance(model, ApproxKccaModel):
            return model.project_x(x)
        return model.project_view1(x)
    except ShapeMismatchError as exc:
        raise IncompatibleModelError(f"model cannot project this data: {exc}") from exc
