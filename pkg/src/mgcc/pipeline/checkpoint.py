"""Checkpoint directories: ``manifest.json`` plus one raw little-endian float32 blob.

Layout of the manifest::

    {
      "format": "mgcc-checkpoint", "version": 1,
      "blob": "tensors.bin", "step": 500,
      "config": {...full Config...},
      "optimizer": {"lr": ..., "betas": [...], "eps": ..., "step": ...},
      "tensors": [{"name": "h_cap", "shape": [16, 128], "dtype": "float32",
                   "offset": 0, "nbytes": 8192}, ...]
    }

Adam moments are stored as extra tensors named ``adam.exp_avg/<name>`` and
``adam.exp_avg_sq/<name>``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from mgcc.config import Config
from mgcc.pipeline.model import MGCCModel, build_model
from mgcc.pipeline.training import OptimizerState

FORMAT = "mgcc-checkpoint"
BLOB = "tensors.bin"
MANIFEST = "manifest.json"
_DTYPE = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


def _tensor_table(model: MGCCModel, opt: OptimizerState | None) -> dict[str, torch.Tensor]:
    table = dict(model.params.named_tensors())
    if opt is not None:
        for name, (m, v) in opt.moments(model).items():
            table[f"adam.exp_avg/{name}"] = m
            table[f"adam.exp_avg_sq/{name}"] = v
    return table


def save_checkpoint(model: MGCCModel, opt: OptimizerState | None, path: str | Path, config: Config | None = None) -> dict:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    config = config or Config(model=model.cfg)
    entries, offset = [], 0
    with open(path / BLOB, "wb") as fh:
        for name, t in _tensor_table(model, opt).items():
            arr = np.ascontiguousarray(t.detach().cpu().numpy().astype(_DTYPE))
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": arr.nbytes})
            offset += arr.nbytes
    manifest = {
        "format": FORMAT,
        "version": 1,
        "blob": BLOB,
        "step": opt.step_count if opt else 0,
        "config": config.to_dict(),
        "optimizer": None if opt is None else {"lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps, "step": opt.step_count},
        "tensors": entries,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return manifest


def read_manifest(path: str | Path) -> dict:
    try:
        manifest = json.loads((Path(path) / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"no {MANIFEST} in {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest in {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an {FORMAT} directory")
    return manifest


def _read_tensors(path: Path, manifest: dict) -> dict[str, np.ndarray]:
    blob_path = path / manifest.get("blob", BLOB)
    try:
        blob = blob_path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing tensor blob {blob_path}") from exc
    out = {}
    for entry in manifest["tensors"]:
        name, offset, nbytes = entry["name"], entry["offset"], entry["nbytes"]
        if entry.get("dtype") != "float32":
            raise CheckpointError(f"tensor {name}: unsupported dtype {entry.get('dtype')}")
        if nbytes != int(np.prod(entry["shape"], dtype=np.int64)) * _DTYPE.itemsize:
            raise CheckpointError(f"tensor {name}: byte count does not match shape {entry['shape']}")
        if offset + nbytes > len(blob):
            raise CheckpointError(f"tensor {name}: blob truncated ({len(blob)} bytes, need {offset + nbytes})")
        out[name] = np.frombuffer(blob, dtype=_DTYPE, count=nbytes // 4, offset=offset).reshape(entry["shape"])
    return out


def load_checkpoint(
    path: str | Path, model: MGCCModel | None = None, dtype: torch.dtype = torch.float32
) -> tuple[MGCCModel, OptimizerState | None]:
    """Restore trainable tensors (and Adam state, if saved) into ``model``.

    Without ``model`` the frozen parts are rebuilt from the config snapshot.
    """
    path = Path(path)
    manifest = read_manifest(path)
    if model is None:
        model = build_model(Config.from_dict(manifest["config"]).model, dtype=dtype)
    arrays = _read_tensors(path, manifest)
    with torch.no_grad():
        for name, p in model.params.named_tensors().items():
            if name not in arrays:
                raise CheckpointError(f"tensor {name} missing from checkpoint")
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"tensor {name}: shape {list(arr.shape)} != expected {list(p.shape)}")
            p.copy_(torch.from_numpy(arr.copy()))
    opt = None
    if manifest.get("optimizer") is not None:
        o = manifest["optimizer"]
        opt = OptimizerState(model, o["lr"], o["betas"], o["eps"])
        moments = {}
        for name in model.params.named_tensors():
            m, v = arrays.get(f"adam.exp_avg/{name}"), arrays.get(f"adam.exp_avg_sq/{name}")
            if m is not None and v is not None:
                moments[name] = (torch.from_numpy(m.copy()), torch.from_numpy(v.copy()))
        opt.load_moments(model, moments, o["step"])
    return model, opt
