"""Binary checkpoint container for surrogate models.

Layout: 8-byte magic, uint64 little-endian header length, a JSON header
(sorted keys), then the named parameter arrays concatenated as little-endian
float64 in header order.  No timestamps anywhere, so saving the same model
twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelSpec, SurrogateModel
from .pca import PcaBasis
from .pipeline import NormStats, WindowPlan
from .regimes import RegimeThreshold
from .ssm import BackboneParams, SsmConfig, init_backbone

__all__ = ["CheckpointFormatError", "save_checkpoint", "load_checkpoint", "MAGIC"]

MAGIC = b"CHEMSSM1"
_FORMAT = "chemssm-checkpoint-v1"


class CheckpointFormatError(IOError):
    """The file is not a readable checkpoint of the expected version."""


def _header(model: SurrogateModel, names: list[str], shapes: list[tuple]) -> dict:
    return {
        "format": _FORMAT,
        "spec": model.spec.to_json(),
        "cfg": {
            "in_dim": model.cfg.in_dim,
            "out_dim": model.cfg.out_dim,
            "d_model": model.cfg.d_model,
            "n_layers": model.cfg.n_layers,
            "state_dim": model.cfg.state_dim,
            "expand": model.cfg.expand,
            "conv_width": model.cfg.conv_width,
            "dt_rank": model.cfg.dt_rank,
            "norm": model.cfg.norm,
            "discretization": model.cfg.discretization,
            "scan_mode": model.cfg.scan_mode,
            "dt_min": model.cfg.dt_min,
            "dt_max": model.cfg.dt_max,
        },
        "seed": model.seed,
        "variables": list(model.variables),
        "species": list(model.species),
        "stats": model.stats.to_json(),
        "pca": model.pca.to_json() if model.pca is not None else None,
        "threshold": model.threshold.to_json() if model.threshold is not None else None,
        "window": ({"width": model.window.width, "segments": model.window.segments}
                   if model.window is not None else None),
        "arrays": [{"name": n, "shape": list(s)} for n, s in zip(names, shapes)],
    }


def save_checkpoint(path, model: SurrogateModel) -> None:
    path = Path(path)
    names = []
    arrays = []
    for name, t in model.params.iter_params():
        names.append(name)
        arrays.append(np.ascontiguousarray(t.data, dtype=np.float64))
    header = _header(model, names, [a.shape for a in arrays])
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a.astype("<f8", copy=False).tobytes())


def _rebuild_params(header: dict, payload: bytes, cfg: SsmConfig) -> BackboneParams:
    skeleton = init_backbone(cfg, seed=0)
    by_name = dict(skeleton.iter_params())
    offset = 0
    seen = set()
    for entry in header["arrays"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if name not in by_name:
            raise CheckpointFormatError(f"unknown parameter '{name}' in checkpoint")
        t = by_name[name]
        if t.data.shape != shape:
            raise CheckpointFormatError(
                f"parameter '{name}' has shape {shape}, expected {t.data.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointFormatError("checkpoint payload truncated")
        t.data = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
        seen.add(name)
    if offset != len(payload):
        raise CheckpointFormatError("checkpoint payload has trailing bytes")
    missing = set(by_name) - seen
    if missing:
        raise CheckpointFormatError(f"checkpoint missing parameters: {sorted(missing)}")
    return skeleton


def load_checkpoint(path) -> SurrogateModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointFormatError(f"cannot read checkpoint: {e}") from e
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    if start + hlen > len(raw):
        raise CheckpointFormatError("checkpoint header truncated")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"unreadable checkpoint header: {e}") from e
    if header.get("format") != _FORMAT:
        raise CheckpointFormatError(f"unsupported checkpoint format {header.get('format')!r}")
    try:
        spec = ModelSpec.from_json(header["spec"])
        cfg = SsmConfig(**header["cfg"])
        stats = NormStats.from_json(header["stats"])
        pca = PcaBasis.from_json(header["pca"]) if header["pca"] is not None else None
        thr = (RegimeThreshold.from_json(header["threshold"])
               if header["threshold"] is not None else None)
        win = (WindowPlan(**header["window"])
               if header.get("window") is not None else None)
        variables = list(header["variables"])
        species = list(header["species"])
        seed = int(header["seed"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"invalid checkpoint header: {e}") from e
    params = _rebuild_params(header, raw[start + hlen:], cfg)
    return SurrogateModel(spec=spec, cfg=cfg, params=params, stats=stats,
                          variables=variables, species=species, pca=pca,
                          threshold=thr, window=win, seed=seed)
