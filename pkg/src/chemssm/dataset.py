"""On-disk trajectory datasets: a JSON manifest next to a flat binary blob.

``data.bin`` holds float64 little-endian values in row-major
``[sample][time][variable]`` order; ``manifest.json`` carries shapes, names,
units, and generation metadata.  Writing the same dataset twice produces
bit-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["DatasetFormatError", "TrajectoryDataset", "write_dataset", "read_dataset"]

_FORMAT = "chemssm-trajectories-v1"


class DatasetFormatError(IOError):
    """Manifest or payload does not match the expected layout."""


@dataclass
class TrajectoryDataset:
    values: np.ndarray                 # [samples, time, vars] float64
    variables: list[str]
    dt: float
    units: dict[str, str] = field(default_factory=dict)
    species: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"values must be [samples, time, vars], got {self.values.shape}")
        if self.values.shape[2] != len(self.variables):
            raise ValueError("variable names do not match the last axis")
        unknown = [s for s in self.species if s not in self.variables]
        if unknown:
            raise ValueError(f"species not among variables: {unknown}")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_t(self) -> int:
        return self.values.shape[1]

    @property
    def n_vars(self) -> int:
        return self.values.shape[2]

    def column(self, name: str) -> np.ndarray:
        """All trajectories of one variable, shape [samples, time]."""
        try:
            i = self.variables.index(name)
        except ValueError:
            raise KeyError(f"no variable named '{name}'") from None
        return self.values[:, :, i]

    def select(self, mask: np.ndarray) -> "TrajectoryDataset":
        """Subset of samples; metadata is shared, values are copied."""
        mask = np.asarray(mask)
        return TrajectoryDataset(
            values=self.values[mask].copy(),
            variables=list(self.variables),
            dt=self.dt,
            units=dict(self.units),
            species=list(self.species),
            meta=dict(self.meta),
        )


def write_dataset(path, ds: TrajectoryDataset) -> None:
    """Write ``manifest.json`` and ``data.bin`` into directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": _FORMAT,
        "n_samples": ds.n_samples,
        "n_t": ds.n_t,
        "n_vars": ds.n_vars,
        "dt": ds.dt,
        "variables": list(ds.variables),
        "units": dict(ds.units),
        "species": list(ds.species),
        "meta": ds.meta,
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ds.values.astype("<f8").tofile(root / "data.bin")


def read_dataset(path) -> TrajectoryDataset:
    """Load a dataset directory; raises :class:`DatasetFormatError` on damage."""
    root = Path(path)
    mpath = root / "manifest.json"
    bpath = root / "data.bin"
    if not mpath.is_file() or not bpath.is_file():
        raise DatasetFormatError(f"{root} is not a dataset directory")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"unreadable manifest in {root}: {exc}") from exc
    if manifest.get("format") != _FORMAT:
        raise DatasetFormatError(f"unknown dataset format {manifest.get('format')!r}")
    try:
        shape = (manifest["n_samples"], manifest["n_t"], manifest["n_vars"])
        variables = list(manifest["variables"])
        dt = float(manifest["dt"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed manifest in {root}: {exc}") from exc
    expected = int(np.prod(shape)) * 8
    actual = bpath.stat().st_size
    if actual != expected:
        raise DatasetFormatError(
            f"data.bin holds {actual} bytes, manifest implies {expected}")
    values = np.fromfile(bpath, dtype="<f8").reshape(shape)
    return TrajectoryDataset(
        values=values,
        variables=variables,
        dt=dt,
        units=dict(manifest.get("units", {})),
        species=list(manifest.get("species", [])),
        meta=dict(manifest.get("meta", {})),
    )
