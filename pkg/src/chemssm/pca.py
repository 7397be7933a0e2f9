"""Principal components of normalised initial conditions.

The latent model variant feeds the backbone a low-dimensional projection of
each window's initial condition instead of the full state vector.  The basis
is fitted once on training ICs; latent coordinates are then min-max scaled to
[-1, 1] with ranges recorded at fit time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PcaBasis", "fit_pca", "project", "reconstruct_from_latent"]


@dataclass
class PcaBasis:
    mean: np.ndarray          # [p]
    components: np.ndarray    # [p, d], orthonormal columns
    eigenvalues: np.ndarray   # [p], descending
    latent_min: np.ndarray | None = None
    latent_max: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    @property
    def n_latent(self) -> int:
        return self.components.shape[1]

    def to_json(self) -> dict:
        obj = {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }
        if self.latent_min is not None:
            obj["latent_min"] = self.latent_min.tolist()
            obj["latent_max"] = self.latent_max.tolist()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "PcaBasis":
        return cls(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            components=np.asarray(obj["components"], dtype=np.float64),
            eigenvalues=np.asarray(obj["eigenvalues"], dtype=np.float64),
            latent_min=(
                np.asarray(obj["latent_min"], dtype=np.float64)
                if "latent_min" in obj else None
            ),
            latent_max=(
                np.asarray(obj["latent_max"], dtype=np.float64)
                if "latent_max" in obj else None
            ),
        )

    def latent_encode(self, z: np.ndarray) -> np.ndarray:
        """Scale latent coordinates to [-1, 1] with the recorded training range."""
        if self.latent_min is None:
            raise ValueError("latent range not fitted")
        span = self.latent_max - self.latent_min
        safe = np.where(span == 0.0, 1.0, span)
        out = 2.0 * (z - self.latent_min) / safe - 1.0
        return np.where(span == 0.0, 0.0, out)

    def latent_decode(self, y: np.ndarray) -> np.ndarray:
        if self.latent_min is None:
            raise ValueError("latent range not fitted")
        return (y + 1.0) / 2.0 * (self.latent_max - self.latent_min) + self.latent_min


def fit_pca(x0: np.ndarray, d: int, with_latent_range: bool = True) -> PcaBasis:
    """Eigendecomposition of the sample covariance of ``[n, p]`` rows.

    Components are ordered by descending eigenvalue; each column's sign is
    fixed so its largest-magnitude entry is positive, making refits
    bit-reproducible.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2:
        raise ValueError(f"expected [n, p], got shape {x0.shape}")
    n, p = x0.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if not 1 <= d <= p:
        raise ValueError(f"latent dimension {d} outside [1, {p}]")
    mean = x0.mean(axis=0)
    xc = x0 - mean
    cov = xc.T @ xc / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for j in range(p):
        k = int(np.argmax(np.abs(eigvecs[:, j])))
        if eigvecs[k, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    basis = PcaBasis(mean=mean, components=eigvecs[:, :d].copy(), eigenvalues=eigvals)
    if with_latent_range:
        z = project(x0, basis)
        basis.latent_min = z.min(axis=0)
        basis.latent_max = z.max(axis=0)
    return basis


def project(x: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Centre and project ``[..., p]`` onto the basis columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.n_features:
        raise ValueError(f"last axis {x.shape[-1]} != {basis.n_features}")
    return (x - basis.mean) @ basis.components


def reconstruct_from_latent(z: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Map latent coordinates back to feature space (exact when d = p)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != basis.n_latent:
        raise ValueError(f"last axis {z.shape[-1]} != {basis.n_latent}")
    return z @ basis.components.T + basis.mean
