"""Trajectory preprocessing: clamping, power transform, min-max scaling, windowing.

Training operates on overlapping fixed-width windows cut from each
trajectory.  Two sets of min-max statistics coexist on purpose: trajectory
statistics (over samples and time) scale the targets, initial-condition
statistics (over window start points) scale the inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WindowPlan",
    "NormStats",
    "clamp_nonneg",
    "time_decompose",
    "reconstruct",
    "tile_initial",
    "append_time_channel",
]

logger = logging.getLogger(__name__)


def clamp_nonneg(x: np.ndarray) -> np.ndarray:
    """Replace negative entries (solver noise) with zero."""
    neg = int(np.count_nonzero(x < 0))
    if neg:
        logger.info("clamped %d negative entries to zero", neg)
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class WindowPlan:
    """Overlapping windows of ``width`` points with stride ``width - 1``.

    Consecutive windows share one boundary point, so ``segments`` windows
    cover ``segments*(width-1) + 1`` source points.
    """

    width: int = 101
    segments: int = 10

    def __post_init__(self):
        if self.width < 2:
            raise ValueError("window width must be >= 2")
        if self.segments < 1:
            raise ValueError("need at least one segment")

    @property
    def stride(self) -> int:
        return self.width - 1

    @property
    def min_source_length(self) -> int:
        return self.segments * self.stride + 1


def time_decompose(x: np.ndarray, plan: WindowPlan) -> np.ndarray:
    """Cut ``[samples, time, vars]`` into ``[samples*segments, width, vars]``.

    Window ``i`` covers source indices ``[i*stride, i*stride + width)``;
    trailing points beyond the last window are dropped.
    """
    if x.ndim != 3:
        raise ValueError(f"expected [samples, time, vars], got shape {x.shape}")
    n_t = x.shape[1]
    if n_t < plan.min_source_length:
        raise ValueError(
            f"trajectory length {n_t} < required {plan.min_source_length} "
            f"for {plan.segments} windows of width {plan.width}"
        )
    dropped = n_t - plan.min_source_length
    if dropped:
        logger.info("time_decompose dropped %d trailing points per sample", dropped)
    out = np.empty((x.shape[0] * plan.segments, plan.width, x.shape[2]), dtype=np.float64)
    for i in range(plan.segments):
        lo = i * plan.stride
        out[i::plan.segments] = x[:, lo:lo + plan.width, :]
    return out


def reconstruct(windows: np.ndarray, plan: WindowPlan) -> np.ndarray:
    """Concatenate windows back per sample, keeping duplicated boundary points.

    Inverse of :func:`time_decompose` up to the duplicated boundaries: the
    result has ``segments*width`` points per sample.
    """
    if windows.ndim != 3 or windows.shape[1] != plan.width:
        raise ValueError(f"expected [n*segments, {plan.width}, vars], got {windows.shape}")
    if windows.shape[0] % plan.segments:
        raise ValueError(
            f"window count {windows.shape[0]} is not a multiple of {plan.segments}"
        )
    n = windows.shape[0] // plan.segments
    return windows.reshape(n, plan.segments * plan.width, windows.shape[2])


def tile_initial(x0: np.ndarray, width: int) -> np.ndarray:
    """Repeat initial conditions ``[n, vars]`` along a new time axis."""
    if x0.ndim != 2:
        raise ValueError(f"expected [n, vars], got shape {x0.shape}")
    if width < 1:
        raise ValueError("width must be >= 1")
    return np.repeat(x0[:, None, :], width, axis=1)


def append_time_channel(x: np.ndarray) -> np.ndarray:
    """Append a time feature scaled to [-1, 1] as an extra variable."""
    if x.ndim != 3:
        raise ValueError(f"expected [n, time, vars], got shape {x.shape}")
    w = x.shape[1]
    ramp = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    t = np.broadcast_to(ramp[None, :, None], (x.shape[0], w, 1))
    return np.concatenate([x, t], axis=2)


@dataclass
class NormStats:
    """Power transform plus the two min-max scalings, fitted on training windows."""

    variables: list[str]
    exponent: float
    traj_min: np.ndarray
    traj_max: np.ndarray
    ic_min: np.ndarray
    ic_max: np.ndarray

    def __post_init__(self):
        p = len(self.variables)
        for name in ("traj_min", "traj_max", "ic_min", "ic_max"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape != (p,):
                raise ValueError(f"{name} must have shape ({p},), got {arr.shape}")
        if not (0.0 < self.exponent <= 1.0):
            raise ValueError("exponent must be in (0, 1]")
        if np.any(self.traj_max < self.traj_min) or np.any(self.ic_max < self.ic_min):
            raise ValueError("max < min in normalisation stats")

    @classmethod
    def fit(cls, windows: np.ndarray, variables: list[str], exponent: float = 0.2) -> "NormStats":
        """Fit from nonnegative training windows ``[n, width, vars]``.

        Trajectory stats pool samples and time; initial-condition stats use
        only the window start points.
        """
        if windows.ndim != 3 or windows.shape[2] != len(variables):
            raise ValueError(f"windows shape {windows.shape} does not match variables")
        if np.any(windows < 0.0):
            raise ValueError("fit requires nonnegative values; clamp first")
        xp = windows ** exponent
        ics = xp[:, 0, :]
        return cls(
            variables=list(variables),
            exponent=exponent,
            traj_min=xp.min(axis=(0, 1)),
            traj_max=xp.max(axis=(0, 1)),
            ic_min=ics.min(axis=0),
            ic_max=ics.max(axis=0),
        )

    def _bounds(self, which: str):
        if which == "trajectory":
            return self.traj_min, self.traj_max
        if which == "initial":
            return self.ic_min, self.ic_max
        raise ValueError(f"unknown stats selector '{which}'")

    def encode(self, x: np.ndarray, which: str = "trajectory") -> np.ndarray:
        """Map physical values ``[..., vars]`` to [-1, 1] in transformed space.

        Degenerate variables (max == min in training) encode to 0.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.variables):
            raise ValueError(f"last axis {x.shape[-1]} != {len(self.variables)} variables")
        if np.any(x < 0.0):
            raise ValueError("encode requires nonnegative values; clamp first")
        lo, hi = self._bounds(which)
        span = hi - lo
        safe = np.where(span == 0.0, 1.0, span)
        out = 2.0 * (x ** self.exponent - lo) / safe - 1.0
        return np.where(span == 0.0, 0.0, out)

    def decode(self, y: np.ndarray, which: str = "trajectory") -> np.ndarray:
        """Inverse of :meth:`encode`; negative transformed values clip to zero."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != len(self.variables):
            raise ValueError(f"last axis {y.shape[-1]} != {len(self.variables)} variables")
        lo, hi = self._bounds(which)
        xp = (y + 1.0) / 2.0 * (hi - lo) + lo
        neg = int(np.count_nonzero(xp < 0.0))
        if neg:
            logger.info("decode clipped %d negative transformed values", neg)
        return np.maximum(xp, 0.0) ** (1.0 / self.exponent)

    def to_json(self) -> dict:
        return {
            "variables": list(self.variables),
            "exponent": self.exponent,
            "trajectory": {"min": self.traj_min.tolist(), "max": self.traj_max.tolist()},
            "initial": {"min": self.ic_min.tolist(), "max": self.ic_max.tolist()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NormStats":
        return cls(
            variables=list(obj["variables"]),
            exponent=float(obj["exponent"]),
            traj_min=np.asarray(obj["trajectory"]["min"], dtype=np.float64),
            traj_max=np.asarray(obj["trajectory"]["max"], dtype=np.float64),
            ic_min=np.asarray(obj["initial"]["min"], dtype=np.float64),
            ic_max=np.asarray(obj["initial"]["max"], dtype=np.float64),
        )
