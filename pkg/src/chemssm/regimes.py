"""Temperature-based regime split for ignition-type datasets.

Trajectories with a near-flat temperature profile never ignite inside the
horizon.  The routing threshold tau is the largest initial temperature among
those flat trajectories: initial conditions at or below tau go to the
below-threshold model, the rest to the above-threshold model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

__all__ = [
    "NoFlatRegimeError",
    "RegimeThreshold",
    "RegimeModelPair",
    "compute_tau",
    "split_by_threshold",
]


class NoFlatRegimeError(ValueError):
    """No trajectory qualifies as flat at the given slope tolerance."""


@dataclass(frozen=True)
class RegimeThreshold:
    tau: float
    epsilon: float
    n_time: int

    def to_json(self) -> dict:
        return {"tau": self.tau, "epsilon": self.epsilon, "n_time": self.n_time}

    @classmethod
    def from_json(cls, obj: dict) -> "RegimeThreshold":
        return cls(tau=float(obj["tau"]), epsilon=float(obj["epsilon"]),
                   n_time=int(obj["n_time"]))


def compute_tau(temps: np.ndarray, epsilon: float) -> RegimeThreshold:
    """Threshold from temperature profiles ``[n, n_time]``.

    A profile is flat when its mean per-step rise ``(T_end - T_start)/(n_time - 1)``
    stays below ``epsilon``; tau is the largest initial temperature of the
    flat set.
    """
    temps = np.asarray(temps, dtype=np.float64)
    if temps.ndim != 2 or temps.shape[1] < 2:
        raise ValueError(f"expected [n, n_time>=2], got shape {temps.shape}")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    n_time = temps.shape[1]
    slopes = (temps[:, -1] - temps[:, 0]) / (n_time - 1)
    flat = slopes < epsilon
    if not np.any(flat):
        raise NoFlatRegimeError(
            f"no flat profile at epsilon={epsilon}; smallest slope {slopes.min():.3e}"
        )
    return RegimeThreshold(tau=float(temps[flat, 0].max()), epsilon=float(epsilon),
                           n_time=int(n_time))


def split_by_threshold(t0: np.ndarray, threshold: RegimeThreshold):
    """Disjoint masks (below, above); the boundary value routes below."""
    t0 = np.asarray(t0, dtype=np.float64)
    below = t0 <= threshold.tau
    return below, ~below


@dataclass
class RegimeModelPair:
    """Two models plus the threshold that routes between them."""

    below: Any
    above: Any
    threshold: RegimeThreshold

    def route(self, t0: float) -> Any:
        return self.below if t0 <= self.threshold.tau else self.above
