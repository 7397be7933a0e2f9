"""Desk-scale stiff mechanisms and trajectory generation.

Two mechanisms are built in:

* ``robertson``: the classic three-species autocatalytic benchmark; all three
  mass fractions form a conserved simplex block.
* ``one-step-ignition``: single irreversible Arrhenius reaction fuel ->
  product with temperature feedback; cold initial conditions stay frozen over
  the horizon while hot ones ignite, giving two dynamical regimes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TrajectoryDataset
from .rosenbrock import rosenbrock_solve

__all__ = [
    "MechanismSpec",
    "robertson_spec",
    "ignition_spec",
    "mechanism_by_name",
    "simulate",
    "sample_initial_conditions",
    "generate_dataset",
]


@dataclass(frozen=True)
class MechanismSpec:
    name: str
    variables: tuple[str, ...]
    units: dict[str, str]
    species: tuple[str, ...]
    params: dict[str, float]
    ic_ranges: dict[str, tuple[float, float]]

    def rhs(self):
        return _RHS[self.name](self.params)

    def jacobian(self):
        return _JAC[self.name](self.params)

    def sample_ic(self, rng, ranges=None):
        return _SAMPLERS[self.name](self.params, _merge(self.ic_ranges, ranges), rng)


def _merge(base: dict, override) -> dict:
    out = dict(base)
    if override:
        unknown = [k for k in override if k not in base]
        if unknown:
            raise ValueError(f"unknown initial-condition ranges: {unknown}")
        out.update(override)
    return out


# -- Robertson --------------------------------------------------------------


def robertson_spec(**params) -> MechanismSpec:
    p = {"k1": 0.04, "k2": 3e7, "k3": 1e4}
    unknown = [k for k in params if k not in p]
    if unknown:
        raise ValueError(f"unknown robertson parameters: {unknown}")
    p.update(params)
    return MechanismSpec(
        name="robertson",
        variables=("y1", "y2", "y3"),
        units={"y1": "-", "y2": "-", "y3": "-"},
        species=("y1", "y2", "y3"),
        params=p,
        ic_ranges={"y1": (0.5, 1.0)},
    )


def _robertson_rhs(p):
    k1, k2, k3 = p["k1"], p["k2"], p["k3"]

    def f(y):
        r1 = k1 * y[0]
        r2 = k2 * y[1] * y[1]
        r3 = k3 * y[1] * y[2]
        return np.array([-r1 + r3, r1 - r3 - r2, r2])

    return f


def _robertson_jac(p):
    k1, k2, k3 = p["k1"], p["k2"], p["k3"]

    def jac(y):
        return np.array([
            [-k1, k3 * y[2], k3 * y[1]],
            [k1, -k3 * y[2] - 2.0 * k2 * y[1], -k3 * y[1]],
            [0.0, 2.0 * k2 * y[1], 0.0],
        ])

    return jac


def _robertson_sample(p, ranges, rng):
    lo, hi = ranges["y1"]
    y1 = rng.uniform(lo, hi)
    # start on the simplex with nothing in the intermediate
    return np.array([y1, 0.0, 1.0 - y1])


# -- one-step ignition ------------------------------------------------------


def ignition_spec(**params) -> MechanismSpec:
    # rate = prefactor * Yf * exp(-activation_temp / T); dT/dt = heat_rise * rate
    p = {"prefactor": 1e8, "activation_temp": 2e4, "heat_rise": 1300.0}
    unknown = [k for k in params if k not in p]
    if unknown:
        raise ValueError(f"unknown ignition parameters: {unknown}")
    p.update(params)
    return MechanismSpec(
        name="one-step-ignition",
        variables=("T", "Yf", "Yp"),
        units={"T": "K", "Yf": "-", "Yp": "-"},
        species=("Yf", "Yp"),
        params=p,
        ic_ranges={"T": (700.0, 1500.0), "Yf": (0.7, 1.0)},
    )


def _ignition_rhs(p):
    a, ta, q = p["prefactor"], p["activation_temp"], p["heat_rise"]

    def f(y):
        rate = a * y[1] * np.exp(-ta / y[0])
        return np.array([q * rate, -rate, rate])

    return f


def _ignition_jac(p):
    a, ta, q = p["prefactor"], p["activation_temp"], p["heat_rise"]

    def jac(y):
        ex = np.exp(-ta / y[0])
        rate = a * y[1] * ex
        d_t = rate * ta / (y[0] * y[0])
        d_yf = a * ex
        return np.array([
            [q * d_t, q * d_yf, 0.0],
            [-d_t, -d_yf, 0.0],
            [d_t, d_yf, 0.0],
        ])

    return jac


def _ignition_sample(p, ranges, rng):
    t0 = rng.uniform(*ranges["T"])
    yf = rng.uniform(*ranges["Yf"])
    return np.array([t0, yf, 1.0 - yf])


_RHS = {"robertson": _robertson_rhs, "one-step-ignition": _ignition_rhs}
_JAC = {"robertson": _robertson_jac, "one-step-ignition": _ignition_jac}
_SAMPLERS = {"robertson": _robertson_sample, "one-step-ignition": _ignition_sample}


def mechanism_by_name(name: str, **params) -> MechanismSpec:
    if name == "robertson":
        return robertson_spec(**params)
    if name == "one-step-ignition":
        return ignition_spec(**params)
    raise ValueError(f"unknown mechanism '{name}'")


# -- generation -------------------------------------------------------------


def simulate(spec: MechanismSpec, y0, n_t: int, dt: float,
             rtol: float = 1e-8, atol: float = 1e-10) -> np.ndarray:
    """One trajectory on the uniform grid, solver noise clamped at zero.

    Temperature is not a mass fraction, so the clamp only matters for trace
    species dipping a hair below zero.
    """
    if n_t < 2:
        raise ValueError("n_t must be >= 2")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    grid = np.arange(n_t, dtype=np.float64) * dt
    ys = rosenbrock_solve(spec.rhs(), spec.jacobian(), y0, grid, rtol=rtol, atol=atol)
    return np.maximum(ys, 0.0)


def sample_initial_conditions(spec: MechanismSpec, n: int, rng, ranges=None) -> np.ndarray:
    return np.stack([spec.sample_ic(rng, ranges) for _ in range(n)])


def generate_dataset(spec: MechanismSpec, n_samples: int, n_t: int, dt: float,
                     seed: int, split: str = "train", ranges=None,
                     rtol: float = 1e-8, atol: float = 1e-10) -> TrajectoryDataset:
    """Sample initial conditions and integrate them all; fully seeded."""
    rng = np.random.default_rng(seed)
    ics = sample_initial_conditions(spec, n_samples, rng, ranges)
    values = np.empty((n_samples, n_t, len(spec.variables)), dtype=np.float64)
    for i, ic in enumerate(ics):
        values[i] = simulate(spec, ic, n_t, dt, rtol=rtol, atol=atol)
    return TrajectoryDataset(
        values=values,
        variables=list(spec.variables),
        dt=dt,
        units=dict(spec.units),
        species=list(spec.species),
        meta={
            "mechanism": spec.name,
            "params": dict(spec.params),
            "seed": seed,
            "split": split,
            "rtol": rtol,
            "atol": atol,
            "ranges": {k: list(v) for k, v in _merge(spec.ic_ranges, ranges).items()},
        },
    )
