"""Integrator and mechanism checks against brute-force oracles."""

import numpy as np
import pytest

from chemssm.datagen import (
    generate_dataset,
    ignition_spec,
    mechanism_by_name,
    robertson_spec,
    sample_initial_conditions,
    simulate,
)
from chemssm.rosenbrock import IntegratorError, rosenbrock_solve

from helpers import implicit_euler

# Frozen from the implicit-Euler oracle (dt = 1e-6 and 5e-7, Richardson
# extrapolated); agrees with the widely tabulated reference solution.
ROBERTSON_T04 = np.array([0.985172114, 3.38639538e-05, 1.47940222e-02])


def test_robertson_matches_frozen_oracle_value():
    spec = robertson_spec()
    ys = rosenbrock_solve(spec.rhs(), spec.jacobian(), np.array([1.0, 0.0, 0.0]),
                          np.array([0.0, 0.2, 0.4]))
    assert abs(ys[2, 0] - ROBERTSON_T04[0]) < 1e-8
    assert abs(ys[2, 1] - ROBERTSON_T04[1]) < 1e-12
    assert abs(ys[2, 2] - ROBERTSON_T04[2]) < 1e-8


def test_robertson_matches_live_implicit_euler():
    spec = robertson_spec()
    f, jac = spec.rhs(), spec.jacobian()
    y0 = np.array([1.0, 0.0, 0.0])
    coarse = implicit_euler(f, jac, y0, 0.004, 1e-6)
    fine = implicit_euler(f, jac, y0, 0.004, 5e-7)
    ref = 2.0 * fine - coarse
    ys = rosenbrock_solve(f, jac, y0, np.array([0.0, 0.004]))
    assert np.max(np.abs(ys[1] - ref)) < 1e-9


def test_nonstiff_exponential_decay():
    grid = np.array([0.0, 0.25, 0.5, 1.0])
    ys = rosenbrock_solve(lambda y: -y, lambda y: np.array([[-1.0]]),
                          np.array([1.0]), grid)
    assert np.max(np.abs(ys[:, 0] - np.exp(-grid))) < 1e-8


def test_dense_grid_agrees_with_coarse_grid():
    spec = robertson_spec()
    y0 = np.array([1.0, 0.0, 0.0])
    dense = rosenbrock_solve(spec.rhs(), spec.jacobian(), y0,
                             np.linspace(0.0, 0.01, 101))
    coarse = rosenbrock_solve(spec.rhs(), spec.jacobian(), y0,
                              np.array([0.0, 0.01]))
    assert np.max(np.abs(dense[-1] - coarse[-1])) < 1e-9


def test_grid_validation_and_budget():
    spec = robertson_spec()
    y0 = np.array([1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        rosenbrock_solve(spec.rhs(), spec.jacobian(), y0, np.array([0.0]))
    with pytest.raises(ValueError):
        rosenbrock_solve(spec.rhs(), spec.jacobian(), y0, np.array([0.0, 0.0]))
    with pytest.raises(IntegratorError) as exc:
        rosenbrock_solve(spec.rhs(), spec.jacobian(), y0,
                         np.array([0.0, 0.4]), max_steps=3)
    assert exc.value.t_reached < 0.4


def _fd_jacobian(f, y, h=1e-7):
    dim = y.size
    jac = np.zeros((dim, dim))
    for j in range(dim):
        step = h * max(1.0, abs(y[j]))
        yp, ym = y.copy(), y.copy()
        yp[j] += step
        ym[j] -= step
        jac[:, j] = (f(yp) - f(ym)) / (2.0 * step)
    return jac


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(71)
    rob = robertson_spec()
    for _ in range(5):
        y = rng.uniform(0.0, 1.0, size=3)
        want = _fd_jacobian(rob.rhs(), y)
        got = rob.jacobian()(y)
        assert np.max(np.abs(got - want)) < 1e-4 * max(1.0, np.max(np.abs(want)))

    ign = ignition_spec()
    for _ in range(5):
        y = np.array([rng.uniform(700, 2000), rng.uniform(0.1, 1.0), rng.uniform(0, 0.5)])
        want = _fd_jacobian(ign.rhs(), y)
        got = ign.jacobian()(y)
        assert np.max(np.abs(got - want)) < 1e-4 * max(1.0, np.max(np.abs(want)))


def test_robertson_mass_conservation():
    spec = robertson_spec()
    traj = simulate(spec, np.array([0.7, 0.0, 0.3]), 1001, 1e-4)
    assert np.max(np.abs(traj.sum(axis=1) - 1.0)) < 1e-9
    assert np.all(traj >= 0.0)


def test_ignition_physics():
    spec = ignition_spec()
    q = spec.params["heat_rise"]
    for t0, yf0 in ((700.0, 0.9), (1300.0, 0.8)):
        traj = simulate(spec, np.array([t0, yf0, 1.0 - yf0]), 1001, 1e-4)
        temp = traj[:, 0]
        assert np.all(np.diff(temp) >= -1e-9)              # heat release only
        assert np.max(np.abs(traj[:, 1] + traj[:, 2] - 1.0)) < 1e-9
        assert temp[-1] <= t0 + q * yf0 + 1e-6             # adiabatic bound

    cold = simulate(spec, np.array([700.0, 0.9, 0.1]), 1001, 1e-4)
    hot = simulate(spec, np.array([1300.0, 0.9, 0.1]), 1001, 1e-4)
    assert (cold[-1, 0] - cold[0, 0]) / 1000 < 0.01        # flat regime
    assert hot[-1, 0] > 2000.0                             # ignited regime


def test_generate_dataset_deterministic():
    spec = robertson_spec()
    a = generate_dataset(spec, 3, 51, 1e-4, seed=5)
    b = generate_dataset(spec, 3, 51, 1e-4, seed=5)
    c = generate_dataset(spec, 3, 51, 1e-4, seed=6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.variables == ["y1", "y2", "y3"]
    assert a.species == ["y1", "y2", "y3"]
    assert a.meta["mechanism"] == "robertson"
    assert a.meta["seed"] == 5
    assert a.values.shape == (3, 51, 3)


def test_ic_sampling_ranges():
    spec = ignition_spec()
    rng = np.random.default_rng(72)
    ics = sample_initial_conditions(spec, 20, rng, ranges={"T": (800.0, 900.0)})
    assert np.all((ics[:, 0] >= 800.0) & (ics[:, 0] <= 900.0))
    assert np.max(np.abs(ics[:, 1] + ics[:, 2] - 1.0)) < 1e-15
    with pytest.raises(ValueError):
        sample_initial_conditions(spec, 2, rng, ranges={"bogus": (0, 1)})


def test_mechanism_registry():
    assert mechanism_by_name("robertson").name == "robertson"
    spec = mechanism_by_name("one-step-ignition", heat_rise=1000.0)
    assert spec.params["heat_rise"] == 1000.0
    with pytest.raises(ValueError):
        mechanism_by_name("unknown-mech")
    with pytest.raises(ValueError):
        robertson_spec(bogus=1.0)
    with pytest.raises(ValueError):
        simulate(robertson_spec(), np.array([1.0, 0.0, 0.0]), 1, 1e-4)
