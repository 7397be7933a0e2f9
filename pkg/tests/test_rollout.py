"""Rollout drivers: plans, recursive chaining, oracle fixed point, latent path."""

import numpy as np
import pytest

from chemssm.model import ModelSpec, build_model, prepare_windows
from chemssm.pipeline import NormStats, WindowPlan, time_decompose
from chemssm.rollout import (
    RolloutError,
    RolloutPlan,
    latent_recursive_rollout,
    predict_windows,
    recursive_rollout,
)
from chemssm.ssm import SsmConfig, init_backbone

from helpers import GroundTruthOracle
from test_model import ARCH, synthetic_composition


def smooth_truth(n_t=31, p=2, seed=0):
    """A smooth positive trajectory long enough for a few windows."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_t)[:, None]
    freq = rng.uniform(1.0, 3.0, size=(1, p))
    phase = rng.uniform(0.0, np.pi, size=(1, p))
    return 1.0 + 0.5 * np.sin(2.0 * np.pi * freq * t + phase)


def fitted_stats(truth, width, segments):
    plan = WindowPlan(width=width, segments=segments)
    windows = time_decompose(truth[None], plan)
    names = [f"v{i}" for i in range(truth.shape[1])]
    return NormStats.fit(windows, names), windows


def trained_like_model(seed=0, variant="standalone", **spec_over):
    values, variables, species = synthetic_composition(n=4, t=21, seed=seed)
    plan = WindowPlan(width=11, segments=2)
    spec = ModelSpec(variant=variant, arch=dict(ARCH), **spec_over)
    prep = prepare_windows(values, variables, species, spec, plan)
    model = build_model(prep, spec, variables, species, seed=seed)
    return model, values


def test_plan_validation_and_geometry():
    with pytest.raises(ValueError):
        RolloutPlan(())
    with pytest.raises(ValueError):
        RolloutPlan((11, 1))
    plan = RolloutPlan((101, 76, 31))
    assert plan.total == 208
    assert plan.starts == (0, 100, 175)


def test_predict_windows_width_one():
    model, values = trained_like_model()
    codes = model.ic_codes(values[:2, 0, :])
    out = predict_windows(codes, model, 1)
    assert out.shape == (2, 1, 4)
    # the backbone is causal, so t = 0 does not depend on the width (in exact
    # arithmetic; BLAS may pick shape-dependent kernels, hence the tolerance)
    full = predict_windows(codes, model, 5)
    assert np.allclose(out[:, 0], full[:, 0], rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        predict_windows(codes, model, 0)
    with pytest.raises(ValueError):
        predict_windows(codes[0], model, 3)


def test_oracle_rollout_is_time_decomposition():
    truth = smooth_truth()
    stats, windows = fitted_stats(truth, width=11, segments=3)
    plan = RolloutPlan((11, 11, 11))
    oracle = GroundTruthOracle(truth, stats, plan.starts)
    ic0 = oracle.ic_codes(truth[:1])[0]
    result = recursive_rollout(ic0, oracle, plan, truth=truth)
    assert result.total == 33
    # identical to the time-decomposed path at every index
    want_norm = stats.encode(windows, "trajectory").reshape(33, 2)
    assert np.array_equal(result.values_norm, want_norm)
    want_phys = stats.decode(stats.encode(windows, "trajectory"), "trajectory").reshape(33, 2)
    assert np.array_equal(result.values, want_phys)
    assert np.max(np.abs(result.values - windows.reshape(33, 2))) < 1e-9
    # the oracle is exact, so every per-window error is ~0 and no seam jumps
    for rep in result.reports:
        assert rep.rel_l2 < 1e-7
        assert rep.seed_jump < 1e-9


def test_adaptive_plan_lengths_and_starts():
    plan = RolloutPlan((101, 76, 31))
    truth = smooth_truth(n_t=plan.starts[-1] + 31, p=2)
    stats, _ = fitted_stats(truth, width=11, segments=3)
    oracle = GroundTruthOracle(truth, stats, plan.starts)
    ic0 = oracle.ic_codes(truth[:1])[0]
    result = recursive_rollout(ic0, oracle, plan, truth=truth)
    assert result.total == 208
    assert [r.length for r in result.reports] == [101, 76, 31]
    assert [r.start for r in result.reports] == [0, 100, 175]
    assert result.values_norm.shape == (208, 2)


def test_rollout_report_with_untrained_model():
    model, values = trained_like_model(seed=5)
    truth = values[0]  # [21, 4]
    plan = RolloutPlan((11, 11))
    ic0 = model.ic_codes(truth[:1])[0]
    result = recursive_rollout(ic0, model, plan, truth=truth, jump_threshold=0.0)
    assert result.total == 22
    assert result.reports[0].seed_jump == 0.0
    assert not result.reports[0].flagged
    # an untrained model will not hit the seam exactly
    assert result.reports[1].seed_jump > 0.0
    assert result.reports[1].flagged
    assert all(np.isfinite(r.rel_l2) for r in result.reports)


def test_teacher_forcing_seeds_from_truth():
    model, values = trained_like_model(seed=6)
    truth = values[0]
    plan = RolloutPlan((11, 11))
    ic0 = model.ic_codes(truth[:1])[0]
    forced = recursive_rollout(ic0, model, plan, truth=truth, teacher_forcing=True)
    # window 1 must match a fresh prediction from the true boundary point
    codes = model.ic_codes(truth[plan.starts[1]][None])
    want = model.predict_norm(codes, 11)[0]
    assert np.array_equal(forced.values_norm[11:], want)
    with pytest.raises(ValueError):
        recursive_rollout(ic0, model, plan, teacher_forcing=True)


def test_non_finite_prediction_names_window():
    model, values = trained_like_model(seed=7)

    class Wrapped:
        def __init__(self, inner):
            self.inner = inner
            self.calls = 0
            self.pca = None

        def ic_codes(self, ics):
            return self.inner.ic_codes(ics)

        def decode_norm(self, pred):
            return self.inner.decode_norm(pred)

        def predict_norm(self, codes, width):
            out = self.inner.predict_norm(codes, width)
            if self.calls == 1:
                out = out.copy()
                out[0, 0, 0] = np.inf
            self.calls += 1
            return out

    plan = RolloutPlan((11, 11, 11))
    # reuse a longer trajectory so the plan fits
    truth = np.tile(values[0], (2, 1))[:31]
    ic0 = model.ic_codes(truth[:1])[0]
    with pytest.raises(RolloutError) as err:
        recursive_rollout(ic0, Wrapped(model), plan)
    assert err.value.window_index == 1


def test_truth_too_short_rejected():
    model, values = trained_like_model()
    plan = RolloutPlan((11, 11))
    ic0 = model.ic_codes(values[0, :1])[0]
    with pytest.raises(ValueError):
        recursive_rollout(ic0, model, plan, truth=values[0][:15])


def test_latent_alias_requires_basis():
    model, values = trained_like_model()
    plan = RolloutPlan((11,))
    ic0 = model.ic_codes(values[0, :1])[0]
    with pytest.raises(ValueError):
        latent_recursive_rollout(ic0, model, plan)


def test_full_rank_latent_composition_matches_standalone():
    # Build a latent model that is algebraically the standalone model with the
    # orthogonal projection and range scaling absorbed into its input layer;
    # the two rollouts must then agree to rounding.
    full, values = trained_like_model(seed=8)
    spec = ModelSpec(variant="latent", latent_dim=4, arch=dict(ARCH))
    plan = WindowPlan(width=11, segments=2)
    prep = prepare_windows(values, full.variables, full.species, spec, plan)
    latent = build_model(prep, spec, full.variables, full.species, seed=8)
    assert latent.pca.n_latent == 4

    basis = latent.pca
    span = basis.latent_max - basis.latent_min
    assert np.all(span > 0.0)
    s = 2.0 / span
    r0 = -(2.0 * basis.latent_min / span + 1.0)
    v = basis.components
    # l = (e - mean) V s + r0, so l W' + b' == e W + b with the choices below
    w_lat = ((1.0 / s)[:, None] * v.T) @ full.params.in_w.data
    offset = r0 - (basis.mean @ v) * s
    b_lat = full.params.in_b.data - offset @ w_lat
    for (_, t_lat), (_, t_full) in zip(latent.params.iter_params(),
                                       full.params.iter_params()):
        t_lat.data = t_full.data.copy()
    latent.params.in_w.data = w_lat
    latent.params.in_b.data = b_lat

    truth = values[0]
    rollout_plan = RolloutPlan((11, 11))
    res_full = recursive_rollout(full.ic_codes(truth[:1])[0], full, rollout_plan)
    res_lat = latent_recursive_rollout(latent.ic_codes(truth[:1])[0], latent,
                                       rollout_plan)
    assert res_lat.total == res_full.total == 22
    assert np.max(np.abs(res_lat.values - res_full.values)) < 1e-10


def test_latent_one_window_equals_predict_windows():
    model, values = trained_like_model(variant="latent", latent_dim=2, seed=9)
    truth = values[0]
    plan = RolloutPlan((11,))
    ic0 = model.ic_codes(truth[:1])[0]
    res = latent_recursive_rollout(ic0, model, plan)
    want = predict_windows(ic0[None], model, 11)[0]
    assert np.array_equal(res.values_norm, want)
