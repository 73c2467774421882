import math

import numpy as np
import pytest

from scripts.pvlab.augment import MarkovOrder, NoiseSchedule
from scripts.pvlab.core import RngSpec
from scripts.pvlab.discrete_oracle import flip_chain
from scripts.pvlab.errors import ArgumentError, ConditioningError, TrainingError
from scripts.pvlab.gauss_oracle import (
    ChainKind,
    GaussianSource,
    build_joint,
    conditional_error,
    nested_contexts,
    optimal_predictor,
    sample_chain,
)
from scripts.pvlab.predictor import (
    ContextDataset,
    GenConfig,
    LinearPredictor,
    StepPredictor,
    TrainConfig,
    autoregressive_generate,
    compare_context_sizes,
    convergence_curve,
    evaluate,
    fit_linear,
    fit_mlp,
    fit_shared_predictor,
    fit_step_predictors,
    gradient_check,
    init_mlp,
    oracle_step_predictors,
    teacher_forcing_gap,
)

N = 100_000


def _joint(order, betas):
    return build_joint(GaussianSource.scalar(1.0), ChainKind(order, NoiseSchedule(tuple(betas))))


# ── dataset ────────────────────────────────────────────────────────────────

def test_dataset_columns_most_recent_first():
    samples = np.arange(2 * 4 * 1, dtype=float).reshape(2, 4, 1)
    data = ContextDataset.from_samples(samples, [1, 3])
    np.testing.assert_array_equal(data.X[0], [samples[0, 1, 0], samples[0, 3, 0]])
    np.testing.assert_array_equal(data.Y[:, 0], samples[:, 0, 0])


def test_dataset_shape_mismatch():
    with pytest.raises(ArgumentError):
        ContextDataset(np.zeros((5, 3)), np.zeros((5, 2)), 2)


# ── OLS ────────────────────────────────────────────────────────────────────

def test_ols_recovers_selector():
    gen = np.random.default_rng(0)
    X = gen.standard_normal((500, 2))
    data = ContextDataset(X, X[:, :1], 2)
    model = fit_linear(data)
    np.testing.assert_allclose(model.A, [[1.0, 0.0]], atol=1e-10)
    assert evaluate(model, data).mse == pytest.approx(0.0, abs=1e-18)


def test_ols_population_coefficient():
    joint = _joint(MarkovOrder.FIRST, [0.5])
    data = ContextDataset.from_samples(sample_chain(joint, N, RngSpec(1)), [1])
    model = fit_linear(data)
    assert float(model.A[0, 0]) == pytest.approx(math.sqrt(0.5), rel=0.02)


def test_ols_permutation_invariant():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5])
    data = ContextDataset.from_samples(sample_chain(joint, 5000, RngSpec(11)), [2, 1])
    order = np.random.default_rng(0).permutation(5000)
    a = fit_linear(data)
    b = fit_linear(ContextDataset(data.X[order], data.Y[order], data.k))
    np.testing.assert_allclose(a.A, b.A, rtol=0, atol=1e-10)
    np.testing.assert_allclose(a.b, b.b, rtol=0, atol=1e-10)


def test_ols_underdetermined_raises():
    with pytest.raises(ConditioningError) as info:
        fit_linear(ContextDataset(np.array([[1.0, 2.0], [3.0, 5.0]]), np.array([1.0, 2.0]), 2))
    assert info.value.eigenvalue <= 1e-9


def test_ridge_handles_underdetermined():
    model = fit_linear(ContextDataset(np.array([[1.0, 2.0], [3.0, 5.0]]), np.array([1.0, 2.0]), 2), ridge=1e-3)
    assert np.all(np.isfinite(model.A))


def test_ridge_must_be_non_negative():
    with pytest.raises(ArgumentError):
        fit_linear(ContextDataset(np.ones((3, 1)), np.ones(3), 1), ridge=-1.0)


# ── MLP ────────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("seed", range(3))
def test_gradient_check_passes(seed):
    gen = np.random.default_rng(seed)
    model = init_mlp(2, 2, 8, gen)
    X, Y = gen.standard_normal((64, 4)), gen.standard_normal((64, 2))
    assert gradient_check(model, X, Y, gen) < 1e-4


def test_zero_epochs_returns_initialization():
    gen = np.random.default_rng(3)
    data = ContextDataset(gen.standard_normal((32, 2)), gen.standard_normal(32), 2)
    model = fit_mlp(data, TrainConfig(width=6, epochs=0, seed=5, grad_check=False))
    init = init_mlp(2, 1, 6, RngSpec(5, 0).generator())
    expected = np.tanh(data.X @ init.W1.T + init.b1) @ init.W2.T + init.b2
    np.testing.assert_allclose(model.predict(data.X), expected, atol=1e-12)


def test_mlp_close_to_linear_on_linear_truth():
    gen = np.random.default_rng(4)
    X = gen.standard_normal((5000, 1))
    Y = 0.5 * X + 0.5 * gen.standard_normal((5000, 1))
    train, test = ContextDataset(X, Y, 1).split(4000)
    linear = evaluate(fit_linear(train), test).mse
    mlp = evaluate(fit_mlp(train, TrainConfig(width=16, step_size=0.05, epochs=100, batch_size=128, seed=1)), test).mse
    assert mlp == pytest.approx(linear, rel=0.05)


def test_mlp_divergence_raises_with_trace():
    gen = np.random.default_rng(5)
    X = gen.standard_normal((256, 1))
    data = ContextDataset(X, 3 * X, 1)
    with pytest.raises(TrainingError) as info:
        fit_mlp(data, TrainConfig(width=8, step_size=100.0, epochs=20, batch_size=16, grad_check=False))
    assert len(info.value.trace) >= 1


# ── evaluate / compare ─────────────────────────────────────────────────────

def test_evaluate_identity_sentinel():
    X = np.random.default_rng(6).standard_normal((10, 1))
    report = evaluate(LinearPredictor(1, np.eye(1), np.zeros(1)), ContextDataset(X, X, 1))
    assert report.mse == 0.0
    assert report.psnr_db == float("inf")


def test_evaluate_optimal_first_order():
    joint = _joint(MarkovOrder.FIRST, [0.5])
    data = ContextDataset.from_samples(sample_chain(joint, N, RngSpec(2)), [1])
    report = evaluate(LinearPredictor.from_conditional(optimal_predictor(joint, [1])), data)
    assert report.mse == pytest.approx(0.5, rel=0.02)


def test_evaluate_rejects_wrong_context_size():
    X = np.zeros((4, 2))
    with pytest.raises(ArgumentError):
        evaluate(LinearPredictor(1, np.eye(1), np.zeros(1)), ContextDataset(X, np.zeros(4), 2))


def test_compare_high_order_pinned():
    cmp = compare_context_sizes(_joint(MarkovOrder.HIGH, [0.5, 0.5]), 1, 2, N, N, RngSpec(3))
    assert cmp.small.mse == pytest.approx(0.5, rel=0.02)
    assert cmp.large.mse == pytest.approx(4 / 9, rel=0.02)
    assert cmp.strictly_better
    assert cmp.oracle_gap == pytest.approx(0.5 - 4 / 9, abs=1e-9)


def test_compare_first_order_within_slack():
    cmp = compare_context_sizes(_joint(MarkovOrder.FIRST, [0.5, 0.5]), 1, 2, N, N, RngSpec(4))
    assert cmp.within_slack
    assert cmp.oracle_gap == pytest.approx(0.0, abs=1e-10)


def test_compare_same_size_is_exactly_zero():
    cmp = compare_context_sizes(_joint(MarkovOrder.HIGH, [0.5, 0.5]), 2, 2, 1000, 1000, RngSpec(5))
    assert cmp.difference == 0.0


def test_compare_discrete_first_order():
    cmp = compare_context_sizes(flip_chain(0.2, T=3), 1, 2, 20_000, 20_000, RngSpec(6))
    assert cmp.within_slack
    assert cmp.small.oracle_lstar == pytest.approx(cmp.large.oracle_lstar, abs=1e-12)


def test_compare_rejects_bad_sizes():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5])
    with pytest.raises(ArgumentError):
        compare_context_sizes(joint, 2, 1, 100, 100, RngSpec(0))
    with pytest.raises(ArgumentError):
        compare_context_sizes(joint, 1, 3, 100, 100, RngSpec(0))


def test_convergence_curve_rows():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5])
    rows = convergence_curve(joint, (2, 1), [1000, 100_000], RngSpec(7))
    assert [r["n"] for r in rows] == [1000, 100_000]
    assert rows[-1]["abs_err"] < 0.02
    assert all(r["lstar"] == pytest.approx(4 / 9, abs=1e-9) for r in rows)


# ── autoregressive generation ──────────────────────────────────────────────

def test_teacher_forced_oracle_matches_lstar():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5, 0.5])
    reference = sample_chain(joint, N, RngSpec(8))
    config = GenConfig(context_window=2, n_videos=N, residual_std=0.0, teacher_forced=True)
    result = autoregressive_generate(oracle_step_predictors(joint, 2), reference, config, RngSpec(9))
    lstar = conditional_error(joint, nested_contexts(joint.T, 2)[-1])
    assert result.report.mse == pytest.approx(lstar, rel=0.02)
    assert result.report.teacher_forced is True


def test_free_running_oracle_keeps_source_variance():
    # each step starts from a context with the true joint law, so the
    # generated last frame has the source variance exactly in population
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5, 0.5])
    reference = sample_chain(joint, N, RngSpec(14))
    config = GenConfig(context_window=2, n_videos=N)
    result = autoregressive_generate(oracle_step_predictors(joint, 2), reference, config, RngSpec(15))
    assert float(np.var(result.samples[:, 0, 0])) == pytest.approx(1.0, rel=0.03)


def test_single_video_has_no_covariance_gap():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5, 0.5])
    reference = sample_chain(joint, 1, RngSpec(16))
    result = autoregressive_generate(oracle_step_predictors(joint, 2), reference, GenConfig(2, 1), RngSpec(17))
    assert result.report.cov_frobenius_gap is None
    assert math.isfinite(result.report.mse)


def test_copy_chain_identity_predictors():
    joint = _joint(MarkovOrder.FIRST, [0.0, 0.0, 0.0])
    reference = sample_chain(joint, 50, RngSpec(1))
    identity = StepPredictor(0, (1,), LinearPredictor(1, np.eye(1), np.zeros(1)), 0.0)
    result = autoregressive_generate(identity, reference, GenConfig(1, 50, residual_std=0.0), RngSpec(2))
    np.testing.assert_array_equal(result.samples[:, 0, :], reference[:, -1, :])
    assert result.report.mse == 0.0


def test_missing_step_predictor():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5, 0.5])
    steps = oracle_step_predictors(joint, 2)
    del steps[joint.T]
    with pytest.raises(ArgumentError):
        autoregressive_generate(steps, sample_chain(joint, 10, RngSpec(0)), GenConfig(2, 10), RngSpec(1))


def test_window_must_leave_a_frame():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5])
    with pytest.raises(ArgumentError):
        autoregressive_generate({}, sample_chain(joint, 10, RngSpec(0)), GenConfig(3, 10), RngSpec(1))


def test_free_running_is_deterministic_and_noisy():
    joint = _joint(MarkovOrder.HIGH, [0.4, 0.4, 0.4])
    reference = sample_chain(joint, 2000, RngSpec(3))
    steps = oracle_step_predictors(joint, 2)
    a = autoregressive_generate(steps, reference, GenConfig(2, 2000), RngSpec(4))
    b = autoregressive_generate(steps, reference, GenConfig(2, 2000), RngSpec(4))
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.report.teacher_forced is False
    assert math.isfinite(a.report.cov_frobenius_gap)
    assert not np.array_equal(a.samples[:, 0, :], b.samples[:, 1, :])


def test_fitted_and_shared_predictors():
    joint = _joint(MarkovOrder.HIGH, [0.3, 0.3, 0.3, 0.3])
    samples = sample_chain(joint, 20_000, RngSpec(5))
    steps = fit_step_predictors(samples, 2, RngSpec(6))
    assert sorted(steps) == [3, 4, 5]
    assert all(s.residual_std > 0 for s in steps.values())
    shared = fit_shared_predictor(samples, 2, RngSpec(6))
    assert shared.context == (1, 2)
    result = autoregressive_generate(shared, samples, GenConfig(2, 1000), RngSpec(7))
    assert result.samples.shape == (1000, 5, 1)


def test_teacher_forcing_gap_reports_both_modes():
    joint = _joint(MarkovOrder.HIGH, [0.5, 0.5, 0.5])
    reference = sample_chain(joint, 5000, RngSpec(10))
    forced, free = teacher_forcing_gap(oracle_step_predictors(joint, 2), reference, GenConfig(2, 5000), RngSpec(11))
    assert forced.teacher_forced is True and free.teacher_forced is False
    assert forced.mse <= free.mse


def test_generated_videos_have_target_last():
    joint = _joint(MarkovOrder.FIRST, [0.2, 0.2])
    reference = sample_chain(joint, 4, RngSpec(0))
    result = autoregressive_generate(oracle_step_predictors(joint, 1), reference, GenConfig(1, 4), RngSpec(1))
    videos = result.to_videos((1, 1, 1))
    assert len(videos) == 4 and len(videos[0]) == 3
    assert float(videos[0].target.data[0, 0, 0]) == pytest.approx(float(result.samples[0, 0, 0]), rel=1e-6)
