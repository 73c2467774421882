import numpy as np
import pytest

from scripts.pvlab.core import RngSpec
from scripts.pvlab.discrete_oracle import (
    DiscreteChainSpec,
    conditional_error_discrete,
    cross_validate,
    enumerate_joint,
    flip_chain,
    random_spec,
    sample_discrete,
    sign_quantized_spec,
    theorem_check_discrete,
)
from scripts.pvlab.errors import ArgumentError, ResourceError
from scripts.pvlab.gauss_oracle import nested_contexts


def _deterministic(K=3, T=3):
    shift = np.eye(K)[np.roll(np.arange(K), 1)]      # each row a point mass
    return DiscreteChainSpec(K, T, np.full(K, 1 / K), tuple(shift for _ in range(T - 1)))


# ── chain validation ───────────────────────────────────────────────────────

def test_spec_rejects_bad_rows():
    with pytest.raises(ArgumentError):
        DiscreteChainSpec(2, 2, np.full(2, 0.5), (np.array([[0.5, 0.6], [0.5, 0.5]]),))


def test_spec_rejects_order_above_step():
    with pytest.raises(ArgumentError):
        DiscreteChainSpec(2, 3, np.full(2, 0.5), (np.full((2, 2, 2), 0.5), np.full((2, 2, 2), 0.5)))


def test_spec_label_lists_orders():
    spec = random_spec(3, 4, (1, 2, 2), np.random.default_rng(0))
    assert spec.orders == (1, 2, 2)
    assert spec.label == "discrete(1,2,2)"


# ── enumeration ────────────────────────────────────────────────────────────

def test_flip_chain_table():
    pmf = enumerate_joint(flip_chain(0.1))
    np.testing.assert_allclose(pmf.table, [[0.45, 0.05], [0.05, 0.45]], atol=1e-15)


def test_deterministic_chain_support():
    pmf = enumerate_joint(_deterministic())
    assert int(np.count_nonzero(pmf.flat)) == 3


@pytest.mark.parametrize("seed", range(5))
def test_table_normalized(seed):
    spec = random_spec(3, 4, (1, 2, 3), np.random.default_rng(seed))
    assert enumerate_joint(spec).flat.sum() == pytest.approx(1.0, abs=1e-10)


def test_size_bound():
    spec = flip_chain(0.1, T=24)
    with pytest.raises(ResourceError):
        enumerate_joint(spec)


# ── conditional error ──────────────────────────────────────────────────────

def test_flip_lstar_exact():
    pmf = enumerate_joint(flip_chain(0.1))
    assert abs(conditional_error_discrete(pmf, None, (1,)) - 0.09) <= 1e-12


def test_deterministic_chain_zero_error():
    pmf = enumerate_joint(_deterministic())
    assert conditional_error_discrete(pmf, None, (2,)) == pytest.approx(0.0, abs=1e-12)


def test_zero_probability_cells_are_skipped():
    kern = np.array([[1.0, 0.0], [0.0, 1.0]])
    spec = DiscreteChainSpec(2, 2, np.array([1.0, 0.0]), (kern,))
    assert conditional_error_discrete(enumerate_joint(spec), None, (1,)) == 0.0


def test_value_map_length_checked():
    with pytest.raises(ArgumentError):
        conditional_error_discrete(enumerate_joint(flip_chain(0.1)), (0.0, 1.0, 2.0), (1,))


# ── theorem check ──────────────────────────────────────────────────────────

@pytest.mark.parametrize("seed", range(10))
def test_first_order_specs_have_zero_gaps(seed):
    gen = np.random.default_rng(seed)
    spec = random_spec(3, 4, (1, 1, 1), gen)
    report = theorem_check_discrete(spec, None, nested_contexts(spec.T))
    assert all(abs(g) < 1e-12 for g in report.gaps)
    assert all(report.equality_flags)


def test_order_two_specs_mostly_strict():
    strict = 0
    for seed in range(50):
        spec = random_spec(3, 3, (1, 2), np.random.default_rng(seed))
        report = theorem_check_discrete(spec, None, nested_contexts(spec.T))
        assert report.monotone and report.identity_holds
        strict += report.gaps[0] > 1e-8
    assert strict >= 45


def test_single_context_report():
    report = theorem_check_discrete(flip_chain(0.2, T=3), None, [(2,)])
    assert len(report.errors) == 1 and report.gaps == []


def test_non_nested_rejected():
    with pytest.raises(ArgumentError):
        theorem_check_discrete(flip_chain(0.2, T=4), None, [(3,), (2, 1)])


def test_sign_quantized_chain_is_first_order():
    spec = sign_quantized_spec((0.5, 0.5, 0.3))
    report = theorem_check_discrete(spec, (-1.0, 1.0), nested_contexts(spec.T))
    assert all(report.equality_flags)
    # one-step correlation √0.5 between x_T and x_{T-1}
    assert spec.kernels[0][0, 0] == pytest.approx(0.5 + np.arcsin(np.sqrt(0.5)) / np.pi)


# ── sampling and cross-validation ──────────────────────────────────────────

def test_sampling_deterministic():
    spec = random_spec(3, 4, (1, 2, 1), np.random.default_rng(1))
    a = sample_discrete(spec, 500, RngSpec(3))
    b = sample_discrete(spec, 500, RngSpec(3))
    assert a.shape == (500, 4)
    np.testing.assert_array_equal(a, b)


def test_sampling_marginal_matches_source():
    spec = random_spec(3, 2, (1,), np.random.default_rng(2))
    samples = sample_discrete(spec, 100_000, RngSpec(5))
    freq = np.bincount(samples[:, 0], minlength=3) / 100_000
    np.testing.assert_allclose(freq, spec.source_pmf, atol=0.01)


def test_cross_validate_flip_chain():
    result = cross_validate(flip_chain(0.1), 100_000, RngSpec(7))
    assert result.passed
    assert result.exact_lstar == pytest.approx(0.09, abs=1e-12)


def test_cross_validate_deterministic_chain():
    result = cross_validate(_deterministic(), 10_000, RngSpec(1))
    assert result.empirical_mse == pytest.approx(0.0, abs=1e-12)


def test_cross_validate_needs_enough_samples():
    with pytest.raises(ArgumentError):
        cross_validate(flip_chain(0.1), 100, RngSpec(0))


def test_cross_validate_repeatable():
    a = cross_validate(flip_chain(0.3, T=3), 10_000, RngSpec(2), context=(2, 1))
    b = cross_validate(flip_chain(0.3, T=3), 10_000, RngSpec(2), context=(2, 1))
    assert a == b
