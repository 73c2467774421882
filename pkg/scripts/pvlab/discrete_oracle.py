"""
discrete_oracle.py - pvlab
Brute-force minimum reconstruction errors for small finite-alphabet chains.

The joint table has one axis per frame, x_T on axis 0 and x_{T-t} on axis t,
so the flattened table is mixed-radix with x_T most significant. Nothing here
shares code with the Gaussian oracle; the two are meant to check each other.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import RngSpec
from .errors import ArgumentError, ResourceError
from .reports import OracleReport

logger = logging.getLogger("pvlab.discrete_oracle")

MAX_TABLE_SIZE  = 10**7
ROW_SUM_TOL     = 1e-12
EQUALITY_TOL    = 1e-12
MONOTONE_TOL    = 1e-12
IDENTITY_TOL    = 1e-12
MIN_CV_SAMPLES  = 10**4


# ══════════════════════════════════════════════════════════════════════════════
# Types
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class DiscreteChainSpec:
    """
    kernels[t-1] is p(x_{T-t} | x_{T-t+1}, ..., x_{T-t+m}) with m = order of step t.
    Its axes are (x_{T-t+1}, ..., x_{T-t+m}, x_{T-t}); the last axis sums to 1.
    """
    K: int
    T: int
    source_pmf: np.ndarray
    kernels: tuple

    def __post_init__(self):
        if self.K < 2 or self.T < 2:
            raise ArgumentError(f"need K >= 2 and T >= 2, got K={self.K}, T={self.T}")
        source = np.asarray(self.source_pmf, dtype=np.float64)
        if source.shape != (self.K,) or np.any(source < 0) or abs(source.sum() - 1) > ROW_SUM_TOL:
            raise ArgumentError("source_pmf must be a length-K probability vector")
        kernels = tuple(np.asarray(k, dtype=np.float64) for k in self.kernels)
        if len(kernels) != self.T - 1:
            raise ArgumentError(f"need {self.T - 1} kernels, got {len(kernels)}")
        for t, kern in enumerate(kernels, start=1):
            m = kern.ndim - 1
            if not 1 <= m <= t:
                raise ArgumentError(f"step {t} kernel has order {m}, allowed 1..{t}")
            if kern.shape != (self.K,) * (m + 1):
                raise ArgumentError(f"step {t} kernel shape {kern.shape} does not match K={self.K}")
            if np.any(kern < 0):
                raise ArgumentError(f"step {t} kernel has negative entries")
            if np.max(np.abs(kern.sum(axis=-1) - 1.0)) > ROW_SUM_TOL:
                raise ArgumentError(f"step {t} kernel rows do not sum to 1")
        object.__setattr__(self, "source_pmf", source)
        object.__setattr__(self, "kernels", kernels)

    @property
    def orders(self) -> tuple:
        return tuple(k.ndim - 1 for k in self.kernels)

    @property
    def label(self) -> str:
        return "discrete(" + ",".join(map(str, self.orders)) + ")"


@dataclass(frozen=True, eq=False)
class JointPMF:
    K: int
    T: int
    table: np.ndarray     # shape (K,)*T, axis t holds x_{T-t}

    @property
    def flat(self) -> np.ndarray:
        return self.table.reshape(-1)


@dataclass
class CrossValidation:
    n: int
    context: tuple
    empirical_mse: float
    exact_lstar: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.empirical_mse - self.exact_lstar) <= self.tolerance


# ══════════════════════════════════════════════════════════════════════════════
# Spec builders
# ══════════════════════════════════════════════════════════════════════════════

def flip_chain(p: float, T: int = 2) -> DiscreteChainSpec:
    """Binary chain, uniform x_T, each step flips the previous frame with probability p."""
    kern = np.array([[1 - p, p], [p, 1 - p]])
    return DiscreteChainSpec(2, T, np.full(2, 0.5), tuple(kern for _ in range(T - 1)))


def random_spec(K: int, T: int, orders, gen: np.random.Generator) -> DiscreteChainSpec:
    """Dirichlet(1) source and kernel rows; orders[t-1] is the order of step t."""
    orders = tuple(orders)
    kernels = tuple(gen.dirichlet(np.ones(K), size=(K,) * m) for m in orders)
    return DiscreteChainSpec(K, T, gen.dirichlet(np.ones(K)), kernels)


def sign_quantized_spec(betas, var: float = 1.0) -> DiscreteChainSpec:
    """
    Binary first-order chain whose step kernels are the sign transitions of a
    zero-mean Gaussian first-order noising chain with Var(x_T) = var.
    P(same sign) = 1/2 + arcsin(ρ)/π for correlation ρ between neighbours.
    """
    kernels, v_prev = [], var
    for beta in betas:
        v_cur = (1 - beta) * v_prev + beta
        rho = math.sqrt(1 - beta) * math.sqrt(v_prev / v_cur)
        keep = 0.5 + math.asin(min(rho, 1.0)) / math.pi
        kernels.append(np.array([[keep, 1 - keep], [1 - keep, keep]]))
        v_prev = v_cur
    return DiscreteChainSpec(2, len(kernels) + 1, np.full(2, 0.5), tuple(kernels))


# ══════════════════════════════════════════════════════════════════════════════
# Enumeration
# ══════════════════════════════════════════════════════════════════════════════

def enumerate_joint(spec: DiscreteChainSpec) -> JointPMF:
    size = spec.K ** spec.T
    if size > MAX_TABLE_SIZE:
        raise ResourceError(f"table of {size} entries exceeds the {MAX_TABLE_SIZE} bound")
    table = spec.source_pmf.copy()
    for t, kern in enumerate(spec.kernels, start=1):
        m = kern.ndim - 1
        # kernel axes (t-1, t-2, ..., t-m, t) -> ascending (t-m, ..., t-1, t)
        aligned = kern.transpose(list(range(m - 1, -1, -1)) + [m])
        aligned = aligned.reshape((1,) * (t - m) + (spec.K,) * (m + 1))
        table = table[..., None] * aligned
    return JointPMF(spec.K, spec.T, table)


def _context_axes(pmf: JointPMF, context) -> tuple:
    context = tuple(context)
    frames = sorted({int(i) for i in context}, reverse=True)
    if not frames:
        raise ArgumentError("context must be non-empty")
    if len(frames) != len(context):
        raise ArgumentError(f"context {context} repeats a frame")
    for i in frames:
        if not 1 <= i < pmf.T:
            raise ArgumentError(f"context frame {i} outside 1..{pmf.T - 1}")
    return tuple(pmf.T - i for i in frames)    # ascending axes


def _values(pmf: JointPMF, value_map) -> np.ndarray:
    v = np.arange(pmf.K, dtype=np.float64) if value_map is None else np.asarray(value_map, dtype=np.float64)
    if v.shape != (pmf.K,):
        raise ArgumentError(f"value_map must have length {pmf.K}")
    return v


def _conditional_means(pmf: JointPMF, v: np.ndarray, axes: tuple):
    """Return (joint marginal over (x_T, context), p(context), E[v(x_T) | context])."""
    drop = tuple(a for a in range(1, pmf.T) if a not in axes)
    marg = pmf.table.sum(axis=drop) if drop else pmf.table
    p_ctx = marg.sum(axis=0)
    first = np.tensordot(v, marg, axes=(0, 0))
    safe = np.where(p_ctx > 0, p_ctx, 1.0)
    mean = np.where(p_ctx > 0, first / safe, 0.0)
    return marg, p_ctx, mean


def conditional_error_discrete(pmf: JointPMF, value_map, context) -> float:
    """Σ_{x_S} p(x_S)·Var(v(x_T) | x_S) by exact marginalization."""
    v = _values(pmf, value_map)
    marg, _, mean = _conditional_means(pmf, v, _context_axes(pmf, context))
    shape = (pmf.K,) + (1,) * (marg.ndim - 1)
    resid = v.reshape(shape) - mean[None, ...]
    return float(np.sum(marg * resid * resid))


def _total_variance_gap(pmf: JointPMF, v: np.ndarray, small: tuple, large: tuple) -> float:
    """Σ_{x_S₂} p(x_S₂)·(E[v|S₂] − E[v|S₁])², the conditional-mean variance over added frames."""
    _, p_large, m_large = _conditional_means(pmf, v, large)
    _, _, m_small = _conditional_means(pmf, v, small)
    expand = tuple(i for i, a in enumerate(large) if a not in small)
    diff = m_large - np.expand_dims(m_small, expand)
    return float(np.sum(p_large * diff * diff))


def theorem_check_discrete(spec: DiscreteChainSpec, value_map, contexts: list,
                           equality_tol: float = EQUALITY_TOL) -> OracleReport:
    sets = [frozenset(int(i) for i in s) for s in contexts]
    if not sets:
        raise ArgumentError("need at least one context set")
    for a, b in zip(sets, sets[1:]):
        if not a <= b:
            raise ArgumentError(f"contexts not nested: {sorted(a)} is not inside {sorted(b)}")

    pmf = enumerate_joint(spec)
    v = _values(pmf, value_map)
    axes = [_context_axes(pmf, s) for s in contexts]
    errors = [conditional_error_discrete(pmf, v, s) for s in contexts]
    gaps = [a - b for a, b in zip(errors, errors[1:])]
    identity = [_total_variance_gap(pmf, v, a, b) for a, b in zip(axes, axes[1:])]
    report = OracleReport(
        chain_kind=spec.label,
        T=spec.T,
        d=1,
        context_sets=[tuple(sorted(s, reverse=True)) for s in sets],
        errors=errors,
        gaps=gaps,
        equality_flags=[g < equality_tol for g in gaps],
        identity_gaps=identity,
        degenerate=[False] * len(errors),
        monotone_tol=MONOTONE_TOL,
        identity_tol=IDENTITY_TOL,
    )
    for problem in report.violations():
        logger.warning("Discrete nested-context check: %s", problem)
    return report


# ══════════════════════════════════════════════════════════════════════════════
# Sampling and tabular predictors
# ══════════════════════════════════════════════════════════════════════════════

def _draw_rows(probs: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of probs (n, K) by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = gen.random(probs.shape[0])
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def sample_discrete(spec: DiscreteChainSpec, n: int, rng: RngSpec) -> np.ndarray:
    """Ancestral samples, shape (n, T) int, column t holds x_{T-t}."""
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    gen = rng.generator()
    out = np.zeros((n, spec.T), dtype=np.int64)
    out[:, 0] = _draw_rows(np.broadcast_to(spec.source_pmf, (n, spec.K)), gen)
    for t, kern in enumerate(spec.kernels, start=1):
        m = kern.ndim - 1
        parents = tuple(out[:, t - j] for j in range(1, m + 1))   # x_{T-t+1}, ..., x_{T-t+m}
        out[:, t] = _draw_rows(kern[parents], gen)
    return out


@dataclass(frozen=True, eq=False)
class TabularPredictor:
    """Empirical E[v(x_T) | context cell]; cells never seen fall back to the global mean."""
    K: int
    cell_means: np.ndarray
    fallback: float

    def predict(self, ctx: np.ndarray) -> np.ndarray:
        keys = np.ravel_multi_index(tuple(np.asarray(ctx).T), (self.K,) * np.asarray(ctx).shape[1])
        return self.cell_means[keys]


def fit_tabular(ctx: np.ndarray, targets: np.ndarray, K: int) -> TabularPredictor:
    ctx = np.asarray(ctx)
    cells = K ** ctx.shape[1]
    keys = np.ravel_multi_index(tuple(ctx.T), (K,) * ctx.shape[1])
    counts = np.bincount(keys, minlength=cells)
    sums = np.bincount(keys, weights=targets, minlength=cells)
    fallback = float(np.mean(targets))
    means = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
    return TabularPredictor(K, means, fallback)


def context_columns(samples: np.ndarray, T: int, context) -> np.ndarray:
    """Columns of `samples` (n, T, ...) for the given frame indices, most recent first."""
    frames = sorted({int(i) for i in context}, reverse=True)
    return samples[:, [T - i for i in frames]]


def cross_validate(spec: DiscreteChainSpec, n: int, rng: RngSpec, value_map=None, context=None) -> CrossValidation:
    """Empirical MSE of the tabular conditional-mean fit against the enumerated L*."""
    if n < MIN_CV_SAMPLES:
        raise ArgumentError(f"cross-validation needs n >= {MIN_CV_SAMPLES}, got {n}")
    context = tuple(context) if context is not None else (spec.T - 1,)
    pmf = enumerate_joint(spec)
    v = _values(pmf, value_map)
    samples = sample_discrete(spec, n, rng)
    ctx = context_columns(samples, spec.T, context)
    targets = v[samples[:, 0]]
    predictor = fit_tabular(ctx, targets, spec.K)
    resid = targets - predictor.predict(ctx)
    value_range = float(v.max() - v.min())
    result = CrossValidation(
        n=n,
        context=tuple(sorted(set(context), reverse=True)),
        empirical_mse=float(np.mean(resid * resid)),
        exact_lstar=conditional_error_discrete(pmf, v, context),
        tolerance=3.0 / math.sqrt(n) * value_range ** 2,
    )
    logger.info("Cross-validation %s: empirical %.6f vs exact %.6f (tol %.2e)",
                spec.label, result.empirical_mse, result.exact_lstar, result.tolerance)
    return result
