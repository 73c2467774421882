"""
gauss_oracle.py - pvlab
Exact minimum reconstruction errors for linear-Gaussian pseudo-video chains.

Frames are stacked x_T first, then x_{T-1}, ..., x_1, so frame index i sits in
block T - i. Context sets are given as frame indices, e.g. {T-1, T-2}.
For a Gaussian joint the conditional covariance of x_T given any context does
not depend on the context values, so E[Var(x_T | x_S)] is exactly the trace of
a Schur complement.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as scl

from .augment import MarkovOrder, NoiseSchedule, forward_chain
from .core import RngSpec
from .errors import ArgumentError
from .reports import OracleReport

logger = logging.getLogger("pvlab.gauss_oracle")

# ── Tolerances ──────────────────────────────────────────────────────────────
SYMMETRY_TOL    = 1e-12
PSD_TOL         = 1e-10
JOINT_PSD_TOL   = 1e-8
EQUALITY_TOL    = 1e-10   # a gap below this counts as equality
MONOTONE_TOL    = 1e-9    # allowed round-off increase along a nested chain
IDENTITY_TOL    = 1e-9    # |gap - total-variance value| allowed
RIDGE_SCALE     = 1e-12   # ridge = RIDGE_SCALE * trace / dim on factorization failure
RCOND_MIN       = 1e-14   # Cholesky pivot ratio below this is treated as singular


# ══════════════════════════════════════════════════════════════════════════════
# Types
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class GaussianSource:
    """Distribution of the target image x_T."""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ArgumentError(f"mean {mean.shape} and cov {cov.shape} do not describe one d-vector")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL:
            raise ArgumentError("source covariance is not symmetric")
        low = float(np.min(scl.eigvalsh(cov)))
        if low < -PSD_TOL:
            raise ArgumentError(f"source covariance is not PSD (eigenvalue {low:.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def scalar(cls, var: float = 1.0, mean: float = 0.0) -> "GaussianSource":
        return cls(np.array([mean]), np.array([[var]]))

    @classmethod
    def random(cls, dim: int, gen: np.random.Generator) -> "GaussianSource":
        """Random non-degenerate source for property checks."""
        a = gen.standard_normal((dim, dim))
        cov = a @ a.T / dim + 0.1 * np.eye(dim)
        return cls(gen.standard_normal(dim), (cov + cov.T) / 2)


@dataclass(frozen=True)
class ChainKind:
    order: MarkovOrder
    schedule: NoiseSchedule

    def __post_init__(self):
        object.__setattr__(self, "order", MarkovOrder(self.order))

    @property
    def label(self) -> str:
        return self.order.value


@dataclass(frozen=True, eq=False)
class JointGaussian:
    T: int
    dim: int
    mean: np.ndarray
    cov: np.ndarray
    source: GaussianSource
    kind: ChainKind

    def block(self, frame: int) -> np.ndarray:
        """Row indices of frame `frame` (1..T) in the stacked vector."""
        if not 1 <= frame <= self.T:
            raise ArgumentError(f"frame index {frame} outside 1..{self.T}")
        start = (self.T - frame) * self.dim
        return np.arange(start, start + self.dim)

    def positions(self, frames) -> np.ndarray:
        return np.concatenate([self.block(i) for i in frames])


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """x_target | x_context ~ N(A·x_context + b, cov); context frames most recent first."""
    target: int
    context: tuple
    A: np.ndarray
    b: np.ndarray
    cov: np.ndarray
    degenerate: bool = False

    @property
    def error(self) -> float:
        return max(0.0, float(np.trace(self.cov)))

    def predict(self, x_context: np.ndarray) -> np.ndarray:
        """x_context: (n, k·d) rows ordered like `context`."""
        return np.asarray(x_context) @ self.A.T + self.b


# ══════════════════════════════════════════════════════════════════════════════
# Joint construction
# ══════════════════════════════════════════════════════════════════════════════

def chain_coefficients(kind: ChainKind, T: int) -> np.ndarray:
    """
    (T, T) matrix C with frame block k = Σ_j C[k, j]·z_j, where
    z = (x_T, ε_1, ..., ε_{T-1}) and block k holds frame T - k.
    """
    betas = kind.schedule.betas
    if T < 2:
        raise ArgumentError(f"T must be >= 2, got {T}")
    if len(betas) < T - 1:
        raise ArgumentError(f"schedule has {len(betas)} betas, {T} frames need {T - 1}")
    coef = np.zeros((T, T))
    coef[0, 0] = 1.0
    for t in range(1, T):
        beta = betas[t - 1]
        if kind.order is MarkovOrder.FIRST:
            base = coef[t - 1]
        else:
            base = coef[:t].sum(axis=0) / t
        coef[t] = np.sqrt(1.0 - beta) * base
        coef[t, t] = np.sqrt(beta)
    return coef


def build_joint(source: GaussianSource, kind: ChainKind, T: int | None = None) -> JointGaussian:
    T = kind.schedule.n_frames if T is None else T
    d = source.dim
    coef = chain_coefficients(kind, T)
    lift = np.kron(coef, np.eye(d))
    base_cov = scl.block_diag(source.cov, *([np.eye(d)] * (T - 1)))
    base_mean = np.concatenate([source.mean, np.zeros(d * (T - 1))])
    cov = lift @ base_cov @ lift.T
    cov = (cov + cov.T) / 2
    low = float(np.min(scl.eigvalsh(cov)))
    if low < -JOINT_PSD_TOL:
        raise ArgumentError(f"joint covariance lost PSD-ness (eigenvalue {low:.3e})")
    return JointGaussian(T=T, dim=d, mean=lift @ base_mean, cov=cov, source=source, kind=kind)


# ══════════════════════════════════════════════════════════════════════════════
# Conditioning
# ══════════════════════════════════════════════════════════════════════════════

def normalize_context(joint: JointGaussian, context, target: int | None = None) -> tuple:
    """Sorted most-recent-first tuple of distinct frame indices older than the target."""
    target = joint.T if target is None else target
    context = tuple(context)
    frames = tuple(sorted({int(i) for i in context}, reverse=True))
    if not frames:
        raise ArgumentError("context must be non-empty")
    if len(frames) != len(context):
        raise ArgumentError(f"context {context} repeats a frame")
    for i in frames:
        if not 1 <= i <= joint.T or i == target:
            raise ArgumentError(f"context frame {i} invalid for target {target} of T={joint.T}")
    return frames


def _solve_spd(cov_cc: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Return (cov_cc⁻¹·rhs, degenerate)."""
    try:
        factor = scl.cho_factor(cov_cc, lower=True)
        pivots = np.abs(np.diag(factor[0]))
        if (pivots.min() / pivots.max()) ** 2 >= RCOND_MIN:
            return scl.cho_solve(factor, rhs), False
    except np.linalg.LinAlgError:
        pass
    ridge = RIDGE_SCALE * np.trace(cov_cc) / cov_cc.shape[0]
    try:
        factor = scl.cho_factor(cov_cc + ridge * np.eye(cov_cc.shape[0]), lower=True)
        logger.warning("Context covariance singular; solved with ridge %.3e", ridge)
        return scl.cho_solve(factor, rhs), True
    except np.linalg.LinAlgError:
        logger.warning("Context covariance singular beyond ridge; using pseudo-inverse")
        return scl.pinvh(cov_cc) @ rhs, True


def conditional_gaussian(joint: JointGaussian, context, target: int | None = None) -> ConditionalGaussian:
    target = joint.T if target is None else target
    frames = normalize_context(joint, context, target)
    ti, ci = joint.block(target), joint.positions(frames)
    cov_tt = joint.cov[np.ix_(ti, ti)]
    cov_tc = joint.cov[np.ix_(ti, ci)]
    cov_cc = joint.cov[np.ix_(ci, ci)]
    solved, degenerate = _solve_spd(cov_cc, cov_tc.T)
    A = solved.T
    cond = cov_tt - A @ cov_tc.T
    b = joint.mean[ti] - A @ joint.mean[ci]
    return ConditionalGaussian(target, frames, A, b, (cond + cond.T) / 2, degenerate)


def conditional_error(joint: JointGaussian, context) -> float:
    """L*_S = trace(Σ_TT − Σ_TS Σ_SS⁻¹ Σ_ST)."""
    return conditional_gaussian(joint, context).error


def optimal_predictor(joint: JointGaussian, context) -> ConditionalGaussian:
    """E[x_T | x_S] = A·x_S + b; the returned object carries A, b and the residual covariance."""
    return conditional_gaussian(joint, context)


def baseline_error(joint: JointGaussian) -> float:
    """Error of predicting x_T by its mean alone (no context frames)."""
    ti = joint.block(joint.T)
    return float(np.trace(joint.cov[np.ix_(ti, ti)]))


def total_variance_gap(joint: JointGaussian, small: ConditionalGaussian, large: ConditionalGaussian) -> float:
    """
    E‖E[x_T|S₂] − E[x_T|S₁]‖², the expected variance of the larger-context
    conditional mean over the added frames, in closed form.
    """
    n = joint.T * joint.dim
    diff = np.zeros((joint.dim, n))
    diff[:, joint.positions(large.context)] += large.A
    diff[:, joint.positions(small.context)] -= small.A
    return float(np.trace(diff @ joint.cov @ diff.T))


def nested_contexts(T: int, max_size: int | None = None) -> list[tuple]:
    """[{T-1}, {T-1, T-2}, ...] up to max_size frames (default all T-1)."""
    max_size = T - 1 if max_size is None else min(max_size, T - 1)
    return [tuple(range(T - 1, T - 1 - k, -1)) for k in range(1, max_size + 1)]


def check_nesting(contexts: list) -> list[frozenset]:
    sets = [frozenset(int(i) for i in s) for s in contexts]
    if not sets:
        raise ArgumentError("need at least one context set")
    for a, b in zip(sets, sets[1:]):
        if not a <= b:
            raise ArgumentError(f"contexts not nested: {sorted(a)} is not inside {sorted(b)}")
    return sets


def theorem_check(joint: JointGaussian, contexts: list, equality_tol: float = EQUALITY_TOL) -> OracleReport:
    check_nesting(contexts)
    conds = [conditional_gaussian(joint, s) for s in contexts]
    errors = [c.error for c in conds]
    gaps, identity = [], []
    for prev, cur, e_prev, e_cur in zip(conds, conds[1:], errors, errors[1:]):
        gaps.append(e_prev - e_cur)
        identity.append(total_variance_gap(joint, prev, cur))
    report = OracleReport(
        chain_kind=joint.kind.label,
        T=joint.T,
        d=joint.dim,
        context_sets=[c.context for c in conds],
        errors=errors,
        gaps=gaps,
        equality_flags=[g < equality_tol for g in gaps],
        identity_gaps=identity,
        degenerate=[c.degenerate for c in conds],
        monotone_tol=MONOTONE_TOL,
        identity_tol=IDENTITY_TOL,
    )
    for problem in report.violations():
        logger.warning("Nested-context check: %s", problem)
    return report


# ══════════════════════════════════════════════════════════════════════════════
# Sampling
# ══════════════════════════════════════════════════════════════════════════════

def sample_chain(joint: JointGaussian, n: int, rng: RngSpec) -> np.ndarray:
    """
    n i.i.d. chains drawn through the forward recursion, shape (n, T, d) with
    axis 1 in stacking order (x_T first). reshape(n, T*d) gives stacked vectors.
    """
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    gen = rng.generator()
    source = joint.source
    clean = gen.multivariate_normal(source.mean, source.cov, size=n, method="eigh")
    chain = forward_chain(clean, joint.kind.schedule.betas[: joint.T - 1], joint.kind.order, gen)
    return np.stack(chain, axis=1)


def sample_chain_from(source: GaussianSource, kind: ChainKind, T: int, n: int, rng: RngSpec) -> np.ndarray:
    return sample_chain(build_joint(source, kind, T), n, rng)
