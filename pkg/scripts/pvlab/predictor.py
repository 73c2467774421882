"""
predictor.py - pvlab
Empirical side of the reconstruction-error story: fit last-frame predictors
from past-frame contexts, compare context sizes against the oracles, and run
context-window autoregressive generation in teacher-forced or free-running mode.

Sample arrays are (n, T, d) in stacking order: column 0 is x_T, column T - i is x_i.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as scl

from . import discrete_oracle as dso
from . import gauss_oracle as gso
from .core import PseudoVideo, RngSpec, psnr_from_mse
from .errors import ArgumentError, ConditioningError, TrainingError
from .reports import EvalReport

logger = logging.getLogger("pvlab.predictor")

# ── Defaults ────────────────────────────────────────────────────────────────
COND_TOL         = 1e-12    # Gram eigenvalue / largest eigenvalue below this is singular
MLP_WIDTH        = 64
GRAD_CHECK_TOL   = 1e-4
GRAD_CHECK_STEP  = 1e-5
GRAD_CHECK_COORDS = 10
DIVERGE_FACTOR   = 10.0
DIVERGE_PATIENCE = 3
SLACK_SE         = 4.0      # statistical slack = 4 standard errors
TRAIN_FRACTION   = 0.8


# ══════════════════════════════════════════════════════════════════════════════
# Datasets
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class ContextDataset:
    """Rows of (context frames, target frame). X is (n, k·d), most recent frame first."""
    X: np.ndarray
    Y: np.ndarray
    k: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ArgumentError(f"X {X.shape} and Y {Y.shape} disagree on sample count")
        if self.k < 1 or X.shape[1] != self.k * Y.shape[1]:
            raise ArgumentError(f"X width {X.shape[1]} is not k={self.k} frames of d={Y.shape[1]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[1]

    @classmethod
    def from_samples(cls, samples: np.ndarray, context, target: int | None = None) -> "ContextDataset":
        n, T, d = samples.shape
        target = T if target is None else target
        frames = sorted({int(i) for i in context}, reverse=True)
        X = samples[:, [T - i for i in frames], :].reshape(n, len(frames) * d)
        return cls(X, samples[:, T - target, :], len(frames))

    def split(self, n_first: int) -> tuple["ContextDataset", "ContextDataset"]:
        return (ContextDataset(self.X[:n_first], self.Y[:n_first], self.k),
                ContextDataset(self.X[n_first:], self.Y[n_first:], self.k))


# ══════════════════════════════════════════════════════════════════════════════
# Linear predictor
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class LinearPredictor:
    context_size: int
    A: np.ndarray       # (d, k·d)
    b: np.ndarray       # (d,)
    ridge: float = 0.0

    def __post_init__(self):
        if self.context_size < 1:
            raise ArgumentError("context_size must be >= 1")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ArgumentError("linear predictor has non-finite coefficients")

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.A.T + self.b

    @classmethod
    def from_conditional(cls, cond: gso.ConditionalGaussian) -> "LinearPredictor":
        return cls(len(cond.context), cond.A, cond.b, 0.0)


def fit_linear(data: ContextDataset, ridge: float = 0.0) -> LinearPredictor:
    """Ridge-regularized least squares with an unpenalized intercept, via Cholesky."""
    if ridge < 0:
        raise ArgumentError(f"ridge must be >= 0, got {ridge}")
    x_mean = data.X.mean(axis=0)
    y_mean = data.Y.mean(axis=0)
    Xc = data.X - x_mean
    Yc = data.Y - y_mean
    gram = Xc.T @ Xc
    if ridge == 0.0:
        eig = scl.eigvalsh(gram)
        if eig[-1] <= 0 or eig[0] <= COND_TOL * eig[-1]:
            raise ConditioningError(
                f"Gram matrix of {data.n} samples x {data.X.shape[1]} inputs is rank deficient; "
                "use a ridge", float(eig[0]))
    factor = scl.cho_factor(gram + ridge * np.eye(gram.shape[0]), lower=True)
    A = scl.cho_solve(factor, Xc.T @ Yc).T
    return LinearPredictor(data.k, A, y_mean - A @ x_mean, ridge)


# ══════════════════════════════════════════════════════════════════════════════
# One-hidden-layer tanh network
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TrainConfig:
    width: int = MLP_WIDTH
    step_size: float = 0.05
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    grad_check: bool = True

    def __post_init__(self):
        if self.width < 1 or self.epochs < 0 or self.batch_size < 1 or not self.step_size > 0:
            raise ArgumentError(f"invalid training config {self}")


@dataclass(eq=False)
class MLPPredictor:
    context_size: int
    W1: np.ndarray      # (m, k·d)
    b1: np.ndarray      # (m,)
    W2: np.ndarray      # (d, m)
    b2: np.ndarray      # (d,)
    loss_trace: list = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        hidden = np.tanh(np.asarray(X, dtype=np.float64) @ self.W1.T + self.b1)
        return hidden @ self.W2.T + self.b2

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in (self.W1, self.b1, self.W2, self.b2)])

    def with_vector(self, theta: np.ndarray) -> "MLPPredictor":
        parts, start = [], 0
        for p in (self.W1, self.b1, self.W2, self.b2):
            parts.append(theta[start:start + p.size].reshape(p.shape))
            start += p.size
        return MLPPredictor(self.context_size, *parts)


def init_mlp(k: int, d: int, width: int, gen: np.random.Generator) -> MLPPredictor:
    """Uniform ±1/√fan_in initialization."""
    p = k * d
    s1, s2 = 1.0 / math.sqrt(p), 1.0 / math.sqrt(width)
    return MLPPredictor(
        k,
        gen.uniform(-s1, s1, (width, p)), gen.uniform(-s1, s1, width),
        gen.uniform(-s2, s2, (d, width)), gen.uniform(-s2, s2, d),
    )


def mlp_loss(model: MLPPredictor, X: np.ndarray, Y: np.ndarray) -> float:
    resid = model.predict(X) - Y
    return float(np.mean(np.sum(resid * resid, axis=1)))


def mlp_loss_and_grad(model: MLPPredictor, X: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared Euclidean error and its gradient as a flat parameter vector."""
    n = X.shape[0]
    hidden = np.tanh(X @ model.W1.T + model.b1)
    resid = hidden @ model.W2.T + model.b2 - Y
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    d_out = 2.0 * resid / n
    g_W2 = d_out.T @ hidden
    g_b2 = d_out.sum(axis=0)
    d_pre = (d_out @ model.W2) * (1.0 - hidden * hidden)
    g_W1 = d_pre.T @ X
    g_b1 = d_pre.sum(axis=0)
    return loss, np.concatenate([g.ravel() for g in (g_W1, g_b1, g_W2, g_b2)])


def gradient_check(model: MLPPredictor, X: np.ndarray, Y: np.ndarray, gen: np.random.Generator,
                   n_coords: int = GRAD_CHECK_COORDS, step: float = GRAD_CHECK_STEP) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    theta = model.to_vector()
    _, grad = mlp_loss_and_grad(model, X, Y)
    worst = 0.0
    for i in gen.choice(theta.size, size=min(n_coords, theta.size), replace=False):
        h = step * max(1.0, abs(theta[i]))
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        numeric = (mlp_loss(model.with_vector(up), X, Y) - mlp_loss(model.with_vector(down), X, Y)) / (2 * h)
        denom = max(abs(numeric), abs(grad[i]), 1e-6)
        worst = max(worst, abs(numeric - grad[i]) / denom)
    return worst


def fit_mlp(data: ContextDataset, config: TrainConfig = TrainConfig()) -> MLPPredictor:
    """Seeded mini-batch SGD on mean squared error."""
    gen = RngSpec(config.seed, 0).generator()
    model = init_mlp(data.k, data.d, config.width, gen)

    if config.grad_check:
        n_check = min(data.n, 256)
        worst = gradient_check(model, data.X[:n_check], data.Y[:n_check], gen)
        if worst >= GRAD_CHECK_TOL:
            raise TrainingError(f"gradient check failed: relative error {worst:.3e}", [])
        logger.debug("Gradient check passed: worst relative error %.3e", worst)

    initial = mlp_loss(model, data.X, data.Y)
    trace, strikes = [initial], 0
    theta = model.to_vector()
    for epoch in range(config.epochs):
        order = gen.permutation(data.n)
        for start in range(0, data.n, config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grad = mlp_loss_and_grad(model, data.X[batch], data.Y[batch])
            theta = theta - config.step_size * grad
            model = model.with_vector(theta)
        loss = mlp_loss(model, data.X, data.Y)
        trace.append(loss)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch + 1}", trace)
        strikes = strikes + 1 if loss > DIVERGE_FACTOR * initial else 0
        if strikes >= DIVERGE_PATIENCE:
            raise TrainingError(f"training diverged at epoch {epoch + 1} (loss {loss:.4g})", trace)
        logger.debug("epoch %d loss %.6f", epoch + 1, loss)
    model.loss_trace = trace
    return model


# ══════════════════════════════════════════════════════════════════════════════
# Evaluation
# ══════════════════════════════════════════════════════════════════════════════

def squared_errors(predictor, data: ContextDataset) -> np.ndarray:
    pred = predictor.predict(data.X)
    if pred.shape != data.Y.shape:
        raise ArgumentError(f"prediction shape {pred.shape} != target shape {data.Y.shape}")
    resid = pred - data.Y
    return np.sum(resid * resid, axis=1)


def evaluate(predictor, data: ContextDataset, chain_kind: str = "", T: int = 0, n_train: int = 0,
             oracle_lstar: float | None = None, seed: int | None = None) -> EvalReport:
    """MSE summed over the d coordinates (comparable to L*) and per-pixel PSNR."""
    if data.n == 0:
        raise ArgumentError("cannot evaluate on an empty dataset")
    if getattr(predictor, "context_size", data.k) != data.k:
        raise ArgumentError(f"predictor expects {predictor.context_size} frames, data has {data.k}")
    sq = squared_errors(predictor, data)
    mse = float(np.mean(sq))
    return EvalReport(
        chain_kind=chain_kind, T=T, d=data.d, k=data.k, n_train=n_train, n_test=data.n,
        mse=mse, psnr_db=psnr_from_mse(mse / data.d), oracle_lstar=oracle_lstar, seed=seed,
        std_err=float(np.std(sq) / math.sqrt(data.n)),
    )


@dataclass
class ContextComparison:
    small: EvalReport
    large: EvalReport
    difference: float             # MSE(k2) - MSE(k1)
    slack: float                  # SLACK_SE standard errors of the paired difference
    oracle_gap: float | None      # L*(k1) - L*(k2)

    @property
    def strictly_better(self) -> bool:
        return self.difference < -self.slack

    @property
    def within_slack(self) -> bool:
        return abs(self.difference) <= self.slack


def _paired(sq_small: np.ndarray, sq_large: np.ndarray) -> tuple[float, float]:
    diff = sq_large - sq_small
    return float(np.mean(diff)), SLACK_SE * float(np.std(diff)) / math.sqrt(diff.size)


def compare_context_sizes(chain, k1: int, k2: int, n_train: int, n_test: int, rng: RngSpec,
                          ridge: float = 0.0, value_map=None) -> ContextComparison:
    """
    Fit at context sizes k1 <= k2 on the same training draws and evaluate on the
    same test draws. `chain` is a JointGaussian or a DiscreteChainSpec.
    """
    if not 1 <= k1 <= k2:
        raise ArgumentError(f"need 1 <= k1 <= k2, got {k1}, {k2}")
    if k2 > chain.T - 1:
        raise ArgumentError(f"k2={k2} exceeds the {chain.T - 1} frames before the target")
    contexts = gso.nested_contexts(chain.T, k2)
    ctx1, ctx2 = contexts[k1 - 1], contexts[k2 - 1]
    seed = int(rng.seed)

    if isinstance(chain, dso.DiscreteChainSpec):
        samples = dso.sample_discrete(chain, n_train + n_test, rng)
        pmf = dso.enumerate_joint(chain)
        v = np.arange(chain.K, dtype=np.float64) if value_map is None else np.asarray(value_map, float)
        targets = v[samples[:, 0]]
        results, sqs = [], []
        for k, ctx in ((k1, ctx1), (k2, ctx2)):
            cols = dso.context_columns(samples, chain.T, ctx)
            fit = dso.fit_tabular(cols[:n_train], targets[:n_train], chain.K)
            sq = (fit.predict(cols[n_train:]) - targets[n_train:]) ** 2
            mse = float(np.mean(sq))
            lstar = dso.conditional_error_discrete(pmf, v, ctx)
            results.append(EvalReport(chain.label, chain.T, 1, k, n_train, n_test, mse,
                                      psnr_from_mse(mse), oracle_lstar=lstar, seed=seed,
                                      std_err=float(np.std(sq) / math.sqrt(n_test))))
            sqs.append(sq)
    else:
        samples = gso.sample_chain(chain, n_train + n_test, rng)
        results, sqs = [], []
        for k, ctx in ((k1, ctx1), (k2, ctx2)):
            train, test = ContextDataset.from_samples(samples, ctx).split(n_train)
            fit = fit_linear(train, ridge)
            results.append(evaluate(fit, test, chain.kind.label, chain.T, n_train,
                                    gso.conditional_error(chain, ctx), seed))
            sqs.append(squared_errors(fit, test))

    difference, slack = _paired(*sqs)
    oracle_gap = results[0].oracle_lstar - results[1].oracle_lstar
    logger.info("k=%d mse %.6f | k=%d mse %.6f | diff %.3e (slack %.3e, oracle gap %.3e)",
                k1, results[0].mse, k2, results[1].mse, difference, slack, oracle_gap)
    return ContextComparison(results[0], results[1], difference, slack, oracle_gap)


def convergence_curve(joint: gso.JointGaussian, context, ns, rng: RngSpec, ridge: float = 0.0) -> list[dict]:
    """|MSE_emp - L*| for OLS fits with n training and n test draws, one row per n."""
    lstar = gso.conditional_error(joint, context)
    rows = []
    for n in ns:
        samples = gso.sample_chain(joint, 2 * n, rng.child("convergence", n))
        train, test = ContextDataset.from_samples(samples, context).split(n)
        report = evaluate(fit_linear(train, ridge), test, joint.kind.label, joint.T, n, lstar)
        rows.append({"n": n, "mse": report.mse, "lstar": lstar,
                     "abs_err": abs(report.mse - lstar), "std_err": report.std_err})
    return rows


# ══════════════════════════════════════════════════════════════════════════════
# Autoregressive generation
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class GenConfig:
    context_window: int = 2
    n_videos: int = 1000
    residual_std: float | dict | None = None    # None: each step predictor's own estimate
    teacher_forced: bool = False

    def __post_init__(self):
        if self.context_window < 1:
            raise ArgumentError("context_window must be >= 1")
        if self.n_videos < 1:
            raise ArgumentError("n_videos must be >= 1")
        stds = self.residual_std.values() if isinstance(self.residual_std, dict) else [self.residual_std]
        if any(s is not None and s < 0 for s in stds):
            raise ArgumentError("residual_std must be >= 0")


@dataclass(frozen=True, eq=False)
class StepPredictor:
    """
    Predicts frame `target` from the `context` frames (most recent first).
    A shared predictor has target 0 and context holding the offsets 1..C.
    """
    target: int
    context: tuple
    model: object
    residual_std: float = 0.0


def oracle_step_predictors(joint: gso.JointGaussian, C: int) -> dict:
    """Exact conditional means E[x_j | x_{j-1..j-C}] for j = C+1..T, with their residual std."""
    steps = {}
    for j in range(C + 1, joint.T + 1):
        ctx = tuple(range(j - 1, j - 1 - C, -1))
        cond = gso.conditional_gaussian(joint, ctx, target=j)
        std = math.sqrt(max(0.0, float(np.trace(cond.cov))) / joint.dim)
        steps[j] = StepPredictor(j, ctx, LinearPredictor.from_conditional(cond), std)
    return steps


def fit_step_predictors(samples: np.ndarray, C: int, rng: RngSpec, ridge: float = 0.0) -> dict:
    """Per-step OLS fits on an 80/20 seeded split; residual std from the validation rows."""
    n, T, d = samples.shape
    shuffled = samples[rng.generator().permutation(n)]
    n_fit = int(TRAIN_FRACTION * n)
    steps = {}
    for j in range(C + 1, T + 1):
        ctx = tuple(range(j - 1, j - 1 - C, -1))
        train, val = ContextDataset.from_samples(shuffled, ctx, target=j).split(n_fit)
        model = fit_linear(train, ridge)
        std = math.sqrt(float(np.mean(squared_errors(model, val))) / d)
        steps[j] = StepPredictor(j, ctx, model, std)
    return steps


def fit_shared_predictor(samples: np.ndarray, C: int, rng: RngSpec, ridge: float = 0.0) -> StepPredictor:
    """One predictor for every step, trained on the pooled (context -> next frame) pairs."""
    n, T, d = samples.shape
    shuffled = samples[rng.generator().permutation(n)]
    n_fit = int(TRAIN_FRACTION * n)
    parts = [ContextDataset.from_samples(shuffled, range(j - 1, j - 1 - C, -1), target=j)
             for j in range(C + 1, T + 1)]
    train = ContextDataset(np.vstack([p.X[:n_fit] for p in parts]), np.vstack([p.Y[:n_fit] for p in parts]), C)
    val = ContextDataset(np.vstack([p.X[n_fit:] for p in parts]), np.vstack([p.Y[n_fit:] for p in parts]), C)
    model = fit_linear(train, ridge)
    std = math.sqrt(float(np.mean(squared_errors(model, val))) / d)
    return StepPredictor(0, tuple(range(1, C + 1)), model, std)


@dataclass(eq=False)
class GenerationResult:
    samples: np.ndarray        # (n, T, d), stacking order
    report: EvalReport

    def to_videos(self, frame_shape: tuple) -> list:
        T = self.samples.shape[1]
        return [PseudoVideo.from_array(s[::-1].reshape((T,) + tuple(frame_shape))) for s in self.samples]


def _step_for(predictors, j: int, C: int) -> StepPredictor:
    if isinstance(predictors, StepPredictor):
        return predictors
    step = predictors.get(j)
    if step is None:
        raise ArgumentError(f"no predictor for frame {j}")
    if len(step.context) != C:
        raise ArgumentError(f"predictor for frame {j} uses {len(step.context)} frames, window is {C}")
    return step


def _residual_std(config: GenConfig, step: StepPredictor, j: int) -> float:
    if config.residual_std is None:
        return step.residual_std
    if isinstance(config.residual_std, dict):
        return float(config.residual_std.get(j, step.residual_std))
    return float(config.residual_std)


def autoregressive_generate(predictors, reference: np.ndarray, config: GenConfig, rng: RngSpec,
                            chain_kind: str = "", first_frames: np.ndarray | None = None) -> GenerationResult:
    """
    Generate frames left to right (most corrupted first). The first C frames
    come from `first_frames` (n, C, d; frame 1 first) or else from the reference
    videos. Free-running contexts are earlier generated frames plus
    residual_std·ε; teacher-forced contexts are the reference frames.
    """
    n, C = config.n_videos, config.context_window
    if reference.ndim != 3 or reference.shape[0] < n:
        raise ArgumentError(f"reference needs shape (>= {n}, T, d), got {reference.shape}")
    reference = reference[:n]
    _, T, d = reference.shape
    if C >= T:
        raise ArgumentError(f"context window {C} leaves no frame to generate for T={T}")
    steps = {j: _step_for(predictors, j, C) for j in range(C + 1, T + 1)}

    gen = rng.generator()
    out = np.empty_like(reference)
    if first_frames is None:
        out[:, T - C:, :] = reference[:, T - C:, :]
    else:
        first_frames = np.asarray(first_frames, dtype=np.float64)
        if first_frames.shape != (n, C, d):
            raise ArgumentError(f"first_frames must be {(n, C, d)}, got {first_frames.shape}")
        out[:, T - C:, :] = first_frames[:, ::-1, :]

    source = reference if config.teacher_forced else out
    for j in range(C + 1, T + 1):
        step = steps[j]
        X = source[:, [T - i for i in range(j - 1, j - 1 - C, -1)], :].reshape(n, C * d)
        frame = step.model.predict(X)
        if not config.teacher_forced:
            frame = frame + _residual_std(config, step, j) * gen.standard_normal((n, d))
        out[:, T - j, :] = frame

    last, truth = out[:, 0, :], reference[:, 0, :]
    resid = last - truth
    mse = float(np.mean(np.sum(resid * resid, axis=1)))
    cov_gap = None
    if n >= 2:   # one video has no sample covariance
        diff = np.atleast_2d(np.cov(last, rowvar=False)) - np.atleast_2d(np.cov(truth, rowvar=False))
        cov_gap = float(np.linalg.norm(diff, "fro"))
    report = EvalReport(
        chain_kind=chain_kind, T=T, d=d, k=C, n_train=0, n_test=n, mse=mse,
        psnr_db=psnr_from_mse(mse / d),
        mean_gap=float(np.linalg.norm(last.mean(axis=0) - truth.mean(axis=0))),
        cov_frobenius_gap=cov_gap,
        teacher_forced=config.teacher_forced, seed=int(rng.seed),
        std_err=float(np.std(np.sum(resid * resid, axis=1)) / math.sqrt(n)),
    )
    return GenerationResult(out, report)


def teacher_forcing_gap(predictors, reference: np.ndarray, config: GenConfig, rng: RngSpec,
                        chain_kind: str = "") -> tuple[EvalReport, EvalReport]:
    """Run both modes on the same reference videos and log the comparison (no assertion)."""
    modes = []
    for forced in (True, False):
        cfg = GenConfig(config.context_window, config.n_videos, config.residual_std, forced)
        modes.append(autoregressive_generate(predictors, reference, cfg, rng, chain_kind).report)
    forced, free = modes
    slack = SLACK_SE * math.hypot(forced.std_err or 0.0, free.std_err or 0.0)
    logger.info("Last-frame MSE teacher-forced %.6f vs free-running %.6f (slack %.3e)%s",
                forced.mse, free.mse, slack,
                "" if forced.mse <= free.mse + slack else " - teacher-forced is worse")
    return forced, free
