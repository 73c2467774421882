"""
pvlab - pseudo-video lab
Pseudo videos built from still images, and exact and empirical checks of how
the minimum last-frame reconstruction error depends on the context frames.

Modules:
  core             - Frame / PseudoVideo, seeded RngSpec, PGM/PPM and .pvid I/O
  augment          - blur, heat and Markov-noise corruption schedules
  gauss_oracle     - closed-form joint covariance and Schur-complement L*
  discrete_oracle  - brute-force enumeration of small discrete chains
  predictor        - OLS / MLP fits, context comparisons, autoregressive generation
  reports          - OracleReport / EvalReport and their CSV form
  config           - JSON experiment config with defaults
  manifest         - run manifest with output checksums
  commands         - augment | oracle | fit | generate | verify

Usage:
    from scripts.pvlab import build_joint, conditional_error, ChainKind, GaussianSource
    from scripts.pvlab import MarkovOrder, NoiseSchedule

    kind = ChainKind(MarkovOrder.HIGH, NoiseSchedule((0.5, 0.5)))
    joint = build_joint(GaussianSource.scalar(1.0), kind)
    print(conditional_error(joint, [2]), conditional_error(joint, [2, 1]))   # 0.5 0.444...
"""

__version__ = "1.0.0"

from .core            import Frame, PseudoVideo, RngSpec, read_image, write_image, read_video, write_video, psnr
from .augment         import (MarkovOrder, BlurSchedule, NoiseSchedule, HeatSchedule, linear_beta_schedule,
                              make_blur_video, make_heat_video, first_order_markov_noise, high_order_markov_noise)
from .gauss_oracle    import (GaussianSource, ChainKind, build_joint, conditional_error, optimal_predictor,
                              theorem_check, sample_chain)
from .discrete_oracle import DiscreteChainSpec, enumerate_joint, conditional_error_discrete, theorem_check_discrete
from .predictor       import fit_linear, fit_mlp, evaluate, compare_context_sizes, autoregressive_generate
from .reports         import OracleReport, EvalReport
from .config          import ExperimentConfig, load_config
from .manifest        import RunManifest

__all__ = [
    "__version__",
    "Frame", "PseudoVideo", "RngSpec",
    "read_image", "write_image", "read_video", "write_video", "psnr",
    "MarkovOrder", "BlurSchedule", "NoiseSchedule", "HeatSchedule", "linear_beta_schedule",
    "make_blur_video", "make_heat_video", "first_order_markov_noise", "high_order_markov_noise",
    "GaussianSource", "ChainKind", "build_joint", "conditional_error", "optimal_predictor",
    "theorem_check", "sample_chain",
    "DiscreteChainSpec", "enumerate_joint", "conditional_error_discrete", "theorem_check_discrete",
    "fit_linear", "fit_mlp", "evaluate", "compare_context_sizes", "autoregressive_generate",
    "OracleReport", "EvalReport",
    "ExperimentConfig", "load_config",
    "RunManifest",
]
