"""Low-precision training simulator: fixed-point and block-floating-point
quantization with stochastic rounding, low-precision SGD with quantized
gradient accumulators, stochastic weight averaging, closed-form
convergence-bound evaluators, and an experiment harness."""

from .bounds import (
    CHI,
    BoundReport,
    ProblemConstants,
    lemma_min_iters,
    lemma_noise_ball,
    lemma_step_size,
    sgdlp_floor_scale,
    thm_quadratic_bound,
    thm_strongly_convex_bound,
)
from .optim import (
    AveragingState,
    LrSchedule,
    QuantizerSet,
    RunRecord,
    TrainConfig,
    run_sgd,
    run_swalp,
    sgd_step_lp,
    sgd_step_momentum_lp,
    swa_update,
    swa_update_quantized,
)
from .quant import (
    BlockAssignment,
    BlockFloatFormat,
    FixedPointFormat,
    QuantizerSpec,
    RngStream,
    RoundingMode,
    fp_grid,
    partition_blocks,
    quantize_bfp,
    quantize_fixed,
    round_prob,
    shared_exponent,
)

__version__ = "0.1.0"
