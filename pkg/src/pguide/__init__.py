"""Prior-steered single-pass guidance for rectified-flow sampling.

The package trains a per-condition Gaussian prior (stage 1), trains a
velocity field from that prior or from N(0, I) with condition dropout
(stage 2 / baseline), and samples with guidance applied either in the prior
space (single pass) or by velocity extrapolation (dual pass), with exact
model-evaluation accounting and a numerical verification suite for the
supporting first-order trajectory theory.
"""

from .numcore import (
    ParamTensor,
    Rng,
    ShapeError,
    TrainingError,
    adam_step,
    affine_backward,
    affine_forward,
    matmul,
    normal_sample,
    tanh_backward,
    tanh_forward,
    zero_grads,
)
from .data import (
    IdxFormatError,
    LabeledBatch,
    ModeSpec,
    gen_k_mode,
    gen_two_mode,
    idx_load,
    two_mode_specs,
)
from .prior import (
    CheckpointError,
    GuidedSeedConfig,
    PrecisionDomainError,
    PriorModel,
    dist_cfg_params,
    guided_seed,
    load_prior,
    nll_loss,
    prior_forward,
    save_prior,
    train_prior,
)
from .flow import (
    FlowTrainConfig,
    VelocityNet,
    fm_loss,
    load_flow,
    path_interp,
    save_flow,
    train_flow,
    velocity_forward,
)
from .sampling import (
    DistCFG,
    DualCFG,
    GuidanceMode,
    Joint,
    PGuide,
    SampleResult,
    SamplingError,
    Trajectory,
    Vanilla,
    cfg_velocity,
    euler_integrate,
    sample_batch,
)
from . import verify

__version__ = "0.1.0"
