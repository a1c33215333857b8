"""Two-stage prompt-conditioned unrolled MRI reconstruction on synthetic
multi-coil phantom data."""

from .errors import ConfigError, DataError, DivergenceError, PromptMRError
from .fourier import (
    CoilSensitivities,
    UndersampleMask,
    apply_mask,
    adjoint_A,
    expand,
    extract_acs,
    fft2c,
    forward_A,
    ifft2c,
    make_mask,
    reduce,
    rss,
)
from .phantom import (
    CaseRecord,
    KSpaceVolume,
    PhantomSpec,
    adjacency_boundary,
    build_adjacent_stack,
    simulate_case,
)
from .container import read_case, read_container, write_case, write_container
from .nets import (
    CAUnet,
    ChannelAttentionBlock,
    NetConfig,
    PromptBlock,
    PromptLevelConfig,
    PromptUnet,
    build_net,
    channels_to_complex,
    complex_to_channels,
    zero_module,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .unrolled import (
    Cascade,
    SensitivityEstimator,
    Stage1Model,
    UnrolledConfig,
    acs_ratio_maps,
    export_prompt_embeddings,
    reconstruct_stage1,
    regularizer_G,
    zero_regularizers,
)
from .refine import RefineConfig, RefineNet, refine, temporal_shift
from .metrics import MetricReport, MetricRow, nmse, psnr, ssim, ssim_loss, ssim_torch

__version__ = "0.1.0"
