"""Color-only stylization of pre-trained 3D Gaussian scenes.

Load a Gaussian scene, freeze its geometry, and optimize only the SH color
coefficients under a composite of four style experts (score distillation,
multi-scale Gram matching, style-descriptor similarity, and an
antonym-prompt quality score), all behind pluggable prior providers.
"""

from .camera import CameraView, camera_ring, load_cameras, look_at, save_cameras
from .cloud import GaussianCloud, ParamPartition, partition
from .distill import DSSDConfig, dssd_color_gradient, dssd_residual, style_objective
from .experts import QAConfig, SOSConfig, clip_iqa_score, csd_loss, gram, qa_loss, sos_loss
from .metrics import lpips, psnr, ssim
from .ply_io import load_ply, save_ply
from .providers import (
    DiffusionScoreProvider,
    EmbeddingProvider,
    FeatureExtractor,
    ProviderSet,
    StyleDescriptorProvider,
    StylizedViewProvider,
    ToyEmbeddingProvider,
    ToyFeatureExtractor,
    ToyScoreProvider,
    ToyStyleDescriptor,
    ToyStylizedViewProvider,
    toy_providers,
)
from .render import (
    RenderOutput,
    accumulate_color_gradient,
    color_jacobian,
    project_gaussian,
    render,
    render_mask,
)
from .schedule import (
    GuidanceState,
    Mode,
    ModeTimetable,
    Phase,
    TimetableEntry,
    alpha_step,
    default_timetable,
    dynamic_cfg,
    phase_at,
    sample_timestep,
    view_order,
)
from .style_clean import StyleEmbedding, clean_style
from .train import (
    ExpertWeights,
    RunRecord,
    StyleBundle,
    TrainSettings,
    composite_loss,
    oscillation_metric,
    stylize,
)

__version__ = "0.1.0"
