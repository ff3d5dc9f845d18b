"""motionweave: a desk-scale video diffusion lab with reference-feature
motion transfer, procedurally generated paired-motion data, and
trajectory-based motion metrics."""

from .checkpoint import load_archive, load_checkpoint, save_archive, save_checkpoint
from .dataset import (
    DatasetConfig,
    SampleRecord,
    build_dataset,
    corrupt_sample,
    generate_pair,
    read_manifest,
    write_manifest,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    MotionWeaveError,
    NumericError,
    ParameterError,
    ShapeError,
    SingularityError,
)
from .filtering import FilterThresholds, calibrate_thresholds, filter_manifest
from .metrics import (
    MotionFidelityScore,
    TemplateBank,
    condition_alignment,
    motion_fidelity,
    temporal_consistency,
    tracked_motion_fidelity,
)
from .motions import KINDS, MotionProgram, make_motion_program
from .params import ParamSet, apply_trainable, snapshot_params, trainable_param_set
from .render import Appearance, appearance_from_ids, compatible_pairs, render_video
from .sampling import ddim_sample, ddim_timesteps
from .schedule import NoiseSchedule, make_schedule, predict_x0, q_sample
from .tracking import TrackerConfig, grid_seeds, track_points
from .training import base_training_step, make_optimizer, transfer_training_step
from .trajectories import TrajectorySet, drop_static
from .transfer import (
    FeatureMap,
    InjectionConfig,
    ReferenceFeatureSet,
    ScaleMap,
    apply_scale,
    extract_reference_features,
    integrated_temporal_attention,
    load_reference_features,
    save_reference_features,
    scaler_forward,
    tag_reference_positions,
    temporal_attention,
    temporal_integrate,
    transfer_sample,
)
from .unet import UNetSpec, VideoUNet, make_scalers
from .video import ConditionLabel, Video, load_video, save_video

__version__ = "0.1.0"
