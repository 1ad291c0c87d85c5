"""Rectified-stereo geometry, warping losses, diffusion schedule algebra,
semi-global matching and a scale-calibrated evaluation harness."""

from .diffusion import (
    GuidanceConfig,
    NoiseSchedule,
    add_noise,
    cfg_combine,
    ddim_sample,
    ddim_step,
    inference_timesteps,
    min_snr_weight,
    oracle_denoiser,
    rescale_zero_terminal_snr,
    scaled_linear_schedule,
    x0_from_v,
)
from .errors import StereoSpaceError
from .geometry import (
    CameraIntrinsics,
    PluckerRay,
    RigidPose,
    StereoRig,
    canonicalize_rig,
    line_distance,
    pixel_ray,
    plucker_map,
    reciprocal_product,
)
from .harness import (
    CalibrationResult,
    DatasetEntry,
    ScaleCalibrator,
    SearchConfig,
    calibrate_scale,
    disparity_rmse,
    evaluate_pair,
    mix_weights,
    resize_center_crop,
    symmetric_score,
    tuple_pairs,
)
from .imaging import backward_warp, forward_warp, lr_consistency_mask
from .losses import (
    LossValue,
    LossWeights,
    pixel_loss,
    ssim,
    total_loss,
    velocity_loss,
    velocity_target,
    warp_loss,
)
from .matching import SemiGlobalMatcher, SgbmParams, aggregate_paths, extract_disparity, matching_cost, sgbm

__version__ = "0.1.0"
