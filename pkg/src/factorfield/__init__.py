"""Factorized (3+K)-D radiance fields for interactive scene synthesis."""

from .encoding import EncodingConfig, positional_encoding, sh_encoding
from .field import (
    Aabb,
    FactorizedField,
    FactorizedGrid,
    ParameterAxes,
    ParameterRangeError,
    count_parameters,
    crop_to_aabb,
    fresh_axes,
    fresh_field,
    fresh_grid,
    sample_feature,
    sample_params,
    sample_spatial,
    upsample,
)
from .decoder import DecoderPair, Mlp, decode_color, decode_density, fresh_decoders
from .grad import AdamState, adam_step, backward, parameter_map
from .metrics import psnr, ssim
from .render import (
    Camera,
    MaskVolume,
    Rays,
    RenderConfig,
    build_mask,
    composite,
    generate_rays,
    importance_samples,
    intersect_aabb,
    render_image,
    stratified_samples,
)
from .train import (
    LossReport,
    TrainSchedule,
    desk_schedule,
    l1_loss,
    paper_schedule,
    reconstruction_loss,
    train,
    tv_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Aabb", "FactorizedField", "FactorizedGrid", "ParameterAxes", "ParameterRangeError",
    "EncodingConfig", "DecoderPair", "Mlp", "Camera", "Rays", "RenderConfig", "MaskVolume",
    "AdamState", "LossReport", "TrainSchedule",
    "sample_spatial", "sample_params", "sample_feature", "upsample", "crop_to_aabb",
    "count_parameters", "fresh_field", "fresh_grid", "fresh_axes", "fresh_decoders", "positional_encoding",
    "sh_encoding", "decode_density", "decode_color", "backward", "adam_step",
    "parameter_map", "generate_rays", "intersect_aabb", "stratified_samples",
    "importance_samples", "composite", "build_mask", "render_image", "psnr", "ssim",
    "reconstruction_loss", "l1_loss", "tv_loss", "train", "desk_schedule",
    "paper_schedule",
]
