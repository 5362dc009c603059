"""Organ segmentation in CT volumes with morphological active contours,
plus the matching detection/segmentation evaluation metrics."""
from .errors import NiftiError, ParameterError, ParseError, SnakesegError
from .metrics import average_precision, dice, dice_loss, dsc_from_iou, mean_ap
from .morphsnakes import AcweParams, GacParams, morph_acwe, morph_gac
from .pipeline import PipelineParams, SliceDetections, segment_volume
from .preprocess import clip_hu, curvature_denoise, inverse_gaussian_gradient
from .volume_io import CtVolume, MaskVolume, read_nifti, write_nifti

__version__ = "0.1.0"

__all__ = [
    "AcweParams",
    "CtVolume",
    "GacParams",
    "MaskVolume",
    "NiftiError",
    "ParameterError",
    "ParseError",
    "PipelineParams",
    "SliceDetections",
    "SnakesegError",
    "average_precision",
    "clip_hu",
    "curvature_denoise",
    "dice",
    "dice_loss",
    "dsc_from_iou",
    "inverse_gaussian_gradient",
    "mean_ap",
    "morph_acwe",
    "morph_gac",
    "read_nifti",
    "segment_volume",
    "write_nifti",
]
