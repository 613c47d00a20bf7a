"""Robust point-set alignment, deformable shape fitting and face frontalization."""

from .deform_fit import FitConfig, FitResult, fit
from .errors import RobustFrontError
from .frontalize import PipelineConfig, PipelineResult, run_pipeline
from .geometry import SimilarityTransform, horn_align, inverse_pose
from .image import Image
from .robust_align import AlignConfig, AlignResult, align
from .shape_model import ShapeModel, build_model
from .zncc import zncc, zncc_search

__all__ = [
    "AlignConfig",
    "AlignResult",
    "FitConfig",
    "FitResult",
    "Image",
    "PipelineConfig",
    "PipelineResult",
    "RobustFrontError",
    "ShapeModel",
    "SimilarityTransform",
    "align",
    "build_model",
    "fit",
    "horn_align",
    "inverse_pose",
    "run_pipeline",
    "zncc",
    "zncc_search",
]
