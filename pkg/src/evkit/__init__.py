"""Event-camera data synthesis, masking, losses, and toy staged training."""

from .events import (DiffMap, Event, EventStream, EventVoxel, GrayFrame,
                     diff_map, make_variant, polarity_image, segment_stream,
                     take_fixed_events, voxelize)
from .evt_io import EvtFormatError, read_evt, write_evt
from .losses import (ContrastBatch, NegativeQueue, PatchTarget, info_nce,
                     rec_loss, standardize)
from .masking import PatchGrid, PatchMask, compute_density, make_mask
from .model import (ModelConfig, StageConfig, TinyModel, forward_cl,
                    forward_mm, make_target_feature, train_stages)
from .motion import (MotionConfig, MotionParams, VideoClip, sample_motion,
                     synthesize_clip)
from .simulator import DvsConfig, default_config, simulate

__version__ = "0.1.0"

__all__ = [
    "DiffMap", "Event", "EventStream", "EventVoxel", "GrayFrame",
    "diff_map", "make_variant", "polarity_image", "segment_stream",
    "take_fixed_events", "voxelize",
    "EvtFormatError", "read_evt", "write_evt",
    "ContrastBatch", "NegativeQueue", "PatchTarget", "info_nce",
    "rec_loss", "standardize",
    "PatchGrid", "PatchMask", "compute_density", "make_mask",
    "ModelConfig", "StageConfig", "TinyModel", "forward_cl", "forward_mm",
    "make_target_feature", "train_stages",
    "MotionConfig", "MotionParams", "VideoClip", "sample_motion",
    "synthesize_clip",
    "DvsConfig", "default_config", "simulate",
]
