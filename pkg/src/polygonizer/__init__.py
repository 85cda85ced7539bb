"""polygonizer: autoregressive polygon delineation of objects in raster images.

An image goes through a convolutional encoder into a positional feature map;
an attention LSTM decoder then emits the object outline one coordinate token
at a time. Everything runs on a small built-in reverse-mode autodiff engine
over numpy, with no deep-learning framework dependency.
"""

__version__ = "1.0.0"

from .autodiff import AdamState, Tape, Tensor, grad_check
from .codec import (
    CodecError,
    MalformedSequenceError,
    OutOfRangeError,
    TokenSequence,
    TokenVocabulary,
    TooFewVerticesError,
    decode_tokens,
    dim_for_position,
    encode_polygon,
    roundtrip_error,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    DatasetError,
    IngestReport,
    Sample,
    SceneConfig,
    generate_dataset,
    load_coco_subset,
    load_dataset,
    read_ppm,
    save_dataset,
    write_ppm,
)
from .estimator import PolygonDelineator
from .geometry import (
    BinaryMask,
    DegenerateRingError,
    GeometryError,
    InvalidRingError,
    PolygonRing,
    canonicalize,
    perimeter,
    rasterize,
    rotate_ring,
    signed_area,
)
from .metrics import EvalPair, MetricsReport, ap_ar, c_iou, iou, max_tangent_angle_error, n_ratio, report
from .network import (
    InferenceResult,
    ModelConfig,
    SequenceOverflowError,
    decode_step,
    encode_image,
    full_scale_config,
    greedy_infer,
    init_params,
    teacher_forced_loss,
)
from .perturb import (
    DownsampleResolution,
    ErasePixels,
    PerturbationSpec,
    RotateScene,
    downsample,
    erase,
    rotate_sample,
    sweep,
)
from .training import TrainResult, train

__all__ = [
    "AdamState", "Tape", "Tensor", "grad_check",
    "CodecError", "MalformedSequenceError", "OutOfRangeError", "TooFewVerticesError",
    "TokenSequence", "TokenVocabulary", "decode_tokens", "dim_for_position",
    "encode_polygon", "roundtrip_error",
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "DatasetError", "IngestReport", "Sample", "SceneConfig", "generate_dataset",
    "load_coco_subset", "load_dataset", "read_ppm", "save_dataset", "write_ppm",
    "PolygonDelineator",
    "BinaryMask", "DegenerateRingError", "GeometryError", "InvalidRingError",
    "PolygonRing", "canonicalize", "perimeter", "rasterize", "rotate_ring", "signed_area",
    "EvalPair", "MetricsReport", "ap_ar", "c_iou", "iou", "max_tangent_angle_error",
    "n_ratio", "report",
    "InferenceResult", "ModelConfig", "SequenceOverflowError", "decode_step",
    "encode_image", "full_scale_config", "greedy_infer", "init_params", "teacher_forced_loss",
    "DownsampleResolution", "ErasePixels", "PerturbationSpec", "RotateScene",
    "downsample", "erase", "rotate_sample", "sweep",
    "TrainResult", "train",
]
