"""Contrastive predictive coding on image patch grids.

Images are cut into overlapping patch grids, each patch is encoded
independently, a masked autoregressor summarizes visible latents into
per-position context, and bias-free linear heads predict the held-out
latents against negatives drawn from other images. A fine-tuning harness
measures how many labels the pretrained encoder saves downstream.
"""

from .autoregressor import (
    ContextGrid,
    MaskedConvSpec,
    autoregress,
    build_mask,
    build_stack,
    masked_conv,
    multi_directional_block,
)
from .cpc_core import (
    LatentMask,
    PredictionHead,
    apply_mask,
    build_head,
    info_nce_loss,
    make_infill_mask,
    make_topdown_mask,
    predict_targets,
    sample_negatives,
)
from .data import (
    DatasetStore,
    ImageSample,
    generate_synthetic,
    load_dataset_png,
    load_pcam,
    sample_label_subset,
    save_dataset_png,
    split_train_val,
)
from .encoder import EncoderConfig, LatentGrid, build_encoder, encode_image, encode_patches
from .errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    FormatError,
    GeometryError,
    IngestionError,
    InvalidArgumentError,
    NumericError,
    PatchCPCError,
)
from .patching import PatchGrid, extract_patches, grid_shape
from .training import (
    DEFAULT_SWEEP_SIZES,
    VARIANTS,
    Checkpoint,
    SweepResult,
    TrainConfig,
    evaluate,
    finetune_classifier,
    gradient_check,
    pretrain_cpc,
    run_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConfigurationError",
    "ContextGrid",
    "DataError",
    "DatasetStore",
    "DivergenceError",
    "EncoderConfig",
    "FormatError",
    "GeometryError",
    "ImageSample",
    "IngestionError",
    "InvalidArgumentError",
    "LatentGrid",
    "LatentMask",
    "MaskedConvSpec",
    "NumericError",
    "PatchCPCError",
    "PatchGrid",
    "PredictionHead",
    "SweepResult",
    "DEFAULT_SWEEP_SIZES",
    "TrainConfig",
    "VARIANTS",
    "apply_mask",
    "autoregress",
    "build_encoder",
    "build_head",
    "build_mask",
    "build_stack",
    "encode_image",
    "encode_patches",
    "evaluate",
    "extract_patches",
    "finetune_classifier",
    "generate_synthetic",
    "gradient_check",
    "grid_shape",
    "info_nce_loss",
    "load_dataset_png",
    "load_pcam",
    "make_infill_mask",
    "make_topdown_mask",
    "masked_conv",
    "multi_directional_block",
    "predict_targets",
    "pretrain_cpc",
    "run_sweep",
    "sample_label_subset",
    "sample_negatives",
    "save_dataset_png",
    "split_train_val",
]
