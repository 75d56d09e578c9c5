"""Non-autoregressive generative modeling over discrete token grids."""

from .codec import (
    Codebook,
    LatentDataset,
    build_latent_dataset,
    decode_grid,
    encode_grid,
    fit_codebook,
    grayscale_codebook,
    mask_downsample,
)
from .model import HourglassConfig, HourglassModel
from .sampling import SampleSchedule, SampleTrace, decode_intermediate, inpaint, sample
from .training import TrainConfig, corrupt, train, unrolled_loss

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "LatentDataset",
    "build_latent_dataset",
    "decode_grid",
    "encode_grid",
    "fit_codebook",
    "grayscale_codebook",
    "mask_downsample",
    "HourglassConfig",
    "HourglassModel",
    "SampleSchedule",
    "SampleTrace",
    "decode_intermediate",
    "inpaint",
    "sample",
    "TrainConfig",
    "corrupt",
    "train",
    "unrolled_loss",
    "__version__",
]
