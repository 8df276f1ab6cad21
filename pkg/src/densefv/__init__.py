"""Dense-SIFT Fisher vector encoding with naive and data-parallel backends."""

from .classify import LinearModel, auc, score, train_linear
from .dsift import DsiftGeometry, RawDescriptorSet, extract_descriptors, triangular_filter_1d
from .embed import EmbeddedDescriptorSet, PcaModel, embed, train_pca
from .errors import DimensionError, EquivalenceError
from .fvenc import (
    Encoder,
    EncoderConfig,
    FisherVector,
    accumulate_naive,
    accumulate_optimized,
    encode_image,
    max_relative_error,
    normalize,
)
from .gmm import GmmModel, PosteriorMatrix, posteriors, train_gmm
from .imgpyr import GrayImage, build_pyramid, load_image, resize_bilinear

__version__ = "0.1.0"

__all__ = [
    "GrayImage", "load_image", "build_pyramid", "resize_bilinear",
    "DsiftGeometry", "RawDescriptorSet", "extract_descriptors", "triangular_filter_1d",
    "PcaModel", "EmbeddedDescriptorSet", "train_pca", "embed",
    "GmmModel", "PosteriorMatrix", "posteriors", "train_gmm",
    "EncoderConfig", "FisherVector", "Encoder", "encode_image",
    "accumulate_naive", "accumulate_optimized", "normalize", "max_relative_error",
    "LinearModel", "train_linear", "score", "auc",
    "DimensionError", "EquivalenceError",
]
