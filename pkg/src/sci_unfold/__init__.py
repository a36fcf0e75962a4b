"""Dense deep unfolding reconstruction for video snapshot compressive imaging."""

__version__ = "0.1.0"

from .forward import (  # noqa: E402
    MaskSet,
    adjoint,
    build_block_diagonal,
    compress,
    generate_masks,
    normalize_measurement,
)
from .data_module import euclidean_projection, projection_update, residual_update  # noqa: E402
from .network import (  # noqa: E402
    DenseUnfoldingNet,
    NetworkConfig,
    build_network,
    load_checkpoint,
    save_checkpoint,
)
from .tensor_io import load_tensor, save_tensor  # noqa: E402

__all__ = [
    "MaskSet",
    "adjoint",
    "build_block_diagonal",
    "compress",
    "generate_masks",
    "normalize_measurement",
    "euclidean_projection",
    "projection_update",
    "residual_update",
    "DenseUnfoldingNet",
    "NetworkConfig",
    "build_network",
    "load_checkpoint",
    "save_checkpoint",
    "load_tensor",
    "save_tensor",
]
