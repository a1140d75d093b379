from .geometry import rotation_matrix, spatial_map, warp
from .intensity import apply_lighting, crop_sphere, reduce
from .params import AugmentConfig, AugmentParams, StampParams, sample_params
from .pipeline import AugmentStream, augment_once
from .texture import blend, perlin3, perlin_background, perlin_texture, permutation_table, stamp_background

__all__ = [
    "AugmentConfig",
    "AugmentParams",
    "AugmentStream",
    "StampParams",
    "apply_lighting",
    "augment_once",
    "blend",
    "crop_sphere",
    "perlin3",
    "perlin_background",
    "perlin_texture",
    "permutation_table",
    "reduce",
    "rotation_matrix",
    "sample_params",
    "spatial_map",
    "stamp_background",
    "warp",
]
