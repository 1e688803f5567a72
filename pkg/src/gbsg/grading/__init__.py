from ._backend import HAS_NUMBA, USE_NUMBA, backend_name, get_backend, set_threads
from .core import (
    SLAB_Z,
    extract_patch,
    grade_voxel,
    grade_volume,
    knn_exact,
    knn_patchmatch,
    patch_distance,
)
from .types import (
    GRADE_SENTINEL,
    GradingMap,
    GradingParams,
    Patch,
    PatchMatchField,
    TemplateEntry,
    TrainingLibrary,
)

__all__ = [
    "HAS_NUMBA",
    "USE_NUMBA",
    "backend_name",
    "get_backend",
    "set_threads",
    "SLAB_Z",
    "GRADE_SENTINEL",
    "GradingMap",
    "GradingParams",
    "Patch",
    "PatchMatchField",
    "TemplateEntry",
    "TrainingLibrary",
    "extract_patch",
    "grade_voxel",
    "grade_volume",
    "knn_exact",
    "knn_patchmatch",
    "patch_distance",
]
