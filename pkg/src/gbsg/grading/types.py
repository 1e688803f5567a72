"""Domain types for the patch-grading stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, DimsMismatch
from ..volio import LabelMap, Volume3D, validate_pair

GRADE_SENTINEL = -2.0


@dataclass
class Patch:
    """Cubic patch of side 2r+1; values in x-fastest order."""

    radius: int
    values: np.ndarray  # float64, length (2r+1)**3
    center: tuple[int, int, int]  # (i, j, k) voxel index

    def __post_init__(self):
        self.radius = int(self.radius)
        if self.radius < 1:
            raise DataError(f"patch radius must be >= 1, got {self.radius}")
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        side = 2 * self.radius + 1
        if self.values.size != side**3:
            raise DataError(
                f"patch with radius {self.radius} needs {side ** 3} values, "
                f"got {self.values.size}"
            )
        self.center = tuple(int(c) for c in self.center)


@dataclass
class TemplateEntry:
    """One training template: registered volume, labels, pathological status."""

    volume: Volume3D
    labels: LabelMap
    status: int  # +1 = CN, -1 = AD
    subject_id: str = ""

    def __post_init__(self):
        self.status = int(self.status)
        if self.status not in (-1, 1):
            raise DataError(f"template status must be -1 or +1, got {self.status}")
        validate_pair(self.volume, self.labels)


@dataclass
class TrainingLibrary:
    entries: list[TemplateEntry]

    def __post_init__(self):
        if not self.entries:
            raise DataError("training library must not be empty")
        ref = self.entries[0]
        for e in self.entries[1:]:
            if tuple(e.volume.dims) != tuple(ref.volume.dims):
                raise DimsMismatch(
                    f"library entries disagree on dims: {e.volume.dims} vs {ref.volume.dims}"
                )
            for a, b in zip(e.volume.spacing, ref.volume.spacing):
                if abs(a - b) > 1e-6 * max(abs(a), abs(b), 1e-30):
                    raise DataError("library entries disagree on spacing")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.entries[0].volume.dims

    def stacked_volumes(self) -> np.ndarray:
        """Template intensities as one (T, nz, ny, nx) float64 array."""
        return np.stack([e.volume.data.astype(np.float64) for e in self.entries])

    def statuses(self) -> np.ndarray:
        return np.array([e.status for e in self.entries], dtype=np.int8)

    def without(self, subject_id: str) -> "TrainingLibrary":
        """Leave-one-out view of the library."""
        kept = [e for e in self.entries if e.subject_id != subject_id]
        if len(kept) == len(self.entries):
            return self
        return TrainingLibrary(entries=kept)


@dataclass
class GradingParams:
    radius: int = 2
    k: int = 50
    search: int = 3
    epsilon: float | None = None  # default: 1e-12 * patch cardinality
    method: str = "exact"  # "exact" | "patchmatch"
    pm_iterations: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.radius < 1:
            raise DataError(f"radius must be >= 1, got {self.radius}")
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if self.search < 0:
            raise DataError(f"search window must be >= 0, got {self.search}")
        if self.epsilon is not None and not (self.epsilon > 0):
            raise DataError(f"epsilon must be positive, got {self.epsilon}")
        if self.method not in ("exact", "patchmatch"):
            raise DataError(f"method must be 'exact' or 'patchmatch', got {self.method!r}")
        if self.pm_iterations < 1:
            raise DataError(f"pm_iterations must be >= 1, got {self.pm_iterations}")

    @property
    def patch_cardinality(self) -> int:
        return (2 * self.radius + 1) ** 3

    @property
    def effective_epsilon(self) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return 1e-12 * self.patch_cardinality


@dataclass
class GradingMap:
    """Per-voxel grades in [-1, +1] on the mask; sentinel elsewhere."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    grades: np.ndarray  # float64, shape (nz, ny, nx), GRADE_SENTINEL off-mask
    mask: np.ndarray  # bool, shape (nz, ny, nx)

    def masked_grades(self) -> np.ndarray:
        return self.grades[self.mask]

    def to_volume(self) -> Volume3D:
        return Volume3D(dims=self.dims, spacing=self.spacing, data=self.grades)

    def mask_labelmap(self) -> LabelMap:
        return LabelMap(
            dims=self.dims, spacing=self.spacing, labels=self.mask.astype(np.uint16)
        )


@dataclass
class PatchMatchField:
    """Per-voxel nearest-patch candidates from the randomized search."""

    centers: np.ndarray  # (M, 3) int64, rows as (z, y, x)
    dist2: np.ndarray  # (M, K) float64
    status: np.ndarray  # (M, K) int8, template pathological status
    template_index: np.ndarray  # (M, K) int32
    linear_index: np.ndarray  # (M, K) int64
    counts: np.ndarray  # (M,) int32
    row_of: dict = field(repr=False, default_factory=dict)  # (i,j,k) -> row

    def neighbors(self, center: tuple[int, int, int]):
        """Candidate list [(dist2, status, template_index, linear_index)] at (i,j,k)."""
        m = self.row_of[tuple(int(c) for c in center)]
        n = int(self.counts[m])
        return [
            (
                float(self.dist2[m, j]),
                int(self.status[m, j]),
                int(self.template_index[m, j]),
                int(self.linear_index[m, j]),
            )
            for j in range(n)
        ]
