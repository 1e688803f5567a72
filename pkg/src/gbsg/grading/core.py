"""Voxel-wise patch-based grading against a labeled template library.

Every graded voxel receives a weighted vote of its K most similar template
patches: weight exp(-d2 / (d2_min + eps)) and vote p in {-1 CN-like, +1 ... }
-- template status -1 for AD, +1 for CN -- giving a grade in [-1, +1].
Voxels closer than the patch radius to a volume face are never graded.
"""

from __future__ import annotations

import numpy as np

from ..errors import (
    DimsMismatch,
    EmptyCandidateSet,
    EmptyNeighborhood,
    OutOfBounds,
    RadiusMismatch,
)
from ..volio import LabelMap, Volume3D, validate_pair
from ._backend import get_backend, set_threads
from .types import (
    GRADE_SENTINEL,
    GradingMap,
    GradingParams,
    Patch,
    PatchMatchField,
    TrainingLibrary,
)

SLAB_Z = 8


def _as_f64(v: Volume3D | np.ndarray) -> np.ndarray:
    if isinstance(v, Volume3D):
        return v.data.astype(np.float64)
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 3:
        raise DimsMismatch(f"expected a 3D array, got {arr.ndim}D")
    return arr


def extract_patch(v: Volume3D | np.ndarray, center, radius: int) -> Patch:
    """Cube of side 2r+1 around (i, j, k), values in x-fastest order."""
    arr = _as_f64(v)
    nz, ny, nx = arr.shape
    i, j, k = (int(c) for c in center)
    r = int(radius)
    if not (r <= i <= nx - r - 1 and r <= j <= ny - r - 1 and r <= k <= nz - r - 1):
        raise OutOfBounds(
            f"patch of radius {r} at {center} leaves the {nx}x{ny}x{nz} volume"
        )
    cube = arr[k - r : k + r + 1, j - r : j + r + 1, i - r : i + r + 1]
    return Patch(radius=r, values=cube.ravel(), center=(i, j, k))


def patch_distance(p: Patch, q: Patch) -> float:
    """Sum of squared elementwise differences."""
    if p.radius != q.radius:
        raise RadiusMismatch(f"radii differ: {p.radius} vs {q.radius}")
    diff = p.values - q.values
    return float(np.dot(diff, diff))


def knn_exact(query: Patch, lib: TrainingLibrary, params: GradingParams,
              backend: str | None = None):
    """K nearest template patches within the search window of the query center.

    Candidates are every template patch centered within Chebyshev distance
    `params.search` of the query center (patch fully inside the volume),
    across all templates; ties broken by (template index, linear index).
    Returns [(dist2, status, template_index, linear_index)], ascending.
    """
    impl = get_backend(backend)
    tmpl = lib.stacked_volumes()
    status = lib.statuses()
    i, j, k = query.center
    K = params.k
    out_d = np.full(K, np.inf)
    out_t = np.full(K, -1, np.int32)
    out_l = np.full(K, -1, np.int64)
    n = impl.exact_knn_single(
        np.asarray(query.values, dtype=np.float64),
        int(k), int(j), int(i),
        tmpl, params.radius, params.search, K, out_d, out_t, out_l,
    )
    n = int(n)
    if n == 0:
        raise EmptyCandidateSet(
            f"no valid template patch centers within window {params.search} of {query.center}"
        )
    return [
        (float(out_d[m]), int(status[out_t[m]]), int(out_t[m]), int(out_l[m]))
        for m in range(n)
    ]


def _interior_mask(shape, r: int) -> np.ndarray:
    nz, ny, nx = shape
    m = np.zeros(shape, dtype=bool)
    if nz > 2 * r and ny > 2 * r and nx > 2 * r:
        m[r : nz - r, r : ny - r, r : nx - r] = True
    return m


def _masked_centers(mask: np.ndarray) -> np.ndarray:
    """Masked voxel coordinates as (M, 3) rows of (z, y, x), linear order."""
    return np.argwhere(mask).astype(np.int64)


def knn_patchmatch(test: Volume3D | np.ndarray, lib: TrainingLibrary,
                   params: GradingParams, mask: np.ndarray | None = None,
                   backend: str | None = None) -> PatchMatchField:
    """Approximate K-nearest patch field via randomized search.

    For every masked interior voxel, candidates found by identity+random
    initialization, forward/reverse scan propagation, and shrinking random
    search are accumulated into a K-best list.  Every returned distance is a
    true squared distance to a real template patch; runs are bit-reproducible
    for a fixed seed and independent of the worker count.
    """
    impl = get_backend(backend)
    vol = _as_f64(test)
    tmpl = lib.stacked_volumes()
    if vol.shape != tmpl.shape[1:]:
        raise DimsMismatch(f"test {vol.shape} vs library {tmpl.shape[1:]}")
    status = lib.statuses()
    r, K = params.radius, params.k
    interior = _interior_mask(vol.shape, r)
    full = interior if mask is None else (np.asarray(mask, dtype=bool) & interior)
    centers = _masked_centers(full)
    M = centers.shape[0]
    if M == 0:
        raise EmptyCandidateSet("mask contains no interior voxel")
    row_of = np.full(vol.shape, -1, dtype=np.int64)
    row_of[full] = np.arange(M)
    out_d = np.full((M, K), np.inf)
    out_t = np.full((M, K), -1, np.int32)
    out_l = np.full((M, K), -1, np.int64)
    out_n = np.zeros(M, np.int32)
    impl.patchmatch_knn_batch(
        vol, tmpl, row_of, r, params.search, K,
        params.pm_iterations, params.seed, SLAB_Z,
        out_d, out_t, out_l, out_n,
    )
    cand_status = np.where(out_t >= 0, status[np.clip(out_t, 0, None)], 0).astype(np.int8)
    rows = {(int(c[2]), int(c[1]), int(c[0])): m for m, c in enumerate(centers)}
    return PatchMatchField(
        centers=centers, dist2=out_d, status=cand_status,
        template_index=out_t, linear_index=out_l, counts=out_n, row_of=rows,
    )


def grade_voxel(neighbors, epsilon: float) -> float:
    """Weighted vote over (dist2, status, ...) candidates.

    The weight kernel divides by (d2_min + epsilon), so the best candidate
    always contributes at least exp(-1), and exactly 1 when d2_min == 0.
    """
    if len(neighbors) == 0:
        raise EmptyNeighborhood("no candidate patches to vote")
    d = np.array([nb[0] for nb in neighbors], dtype=np.float64)
    p = np.array([nb[1] for nb in neighbors], dtype=np.float64)
    if np.any(d < 0):
        raise EmptyNeighborhood("negative squared distance")
    w = np.exp(-d / (d.min() + epsilon))
    return float(np.dot(w, p) / w.sum())


def _grades_from_rows(dist2, tidx, counts, status, epsilon) -> np.ndarray:
    M, K = dist2.shape
    valid = np.arange(K)[None, :] < counts[:, None]
    d = np.where(valid, dist2, np.inf)
    dmin = d.min(axis=1)
    with np.errstate(over="ignore"):
        w = np.where(valid, np.exp(-(np.where(valid, d, 0.0)) / (dmin + epsilon)[:, None]), 0.0)
    p = np.where(valid, status[np.clip(tidx, 0, None)].astype(np.float64), 0.0)
    return (w * p).sum(axis=1) / w.sum(axis=1)


def grade_volume(test: Volume3D, mask_labels: LabelMap, lib: TrainingLibrary,
                 params: GradingParams, backend: str | None = None,
                 threads: int | None = None) -> GradingMap:
    """Grade every interior voxel with a nonzero structure label."""
    validate_pair(test, mask_labels)
    if tuple(test.dims) != tuple(lib.dims):
        raise DimsMismatch(f"test dims {test.dims} vs library dims {lib.dims}")
    impl = get_backend(backend)
    if threads is not None:
        set_threads(threads)
    vol = test.data.astype(np.float64)
    tmpl = lib.stacked_volumes()
    status = lib.statuses()
    r, K = params.radius, params.k
    mask = (mask_labels.labels != 0) & _interior_mask(vol.shape, r)
    grades = np.full(vol.shape, GRADE_SENTINEL, dtype=np.float64)
    centers = _masked_centers(mask)
    M = centers.shape[0]
    if M > 0:
        out_d = np.full((M, K), np.inf)
        out_t = np.full((M, K), -1, np.int32)
        out_l = np.full((M, K), -1, np.int64)
        out_n = np.zeros(M, np.int32)
        if params.method == "exact":
            impl.exact_knn_batch(vol, tmpl, centers, r, params.search, K,
                                 out_d, out_t, out_l, out_n)
        else:
            row_of = np.full(vol.shape, -1, dtype=np.int64)
            row_of[mask] = np.arange(M)
            impl.patchmatch_knn_batch(
                vol, tmpl, row_of, r, params.search, K,
                params.pm_iterations, params.seed, SLAB_Z,
                out_d, out_t, out_l, out_n,
            )
        if np.any(out_n == 0):
            raise EmptyNeighborhood("a masked voxel received no candidate")
        g = _grades_from_rows(out_d, out_t, out_n, status, params.effective_epsilon)
        grades[mask] = g
    return GradingMap(dims=test.dims, spacing=test.spacing, grades=grades, mask=mask)
