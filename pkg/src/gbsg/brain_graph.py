"""Per-subject graph of structure grading statistics.

One vertex per labeled structure carries the mean grade of its voxels; each
edge carries exp(-d^2 / sigma^2) where d is the Wasserstein-1 distance
between the two structures' grading histograms.  Histograms use Sturges'
bin count over the fixed range [-1, +1]; histograms with different bin
counts are compared after re-binning onto the finer of the two grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CanonicalOrderMismatch,
    DataError,
    NotNormalized,
    StructureTooSmall,
    TooFewStructures,
)
from .grading.types import GradingMap
from .volio import LabelMap


def sturges_bins(n: int) -> int:
    """ceil(1 + log2(n)) bins for n samples."""
    n = int(n)
    if n < 1:
        raise DataError(f"sample count must be >= 1, got {n}")
    return max(1, math.ceil(1.0 + math.log2(n)))


@dataclass
class StructureHistogram:
    structure_id: int
    bin_count: int
    bin_edges: np.ndarray  # length bin_count + 1, spanning [-1, +1]
    masses: np.ndarray  # length bin_count, sums to 1
    n: int

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        if self.masses.size != self.bin_count or self.bin_edges.size != self.bin_count + 1:
            raise DataError("histogram arrays inconsistent with bin count")
        if abs(float(self.masses.sum()) - 1.0) > 1e-9:
            raise NotNormalized(f"masses sum to {self.masses.sum()}")


@dataclass
class GraphParams:
    sigma_mode: str = "median"  # "median" | "fixed"
    sigma: float | None = None
    min_voxels: int = 10

    def __post_init__(self):
        if self.sigma_mode not in ("median", "fixed"):
            raise DataError(f"sigma_mode must be 'median' or 'fixed', got {self.sigma_mode!r}")
        if self.sigma_mode == "fixed" and not (self.sigma and self.sigma > 0):
            raise DataError("fixed sigma mode requires sigma > 0")
        if self.min_voxels < 1:
            raise DataError(f"min_voxels must be >= 1, got {self.min_voxels}")


@dataclass
class BrainGraph:
    """Complete undirected graph over surviving structures.

    Edges are stored once in canonical pair order: (i, j) with i < j by
    position in the sorted structure-id list.
    """

    structure_ids: list[int]
    gamma: np.ndarray  # (N,) mean grade per structure
    distances: np.ndarray  # (N*(N-1)/2,) Wasserstein-1 distances
    weights: np.ndarray  # (N*(N-1)/2,) edge weights in (0, 1]
    sigma: float
    dropped: list[tuple[int, int]] = field(default_factory=list)  # (id, n_voxels)

    @property
    def n_vertices(self) -> int:
        return len(self.structure_ids)

    @property
    def n_edges(self) -> int:
        n = self.n_vertices
        return n * (n - 1) // 2


def structure_histogram(gm: GradingMap, lm: LabelMap, structure_id: int,
                        min_voxels: int = 1) -> StructureHistogram:
    """Normalized histogram of the structure's masked grades.

    Bins are uniform over [-1, +1]; a grade of exactly +1 lands in the top
    bin.  Raises StructureTooSmall below `min_voxels` masked voxels.
    """
    sel = gm.mask & (lm.labels == structure_id)
    grades = gm.grades[sel]
    n = int(grades.size)
    if n < min_voxels:
        raise StructureTooSmall(
            f"structure {structure_id}: {n} masked voxels < {min_voxels}"
        )
    b = sturges_bins(n)
    counts, edges = np.histogram(grades, bins=b, range=(-1.0, 1.0))
    return StructureHistogram(
        structure_id=int(structure_id), bin_count=b, bin_edges=edges,
        masses=counts / n, n=n,
    )


def vertex_value(hist: StructureHistogram, grades: np.ndarray) -> float:
    """Mean of the raw grade values (not the binned approximation)."""
    grades = np.asarray(grades, dtype=np.float64)
    if grades.size != hist.n:
        raise DataError(f"got {grades.size} grades for a histogram built from {hist.n}")
    return float(grades.mean())


def _rebin_to(masses: np.ndarray, b_src: int, b_dst: int) -> np.ndarray:
    """Split masses of a uniform b_src-bin grid over [-1,1] onto b_dst bins,
    proportionally to overlap length."""
    if b_src == b_dst:
        return masses.astype(np.float64)
    out = np.zeros(b_dst, dtype=np.float64)
    src_edges = np.linspace(-1.0, 1.0, b_src + 1)
    dst_edges = np.linspace(-1.0, 1.0, b_dst + 1)
    width_src = 2.0 / b_src
    for i in range(b_src):
        m = masses[i]
        if m == 0:
            continue
        lo, hi = src_edges[i], src_edges[i + 1]
        j0 = max(0, int(np.floor((lo + 1.0) / 2.0 * b_dst)))
        j1 = min(b_dst - 1, int(np.ceil((hi + 1.0) / 2.0 * b_dst)))
        for j in range(j0, j1 + 1):
            ov = min(hi, dst_edges[j + 1]) - max(lo, dst_edges[j])
            if ov > 0:
                out[j] += m * ov / width_src
    return out


def wasserstein1(a: StructureHistogram, b: StructureHistogram) -> float:
    """Wasserstein-1 distance between two grading histograms.

    Both are re-binned onto the finer of the two grids, then
    d = sum_k |CDF_a(k) - CDF_b(k)| * bin_width.
    """
    for h in (a, b):
        if abs(float(h.masses.sum()) - 1.0) > 1e-9:
            raise NotNormalized(f"histogram {h.structure_id} is not normalized")
    bins = max(a.bin_count, b.bin_count)
    ma = _rebin_to(a.masses, a.bin_count, bins)
    mb = _rebin_to(b.masses, b.bin_count, bins)
    delta = 2.0 / bins
    return float(np.abs(np.cumsum(ma - mb)).sum() * delta)


def edge_weight(d: float, sigma: float) -> float:
    """Gaussian kernel exp(-d^2 / sigma^2); 1 at d=0, strictly decreasing."""
    if d < 0:
        raise DataError(f"distance must be >= 0, got {d}")
    if not sigma > 0:
        raise DataError(f"sigma must be > 0, got {sigma}")
    return float(math.exp(-(d * d) / (sigma * sigma)))


def pair_order(ids: list[int]) -> list[tuple[int, int]]:
    """Canonical (id_i, id_j) edge order for a sorted id list."""
    return [(ids[i], ids[j]) for i in range(len(ids)) for j in range(i + 1, len(ids))]


def build_graph(gm: GradingMap, lm: LabelMap, params: GraphParams) -> BrainGraph:
    """Complete graph over structures with at least min_voxels masked voxels.

    sigma is the configured fixed value, or this subject's median pairwise
    Wasserstein distance (fallback 1.0 when the median is 0).
    """
    ids = []
    dropped = []
    hists = {}
    gammas = {}
    for sid in lm.structure_ids():
        try:
            h = structure_histogram(gm, lm, sid, params.min_voxels)
        except StructureTooSmall:
            n = int((gm.mask & (lm.labels == sid)).sum())
            dropped.append((sid, n))
            continue
        ids.append(sid)
        hists[sid] = h
        grades = gm.grades[gm.mask & (lm.labels == sid)]
        gammas[sid] = vertex_value(h, grades)
    if len(ids) < 2:
        raise TooFewStructures(
            f"only {len(ids)} structures with >= {params.min_voxels} graded voxels"
        )
    ids.sort()
    pairs = pair_order(ids)
    dists = np.array([wasserstein1(hists[i], hists[j]) for i, j in pairs])
    if params.sigma_mode == "fixed":
        sigma = float(params.sigma)
    else:
        sigma = float(np.median(dists))
        if sigma == 0.0:
            sigma = 1.0
    weights = np.array([edge_weight(d, sigma) for d in dists])
    return BrainGraph(
        structure_ids=ids,
        gamma=np.array([gammas[i] for i in ids]),
        distances=dists,
        weights=weights,
        sigma=sigma,
        dropped=dropped,
    )


def feature_names(canonical_ids: list[int]) -> list[str]:
    names = [f"V:{i}" for i in canonical_ids]
    names += [f"E:{i}-{j}" for i, j in pair_order(list(canonical_ids))]
    return names


def graph_to_features(bg: BrainGraph, canonical_ids: list[int]) -> np.ndarray:
    """Flatten to the cohort's canonical order: all vertex values, then all
    edge weights.  Entries touching a structure absent from this subject are
    NaN and must be imputed at cohort level."""
    canon = list(canonical_ids)
    if sorted(canon) != canon:
        raise CanonicalOrderMismatch("canonical id list must be sorted")
    extra = set(bg.structure_ids) - set(canon)
    if extra:
        raise CanonicalOrderMismatch(f"graph has structures outside the canonical list: {sorted(extra)}")
    n = len(canon)
    pos = {sid: i for i, sid in enumerate(bg.structure_ids)}
    out = np.full(n + n * (n - 1) // 2, np.nan)
    for i, sid in enumerate(canon):
        if sid in pos:
            out[i] = bg.gamma[pos[sid]]
    # local edge lookup keyed by id pair
    local = {}
    for (a, b), w in zip(pair_order(bg.structure_ids), bg.weights):
        local[(a, b)] = w
    for e, (a, b) in enumerate(pair_order(canon)):
        if (a, b) in local:
            out[n + e] = local[(a, b)]
    return out


def impute_features(matrix: np.ndarray, names: list[str], train_mask: np.ndarray):
    """Fill NaN holes so the design matrix is rectangular.

    Vertex features impute to 0; edge features impute to the mean of the
    training rows where the edge exists (1.0 if it exists in none).  Returns
    (imputed matrix, list of "row,column" imputation events).
    """
    x = np.array(matrix, dtype=np.float64)
    train_mask = np.asarray(train_mask, dtype=bool)
    events = []
    for col, name in enumerate(names):
        hole = np.isnan(x[:, col])
        if not hole.any():
            continue
        if name.startswith("V:"):
            fill = 0.0
        else:
            tr = x[train_mask, col]
            tr = tr[~np.isnan(tr)]
            fill = float(tr.mean()) if tr.size else 1.0
        for row in np.nonzero(hole)[0]:
            events.append(f"{row},{name}")
        x[hole, col] = fill
    return x, events


def write_graph_csv(bg: BrainGraph, path) -> None:
    with open(path, "w") as f:
        f.write("# vertices\n")
        for sid, g in zip(bg.structure_ids, bg.gamma):
            f.write(f"{sid},{g:.12g}\n")
        f.write("# edges\n")
        for (a, b), d, w in zip(pair_order(bg.structure_ids), bg.distances, bg.weights):
            f.write(f"{a},{b},{d:.12g},{w:.12g}\n")
