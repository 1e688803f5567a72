"""Synthetic registered cohorts for end-to-end validation.

Subjects share one template-space geometry: S non-overlapping axis-aligned
box structures over a smooth low-frequency background.  Disease groups add a
per-structure intensity offset only inside designated "affected" structures,
ordered CN <= sMCI <= pMCI <= AD; everything else is white noise plus an
optional global age drift.  All randomness derives from SynthSpec.seed, so
the same spec writes bit-identical files every time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, OverlappingStructures
from .rng import derive_seed
from .volio import (
    Cohort,
    LabelMap,
    SubjectRecord,
    Volume3D,
    write_labelmap,
    write_manifest,
    write_volume,
)

GROUP_ORDER = ("CN", "sMCI", "pMCI", "AD")


def uniform_perturbation(affected, cn=0.0, smci=0.1, pmci=0.4, ad=0.5):
    """Same severity profile for every affected structure."""
    prof = {"CN": cn, "sMCI": smci, "pMCI": pmci, "AD": ad}
    return {int(s): dict(prof) for s in affected}


@dataclass
class SynthSpec:
    dims: tuple[int, int, int] = (32, 32, 32)
    n_structures: int = 6
    perturbation: dict = field(default_factory=lambda: uniform_perturbation([1, 3, 5]))
    noise_sd: float = 0.1
    counts: dict = field(default_factory=lambda: {"CN": 10, "sMCI": 5, "pMCI": 5, "AD": 10})
    age_slope: float = 0.01
    seed: int = 0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.n_structures < 2:
            raise DataError(f"need at least 2 structures, got {self.n_structures}")
        if not (self.noise_sd >= 0):
            raise DataError("noise_sd must be >= 0")
        for g, c in self.counts.items():
            if g not in GROUP_ORDER:
                raise DataError(f"unknown group {g!r}")
            if c < 1:
                raise DataError(f"count for {g} must be >= 1")
        for sid, prof in self.perturbation.items():
            if not (1 <= int(sid) <= self.n_structures):
                raise DataError(f"perturbed structure {sid} outside 1..{self.n_structures}")
            sev = [prof.get(g, 0.0) for g in GROUP_ORDER]
            if not (sev[0] <= sev[1] <= sev[2] <= sev[3]):
                raise DataError(
                    f"structure {sid}: severities must be ordered CN<=sMCI<=pMCI<=AD, got {sev}"
                )


def _grid_shape(dims, s):
    """Balanced per-axis cell counts whose product covers s structures."""
    g = [1, 1, 1]
    while g[0] * g[1] * g[2] < s:
        axis = int(np.argmax([dims[i] / g[i] for i in range(3)]))
        g[axis] += 1
    return g


def place_structures(dims, n_structures) -> LabelMap:
    """Non-overlapping boxes on a grid of cells, 1-voxel margins."""
    nx, ny, nz = dims
    g = _grid_shape(dims, n_structures)
    cells = [dims[i] // g[i] for i in range(3)]
    if min(c - 2 for c in cells) < 1:
        raise OverlappingStructures(
            f"{n_structures} structures do not fit in dims {dims} without overlap"
        )
    labels = np.zeros((nz, ny, nx), np.uint16)
    sid = 0
    for cz in range(g[2]):
        for cy in range(g[1]):
            for cx in range(g[0]):
                sid += 1
                if sid > n_structures:
                    break
                x0 = cx * cells[0] + 1
                y0 = cy * cells[1] + 1
                z0 = cz * cells[2] + 1
                region = labels[z0 : z0 + cells[2] - 2,
                                y0 : y0 + cells[1] - 2,
                                x0 : x0 + cells[0] - 2]
                if (region != 0).any():
                    raise OverlappingStructures(f"structure {sid} overlaps a previous one")
                region[:] = sid
    return LabelMap(dims=dims, spacing=(1.0, 1.0, 1.0), labels=labels)


def _base_pattern(dims, seed) -> np.ndarray:
    nx, ny, nz = dims
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 101)))
    z, y, x = np.meshgrid(
        np.arange(nz) / nz, np.arange(ny) / ny, np.arange(nx) / nx, indexing="ij"
    )
    out = np.zeros((nz, ny, nx))
    for _ in range(4):
        fx, fy, fz = rng.integers(1, 4, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.3, 0.8)
        out += amp * (
            np.cos(2 * np.pi * fx * x + phase[0])
            * np.cos(2 * np.pi * fy * y + phase[1])
            * np.cos(2 * np.pi * fz * z + phase[2])
        )
    return out


def synth_cohort(spec: SynthSpec, out_dir) -> tuple[str, Cohort]:
    """Write volumes, a shared label map, and a manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    labels = place_structures(spec.dims, spec.n_structures)
    label_path = os.path.join(out_dir, "labels.lab")
    write_labelmap(labels, label_path)
    base = _base_pattern(spec.dims, spec.seed)
    offsets = {}
    for g in GROUP_ORDER:
        off = np.zeros(base.shape)
        for sid, prof in spec.perturbation.items():
            off[labels.labels == sid] += prof.get(g, 0.0)
        offsets[g] = off

    records = []
    idx = 0
    for g in GROUP_ORDER:
        for _ in range(spec.counts.get(g, 0)):
            sid = f"{g}{idx:04d}"
            rng = np.random.Generator(np.random.PCG64(derive_seed(spec.seed, 202, idx)))
            age = float(np.clip(rng.normal(75.0, 5.0), 55.0, 95.0))
            sex = "M" if rng.random() < 0.5 else "F"
            data = (
                base
                + offsets[g]
                + spec.age_slope * (age - 75.0)
                + spec.noise_sd * rng.standard_normal(base.shape)
            )
            vol = Volume3D(dims=spec.dims, spacing=spec.spacing, data=data.astype(np.float32))
            vol_path = os.path.join(out_dir, f"{sid}.vol")
            write_volume(vol, vol_path)
            records.append(
                SubjectRecord(subject_id=sid, group=g, age=round(age, 2), sex=sex,
                              volume_path=vol_path, label_path=label_path)
            )
            idx += 1
    cohort = Cohort(records=records)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(cohort, manifest_path)
    return manifest_path, cohort
