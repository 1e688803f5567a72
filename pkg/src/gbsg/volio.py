"""On-disk formats for volumes, label maps, and cohort manifests.

Volume file layout (all little-endian):

    bytes 0-7    magic ``GBSGVOL1``
    bytes 8-19   three u32 voxel counts (nx, ny, nz)
    bytes 20-31  three f32 spacings in mm (sx, sy, sz)
    byte  32     dtype code: 0 = f32 scalar volume, 1 = u16 label map
    bytes 33-    raw payload, x-fastest then y then z

In memory the payload is kept as a C-contiguous array of shape (nz, ny, nx)
so that x stays the fastest-varying axis; voxel (i, j, k) = (x, y, z) lives at
``data[k, j, i]`` and its linear index is ``i + nx*(j + ny*k)``.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimsMismatch,
    DuplicateId,
    HeaderMismatch,
    InvalidDims,
    IoFailure,
    LabelOverflow,
    MagicMismatch,
    MissingFile,
    NonFiniteData,
    SpacingMismatch,
    TruncatedFile,
    UnknownGroup,
    UnknownSex,
    UnparsableAge,
    WrongDtype,
)

MAGIC = b"GBSGVOL1"
DTYPE_SCALAR = 0
DTYPE_LABEL = 1

_HEADER = struct.Struct("<8s3I3fB")

GROUPS = ("CN", "sMCI", "pMCI", "AD")
SEXES = ("M", "F")

MANIFEST_HEADER = ["subject_id", "group", "age", "sex", "volume_path", "label_path"]


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise InvalidDims(f"voxel counts must be three positive integers, got {dims}")
    return dims


@dataclass
class Volume3D:
    """Dense 3D scalar field with voxel spacing."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray  # float32, shape (nz, ny, nx)

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        nx, ny, nz = self.dims
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.size != nx * ny * nz:
            raise InvalidDims(
                f"data has {arr.size} values, dims {self.dims} require {nx * ny * nz}"
            )
        self.data = np.ascontiguousarray(arr.reshape(nz, ny, nx))

    @property
    def n_voxels(self) -> int:
        return self.data.size


@dataclass
class LabelMap:
    """Dense 3D field of structure identifiers; 0 is background."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    labels: np.ndarray  # uint16, shape (nz, ny, nx)

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        nx, ny, nz = self.dims
        arr = np.asarray(self.labels)
        if arr.size != nx * ny * nz:
            raise InvalidDims(
                f"labels have {arr.size} values, dims {self.dims} require {nx * ny * nz}"
            )
        if np.issubdtype(arr.dtype, np.floating):
            if not np.all(arr == np.round(arr)):
                raise WrongDtype("label values must be integers")
        if arr.min() < 0:
            raise WrongDtype("label values must be non-negative")
        if arr.max() > np.iinfo(np.uint16).max:
            raise LabelOverflow(f"label {int(arr.max())} exceeds 65535")
        self.labels = np.ascontiguousarray(arr.reshape(nz, ny, nx).astype(np.uint16))

    def structure_ids(self) -> list[int]:
        """Sorted nonzero labels present in the map."""
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]


@dataclass
class SubjectRecord:
    subject_id: str
    group: str
    age: float
    sex: str
    volume_path: str
    label_path: str

    def __post_init__(self):
        if self.group not in GROUPS:
            raise UnknownGroup(f"group {self.group!r} not in {GROUPS}")
        if self.sex not in SEXES:
            raise UnknownSex(f"sex {self.sex!r} not in {SEXES}")
        if not (self.age > 0):
            raise UnparsableAge(f"age must be positive, got {self.age}")


@dataclass
class Cohort:
    records: list[SubjectRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.subject_id in seen:
                raise DuplicateId(f"duplicate subject_id {r.subject_id!r}")
            seen.add(r.subject_id)

    def __len__(self) -> int:
        return len(self.records)

    def by_group(self, *groups: str) -> list[SubjectRecord]:
        return [r for r in self.records if r.group in groups]

    def ids(self) -> list[str]:
        return [r.subject_id for r in self.records]


def _write_payload(path, dims, spacing, dtype_code, payload: bytes) -> None:
    header = _HEADER.pack(
        MAGIC,
        dims[0], dims[1], dims[2],
        spacing[0], spacing[1], spacing[2],
        dtype_code,
    )
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        try:
            if os.path.exists(tmp):
                os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"cannot write {path}: {e}") from e


def _read_header(path):
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IoFailure(f"cannot open {path}: {e}") from e
    with f:
        raw = f.read(_HEADER.size)
        if len(raw) < 8 or raw[:8] != MAGIC:
            raise MagicMismatch(f"{path}: bad magic {raw[:8]!r}")
        if len(raw) < _HEADER.size:
            raise TruncatedFile(f"{path}: header truncated")
        _, nx, ny, nz, sx, sy, sz, code = _HEADER.unpack(raw)
        if min(nx, ny, nz) == 0:
            raise InvalidDims(f"{path}: zero dimension in header")
        payload = f.read()
    return (nx, ny, nz), (sx, sy, sz), code, payload


def write_volume(v: Volume3D, path) -> None:
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteData("volume contains NaN or Inf")
    payload = np.ascontiguousarray(v.data, dtype="<f4").tobytes()
    _write_payload(path, v.dims, v.spacing, DTYPE_SCALAR, payload)


def read_volume(path) -> Volume3D:
    dims, spacing, code, payload = _read_header(path)
    if code != DTYPE_SCALAR:
        raise WrongDtype(f"{path}: dtype code {code}, expected scalar volume (0)")
    n = dims[0] * dims[1] * dims[2]
    if len(payload) < 4 * n:
        raise TruncatedFile(f"{path}: payload {len(payload)} bytes, expected {4 * n}")
    if len(payload) > 4 * n:
        raise TruncatedFile(f"{path}: {len(payload) - 4 * n} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteData(f"{path}: payload contains NaN or Inf")
    return Volume3D(dims=dims, spacing=spacing, data=data)


def write_labelmap(lm: LabelMap, path) -> None:
    arr = np.asarray(lm.labels)
    if arr.size and int(arr.max()) > np.iinfo(np.uint16).max:
        raise LabelOverflow(f"label {int(arr.max())} exceeds 65535")
    payload = np.ascontiguousarray(arr, dtype="<u2").tobytes()
    _write_payload(path, lm.dims, lm.spacing, DTYPE_LABEL, payload)


def read_labelmap(path) -> LabelMap:
    dims, spacing, code, payload = _read_header(path)
    if code != DTYPE_LABEL:
        raise WrongDtype(f"{path}: dtype code {code}, expected label map (1)")
    n = dims[0] * dims[1] * dims[2]
    if len(payload) < 2 * n:
        raise TruncatedFile(f"{path}: payload {len(payload)} bytes, expected {2 * n}")
    if len(payload) > 2 * n:
        raise TruncatedFile(f"{path}: {len(payload) - 2 * n} trailing bytes")
    labels = np.frombuffer(payload, dtype="<u2").astype(np.uint16)
    return LabelMap(dims=dims, spacing=spacing, labels=labels)


def validate_pair(v: Volume3D, lm: LabelMap) -> None:
    """Volume and label map must share geometry (spacing to 1e-6 relative)."""
    if tuple(v.dims) != tuple(lm.dims):
        raise DimsMismatch(f"dims {v.dims} vs {lm.dims}")
    for a, b in zip(v.spacing, lm.spacing):
        scale = max(abs(a), abs(b), 1e-30)
        if abs(a - b) > 1e-6 * scale:
            raise SpacingMismatch(f"spacing {v.spacing} vs {lm.spacing}")


def read_manifest(path, check_files: bool = True) -> Cohort:
    """Parse a cohort manifest CSV.

    Paths inside the manifest are resolved relative to the manifest's own
    directory.  Group and sex are case-sensitive.
    """
    base = os.path.dirname(os.path.abspath(path))
    try:
        f = open(path, newline="")
    except OSError as e:
        raise MissingFile(f"cannot open manifest {path}: {e}") from e
    records = []
    with f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise HeaderMismatch(
                f"{path}: header {header!r}, expected {MANIFEST_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise HeaderMismatch(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            sid, group, age_s, sex, vol_p, lab_p = row
            try:
                age = float(age_s)
            except ValueError:
                raise UnparsableAge(f"{path}:{lineno}: age {age_s!r}") from None
            vol_p = vol_p if os.path.isabs(vol_p) else os.path.join(base, vol_p)
            lab_p = lab_p if os.path.isabs(lab_p) else os.path.join(base, lab_p)
            records.append(
                SubjectRecord(
                    subject_id=sid, group=group, age=age, sex=sex,
                    volume_path=vol_p, label_path=lab_p,
                )
            )
    cohort = Cohort(records=records)
    if check_files:
        for r in cohort.records:
            for p in (r.volume_path, r.label_path):
                if not os.path.exists(p):
                    raise MissingFile(f"{r.subject_id}: missing file {p}")
    return cohort


def write_manifest(cohort: Cohort, path, relative_to: str | None = None) -> None:
    """Write a manifest CSV; paths are made relative to the manifest dir."""
    base = relative_to or os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_HEADER)
        for r in cohort.records:
            w.writerow([
                r.subject_id,
                r.group,
                f"{r.age:g}",
                r.sex,
                os.path.relpath(r.volume_path, base),
                os.path.relpath(r.label_path, base),
            ])
