import os

# Allow 4 logical numba workers even on small hosts so thread-count
# invariance can be exercised; must happen before numba is imported.
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

from gbsg.volio import LabelMap, Volume3D
from gbsg.grading import TemplateEntry, TrainingLibrary, get_backend, USE_NUMBA


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure steady state."""
    if USE_NUMBA:
        get_backend("numba").warmup()
    yield


def make_volume(data, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(data, dtype=np.float32)
    nz, ny, nx = arr.shape
    return Volume3D(dims=(nx, ny, nz), spacing=spacing, data=arr)


def make_labelmap(labels, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(labels)
    nz, ny, nx = arr.shape
    return LabelMap(dims=(nx, ny, nz), spacing=spacing, labels=arr)


def make_library(volumes, statuses, labels=None):
    entries = []
    for idx, (v, s) in enumerate(zip(volumes, statuses)):
        vol = v if isinstance(v, Volume3D) else make_volume(v)
        lm = labels
        if lm is None:
            nz, ny, nx = vol.data.shape
            lm = make_labelmap(np.ones((nz, ny, nx), dtype=np.uint16))
        entries.append(
            TemplateEntry(volume=vol, labels=lm, status=s, subject_id=f"tmpl{idx}")
        )
    return TrainingLibrary(entries=entries)
