"""numba-compiled patch-search kernels.

Volumes are float64 arrays of shape (nz, ny, nx) with x fastest; candidate
linear indices follow that layout.  All randomness is counter-based
(splitmix64 of logical keys), so results are independent of worker count and
bit-identical for a fixed seed.  Distance accumulation is plain sequential
float64 in patch order; early aborts only skip candidates that could not be
accepted, so they never change results.
"""

import numpy as np
from numba import njit, prange

U64 = np.uint64

_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _mix64(x):
    x = x + _GOLDEN
    x = (x ^ (x >> U64(30))) * _MIX1
    x = (x ^ (x >> U64(27))) * _MIX2
    return x ^ (x >> U64(31))


@njit(cache=True, inline="always")
def _rand_below(seed, a, b, c, n):
    h = _mix64(seed)
    h = _mix64(h ^ U64(a))
    h = _mix64(h ^ U64(b))
    h = _mix64(h ^ U64(c))
    return np.int64(((h >> U64(32)) * U64(n)) >> U64(32))


@njit(cache=True, inline="always")
def _dist_patch(qvals, tvol, qz, qy, qx, r, thr):
    """Squared L2 between explicit patch values and the template patch at q.

    Returns inf when the partial sum reaches `thr` (candidate cannot be
    accepted); the accumulation order is fixed (x fastest).
    """
    d = 0.0
    ii = 0
    for dz in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                diff = qvals[ii] - tvol[qz + dz, qy + dy, qx + dx]
                d += diff * diff
                ii += 1
            if d >= thr:
                return np.inf
    return d


@njit(cache=True, inline="always")
def _dist_vols(vol, cz, cy, cx, tvol, qz, qy, qx, r, thr):
    """Same as _dist_patch with the query read straight from the volume."""
    d = 0.0
    for dz in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                diff = vol[cz + dz, cy + dy, cx + dx] - tvol[qz + dz, qy + dy, qx + dx]
                d += diff * diff
            if d >= thr:
                return np.inf
    return d


@njit(cache=True, inline="always")
def _insert_sorted(out_d, out_t, out_l, n, k, d, t, lin):
    """Keep the k best candidates sorted ascending; equal distances keep the
    earlier arrival, which is the canonical (template, linear index) order
    for the exact scan."""
    if n < k:
        pos = n
        n += 1
    else:
        pos = k - 1
    j = pos
    while j > 0 and out_d[j - 1] > d:
        out_d[j] = out_d[j - 1]
        out_t[j] = out_t[j - 1]
        out_l[j] = out_l[j - 1]
        j -= 1
    out_d[j] = d
    out_t[j] = t
    out_l[j] = lin
    return n


@njit(cache=True)
def exact_knn_single(qvals, cz, cy, cx, tmpl, r, s, k, out_d, out_t, out_l):
    """Exhaustive window scan around (cz,cy,cx) over all templates.

    Candidates are template-space centers within Chebyshev distance s of the
    query center that keep the whole patch inside the volume; they are
    visited in (template, linear index) order.  Returns the number kept.
    """
    T, nz, ny, nx = tmpl.shape
    zlo = max(cz - s, r)
    zhi = min(cz + s, nz - r - 1)
    ylo = max(cy - s, r)
    yhi = min(cy + s, ny - r - 1)
    xlo = max(cx - s, r)
    xhi = min(cx + s, nx - r - 1)
    if zlo > zhi or ylo > yhi or xlo > xhi:
        return 0
    n = 0
    for t in range(T):
        tvol = tmpl[t]
        for qz in range(zlo, zhi + 1):
            for qy in range(ylo, yhi + 1):
                for qx in range(xlo, xhi + 1):
                    thr = out_d[k - 1] if n == k else np.inf
                    d = _dist_patch(qvals, tvol, qz, qy, qx, r, thr)
                    if d == np.inf:
                        continue
                    lin = qx + nx * (qy + ny * qz)
                    n = _insert_sorted(out_d, out_t, out_l, n, k, d, t, lin)
    return n


@njit(cache=True, parallel=True)
def exact_knn_batch(vol, tmpl, centers, r, s, k, out_d, out_t, out_l, out_n):
    M = centers.shape[0]
    side = 2 * r + 1
    ps = side * side * side
    for m in prange(M):
        cz = centers[m, 0]
        cy = centers[m, 1]
        cx = centers[m, 2]
        q = np.empty(ps)
        ii = 0
        for dz in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    q[ii] = vol[cz + dz, cy + dy, cx + dx]
                    ii += 1
        out_n[m] = exact_knn_single(
            q, cz, cy, cx, tmpl, r, s, k, out_d[m], out_t[m], out_l[m]
        )


@njit(cache=True, inline="always")
def _pm_eval(vol, tvol, t, cz, cy, cx, qz, qy, qx, r, k,
             bd, oz, oy, ox, lz, row, out_d, out_t, out_l, out_n, nx, ny):
    """Evaluate template position q for voxel c; update the per-template best
    offset and offer the candidate to the voxel's k-best list."""
    thr = bd[lz, cy, cx]
    if row >= 0:
        hthr = np.inf if out_n[row] < k else out_d[row, k - 1]
        if hthr > thr:
            thr = hthr
    d = _dist_vols(vol, cz, cy, cx, tvol, qz, qy, qx, r, thr)
    if d == np.inf:
        return
    if d < bd[lz, cy, cx]:
        bd[lz, cy, cx] = d
        oz[lz, cy, cx] = qz - cz
        oy[lz, cy, cx] = qy - cy
        ox[lz, cy, cx] = qx - cx
    if row < 0:
        return
    n = out_n[row]
    if n == k and d >= out_d[row, k - 1]:
        return
    lin = qx + nx * (qy + ny * qz)
    for j in range(n):
        if out_t[row, j] == t and out_l[row, j] == lin:
            return
    out_n[row] = _insert_sorted(out_d[row], out_t[row], out_l[row], n, k, d, t, lin)


@njit(cache=True, inline="always")
def _clamp(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit(cache=True, parallel=True)
def patchmatch_knn_batch(vol, tmpl, row_of, r, s, k, iters, seed, slab_z,
                         out_d, out_t, out_l, out_n):
    """Randomized nearest-patch search with propagation and shrinking random
    search, restricted per voxel to the window of half-width s.

    Each z-slab is processed independently with draws keyed on the global
    voxel index, so the result does not depend on the worker count.
    Propagation seeds from the identity offset (volumes are registered) and
    one random offset, then alternates forward and reverse scans.
    """
    T = tmpl.shape[0]
    nz, ny, nx = vol.shape
    n_slabs = (nz + slab_z - 1) // slab_z
    useed = U64(seed)
    for slab in prange(n_slabs):
        z0 = slab * slab_z
        z1 = min(z0 + slab_z, nz)
        zlo = max(z0, r)
        zhi = min(z1 - 1, nz - r - 1)
        ylo = r
        yhi = ny - r - 1
        xlo = r
        xhi = nx - r - 1
        if zlo > zhi or ylo > yhi or xlo > xhi:
            continue
        sz = z1 - z0
        for t in range(T):
            tvol = tmpl[t]
            bd = np.full((sz, ny, nx), np.inf)
            oz = np.zeros((sz, ny, nx), np.int64)
            oy = np.zeros((sz, ny, nx), np.int64)
            ox = np.zeros((sz, ny, nx), np.int64)
            # init: identity offset, then one random offset
            for z in range(zlo, zhi + 1):
                lz = z - z0
                for y in range(ylo, yhi + 1):
                    for x in range(xlo, xhi + 1):
                        row = row_of[z, y, x]
                        lin = x + nx * (y + ny * z)
                        _pm_eval(vol, tvol, t, z, y, x, z, y, x, r, k,
                                 bd, oz, oy, ox, lz, row,
                                 out_d, out_t, out_l, out_n, nx, ny)
                        wzlo = max(z - s, r)
                        wzhi = min(z + s, nz - r - 1)
                        wylo = max(y - s, r)
                        wyhi = min(y + s, ny - r - 1)
                        wxlo = max(x - s, r)
                        wxhi = min(x + s, nx - r - 1)
                        qz = wzlo + _rand_below(useed, t, lin, 0, wzhi - wzlo + 1)
                        qy = wylo + _rand_below(useed, t, lin, 1, wyhi - wylo + 1)
                        qx = wxlo + _rand_below(useed, t, lin, 2, wxhi - wxlo + 1)
                        _pm_eval(vol, tvol, t, z, y, x, qz, qy, qx, r, k,
                                 bd, oz, oy, ox, lz, row,
                                 out_d, out_t, out_l, out_n, nx, ny)
            for it in range(iters):
                for direction in range(2):
                    if direction == 0:
                        za, zb, step = zlo, zhi + 1, 1
                    else:
                        za, zb, step = zhi, zlo - 1, -1
                    for z in range(za, zb, step):
                        lz = z - z0
                        if direction == 0:
                            ya, yb = ylo, yhi + 1
                            xa, xb = xlo, xhi + 1
                        else:
                            ya, yb = yhi, ylo - 1
                            xa, xb = xhi, xlo - 1
                        for y in range(ya, yb, step):
                            for x in range(xa, xb, step):
                                row = row_of[z, y, x]
                                lin = x + nx * (y + ny * z)
                                wzlo = max(z - s, r)
                                wzhi = min(z + s, nz - r - 1)
                                wylo = max(y - s, r)
                                wyhi = min(y + s, ny - r - 1)
                                wxlo = max(x - s, r)
                                wxhi = min(x + s, nx - r - 1)
                                # propagation from the three scan predecessors
                                px = x - step
                                if xlo <= px <= xhi:
                                    qz = _clamp(z + oz[lz, y, px], wzlo, wzhi)
                                    qy = _clamp(y + oy[lz, y, px], wylo, wyhi)
                                    qx = _clamp(x + ox[lz, y, px], wxlo, wxhi)
                                    _pm_eval(vol, tvol, t, z, y, x, qz, qy, qx, r, k,
                                             bd, oz, oy, ox, lz, row,
                                             out_d, out_t, out_l, out_n, nx, ny)
                                py = y - step
                                if ylo <= py <= yhi:
                                    qz = _clamp(z + oz[lz, py, x], wzlo, wzhi)
                                    qy = _clamp(y + oy[lz, py, x], wylo, wyhi)
                                    qx = _clamp(x + ox[lz, py, x], wxlo, wxhi)
                                    _pm_eval(vol, tvol, t, z, y, x, qz, qy, qx, r, k,
                                             bd, oz, oy, ox, lz, row,
                                             out_d, out_t, out_l, out_n, nx, ny)
                                pz = z - step
                                if zlo <= pz <= zhi:
                                    lpz = pz - z0
                                    qz = _clamp(z + oz[lpz, y, x], wzlo, wzhi)
                                    qy = _clamp(y + oy[lpz, y, x], wylo, wyhi)
                                    qx = _clamp(x + ox[lpz, y, x], wxlo, wxhi)
                                    _pm_eval(vol, tvol, t, z, y, x, qz, qy, qx, r, k,
                                             bd, oz, oy, ox, lz, row,
                                             out_d, out_t, out_l, out_n, nx, ny)
                                # shrinking random search around the current best
                                w = s
                                lev = 0
                                while w >= 1:
                                    bz = z + oz[lz, y, x]
                                    by = y + oy[lz, y, x]
                                    bx = x + ox[lz, y, x]
                                    code = 16 + ((it * 2 + direction) * 64 + lev) * 4
                                    dz = _rand_below(useed, t, lin, code, 2 * w + 1) - w
                                    dy = _rand_below(useed, t, lin, code + 1, 2 * w + 1) - w
                                    dx = _rand_below(useed, t, lin, code + 2, 2 * w + 1) - w
                                    qz = _clamp(bz + dz, wzlo, wzhi)
                                    qy = _clamp(by + dy, wylo, wyhi)
                                    qx = _clamp(bx + dx, wxlo, wxhi)
                                    _pm_eval(vol, tvol, t, z, y, x, qz, qy, qx, r, k,
                                             bd, oz, oy, ox, lz, row,
                                             out_d, out_t, out_l, out_n, nx, ny)
                                    w >>= 1
                                    lev += 1


def warmup():
    """Trigger JIT compilation on a tiny problem (cached across processes)."""
    vol = np.zeros((4, 4, 4), dtype=np.float64)
    tmpl = np.zeros((1, 4, 4, 4), dtype=np.float64)
    centers = np.array([[1, 1, 1]], dtype=np.int64)
    k = 2
    out_d = np.full((1, k), np.inf)
    out_t = np.full((1, k), -1, np.int32)
    out_l = np.full((1, k), -1, np.int64)
    out_n = np.zeros(1, np.int32)
    exact_knn_batch(vol, tmpl, centers, 1, 1, k, out_d, out_t, out_l, out_n)
    row_of = np.full((4, 4, 4), -1, np.int64)
    row_of[1, 1, 1] = 0
    out_d[:] = np.inf
    out_t[:] = -1
    out_l[:] = -1
    out_n[:] = 0
    patchmatch_knn_batch(vol, tmpl, row_of, 1, 1, k, 1, 0, 8,
                         out_d, out_t, out_l, out_n)
