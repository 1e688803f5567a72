"""Pure-NumPy fallback for the patch-search kernels.

Mirrors the numba backend's semantics: same candidate sets, same tie rules,
same counter-based random draws.  Distances are computed with vectorized
NumPy reductions, so on non-integer data the two backends can differ by
float-summation roundoff; on integer-valued volumes they agree bit-exactly.
Intended for small problems and as a correctness reference.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..rng import rand_below


def exact_knn_single(qvals, cz, cy, cx, tmpl, r, s, k, out_d, out_t, out_l):
    T, nz, ny, nx = tmpl.shape
    zlo = max(cz - s, r)
    zhi = min(cz + s, nz - r - 1)
    ylo = max(cy - s, r)
    yhi = min(cy + s, ny - r - 1)
    xlo = max(cx - s, r)
    xhi = min(cx + s, nx - r - 1)
    if zlo > zhi or ylo > yhi or xlo > xhi:
        return 0
    side = 2 * r + 1
    q = np.asarray(qvals, dtype=np.float64).reshape(side, side, side)
    qz = np.arange(zlo, zhi + 1)
    qy = np.arange(ylo, yhi + 1)
    qx = np.arange(xlo, xhi + 1)
    lin_grid = (
        qx[None, None, :]
        + nx * (qy[None, :, None] + ny * qz[:, None, None])
    ).ravel()
    all_d = []
    all_t = []
    all_l = []
    for t in range(T):
        region = tmpl[t, zlo - r : zhi + r + 1, ylo - r : yhi + r + 1, xlo - r : xhi + r + 1]
        view = sliding_window_view(region, (side, side, side))
        d = ((view - q) ** 2).sum(axis=(3, 4, 5)).ravel()
        all_d.append(d)
        all_t.append(np.full(d.size, t, dtype=np.int32))
        all_l.append(lin_grid)
    d = np.concatenate(all_d)
    ts = np.concatenate(all_t)
    ls = np.concatenate(all_l)
    order = np.argsort(d, kind="stable")[:k]
    n = order.size
    out_d[:n] = d[order]
    out_t[:n] = ts[order]
    out_l[:n] = ls[order]
    return n


def exact_knn_batch(vol, tmpl, centers, r, s, k, out_d, out_t, out_l, out_n):
    for m in range(centers.shape[0]):
        cz, cy, cx = centers[m]
        q = vol[cz - r : cz + r + 1, cy - r : cy + r + 1, cx - r : cx + r + 1].ravel()
        out_n[m] = exact_knn_single(
            q, cz, cy, cx, tmpl, r, s, k, out_d[m], out_t[m], out_l[m]
        )


def _insert_sorted(out_d, out_t, out_l, n, k, d, t, lin):
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


def patchmatch_knn_batch(vol, tmpl, row_of, r, s, k, iters, seed, slab_z,
                         out_d, out_t, out_l, out_n):
    T = tmpl.shape[0]
    nz, ny, nx = vol.shape
    n_slabs = (nz + slab_z - 1) // slab_z

    def patch(arr, z, y, x):
        return arr[z - r : z + r + 1, y - r : y + r + 1, x - r : x + r + 1]

    for slab in range(n_slabs):
        z0 = slab * slab_z
        z1 = min(z0 + slab_z, nz)
        zlo = max(z0, r)
        zhi = min(z1 - 1, nz - r - 1)
        ylo, yhi = r, ny - r - 1
        xlo, xhi = r, nx - r - 1
        if zlo > zhi or ylo > yhi or xlo > xhi:
            continue
        sz = z1 - z0
        for t in range(T):
            tvol = tmpl[t]
            bd = np.full((sz, ny, nx), np.inf)
            oz = np.zeros((sz, ny, nx), np.int64)
            oy = np.zeros((sz, ny, nx), np.int64)
            ox = np.zeros((sz, ny, nx), np.int64)

            def evaluate(z, y, x, qz, qy, qx, lz, row):
                thr = bd[lz, y, x]
                if row >= 0:
                    hthr = np.inf if out_n[row] < k else out_d[row, k - 1]
                    thr = max(thr, hthr)
                d = float(((patch(vol, z, y, x) - patch(tvol, qz, qy, qx)) ** 2).sum())
                if d >= thr:
                    return
                if d < bd[lz, y, x]:
                    bd[lz, y, x] = d
                    oz[lz, y, x] = qz - z
                    oy[lz, y, x] = qy - y
                    ox[lz, y, x] = qx - x
                if row < 0:
                    return
                n = out_n[row]
                if n == k and d >= out_d[row, k - 1]:
                    return
                lin = qx + nx * (qy + ny * qz)
                for j in range(n):
                    if out_t[row, j] == t and out_l[row, j] == lin:
                        return
                out_n[row] = _insert_sorted(
                    out_d[row], out_t[row], out_l[row], n, k, d, t, lin
                )

            def window(z, y, x):
                return (
                    max(z - s, r), min(z + s, nz - r - 1),
                    max(y - s, r), min(y + s, ny - r - 1),
                    max(x - s, r), min(x + s, nx - r - 1),
                )

            for z in range(zlo, zhi + 1):
                lz = z - z0
                for y in range(ylo, yhi + 1):
                    for x in range(xlo, xhi + 1):
                        row = row_of[z, y, x]
                        lin = x + nx * (y + ny * z)
                        evaluate(z, y, x, z, y, x, lz, row)
                        wzlo, wzhi, wylo, wyhi, wxlo, wxhi = window(z, y, x)
                        qz = wzlo + rand_below(seed, wzhi - wzlo + 1, t, lin, 0)
                        qy = wylo + rand_below(seed, wyhi - wylo + 1, t, lin, 1)
                        qx = wxlo + rand_below(seed, wxhi - wxlo + 1, t, lin, 2)
                        evaluate(z, y, x, qz, qy, qx, lz, row)
            for it in range(iters):
                for direction in range(2):
                    step = 1 if direction == 0 else -1
                    zr = range(zlo, zhi + 1) if direction == 0 else range(zhi, zlo - 1, -1)
                    for z in zr:
                        lz = z - z0
                        yr = range(ylo, yhi + 1) if direction == 0 else range(yhi, ylo - 1, -1)
                        for y in yr:
                            xr = range(xlo, xhi + 1) if direction == 0 else range(xhi, xlo - 1, -1)
                            for x in xr:
                                row = row_of[z, y, x]
                                lin = x + nx * (y + ny * z)
                                wzlo, wzhi, wylo, wyhi, wxlo, wxhi = window(z, y, x)
                                for (pz, py, px) in (
                                    (z, y, x - step),
                                    (z, y - step, x),
                                    (z - step, y, x),
                                ):
                                    if not (zlo <= pz <= zhi and ylo <= py <= yhi and xlo <= px <= xhi):
                                        continue
                                    qz = min(max(z + oz[pz - z0, py, px], wzlo), wzhi)
                                    qy = min(max(y + oy[pz - z0, py, px], wylo), wyhi)
                                    qx = min(max(x + ox[pz - z0, py, px], wxlo), wxhi)
                                    evaluate(z, y, x, qz, qy, qx, lz, row)
                                w = s
                                lev = 0
                                while w >= 1:
                                    bz = z + oz[lz, y, x]
                                    by = y + oy[lz, y, x]
                                    bx = x + ox[lz, y, x]
                                    code = 16 + ((it * 2 + direction) * 64 + lev) * 4
                                    dz = rand_below(seed, 2 * w + 1, t, lin, code) - w
                                    dy = rand_below(seed, 2 * w + 1, t, lin, code + 1) - w
                                    dx = rand_below(seed, 2 * w + 1, t, lin, code + 2) - w
                                    qz = min(max(bz + dz, wzlo), wzhi)
                                    qy = min(max(by + dy, wylo), wyhi)
                                    qx = min(max(bx + dx, wxlo), wxhi)
                                    evaluate(z, y, x, qz, qy, qx, lz, row)
                                    w >>= 1
                                    lev += 1


def warmup():
    pass
