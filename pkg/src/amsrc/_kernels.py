"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics.  Setting the
environment variable ``AMSRC_DISABLE_NUMBA=1`` (before import) forces the
numpy path; it is also used automatically when numba cannot be imported.
Both paths are exercised by the test suite and by ``benchmarks/bench_kernels.py``.
"""

import os

import numpy as np

_DISABLED = os.environ.get("AMSRC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by AMSRC_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# im2col / col2im for square kernels with symmetric zero padding
#
# cols layout: (C*k*k, N*Ho*Wo); row = (c*k + ky)*k + kx, column = (n*Ho + oy)*Wo + ox
# ---------------------------------------------------------------------------


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col_numpy(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = _out_size(h, k, stride, pad)
    wo = _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for ky in range(k):
        for kx in range(k):
            cols[:, ky, kx] = xt[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
    return cols.reshape(c * k * k, n * ho * wo)


def col2im_numpy(cols, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    ho = _out_size(h, k, stride, pad)
    wo = _out_size(w, k, stride, pad)
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += cols[:, ky, kx]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3))


def block_sad_numpy(a, b, block, radius):
    """Best integer displacement per block, minimising the sum of absolute differences.

    Returns arrays ``(du, dv)`` of shape (H // block, W // block).  Candidates
    whose displaced block would leave ``b`` are skipped.  Ties go to the
    smallest displacement magnitude, then lexicographically smallest (u, v).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    h, w = a.shape
    nby, nbx = h // block, w // block
    # candidate order encodes the tie-break: first minimum wins
    cand = [(u * u + v * v, u, v) for u in range(-radius, radius + 1) for v in range(-radius, radius + 1)]
    cand.sort()
    du = np.zeros((nby, nbx), dtype=np.int64)
    dv = np.zeros((nby, nbx), dtype=np.int64)
    best = np.full((nby, nbx), np.inf)
    ref = a[: nby * block, : nbx * block].reshape(nby, block, nbx, block)
    by0 = np.arange(nby) * block
    bx0 = np.arange(nbx) * block
    for _, u, v in cand:
        valid = ((by0 + v >= 0) & (by0 + v + block <= h))[:, None] & ((bx0 + u >= 0) & (bx0 + u + block <= w))[None, :]
        if not valid.any():
            continue
        # shifted copy of b so block (i, j) of `sh` is b's block displaced by (u, v)
        sh = np.zeros((nby * block, nbx * block))
        ys = slice(max(-v, 0), min(nby * block, h - v))
        xs = slice(max(-u, 0), min(nbx * block, w - u))
        sh[ys, xs] = b[ys.start + v:ys.stop + v, xs.start + u:xs.stop + u]
        sad = np.abs(ref - sh.reshape(nby, block, nbx, block)).sum(axis=(1, 3))
        better = valid & (sad < best)
        best = np.where(better, sad, best)
        du = np.where(better, u, du)
        dv = np.where(better, v, dv)
    return du, dv


if HAS_NUMBA:

    @njit(cache=True, inline="always")
    def _valid_range(k_off, stride, pad, n_in, n_out):
        # output indices o with 0 <= o*stride + k_off - pad < n_in
        lo = 0
        while lo < n_out and lo * stride + k_off - pad < 0:
            lo += 1
        hi = n_out
        while hi > lo and (hi - 1) * stride + k_off - pad >= n_in:
            hi -= 1
        return lo, hi

    @njit(cache=True)
    def _im2col_nb(x, k, stride, pad, ho, wo):
        n, c, h, w = x.shape
        cols = np.zeros((c * k * k, n * ho * wo), dtype=x.dtype)
        for ci in range(c):
            for ky in range(k):
                y_lo, y_hi = _valid_range(ky, stride, pad, h, ho)
                for kx in range(k):
                    x_lo, x_hi = _valid_range(kx, stride, pad, w, wo)
                    row = (ci * k + ky) * k + kx
                    for b in range(n):
                        base = b * ho * wo
                        for oy in range(y_lo, y_hi):
                            iy = oy * stride + ky - pad
                            dst = base + oy * wo
                            for ox in range(x_lo, x_hi):
                                cols[row, dst + ox] = x[b, ci, iy, ox * stride + kx - pad]
        return cols

    @njit(cache=True)
    def _col2im_nb(cols, n, c, h, w, k, stride, pad, ho, wo):
        x = np.zeros((n, c, h, w), dtype=cols.dtype)
        for b in range(n):
            base = b * ho * wo
            for ci in range(c):
                for ky in range(k):
                    y_lo, y_hi = _valid_range(ky, stride, pad, h, ho)
                    for kx in range(k):
                        x_lo, x_hi = _valid_range(kx, stride, pad, w, wo)
                        row = (ci * k + ky) * k + kx
                        for oy in range(y_lo, y_hi):
                            iy = oy * stride + ky - pad
                            src = base + oy * wo
                            for ox in range(x_lo, x_hi):
                                x[b, ci, iy, ox * stride + kx - pad] += cols[row, src + ox]
        return x

    @njit(cache=True)
    def _block_sad_nb(a, b, block, radius, cand_u, cand_v):
        h, w = a.shape
        nby = h // block
        nbx = w // block
        du = np.zeros((nby, nbx), dtype=np.int64)
        dv = np.zeros((nby, nbx), dtype=np.int64)
        for i in range(nby):
            y0 = i * block
            for j in range(nbx):
                x0 = j * block
                best = np.inf
                for ci in range(cand_u.shape[0]):
                    u = cand_u[ci]
                    v = cand_v[ci]
                    if y0 + v < 0 or y0 + v + block > h or x0 + u < 0 or x0 + u + block > w:
                        continue
                    s = 0.0
                    for yy in range(block):
                        for xx in range(block):
                            s += abs(a[y0 + yy, x0 + xx] - b[y0 + v + yy, x0 + u + xx])
                    if s < best:
                        best = s
                        du[i, j] = u
                        dv[i, j] = v
        return du, dv

    def im2col_numba(x, k, stride, pad):
        n, c, h, w = x.shape
        return _im2col_nb(np.ascontiguousarray(x), k, stride, pad,
                          _out_size(h, k, stride, pad), _out_size(w, k, stride, pad))

    # numpy's nine strided slice copies beat the compiled gather (the copy is
    # bound by writing the fresh column buffer), so im2col stays on numpy
    im2col = im2col_numpy

    def col2im(cols, x_shape, k, stride, pad):
        n, c, h, w = x_shape
        return _col2im_nb(np.ascontiguousarray(cols), n, c, h, w, k, stride, pad,
                          _out_size(h, k, stride, pad), _out_size(w, k, stride, pad))

    def block_sad(a, b, block, radius):
        cand = sorted((u * u + v * v, u, v) for u in range(-radius, radius + 1) for v in range(-radius, radius + 1))
        cu = np.array([c[1] for c in cand], dtype=np.int64)
        cv = np.array([c[2] for c in cand], dtype=np.int64)
        return _block_sad_nb(np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64),
                             block, radius, cu, cv)

else:
    im2col = im2col_numpy
    col2im = col2im_numpy
    block_sad = block_sad_numpy


BACKEND = "numba" if HAS_NUMBA else "numpy"
