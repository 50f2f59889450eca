"""Hot inner loops, each with a numba kernel and an equivalent numpy path.

Both paths return identical results (bit-for-bit for integer outputs). The
numba path is used when numba is importable and ``QKD810_DISABLE_NUMBA`` is
unset; :func:`set_backend` switches at runtime (benchmarks, parity tests).

All time arrays are sorted ``int64`` picoseconds.
"""
from __future__ import annotations

import numpy as np

from ._jit import HAVE_NUMBA, env_disabled, njit

_BACKEND = "numba" if (HAVE_NUMBA and not env_disabled()) else "numpy"


def backend():
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _BACKEND = _BACKEND, name
    return prev


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


# ---------------------------------------------------------------------------
# pairwise time-difference histogram


@njit
def _diff_hist_nb(ta, tb, wa, wb, lo, bw, nbins):
    out = np.zeros(nbins, np.int64)
    hi = lo + bw * nbins
    nb = tb.shape[0]
    j0 = 0
    for i in range(ta.shape[0]):
        t = ta[i]
        while j0 < nb and tb[j0] - t < lo:
            j0 += 1
        j = j0
        while j < nb and tb[j] - t < hi:
            out[(tb[j] - t - lo) // bw] += wa[i] * wb[j]
            j += 1
    return out


def _diff_hist_np(ta, tb, wa, wb, lo, bw, nbins, max_pairs=1 << 22):
    out = np.zeros(nbins, np.int64)
    if ta.size == 0 or tb.size == 0:
        return out
    start = np.searchsorted(tb, ta + lo, "left")
    stop = np.searchsorted(tb, ta + lo + bw * nbins, "left")
    counts = stop - start
    cum = np.cumsum(counts)
    i0 = 0
    n = ta.size
    while i0 < n:
        base = cum[i0 - 1] if i0 else 0
        i1 = int(np.searchsorted(cum, base + max_pairs, "right"))
        i1 = max(i1, i0 + 1)
        i1 = min(i1, n)
        c = counts[i0:i1]
        total = int(c.sum())
        if total:
            ia = np.repeat(np.arange(i0, i1), c)
            first = np.repeat(np.cumsum(c) - c, c)
            jb = start[ia] + (np.arange(total) - first)
            k = (tb[jb] - ta[ia] - lo) // bw
            out += np.bincount(k, weights=wa[ia] * wb[jb], minlength=nbins).astype(np.int64)
        i0 = i1
    return out


def diff_histogram(ta, tb, lo, bin_width, nbins, wa=None, wb=None):
    """Histogram of ``tb[j] - ta[i]`` over ``[lo, lo + bin_width*nbins)``.

    Optional integer weights multiply per pair (used for pre-binned trains).
    """
    ta = _i64(ta)
    tb = _i64(tb)
    wa = np.ones(ta.size, np.int64) if wa is None else _i64(wa)
    wb = np.ones(tb.size, np.int64) if wb is None else _i64(wb)
    lo, bin_width, nbins = int(lo), int(bin_width), int(nbins)
    if _BACKEND == "numba":
        return _diff_hist_nb(ta, tb, wa, wb, lo, bin_width, nbins)
    return _diff_hist_np(ta, tb, wa, wb, lo, bin_width, nbins)


# ---------------------------------------------------------------------------
# greedy nearest-neighbour coincidence pairing


@njit
def _greedy_pair_nb(ta, tb, offset, hw):
    nb = tb.shape[0]
    used = np.zeros(nb, np.bool_)
    m = min(ta.shape[0], nb)
    ia = np.empty(m, np.int64)
    ib = np.empty(m, np.int64)
    n = 0
    j0 = 0
    for i in range(ta.shape[0]):
        target = ta[i] + offset
        while j0 < nb and tb[j0] < target - hw:
            j0 += 1
        best = -1
        bestd = 0
        j = j0
        while j < nb and tb[j] <= target + hw:
            if not used[j]:
                d = abs(tb[j] - target)
                if best < 0 or d < bestd:
                    best = j
                    bestd = d
            j += 1
        if best >= 0:
            used[best] = True
            ia[n] = i
            ib[n] = best
            n += 1
    return ia[:n], ib[:n]


def _greedy_pair_np(ta, tb, offset, hw):
    empty = np.empty(0, np.int64)
    if ta.size == 0 or tb.size == 0:
        return empty, empty.copy()
    target = ta + offset
    lo = np.searchsorted(tb, target - hw, "left")
    hi = np.searchsorted(tb, target + hw, "right")
    cand = np.flatnonzero(hi > lo)
    if cand.size == 0:
        return empty, empty.copy()
    # candidate ranges are monotone, so overlapping ranges form contiguous clusters
    new = np.ones(cand.size, bool)
    new[1:] = lo[cand[1:]] >= hi[cand[:-1]]
    cid = np.cumsum(new) - 1
    size = np.bincount(cid)
    single = size[cid] == 1

    s = cand[single]
    t = target[s]
    p = np.searchsorted(tb, t, "left")
    left = p - 1
    has_left = left >= lo[s]
    has_right = p < hi[s]
    dl = np.where(has_left, t - tb[np.maximum(left, 0)], np.iinfo(np.int64).max)
    dr = np.where(has_right, tb[np.minimum(p, tb.size - 1)] - t, np.iinfo(np.int64).max)
    take_left = dl <= dr
    # lowest index among equal left-hand times
    left_first = np.maximum(np.searchsorted(tb, tb[np.maximum(left, 0)], "left"), lo[s])
    jb_single = np.where(take_left, left_first, p)

    ia_parts = [s]
    ib_parts = [jb_single]
    multi = cand[~single]
    if multi.size:
        mcid = cid[~single]
        bounds = np.flatnonzero(np.diff(mcid)) + 1
        for group in np.split(multi, bounds):
            used = set()
            for i in group:
                best, bestd = -1, 0
                for j in range(lo[i], hi[i]):
                    if j in used:
                        continue
                    d = abs(int(tb[j]) - int(target[i]))
                    if best < 0 or d < bestd:
                        best, bestd = j, d
                if best >= 0:
                    used.add(best)
                    ia_parts.append(np.array([i], np.int64))
                    ib_parts.append(np.array([best], np.int64))
    ia = np.concatenate(ia_parts).astype(np.int64)
    ib = np.concatenate(ib_parts).astype(np.int64)
    order = np.argsort(ia, kind="stable")
    return ia[order], ib[order]


def greedy_pair(ta, tb, offset, half_window):
    """Match each A tag (in time order) to the nearest unused B tag with
    ``|tb - ta - offset| <= half_window``; ties go to the lower B index."""
    ta = _i64(ta)
    tb = _i64(tb)
    if _BACKEND == "numba":
        return _greedy_pair_nb(ta, tb, int(offset), int(half_window))
    return _greedy_pair_np(ta, tb, int(offset), int(half_window))


# ---------------------------------------------------------------------------
# non-paralyzable per-channel dead time


@njit
def _dead_time_nb(times, channels, dead, nchan):
    keep = np.zeros(times.shape[0], np.bool_)
    last = np.zeros(nchan, np.int64)
    seen = np.zeros(nchan, np.bool_)
    for k in range(times.shape[0]):
        c = channels[k]
        if not seen[c] or times[k] - last[c] >= dead:
            keep[k] = True
            last[c] = times[k]
            seen[c] = True
    return keep


def _dead_time_np(times, channels, dead, nchan):
    keep = np.ones(times.size, bool)
    for c in range(nchan):
        idx = np.flatnonzero(channels == c)
        if idx.size < 2:
            continue
        t = times[idx]
        close = np.diff(t) < dead
        if not close.any():
            continue
        # close[k] means tag k+1 follows tag k within the dead time
        starts = np.flatnonzero(close & ~np.concatenate(([False], close[:-1])))
        for s in starts:
            last = t[s]
            m = s + 1
            while m < t.size and (m == s + 1 or close[m - 1]):
                if t[m] - last >= dead:
                    last = t[m]
                else:
                    keep[idx[m]] = False
                m += 1
    return keep


def dead_time_mask(times, channels, dead_time, nchan=4):
    """Boolean mask of tags that survive a non-paralyzable dead time."""
    times = _i64(times)
    channels = np.ascontiguousarray(channels, dtype=np.int64)
    if _BACKEND == "numba":
        return _dead_time_nb(times, channels, int(dead_time), int(nchan))
    return _dead_time_np(times, channels, int(dead_time), int(nchan))


# ---------------------------------------------------------------------------
# cumulative quaternion product (polarization random walk)


def quat_mul(p, q):
    """Hamilton product of ``(..., 4)`` arrays ordered (w, x, y, z)."""
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        (
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ),
        axis=-1,
    )


@njit
def _quat_cumprod_nb(steps):
    n = steps.shape[0]
    out = np.empty_like(steps)
    w, x, y, z = 1.0, 0.0, 0.0, 0.0
    for k in range(n):
        sw, sx, sy, sz = steps[k, 0], steps[k, 1], steps[k, 2], steps[k, 3]
        nw = sw * w - sx * x - sy * y - sz * z
        nx = sw * x + sx * w + sy * z - sz * y
        ny = sw * y - sx * z + sy * w + sz * x
        nz = sw * z + sx * y - sy * x + sz * w
        norm = np.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
        w, x, y, z = nw / norm, nx / norm, ny / norm, nz / norm
        out[k, 0] = w
        out[k, 1] = x
        out[k, 2] = y
        out[k, 3] = z
    return out


def _quat_cumprod_np(steps):
    acc = steps.copy()
    shift = 1
    while shift < acc.shape[0]:
        acc[shift:] = quat_mul(acc[shift:], acc[:-shift].copy())
        acc /= np.linalg.norm(acc, axis=1, keepdims=True)
        shift *= 2
    return acc


def quat_cumprod(steps):
    """Running left product ``q_k = s_k * s_(k-1) * ... * s_0``, renormalized."""
    steps = np.ascontiguousarray(steps, dtype=np.float64)
    if steps.shape[0] == 0:
        return steps.copy()
    if _BACKEND == "numba":
        return _quat_cumprod_nb(steps)
    return _quat_cumprod_np(steps)
