import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qkd810 import kernels
from qkd810._jit import HAVE_NUMBA

times = st.lists(st.integers(0, 5000), max_size=60).map(lambda v: np.sort(np.array(v, np.int64)))


def brute_hist(ta, tb, lo, bw, nbins, wa=None, wb=None):
    out = np.zeros(nbins, np.int64)
    wa = np.ones(ta.size, np.int64) if wa is None else wa
    wb = np.ones(tb.size, np.int64) if wb is None else wb
    for i, a in enumerate(ta):
        for j, b in enumerate(tb):
            d = b - a - lo
            if 0 <= d < bw * nbins:
                out[d // bw] += wa[i] * wb[j]
    return out


def brute_pair(ta, tb, offset, hw):
    """Reference greedy matcher: walk A in order, take the closest free B
    inside the window (ties to the lower B index)."""
    used = np.zeros(tb.size, bool)
    pairs = []
    for i, a in enumerate(ta):
        best = None
        for j, b in enumerate(tb):
            if used[j]:
                continue
            d = abs(b - a - offset)
            if d <= hw and (best is None or d < best[0]):
                best = (d, j)
        if best is not None:
            used[best[1]] = True
            pairs.append((i, best[1]))
    return pairs


def brute_dead(t, ch, dead, nchan=4):
    last = [None] * nchan
    keep = []
    for x, c in zip(t, ch):
        if last[c] is None or x - last[c] >= dead:
            keep.append(True)
            last[c] = x
        else:
            keep.append(False)
    return np.array(keep, bool)


@given(times, times, st.integers(-3000, 3000), st.integers(1, 300), st.integers(1, 40))
def test_diff_histogram_matches_brute_force(ta, tb, lo, bw, nbins):
    expect = brute_hist(ta, tb, lo, bw, nbins)
    for name in ["numpy"] + (["numba"] if HAVE_NUMBA else []):
        prev = kernels.set_backend(name)
        try:
            assert np.array_equal(kernels.diff_histogram(ta, tb, lo, bw, nbins), expect)
        finally:
            kernels.set_backend(prev)


@given(times, times, st.integers(-50, 50))
def test_weighted_histogram(ta, tb, lo):
    wa = np.arange(1, ta.size + 1, dtype=np.int64)
    wb = np.arange(2, tb.size + 2, dtype=np.int64)
    expect = brute_hist(ta, tb, lo, 7, 30, wa, wb)
    assert np.array_equal(kernels.diff_histogram(ta, tb, lo, 7, 30, wa, wb), expect)


def test_numpy_histogram_chunking(backend):
    rng = np.random.default_rng(3)
    ta = np.sort(rng.integers(0, 10**6, 3000))
    tb = np.sort(rng.integers(0, 10**6, 3000))
    full = kernels._diff_hist_np(ta, tb, np.ones(3000, np.int64), np.ones(3000, np.int64), -20000, 100, 400)
    small = kernels._diff_hist_np(ta, tb, np.ones(3000, np.int64), np.ones(3000, np.int64), -20000, 100, 400,
                                  max_pairs=1000)
    assert np.array_equal(full, small)
    assert np.array_equal(kernels.diff_histogram(ta, tb, -20000, 100, 400), full)


@given(times, times, st.integers(-100, 100), st.integers(0, 200))
def test_greedy_pair_matches_reference(ta, tb, offset, hw):
    expect = brute_pair(ta, tb, offset, hw)
    for name in ["numpy"] + (["numba"] if HAVE_NUMBA else []):
        prev = kernels.set_backend(name)
        try:
            ia, ib = kernels.greedy_pair(ta, tb, offset, hw)
        finally:
            kernels.set_backend(prev)
        assert list(zip(ia.tolist(), ib.tolist())) == expect


@given(times, times, st.integers(-100, 100), st.integers(0, 200))
def test_pairs_are_one_to_one_and_inside_window(ta, tb, offset, hw):
    ia, ib = kernels.greedy_pair(ta, tb, offset, hw)
    assert len(set(ia.tolist())) == ia.size and len(set(ib.tolist())) == ib.size
    assert np.all(np.abs(tb[ib] - ta[ia] - offset) <= hw)
    assert np.all(np.diff(ia) > 0)


@given(times, st.integers(0, 500))
def test_dead_time_matches_reference(t, dead):
    ch = (np.arange(t.size) * 7 % 4).astype(np.uint8)
    expect = brute_dead(t, ch, dead)
    for name in ["numpy"] + (["numba"] if HAVE_NUMBA else []):
        prev = kernels.set_backend(name)
        try:
            assert np.array_equal(kernels.dead_time_mask(t, ch, dead), expect)
        finally:
            kernels.set_backend(prev)


def _quat_ref(steps):
    q = np.array([1.0, 0, 0, 0])
    out = []
    for s in steps:
        q = kernels.quat_mul(s, q)
        q /= np.linalg.norm(q)
        out.append(q.copy())
    return np.array(out)


def test_quat_cumprod_backends_agree(backend):
    rng = np.random.default_rng(9)
    steps = rng.normal(size=(1000, 4))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    got = kernels.quat_cumprod(steps)
    assert np.allclose(got, _quat_ref(steps), atol=1e-9)
    assert np.allclose(np.linalg.norm(got, axis=1), 1.0)


def test_quat_mul_identity_and_inverse():
    rng = np.random.default_rng(1)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    one = np.array([1.0, 0, 0, 0])
    assert np.allclose(kernels.quat_mul(one, q), q)
    conj = q * np.array([1, -1, -1, -1])
    assert np.allclose(kernels.quat_mul(q, conj), one)


def test_backend_switch_validation():
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")
    prev = kernels.set_backend("numpy")
    assert kernels.backend() == "numpy"
    kernels.set_backend(prev)


def test_env_flag_selects_numpy(tmp_path):
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "from qkd810 import kernels; print(kernels.backend())"],
                         env={"QKD810_DISABLE_NUMBA": "1", "PATH": ""}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
