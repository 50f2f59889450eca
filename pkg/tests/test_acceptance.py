"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS/FAIL`` line (repeated in the
terminal summary) before asserting.
"""
import itertools
import time

import numpy as np

from qkd810 import coincidence as cc
from qkd810 import scenario as sn
from qkd810.errors import ProtocolViolation, TagFormatError
from qkd810.fiber import (CalibrationTargets, calibrate_fiber, find_mode, modal_dispersion, mode_field_diameter,
                          overlap_coupling, solve_modes)
from qkd810.keyrate import TABLE_ONE, crossover_analysis, secure_key_rate
from qkd810.link import guided_modes
from qkd810.scenario import bundled, load_scenario
from qkd810.sync import ALICE, BOB, LoopbackTransport, Msg, ProtocolMachine, hist_resp, run_sync, sync_loopback
from qkd810.tagio import TagFileHeader, TagStream, decode, encode, read_tags, write_tags

BIN = 100


def test_criterion_01_key_rate_oracle(criterion):
    worst = 0.0
    ok = True
    for c, v, k in TABLE_ONE:
        r = secure_key_rate(c, (1 - v) / 2)
        if k == 0:
            ok &= r == 0.0
        else:
            worst = max(worst, abs(r / k - 1))
    ok &= worst <= 0.05
    criterion(1, ok, f"worst relative error {100 * worst:.2f}% over six rows (limit 5%)")
    assert ok


def test_criterion_02_crossover(criterion):
    c = crossover_analysis(3.0, 0.22, 0.70, 0.15)
    ok = abs(c.breakeven_length - 2.4) <= 0.1 and abs(c.breakeven_loss - 7.3) <= 0.2
    criterion(2, ok, f"{c.breakeven_length:.3f} km, {c.breakeven_loss:.3f} dB (target 2.4 km, 7.3 dB)")
    assert ok


def test_criterion_03_mode_structure(criterion):
    t0 = time.perf_counter()
    spec = calibrate_fiber(CalibrationTargets())
    m810 = solve_modes(spec, 810.0)
    m1550 = solve_modes(spec, 1550.0)
    mfd = mode_field_diameter(find_mode(m1550, 0))
    disp = modal_dispersion(spec, 810.0)
    elapsed = time.perf_counter() - t0
    ok = len(m810) == 2 and len(m1550) == 1 and abs(mfd - 9.2) <= 0.4 and abs(disp - 2.19) <= 0.10
    ok &= elapsed < 10
    criterion(3, ok, f"{len(m810)} modes @810, {len(m1550)} @1550, MFD {mfd:.3f} um, "
                     f"dispersion {disp:.4f} ns/km, {elapsed:.1f} s")
    assert ok


def test_criterion_04_spatial_filter(criterion):
    sc = load_scenario(bundled("symmetric-2-2-spatial"))
    telecom, target = sc.arm_a.fiber, sc.arm_a.spatial_filter.target_fiber
    offset = sc.arm_a.spatial_filter.lateral_offset
    src = guided_modes(telecom, 810.0)
    dst = guided_modes(target, 810.0)[0]
    keep = overlap_coupling(src[0], dst, offset)
    leak = overlap_coupling(src[1], dst, offset)
    ok = keep >= 0.75 and leak <= 0.02
    criterion(4, ok, f"offset {offset:.3f} um: LP01 kept {keep:.4f} (>= 0.75), LP11 leak {leak:.4f} (<= 0.02)")
    assert ok


def _peaks(name):
    t0 = time.perf_counter()
    res = sn.run_scenario(bundled(name), overrides={"source.pair_rate": "1e5 /s", "duration": "10 s"})
    return res.peaks, time.perf_counter() - t0


def test_criterion_05_histogram_geometry(criterion):
    asym, t_asym = _peaks("asymmetric-3km")
    sym, t_sym = _peaks("symmetric-2-2-none")
    ok = len(asym) == 2 and len(sym) == 3 and max(t_asym, t_sym) < 120
    detail = f"asymmetric {len(asym)} peaks, symmetric {len(sym)} peaks"
    if ok:
        sep = asym[1].center - asym[0].center
        left = sym[0].center - sym[1].center
        right = sym[2].center - sym[1].center
        ok = abs(sep - 6600) <= BIN and abs(left + 4400) <= BIN and abs(right - 4400) <= BIN
        detail = (f"asymmetric separation {sep / 1e3:.3f} ns; symmetric side peaks {left / 1e3:+.3f} / "
                  f"{right / 1e3:+.3f} ns; runs {t_asym:.0f} s, {t_sym:.0f} s")
    criterion(5, ok, detail)
    assert ok


TABLE_BANDS = {
    "asymmetric-2km-none": (86, 90),
    "asymmetric-2km-temporal": (93, 96),
    "symmetric-2-2-none": (58, 68),
    "symmetric-2-2-temporal": (90, 94),
    "symmetric-2-2-spatial": (94.5, 100),
}


def test_criterion_06_table_pattern(criterion):
    t0 = time.perf_counter()
    rows = {name: sn.run_scenario(bundled(name)).table_row() for name in TABLE_BANDS}
    elapsed = time.perf_counter() - t0
    ok = elapsed < 600
    parts = []
    for name, (lo, hi) in TABLE_BANDS.items():
        v = rows[name]["visibility_pct"]
        ok &= lo <= v <= hi
        parts.append(f"{name} {v:.1f}%")
    ok &= rows["symmetric-2-2-none"]["secure_rate"] == 0.0
    criterion(6, ok, "; ".join(parts) + f"; symmetric unfiltered key {rows['symmetric-2-2-none']['secure_rate']:g}/s; "
                                        f"{elapsed:.0f} s")
    assert ok


def test_criterion_07_sweep(criterion):
    t0 = time.perf_counter()
    table = sn.run_sweep(bundled("asymmetric-sweep"), [1, 2, 3, 4, 5, 6])
    elapsed = time.perf_counter() - t0
    r2, cut = table.log_linear_r2(), table.cutoff()
    rates = table.column("secure_rate")
    ok = r2 >= 0.95 and 5.5 <= cut <= 6.5 and rates[-1] == 0 and elapsed < 900
    criterion(7, ok, f"R^2 {r2:.3f}, cutoff {cut:.2f} km, rates {np.round(rates, 1).tolist()} /s, {elapsed:.0f} s")
    assert ok


def test_criterion_08_drift(criterion):
    t0 = time.perf_counter()
    path = bundled("installed-drift")
    series = sn.run_drift(path)
    target = sn.drift_reference_rate(load_scenario(path))
    ens = sn.run_drift_ensemble(path)
    elapsed = time.perf_counter() - t0
    q, r = 100 * series.mean_qber, series.mean_secure_rate
    rising = ens.is_non_decreasing()
    slope, se = ens.trend()
    ok = abs(q - 4.3) <= 1.0 and abs(r / target - 1) <= 0.30 and rising and elapsed < 1200
    criterion(8, ok, f"mean QBER {q:.2f}%, mean secure rate {r:.1f}/s vs {target:.1f}/s; "
                     f"{ens.qber.shape[0]}-seed mean non-decreasing: {rising} (slope {slope:.2e}/s, SE {se:.1e}); "
                     f"{elapsed:.0f} s")
    assert ok


def _correlated(shift, seed, n=10_000, span=500_000_000_000):
    rng = np.random.default_rng(seed)
    ta = np.sort(rng.integers(0, span, n)).astype(np.int64)
    keep = rng.random(n) < 0.5
    tb = ta[keep] + shift + np.rint(rng.normal(0, 300, keep.sum())).astype(np.int64)
    tb = np.sort(np.concatenate([tb, rng.integers(0, span, n // 2)])).astype(np.int64)
    tb = tb[tb >= 0]
    return TagStream(ta, np.zeros(ta.size, np.uint8), "A"), TagStream(tb, np.zeros(tb.size, np.uint8), "B")


def _ordering_violations_rejected():
    for role, valid in ((BOB, {(Msg.HELLO, Msg.HIST_REQ), (Msg.HELLO, Msg.OFFSET)}),
                        (ALICE, {(Msg.HELLO, Msg.HIST_RESP)})):
        for first, second in itertools.product(Msg, Msg):
            m = ProtocolMachine(role)
            try:
                m.receive(first)
                m.sent_request()
                m.receive(second)
                accepted = True
            except ProtocolViolation:
                accepted = False
            if accepted != ((first, second) in valid):
                return False
    a, _ = _correlated(0, 0, n=10)
    ta, tb = LoopbackTransport.pair(2.0)
    tb.send(hist_resp([0, 1, 2]))
    try:
        run_sync("alice", a, ta)
    except ProtocolViolation:
        return True
    return False


def test_criterion_09_offset_and_sync(criterion):
    t0 = time.perf_counter()
    search = 1_100_000
    shifts = np.linspace(-1_000_000, 1_000_000, 21).astype(int).tolist() + [12_345, -777_777]
    worst_offline = 0
    sync_ok = True
    for i, s in enumerate(shifts):
        a, b = _correlated(s, i, n=4000)
        off = cc.find_offset(a, b, search, BIN)
        worst_offline = max(worst_offline, abs(off - s))
        alice, bob = sync_loopback(a, b, search_range=search, bin_width=BIN)
        sync_ok &= alice == bob == off
    orderings = _ordering_violations_rejected()
    elapsed = time.perf_counter() - t0
    ok = worst_offline <= BIN and sync_ok and orderings and elapsed < 60
    criterion(9, ok, f"{len(shifts)} shifts, worst offline error {worst_offline} ps; "
                     f"loopback identical to offline: {sync_ok}; "
                     f"out-of-order rejected: {orderings}; {elapsed:.1f} s")
    assert ok


def test_criterion_10_format_robustness(criterion, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    n = 1_000_000
    times = np.cumsum(rng.integers(0, 1 << 24, n)).astype(np.int64)
    channels = rng.integers(0, 4, n).astype(np.uint8)
    header = TagFileHeader(resolution=1, party=1, record_count=n)
    path = tmp_path / "big.qtags"
    write_tags(path, header, times, channels)
    data = path.read_bytes()
    h2, t2, c2 = read_tags(path)
    round_trip = np.array_equal(t2, times) and np.array_equal(c2, channels) and encode(h2, t2, c2) == data

    small = encode(TagFileHeader(1, 0, 300), np.sort(rng.integers(0, 1 << 40, 300)), rng.integers(0, 4, 300))
    bad = 0
    for pos, val in zip(rng.integers(0, len(small), 10_000), rng.integers(0, 256, 10_000)):
        mutated = bytearray(small)
        mutated[pos] = val
        mutated = bytes(mutated)
        try:
            h, t, c = decode(mutated)
        except TagFormatError:
            continue
        except Exception:
            bad += 1
            continue
        bad += encode(h, t, c) != mutated
    elapsed = time.perf_counter() - t0
    ok = round_trip and bad == 0 and elapsed < 120
    criterion(10, ok, f"10^6-record round trip byte-exact: {round_trip}; 10^4 corruptions, "
                      f"{bad} misparsed or crashed; {elapsed:.1f} s")
    assert ok


def test_criterion_11_outlook_projection(criterion):
    res = sn.run_projection(bundled("outlook-4km"))
    ratio = res.secure_rate / 500e3
    ok = 1 / 1.5 <= ratio <= 1.5
    criterion(11, ok, f"{res.local_coincidence_rate / 1e6:g} MHz through {res.loss_db:.2f} dB at "
                      f"V = {100 * res.visibility:.2f}% -> {res.secure_rate / 1e3:.2f} kb/s "
                      f"({ratio:.3f} x 500 kb/s; band 0.667-1.5)")
    assert ok
