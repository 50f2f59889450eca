"""Offline coincidence analysis of two time-tag streams.

Time differences are always ``tB - tA - offset``; with this sign a slower
mode in Alice's arm shows up at negative delay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NoPeak
from .tagio import TagStream

DEFAULT_BIN_PS = 100
DEFAULT_HALF_RANGE_PS = 20_000


def _times(stream):
    return stream.times if isinstance(stream, TagStream) else np.asarray(stream, np.int64)


def background_level(counts):
    """Median bin count, falling back to the mean for sparse histograms."""
    counts = np.asarray(counts)
    bg = float(np.median(counts))
    return bg if bg > 0 else float(counts.mean())


def best_shift(corr, shifts):
    """Index of the correlation maximum; ties go to the smallest |shift|,
    then to the more negative one."""
    corr = np.asarray(corr)
    top = np.flatnonzero(corr == corr.max())
    return int(top[np.lexsort((shifts[top], np.abs(shifts[top])))[0]])


def offset_correlation(ta, tb, search_range, bin_width):
    """Counts of ``tb - ta`` in bins centred on multiples of ``bin_width``
    within ``+-search_range``; returns ``(shifts_ps, counts)``."""
    k = int(search_range // bin_width)
    nbins = 2 * k + 1
    lo = -k * bin_width - bin_width // 2
    counts = kernels.diff_histogram(ta, tb, lo, bin_width, nbins)
    shifts = (np.arange(nbins) - k) * int(bin_width)
    return shifts, counts


def find_offset(stream_a, stream_b, search_range=50_000, bin_width=DEFAULT_BIN_PS) -> int:
    """Delay (ps, to one bin) maximizing the coincidences of ``tb - ta``."""
    ta, tb = _times(stream_a), _times(stream_b)
    if ta.size == 0 or tb.size == 0:
        raise NoPeak("both streams must be nonempty")
    shifts, counts = offset_correlation(ta, tb, int(search_range), int(bin_width))
    i = best_shift(counts, shifts)
    bg = background_level(counts)
    if counts[i] == 0 or counts[i] < bg + 5 * math.sqrt(bg):
        raise NoPeak(f"maximum bin {counts[i]} does not clear background {bg:.3g}")
    return int(shifts[i])


@dataclass(eq=False)
class CoincidenceHistogram:
    bin_width: int
    origin: int  # left edge of bin 0 relative to the offset, ps
    counts: np.ndarray

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        self.counts = np.asarray(self.counts, np.int64)

    @property
    def centers(self):
        return self.origin + (np.arange(self.counts.size) + 0.5) * self.bin_width

    def total(self):
        return int(self.counts.sum())

    def to_csv(self):
        lines = ["delay_ps,count"]
        lines += [f"{c:.1f},{n}" for c, n in zip(self.centers, self.counts)]
        return "\n".join(lines) + "\n"


def build_histogram(stream_a, stream_b, offset=0, half_range=DEFAULT_HALF_RANGE_PS,
                    bin_width=DEFAULT_BIN_PS) -> CoincidenceHistogram:
    """All tag-pair differences ``tb - ta - offset`` in ``[-half_range, half_range)``."""
    half_range, bin_width = int(half_range), int(bin_width)
    if (2 * half_range) % bin_width:
        raise ValueError("bin_width must divide 2 * half_range")
    nbins = 2 * half_range // bin_width
    ta, tb = _times(stream_a), _times(stream_b)
    counts = kernels.diff_histogram(ta, tb, int(offset) - half_range, bin_width, nbins)
    return CoincidenceHistogram(bin_width, -half_range, counts)


@dataclass(frozen=True)
class Peak:
    center: float  # ps
    weight: float  # counts above background
    label: str | None = None


def detect_peaks(hist: CoincidenceHistogram, threshold_sigma=5.0) -> list[Peak]:
    """Peaks are runs of bins above ``bg + threshold_sigma * sqrt(bg)``;
    runs separated by fewer than 2 bins merge. ``bg`` is the median bin
    (Poisson floor of one count)."""
    c = hist.counts.astype(float)
    if c.size < 10:
        raise ValueError("histogram needs at least 10 bins")
    bg = float(np.median(c))
    thresh = bg + threshold_sigma * math.sqrt(max(bg, 1.0))
    above = c > thresh
    if not above.any():
        return []
    idx = np.flatnonzero(above)
    splits = np.flatnonzero(np.diff(idx) > 2) + 1
    peaks = []
    centers = hist.centers
    for run in np.split(idx, splits):
        lo, hi = run[0], run[-1] + 1
        excess = np.clip(c[lo:hi] - bg, 0, None)
        weight = float(excess.sum())
        if weight <= 0:
            continue
        peaks.append(Peak(float((centers[lo:hi] * excess).sum() / weight), weight))
    return peaks


def label_peaks(peaks, delay_a, delay_b, tolerance, modes_a=(0, 1), modes_b=(0, 1)):
    """Attach mode-pair labels given per-mode fiber delays (ps) of each arm.

    Positions are predicted relative to A01B01 with the ``tb - ta`` sign.
    Overlapping predictions (e.g. A01B01 and A11B11 in a symmetric link)
    share one label joined by ``+``. ``modes_*`` list the modes each arm
    actually carries.
    """
    ref = delay_b[0] - delay_a[0]
    predicted = {}
    for i in modes_a:
        for j in modes_b:
            predicted[f"A{i}1B{j}1"] = delay_b[j] - delay_a[i] - ref
    out = []
    for p in peaks:
        names = [n for n, pos in predicted.items() if abs(p.center - pos) <= tolerance]
        out.append(Peak(p.center, p.weight, "+".join(names) if names else None))
    return out


@dataclass(eq=False)
class Coincidences:
    t_a: np.ndarray
    t_b: np.ndarray
    channel_a: np.ndarray
    channel_b: np.ndarray

    def __len__(self):
        return self.t_a.size

    def to_csv(self):
        lines = ["t_a_ps,t_b_ps,channel_a,channel_b"]
        lines += [f"{a},{b},{x},{y}" for a, b, x, y in zip(self.t_a, self.t_b, self.channel_a, self.channel_b)]
        return "\n".join(lines) + "\n"


def pair_coincidences(stream_a: TagStream, stream_b: TagStream, offset, window) -> Coincidences:
    """Greedy nearest-neighbour pairing with ``|tb - ta - offset| <= window/2``."""
    if window <= 0:
        raise ValueError("window must be positive")
    ia, ib = kernels.greedy_pair(stream_a.times, stream_b.times, int(offset), int(window) // 2)
    return Coincidences(stream_a.times[ia], stream_b.times[ib], stream_a.channels[ia], stream_b.channels[ib])


ASYMMETRIC = "asymmetric"
SYMMETRIC = "symmetric"


def classify_regime(d_a: float, d_b: float, threshold_km=2.0) -> str:
    """Asymmetric links (length difference >= 2 km) need only a temporal
    filter; shorter differences need temporal plus spatial filtering."""
    if d_a < 0 or d_b < 0:
        raise ValueError("lengths must be >= 0")
    return ASYMMETRIC if abs(d_a - d_b) >= threshold_km - 1e-12 else SYMMETRIC
