"""BBM92 sifting, QBER/visibility estimation and asymptotic key rates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, InsufficientData, NoCrossover

# Error-correction inefficiency fitted to the six published key rates
# (see table_one_fit); 1.2 is the common textbook value.
DEFAULT_EC_INEFFICIENCY = 1.237

TABLE_ONE = (
    # (coincidences/s, visibility, secure key/s)
    (3000.0, 0.880, 420.0),
    (2700.0, 0.946, 800.0),
    (430.0, 0.916, 90.0),
    (5200.0, 0.629, 0.0),
    (3600.0, 0.922, 850.0),
    (1950.0, 0.956, 650.0),
)


@dataclass(frozen=True)
class SecurityParams:
    ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY
    sifting_factor: float = 0.5

    def __post_init__(self):
        if self.ec_inefficiency < 1:
            raise ValueError("error-correction inefficiency must be >= 1")
        if not 0 < self.sifting_factor <= 1:
            raise ValueError("sifting factor must lie in (0, 1]")


@dataclass(frozen=True)
class KeyRateResult:
    coincidence_rate: float
    sifted_rate: float
    visibility: float
    qber: float
    secure_rate: float

    def __post_init__(self):
        if abs(self.qber - (1 - self.visibility) / 2) > 1e-6:
            raise ValueError("qber and visibility are inconsistent")
        if self.secure_rate < 0:
            raise ValueError("secure rate must be >= 0")
        if not self.secure_rate <= self.sifted_rate * (1 + 1e-12) + 1e-12:
            raise ValueError("secure rate exceeds sifted rate")
        if not self.sifted_rate <= self.coincidence_rate * (1 + 1e-12) + 1e-12:
            raise ValueError("sifted rate exceeds coincidence rate")


def binary_entropy(e) -> float:
    e = float(e)
    if not 0.0 <= e <= 1.0 or math.isnan(e):
        raise DomainError(f"binary entropy needs e in [0, 1], got {e}")
    if e in (0.0, 1.0):
        return 0.0
    return -e * math.log2(e) - (1 - e) * math.log2(1 - e)


def secret_fraction(qber, ec_inefficiency=DEFAULT_EC_INEFFICIENCY) -> float:
    """Key bits per sifted bit: ``max(0, 1 - f*H(E) - H(E))``."""
    h = binary_entropy(qber)
    return max(0.0, 1.0 - (1.0 + ec_inefficiency) * h)


def secure_key_rate(coincidence_rate, qber, params: SecurityParams = SecurityParams()) -> float:
    if not 0.0 <= qber <= 0.5:
        raise DomainError(f"qber must lie in [0, 0.5], got {qber}")
    return params.sifting_factor * coincidence_rate * secret_fraction(qber, params.ec_inefficiency)


def qber_threshold(ec_inefficiency=DEFAULT_EC_INEFFICIENCY) -> float:
    """QBER at which the secret fraction reaches zero."""
    return brentq(lambda e: 1 - (1 + ec_inefficiency) * binary_entropy(e), 1e-9, 0.5)


def table_one_fit():
    """EC inefficiency minimizing the worst relative error over the nonzero
    published key rates; returns ``(f, worst_relative_error)``."""
    rows = [(c, v, k) for c, v, k in TABLE_ONE if k > 0]

    def worst(f):
        p = SecurityParams(ec_inefficiency=f)
        return max(abs(secure_key_rate(c, (1 - v) / 2, p) / k - 1) for c, v, k in rows)

    res = minimize_scalar(worst, bounds=(1.0, 1.6), method="bounded", options={"xatol": 1e-6})
    return float(res.x), float(res.fun)


# ---------------------------------------------------------------------------
# sifting

# channel -> (basis, bit): 0 deg and 45 deg are bit 0
BASIS = np.array([0, 0, 1, 1], np.int8)
BIT = np.array([0, 1, 0, 1], np.int8)


@dataclass(eq=False)
class SiftedKey:
    bits_a: np.ndarray
    bits_b: np.ndarray
    basis: np.ndarray
    offered: int

    def __len__(self):
        return self.bits_a.size

    @property
    def kept_fraction(self):
        return len(self) / self.offered if self.offered else 0.0

    @property
    def errors(self):
        return int(np.count_nonzero(self.bits_a != self.bits_b))


def sift(channel_a, channel_b=None) -> SiftedKey:
    """Keep coincidences where both parties measured in the same basis.

    Accepts channel arrays or a :class:`~qkd810.coincidence.Coincidences`.
    """
    if channel_b is None and hasattr(channel_a, "channel_a"):
        channel_a, channel_b = channel_a.channel_a, channel_a.channel_b
    ca = np.asarray(channel_a, np.int64)
    cb = np.asarray(channel_b, np.int64)
    same = BASIS[ca] == BASIS[cb]
    return SiftedKey(BIT[ca[same]], BIT[cb[same]], BASIS[ca[same]], ca.size)


def estimate_visibility(sifted: SiftedKey, min_samples=100):
    """Returns ``(visibility, qber)`` from the sifted-bit error fraction."""
    n = len(sifted)
    if n < max(1, min_samples):
        raise InsufficientData(f"{n} sifted bits, need at least {min_samples}")
    qber = sifted.errors / n
    return 1.0 - 2.0 * qber, qber


def key_rate_result(n_coincidences, sifted: SiftedKey, duration, params: SecurityParams = SecurityParams(),
                    min_samples=100) -> KeyRateResult:
    """Per-second rates for one analysis run.

    The secure rate uses the measured sifted rate, i.e. the key formula
    with the observed sifting fraction.
    """
    vis, qber = estimate_visibility(sifted, min_samples)
    coinc = n_coincidences / duration
    sifted_rate = len(sifted) / duration
    secure = sifted_rate * secret_fraction(qber, params.ec_inefficiency)
    return KeyRateResult(coinc, sifted_rate, vis, qber, secure)


# ---------------------------------------------------------------------------
# 810 nm vs 1550 nm


@dataclass(frozen=True)
class Crossover:
    breakeven_loss: float  # dB of short-wavelength fiber loss
    breakeven_length: float  # km


def crossover_analysis(loss810=3.0, loss1550=0.22, eff_short=0.70, eff_long=0.15) -> Crossover:
    """Fiber length below which the short-wavelength link has lower total
    attenuation once detector efficiency is included."""
    if not loss810 > loss1550 > 0:
        raise ValueError("need loss810 > loss1550 > 0")
    if not (0 < eff_short <= 1 and 0 < eff_long <= 1):
        raise ValueError("efficiencies must lie in (0, 1]")
    if eff_short < eff_long:
        raise NoCrossover("the short-wavelength detectors are less efficient; no crossover")
    length = 10 * math.log10(eff_short / eff_long) / (loss810 - loss1550)
    return Crossover(loss810 * length, length)


def project_key_rate(local_coincidence_rate, loss_db, visibility, params: SecurityParams = SecurityParams()):
    """Secure rate of a source with the given local coincidence rate after
    ``loss_db`` of coincidence loss, at the given visibility."""
    coinc = local_coincidence_rate * 10 ** (-loss_db / 10)
    return secure_key_rate(coinc, (1 - visibility) / 2, params)
