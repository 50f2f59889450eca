"""Monte Carlo time-tag generation for a two-arm entanglement distribution link.

A black-box source emits polarization-entangled pairs (a Werner state of
weight ``intrinsic_visibility`` on Phi+) as a Poisson process. Each photon
enters LP01 or LP11 of its arm's fiber according to the launch fractions,
is attenuated, optionally passes a small-core spatial filter, picks up the
group delay of its mode and the polarization rotation of its mode, and is
finally detected by one of four detectors behind a passive 50/50 basis
choice.

Random draws come from counter-based Philox generators keyed by
``(seed, stream name)``, so each stochastic ingredient is reproducible on
its own.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from . import kernels
from .errors import ConfigError
from .fiber import FiberSpec, ModeSolution, overlap_coupling, solve_modes
from .tagio import TagStream

PS_PER_S = 1_000_000_000_000
IDENTITY = np.eye(2, dtype=complex)
N_MODES = 2  # LP01, LP11

# rows are the analyzer bras: basis 0 = {0 deg, 90 deg}, basis 1 = {45 deg, -45 deg}
ANALYZERS = np.array([[[1, 0], [0, 1]], [[1, 1], [1, -1]]], dtype=complex)
ANALYZERS[1] /= math.sqrt(2)


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent Philox generator for one named random stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# polarization algebra


def rotation_unitary(axis, angle):
    """SU(2) element rotating Stokes vectors by ``angle`` (rad) about ``axis``.

    Axis components refer to the Pauli matrices (Z, X, Y) in the H/V basis,
    i.e. (S1, S2, S3) on the Poincare sphere.
    """
    n = np.asarray(axis, float)
    norm = np.linalg.norm(n)
    if norm == 0:
        return IDENTITY.copy()
    s1, s2, s3 = n / norm
    gen = np.array([[s1, s2 - 1j * s3], [s2 + 1j * s3, -s1]])
    return math.cos(angle / 2) * IDENTITY - 1j * math.sin(angle / 2) * gen


def quat_to_unitary(q):
    """Unit quaternions ``(..., 4)`` to SU(2) matrices ``(..., 2, 2)``.

    The vector part uses the same (S1, S2, S3) axis convention as
    :func:`rotation_unitary`.
    """
    w, x, y, z = np.moveaxis(np.asarray(q, float), -1, 0)
    u = np.empty(w.shape + (2, 2), complex)
    u[..., 0, 0] = w - 1j * x
    u[..., 0, 1] = -1j * y - z
    u[..., 1, 0] = -1j * y + z
    u[..., 1, 1] = w + 1j * x
    return u


def random_unitary(rng):
    """Haar-random SU(2) element."""
    q = rng.normal(size=4)
    return quat_to_unitary(q / np.linalg.norm(q))


def is_unitary(u, tol=1e-8):
    u = np.asarray(u)
    eye = np.eye(2)
    prod = u @ np.conj(np.swapaxes(u, -1, -2))
    return bool(np.all(np.abs(prod - eye) <= tol))


# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class SourceSpec:
    pair_rate: float
    intrinsic_visibility: float = 0.957
    wavelength: float = 810.0

    def __post_init__(self):
        if self.pair_rate < 0:
            raise ConfigError("pair_rate must be >= 0", "source.pair_rate")
        if not 0.0 <= self.intrinsic_visibility <= 1.0:
            raise ConfigError("intrinsic_visibility must lie in [0, 1]", "source.intrinsic_visibility")


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 0.70
    dark_rate: float = 0.0  # counts/s per detector
    jitter_sigma: float = 250.0  # ps
    dead_time: float = 50.0  # ns

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError("efficiency must lie in [0, 1]", "detectors.efficiency")
        for name in ("dark_rate", "jitter_sigma", "dead_time"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"detectors.{name}")


@dataclass(frozen=True)
class SpatialFilter:
    target_fiber: FiberSpec
    lateral_offset: float  # um
    insertion_loss_db: float = 0.0


@dataclass(frozen=True, eq=False)
class ArmConfig:
    length: float  # km
    fiber: FiberSpec
    launch_fractions: tuple = (0.95, 0.03)
    mode_rotations: tuple = (IDENTITY, IDENTITY)
    drift_rate: float = 0.0  # rad / sqrt(s)
    spatial_filter: SpatialFilter | None = None
    extra_loss_db: float = 0.0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.launch_fractions)
        if len(fr) != N_MODES or any(f < 0 for f in fr) or sum(fr) > 1 + 1e-12:
            raise ConfigError("launch fractions must be two nonnegative numbers summing to <= 1", "launch")
        object.__setattr__(self, "launch_fractions", fr)
        rots = tuple(np.asarray(u, complex) for u in self.mode_rotations)
        if len(rots) != N_MODES or not all(u.shape == (2, 2) and is_unitary(u) for u in rots):
            raise ConfigError("mode rotations must be two 2x2 unitaries", "rotations")
        object.__setattr__(self, "mode_rotations", rots)
        if self.length < 0:
            raise ConfigError("length must be >= 0", "length")
        if self.drift_rate < 0:
            raise ConfigError("drift_rate must be >= 0", "drift_rate")
        if self.extra_loss_db < 0:
            raise ConfigError("extra loss must be >= 0", "extra_loss")

    @property
    def compensation(self):
        """Analyzer-side correction: the inverse of the LP01 rotation."""
        return np.conj(self.mode_rotations[0]).T


@lru_cache(maxsize=64)
def _modes_cached(radius, n1, n2, wavelength):
    return tuple(solve_modes(FiberSpec(radius, n1, n2), wavelength))


def guided_modes(spec: FiberSpec, wavelength: float) -> tuple[ModeSolution, ...]:
    return _modes_cached(spec.core_radius, spec.core_index, spec.cladding_index, float(wavelength))


@lru_cache(maxsize=64)
def _filter_coupling(fr, fn1, fn2, tr, tn1, tn2, wavelength, offset, l):
    src = _modes_cached(fr, fn1, fn2, wavelength)
    dst = _modes_cached(tr, tn1, tn2, wavelength)[0]
    for m in src:
        if m.azimuthal_index == l and m.radial_index == 1:
            return overlap_coupling(m, dst, offset)
    return 0.0


def filter_transmission(arm: ArmConfig, wavelength: float, mode: int) -> float:
    """Power fraction of ``mode`` passing the arm's spatial filter (1 if none)."""
    sf = arm.spatial_filter
    if sf is None:
        return 1.0
    f, t = arm.fiber, sf.target_fiber
    eta = _filter_coupling(f.core_radius, f.core_index, f.cladding_index, t.core_radius, t.core_index,
                           t.cladding_index, float(wavelength), float(sf.lateral_offset), mode)
    return eta * 10 ** (-sf.insertion_loss_db / 10)


@dataclass(eq=False)
class ArmModel:
    """Per-mode numbers of one arm, resolved at the source wavelength."""

    config: ArmConfig
    wavelength: float
    delays_ps: np.ndarray  # absolute fiber delay per mode
    transmission: np.ndarray  # survival probability per mode (fiber, extra loss, filter)
    launch: np.ndarray
    drift: "PolarizationDrift | None" = None

    @property
    def fiber_loss_db(self):
        c = self.config
        return c.fiber.attenuation_at(self.wavelength) * c.length + c.extra_loss_db

    def analyzer_unitaries(self, modes, times_ps=None):
        """Compensated rotations ``C @ D(t) @ R_mode`` for photons in ``modes``."""
        c = self.config
        rots = np.stack(c.mode_rotations)[np.asarray(modes, np.int64)]
        if self.drift is None or times_ps is None:
            return c.compensation @ rots
        d = self.drift.at(np.asarray(times_ps) / PS_PER_S)
        return c.compensation @ d @ rots


def prepare_arm(arm: ArmConfig, wavelength=810.0, spatial=True, drift=None) -> ArmModel:
    modes = guided_modes(arm.fiber, wavelength)
    if arm.launch_fractions[1] > 0 and len(modes) < 2:
        raise ConfigError(f"fiber {arm.fiber.label!r} guides no LP11 mode at {wavelength} nm", "launch.lp11")
    delays = np.zeros(N_MODES)
    for m in modes[:N_MODES]:
        if m.radial_index == 1 and m.azimuthal_index < N_MODES:
            delays[m.azimuthal_index] = m.group_delay * arm.length * 1e3
    if len(modes) < 2:
        delays[1] = delays[0]
    base = 10 ** (-(arm.fiber.attenuation_at(wavelength) * arm.length + arm.extra_loss_db) / 10)
    trans = np.array([base * (filter_transmission(arm, wavelength, m) if spatial else 1.0)
                      for m in range(N_MODES)])
    return ArmModel(arm, wavelength, delays, trans, np.array(arm.launch_fractions), drift)


# ---------------------------------------------------------------------------
# polarization drift


class PolarizationDrift:
    """Random walk on SU(2): every ``step`` seconds the Stokes frame turns by
    a rotation vector with i.i.d. N(0, rate^2 * step) components.

    The path is piecewise constant between steps and starts at identity.
    """

    def __init__(self, rate, duration, rng, step=0.1):
        self.rate = float(rate)
        self.step = float(step)
        n = max(1, int(math.ceil(duration / step)) + 1)
        if self.rate == 0:
            self.quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
            return
        kicks = rng.normal(0.0, self.rate * math.sqrt(step), size=(n - 1, 3))
        ang = np.linalg.norm(kicks, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            axis = np.where(ang[:, None] > 0, kicks / ang[:, None], 0.0)
        steps = np.concatenate([np.cos(ang / 2)[:, None], np.sin(ang / 2)[:, None] * axis], axis=1)
        path = kernels.quat_cumprod(steps)
        self.quats = np.concatenate([[[1.0, 0.0, 0.0, 0.0]], path])

    def at(self, t):
        """Unitaries at times ``t`` (s); scalar in, (2, 2) out."""
        t = np.asarray(t, float)
        if np.any(t < 0):
            raise ValueError("drift time must be >= 0")
        idx = np.minimum((t / self.step).astype(np.int64), len(self.quats) - 1)
        return quat_to_unitary(self.quats[idx])


def drift_unitary(t, drift_rate, seed, step=0.1, name="drift"):
    """Drift unitary at time ``t`` on the path fixed by ``(seed, name)``."""
    path = PolarizationDrift(drift_rate, float(np.max(t)) + step, stream_rng(seed, name), step)
    return path.at(t)


# ---------------------------------------------------------------------------
# Monte Carlo operations


def generate_pairs(source: SourceSpec, duration: float, seed: int | np.random.Generator, start=0.0):
    """Sorted emission times (int64 ps) of a homogeneous Poisson process."""
    rng = seed if isinstance(seed, np.random.Generator) else stream_rng(seed, "pairs")
    n = rng.poisson(source.pair_rate * duration)
    t = np.sort(rng.random(n)) * duration + start
    return (t * PS_PER_S).astype(np.int64)


@dataclass(eq=False)
class Arrivals:
    times: np.ndarray  # int64 ps (meaningful where alive)
    modes: np.ndarray  # 0 = LP01, 1 = LP11, -1 = not launched
    alive: np.ndarray


def propagate(emissions, arm: ArmModel, rng) -> Arrivals:
    """Launch, attenuate and delay one photon per emission time."""
    emissions = np.asarray(emissions, np.int64)
    n = emissions.size
    u = rng.random(n)
    cum = np.cumsum(arm.launch)
    modes = np.where(u < cum[0], 0, np.where(u < cum[1], 1, -1)).astype(np.int8)
    launched = modes >= 0
    m = np.where(launched, modes, 0)
    alive = launched & (rng.random(n) < arm.transmission[m])
    times = emissions + np.rint(arm.delays_ps[m]).astype(np.int64)
    return Arrivals(times, modes, alive)


def werner_probabilities(visibility, ua, ub, basis_a, basis_b):
    """Joint outcome probabilities ``(N, 2, 2)`` for analyzer-frame unitaries.

    State: ``V |Phi+><Phi+| + (1 - V) I/4`` with ``ua`` on photon A and
    ``ub`` on photon B.
    """
    alpha = ANALYZERS[basis_a] @ ua  # (N, outcome, component)
    beta = ANALYZERS[basis_b] @ ub
    amp = np.einsum("nak,nbk->nab", alpha, beta) / math.sqrt(2)
    return visibility * np.abs(amp) ** 2 + (1.0 - visibility) / 4.0


def _jitter(times, sigma, rng):
    if sigma <= 0:
        return times
    return np.maximum(times + np.rint(rng.normal(0.0, sigma, times.size)).astype(np.int64), 0)


def detect(arr_a: Arrivals, arr_b: Arrivals, visibility, detectors: DetectorSpec, rng,
           unitaries_a=None, unitaries_b=None):
    """Turn arrivals into tag streams for A and B.

    ``unitaries_*`` are ``(N, 2, 2)`` analyzer-frame rotations (identity if
    omitted); only rows where both photons are detected are used.
    """
    n = arr_a.times.size
    det_a = arr_a.alive & (rng.random(n) < detectors.efficiency)
    det_b = arr_b.alive & (rng.random(n) < detectors.efficiency)
    basis_a = rng.integers(0, 2, n)
    basis_b = rng.integers(0, 2, n)
    out_a = rng.integers(0, 2, n)  # marginal of any locally rotated Werner state is uniform
    out_b = rng.integers(0, 2, n)
    both = np.flatnonzero(det_a & det_b)
    u = rng.random(both.size)
    if both.size:
        ua = IDENTITY[None].repeat(both.size, 0) if unitaries_a is None else unitaries_a[both]
        ub = IDENTITY[None].repeat(both.size, 0) if unitaries_b is None else unitaries_b[both]
        p = werner_probabilities(visibility, ua, ub, basis_a[both], basis_b[both]).reshape(-1, 4)
        cdf = np.cumsum(p, axis=1)
        k = np.minimum((u[:, None] >= cdf[:, :3]).sum(axis=1), 3)
        out_a[both] = k // 2
        out_b[both] = k % 2
    streams = []
    for party, det, arr, basis, out in (("A", det_a, arr_a, basis_a, out_a), ("B", det_b, arr_b, basis_b, out_b)):
        idx = np.flatnonzero(det)
        t = _jitter(arr.times[idx], detectors.jitter_sigma, rng)
        ch = (2 * basis[idx] + out[idx]).astype(np.uint8)
        s = TagStream.merged([(t, ch)], party)
        streams.append(apply_dead_time(s, detectors))
    return streams[0], streams[1]


def apply_dead_time(stream: TagStream, detectors: DetectorSpec) -> TagStream:
    if detectors.dead_time <= 0 or len(stream) == 0:
        return stream
    keep = kernels.dead_time_mask(stream.times, stream.channels, round(detectors.dead_time * 1000))
    return TagStream(stream.times[keep], stream.channels[keep], stream.party)


def inject_dark_counts(stream: TagStream, detectors: DetectorSpec, duration, rng, start=0.0) -> TagStream:
    """Add an independent Poisson train of dark clicks on each of the four channels."""
    if detectors.dark_rate <= 0:
        return stream
    parts = [(stream.times, stream.channels)]
    for ch in range(4):
        k = rng.poisson(detectors.dark_rate * duration)
        t = ((rng.random(k) * duration + start) * PS_PER_S).astype(np.int64)
        parts.append((t, np.full(k, ch, np.uint8)))
    return TagStream.merged(parts, stream.party)


# ---------------------------------------------------------------------------
# full link


@dataclass(eq=False)
class LinkSetup:
    source: SourceSpec
    arm_a: ArmConfig
    arm_b: ArmConfig
    detectors: DetectorSpec
    spatial: bool = True


def build_models(link: LinkSetup, duration, seed, drift_step=0.1):
    models = []
    for name, arm in (("a", link.arm_a), ("b", link.arm_b)):
        drift = None
        if arm.drift_rate > 0:
            drift = PolarizationDrift(arm.drift_rate, duration, stream_rng(seed, f"drift-{name}"), drift_step)
        models.append(prepare_arm(arm, link.source.wavelength, link.spatial, drift))
    return models


def simulate_link(link: LinkSetup, duration: float, seed: int, chunk_pairs=2_000_000, models=None):
    """Simulate ``duration`` seconds; returns ``(stream_a, stream_b)``."""
    if duration <= 0:
        raise ConfigError("duration must be > 0", "duration")
    model_a, model_b = models or build_models(link, duration, seed)
    rng_pairs = stream_rng(seed, "pairs")
    rng_a = stream_rng(seed, "arm-a")
    rng_b = stream_rng(seed, "arm-b")
    rng_det = stream_rng(seed, "detect")
    expected = link.source.pair_rate * duration
    n_chunks = max(1, int(math.ceil(expected / chunk_pairs)))
    span = duration / n_chunks
    parts_a, parts_b = [], []
    for c in range(n_chunks):
        em = generate_pairs(link.source, span, rng_pairs, start=c * span)
        arr_a = propagate(em, model_a, rng_a)
        arr_b = propagate(em, model_b, rng_b)
        both = arr_a.alive & arr_b.alive
        ua = ub = None
        if both.any():
            ua = np.empty((em.size, 2, 2), complex)
            ub = np.empty((em.size, 2, 2), complex)
            ua[both] = model_a.analyzer_unitaries(arr_a.modes[both], em[both])
            ub[both] = model_b.analyzer_unitaries(arr_b.modes[both], em[both])
        sa, sb = detect(arr_a, arr_b, link.source.intrinsic_visibility, link.detectors, rng_det, ua, ub)
        parts_a.append((sa.times, sa.channels))
        parts_b.append((sb.times, sb.channels))
    stream_a = TagStream.merged(parts_a, "A")
    stream_b = TagStream.merged(parts_b, "B")
    stream_a = inject_dark_counts(stream_a, link.detectors, duration, stream_rng(seed, "dark-a"))
    stream_b = inject_dark_counts(stream_b, link.detectors, duration, stream_rng(seed, "dark-b"))
    return apply_dead_time(stream_a, link.detectors), apply_dead_time(stream_b, link.detectors)


# ---------------------------------------------------------------------------
# closed-form expectations (oracle for the Monte Carlo and for projections)


def rotation_visibility(ua, ub):
    """Basis-averaged correlation visibility of Phi+ under local unitaries."""
    total = 0.0
    for s in (0, 1):
        p = werner_probabilities(1.0, ua[None], ub[None], np.array([s]), np.array([s]))[0]
        total += p[0, 0] + p[1, 1] - p[0, 1] - p[1, 0]
    return total / 2


@dataclass
class LinkExpectation:
    singles_a: float
    singles_b: float
    pair_rates: np.ndarray  # detected pair rate per (mode A, mode B), all delays
    accepted: np.ndarray  # fraction of each mode pair inside the window
    pair_visibility: np.ndarray
    accidental_rate: float
    coincidence_rate: float
    qber: float

    @property
    def visibility(self):
        return 1.0 - 2.0 * self.qber

    @property
    def true_rate(self):
        return float((self.pair_rates * self.accepted).sum())


def expected_link(link: LinkSetup, window_ps: float, models=None, at_time=None) -> LinkExpectation:
    """Analytic rates and QBER for a coincidence window centred on A01B01.

    With ``at_time`` (s) and drifting ``models`` the polarization frames are
    frozen at that instant.
    """
    src, det = link.source, link.detectors
    ma, mb = models or (prepare_arm(link.arm_a, src.wavelength, link.spatial),
                        prepare_arm(link.arm_b, src.wavelength, link.spatial))
    pa = ma.launch * ma.transmission * det.efficiency
    pb = mb.launch * mb.transmission * det.efficiency
    rates = src.pair_rate * np.outer(pa, pb)
    sigma = math.sqrt(2) * det.jitter_sigma
    ref = mb.delays_ps[0] - ma.delays_ps[0]
    hw = window_ps / 2
    acc = np.empty((N_MODES, N_MODES))
    vis = np.empty((N_MODES, N_MODES))
    t_ps = None if at_time is None else np.full(N_MODES, at_time * PS_PER_S)
    ua_all = ma.analyzer_unitaries(np.arange(N_MODES), t_ps)
    ub_all = mb.analyzer_unitaries(np.arange(N_MODES), t_ps)
    for i in range(N_MODES):
        for j in range(N_MODES):
            shift = mb.delays_ps[j] - ma.delays_ps[i] - ref
            if sigma > 0:
                acc[i, j] = ndtr((hw - shift) / sigma) - ndtr((-hw - shift) / sigma)
            else:
                acc[i, j] = float(abs(shift) <= hw)
            vis[i, j] = src.intrinsic_visibility * rotation_visibility(ua_all[i], ub_all[j])
    s_a = pa.sum() * src.pair_rate + 4 * det.dark_rate
    s_b = pb.sum() * src.pair_rate + 4 * det.dark_rate
    true = rates * acc
    c_true = true.sum()
    accidental = s_a * s_b * window_ps / PS_PER_S
    errors = (true * (1 - vis) / 2).sum() + accidental / 2
    total = c_true + accidental
    return LinkExpectation(s_a, s_b, rates, acc, vis, accidental, total, errors / total if total else 0.0)


def transmission_loss_db(link: LinkSetup, window_ps: float, models=None) -> float:
    """Coincidence loss relative to the same source, launch and detectors
    with zero-length lossless arms, no filters and an unbounded window."""
    src, det = link.source, link.detectors
    ma, mb = models or (prepare_arm(link.arm_a, src.wavelength, link.spatial),
                        prepare_arm(link.arm_b, src.wavelength, link.spatial))
    exp = expected_link(link, window_ps, (ma, mb))
    reference = src.pair_rate * det.efficiency**2 * ma.launch.sum() * mb.launch.sum()
    return 10 * math.log10(reference / exp.true_rate)
