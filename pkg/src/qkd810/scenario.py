"""Scenario files wired into simulate -> analyze -> key-rate runs.

A scenario names a source, two arms, the detectors, a duration and seed,
and the filters to apply. :func:`run_scenario` produces one
:class:`ScenarioResult`; :func:`run_sweep`, :func:`run_drift` and
:func:`report_table1` build the multi-run products on top of it.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import coincidence as cc
from .config import Section, load_document, parse_quantity, set_path
from .errors import ConfigError, FiberError, InsufficientData, Qkd810Error
from .fiber import FiberSpec, calibrate_filter_offset
from .keyrate import (KeyRateResult, SecurityParams, estimate_visibility, key_rate_result, project_key_rate,
                      secret_fraction, sift)
from .link import (IDENTITY, ArmConfig, DetectorSpec, LinkSetup, SourceSpec, SpatialFilter, build_models,
                   expected_link, guided_modes, random_unitary, rotation_unitary, simulate_link, stream_rng,
                   transmission_loss_db)
from .tagio import save_stream

OUTPUT_KINDS = ("histogram", "table-row", "sweep-point", "coincidences", "tags", "peaks")
DEFAULT_LEAKAGE = 0.0195


def scenario_dir() -> Path:
    return Path(str(resources.files("qkd810") / "data" / "scenarios"))


def bundled(name: str) -> Path:
    """Path of a bundled scenario by file stem (``"local-benchmark"``)."""
    path = scenario_dir() / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"no bundled scenario named {name!r}", "name")
    return path


# ---------------------------------------------------------------------------
# typed scenario


@dataclass(frozen=True)
class Filters:
    temporal: float | None = None  # window in ps; None keeps every peak
    spatial: bool = False

    @property
    def label(self):
        if self.temporal is None:
            return "None" if not self.spatial else "Spatial"
        return "Temporal+spatial" if self.spatial else "Temporal"


@dataclass(frozen=True)
class AnalysisSpec:
    bin_width: int = cc.DEFAULT_BIN_PS
    half_range: int = cc.DEFAULT_HALF_RANGE_PS
    offset_search: int = 50_000
    offset_span: float = 1.0  # s of data used for the offset search
    unfiltered_window: int = 20_000  # ps, pairing window when no temporal filter is set
    threshold_sigma: float = 5.0
    min_sifted: int = 100


@dataclass(frozen=True)
class DriftSpec:
    segment: float = 20.0  # s
    ensemble_seeds: int = 50
    ensemble_pair_rate: float | None = None


@dataclass(frozen=True)
class Projection:
    local_coincidence_rate: float
    link: Path


@dataclass(eq=False)
class Scenario:
    name: str
    source: SourceSpec
    arm_a: ArmConfig
    arm_b: ArmConfig
    detectors: DetectorSpec
    duration: float
    seed: int
    filters: Filters = Filters()
    outputs: tuple = ("table-row",)
    analysis: AnalysisSpec = AnalysisSpec()
    security: SecurityParams = SecurityParams()
    scheme: str = ""
    drift: DriftSpec = DriftSpec()
    reference: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def link(self) -> LinkSetup:
        return LinkSetup(self.source, self.arm_a, self.arm_b, self.detectors, self.filters.spatial)

    @property
    def window(self) -> int:
        t = self.filters.temporal
        return int(round(t if t is not None else self.analysis.unfiltered_window))


# ---------------------------------------------------------------------------
# parsing


def _fiber(sec: Section, label) -> FiberSpec:
    att_sec = sec.section("attenuation")
    att = {}
    for key in att_sec.data:
        wl = parse_quantity(key, "wavelength", att_sec.field(str(key)))
        att[wl] = att_sec.quantity(key, "attenuation")
    att_sec.finish()
    try:
        spec = FiberSpec(sec.quantity("core_radius", "radius"), sec.number("core_index"),
                         sec.number("cladding_index"), att, sec.raw("label", label))
    except FiberError as exc:
        raise ConfigError(str(exc), sec.path) from None
    sec.finish()
    return spec


def _rotation(value, field_path, seed, stream):
    if value in (None, "identity"):
        return IDENTITY.copy()
    if value == "random":
        return random_unitary(stream_rng(seed, stream))
    sec = Section(value, field_path)
    axis = sec.raw("axis")
    if not (isinstance(axis, list) and len(axis) == 3 and all(isinstance(x, (int, float)) for x in axis)):
        raise ConfigError("axis must be three numbers (S1, S2, S3)", sec.field("axis"))
    if not any(axis):
        raise ConfigError("axis must be nonzero", sec.field("axis"))
    u = rotation_unitary(axis, sec.quantity("angle", "angle"))
    sec.raw("relative_to", None)
    sec.finish()
    return u


def _arm(sec: Section, fibers, wavelength, seed, name) -> ArmConfig:
    fiber_name = sec.raw("fiber")
    if fiber_name not in fibers:
        raise ConfigError(f"unknown fiber {fiber_name!r}; defined: {', '.join(sorted(fibers))}", sec.field("fiber"))
    fiber = fibers[fiber_name]
    launch = sec.section("launch", {"lp01": 1.0, "lp11": 0.0})
    fractions = (launch.number("lp01", lo=0, hi=1), launch.number("lp11", 0.0, lo=0, hi=1))
    launch.finish()
    rot = sec.section("rotations", {})
    u01 = _rotation(rot.raw("lp01", None), rot.field("lp01"), seed, f"rotation-{name}-lp01")
    raw11 = rot.raw("lp11", None)
    u11 = _rotation(raw11, rot.field("lp11"), seed, f"rotation-{name}-lp11")
    if isinstance(raw11, dict) and raw11.get("relative_to") is not None:
        if raw11["relative_to"] != "lp01":
            raise ConfigError("relative_to must be 'lp01'", rot.field("lp11.relative_to"))
        u11 = u01 @ u11
    rot.finish()
    spatial = None
    sf = sec.section("spatial_filter", None)
    if sf is not None:
        target_name = sf.raw("fiber")
        if target_name not in fibers:
            raise ConfigError(f"unknown fiber {target_name!r}", sf.field("fiber"))
        target = fibers[target_name]
        off = sf.raw("offset", "calibrated")
        if off == "calibrated":
            leakage = sf.number("leakage", DEFAULT_LEAKAGE, lo=0, hi=1)
            offset = calibrated_offset(fiber, target, wavelength, leakage, sf.field("offset"))
        else:
            offset = parse_quantity(off, "radius", sf.field("offset"))
        spatial = SpatialFilter(target, offset, sf.quantity("insertion_loss", "loss", 0.0))
        sf.finish()
    arm = ArmConfig(
        length=sec.quantity("length", "length"),
        fiber=fiber,
        launch_fractions=fractions,
        mode_rotations=(u01, u11),
        drift_rate=sec.quantity("drift_rate", "drift", 0.0),
        spatial_filter=spatial,
        extra_loss_db=sec.quantity("extra_loss", "loss", 0.0),
    )
    sec.finish()
    return arm


_OFFSET_CACHE: dict = {}


def calibrated_offset(fiber, target, wavelength, leakage=DEFAULT_LEAKAGE, field_path="offset"):
    """Lateral offset (um) at which LP11 of ``fiber`` leaks ``leakage`` into LP01 of ``target``."""
    key = (fiber.core_radius, fiber.core_index, fiber.cladding_index, target.core_radius, target.core_index,
           target.cladding_index, wavelength, leakage)
    if key not in _OFFSET_CACHE:
        src = guided_modes(fiber, wavelength)
        dst = guided_modes(target, wavelength)
        if len(src) < 2:
            raise ConfigError(f"fiber {fiber.label!r} has no LP11 mode to filter", field_path)
        try:
            _OFFSET_CACHE[key] = calibrate_filter_offset(src[1], dst[0], leakage)
        except FiberError as exc:
            raise ConfigError(str(exc), field_path) from None
    return _OFFSET_CACHE[key]


def _wrap(prefix, fn, *args):
    """Run ``fn`` and prefix the field path of any ConfigError it raises."""
    try:
        return fn(*args)
    except ConfigError as exc:
        field_path = exc.field or ""
        if field_path == prefix or field_path.startswith(prefix + "."):
            raise
        raise ConfigError(exc.message, f"{prefix}.{field_path}" if field_path else prefix) from None


def scenario_from_dict(doc: dict, path: Path | None = None) -> Scenario:
    top = Section(doc, "")
    name = top.raw("name")
    seed = top.number("seed", integer=True, lo=0)
    duration = top.quantity("duration", "duration")
    if not duration > 0:
        raise ConfigError("duration must be > 0", "duration")
    top.raw("description", None)

    src = top.section("source")
    source = _wrap("source", lambda: SourceSpec(src.quantity("pair_rate", "rate"),
                                                 src.number("intrinsic_visibility", 0.957),
                                                 src.quantity("wavelength", "wavelength", 810.0)))
    src.finish()

    det = top.section("detectors")
    detectors = _wrap("detectors", lambda: DetectorSpec(det.number("efficiency", 0.70),
                                                        det.quantity("dark_rate", "rate", 0.0),
                                                        det.quantity("jitter_sigma", "time", 250.0),
                                                        det.quantity("dead_time", "time", 50_000.0) / 1000.0))
    det.finish()

    fib = top.section("fibers")
    fibers = {key: _fiber(Section(val, fib.field(key)), key) for key, val in fib.data.items()}
    fib.used.update(fib.data)

    arms = {}
    for key in ("arm_a", "arm_b"):
        arms[key] = _wrap(key, _arm, top.section(key), fibers, source.wavelength, seed, key[-1])

    flt = top.section("filters", {})
    temporal = flt.raw("temporal", "none")
    window = None if temporal in ("none", None) else parse_quantity(temporal, "time", flt.field("temporal"))
    if window is not None and window <= 0:
        raise ConfigError("temporal window must be > 0", flt.field("temporal"))
    spatial = flt.raw("spatial", False)
    if not isinstance(spatial, bool):
        raise ConfigError("spatial must be true or false", flt.field("spatial"))
    flt.finish()

    outputs = top.raw("outputs", ["table-row"])
    if not isinstance(outputs, list) or any(o not in OUTPUT_KINDS for o in outputs):
        raise ConfigError(f"outputs must be a list drawn from {', '.join(OUTPUT_KINDS)}", "outputs")

    an = top.section("analysis", {})
    analysis = AnalysisSpec(
        bin_width=int(an.quantity("bin_width", "time", cc.DEFAULT_BIN_PS)),
        half_range=int(an.quantity("half_range", "time", cc.DEFAULT_HALF_RANGE_PS)),
        offset_search=int(an.quantity("offset_search", "time", 50_000)),
        offset_span=an.quantity("offset_span", "duration", 1.0),
        unfiltered_window=int(an.quantity("unfiltered_window", "time", 20_000)),
        threshold_sigma=an.number("threshold_sigma", 5.0, lo=0),
        min_sifted=an.number("min_sifted", 100, integer=True, lo=1),
    )
    if analysis.bin_width <= 0 or (2 * analysis.half_range) % analysis.bin_width:
        raise ConfigError("bin_width must be positive and divide 2 * half_range", "analysis.bin_width")
    an.finish()

    sec = top.section("security", {})
    security = _wrap("security", lambda: SecurityParams(sec.number("ec_inefficiency", SecurityParams().ec_inefficiency),
                                                         sec.number("sifting_factor", 0.5)))
    sec.finish()

    dr = top.section("drift", {})
    ens = dr.section("ensemble", {})
    drift = DriftSpec(dr.quantity("segment", "duration", 20.0), ens.number("seeds", 50, integer=True, lo=1),
                      ens.quantity("pair_rate", "rate", None))
    ens.finish()
    dr.finish()
    if drift.segment <= 0:
        raise ConfigError("segment must be > 0", "drift.segment")

    ref = top.section("reference", {})
    reference = {}
    for key in ("pair_rate", "secure_rate"):
        if ref.has(key):
            reference[key] = ref.quantity(key, "rate")
    ref.finish()
    scheme = top.raw("scheme", "")
    top.raw("projection", None)
    top.finish()
    return Scenario(str(name), source, arms["arm_a"], arms["arm_b"], detectors, duration, seed,
                    Filters(window, spatial), tuple(outputs), analysis, security, str(scheme), drift, reference,
                    path)


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    """Load a scenario file; ``overrides`` maps dotted keys to raw values."""
    path = Path(path)
    doc = load_document(path)
    for key, value in (overrides or {}).items():
        doc = set_path(doc, key, value)
    return scenario_from_dict(doc, path)


def _as_scenario(config, overrides=None) -> Scenario:
    if isinstance(config, Scenario):
        if overrides:
            raise ConfigError("overrides need a config path", "overrides")
        return config
    return load_scenario(config, overrides)


# ---------------------------------------------------------------------------
# single run


TABLE_COLUMNS = ("scheme", "d_a_km", "d_b_km", "transmission_loss_db", "filtering", "visibility_pct",
                 "coincidence_rate", "secure_rate", "qber_pct", "sifted_rate")


@dataclass(eq=False)
class ScenarioResult:
    scenario: Scenario
    offset: int
    histogram: cc.CoincidenceHistogram
    peaks: list
    coincidences: cc.Coincidences
    key: KeyRateResult
    transmission_loss_db: float
    streams: tuple

    def table_row(self) -> dict:
        s, k = self.scenario, self.key
        return {
            "scheme": s.scheme or s.name,
            "d_a_km": s.arm_a.length,
            "d_b_km": s.arm_b.length,
            "transmission_loss_db": self.transmission_loss_db,
            "filtering": s.filters.label,
            "visibility_pct": 100 * k.visibility,
            "coincidence_rate": k.coincidence_rate,
            "secure_rate": k.secure_rate,
            "qber_pct": 100 * k.qber,
            "sifted_rate": k.sifted_rate,
        }

    def peaks_csv(self) -> str:
        lines = ["center_ps,weight,label"]
        lines += [f"{p.center:.1f},{p.weight:.1f},{p.label or ''}" for p in self.peaks]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        """Write the configured output artifacts; returns the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.scenario.name
        written = []

        def emit(suffix, text):
            p = out / f"{stem}.{suffix}"
            p.write_text(text)
            written.append(p)

        kinds = self.scenario.outputs
        if "histogram" in kinds:
            emit("histogram.csv", self.histogram.to_csv())
        if "peaks" in kinds:
            emit("peaks.csv", self.peaks_csv())
        if "table-row" in kinds or "sweep-point" in kinds:
            emit("keyrate.csv", rows_to_csv([self.table_row()], TABLE_COLUMNS))
        if "coincidences" in kinds:
            emit("coincidences.csv", self.coincidences.to_csv())
        if "tags" in kinds:
            for stream in self.streams:
                p = out / f"{stem}.{stream.party.lower()}.qtags"
                save_stream(p, stream)
                written.append(p)
        return written


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r[c]) for c in columns) + "\n")
    return buf.getvalue()


def analyze_streams(stream_a, stream_b, duration, analysis: AnalysisSpec = AnalysisSpec(), window=None,
                    security: SecurityParams = SecurityParams(), delays=None):
    """Offset search, histogram, peaks, pairing and key rate for two streams.

    Returns ``(offset, histogram, peaks, coincidences, key)``.
    """
    start = min(stream_a.times[:1].tolist() + stream_b.times[:1].tolist() or [0])
    span = int(analysis.offset_span * 1e12)
    offset = cc.find_offset(stream_a.between(start, start + span), stream_b.between(start, start + span),
                            analysis.offset_search, analysis.bin_width)
    hist = cc.build_histogram(stream_a, stream_b, offset, analysis.half_range, analysis.bin_width)
    peaks = cc.detect_peaks(hist, analysis.threshold_sigma)
    if delays is not None:
        modes = delays[2] if len(delays) > 2 else ((0, 1), (0, 1))
        peaks = cc.label_peaks(peaks, delays[0], delays[1], 2 * analysis.bin_width + 500, *modes)
    coinc = cc.pair_coincidences(stream_a, stream_b, offset, window or analysis.unfiltered_window)
    key = key_rate_result(len(coinc), sift(coinc), duration, security, analysis.min_sifted)
    return offset, hist, peaks, coinc, key


def run_scenario(config, out_dir=None, overrides=None) -> ScenarioResult:
    """Simulate and analyze one scenario (path or :class:`Scenario`)."""
    sc = _as_scenario(config, overrides)
    link = sc.link
    models = build_models(link, sc.duration, sc.seed)
    a, b = simulate_link(link, sc.duration, sc.seed, models=models)
    carried = tuple(tuple(i for i in range(len(m.launch)) if m.launch[i] > 0 and m.transmission[i] > 0)
                    for m in models)
    delays = (models[0].delays_ps, models[1].delays_ps, carried)
    offset, hist, peaks, coinc, key = analyze_streams(a, b, sc.duration, sc.analysis, sc.window, sc.security,
                                                      delays)
    loss = transmission_loss_db(link, sc.window, models)
    result = ScenarioResult(sc, offset, hist, peaks, coinc, key, loss, (a, b))
    if out_dir is not None:
        result.write(out_dir)
    return result


def expected_row(config, overrides=None) -> dict:
    """Analytic counterpart of :meth:`ScenarioResult.table_row`."""
    sc = _as_scenario(config, overrides)
    exp = expected_link(sc.link, sc.window)
    sifted = sc.security.sifting_factor * exp.coincidence_rate
    return {
        "scheme": sc.scheme or sc.name,
        "d_a_km": sc.arm_a.length,
        "d_b_km": sc.arm_b.length,
        "transmission_loss_db": transmission_loss_db(sc.link, sc.window),
        "filtering": sc.filters.label,
        "visibility_pct": 100 * exp.visibility,
        "coincidence_rate": exp.coincidence_rate,
        "secure_rate": sifted * secret_fraction(exp.qber, sc.security.ec_inefficiency),
        "qber_pct": 100 * exp.qber,
        "sifted_rate": sifted,
    }


# ---------------------------------------------------------------------------
# length sweep

SWEEP_COLUMNS = ("length_km", "transmission_loss_db", "visibility_pct", "qber_pct", "coincidence_rate",
                 "secure_rate")


@dataclass
class SweepTable:
    rows: list
    security: SecurityParams

    def column(self, name):
        return np.array([r[name] for r in self.rows], float)

    def to_csv(self):
        return rows_to_csv(self.rows, SWEEP_COLUMNS)

    def cutoff(self) -> float:
        """Length (km) where the secure rate reaches zero.

        Linear interpolation of the secret-fraction margin between the last
        positive point and the first zero point; ``inf`` if no zero point.
        """
        lengths = self.column("length_km")
        qber = self.column("qber_pct") / 100
        margin = np.array([secret_fraction_margin(q, self.security.ec_inefficiency) for q in qber])
        zero = np.flatnonzero(margin <= 0)
        if zero.size == 0:
            return math.inf
        j = int(zero[0])
        if j == 0:
            return float(lengths[0])
        m0, m1 = margin[j - 1], margin[j]
        return float(lengths[j - 1] + (lengths[j] - lengths[j - 1]) * m0 / (m0 - m1))

    def log_linear_r2(self) -> float:
        """R^2 of a straight-line fit of log10(secure rate) against length,
        over the points before the first zero rate."""
        rate = self.column("secure_rate")
        lengths = self.column("length_km")
        pos = np.flatnonzero(rate <= 0)
        n = int(pos[0]) if pos.size else rate.size
        if n < 3:
            raise InsufficientData("need at least 3 points with nonzero secure rate")
        x, y = lengths[:n], np.log10(rate[:n])
        slope, icpt = np.polyfit(x, y, 1)
        resid = y - (slope * x + icpt)
        return float(1 - (resid**2).sum() / ((y - y.mean()) ** 2).sum())


def secret_fraction_margin(qber, f):
    from .keyrate import binary_entropy

    return 1.0 - (1.0 + f) * binary_entropy(qber)


def run_sweep(config, lengths, out_dir=None, overrides=None) -> SweepTable:
    """One run per length of Alice's fiber, Bob's arm unchanged."""
    lengths = [float(x) for x in lengths]
    if len(lengths) < 2:
        raise ConfigError("a sweep needs at least 2 lengths", "lengths")
    if any(x < 0 for x in lengths):
        raise ConfigError("lengths must be >= 0", "lengths")
    base = load_document(config) if not isinstance(config, Scenario) else None
    if base is None:
        raise ConfigError("run_sweep needs a config path", "config")
    for key, value in (overrides or {}).items():
        base = set_path(base, key, value)
    rows = []
    security = None
    for length in lengths:
        doc = set_path(base, "arm_a.length", f"{length!r} km")
        sc = scenario_from_dict(doc, Path(config))
        security = sc.security
        res = run_scenario(sc)
        k = res.key
        rows.append({"length_km": length, "transmission_loss_db": res.transmission_loss_db,
                     "visibility_pct": 100 * k.visibility, "qber_pct": 100 * k.qber,
                     "coincidence_rate": k.coincidence_rate, "secure_rate": k.secure_rate})
    table = SweepTable(rows, security)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{sc.name}.sweep.csv").write_text(table.to_csv())
    return table


# ---------------------------------------------------------------------------
# drift run

DRIFT_COLUMNS = ("t_s", "qber_pct", "secure_rate", "coincidence_rate", "sifted")


@dataclass
class DriftSeries:
    t: np.ndarray  # segment midpoints, s
    qber: np.ndarray
    secure_rate: np.ndarray
    coincidence_rate: np.ndarray
    sifted: np.ndarray

    def to_csv(self):
        rows = [dict(zip(DRIFT_COLUMNS, (float(t), 100 * float(q), float(s), float(c), int(n))))
                for t, q, s, c, n in zip(self.t, self.qber, self.secure_rate, self.coincidence_rate, self.sifted)]
        return rows_to_csv(rows, DRIFT_COLUMNS)

    @property
    def mean_qber(self):
        return float(self.qber.mean())

    @property
    def mean_secure_rate(self):
        return float(self.secure_rate.mean())


def segment_series(coinc: cc.Coincidences, duration, segment, t0=0, security=SecurityParams()) -> DriftSeries:
    """Per-segment QBER and secure rate from a coincidence list."""
    n_seg = int(duration // segment)
    if n_seg < 2:
        raise ConfigError("duration must cover at least 2 segments", "drift.segment")
    seg_ps = int(round(segment * 1e12))
    idx = (coinc.t_a - t0) // seg_ps
    s = sift(coinc)
    same = np.flatnonzero(np.asarray(coinc.channel_a) // 2 == np.asarray(coinc.channel_b) // 2)
    sidx = idx[same]
    err = (s.bits_a != s.bits_b).astype(np.int64)
    ok = (sidx >= 0) & (sidx < n_seg)
    n_sift = np.bincount(sidx[ok], minlength=n_seg)[:n_seg]
    n_err = np.bincount(sidx[ok], weights=err[ok], minlength=n_seg)[:n_seg]
    okc = (idx >= 0) & (idx < n_seg)
    n_coinc = np.bincount(idx[okc], minlength=n_seg)[:n_seg]
    with np.errstate(invalid="ignore", divide="ignore"):
        qber = np.where(n_sift > 0, n_err / np.maximum(n_sift, 1), np.nan)
    frac = np.array([secret_fraction(q, security.ec_inefficiency) if np.isfinite(q) else 0.0 for q in qber])
    t = (np.arange(n_seg) + 0.5) * segment
    return DriftSeries(t, qber, n_sift / segment * frac, n_coinc / segment, n_sift)


def run_drift(config, segment=None, out_dir=None, overrides=None, seed=None) -> DriftSeries:
    """Simulate the full duration and analyze it in fixed segments."""
    sc = _as_scenario(config, overrides)
    if seed is not None:
        sc = replace(sc, seed=int(seed))
    segment = sc.drift.segment if segment is None else float(segment)
    if sc.duration < 2 * segment:
        raise ConfigError("duration must cover at least 2 segments", "duration")
    a, b = simulate_link(sc.link, sc.duration, sc.seed)
    offset, *_ = _offset_only(a, b, sc.analysis)
    coinc = cc.pair_coincidences(a, b, offset, sc.window)
    series = segment_series(coinc, sc.duration, segment, 0, sc.security)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{sc.name}.drift.csv").write_text(series.to_csv())
    return series


def _offset_only(a, b, analysis):
    span = int(analysis.offset_span * 1e12)
    return (cc.find_offset(a.between(0, span), b.between(0, span), analysis.offset_search, analysis.bin_width),)


@dataclass
class DriftEnsemble:
    t: np.ndarray
    qber: np.ndarray  # (seeds, segments)

    @property
    def mean(self):
        return np.nanmean(self.qber, axis=0)

    def step_tolerance(self, n_se=3.0):
        """Allowed decrease between neighbouring segments: ``n_se`` standard
        errors of the across-seed mean of the per-seed step."""
        steps = np.diff(self.qber, axis=1)
        return n_se * np.nanstd(steps, axis=0, ddof=1) / math.sqrt(self.qber.shape[0])

    def is_non_decreasing(self, n_se=3.0):
        return bool(np.all(np.diff(self.mean) >= -self.step_tolerance(n_se)))

    def trend(self):
        """Least-squares slope of the mean QBER (per second) and its standard
        error from the spread of the per-seed slopes."""
        slopes = np.polyfit(self.t, self.qber.T, 1)[0]
        return float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(slopes.size))


def run_drift_ensemble(config, seeds=None, pair_rate=None, overrides=None) -> DriftEnsemble:
    """Repeat the drift run over ``seeds`` (default: the configured count,
    starting at the scenario seed) at an optionally reduced pair rate."""
    sc = _as_scenario(config, overrides)
    seeds = list(range(sc.seed, sc.seed + sc.drift.ensemble_seeds)) if seeds is None else list(seeds)
    rate = pair_rate or sc.drift.ensemble_pair_rate
    if rate is not None:
        sc = replace(sc, source=replace(sc.source, pair_rate=float(rate)))
    runs = [run_drift(sc, seed=s) for s in seeds]
    return DriftEnsemble(runs[0].t, np.stack([r.qber for r in runs]))


def drift_reference_rate(sc: Scenario) -> float:
    """Secure rate the drift run should reach: the reference rate scaled
    by the ratio of configured to reference pair rates."""
    ref = sc.reference
    if "secure_rate" not in ref or "pair_rate" not in ref:
        raise ConfigError("reference.pair_rate and reference.secure_rate are required", "reference")
    return ref["secure_rate"] * sc.source.pair_rate / ref["pair_rate"]


# ---------------------------------------------------------------------------
# spool summary report and projections

TABLE1_SCENARIOS = (
    "asymmetric-2km-none",
    "asymmetric-2km-temporal",
    "asymmetric-5km-temporal",
    "symmetric-2-2-none",
    "symmetric-2-2-temporal",
    "symmetric-2-2-spatial",
)


def report_table1(out_dir=None, names=TABLE1_SCENARIOS, analytic=False) -> list[dict]:
    """Six-row summary of the bundled fiber-spool scenarios."""
    rows = []
    for name in names:
        path = bundled(name)
        rows.append(expected_row(path) if analytic else run_scenario(path).table_row())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table1.csv").write_text(rows_to_csv(rows, TABLE_COLUMNS))
    return rows


@dataclass(frozen=True)
class ProjectionResult:
    local_coincidence_rate: float
    loss_db: float
    visibility: float
    secure_rate: float


def load_projection(path) -> tuple[Projection, SecurityParams]:
    path = Path(path)
    doc = load_document(path)
    if "projection" not in doc:
        raise ConfigError("missing projection section", "projection")
    top = Section(doc, "")
    sec = top.section("projection")
    link = sec.raw("link")
    if not isinstance(link, str):
        raise ConfigError("link must name a scenario file", sec.field("link"))
    proj = Projection(sec.quantity("local_coincidence_rate", "rate"), (path.parent / link).resolve())
    sec.finish()
    s = top.section("security", {})
    params = SecurityParams(s.number("ec_inefficiency", SecurityParams().ec_inefficiency),
                            s.number("sifting_factor", 0.5))
    return proj, params


def run_projection(path) -> ProjectionResult:
    """Secure rate of a brighter source over a scenario's analytic loss
    budget and visibility (no Monte Carlo)."""
    proj, params = load_projection(path)
    sc = load_scenario(proj.link)
    loss = transmission_loss_db(sc.link, sc.window)
    vis = expected_link(sc.link, sc.window).visibility
    rate = project_key_rate(proj.local_coincidence_rate, loss, vis, params)
    return ProjectionResult(proj.local_coincidence_rate, loss, vis, rate)


def is_projection(path) -> bool:
    try:
        return "projection" in load_document(path)
    except Qkd810Error:
        return False
