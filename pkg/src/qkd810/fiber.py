"""Weakly-guiding step-index fiber: LP modes, group delay, MFD and coupling.

Lengths are in micrometres, wavelengths in nanometres, group delays in
ns/km. Refractive indices are taken as wavelength independent, so group
delay differences come from waveguide dispersion alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import jv, kv

from .errors import (
    ConvergenceFailure,
    FiberError,
    GridMismatch,
    InfeasibleTargets,
    NoGuidedMode,
    NotMultimode,
    WrongMode,
)

C_KM_PER_S = 299_792.458
LP11_CUTOFF = 2.404825557695773  # first zero of J0
LP21_CUTOFF = 3.831705970207512  # first zero of J1

B_SCAN_POINTS = 1000
B_RTOL = 1e-10
DELTA_LAMBDA_NM = 0.1
GRID_EXTENT = 4.0
GRID_POINTS = 2049


@dataclass(frozen=True)
class FiberSpec:
    core_radius: float
    core_index: float
    cladding_index: float
    attenuation: Mapping[float, float] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if not self.core_radius > 0:
            raise FiberError(f"core_radius must be positive, got {self.core_radius}")
        if not self.core_index > self.cladding_index > 1:
            raise FiberError("need core_index > cladding_index > 1")
        att = {float(k): float(v) for k, v in dict(self.attenuation).items()}
        if any(v < 0 for v in att.values()):
            raise FiberError("attenuation values must be >= 0")
        object.__setattr__(self, "attenuation", att)

    @property
    def numerical_aperture(self):
        return math.sqrt(self.core_index**2 - self.cladding_index**2)

    def attenuation_at(self, wavelength):
        """Tabulated loss in dB/km; no interpolation between entries."""
        for wl, loss in self.attenuation.items():
            if abs(wl - wavelength) < 1e-9:
                return loss
        raise FiberError(f"no attenuation entry for {wavelength} nm in fiber {self.label!r}")

    def to_dict(self):
        return {
            "label": self.label,
            "core_radius": f"{self.core_radius!r} um",
            "core_index": self.core_index,
            "cladding_index": self.cladding_index,
            "attenuation": {f"{wl:g} nm": f"{loss:g} dB/km" for wl, loss in sorted(self.attenuation.items())},
        }


@dataclass(frozen=True, eq=False)
class ModeSolution:
    """One guided LP mode sampled on a uniform radial grid.

    ``radial_field`` is normalized so the full transverse field
    ``R(r) * cos(l*phi)`` carries unit power on the stored grid.
    """

    azimuthal_index: int
    radial_index: int
    effective_index: float
    normalized_b: float
    group_delay: float
    radius: np.ndarray
    radial_field: np.ndarray
    wavelength: float
    v_number: float
    core_radius: float
    fiber_label: str = ""

    @property
    def name(self):
        return f"LP{self.azimuthal_index}{self.radial_index}"

    @property
    def u(self):
        return self.v_number * math.sqrt(1.0 - self.normalized_b)

    @property
    def w(self):
        return self.v_number * math.sqrt(self.normalized_b)

    def field_at(self, r):
        """Unnormalized analytic radial profile (Bessel J inside, K outside)."""
        return bessel_profile(np.asarray(r, float), self.core_radius, self.u, self.w, self.azimuthal_index)


def _azimuthal_weight(l):
    return 2 * math.pi if l == 0 else math.pi


def bessel_profile(r, a, u, w, l):
    x = np.maximum(r, 1e-300) / a
    with np.errstate(over="ignore", invalid="ignore"):
        core = jv(l, u * x) / jv(l, u)
        clad = kv(l, w * x) / kv(l, w)
    clad = np.where(np.isfinite(clad), clad, 0.0)
    return np.where(r < a, core, clad)


def v_number(spec: FiberSpec, wavelength: float) -> float:
    if not wavelength > 0:
        raise FiberError("wavelength must be positive")
    return 2 * math.pi * spec.core_radius * spec.numerical_aperture / (wavelength * 1e-3)


def _characteristic(b, v, l):
    # u J_{l-1}(u) K_l(w) + w K_{l-1}(w) J_l(u): pole-free form of the LP dispersion relation
    u = v * np.sqrt(1.0 - b)
    w = v * np.sqrt(b)
    return u * jv(l - 1, u) * kv(l, w) + w * kv(l - 1, w) * jv(l, u)


def _roots_b(v, l):
    """All normalized propagation constants of LP_l* at normalized frequency v."""
    eps = 1e-12
    grid = np.linspace(eps, 1.0 - eps, B_SCAN_POINTS + 1)
    with np.errstate(all="ignore"):
        f = _characteristic(grid, v, l)
    roots = []
    for i in range(B_SCAN_POINTS):
        f0, f1 = f[i], f[i + 1]
        if not (np.isfinite(f0) and np.isfinite(f1)):
            continue
        if f0 == 0.0:
            roots.append(grid[i])
        elif f0 * f1 < 0:
            try:
                b, res = brentq(_characteristic, grid[i], grid[i + 1], args=(v, l),
                                xtol=1e-15, rtol=B_RTOL * 1e-2, full_output=True)
            except (ValueError, RuntimeError) as exc:
                raise ConvergenceFailure(f"root refinement failed for l={l}, v={v}") from exc
            if not res.converged:
                raise ConvergenceFailure(f"root refinement did not converge for l={l}, v={v}")
            roots.append(b)
    return sorted(roots, reverse=True)


def _neff(spec, b):
    n1, n2 = spec.core_index, spec.cladding_index
    return math.sqrt(n2 * n2 + b * (n1 * n1 - n2 * n2))


def _beta(spec, wavelength, l, k):
    """Propagation constant in rad/um of the k-th LP_l mode, or None if cut off."""
    roots = _roots_b(v_number(spec, wavelength), l)
    if k >= len(roots):
        return None
    return 2 * math.pi * _neff(spec, roots[k]) / (wavelength * 1e-3)


def group_delay(spec, wavelength, l, k=0, dlam=DELTA_LAMBDA_NM):
    """dbeta/domega by central difference in wavelength, in ns/km."""
    bp = _beta(spec, wavelength + dlam, l, k)
    bm = _beta(spec, wavelength - dlam, l, k)
    if bp is None or bm is None:
        raise ConvergenceFailure(f"LP{l}{k + 1} is cut off within +-{dlam} nm of {wavelength} nm")
    lam_um = wavelength * 1e-3
    dbeta_dlam = (bp - bm) / (2 * dlam * 1e-3)
    n_group = -(lam_um**2) / (2 * math.pi) * dbeta_dlam
    return n_group / C_KM_PER_S * 1e9


def _radial_samples(spec, v, b, l, extent=GRID_EXTENT, points=GRID_POINTS):
    a = spec.core_radius
    r = np.linspace(0.0, extent * a, points)
    u, w = v * math.sqrt(1 - b), v * math.sqrt(b)
    f = bessel_profile(r, a, u, w, l)
    power = _azimuthal_weight(l) * np.trapezoid(f * f * r, r)
    return r, f / math.sqrt(power)


def solve_modes(spec: FiberSpec, wavelength: float, *, with_group_delay=True) -> list[ModeSolution]:
    """Guided LP modes sorted by descending effective index."""
    v = v_number(spec, wavelength)
    modes = []
    l = 0
    while True:
        roots = _roots_b(v, l)
        if not roots:
            break
        for k, b in enumerate(roots):
            if not 0.0 < b < 1.0:
                raise ConvergenceFailure(f"normalized b={b} outside (0, 1)")
            r, f = _radial_samples(spec, v, b, l)
            tg = group_delay(spec, wavelength, l, k) if with_group_delay else float("nan")
            modes.append(ModeSolution(
                azimuthal_index=l, radial_index=k + 1, effective_index=_neff(spec, b),
                normalized_b=b, group_delay=tg, radius=r, radial_field=f,
                wavelength=wavelength, v_number=v, core_radius=spec.core_radius,
                fiber_label=spec.label,
            ))
        l += 1
    if not modes:
        raise NoGuidedMode(f"no bound LP mode at V={v:.4g}")
    modes.sort(key=lambda m: m.effective_index, reverse=True)
    return modes


def find_mode(modes, l, k=1):
    for m in modes:
        if m.azimuthal_index == l and m.radial_index == k:
            return m
    raise NotMultimode(f"LP{l}{k} is not guided")


def modal_dispersion(spec: FiberSpec, wavelength: float) -> float:
    """LP11 minus LP01 group delay in ns/km (positive when LP11 is slower)."""
    if v_number(spec, wavelength) <= LP11_CUTOFF:
        raise NotMultimode(f"{spec.label or 'fiber'} is single-mode at {wavelength} nm")
    return group_delay(spec, wavelength, 1) - group_delay(spec, wavelength, 0)


def mode_field_diameter(mode: ModeSolution) -> float:
    """Petermann-II diameter in um."""
    if mode.azimuthal_index != 0:
        raise WrongMode(f"MFD is defined for LP0x modes, got {mode.name}")
    r, f = mode.radius, mode.radial_field
    df = np.gradient(f, r)
    num = np.trapezoid(f * f * r, r)
    den = np.trapezoid(df * df * r, r)
    return 2.0 * math.sqrt(2.0 * num / den)


# ---------------------------------------------------------------------------
# coupling


def _angular_samples(l):
    return 128 if l <= 1 else 64 * (l + 1)


def overlap_coupling(from_mode: ModeSolution, to_mode: ModeSolution, lateral_offset: float = 0.0,
                     *, radial_points=1024) -> float:
    """Power coupled from ``from_mode`` into ``to_mode`` displaced by
    ``lateral_offset`` um along x.

    Both fields take the cos(l*phi) orientation with phi measured from the
    offset direction. Quadrature is on a polar grid centred on the midpoint
    of the two fiber axes (trapezoid in r, periodic trapezoid in phi), which
    makes the result exactly symmetric in its two mode arguments.
    """
    if abs(from_mode.wavelength - to_mode.wavelength) > 1e-9:
        raise GridMismatch("modes were solved at different wavelengths")
    for m in (from_mode, to_mode):
        dr = np.diff(m.radius)
        if m.radius.size < 2 or m.radius[0] != 0.0 or not np.allclose(dr, dr[0]):
            raise GridMismatch(f"{m.name} is not sampled on a uniform grid from r=0")
    d = abs(float(lateral_offset))
    reach1, reach2 = from_mode.radius[-1], to_mode.radius[-1]
    if d >= reach1 + reach2:
        raise GridMismatch("lateral offset exceeds both sampled domains")
    rmax = max(reach1, reach2) + d / 2
    r = np.linspace(0.0, rmax, radial_points)
    nphi = max(_angular_samples(from_mode.azimuthal_index), _angular_samples(to_mode.azimuthal_index))
    phi = 2 * np.pi * np.arange(nphi) / nphi
    x = r[:, None] * np.cos(phi)[None, :]
    y = r[:, None] * np.sin(phi)[None, :]

    def sample(mode, shift):
        xs = x - shift
        rho = np.hypot(xs, y)
        radial = np.interp(rho, mode.radius, mode.radial_field, right=0.0)
        if mode.azimuthal_index:
            radial = radial * np.cos(mode.azimuthal_index * np.arctan2(y, xs))
        return radial

    f1 = sample(from_mode, -d / 2)
    f2 = sample(to_mode, d / 2)
    dphi = 2 * np.pi / nphi

    def integrate(g):
        return dphi * np.trapezoid(g.sum(axis=1) * r, r)

    num = integrate(f1 * f2) ** 2
    den = integrate(f1 * f1) * integrate(f2 * f2)
    return float(min(max(num / den, 0.0), 1.0))


def calibrate_filter_offset(from_mode: ModeSolution, to_mode: ModeSolution, target=0.0195,
                            max_offset=None) -> float:
    """Lateral offset (um) at which ``overlap_coupling`` equals ``target``.

    Used with a higher-order ``from_mode`` whose coupling grows from zero at
    perfect alignment.
    """
    start = overlap_coupling(from_mode, to_mode, 0.0)
    if start > target:
        raise InfeasibleTargets(f"coupling at zero offset ({start:.4g}) already exceeds {target}")
    hi = max_offset or to_mode.core_radius
    if overlap_coupling(from_mode, to_mode, hi) < target:
        raise InfeasibleTargets(f"coupling never reaches {target} within {hi} um")
    return brentq(lambda d: overlap_coupling(from_mode, to_mode, d) - target, 0.0, hi, xtol=1e-8)


# ---------------------------------------------------------------------------
# calibration

SILICA_INDEX_810 = 1.4533


@dataclass(frozen=True)
class CalibrationTargets:
    mfd: float = 9.2
    mfd_wavelength: float = 1550.0
    two_mode_at: float = 810.0
    dispersion: float = 2.19
    cladding_index: float = SILICA_INDEX_810
    attenuation: Mapping[float, float] = field(default_factory=lambda: {810.0: 3.0, 1550.0: 0.22})
    label: str = "telecom"


def _spec_from_v(v_at, wavelength, radius, cladding_index, attenuation, label):
    na = v_at * wavelength * 1e-3 / (2 * math.pi * radius)
    return FiberSpec(radius, math.sqrt(cladding_index**2 + na * na), cladding_index, attenuation, label)


def lp01_mfd(spec, wavelength):
    return mode_field_diameter(solve_modes(spec, wavelength, with_group_delay=False)[0])


def _radius_for_mfd(v_at, at_wavelength, mfd, mfd_wavelength, cladding_index, attenuation, label):
    def err(a):
        return lp01_mfd(_spec_from_v(v_at, at_wavelength, a, cladding_index, attenuation, label), mfd_wavelength) - mfd

    lo, hi = 0.05 * mfd, 2.0 * mfd
    try:
        return brentq(err, lo, hi, xtol=1e-10)
    except ValueError as exc:
        raise InfeasibleTargets(f"MFD {mfd} um not reachable at V={v_at:.4g}") from exc


def calibrate_fiber(targets: CalibrationTargets = CalibrationTargets()) -> FiberSpec:
    """Fit core radius and index contrast to an MFD and an LP11-LP01 delay.

    V at ``two_mode_at`` is confined to (2.405, 3.832] so exactly LP01 and
    LP11 are guided there; within that window the core radius is chosen to
    hit the MFD exactly and V is tuned for the modal dispersion (or, if the
    dispersion target is out of reach, to minimize its squared relative
    error).
    """
    t = targets
    if not (t.mfd > 0 and t.mfd_wavelength > 0 and t.two_mode_at > 0 and t.dispersion > 0 and t.cladding_index > 1):
        raise InfeasibleTargets("targets must be positive and the cladding index above 1")
    v_lo, v_hi = LP11_CUTOFF * (1 + 1e-6), LP21_CUTOFF * (1 - 1e-9)

    def spec_for(v):
        a = _radius_for_mfd(v, t.two_mode_at, t.mfd, t.mfd_wavelength, t.cladding_index, t.attenuation, t.label)
        return _spec_from_v(v, t.two_mode_at, a, t.cladding_index, t.attenuation, t.label)

    def disp_err(v):
        return modal_dispersion(spec_for(v), t.two_mode_at) / t.dispersion - 1.0

    # LP11 is barely guided right at cutoff; keep the group-delay stencil inside the guided range
    v_lo = max(v_lo, LP11_CUTOFF * (1 + 2 * DELTA_LAMBDA_NM / t.two_mode_at) * 1.001)
    try:
        e_lo, e_hi = disp_err(v_lo), disp_err(v_hi)
    except InfeasibleTargets:
        raise
    except FiberError as exc:
        raise InfeasibleTargets(str(exc)) from exc
    if e_lo * e_hi < 0:
        v = brentq(disp_err, v_lo, v_hi, xtol=1e-10)
    else:
        res = minimize_scalar(lambda v: disp_err(v) ** 2, bounds=(v_lo, v_hi), method="bounded")
        v = res.x
    spec = spec_for(v)
    if not LP11_CUTOFF < v_number(spec, t.two_mode_at) <= LP21_CUTOFF:
        raise InfeasibleTargets("calibrated fiber violates the two-mode condition")
    return spec


def calibration_residuals(spec: FiberSpec, targets: CalibrationTargets = CalibrationTargets()):
    """Relative errors (mfd, dispersion) of ``spec`` against ``targets``."""
    mfd = lp01_mfd(spec, targets.mfd_wavelength)
    try:
        disp = modal_dispersion(spec, targets.two_mode_at)
    except NotMultimode:
        disp = 0.0
    return mfd / targets.mfd - 1.0, disp / targets.dispersion - 1.0


def design_single_mode_fiber(mfd=5.4, wavelength=810.0, v_target=2.2, cladding_index=SILICA_INDEX_810,
                             attenuation=None, label="sm800") -> FiberSpec:
    """Single-mode fiber with a given LP01 MFD at ``wavelength`` and fixed V."""
    if not 0 < v_target < LP11_CUTOFF:
        raise InfeasibleTargets("v_target must lie below the LP11 cutoff")
    att = {wavelength: 3.0} if attenuation is None else attenuation
    a = _radius_for_mfd(v_target, wavelength, mfd, wavelength, cladding_index, att, label)
    return _spec_from_v(v_target, wavelength, a, cladding_index, att, label)


def with_label(spec: FiberSpec, label: str) -> FiberSpec:
    return replace(spec, label=label)
