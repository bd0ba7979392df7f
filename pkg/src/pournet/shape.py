"""Edge-profile reconstruction of an axisymmetric target from mass and height increments.

Over a short interval the added liquid is treated as a cylinder slab, so
``dm = rho * pi * r**2 * dh`` and ``r = sqrt(dm / (rho * pi * dh))``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .control import ModelPerception, OraclePerception
from .data import SLICE_SECONDS
from .dsp import FT_RATE
from .synthsim import GRAVITY, ContainerGeometry, PourScenario, simulate_pour

log = logging.getLogger(__name__)

DH_FLOOR_MM = 1.0
EARLY_FRACTION = 0.1


@dataclass(frozen=True)
class RadiusSample:
    h: float  # mm above the container floor, interval midpoint
    r: float  # mm
    h0: float
    h1: float
    dm: float  # kg
    early: bool = False  # inside the first 10 % of the container height


@dataclass
class ShapeProfile:
    samples: list
    coefficients: tuple  # (a, b, c) of r(h) = a h^2 + b h + c
    residual_rmse: float
    h_range: tuple
    flags: list = field(default_factory=list)

    def radius(self, h):
        a, b, c = self.coefficients
        h = np.asarray(h, dtype=np.float64)
        return a * h * h + b * h + c

    def volume(self, h0: Optional[float] = None, h1: Optional[float] = None, n: int = 2001) -> float:
        """Volume (ml) of the fitted solid of revolution between ``h0`` and ``h1`` mm."""
        h0 = self.h_range[0] if h0 is None else h0
        h1 = self.h_range[1] if h1 is None else h1
        h = np.linspace(h0, h1, n)
        return float(np.trapezoid(np.pi * self.radius(h) ** 2, h) * 1e-3)


def radius_samples(mass_t, mass, ha_t, ha_hat, rho: float, container_height: float,
                   dh_floor: float = DH_FLOOR_MM, horizon: int = 24,
                   cutoff: Optional[float] = 5.0, mass_rate: float = FT_RATE):
    """Radius samples from a mass series and an air-column series.

    ``mass`` (kg, sampled at ``mass_t``) is low-pass filtered and read at the
    height instants ``ha_t``. Intervals whose height gain is below ``dh_floor``
    are merged forward; after ``horizon`` merged steps without any gain the
    interval is dropped. Returns ``(samples, flags)``.
    """
    if rho <= 0:
        raise ValueError("density must be positive")
    mass_t = np.asarray(mass_t, dtype=np.float64)
    mass = np.asarray(mass, dtype=np.float64)
    ha_t = np.asarray(ha_t, dtype=np.float64)
    h = container_height - np.asarray(ha_hat, dtype=np.float64)
    if len(ha_t) != len(h):
        raise ValueError("height times and values differ in length")
    if cutoff is not None and len(mass) > 1:
        mass = dsp.lowpass(mass, cutoff, mass_rate)
    m = np.interp(ha_t, mass_t, mass)
    samples, flags = [], []
    s = 0
    for k in range(1, len(h)):
        dh = h[k] - h[s]
        dm = m[k] - m[s]
        if dh >= dh_floor:
            if dm < 0:
                flags.append(f"negative mass change at t={ha_t[k]:.3f}s dropped")
            else:
                mid = 0.5 * (h[s] + h[k])
                if samples and mid <= samples[-1].h:
                    flags.append(f"non-increasing height at t={ha_t[k]:.3f}s dropped")
                else:
                    r = 1e3 * np.sqrt(dm / (rho * np.pi * dh * 1e-3))
                    samples.append(RadiusSample(float(mid), float(r), float(h[s]), float(h[k]),
                                                float(dm), bool(mid < EARLY_FRACTION * container_height)))
            s = k
        elif k - s >= horizon and dh <= 0:
            flags.append(f"no height gain over [{ha_t[s]:.3f}, {ha_t[k]:.3f}] s dropped")
            s = k
    return samples, flags


def fit_profile(samples: Sequence[RadiusSample]) -> ShapeProfile:
    """Least-squares quadratic ``r(h)`` through the samples."""
    if len(samples) < 3:
        raise ValueError(f"need at least 3 radius samples, got {len(samples)}")
    h = np.array([s.h for s in samples])
    r = np.array([s.r for s in samples])
    coef = np.polynomial.polynomial.polyfit(h, r, 2)
    c, b, a = (float(v) for v in coef)
    resid = np.polynomial.polynomial.polyval(h, coef) - r
    lo = min(s.h0 for s in samples)
    hi = max(s.h1 for s in samples)
    prof = ShapeProfile(list(samples), (a, b, c), float(np.sqrt(np.mean(resid ** 2))), (lo, hi))
    if np.any(prof.radius(np.linspace(lo, hi, 256)) <= 0):
        prof.flags.append("fitted radius not positive on the sampled range")
    return prof


def evaluate_profile(p: ShapeProfile, truth: ContainerGeometry, n_bands: int = 5,
                     h_range: Optional[tuple] = None) -> list:
    """Mean |r_fit - r_true| per height band over the reconstructed range."""
    lo, hi = h_range or p.h_range
    lo, hi = max(lo, 0.0), min(hi, truth.height)
    edges = np.linspace(lo, hi, n_bands + 1)
    rows = []
    for b0, b1 in zip(edges[:-1], edges[1:]):
        hh = np.linspace(b0, b1, 64)
        err = np.abs(p.radius(hh) - truth.radius(hh))
        rows.append({"h_lo": float(b0), "h_hi": float(b1), "mean_abs_error_mm": float(err.mean())})
    return rows


def sample_errors(samples: Sequence[RadiusSample], truth: ContainerGeometry) -> np.ndarray:
    """Relative error of each sample against the true mean radius over its interval."""
    out = []
    for s in samples:
        hh = np.linspace(s.h0, s.h1, 33)
        r_eq = np.sqrt(np.mean(truth.radius(hh) ** 2))
        out.append((s.r - r_eq) / r_eq)
    return np.array(out)


def ft_mass(ft_channels: np.ndarray, delay: float, rate: float = FT_RATE,
            baseline_s: float = 0.2) -> np.ndarray:
    """Poured mass (kg) from the wrist sensor, shifted by the transport delay.

    The sensor carries the source container, so its force magnitude drops by
    ``g`` per kilogram poured.
    """
    mag = np.linalg.norm(np.asarray(ft_channels)[:3], axis=0) / GRAVITY
    m0 = mag[: max(1, int(baseline_s * rate))].mean()
    poured = m0 - mag
    shift = int(round(delay * rate))
    return np.concatenate([np.full(shift, poured[0]), poured[: len(poured) - shift]])


@dataclass
class ShapeRun:
    samples: list
    profile: Optional[ShapeProfile]
    ha_trace: np.ndarray  # (k, 2)
    flags: list


def run_shape(sc: PourScenario, params="oracle", decision_rate: float = 12.0,
              min_window: float = 0.25, rec=None, dh_floor: float = DH_FLOOR_MM) -> ShapeRun:
    """Reconstruct the target profile over one full pour.

    ``"oracle"`` pairs the true landed mass with true heights. A model pairs
    the F/T-derived mass with its own height estimates.
    """
    rec = rec if rec is not None else simulate_pour(sc)
    t_ft = rec.ft.times()
    if isinstance(params, str):
        if params != "oracle":
            raise ValueError(f"unknown estimator {params!r}")
        perceive = OraclePerception(sc)
        mass = sc.landed_mass(t_ft)
    else:
        perceive = ModelPerception(params, rec.audio.samples, rec.ft.channels)
        mass = ft_mass(rec.ft.channels, sc.transport_delay)
    stride = max(1, int(round(1.0 / (decision_rate * SLICE_SECONDS))))
    k0 = max(1, int(np.ceil(min_window / SLICE_SECONDS - 1e-9)))
    k1 = int(np.floor(sc.duration / SLICE_SECONDS + 1e-9))
    times = np.arange(k0, k1 + 1, stride) * SLICE_SECONDS
    ha = np.array([perceive(t) for t in times])
    samples, flags = radius_samples(t_ft, mass, times, ha, sc.liquid_density, sc.geometry.height,
                                    dh_floor)
    profile = None
    if len(samples) >= 3:
        profile = fit_profile(samples)
    else:
        flags.append("too few radius samples for a profile fit")
    return ShapeRun(samples, profile, np.column_stack([times, ha]), flags)


def write_profile_csv(path, profile: ShapeProfile, n_fit: int = 50) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("h_mm", "r_mm", "source"))
        for s in profile.samples:
            wr.writerow((repr(s.h), repr(s.r), "sample"))
        for hh in np.linspace(*profile.h_range, n_fit):
            wr.writerow((repr(float(hh)), repr(float(profile.radius(hh))), "fit"))
