"""Physics-based synthetic pouring recordings.

The target container is an axisymmetric vessel described by a piecewise-linear
radius profile. Audio is a quarter-wave air-column resonance excited by the
falling stream plus splash noise, force/torque is the gravity wrench of the
emptying source bottle, and the scale reads the landed liquid mass at 1 Hz.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import signal

from . import dsp
from .augment import pink_noise
from .data import SLICE_SECONDS, PouringRecording
from .dsp import AUDIO_RATE, FT_RATE, FtSeries, Waveform

log = logging.getLogger(__name__)

GRAVITY = 9.81
SPEED_OF_SOUND = 343.0
END_CORRECTION = 0.3  # times mouth diameter
SCALE_RESOLUTION = 0.002  # kg
DATASET_POUR_HEIGHT = 310.0  # mm

# relative level of odd overtones per material
BRIGHTNESS = {"glass": 0.45, "ceramic": 0.35, "steel": 0.5, "plastic": 0.2, "enamel": 0.4}


@dataclass(frozen=True)
class ContainerGeometry:
    """Radius profile ``r(h)`` in mm, linear between knots."""

    heights: tuple
    radii: tuple
    material: str = "glass"
    name: str = ""

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        r = np.asarray(self.radii, dtype=np.float64)
        if h.shape != r.shape or len(h) < 2:
            raise ValueError("need matching height/radius knots")
        if h[0] != 0 or np.any(np.diff(h) <= 0):
            raise ValueError("height knots must start at 0 and increase")
        if np.any(r <= 0):
            raise ValueError("radius must be positive everywhere")
        object.__setattr__(self, "heights", tuple(map(float, h)))
        object.__setattr__(self, "radii", tuple(map(float, r)))

    @property
    def height(self) -> float:
        return self.heights[-1]

    @property
    def mouth_diameter(self) -> float:
        return 2 * self.radii[-1]

    @classmethod
    def cylinder(cls, radius, height, material="glass", name="cylinder"):
        return cls((0.0, height), (radius, radius), material, name)

    @classmethod
    def frustum(cls, r_bottom, r_top, height, material="glass", name="frustum"):
        return cls((0.0, height), (r_bottom, r_top), material, name)

    @classmethod
    def quadratic(cls, a, b, c, height, material="glass", name="quadratic", n=121):
        h = np.linspace(0, height, n)
        return cls(tuple(h), tuple(a * h ** 2 + b * h + c), material, name)

    def radius(self, h):
        return np.interp(h, self.heights, self.radii)

    def _knot_volumes(self):
        h = np.asarray(self.heights)
        r = np.asarray(self.radii)
        seg = np.pi * np.diff(h) * (r[:-1] ** 2 + r[:-1] * r[1:] + r[1:] ** 2) / 3
        return np.concatenate([[0.0], np.cumsum(seg)])

    def volume(self, h):
        """Liquid volume in ml below height ``h`` (mm); exact for the linear profile."""
        hk = np.asarray(self.heights)
        rk = np.asarray(self.radii)
        cum = self._knot_volumes()
        hq = np.clip(np.asarray(h, dtype=np.float64), 0, self.height)
        i = np.clip(np.searchsorted(hk, hq, side="right") - 1, 0, len(hk) - 2)
        r0 = rk[i]
        rq = self.radius(hq)
        part = np.pi * (hq - hk[i]) * (r0 ** 2 + r0 * rq + rq ** 2) / 3
        v = (cum[i] + part) / 1000.0
        return float(v) if np.ndim(h) == 0 else v

    @property
    def total_volume(self) -> float:
        return self._knot_volumes()[-1] / 1000.0

    def to_dict(self):
        return {"name": self.name, "material": self.material,
                "heights": list(self.heights), "radii": list(self.radii)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["heights"]), tuple(d["radii"]), d.get("material", "glass"), d.get("name", ""))


def volume_to_height(geom: ContainerGeometry, v, tol: float = 1e-4):
    """Height (mm) holding ``v`` ml, by vectorised bisection on the volume curve."""
    v_arr = np.asarray(v, dtype=np.float64)
    total = geom.total_volume
    slack = 1e-9 * max(total, 1.0)
    if np.any(v_arr < -slack) or np.any(v_arr > total + slack):
        raise ValueError(f"volume outside [0, {total:.3f}] ml")
    lo = np.zeros_like(v_arr)
    hi = np.full_like(v_arr, geom.height)
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        below = geom.volume(mid) < v_arr
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(v_arr <= 0, 0.0, np.where(v_arr >= total, geom.height, out))
    return float(out) if np.ndim(v) == 0 else out


def resonance_frequency(ha, mouth_diameter: float = 0.0, c: float = SPEED_OF_SOUND):
    """Quarter-wave closed-pipe resonance (Hz) of an air column ``ha`` mm long.

    ``mouth_diameter`` in mm sets the end correction; 0 disables it.
    """
    ha = np.asarray(ha, dtype=np.float64)
    if np.any(ha <= 0):
        raise ValueError("air column length must be positive")
    f = c / (4.0 * (ha / 1000.0 + END_CORRECTION * mouth_diameter / 1000.0))
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class FlowProfile:
    """Piecewise-linear source outflow rate (kg/s) through the given knots."""

    times: tuple
    rates: tuple

    @classmethod
    def constant(cls, rate, t_on=0.0, t_off=1e9):
        return cls((t_on, t_on, t_off, t_off), (0.0, rate, rate, 0.0))

    @classmethod
    def trapezoid(cls, t_on, ramp_up, rate, t_off, ramp_down):
        return cls((t_on, t_on + ramp_up, t_off, t_off + ramp_down), (0.0, rate, rate, 0.0))

    def rate(self, t):
        return np.interp(t, self.times, self.rates, left=0.0, right=self.rates[-1])

    def cumulative(self, t):
        """Exact integral of the rate from 0 to ``t``."""
        tk = np.asarray(self.times, dtype=np.float64)
        qk = np.asarray(self.rates, dtype=np.float64)
        seg = np.diff(tk) * (qk[:-1] + qk[1:]) / 2
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        tq = np.asarray(t, dtype=np.float64)
        i = np.clip(np.searchsorted(tk, tq, side="right") - 1, 0, len(tk) - 1)
        base = np.where(tq < tk[0], 0.0, cum[i])
        start = np.where(tq < tk[0], tq, tk[i])
        part = np.where(tq < tk[0], 0.0, (tq - start) * (qk[i] + self.rate(tq)) / 2)
        out = base + part
        return float(out) if np.ndim(t) == 0 else out

    def cut(self, t_cut: float) -> "FlowProfile":
        """Same profile with the flow stopped instantly at ``t_cut``."""
        tk = [t for t in self.times if t < t_cut]
        qk = [float(self.rate(t)) for t in tk]
        q_cut = float(self.rate(t_cut))
        return FlowProfile(tuple(tk + [t_cut, t_cut]), tuple(qk + [q_cut, 0.0]))


def default_orientation() -> np.ndarray:
    """Sensor axes in world coordinates (columns): x and y tilted upwards, z horizontal."""
    s = 1 / np.sqrt(2)
    return np.array([[0.0, 0.0, -1.0], [-s, s, 0.0], [s, s, 0.0]])


@dataclass(frozen=True)
class PourScenario:
    geometry: ContainerGeometry
    flow: FlowProfile
    duration: float
    initial_fill_height: float = 0.0
    liquid_density: float = 1000.0
    sensor_orientation: tuple = field(default_factory=lambda: tuple(map(tuple, default_orientation())))
    sensor_noise_sigma: tuple = (0.05, 0.05, 0.05, 0.003, 0.003, 0.003)
    source_container_mass: float = 0.05
    source_liquid_mass: float = 0.8
    pour_height: float = DATASET_POUR_HEIGHT
    transport_delay: float = 0.12
    rng_seed: int = 0
    scenario_id: str = ""

    def __post_init__(self):
        if min(self.flow.rates) < 0:
            raise ValueError("flow rate must be non-negative")
        if not 0 <= self.initial_fill_height < self.geometry.height:
            raise ValueError("initial fill must be below the container rim")

    @property
    def initial_mass(self) -> float:
        return self.geometry.volume(self.initial_fill_height) * 1e-6 * self.liquid_density

    @property
    def capacity_mass(self) -> float:
        """Liquid mass (kg) that fits on top of the initial fill."""
        free = self.geometry.total_volume - self.geometry.volume(self.initial_fill_height)
        return free * 1e-6 * self.liquid_density

    def source_poured(self, t, flow: Optional[FlowProfile] = None):
        """Mass that has left the source by ``t``; flow stops once the target is full."""
        flow = flow or self.flow
        return np.minimum(flow.cumulative(t), min(self.capacity_mass, self.source_liquid_mass))

    def landed_mass(self, t, flow: Optional[FlowProfile] = None):
        """Target liquid mass (kg) at ``t``, including the initial fill."""
        t = np.asarray(t, dtype=np.float64)
        return self.initial_mass + self.source_poured(t - self.transport_delay, flow)

    def air_column(self, mass):
        """Air-column length (mm) for a target liquid mass (kg)."""
        v_ml = np.asarray(mass) / self.liquid_density * 1e6
        v_ml = np.clip(v_ml, 0, self.geometry.total_volume)
        return self.geometry.height - volume_to_height(self.geometry, v_ml)

    def to_dict(self):
        return {
            "scenario_id": self.scenario_id,
            "geometry": self.geometry.to_dict(),
            "flow": {"times": list(self.flow.times), "rates": list(self.flow.rates)},
            "duration": self.duration,
            "initial_fill_height": self.initial_fill_height,
            "liquid_density": self.liquid_density,
            "sensor_orientation": [list(r) for r in self.sensor_orientation],
            "sensor_noise_sigma": list(self.sensor_noise_sigma),
            "source_container_mass": self.source_container_mass,
            "source_liquid_mass": self.source_liquid_mass,
            "pour_height": self.pour_height,
            "transport_delay": self.transport_delay,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["geometry"] = ContainerGeometry.from_dict(d["geometry"])
        d["flow"] = FlowProfile(tuple(d["flow"]["times"]), tuple(d["flow"]["rates"]))
        d["sensor_orientation"] = tuple(map(tuple, d["sensor_orientation"]))
        d["sensor_noise_sigma"] = tuple(d["sensor_noise_sigma"])
        return cls(**d)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def _slow_noise(n, fs, cutoff, rng):
    x = rng.standard_normal(n)
    sos = signal.butter(2, cutoff, fs=fs, output="sos")
    y = signal.sosfiltfilt(sos, x)
    return y / (dsp.rms(y) + 1e-12)


def synth_audio(sc: PourScenario, n: int) -> np.ndarray:
    """Pouring audio at 16 kHz for the first ``n`` samples of the scenario.

    Causal in the flow: sample ``i`` depends on the flow history up to ``i / 16000`` s.
    """
    t = np.arange(n) / AUDIO_RATE
    # air column on a 1 kHz grid, interpolated up
    tc = np.arange(0, n / AUDIO_RATE + 0.002, 0.001)
    ha = np.interp(t, tc, sc.air_column(sc.landed_mass(tc)))
    f0 = resonance_frequency(np.maximum(ha, 0.5), sc.geometry.mouth_diameter)
    phase = 2 * np.pi * np.cumsum(f0) / AUDIO_RATE

    q_ref = 0.015
    q_land = sc.flow.rate(t - sc.transport_delay)
    q_land = np.where(sc.source_poured(t - sc.transport_delay) < min(sc.capacity_mass, sc.source_liquid_mass) - 1e-12,
                      q_land, 0.0)
    loud = (sc.pour_height / DATASET_POUR_HEIGHT) * (q_land / q_ref)

    rng = _rng(sc.rng_seed, 1)
    bright = BRIGHTNESS.get(sc.geometry.material, 0.35)
    tone = np.zeros(n)
    for k, amp in ((1, 1.0), (3, bright), (5, bright ** 2)):
        audible = (k * f0 < 7000).astype(np.float64)
        tone += amp * audible * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    tone *= np.clip(1 + 0.3 * _slow_noise(n, AUDIO_RATE, 25.0, rng), 0.2, None)
    hp = signal.butter(2, 200, btype="highpass", fs=AUDIO_RATE, output="sos")
    splash = signal.sosfilt(hp, pink_noise(n, rng))
    floor = 2e-4 * rng.standard_normal(n)
    return 0.08 * loud * tone + 0.025 * loud * splash + floor


def synth_ft(sc: PourScenario, n: int) -> np.ndarray:
    t = np.arange(n) / FT_RATE
    poured = sc.source_poured(t)
    m_src = sc.source_container_mass + sc.source_liquid_mass - poured
    total = max(min(sc.capacity_mass, sc.source_liquid_mass), 1e-9)
    rot = np.asarray(sc.sensor_orientation)
    theta = np.deg2rad(4.0) * poured / total  # slight roll about the sensor z axis while pouring
    f_world = np.zeros((3, n))
    f_world[2] = -m_src * GRAVITY
    f_s = rot.T @ f_world
    c, s = np.cos(theta), np.sin(theta)
    fx = c * f_s[0] + s * f_s[1]
    fy = -s * f_s[0] + c * f_s[1]
    force = np.vstack([fx, fy, f_s[2]])
    lever = np.array([0.02, -0.01, 0.07])[:, None]
    torque = np.cross(lever.T, force.T).T
    rng = _rng(sc.rng_seed, 2)
    sigma = np.asarray(sc.sensor_noise_sigma)[:, None]
    return np.vstack([force, torque]) + sigma * rng.standard_normal((6, n))


def simulate_pour(sc: PourScenario) -> PouringRecording:
    requested = float(sc.flow.cumulative(sc.duration))
    if requested > sc.capacity_mass + 1e-12:
        log.warning("%s: flow truncated at %.4f kg, container full (requested %.4f kg)",
                    sc.scenario_id or sc.geometry.name, sc.capacity_mass, requested)
    n_audio = int(round(sc.duration * AUDIO_RATE))
    audio = synth_audio(sc, n_audio)
    # one extra slice of F/T so a clip ending at the last audio frame is covered
    n_ft = int(round(sc.duration * FT_RATE)) + 8
    ft = synth_ft(sc, n_ft)

    t_scale = np.arange(0, np.floor(sc.duration) + 1e-9, 1.0)
    m_scale = sc.landed_mass(t_scale)
    scale = np.column_stack([t_scale, np.round(m_scale / SCALE_RESOLUTION) * SCALE_RESOLUTION])

    n_slices = dsp.frame_count(n_audio)
    t_slices = np.arange(n_slices) * SLICE_SECONDS
    truth = sc.air_column(sc.landed_mass(t_slices))
    return PouringRecording(
        audio=Waveform(audio, AUDIO_RATE),
        ft=FtSeries(ft, FT_RATE),
        scale=scale,
        container_id=sc.geometry.name,
        container_height=sc.geometry.height,
        liquid_density=sc.liquid_density,
        truth_ha=truth,
        recording_id=sc.scenario_id,
        meta={"scenario": sc.to_dict()},
    )


def calibration_samples(geom: ContainerGeometry, rho: float = 1000.0, n: int = 12,
                        seed: int = 0, noise_mm: float = 0.3) -> np.ndarray:
    """Hand-measured (weight kg, air column mm) pairs incl. empty and full container."""
    rng = _rng(seed, 7)
    v = np.concatenate([[0.0], np.sort(rng.uniform(0.03, 0.97, n - 2)) * geom.total_volume,
                        [geom.total_volume]])
    ha = geom.height - volume_to_height(geom, v)
    ha[1:-1] += noise_mm * rng.standard_normal(n - 2)
    return np.column_stack([v * 1e-6 * rho, ha])


TRAIN_GEOMETRIES = (
    ContainerGeometry.frustum(31.0, 36.5, 127.0, "glass", "c1-glass"),
    ContainerGeometry.cylinder(37.0, 99.0, "ceramic", "c2-ceramic"),
    ContainerGeometry.frustum(39.0, 41.5, 150.0, "steel", "c3-steel"),
)

EVAL_GEOMETRIES = (
    ContainerGeometry.frustum(29.0, 34.0, 97.0, "ceramic", "c4-ceramic"),
    ContainerGeometry.quadratic(-0.0012, 0.12, 29.5, 94.0, "ceramic", "c5-ceramic"),
    ContainerGeometry.frustum(33.0, 38.5, 103.0, "plastic", "c6-plastic"),
    ContainerGeometry.cylinder(33.6, 115.0, "plastic", "c7-plastic"),
    ContainerGeometry.frustum(42.0, 37.0, 78.0, "enamel", "c8-enamel"),
    ContainerGeometry.quadratic(-0.0008, 0.09, 27.0, 135.0, "glass", "c9-glass"),
)

SHAPE_GEOMETRIES = (
    ContainerGeometry.cylinder(30.0, 120.0, "glass", "cylinder"),
    ContainerGeometry.frustum(25.0, 40.0, 120.0, "glass", "frustum"),
    ContainerGeometry.quadratic(-0.0015, 0.22, 28.0, 120.0, "ceramic", "bulge"),
)


def make_scenario(geom: ContainerGeometry, seed: int, scenario_id: str = "",
                  fill_to: Optional[float] = None, initial_fill: Optional[float] = None,
                  pour_height: float = DATASET_POUR_HEIGHT, rate: Optional[float] = None,
                  duration: Optional[float] = None) -> PourScenario:
    """Randomised trapezoidal pour into ``geom``.

    ``fill_to`` is the final fraction of the container volume; the pour lasts
    roughly 24 to 40 s unless ``rate`` is given.
    """
    rng = _rng(seed, 0)
    fill_to = rng.uniform(0.85, 0.95) if fill_to is None else fill_to
    if initial_fill is None:
        initial_fill = rng.choice([0.0, rng.uniform(0.0, 0.15)]) * geom.height
    t_on = rng.uniform(0.3, 1.0)
    ramp_up = rng.uniform(0.5, 2.0)
    ramp_down = rng.uniform(0.5, 1.5)
    tail = rng.uniform(0.8, 1.5)
    mass = (fill_to * geom.total_volume - geom.volume(initial_fill)) * 1e-3
    if mass <= 0:
        raise ValueError("initial fill already above the requested fill level")
    if rate is None:
        total = rng.uniform(24.0, 40.0) * min(1.0, geom.total_volume / 500.0) ** 0.5
        rate = mass / max(total - t_on - tail - (ramp_up + ramp_down) / 2, 5.0)
    steady = max(mass / rate - (ramp_up + ramp_down) / 2, 0.0)
    t_off = t_on + ramp_up + steady
    flow = FlowProfile.trapezoid(t_on, ramp_up, rate, t_off, ramp_down)
    if duration is None:
        duration = t_off + ramp_down + 0.12 + tail
    return PourScenario(
        geometry=geom, flow=flow, duration=float(np.ceil(duration * 62.5) / 62.5),
        initial_fill_height=float(initial_fill),
        source_liquid_mass=float(mass + rng.uniform(0.05, 0.2)),
        pour_height=pour_height, rng_seed=int(seed), scenario_id=scenario_id,
    )


SUITE_KINDS = ("train", "holdout", "eval", "shape")
_DEFAULT_COUNTS = {"train": 20, "holdout": 5, "eval": 5, "shape": 5}


def _seed_for(seed: int, kind: str, i: int) -> int:
    return int(np.random.SeedSequence([seed, SUITE_KINDS.index(kind), i]).generate_state(1)[0])


def scenario_suite(kind: str, rng_seed: int = 0, count: Optional[int] = None) -> list:
    """Deterministic scenario list.

    ``train``: the three training containers; ``holdout``: the same containers
    with fresh pours; ``eval``: six held-out container shapes; ``shape``:
    smooth convex profiles filled to about 90 %.
    """
    if kind not in SUITE_KINDS:
        raise ValueError(f"unknown suite kind {kind!r}; choose from {SUITE_KINDS}")
    count = _DEFAULT_COUNTS[kind] if count is None else count
    geoms = {"train": TRAIN_GEOMETRIES, "holdout": TRAIN_GEOMETRIES,
             "eval": EVAL_GEOMETRIES, "shape": SHAPE_GEOMETRIES}[kind]
    out = []
    for g in geoms:
        for i in range(count):
            seed = _seed_for(rng_seed, kind, len(out))
            sid = f"{kind}-{g.name}-{i:03d}"
            if kind == "shape":
                out.append(make_scenario(g, seed, sid, fill_to=0.9, initial_fill=0.0))
            else:
                out.append(make_scenario(g, seed, sid))
    return out


def with_seed(sc: PourScenario, seed: int) -> PourScenario:
    return replace(sc, rng_seed=int(seed))
