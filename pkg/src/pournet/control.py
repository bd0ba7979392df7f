"""Closed-loop pour stopping on top of the simulator and a height estimator.

At every decision instant the estimator sees the latest (at most 4 s) of
audio and force/torque; once the predicted air column falls below the target
plus a stopping correction the flow is cut. Liquid already in flight between
the two mouths still lands, and the result is read off the final true state.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .augment import NoiseBank, SnrSpec, mix
from .data import CLIP_SAMPLES, FT_PER_SLICE, SLICE_SECONDS, assemble_features
from .dsp import AUDIO_RATE, FT_RATE, Waveform
from .model.network import ModelParams, forward, select_rows
from .synthsim import PourScenario, make_scenario, simulate_pour

log = logging.getLogger(__name__)

DECISION_RATE = 12.0
TRANSPORT_DELAY = 0.12
RESULT_COLUMNS = ("cell_id", "container", "snr_db", "target_mm", "pour_height_mm",
                  "initial_fill_mm", "seed", "error_mm", "error_ml", "stop_time_s")
_FT_MARGIN = 1000  # extra F/T history handed to the zero-phase filter


@dataclass(frozen=True)
class StopPolicy:
    target_ha: float
    correction_mm: float = 0.0
    min_window: float = 0.25
    delay_correction: bool = True  # add rate_estimate * transport_delay
    rate_window: float = 1.0  # seconds of past estimates used for the rate

    def __post_init__(self):
        if self.target_ha < 0:
            raise ValueError("target_ha must be non-negative")
        if self.correction_mm < 0:
            raise ValueError("correction_mm must be non-negative")


@dataclass
class EpisodeResult:
    final_ha_true: float
    final_ha_pred: float
    error_mm: float  # final true air column minus target; positive means under-filled
    error_ml: float
    stop_time: float
    trace: np.ndarray  # (k, 2): decision time s, predicted air column mm
    reached: bool = True
    flags: list = field(default_factory=list)
    scenario_id: str = ""


def window_features(audio: np.ndarray, ft: np.ndarray, t: float, cutoff: float = 5.0,
                    max_samples: int = CLIP_SAMPLES) -> np.ndarray:
    """Fused ``(305, n)`` features from samples up to time ``t`` only.

    Audio is the latest ``min(16000 t, 64000)`` samples, giving
    ``min(floor(16000 t / 256) + 1, 251)`` frames. The last F/T slice reaches
    up to 14 ms past ``t``; those samples are held at the latest reading.
    """
    a_end = int(round(t * AUDIO_RATE))
    if a_end < 1:
        raise ValueError("no audio before the first decision")
    a_end = min(a_end, len(audio))
    a0 = max(0, a_end - max_samples)
    spec = dsp.stft(Waveform(audio[a0:a_end], AUDIO_RATE))
    n = spec.shape[1]
    f0 = a0 * FT_RATE // AUDIO_RATE
    f_avail = min(int(np.floor(t * FT_RATE + 1e-9)) + 1, ft.shape[1])
    s0 = max(0, f0 - _FT_MARGIN)
    seg = ft[:, s0:f_avail]
    seg = dsp.lowpass(seg, cutoff, FT_RATE) if seg.shape[1] > 1 else seg
    need = FT_PER_SLICE * n
    block = seg[:, f0 - s0:]
    if block.shape[1] < need:
        block = np.pad(block, ((0, 0), (0, need - block.shape[1])), mode="edge")
    block = block[:, :need].reshape(6, n, FT_PER_SLICE).transpose(0, 2, 1)
    return assemble_features(spec, block)


class OraclePerception:
    """True current air column; isolates the controller from estimation error."""

    name = "oracle"

    def __init__(self, sc: PourScenario):
        self.sc = sc

    def __call__(self, t: float) -> float:
        return float(self.sc.air_column(self.sc.landed_mass(t)))


class ModelPerception:
    name = "model"

    def __init__(self, params: ModelParams, audio: np.ndarray, ft: np.ndarray, cutoff: float = 5.0):
        self.params, self.audio, self.ft, self.cutoff = params, audio, ft, cutoff

    def __call__(self, t: float) -> float:
        feats = window_features(self.audio, self.ft, t, self.cutoff)
        return float(forward(self.params, select_rows(feats, self.params.variant)).ha_hat[-1])


def _rate(trace: list, window: float) -> float:
    """Least-squares slope (mm/s) of the recent estimates; 0 with fewer than two."""
    if len(trace) < 2:
        return 0.0
    t_now = trace[-1][0]
    pts = np.array([p for p in trace if p[0] >= t_now - window - 1e-9])
    if len(pts) < 2:
        return 0.0
    return float(np.polyfit(pts[:, 0], pts[:, 1], 1)[0])


def episode_audio(rec, snr: Optional[SnrSpec], bank: Optional[NoiseBank]) -> np.ndarray:
    if snr is None:
        return rec.audio.samples
    if bank is None:
        raise ValueError("a noise bank is required for a noisy episode")
    return mix(rec.audio, bank[snr.noise_name], snr.snr_db, snr.noise_offset).samples


def run_episode(sc: PourScenario, params, policy: StopPolicy, snr: Optional[SnrSpec] = None,
                bank: Optional[NoiseBank] = None, decision_rate: float = DECISION_RATE,
                rec=None) -> EpisodeResult:
    """Stream ``sc`` through ``params`` (a ``ModelParams`` or ``"oracle"``) until the trigger.

    Before the cut the sensor streams equal those of the uncut pour, so the
    uncut recording is simulated once and read causally.
    """
    rec = rec if rec is not None else simulate_pour(sc)
    if isinstance(params, str):
        if params != "oracle":
            raise ValueError(f"unknown estimator {params!r}")
        perceive = OraclePerception(sc)
    else:
        perceive = ModelPerception(params, episode_audio(rec, snr, bank), rec.ft.channels)
    stride = max(1, int(round(1.0 / (decision_rate * SLICE_SECONDS))))
    k_first = max(1, int(np.ceil(policy.min_window / SLICE_SECONDS - 1e-9)))
    k_last = int(np.floor(sc.duration / SLICE_SECONDS + 1e-9))
    trace = []
    t_cut = None
    for k in range(k_first, k_last + 1, stride):
        t = k * SLICE_SECONDS
        ha = perceive(t)
        trace.append((t, ha))
        corr = policy.correction_mm
        if policy.delay_correction:
            corr += max(0.0, -_rate(trace, policy.rate_window)) * sc.transport_delay
        if ha < policy.target_ha + corr:
            t_cut = t
            break
    flags = []
    if t_cut is None:
        flags.append("never reached target")
        t_cut = sc.duration
    final_mass = sc.initial_mass + float(sc.source_poured(t_cut))
    final_ha = float(sc.air_column(final_mass))
    geom = sc.geometry
    err_ml = float(geom.volume(geom.height - policy.target_ha) - geom.volume(geom.height - final_ha))
    return EpisodeResult(
        final_ha_true=final_ha,
        final_ha_pred=float(trace[-1][1]) if trace else float("nan"),
        error_mm=final_ha - policy.target_ha,
        error_ml=err_ml,
        stop_time=float(t_cut),
        trace=np.asarray(trace, dtype=np.float64).reshape(-1, 2),
        reached="never reached target" not in flags,
        flags=flags,
        scenario_id=sc.scenario_id,
    )


def one_step_bound(sc: PourScenario, t: float, step: float = SLICE_SECONDS) -> float:
    """Air-column change (mm) caused by ``step`` seconds of flow around ``t``."""
    m0 = sc.initial_mass + float(sc.source_poured(t))
    dm = float(sc.flow.rate(t)) * step
    return float(sc.air_column(m0) - sc.air_column(m0 + dm))


def write_trace_csv(path, result: EpisodeResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("t_s", "ha_hat_mm"))
        for t, h in result.trace:
            wr.writerow((repr(float(t)), repr(float(h))))


def read_trace_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["t_s"]), float(r["ha_hat_mm"])] for r in rows]).reshape(-1, 2)


@dataclass(frozen=True)
class Cell:
    model: str
    container: str
    snr_db: Optional[float]
    target_mm: float
    pour_height_mm: float
    initial_fill_mm: float

    @property
    def cell_id(self) -> str:
        snr = "clean" if self.snr_db is None else f"{self.snr_db:g}"
        return (f"{self.model}|{self.container}|snr{snr}|t{self.target_mm:g}"
                f"|ph{self.pour_height_mm:g}|if{self.initial_fill_mm:g}")


def experiment_matrix(models: dict, geometries: Sequence, snr_grid: Sequence = (None,),
                      targets: Sequence = (60.0,), pour_heights: Sequence = (310.0,),
                      initial_fills: Sequence = (0.0,), episodes: int = 5, rng_seed: int = 0,
                      bank: Optional[NoiseBank] = None, correction_mm: float = 0.0,
                      decision_rate: float = DECISION_RATE, noise_name: str = "ego") -> list:
    """Sweep every cell and return one result row per episode.

    ``models`` maps a label (e.g. ``"mp"``, ``"ap"``, ``"oracle"``) to
    ``ModelParams`` or ``"oracle"``. Failed episodes are kept with NaN errors.
    """
    rows = []
    cells = [Cell(m, g.name, s, tg, ph, fi) for m in models for g in geometries for s in snr_grid
             for tg in targets for ph in pour_heights for fi in initial_fills]
    geo = {g.name: g for g in geometries}
    for ci, cell in enumerate(cells):
        policy = StopPolicy(cell.target_mm, correction_mm)
        for e in range(episodes):
            seed = int(np.random.SeedSequence([rng_seed, ci, e]).generate_state(1)[0])
            row = {"cell_id": cell.cell_id, "container": cell.container,
                   "snr_db": "clean" if cell.snr_db is None else cell.snr_db,
                   "target_mm": cell.target_mm, "pour_height_mm": cell.pour_height_mm,
                   "initial_fill_mm": cell.initial_fill_mm, "seed": seed}
            try:
                sc = make_scenario(geo[cell.container], seed, f"{cell.cell_id}#{e}", fill_to=0.95,
                                   initial_fill=cell.initial_fill_mm,
                                   pour_height=cell.pour_height_mm)
                snr = None if cell.snr_db is None else SnrSpec(float(cell.snr_db), noise_name,
                                                                 seed % 100000)
                res = run_episode(sc, models[cell.model], policy, snr, bank, decision_rate)
                row.update(error_mm=res.error_mm, error_ml=res.error_ml, stop_time_s=res.stop_time,
                           flags=";".join(res.flags))
            except (ValueError, FloatingPointError) as exc:
                log.warning("cell %s episode %d failed: %s", cell.cell_id, e, exc)
                row.update(error_mm=float("nan"), error_ml=float("nan"),
                           stop_time_s=float("nan"), flags=f"failed: {exc}")
            rows.append(row)
    return rows


def summarize(rows: Sequence) -> list:
    """Per-cell mean and standard deviation of |error_mm| and error_ml."""
    out = {}
    for r in rows:
        out.setdefault(r["cell_id"], []).append(r)
    table = []
    for cid, rs in out.items():
        e = np.array([abs(r["error_mm"]) for r in rs], dtype=np.float64)
        v = np.array([r["error_ml"] for r in rs], dtype=np.float64)
        ok = np.isfinite(e)
        table.append({
            "cell_id": cid, "container": rs[0]["container"], "n": int(ok.sum()),
            "n_failed": int((~ok).sum()),
            "mean_abs_error_mm": float(e[ok].mean()) if ok.any() else float("nan"),
            "std_abs_error_mm": float(e[ok].std()) if ok.any() else float("nan"),
            "mean_error_ml": float(v[ok].mean()) if ok.any() else float("nan"),
            "std_error_ml": float(v[ok].std()) if ok.any() else float("nan"),
        })
    return table


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_results_csv(path, rows: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RESULT_COLUMNS)
        for r in rows:
            wr.writerow([_cell(r[c]) for c in RESULT_COLUMNS])
