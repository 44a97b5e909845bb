"""Monte-Carlo evaluation of the detectors and a constant-velocity track filter.

Every trial draws its scene from the substream ``(master_seed, |P|, trial)``
and its noise from ``(master_seed, |P|, trial, point)``, so a trial sees the
same targets at every noise level and results do not depend on the order in
which worker processes finish.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from tddisac.baselines import detect_single_dl
from tddisac.cfar import CfarConfig, detect_candidates
from tddisac.config import SensingConfig
from tddisac.scene import NoiseSpec, Target, path_loss_amplitude, sample_scene, synthesize_csi
from tddisac.specest import (
    FocusedFourier,
    PeakEstimate,
    RefineConfig,
    doppler_transform,
    power_periodogram,
    range_transform,
)
from tddisac.tddclean import CheckConfig, resolution_distance, run_detection

METHODS = ("tdd-psf", "tdd-csi", "conventional", "single-dl")
DEFAULT_METHODS = ("tdd-psf", "single-dl", "conventional")
REFERENCE_RANGE = 50.0


# ---------------------------------------------------------------------------
# matching and metrics


@dataclass(frozen=True)
class TrialResult:
    trial: int
    method: str
    truth: tuple[Target, ...]
    reported: tuple[PeakEstimate, ...]
    pairs: tuple[tuple[int, int], ...]
    """(reported index, truth index) of every match."""
    tp: int
    fp: int
    fn: int

    @property
    def f1(self) -> float:
        den = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / den if den else 1.0


def match_detections(truth, reported, cfg: SensingConfig, trial: int = 0, method: str = "") -> TrialResult:
    """Greedy one-to-one matching within one resolution cell.

    Reported peaks are visited strongest first; each takes the nearest
    still-unmatched truth target whose normalised distance
    ``hypot(dr / range_res, dv / speed_res)`` is at most 1.
    """
    truth = tuple(truth)
    reported = tuple(reported)
    order = sorted(range(len(reported)), key=lambda i: -abs(reported[i].alpha))
    free = np.ones(len(truth), dtype=bool)
    tr = np.array([t.r for t in truth])
    tv = np.array([t.v for t in truth])
    pairs = []
    for i in order:
        if not free.any():
            break
        d = resolution_distance(reported[i].r, reported[i].v, tr, tv, cfg)
        d = np.where(free, d, np.inf)
        j = int(np.argmin(d))
        if d[j] <= 1.0:
            free[j] = False
            pairs.append((i, j))
    tp = len(pairs)
    return TrialResult(
        trial=trial,
        method=method,
        truth=truth,
        reported=reported,
        pairs=tuple(sorted(pairs)),
        tp=tp,
        fp=len(reported) - tp,
        fn=len(truth) - tp,
    )


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval of a binomial proportion ``k / n``."""
    if n <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    p = k / n
    den = 1 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated metrics of one (noise point, method, target count) cell.

    F1 is micro-averaged, ``2 TP / (2 TP + FP + FN)``; its interval treats
    it as a proportion with ``2 TP`` successes out of ``2 TP + FP + FN``.
    """

    P_n: float
    snr_ref_db: float
    method: str
    targets: int
    trials: int
    tp: int
    fp: int
    fn: int
    p_md: float
    p_md_lo: float
    p_md_hi: float
    f1: float
    f1_lo: float
    f1_hi: float

    @property
    def p_md_half_width(self) -> float:
        return (self.p_md_hi - self.p_md_lo) / 2

    @property
    def f1_half_width(self) -> float:
        return (self.f1_hi - self.f1_lo) / 2


def aggregate(results, P_n: float, snr_ref_db: float, method: str, targets: int) -> MetricsRow:
    results = list(results)
    tp = sum(r.tp for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    n_truth = tp + fn
    p_md = fn / n_truth if n_truth else 0.0
    f1_den = 2 * tp + fp + fn
    f1 = 2 * tp / f1_den if f1_den else 1.0
    return MetricsRow(
        P_n=P_n,
        snr_ref_db=snr_ref_db,
        method=method,
        targets=targets,
        trials=len(results),
        tp=tp,
        fp=fp,
        fn=fn,
        p_md=p_md,
        p_md_lo=wilson_interval(fn, n_truth)[0],
        p_md_hi=wilson_interval(fn, n_truth)[1],
        f1=f1,
        f1_lo=wilson_interval(2 * tp, f1_den)[0],
        f1_hi=wilson_interval(2 * tp, f1_den)[1],
    )


# ---------------------------------------------------------------------------
# reference SNR axis


def reference_snr_db(P_n: float, cfg: SensingConfig) -> float:
    """``10 log10(|g(50 m)|^2 N M D / P_n)`` for a unit-amplitude target at 50 m."""
    if P_n <= 0:
        return math.inf
    g = path_loss_amplitude(REFERENCE_RANGE, cfg)
    return 10 * math.log10(g * g * cfg.N * cfg.M * cfg.tdd.duty_cycle / P_n)


def noise_for_snr(snr_db: float, cfg: SensingConfig) -> float:
    """Inverse of :func:`reference_snr_db`."""
    g = path_loss_amplitude(REFERENCE_RANGE, cfg)
    return g * g * cfg.N * cfg.M * cfg.tdd.duty_cycle / 10 ** (snr_db / 10)


# ---------------------------------------------------------------------------
# one trial


@dataclass(frozen=True)
class MonteCarloPlan:
    """Noise sweep, target counts, trial count, methods and master seed."""

    snr_db: tuple[float, ...] = (-30.0, -20.0, -10.0, 0.0, 10.0)
    target_counts: tuple[int, ...] = (1, 3)
    trials: int = 200
    methods: tuple[str, ...] = DEFAULT_METHODS
    master_seed: int = 0
    cfar: CfarConfig = field(default_factory=CfarConfig)
    check: CheckConfig = field(default_factory=CheckConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    grid: tuple[int, int] | None = None
    """DFT grid (N', M') of the sweep; None runs unpadded (N, M rounded up to even).

    Unpadded cells are uncorrelated, so the CFAR false-alarm rate is the
    design value, and a trial costs about a fifth of the zero-padded grid.
    """

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if any(c < 1 for c in self.target_counts):
            raise ValueError("target counts must be >= 1")


def detect(method: str, H: np.ndarray, cfg: SensingConfig, cfar=None, check=None, refine=None, *, G=None, C=None, candidates=None):
    """Reported peaks of ``method`` on one CSI frame.

    ``G`` (range transform), ``C`` (complex periodogram) and ``candidates``
    (its CFAR candidates) may be shared between methods of one trial.
    """
    cfar = cfar or CfarConfig()
    check = check or CheckConfig()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if G is None:
        G = range_transform(H, cfg)
    if C is None:
        C = doppler_transform(G, cfg)
    if method.startswith("tdd-"):
        mode = method.split("-", 1)[1]
        if mode != check.removal_mode:
            check = CheckConfig(**{**check.__dict__, "removal_mode": mode})
        return run_detection(H, cfg, cfar, check, refine, C=C, candidates=candidates).confirmed
    P = power_periodogram(C)
    if method == "single-dl":
        return detect_single_dl(H, cfg, cfar, refine, G=G, P=P)
    if candidates is None:
        candidates = detect_candidates(P, cfar, cfg)
    ff = FocusedFourier(H, cfg, refine)
    return [ff(c.n, c.m) for c in candidates]


def run_trial(
    cfg: SensingConfig, plan: MonteCarloPlan, count: int, trial: int, point: int, P_n: float
) -> list[TrialResult]:
    targets = sample_scene(count, (plan.master_seed, count, trial), cfg)
    H = synthesize_csi(targets, NoiseSpec(P_n), cfg, seed=(plan.master_seed, count, trial, point))
    G = range_transform(H, cfg)
    C = doppler_transform(G, cfg)
    needs_cfar = any(m != "single-dl" for m in plan.methods)
    cands = detect_candidates(power_periodogram(C), plan.cfar, cfg) if needs_cfar else None
    out = []
    for method in plan.methods:
        peaks = detect(method, H, cfg, plan.cfar, plan.check, plan.refine, G=G, C=C, candidates=cands)
        out.append(match_detections(targets, peaks, cfg, trial=trial, method=method))
    return out


def _run_item(args):
    return run_trial(*args)


def sweep_config(cfg: SensingConfig, plan: MonteCarloPlan) -> SensingConfig:
    if plan.grid is not None:
        return cfg.with_grid(*plan.grid)
    return cfg.with_grid(cfg.N + cfg.N % 2, cfg.M + cfg.M % 2)


def run_montecarlo(cfg: SensingConfig, plan: MonteCarloPlan, workers: int = 1, progress=None) -> list[MetricsRow]:
    """Metrics for every (noise point, method, target count) cell of ``plan``.

    Rows are ordered by target count, then noise point, then method as
    listed in the plan; the reduction is by trial index, so the table is
    identical for any ``workers``.
    """
    cfg = sweep_config(cfg, plan)
    rows = []
    for count in plan.target_counts:
        for point, snr in enumerate(plan.snr_db):
            P_n = noise_for_snr(snr, cfg)
            items = [(cfg, plan, count, t, point, P_n) for t in range(plan.trials)]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(_run_item, items, chunksize=max(1, len(items) // (4 * workers))))
            else:
                results = [_run_item(it) for it in items]
            for k, method in enumerate(plan.methods):
                per_method = [res[k] for res in results]
                rows.append(aggregate(per_method, P_n, reference_snr_db(P_n, cfg), method, count))
            if progress is not None:
                progress(count, snr)
    return rows


METRIC_FIELDS = (
    "targets", "snr_ref_db", "P_n", "method", "trials", "tp", "fp", "fn",
    "p_md", "p_md_lo", "p_md_hi", "f1", "f1_lo", "f1_hi",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# constant-velocity tracking


@dataclass(frozen=True)
class KalmanConfig:
    """Constant-velocity filter on (range, speed).

    ``range_rate_sign`` maps the speed convention onto range rate: speeds
    are positive for approaching targets, so range shrinks by ``v T_f`` per
    frame with the default of -1.
    """

    frame_interval: float = 0.1
    sigma_r: float = 0.3
    sigma_v: float = 0.3
    accel_noise: float = 1.0
    """White-acceleration spectral density (m^2/s^3)."""
    gate_sigma: float = 3.0
    max_misses: int = 3
    range_rate_sign: float = -1.0

    def __post_init__(self):
        if self.frame_interval <= 0 or self.sigma_r <= 0 or self.sigma_v <= 0:
            raise ValueError("frame interval and measurement noise must be positive")
        if self.accel_noise < 0 or self.gate_sigma <= 0 or self.max_misses < 0:
            raise ValueError("invalid filter parameters")
        if self.range_rate_sign not in (-1.0, 1.0):
            raise ValueError("range_rate_sign must be +1 or -1")

    def transition(self) -> np.ndarray:
        return np.array([[1.0, self.range_rate_sign * self.frame_interval], [0.0, 1.0]])

    def process_noise(self) -> np.ndarray:
        T, q, s = self.frame_interval, self.accel_noise, self.range_rate_sign
        return q * np.array([[T**3 / 3, s * T**2 / 2], [s * T**2 / 2, T]])

    def measurement_noise(self) -> np.ndarray:
        return np.diag([self.sigma_r**2, self.sigma_v**2])


@dataclass
class TrackState:
    x: np.ndarray
    """State (r, v)."""
    cov: np.ndarray
    frame: int


@dataclass
class Track:
    track_id: int
    state: TrackState
    misses: int = 0
    hits: int = 1


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    track_id: int
    r: float
    v: float
    var_r: float
    var_v: float
    status: str
    """"new", "update" or "coast"."""
    innovation_r: float = float("nan")
    innovation_v: float = float("nan")


def _measure(det) -> np.ndarray:
    if hasattr(det, "r"):
        return np.array([float(det.r), float(det.v)])
    r, v = det[:2]
    return np.array([float(r), float(v)])


def track_frames(frames, kf: KalmanConfig | None = None) -> list[TrackRecord]:
    """Run the tracker over time-ordered per-frame detection lists.

    Detections are objects with ``r`` and ``v`` attributes or ``(r, v)``
    pairs. Each live track is predicted, then takes the nearest detection
    inside its ``gate_sigma`` Mahalanobis gate (tracks with the smallest
    distance claim first). Tracks without a detection coast; after more
    than ``max_misses`` consecutive misses they are dropped. Unclaimed
    detections open new tracks.
    """
    kf = kf or KalmanConfig()
    F, Q, Rm = kf.transition(), kf.process_noise(), kf.measurement_noise()
    tracks: list[Track] = []
    history: list[TrackRecord] = []
    next_id = 0
    for k, dets in enumerate(frames):
        z = [_measure(d) for d in dets]
        for tr in tracks:
            st = tr.state
            st.x = F @ st.x
            st.cov = F @ st.cov @ F.T + Q
            st.frame = k
        # gated nearest-neighbour association, globally closest pairs first
        cand = []
        for i, tr in enumerate(tracks):
            S = tr.state.cov + Rm
            S_inv = np.linalg.inv(S)
            for j, zj in enumerate(z):
                y = zj - tr.state.x
                d2 = float(y @ S_inv @ y)
                if d2 <= kf.gate_sigma**2:
                    cand.append((d2, i, j))
        cand.sort()
        used_t, used_z, assign = set(), set(), {}
        for _, i, j in cand:
            if i in used_t or j in used_z:
                continue
            used_t.add(i)
            used_z.add(j)
            assign[i] = j
        survivors = []
        for i, tr in enumerate(tracks):
            st = tr.state
            if i in assign:
                y = z[assign[i]] - st.x
                S = st.cov + Rm
                K = st.cov @ np.linalg.inv(S)
                st.x = st.x + K @ y
                I_K = np.eye(2) - K
                st.cov = I_K @ st.cov @ I_K.T + K @ Rm @ K.T  # Joseph form keeps it PSD
                tr.misses = 0
                tr.hits += 1
                rec = TrackRecord(k, tr.track_id, st.x[0], st.x[1], st.cov[0, 0], st.cov[1, 1], "update", y[0], y[1])
            else:
                tr.misses += 1
                if tr.misses > kf.max_misses:
                    continue
                rec = TrackRecord(k, tr.track_id, st.x[0], st.x[1], st.cov[0, 0], st.cov[1, 1], "coast")
            survivors.append(tr)
            history.append(rec)
        for j, zj in enumerate(z):
            if j in used_z:
                continue
            st = TrackState(x=zj.copy(), cov=Rm.copy(), frame=k)
            tr = Track(next_id, st)
            next_id += 1
            survivors.append(tr)
            history.append(TrackRecord(k, tr.track_id, zj[0], zj[1], Rm[0, 0], Rm[1, 1], "new"))
        tracks = survivors
    return history
