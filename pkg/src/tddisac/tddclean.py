"""Iterative TDD peak detection: refine, remove coherently, check the sidelobes.

A candidate is confirmed when coherently removing it (with the TDD-windowed
PSF) lowers the mean power around its impulsive-sidelobe positions. A
candidate that is itself a sidelobe of some stronger peak fails the check:
removing it as if it were a target plants new replicas next to it instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tddisac.cfar import Candidate, CfarConfig, detect_candidates, sort_candidates
from tddisac.config import SensingConfig
from tddisac.psf import kernel_range, peak_gain, psf_stencil
from tddisac.scene import rank_one
from tddisac.specest import (
    FocusedFourier,
    PeakEstimate,
    RefineConfig,
    complex_periodogram,
    power_periodogram,
    to_csi_coefficient,
)

REMOVAL_MODES = ("csi", "psf")


@dataclass(frozen=True)
class CheckConfig:
    removal_mode: str = "psf"
    gamma: float = 0.0
    """Required relative sidelobe power reduction."""
    sidelobe_orders: int = 2
    """Orders k = 1..K considered on each Doppler side; the strongest is checked."""
    ellipse_range: float = 3.0
    ellipse_doppler: float = 3.0
    stencil_range_extent: int | str | None = "auto"
    """Range half-width (bins) of the committed PSF-removal stencil.

    ``None`` commits over the full range axis. ``"auto"`` keeps every range
    row whose largest replica power exceeds ``stencil_floor`` times the
    median of the initial periodogram (the noise floor when noise is
    present); a noiseless frame therefore gets the full axis. Trial removals
    only ever evaluate the rows the sidelobe check reads.
    """
    stencil_floor: float = 1e-2
    max_iterations: int = 100_000

    def __post_init__(self):
        if self.removal_mode not in REMOVAL_MODES:
            raise ValueError(f"removal_mode must be one of {REMOVAL_MODES}")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.ellipse_range < 1 or self.ellipse_doppler < 1:
            raise ValueError("ellipse semi-axes must be >= 1 bin")
        if self.sidelobe_orders < 1:
            raise ValueError("sidelobe_orders must be >= 1")
        ext = self.stencil_range_extent
        if isinstance(ext, str):
            if ext != "auto":
                raise ValueError("stencil_range_extent must be an int, None or 'auto'")
        elif ext is not None and ext < 0:
            raise ValueError("stencil_range_extent must be >= 0")
        if self.stencil_floor < 0:
            raise ValueError("stencil_floor must be >= 0")

    @property
    def band_half_width(self) -> int:
        """Range half-width of the rows touched by the sidelobe ellipses."""
        return int(np.ceil(self.ellipse_range)) + 1


@dataclass(frozen=True)
class SidePower:
    side: int
    order: int
    before: float
    after: float


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    sides: tuple[SidePower, ...]


@dataclass(frozen=True)
class Rejection:
    candidate: Candidate
    peak: PeakEstimate
    check: CheckResult
    reason: str = "sidelobe power not reduced"


@dataclass
class DetectionReport:
    confirmed: list[PeakEstimate] = field(default_factory=list)
    rejected: list[Rejection] = field(default_factory=list)
    iterations: int = 0
    initial_candidates: int = 0
    H: np.ndarray | None = None
    C: np.ndarray | None = None
    P: np.ndarray | None = None


# ---------------------------------------------------------------------------
# candidate gating


def resolution_distance(r1, v1, r2, v2, cfg: SensingConfig, wrap: bool = False):
    """Euclidean range/speed distance in units of the resolution cells."""
    dv = np.asarray(v1) - np.asarray(v2)
    if wrap:
        span = cfg.M_pad * cfg.speed_bin
        dv = np.mod(dv + span / 2, span) - span / 2
    dr = (np.asarray(r1) - np.asarray(r2)) / cfg.range_resolution
    return np.hypot(dr, dv / cfg.speed_resolution)


def select_candidate(
    candidates: list[Candidate], confirmed: list[PeakEstimate], p: int, cfg: SensingConfig
) -> Candidate | None:
    """The ``p``-th strongest candidate lying more than one resolution cell from every confirmed peak."""
    if not confirmed:
        return candidates[p] if p < len(candidates) else None
    cr = np.array([pk.r for pk in confirmed])
    cv = np.array([pk.v for pk in confirmed])
    seen = 0
    for cand in candidates:
        if np.all(resolution_distance(cand.r, cand.v, cr, cv, cfg, wrap=True) > 1.0):
            if seen == p:
                return cand
            seen += 1
    return None


# ---------------------------------------------------------------------------
# removal


def _subtract_peak(H: np.ndarray, peak: PeakEstimate, cfg: SensingConfig) -> np.ndarray:
    alpha = to_csi_coefficient(peak.alpha, cfg)
    return H - rank_one(alpha, peak.r, peak.v, cfg, masked=True)


def csi_removal(H: np.ndarray, peak: PeakEstimate, cfg: SensingConfig):
    """Remove ``alpha a(r') b(v')^T diag(d)`` from H and recompute the periodograms."""
    H2 = _subtract_peak(H, peak, cfg)
    C2 = complex_periodogram(H2, cfg)
    return H2, C2, power_periodogram(C2)


def peak_stencil(peak: PeakEstimate, cfg: SensingConfig, range_extent: int | None = None):
    return psf_stencil((peak.n, peak.m), peak.alpha, cfg, range_extent=range_extent)


def psf_removal(
    C: np.ndarray,
    H: np.ndarray,
    peak: PeakEstimate,
    cfg: SensingConfig,
    range_extent: int | None = None,
):
    """Subtract the shifted, scaled 2D PSF from C; H is updated as in :func:`csi_removal`."""
    st = peak_stencil(peak, cfg, range_extent)
    C2 = C.copy()
    st.add_to(C2, -1.0)
    return _subtract_peak(H, peak, cfg), C2, power_periodogram(C2)


# ---------------------------------------------------------------------------
# sidelobe power check


def _ellipse_cells(n_c: float, m_c: float, a: float, b: float, cfg: SensingConfig):
    """Grid cells inside the ellipse; Doppler wraps, range is truncated."""
    rows = np.arange(int(np.ceil(n_c - a)), int(np.floor(n_c + a)) + 1)
    rows = rows[(rows >= 0) & (rows < cfg.N_pad)]
    half = cfg.M_pad // 2
    out_r, out_c = [], []
    for n in rows:
        u = (n - n_c) / a
        w = b * np.sqrt(max(0.0, 1.0 - u * u))
        ms = np.arange(int(np.ceil(m_c - w)), int(np.floor(m_c + w)) + 1)
        out_r.append(np.full(ms.size, n))
        out_c.append(np.mod(ms + half, cfg.M_pad))
    if not out_r:
        return np.empty(0, int), np.empty(0, int)
    return np.concatenate(out_r), np.concatenate(out_c)


def sidelobe_centers(peak: PeakEstimate, side: int, cfg: SensingConfig, orders: int):
    spacing = cfg.sidelobe_bin_spacing
    return [(k, peak.m + side * k * spacing) for k in range(1, orders + 1)]


def sidelobe_check(
    P_before: np.ndarray,
    P_after: np.ndarray,
    peak: PeakEstimate,
    cfg: SensingConfig,
    check: CheckConfig,
    rows: np.ndarray | None = None,
) -> CheckResult:
    """Compare mean sidelobe power before/after a trial removal.

    On each Doppler side the order with the largest mean power in
    ``P_before`` is selected; the check passes iff every selected mean drops
    to at most ``(1 - gamma)`` of its value. ``rows`` gives the grid range
    indices of the (possibly partial) arrays passed in.
    """
    if P_before.shape != P_after.shape:
        raise ValueError("periodograms differ in shape")
    if rows is None:
        lookup = None
    else:
        lookup = np.full(cfg.N_pad, -1)
        lookup[rows] = np.arange(len(rows))
    sides = []
    for side in (-1, 1):
        best = None
        for k, m_c in sidelobe_centers(peak, side, cfg, check.sidelobe_orders):
            rr, cc = _ellipse_cells(peak.n, m_c, check.ellipse_range, check.ellipse_doppler, cfg)
            if lookup is not None:
                rr = lookup[rr]
                if np.any(rr < 0):
                    raise ValueError("sidelobe ellipse outside the supplied rows")
            before = float(P_before[rr, cc].mean()) if rr.size else 0.0
            if best is None or before > best[1]:
                best = (k, before, rr, cc)
        k, before, rr, cc = best
        after = float(P_after[rr, cc].mean()) if rr.size else 0.0
        sides.append(SidePower(side, k, before, after))
    passed = all(s.after <= (1.0 - check.gamma) * s.before for s in sides)
    return CheckResult(passed, tuple(sides))


# ---------------------------------------------------------------------------
# Detection driver


class _State:
    """Mutable (H, C, P, candidates) of one detection run."""

    def __init__(self, H, cfg, cfar, check, refine, C=None, candidates=None):
        self.cfg, self.cfar, self.check, self.refine = cfg, cfar, check, refine
        self.H = np.array(H, dtype=complex)
        self.C = complex_periodogram(self.H, cfg) if C is None else np.array(C, dtype=complex)
        self.P = power_periodogram(self.C)
        if candidates is None:
            candidates = detect_candidates(self.P, cfar, cfg)
        self.candidates = list(candidates)
        self.ff = FocusedFourier(self.H, cfg, refine)
        self.floor = check.stencil_floor * float(np.median(self.P))

    def commit_rows(self, peak: PeakEstimate) -> np.ndarray | None:
        """Range rows of the committed stencil (None = full axis)."""
        ext = self.check.stencil_range_extent
        if ext is None:
            return None
        if ext != "auto":
            return np.mod(int(np.round(peak.n)) + np.arange(-ext, ext + 1), self.cfg.N_pad)
        n_all = np.arange(self.cfg.N_pad)
        scale = abs(peak.alpha) / peak_gain(self.cfg)
        row_peak = (scale * np.abs(kernel_range(n_all - peak.n, self.cfg)) * self.cfg.tdd.M_DL * self.cfg.tdd.R) ** 2
        rows = np.flatnonzero(row_peak > self.floor)
        band = self.check.band_half_width
        near = np.mod(int(np.round(peak.n)) + np.arange(-band, band + 1), self.cfg.N_pad)
        rows = np.union1d(rows, near)
        return None if rows.size == self.cfg.N_pad else rows

    def reach(self) -> int:
        return self.cfar.guard_range + self.cfar.train_range + 1


def _trial_psf(state: _State, peak: PeakEstimate, check: CheckConfig):
    # only the rows read by the sidelobe check are evaluated on trial
    st = peak_stencil(peak, state.cfg, check.band_half_width)
    before = state.P[st.rows]
    C_band = state.C[st.rows] - st.values
    result = sidelobe_check(before, power_periodogram(C_band), peak, state.cfg, check, rows=st.rows)
    return result, None


def _commit_psf(state: _State, peak: PeakEstimate, patch):
    rows = state.commit_rows(peak)
    st = psf_stencil((peak.n, peak.m), peak.alpha, state.cfg, range_extent=None, rows=rows)
    if st.rows.size == state.cfg.N_pad:
        st.add_to(state.C, -1.0)
        state.P = power_periodogram(state.C)
        state.candidates = detect_candidates(state.P, state.cfar, state.cfg)
    else:
        st.add_to(state.C, -1.0)
        state.P[st.rows] = power_periodogram(state.C[st.rows])
        # only rows near the stencil can change their CFAR outcome
        r = state.reach()
        touched = np.unique(np.mod(st.rows[:, None] + np.arange(-r, r + 1), state.cfg.N_pad))
        touched_set = set(touched.tolist())
        keep = [c for c in state.candidates if c.n not in touched_set]
        fresh = detect_candidates(state.P, state.cfar, state.cfg, rows=touched)
        state.candidates = sort_candidates(keep + fresh)
    state.H = _subtract_peak(state.H, peak, state.cfg)
    state.ff = FocusedFourier(state.H, state.cfg, state.refine)


def _trial_csi(state: _State, peak: PeakEstimate, check: CheckConfig):
    H2, C2, P2 = csi_removal(state.H, peak, state.cfg)
    result = sidelobe_check(state.P, P2, peak, state.cfg, check)
    return result, (H2, C2, P2)


def _commit_csi(state: _State, peak: PeakEstimate, patch):
    state.H, state.C, state.P = patch
    state.candidates = detect_candidates(state.P, state.cfar, state.cfg)
    state.ff = FocusedFourier(state.H, state.cfg, state.refine)


def run_detection(
    H: np.ndarray,
    cfg: SensingConfig,
    cfar: CfarConfig | None = None,
    check: CheckConfig | None = None,
    refine: RefineConfig | None = None,
    *,
    C: np.ndarray | None = None,
    candidates: list[Candidate] | None = None,
) -> DetectionReport:
    """Iterative TDD peak detection over one CSI frame.

    Candidates are taken strongest first, skipping any within one resolution
    cell of an already confirmed peak. Each is refined, removed on trial and
    checked. On success the peak is confirmed, the trial state is adopted and
    the CFAR search is redone on the updated periodogram; on failure the
    state is left untouched and the next candidate is tried.

    ``C`` and ``candidates`` may carry the complex periodogram of ``H`` and
    its CFAR candidates when the caller has already computed them.
    """
    cfar = cfar or CfarConfig()
    check = check or CheckConfig()
    state = _State(H, cfg, cfar, check, refine, C=C, candidates=candidates)
    trial, commit = (_trial_psf, _commit_psf) if check.removal_mode == "psf" else (_trial_csi, _commit_csi)
    report = DetectionReport(initial_candidates=len(state.candidates))
    p = 0
    while state.candidates and p < len(state.candidates):
        if report.iterations >= check.max_iterations:
            break
        cand = select_candidate(state.candidates, report.confirmed, p, cfg)
        if cand is None:
            break
        report.iterations += 1
        peak = state.ff(cand.n, cand.m)
        result, patch = trial(state, peak, check)
        if result.passed:
            report.confirmed.append(peak)
            commit(state, peak, patch)
            p = 0
        else:
            report.rejected.append(Rejection(cand, peak, result))
            p += 1
    report.H, report.C, report.P = state.H, state.C, state.P
    return report


def cleaned_periodogram(H: np.ndarray, confirmed: list[PeakEstimate], cfg: SensingConfig):
    """Periodogram of H with the confirmed peaks' contributions filled into the UL symbols."""
    u = 1.0 - cfg.mask
    H_clean = np.array(H, dtype=complex)
    for pk in confirmed:
        H_clean += rank_one(pk.csi_alpha(cfg), pk.r, pk.v, cfg, masked=False) * u
    return power_periodogram(complex_periodogram(H_clean, cfg))
