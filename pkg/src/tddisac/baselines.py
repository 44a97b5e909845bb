"""Comparison detectors: plain periodogram CFAR and Single-DL burst averaging."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import scipy.fft as sfft

from tddisac.cfar import CfarConfig, detect_candidates
from tddisac.config import SensingConfig
from tddisac.specest import (
    FocusedFourier,
    PeakEstimate,
    RefineConfig,
    doppler_transform,
    power_periodogram,
    range_transform,
)
from tddisac.tddclean import resolution_distance


def detect_conventional(
    H: np.ndarray,
    cfg: SensingConfig,
    cfar: CfarConfig | None = None,
    refine: RefineConfig | None = None,
    P: np.ndarray | None = None,
) -> list[PeakEstimate]:
    """Every CFAR candidate of the full-frame periodogram, refined; no validity check."""
    cfar = cfar or CfarConfig()
    if P is None:
        P = power_periodogram(doppler_transform(range_transform(H, cfg), cfg))
    ff = FocusedFourier(H, cfg, refine)
    return [ff(c.n, c.m) for c in detect_candidates(P, cfar, cfg)]


def burst_slices(cfg: SensingConfig) -> list[slice]:
    t = cfg.tdd
    return [slice(r * t.M_TDD, r * t.M_TDD + t.M_DL) for r in range(t.R)]


def burst_power_direct(H: np.ndarray, cfg: SensingConfig) -> np.ndarray:
    """Mean of the R per-burst power periodograms, each zero-padded to (N', M')."""
    G = range_transform(H, cfg)
    acc = np.zeros((cfg.N_pad, cfg.M_pad))
    for sl in burst_slices(cfg):
        X = sfft.fft(G[:, sl], n=cfg.M_pad, axis=1) / cfg.M_pad
        acc += power_periodogram(X)
    return sfft.fftshift(acc / cfg.tdd.R, axes=1)


def burst_power_average(
    H: np.ndarray, cfg: SensingConfig, G: np.ndarray | None = None
) -> np.ndarray:
    """Same grid as :func:`burst_power_direct`, computed from summed burst autocorrelations.

    ``|X(m)|^2`` is the DFT of the burst's autocorrelation, so the R bursts
    need short transforms plus a single length-M' transform per range bin.
    """
    L = cfg.tdd.M_DL
    Mp = cfg.M_pad
    if Mp < 2 * L - 1:
        return burst_power_direct(H, cfg)
    if G is None:
        G = range_transform(H, cfg)
    Q = sfft.next_fast_len(2 * L - 1)
    S = np.zeros((cfg.N_pad, Q))
    for sl in burst_slices(cfg):
        S += power_periodogram(sfft.fft(G[:, sl], n=Q, axis=1))
    Rxx = sfft.ifft(S, axis=1)
    # lags 0..L-1 only: the spectrum is real, so the negative lags are implied
    half = np.zeros((cfg.N_pad, Mp // 2 + 1), dtype=complex)
    half[:, :L] = Rxx[:, :L]
    half[:, 0] = half[:, 0].real
    # sum_tau R(tau) e^{-j2pi tau m/M'} = M' * irfft(conj(R_half))
    spec = sfft.irfft(np.conj(half), n=Mp, axis=1) * (Mp / (Mp * Mp * cfg.tdd.R))
    np.maximum(spec, 0.0, out=spec)
    return sfft.fftshift(spec, axes=1)


def single_dl_cfar(cfar: CfarConfig, cfg: SensingConfig) -> CfarConfig:
    """CFAR window for the averaged burst grid.

    A burst main lobe is ``M/M_DL`` times wider in Doppler than the frame's,
    so the Doppler guard is stretched by ``ceil(M/M_DL)`` (capped to fit the
    grid). The training arms keep their length: stretching them too would
    let the far Doppler floor outweigh the range arm and pass every range
    sidelobe of a strong target.
    """
    factor = math.ceil(cfg.M / cfg.tdd.M_DL)
    room = (cfg.M_pad - 1) // 2 - cfar.train_doppler
    guard = max(cfar.guard_doppler, min(cfar.guard_doppler * factor, room))
    return replace(cfar, guard_doppler=guard)


def detect_single_dl(
    H: np.ndarray,
    cfg: SensingConfig,
    cfar: CfarConfig | None = None,
    refine: RefineConfig | None = None,
    range_window: int = 2,
    G: np.ndarray | None = None,
    P: np.ndarray | None = None,
) -> list[PeakEstimate]:
    """Coarse search on the averaged burst periodogram, fine search on the full frame.

    Each coarse peak opens a window of +-``range_window`` range bins and
    +-``M'/(2 M_TDD)`` Doppler bins on the full-frame periodogram; its
    maximum is refined. Fine peaks that collapse onto an already reported
    one (within one resolution cell) are dropped.
    """
    cfar = cfar or CfarConfig()
    if G is None:
        G = range_transform(H, cfg)
    if P is None:
        P = power_periodogram(doppler_transform(G, cfg))
    avg = burst_power_average(H, cfg, G=G)
    coarse = detect_candidates(avg, single_dl_cfar(cfar, cfg), cfg)

    half_d = int(cfg.M_pad // (2 * cfg.tdd.M_TDD))
    d_off = np.arange(-half_d, half_d + 1)
    r_off = np.arange(-range_window, range_window + 1)
    mid = cfg.M_pad // 2
    ff = FocusedFourier(H, cfg, refine)
    peaks: list[PeakEstimate] = []
    for c in coarse:
        rows = np.clip(c.n + r_off, 0, cfg.N_pad - 1)
        cols = np.mod(c.m + mid + d_off, cfg.M_pad)
        window = P[np.ix_(rows, cols)]
        i, j = np.unravel_index(np.argmax(window), window.shape)
        pk = ff(int(rows[i]), int(cols[j] - mid))
        if peaks:
            d = resolution_distance(
                pk.r, pk.v, [q.r for q in peaks], [q.v for q in peaks], cfg, wrap=True
            )
            if np.any(d <= 1.0):
                continue
        peaks.append(pk)
    return peaks
