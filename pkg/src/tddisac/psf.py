"""Analytic point spread function of the TDD-windowed range-Doppler DFT.

The real-valued kernels (:func:`psf_doppler`, :func:`psf_rd`) are the
magnitude-with-sign forms. The DFT of a window that starts at symbol 0 also
carries a linear phase; :func:`kernel_range` and :func:`kernel_doppler`
include it, and stencils built from them match the periodogram of a masked
single-target CSI to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tddisac.config import SensingConfig

_SINGULAR = 1e-9


def dirichlet(A: int, x):
    """Dirichlet kernel ``sin(A pi x) / (A sin(pi x))``.

    Evaluated on ``x`` reduced to ``[-1/2, 1/2]`` with the sign law
    ``D_A(x + k) = (-1)**(k (A - 1)) D_A(x)``, which keeps the value accurate
    when ``x`` lands close to an integer.
    """
    if A < 1:
        raise ValueError("Dirichlet order must be >= 1")
    x = np.asarray(x, dtype=float)
    k = np.round(x)
    eps = x - k
    sign = np.where(np.mod(k * (A - 1), 2) == 0, 1.0, -1.0)
    den = np.sin(np.pi * eps)
    near = np.abs(den) < _SINGULAR
    safe = np.where(near, 1.0, den)
    val = np.sin(A * np.pi * eps) / (A * safe)
    # series around the removable singularity
    series = 1.0 - (A * A - 1.0) * (np.pi * eps) ** 2 / 6.0
    out = sign * np.where(near, series, val)
    return out if out.ndim else float(out)


def psf_doppler(m, cfg: SensingConfig):
    """Doppler PSF ``M_DL D_{M_DL}(m/M') R D_R(M_TDD m/M')`` at bin offset ``m``."""
    t = cfg.tdd
    x = np.asarray(m, dtype=float) / cfg.M_pad
    return t.M_DL * dirichlet(t.M_DL, x) * t.R * dirichlet(t.R, t.M_TDD * x)


def psf_range(n, cfg: SensingConfig):
    x = np.asarray(n, dtype=float) / cfg.N_pad
    return cfg.N * dirichlet(cfg.N, x)


def psf_rd(n, m, cfg: SensingConfig):
    """Separable 2D PSF ``W_D(m) N D_N(n/N')``."""
    return psf_doppler(m, cfg) * psf_range(n, cfg)


def peak_gain(cfg: SensingConfig) -> float:
    """PSF value at the origin, ``N M_DL R``."""
    return float(cfg.N * cfg.tdd.M_DL * cfg.tdd.R)


def _wrap(x, period):
    return np.mod(np.asarray(x, dtype=float) + period / 2, period) - period / 2


def kernel_range(n, cfg: SensingConfig):
    """``sum_k exp(+j 2 pi k n / N')`` over the N occupied subcarriers."""
    n = _wrap(n, cfg.N_pad)
    x = n / cfg.N_pad
    return np.exp(1j * np.pi * (cfg.N - 1) * x) * cfg.N * dirichlet(cfg.N, x)


def kernel_doppler(m, cfg: SensingConfig):
    """``sum_l d_l exp(-j 2 pi l m / M')`` for the TDD mask ``d``."""
    t = cfg.tdd
    m = _wrap(m, cfg.M_pad)
    x = m / cfg.M_pad
    phase = np.exp(-1j * np.pi * ((t.M_DL - 1) + t.M_TDD * (t.R - 1)) * x)
    return phase * t.M_DL * dirichlet(t.M_DL, x) * t.R * dirichlet(t.R, t.M_TDD * x)


@dataclass
class Psf2dStencil:
    """Complex PSF replica on a rectangular window of the periodogram grid.

    ``rows`` are range-bin indices (already folded mod N'), ``cols`` are
    storage column indices of the center-shifted Doppler axis.
    """

    values: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    center: tuple[float, float]

    def add_to(self, grid: np.ndarray, scale: complex = 1.0):
        grid[np.ix_(self.rows, self.cols)] += scale * self.values


def psf_stencil(
    center: tuple[float, float],
    coeff: complex,
    cfg: SensingConfig,
    range_extent: int | None = 8,
    doppler_extent: int | None = None,
    rows: np.ndarray | None = None,
) -> Psf2dStencil:
    """Shifted PSF scaled so its value at the (fractional) center is ``coeff``.

    ``center`` is ``(n', m')`` with ``m'`` a signed Doppler bin. Extents are
    half-widths in bins around the nearest grid cell; ``None`` covers the full
    axis. Offsets are taken circularly on both axes. An explicit ``rows``
    array (range-bin indices) overrides ``range_extent``.
    """
    n0, m0 = center
    if rows is not None:
        rows = np.mod(np.asarray(rows, dtype=int), cfg.N_pad)
    elif range_extent is None or 2 * range_extent + 1 >= cfg.N_pad:
        rows = np.arange(cfg.N_pad)
    else:
        rows = np.mod(int(np.round(n0)) + np.arange(-range_extent, range_extent + 1), cfg.N_pad)
    half = cfg.M_pad // 2
    if doppler_extent is None or 2 * doppler_extent + 1 >= cfg.M_pad:
        cols = np.arange(cfg.M_pad)
    else:
        base = int(np.round(m0)) + half
        cols = np.mod(base + np.arange(-doppler_extent, doppler_extent + 1), cfg.M_pad)
    m = cols - half
    kr = kernel_range(rows - n0, cfg)
    kd = kernel_doppler(m - m0, cfg)
    values = (coeff / peak_gain(cfg)) * np.outer(kr, kd)
    return Psf2dStencil(values=values, rows=rows, cols=cols, center=(float(n0), float(m0)))
