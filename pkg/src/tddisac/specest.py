"""Range-Doppler periodograms and focused (zoom) Fourier refinement.

Normalisation used everywhere in the package:

* ``C[n, m] = 1/(N'M') sum_k sum_l H[k, l] exp(-j2pi l m/M') exp(+j2pi k n/N')``
* ``C_fine`` is the same double sum without the ``1/(N'M')`` factor,
  evaluated at fractional bins; ``alpha' = C_fine / (N'M')`` is therefore
  directly comparable to ``C``.
* the CSI-domain coefficient is ``alpha = alpha' N'M' / (N M D_TDD)``.

The Doppler axis of ``C`` is stored center-shifted: column ``j`` holds the
signed bin ``m = j - M'/2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from tddisac.config import SensingConfig, bin_to_physical, wrap_bins
from tddisac.psf import peak_gain


def _check_shape(H: np.ndarray, cfg: SensingConfig):
    if H.shape != (cfg.N, cfg.M):
        raise ValueError(f"CSI shape {H.shape} does not match config ({cfg.N}, {cfg.M})")


def range_transform(H: np.ndarray, cfg: SensingConfig) -> np.ndarray:
    """Zero-padded IDFT over subcarriers, ``(1/N') sum_k H[k, l] e^{+j2pi kn/N'}``."""
    _check_shape(H, cfg)
    return sfft.ifft(H, n=cfg.N_pad, axis=0)


def doppler_transform(G: np.ndarray, cfg: SensingConfig) -> np.ndarray:
    """Zero-padded DFT over symbols (``1/M'`` scaled), center-shifted."""
    X = sfft.fft(G, n=cfg.M_pad, axis=1)
    X /= cfg.M_pad
    return sfft.fftshift(X, axes=1)


def complex_periodogram(H: np.ndarray, cfg: SensingConfig, taper=None) -> np.ndarray:
    """Complex range-Doppler periodogram ``C`` (N' x M', Doppler center-shifted).

    ``taper`` is an optional ``(range_window, doppler_window)`` pair of 1D
    arrays multiplied onto H before the transforms.
    """
    _check_shape(H, cfg)
    if taper is not None:
        wr, wd = taper
        H = H * np.outer(wr, wd)
    return doppler_transform(range_transform(H, cfg), cfg)


def power_periodogram(C: np.ndarray) -> np.ndarray:
    return C.real**2 + C.imag**2


def doppler_index(m, cfg: SensingConfig):
    """Storage column of signed Doppler bin ``m``."""
    return np.asarray(m) + cfg.M_pad // 2


def signed_doppler(col, cfg: SensingConfig):
    return np.asarray(col) - cfg.M_pad // 2


def to_csi_coefficient(alpha_p: complex, cfg: SensingConfig) -> complex:
    """Periodogram-domain coefficient -> CSI-domain path coefficient."""
    return alpha_p * cfg.N_pad * cfg.M_pad / peak_gain(cfg)


def to_periodogram_coefficient(alpha: complex, cfg: SensingConfig) -> complex:
    return alpha * peak_gain(cfg) / (cfg.N_pad * cfg.M_pad)


@dataclass(frozen=True)
class PeakEstimate:
    n_coarse: int
    m_coarse: int
    n: float
    m: float
    r: float
    v: float
    alpha: complex
    """Refined coefficient in periodogram normalisation."""

    @property
    def power_db(self) -> float:
        p = abs(self.alpha) ** 2
        return 10.0 * np.log10(p) if p > 0 else -np.inf

    def csi_alpha(self, cfg: SensingConfig) -> complex:
        return to_csi_coefficient(self.alpha, cfg)


@dataclass(frozen=True)
class RefineConfig:
    """Zoom stages as ``(half_width, step)`` in bins, applied in order."""

    stages: tuple = ((1.0, 1.0 / 8), (1.0 / 8, 1.0 / 64))


class FocusedFourier:
    """Fine-grid evaluation of ``W_r^T H W_s`` around coarse peaks of one CSI matrix.

    Range projections ``W_r^T H`` are cached per stage center, so candidates
    sharing a range bin (a target and its Doppler sidelobes) reuse them.
    """

    def __init__(self, H: np.ndarray, cfg: SensingConfig, refine: RefineConfig | None = None):
        _check_shape(H, cfg)
        self.cfg = cfg
        self.refine = refine or RefineConfig()
        ul = cfg.mask == 0
        if ul.any() and not np.any(H[:, ul]):
            self._cols = np.flatnonzero(cfg.mask)
            self._H = np.ascontiguousarray(H[:, self._cols])
        else:
            self._cols = np.arange(cfg.M)
            self._H = H
        self._k = np.arange(cfg.N)
        self._cache: dict = {}

    def _range_rows(self, n_c: float, offsets: np.ndarray) -> np.ndarray:
        key = (n_c, offsets.size, float(offsets[0]))
        rows = self._cache.get(key)
        if rows is None:
            n = n_c + offsets
            Wr = np.exp(2j * np.pi * np.outer(n, self._k) / self.cfg.N_pad)
            rows = Wr @ self._H
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = rows
        return rows

    def section(self, n_c: float, m_c: float, half_width: float, step: float):
        """Raw fine-grid section around ``(n_c, m_c)``; returns (n_axis, m_axis, C_fine)."""
        count = int(round(half_width / step))
        offsets = np.arange(-count, count + 1) * step
        rows = self._range_rows(n_c, offsets)
        m = m_c + offsets
        Ws = np.exp(-2j * np.pi * np.outer(self._cols, m) / self.cfg.M_pad)
        return n_c + offsets, m, rows @ Ws

    def __call__(self, n_coarse: int, m_coarse: int) -> PeakEstimate:
        cfg = self.cfg
        if not (0 <= n_coarse < cfg.N_pad and -cfg.M_pad // 2 <= m_coarse < cfg.M_pad // 2):
            raise ValueError(f"coarse bin ({n_coarse}, {m_coarse}) outside grid")
        n_c, m_c = float(n_coarse), float(m_coarse)
        value = None
        for half_width, step in self.refine.stages:
            n_ax, m_ax, Cf = self.section(n_c, m_c, half_width, step)
            i, j = np.unravel_index(np.argmax(np.abs(Cf)), Cf.shape)
            n_c, m_c, value = float(n_ax[i]), float(m_ax[j]), Cf[i, j]
        n_w, m_w = wrap_bins(n_c, m_c, cfg)
        r, v = bin_to_physical(n_w, m_w, cfg)
        return PeakEstimate(
            n_coarse=int(n_coarse),
            m_coarse=int(m_coarse),
            n=n_w,
            m=m_w,
            r=r,
            v=v,
            alpha=complex(value) / (cfg.N_pad * cfg.M_pad),
        )


def focused_fourier(
    H: np.ndarray, coarse: tuple[int, int], cfg: SensingConfig, refine: RefineConfig | None = None
) -> PeakEstimate:
    """Refine a coarse ``(n, m)`` peak to fractional bins and a complex coefficient."""
    return FocusedFourier(H, cfg, refine)(*coarse)
