"""Two-dimensional cell-averaging CFAR peak search on a power periodogram.

Training cells form a cross: ``train`` cells beyond ``guard`` cells on both
sides of the cell under test, along range and along Doppler. The Doppler
axis wraps around; along range, cells beyond the grid edge are dropped and
the threshold factor is recomputed for the reduced training count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from tddisac.config import SensingConfig, bin_to_physical


@dataclass(frozen=True)
class CfarConfig:
    guard_range: int = 2
    guard_doppler: int = 2
    train_range: int = 8
    train_doppler: int = 8
    pfa: float = 1e-6

    def __post_init__(self):
        if min(self.guard_range, self.guard_doppler, self.train_range, self.train_doppler) < 0:
            raise ValueError("guard/training sizes must be non-negative")
        if self.train_range + self.train_doppler < 1:
            raise ValueError("need at least one training cell")
        if not 0 < self.pfa <= 1:
            raise ValueError("pfa must lie in (0, 1]")

    @property
    def training_count(self) -> int:
        return 2 * (self.train_range + self.train_doppler)

    def scaled_doppler(self, factor: int) -> CfarConfig:
        """Stretch the Doppler guard/training extent by an integer factor."""
        return replace(
            self, guard_doppler=self.guard_doppler * factor, train_doppler=self.train_doppler * factor
        )


@dataclass(frozen=True)
class Candidate:
    n: int
    m: int
    """Signed Doppler bin."""
    power: float
    r: float
    v: float


def threshold_factor(n_train, pfa: float):
    """CA-CFAR multiplier ``N_t (P_FA**(-1/N_t) - 1)`` for exponential noise."""
    n_train = np.asarray(n_train, dtype=float)
    return n_train * np.expm1(-np.log(pfa) / n_train)


def _take(x: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    return x[tuple(idx)]


def _box_sum(x: np.ndarray, t: int, axis: int) -> np.ndarray:
    """Sums of ``t`` consecutive elements along ``axis`` (length shrinks by t - 1).

    Built from power-of-two partial sums, so only non-negative terms are
    ever added: no cancellation, unlike a running-sum difference.
    """
    length = x.shape[axis]
    out_len = length - t + 1
    shape = list(x.shape)
    shape[axis] = out_len
    out = np.zeros(shape)
    cur, width, offset = x, 1, 0
    while t:
        if t & 1:
            out += _take(cur, axis, offset, offset + out_len)
            offset += width
        t >>= 1
        if t:
            n = cur.shape[axis]
            cur = _take(cur, axis, 0, n - width) + _take(cur, axis, width, n)
            width *= 2
    return out


def _ring_sum(x: np.ndarray, guard: int, train: int, wrap: bool, axis: int = 1) -> np.ndarray:
    """Sum over training cells on both sides of each element along ``axis``."""
    if train == 0:
        return np.zeros_like(x)
    L = guard + train
    n = x.shape[axis]
    if wrap:
        reps = -(-L // n)
        ext = np.concatenate([x] * (2 * reps + 1), axis=axis)
        start = reps * n - L
        xp = _take(ext, axis, start, start + n + 2 * L)
    else:
        shape = list(x.shape)
        shape[axis] = L
        pad = np.zeros(shape)
        xp = np.concatenate([pad, x, pad], axis=axis)
    box = _box_sum(xp, train, axis)
    return _take(box, axis, 0, n) + _take(box, axis, L + guard + 1, L + guard + 1 + n)


def _runs(rows: np.ndarray):
    """Split sorted unique row indices into contiguous [start, stop) runs."""
    if rows.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(rows) > 1)
    starts = np.r_[rows[0], rows[breaks + 1]]
    stops = np.r_[rows[breaks] + 1, rows[-1] + 1]
    return list(zip(starts.tolist(), stops.tolist()))


def _detect_block(P: np.ndarray, start: int, stop: int, cfar: CfarConfig):
    """Detections with range index in [start, stop); returns (rows, cols) arrays."""
    n_rows, n_cols = P.shape
    reach = max(cfar.guard_range + cfar.train_range, 1)
    lo, hi = max(0, start - reach), min(n_rows, stop + reach)
    block = P[lo:hi]
    inner = slice(start - lo, stop - lo)

    # cross-shaped training sums
    total = _ring_sum(block[inner], cfar.guard_doppler, cfar.train_doppler, wrap=True)
    if cfar.train_range:
        total += _ring_sum(block, cfar.guard_range, cfar.train_range, wrap=False, axis=0)[inner]

    # training-cell count per row, truncated at the range edges
    g, t = cfar.guard_range, cfar.train_range
    n = np.arange(start, stop)
    below = np.clip(n - g, 0, t)
    above = np.clip(n_rows - 1 - n - g, 0, t)
    count = 2 * cfar.train_doppler + below + above
    alpha = threshold_factor(np.maximum(count, 1), cfar.pfa)

    cut = block[inner]
    total *= alpha[:, None] / count[:, None]
    hit = cut > total
    hit &= cut > 0
    rr, cc = np.nonzero(hit)
    if rr.size == 0:
        return rr, cc
    rr = rr + start

    # strict 3x3 local maximum (Doppler circular, range clamped)
    val = P[rr, cc]
    keep = np.ones(rr.size, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nr = rr + dr
            valid = (nr >= 0) & (nr < n_rows)
            nb = P[np.clip(nr, 0, n_rows - 1), (cc + dc) % n_cols]
            keep &= ~valid | (val > nb)
    return rr[keep], cc[keep]


def detect_candidates(
    P: np.ndarray, cfar: CfarConfig, cfg: SensingConfig, rows=None
) -> list[Candidate]:
    """CA-CFAR crossings that are strict local maxima, strongest first.

    ``rows`` restricts the search to the given range bins (used for
    incremental updates after a local change of ``P``).
    """
    n_rows, n_cols = P.shape
    if (n_rows, n_cols) != (cfg.N_pad, cfg.M_pad):
        raise ValueError(f"grid {P.shape} does not match config ({cfg.N_pad}, {cfg.M_pad})")
    span_d = 2 * (cfar.guard_doppler + cfar.train_doppler) + 1
    if span_d > n_cols or 2 * (cfar.guard_range + cfar.train_range) + 1 > n_rows:
        raise ValueError("grid smaller than the CFAR window")
    if rows is None:
        runs = [(0, n_rows)]
    else:
        runs = _runs(np.unique(np.asarray(rows, dtype=int)))
    found_r, found_c = [], []
    for start, stop in runs:
        r, c = _detect_block(P, start, stop, cfar)
        found_r.append(r)
        found_c.append(c)
    rr = np.concatenate(found_r) if found_r else np.empty(0, int)
    cc = np.concatenate(found_c) if found_c else np.empty(0, int)
    return _as_candidates(P, rr, cc, cfg)


def _as_candidates(P, rr, cc, cfg: SensingConfig) -> list[Candidate]:
    half = cfg.M_pad // 2
    mm = cc - half
    power = P[rr, cc]
    order = np.lexsort((mm, rr, -power))
    out = []
    for i in order:
        r, v = bin_to_physical(rr[i], mm[i], cfg)
        out.append(Candidate(int(rr[i]), int(mm[i]), float(power[i]), r, v))
    return out


def sort_candidates(cands) -> list[Candidate]:
    """Descending power; ties broken by lower range bin, then lower Doppler bin."""
    return sorted(cands, key=lambda c: (-c.power, c.n, c.m))
