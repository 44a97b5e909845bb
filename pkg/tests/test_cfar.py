import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import correlate1d

from tddisac.cfar import CfarConfig, _ring_sum, detect_candidates, sort_candidates, threshold_factor, Candidate
from tddisac.config import GridConfig, bin_to_physical
from tddisac.scene import NoiseSpec, rank_one, synthesize_csi
from tddisac.specest import complex_periodogram, doppler_index, power_periodogram


def test_threshold_factor_examples():
    assert threshold_factor(16, 1e-6) == pytest.approx(16 * (1e-6 ** (-1 / 16) - 1))
    assert threshold_factor(16, 1e-6) == pytest.approx(21.94, abs=0.01)
    assert threshold_factor(10**6, 1e-6) == pytest.approx(-np.log(1e-6), rel=1e-4)
    assert threshold_factor(8, 1.0) == 0.0


@pytest.mark.parametrize(
    "kwargs", [dict(guard_range=-1), dict(train_range=0, train_doppler=0), dict(pfa=0.0), dict(pfa=1.5)]
)
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        CfarConfig(**kwargs)


@pytest.mark.parametrize("guard,train", [(2, 8), (0, 1), (22, 88), (3, 5)])
@pytest.mark.parametrize("wrap", [True, False])
def test_ring_sum_matches_correlation(guard, train, wrap, rng):
    x = rng.random((6, 240))
    kernel = np.ones(2 * (guard + train) + 1)
    kernel[train : train + 2 * guard + 1] = 0
    ref = correlate1d(x, kernel, axis=1, mode="wrap" if wrap else "constant")
    assert np.allclose(_ring_sum(x, guard, train, wrap), ref, rtol=1e-13, atol=0)
    assert np.allclose(_ring_sum(x.T, guard, train, wrap, axis=0), ref.T, rtol=1e-13, atol=0)


def brute_force(P, cfar):
    """Literal per-cell CA-CFAR plus strict 3x3 local-maximum test."""
    n_rows, n_cols = P.shape
    out = set()
    for n in range(n_rows):
        for c in range(n_cols):
            cells = []
            for s in (-1, 1):
                for d in range(cfar.guard_doppler + 1, cfar.guard_doppler + cfar.train_doppler + 1):
                    cells.append(P[n, (c + s * d) % n_cols])
                for d in range(cfar.guard_range + 1, cfar.guard_range + cfar.train_range + 1):
                    if 0 <= n + s * d < n_rows:
                        cells.append(P[n + s * d, c])
            if not P[n, c] > threshold_factor(len(cells), cfar.pfa) * np.mean(cells):
                continue
            nb = [P[n + dr, (c + dc) % n_cols] for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr or dc) and 0 <= n + dr < n_rows]
            if all(P[n, c] > x for x in nb):
                out.add((n, c))
    return out


def test_matches_brute_force(rng):
    from tddisac.config import RadioConfig, SensingConfig, TddPattern

    cfg = SensingConfig(RadioConfig(N=32), TddPattern(6, 2, 4), GridConfig(64, 64))
    P = rng.exponential(size=(64, 64))
    P[10, 5] = 200.0
    P[0, 30] = 150.0  # range edge, truncated training
    P[40, 63] = 180.0  # Doppler wrap
    cfar = CfarConfig(pfa=1e-2)
    got = {(c.n, int(doppler_index(c.m, cfg))) for c in detect_candidates(P, cfar, cfg)}
    assert got == brute_force(P, cfar)
    assert {(10, 5), (0, 30), (40, 63)} <= got


def test_zero_grid(small):
    P = np.zeros((small.N_pad, small.M_pad))
    assert detect_candidates(P, CfarConfig(), small) == []


def test_grid_errors(small):
    with pytest.raises(ValueError):
        detect_candidates(np.ones((10, 10)), CfarConfig(), small)
    from tddisac.config import RadioConfig, SensingConfig, TddPattern

    tiny = SensingConfig(RadioConfig(N=8), TddPattern(3, 1, 4), GridConfig(16, 16))
    with pytest.raises(ValueError):
        detect_candidates(np.ones((16, 16)), CfarConfig(), tiny)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2.0**-30, 0.5, 4.0, 2.0**40, 3.7, 1e-20, 123.456]), st.integers(0, 1000))
def test_scale_invariance(scale, seed):
    from tddisac.config import RadioConfig, SensingConfig, TddPattern

    cfg = SensingConfig(RadioConfig(N=64), TddPattern(10, 4, 4)).with_grid(128, 64)
    P = np.random.default_rng(seed).exponential(size=(128, 64))
    P[::17, ::9] *= 40
    a = [(c.n, c.m) for c in detect_candidates(P, CfarConfig(pfa=1e-3), cfg)]
    b = [(c.n, c.m) for c in detect_candidates(P * scale, CfarConfig(pfa=1e-3), cfg)]
    assert a == b


def test_sorted_strict_local_maxima(small, rng):
    P = rng.exponential(size=(small.N_pad, small.M_pad))
    cands = detect_candidates(P, CfarConfig(pfa=1e-2), small)
    assert cands
    assert cands == sort_candidates(cands)
    for c in cands:
        col = int(doppler_index(c.m, small))
        n0, n1 = max(c.n - 1, 0), min(c.n + 2, small.N_pad)
        block = P[n0:n1][:, np.mod(col + np.arange(-1, 2), small.M_pad)]
        assert (block < c.power).sum() == block.size - 1
        assert (c.r, c.v) == bin_to_physical(c.n, c.m, small)


def test_sort_tie_break():
    cs = [Candidate(5, 1, 2.0, 0, 0), Candidate(3, 4, 2.0, 0, 0), Candidate(3, -2, 2.0, 0, 0), Candidate(9, 0, 3.0, 0, 0)]
    assert [(c.n, c.m) for c in sort_candidates(cs)] == [(9, 0), (3, -2), (3, 4), (5, 1)]


def test_rows_restriction_consistent(small, rng):
    P = rng.exponential(size=(small.N_pad, small.M_pad))
    full = detect_candidates(P, CfarConfig(pfa=1e-2), small)
    rows = np.arange(40, 90)
    part = detect_candidates(P, CfarConfig(pfa=1e-2), small, rows=rows)
    assert part == [c for c in full if 40 <= c.n < 90]


def test_strong_target_yields_sidelobe_candidates(table1):
    r, v = bin_to_physical(100, 0, table1)
    P = power_periodogram(complex_periodogram(rank_one(1.0, r, v, table1), table1))
    cands = detect_candidates(P, CfarConfig(), table1)
    pos = {(c.n, c.m) for c in cands}
    spacing = table1.M_pad / table1.tdd.M_TDD
    assert (100, 0) in pos
    for side in (-1, 1):
        target_m = side * spacing
        assert any(c.n == 100 and abs(c.m - target_m) <= 1 for c in cands)


def test_false_alarm_count_order_of_magnitude(table1):
    counts = []
    for seed in range(100):
        H = synthesize_csi([], NoiseSpec(1.0), table1, seed=(99, seed))
        P = power_periodogram(complex_periodogram(H, table1))
        counts.append(len(detect_candidates(P, CfarConfig(), table1)))
    expected = table1.N_pad * table1.M_pad * 1e-6
    assert expected / 3 <= np.mean(counts) <= expected * 3
