import numpy as np
import pytest

from tddisac.config import bin_to_physical
from tddisac.psf import peak_gain
from tddisac.scene import Target, rank_one, steering_range, synthesize_csi
from tddisac.specest import (
    FocusedFourier,
    RefineConfig,
    complex_periodogram,
    doppler_index,
    focused_fourier,
    power_periodogram,
    signed_doppler,
    to_csi_coefficient,
    to_periodogram_coefficient,
)


def direct_periodogram(H, cfg, n, m):
    """The defining double sum at selected signed bins."""
    k = np.arange(cfg.N)
    l = np.arange(cfg.M)
    Wr = np.exp(2j * np.pi * np.outer(n, k) / cfg.N_pad)
    Ws = np.exp(-2j * np.pi * np.outer(l, m) / cfg.M_pad)
    return Wr @ H @ Ws / (cfg.N_pad * cfg.M_pad)


def test_matches_direct_sum(small, rng):
    H = (rng.standard_normal((small.N, small.M)) + 1j * rng.standard_normal((small.N, small.M))) * small.mask
    C = complex_periodogram(H, small)
    n = np.array([0, 1, 17, small.N_pad - 1])
    m = np.array([-small.M_pad // 2, -5, 0, 3, small.M_pad // 2 - 1])
    ref = direct_periodogram(H, small, n, m)
    got = C[np.ix_(n, doppler_index(m, small))]
    assert np.abs(got - ref).max() <= 1e-10 * np.abs(ref).max()


def test_zero_and_shape_errors(small):
    assert not complex_periodogram(np.zeros((small.N, small.M)), small).any()
    with pytest.raises(ValueError):
        complex_periodogram(np.zeros((small.N + 1, small.M)), small)


def test_on_grid_peak(table1):
    r, _ = bin_to_physical(40, 0, table1)
    C = complex_periodogram(rank_one(2.0, r, 0.0, table1), table1)
    peak = np.abs(C).max()
    assert peak == pytest.approx(2.0 * 1584 * 104 * 8 / (4096 * 2048), rel=1e-12)
    assert np.unravel_index(np.argmax(np.abs(C)), C.shape) == (40, doppler_index(0, table1))


def test_linearity_and_phase(small):
    A = rank_one(1.0, 10.0, 1.0, small)
    B = rank_one(0.5j, 30.0, -2.0, small)
    CA, CB = complex_periodogram(A, small), complex_periodogram(B, small)
    assert np.allclose(complex_periodogram(A + B, small), CA + CB, atol=1e-15)
    assert np.allclose(power_periodogram(complex_periodogram(A * np.exp(0.7j), small)), power_periodogram(CA))


def test_parseval(small, rng):
    H = rng.standard_normal((small.N, small.M)) + 1j * rng.standard_normal((small.N, small.M))
    C = complex_periodogram(H, small)
    P = power_periodogram(C)
    assert P.sum() == pytest.approx(np.sum(np.abs(H) ** 2) / (small.N_pad * small.M_pad), rel=1e-9)


def test_shift_theorem(small, rng):
    H = rng.standard_normal((small.N, small.M)) + 1j * rng.standard_normal((small.N, small.M))
    shift = 5
    r0, _ = bin_to_physical(shift, 0, small)
    C = complex_periodogram(H, small)
    C_shift = complex_periodogram(H * steering_range(r0, small)[:, None], small)
    assert np.allclose(C_shift, np.roll(C, shift, axis=0), atol=1e-12)


def test_index_helpers(small):
    m = np.array([-small.M_pad // 2, 0, 7])
    assert np.array_equal(signed_doppler(doppler_index(m, small), small), m)
    a = 0.3 - 0.1j
    assert to_csi_coefficient(to_periodogram_coefficient(a, small), small) == pytest.approx(a)


def test_refine_on_grid_recovers_alpha(table1):
    r, v = bin_to_physical(60, 12, table1)
    alpha = 1.5 * np.exp(0.4j)
    H = rank_one(alpha, r, v, table1)
    pk = focused_fourier(H, (60, 12), table1)
    assert (pk.n, pk.m) == (60.0, 12.0)
    assert pk.csi_alpha(table1) == pytest.approx(alpha, rel=1e-6)


def test_refine_off_grid(table1):
    n_true, m_true = 60 + 0.37, 12 - 0.21
    r, v = bin_to_physical(n_true, m_true, table1)
    H = rank_one(1.0, r, v, table1)
    pk = focused_fourier(H, (60, 12), table1)
    assert abs(pk.n - n_true) <= 1 / 64 and abs(pk.m - m_true) <= 1 / 64
    # brute-force dense section on a 1/512 grid agrees to the fine step
    ff = FocusedFourier(H, table1)
    n_ax, m_ax, Cf = ff.section(60.375, 11.79, 1 / 64, 1 / 512)
    i, j = np.unravel_index(np.argmax(np.abs(Cf)), Cf.shape)
    assert abs(n_ax[i] - pk.n) <= 1 / 64 and abs(m_ax[j] - pk.m) <= 1 / 64


def test_refine_never_below_coarse(small, rng):
    H = (rng.standard_normal((small.N, small.M)) + 1j * rng.standard_normal((small.N, small.M))) * small.mask
    C = complex_periodogram(H, small)
    ff = FocusedFourier(H, small)
    for n, col in [(3, 10), (50, 64), (200, 1)]:
        pk = ff(n, int(signed_doppler(col, small)))
        assert abs(pk.alpha) >= abs(C[n, col]) * (1 - 1e-12)
        assert abs(pk.n - n) <= 1 + 1 / 8 and abs(((pk.m - signed_doppler(col, small) + small.M_pad / 2) % small.M_pad) - small.M_pad / 2) <= 1 + 1 / 8


def test_refine_rejects_outside_grid(small):
    ff = FocusedFourier(np.zeros((small.N, small.M), complex), small)
    with pytest.raises(ValueError):
        ff(small.N_pad, 0)
    with pytest.raises(ValueError):
        ff(0, small.M_pad // 2)


def test_refine_custom_stages(small):
    H = synthesize_csi([Target(20.0, 1.0, 1.0)], 0.0, small)
    coarse = FocusedFourier(H, small, RefineConfig(stages=((1.0, 0.5),)))
    pk = coarse(*map(int, np.round([20.0 / small.range_bin, 1.0 / small.speed_bin])))
    assert (pk.n * 2) == int(pk.n * 2) and (pk.m * 2) == int(pk.m * 2)


def test_peak_gain_scaling(table1):
    assert peak_gain(table1) == table1.N * table1.M * table1.tdd.duty_cycle
