import numpy as np
import pytest
import scipy.fft

from tddisac.cfar import Candidate, CfarConfig, detect_candidates
from tddisac.config import bin_to_physical
from tddisac.harness import match_detections
from tddisac.scene import NoiseSpec, Target, rank_one, synthesize_csi
from tddisac.specest import (
    FocusedFourier,
    PeakEstimate,
    complex_periodogram,
    doppler_index,
    power_periodogram,
)
from tddisac.tddclean import (
    CheckConfig,
    _State,
    _trial_psf,
    cleaned_periodogram,
    csi_removal,
    psf_removal,
    resolution_distance,
    run_detection,
    select_candidate,
    sidelobe_check,
)


def peak_at(r, v, cfg, alpha=1.0 + 0j):
    n, m = 0.0, 0.0
    return PeakEstimate(0, 0, n, m, r, v, alpha)


def cand(r, v, power=1.0):
    return Candidate(0, 0, power, r, v)


# --- candidate gating -------------------------------------------------------


def test_select_candidate_rules(table1):
    dr, dv = table1.range_resolution, table1.speed_resolution
    cs = [cand(10.0, 0.0, 5.0), cand(10.0 + dr, 0.0, 4.0), cand(10.0 + 0.8 * dr, 0.8 * dv, 3.0), cand(30.0, 1.0, 2.0)]
    assert select_candidate(cs, [], 0, table1) is cs[0]
    confirmed = [PeakEstimate(0, 0, 0, 0, 10.0, 0.0, 1.0)]
    # exactly at the peak and at distance 1 are skipped; sqrt(1.28) > 1 is kept
    assert select_candidate(cs, confirmed, 0, table1) is cs[2]
    assert select_candidate(cs, confirmed, 1, table1) is cs[3]
    assert select_candidate(cs, confirmed, 2, table1) is None


def test_resolution_distance_wraps_doppler(table1):
    span = table1.M_pad * table1.speed_bin
    d = resolution_distance(5.0, span / 2 - 0.01, 5.0, -span / 2 + 0.01, table1, wrap=True)
    assert d < 0.1
    assert resolution_distance(5.0, span / 2 - 0.01, 5.0, -span / 2 + 0.01, table1) > 100


# --- removal ----------------------------------------------------------------


def test_csi_removal_exact_on_grid(table1):
    r, v = bin_to_physical(64, 20, table1)
    H = rank_one(0.8 - 0.3j, r, v, table1)
    P = power_periodogram(complex_periodogram(H, table1))
    pk = FocusedFourier(H, table1)(64, 20)
    H2, C2, P2 = csi_removal(H, pk, table1)
    assert P2.max() <= 1e-12 * P.max()
    assert not H2[:, table1.mask == 0].any()


def test_csi_removal_off_grid_drop(table1):
    n, m = 64.4, 20.27
    r, v = bin_to_physical(n, m, table1)
    H = rank_one(1.0, r, v, table1)
    P = power_periodogram(complex_periodogram(H, table1))
    pk = FocusedFourier(H, table1)(64, 20)
    _, _, P2 = csi_removal(H, pk, table1)
    assert 10 * np.log10(P.max() / P2.max()) >= 30


def _random_peak(cfg, rng):
    H = rank_one(rng.standard_normal() + 1j * rng.standard_normal(), rng.uniform(5, 200), rng.uniform(-20, 20), cfg)
    C = complex_periodogram(H, cfg)
    n, col = np.unravel_index(np.argmax(np.abs(C)), C.shape)
    pk = FocusedFourier(H, cfg)(int(n), int(col - cfg.M_pad // 2))
    return H, C, pk


def test_psf_removal_matches_csi_removal(small, rng):
    for _ in range(10):
        H, C, pk = _random_peak(small, rng)
        H_a, C_a, _ = csi_removal(H, pk, small)
        H_b, C_b, _ = psf_removal(C, H, pk, small)
        assert np.abs(C_a - C_b).max() <= 1e-9 * np.abs(C).max()
        assert np.array_equal(H_a, H_b)


def test_psf_removal_zero_coefficient(small, rng):
    H, C, pk = _random_peak(small, rng)
    zero = PeakEstimate(pk.n_coarse, pk.m_coarse, pk.n, pk.m, pk.r, pk.v, 0j)
    _, C2, _ = psf_removal(C, H, zero, small)
    assert np.array_equal(C2, C)


def test_psf_removal_uses_no_transform(small, rng, monkeypatch):
    H, C, pk = _random_peak(small, rng)

    def boom(*a, **k):
        raise AssertionError("transform called")

    for name in ("fft", "ifft", "fft2", "ifft2", "fftn", "ifftn"):
        monkeypatch.setattr(scipy.fft, name, boom)
    psf_removal(C, H, pk, small, range_extent=8)


# --- sidelobe check -----------------------------------------------------------


def _strong_target(table1):
    r, v = bin_to_physical(80.3, 10.6, table1)
    H = rank_one(1.0, r, v, table1)
    C = complex_periodogram(H, table1)
    return H, C, power_periodogram(C)


def test_check_passes_true_target(table1):
    H, C, P = _strong_target(table1)
    pk = FocusedFourier(H, table1)(80, 11)
    _, _, P2 = psf_removal(C, H, pk, table1)
    res = sidelobe_check(P, P2, pk, table1, CheckConfig())
    assert res.passed and len(res.sides) == 2
    assert all(s.after < s.before for s in res.sides)


def test_check_rejects_impulsive_sidelobe(table1):
    H, C, P = _strong_target(table1)
    spacing = table1.M_pad / table1.tdd.M_TDD
    m_side = int(round(10.6 + spacing))
    col = doppler_index(np.arange(m_side - 2, m_side + 3), table1)
    m_best = m_side - 2 + int(np.argmax(P[80, col]))
    pk = FocusedFourier(H, table1)(80, m_best)
    _, _, P2 = psf_removal(C, H, pk, table1)
    assert not sidelobe_check(P, P2, pk, table1, CheckConfig()).passed


def test_band_trial_matches_full_removal(table1):
    # the driver's band-only trial gives the same sides as a full removal
    H, C, P = _strong_target(table1)
    state = _State(H, table1, CfarConfig(), CheckConfig(), None)
    spacing = table1.M_pad / table1.tdd.M_TDD
    for m in (11, int(round(10.6 + spacing))):
        pk = state.ff(80, m)
        _, _, P2 = psf_removal(C, H, pk, table1, range_extent=None)
        full = sidelobe_check(P, P2, pk, table1, CheckConfig())
        band, _ = _trial_psf(state, pk, CheckConfig())
        assert band.passed == full.passed
        for a, b in zip(band.sides, full.sides):
            assert (a.side, a.order) == (b.side, b.order)
            assert a.before == pytest.approx(b.before, rel=1e-9)
            assert a.after == pytest.approx(b.after, rel=1e-6, abs=1e-12 * b.before)


def test_check_gamma_threshold(small):
    P_before = np.ones((small.N_pad, small.M_pad))
    pk = PeakEstimate(50, 0, 50.0, 0.0, 0.0, 0.0, 1.0)
    for factor, gamma, expected in [(0.6, 0.5, False), (0.5, 0.5, True), (0.99, 0.0, True), (1.01, 0.0, False)]:
        res = sidelobe_check(P_before, factor * P_before, pk, small, CheckConfig(gamma=gamma))
        assert res.passed is expected


def test_check_selects_strongest_order(small):
    P = np.ones((small.N_pad, small.M_pad))
    spacing = small.M_pad / small.tdd.M_TDD
    pk = PeakEstimate(50, 0, 50.0, 0.0, 0.0, 0.0, 1.0)
    P[45:56, doppler_index(int(round(2 * spacing)), small)] = 100.0
    res = sidelobe_check(P, P, pk, small, CheckConfig())
    orders = {s.side: s.order for s in res.sides}
    assert orders == {-1: 1, 1: 2}


def test_check_shape_mismatch(small):
    pk = PeakEstimate(0, 0, 0.0, 0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        sidelobe_check(np.ones((4, 4)), np.ones((4, 5)), pk, small, CheckConfig())


@pytest.mark.parametrize(
    "kwargs",
    [dict(removal_mode="x"), dict(gamma=1.0), dict(gamma=-0.1), dict(ellipse_range=0.5), dict(sidelobe_orders=0), dict(stencil_range_extent=-1), dict(stencil_range_extent="wide")],
)
def test_check_config_validation(kwargs):
    with pytest.raises(ValueError):
        CheckConfig(**kwargs)


# --- iterative detector-----------------------------------------------------------


def test_zero_csi_gives_empty_report(small):
    rep = run_detection(np.zeros((small.N, small.M), complex), small)
    assert rep.confirmed == [] and rep.iterations == 0


def test_single_noiseless_target(table1):
    t = Target(33.3, 2.2, 1e-3)
    H = synthesize_csi([t], 0.0, table1)
    rep = run_detection(H, table1)
    assert len(rep.confirmed) == 1
    pk = rep.confirmed[0]
    assert resolution_distance(pk.r, pk.v, t.r, t.v, table1) <= 0.5
    assert rep.iterations <= rep.initial_candidates**2
    # the sidelobe candidates of the initial CFAR set all fail the check
    C = complex_periodogram(H, table1)
    P = power_periodogram(C)
    ff = FocusedFourier(H, table1)
    spacing = table1.M_pad / table1.tdd.M_TDD
    sidelobes = [
        c for c in detect_candidates(P, CfarConfig(), table1)
        if abs(c.n - pk.n) <= 1 and min(abs(c.m - pk.m - k * spacing) for k in (-2, -1, 1, 2)) <= 2
    ]
    assert len(sidelobes) >= 2
    for c in sidelobes:
        trial = ff(c.n, c.m)
        _, _, P_after = psf_removal(C, H, trial, table1)
        assert not sidelobe_check(P, P_after, trial, table1, CheckConfig()).passed


def test_failed_trial_leaves_state_untouched(table1):
    H, _, _ = _strong_target(table1)
    state = _State(H, table1, CfarConfig(), CheckConfig(), None)
    before = (state.H.copy(), state.C.copy(), state.P.copy())
    sidelobe = [c for c in state.candidates if abs(c.m - 10.6) > 5][0]
    res, _ = _trial_psf(state, state.ff(sidelobe.n, sidelobe.m), CheckConfig())
    assert not res.passed
    assert np.array_equal(state.H, before[0])
    assert np.array_equal(state.C, before[1])
    assert np.array_equal(state.P, before[2])


def test_three_targets_high_snr():
    from tddisac.config import default_config

    cfg = default_config().with_grid(1584, 1120)
    targets = [Target(20.0, -3.0, 1.0), Target(47.0, 1.2, np.exp(1j)), Target(81.0, 4.1, 0.7)]
    post_snr_db = 25.0
    P_n = 0.7**2 * cfg.N**2 * cfg.M * cfg.tdd.duty_cycle / 10 ** (post_snr_db / 10)
    for seed in range(3):
        H = synthesize_csi(targets, NoiseSpec(P_n), cfg, seed=seed)
        rep = run_detection(H, cfg)
        res = match_detections(targets, rep.confirmed, cfg)
        assert res.tp == 3
        # false confirmations are bounded by the CFAR's own noise false alarms
        assert res.fp <= 1
        conf = rep.confirmed
        for i in range(len(conf)):
            for j in range(i):
                assert resolution_distance(conf[i].r, conf[i].v, conf[j].r, conf[j].v, cfg, wrap=True) > 1


def test_noise_false_alarms_pass_gamma_zero_check(table1):
    """Characterisation: with gamma = 0 most CFAR noise false alarms are confirmed.

    Masked noise carries the same sidelobe correlation as a target, so
    removing a noise spike also lowers its sidelobe power on average. A
    stricter gamma suppresses them.
    """
    H = synthesize_csi([], NoiseSpec(1.0), table1, seed=(11, 0))
    P = power_periodogram(complex_periodogram(H, table1))
    n_cfar = len(detect_candidates(P, CfarConfig(), table1))
    lax = run_detection(H, table1)
    strict = run_detection(H, table1, check=CheckConfig(gamma=0.5))
    assert 0 < len(lax.confirmed) <= n_cfar
    assert len(strict.confirmed) < len(lax.confirmed)


def test_stencil_extent_modes_agree(table1):
    targets = [Target(25.0, 1.0, 1.0), Target(60.0, -2.0, 0.3)]
    H = synthesize_csi(targets, NoiseSpec(1e-9), table1, seed=5)
    reps = [run_detection(H, table1, check=CheckConfig(stencil_range_extent=e)) for e in ("auto", None)]
    a = [(p.r, p.v) for p in reps[0].confirmed]
    b = [(p.r, p.v) for p in reps[1].confirmed]
    assert a == b


# --- cleaned periodogram --------------------------------------------------------


def test_cleaned_empty_is_identity(small, rng):
    H = synthesize_csi([Target(30.0, 1.0, 1.0)], 0.1, small, seed=1)
    P = power_periodogram(complex_periodogram(H, small))
    assert np.array_equal(cleaned_periodogram(H, [], small), P)


def test_cleaned_removes_impulsive_sidelobes(table1):
    t = Target(41.7, -1.3, 1.0)
    H = synthesize_csi([t], 0.0, table1)
    rep = run_detection(H, table1)
    P_clean = cleaned_periodogram(H, rep.confirmed, table1)
    P_full = power_periodogram(complex_periodogram(synthesize_csi([t], 0.0, table1, masked=False), table1))
    P_masked = power_periodogram(complex_periodogram(H, table1))
    n, col = np.unravel_index(np.argmax(P_full), P_full.shape)
    spacing = int(round(table1.M_pad / table1.tdd.M_TDD))
    side = (col + spacing) % table1.M_pad
    # the confirmed peak stays, the impulsive sidelobe falls to the gap-free level
    assert P_clean[n, col] >= 0.99 * P_full[n, col]
    assert P_masked[n, side] / P_masked[n, col] > 0.05
    assert P_clean[n, side] / P_clean[n, col] <= 2 * P_full[n, side] / P_full[n, col] + 1e-6
