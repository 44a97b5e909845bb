"""Point-target scenes and TDD-masked CSI synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tddisac.config import SensingConfig


@dataclass(frozen=True)
class Target:
    r: float
    """Range in metres."""
    v: float
    """Radial speed in m/s; negative means receding."""
    alpha: complex
    """Complex path coefficient (linear amplitude)."""


@dataclass(frozen=True)
class NoiseSpec:
    P_n: float = 0.0
    """Noise power over the whole bandwidth (linear)."""

    def __post_init__(self):
        if self.P_n < 0:
            raise ValueError("noise power must be non-negative")

    def variance(self, cfg: SensingConfig) -> float:
        return self.P_n / cfg.N


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; ``seed`` may be an int, a tuple of ints, or a SeedSequence.

    Tuples are split into ``(entropy, *spawn_key)`` so that per-trial streams
    derived from ``(master_seed, trial_index)`` do not depend on scheduling.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    elif isinstance(seed, (tuple, list)):
        ss = np.random.SeedSequence(int(seed[0]), spawn_key=tuple(int(s) for s in seed[1:]))
    else:
        ss = np.random.SeedSequence(None if seed is None else int(seed))
    return np.random.Generator(np.random.Philox(ss))


def steering_range(r, cfg: SensingConfig) -> np.ndarray:
    """Subcarrier phase vector ``exp(-j 4 pi k delta_f r / c)``, k = 0..N-1."""
    k = np.arange(cfg.N)
    return np.exp(-4j * np.pi * k * cfg.radio.delta_f * float(r) / cfg.c)


def steering_doppler(v, cfg: SensingConfig) -> np.ndarray:
    """Symbol phase vector ``exp(+j 4 pi l T_0 f_c v / c)``, l = 0..M-1."""
    l = np.arange(cfg.M)
    return np.exp(4j * np.pi * l * cfg.radio.T_0 * cfg.radio.f_c * float(v) / cfg.c)


def path_loss_amplitude(r, cfg: SensingConfig) -> float:
    """Two-way free-space field attenuation ``(lambda / (4 pi r))**2``."""
    return (cfg.radio.wavelength / (4.0 * np.pi * r)) ** 2


def _validate(target: Target, cfg: SensingConfig):
    if not 0 < target.r < cfg.max_range:
        raise ValueError(f"target range {target.r} m outside (0, {cfg.max_range:.1f}) m")
    if abs(target.v) >= cfg.max_speed:
        raise ValueError(
            f"target speed {target.v} m/s outside unambiguous region "
            f"+-{cfg.max_speed:.1f} m/s"
        )


def rank_one(alpha: complex, r: float, v: float, cfg: SensingConfig, masked: bool = True):
    """``alpha * a(r) b(v)^T``, optionally with the UL columns zeroed."""
    b = steering_doppler(v, cfg)
    if masked:
        b = b * cfg.mask
    return alpha * np.outer(steering_range(r, cfg), b)


def synthesize_csi(
    targets, noise: NoiseSpec | float, cfg: SensingConfig, seed=None, masked: bool = True
) -> np.ndarray:
    """TDD-masked CSI ``(sum_p alpha_p a(r_p) b(v_p)^T + Z) diag(d)``.

    ``Z`` is circular complex Gaussian with per-element variance ``P_n / N``.
    With ``masked=False`` the full (gap-free) channel is returned, which is
    only useful as a reference.
    """
    if not isinstance(noise, NoiseSpec):
        noise = NoiseSpec(float(noise))
    H = np.zeros((cfg.N, cfg.M), dtype=complex)
    for t in targets:
        _validate(t, cfg)
        H += rank_one(t.alpha, t.r, t.v, cfg, masked=False)
    sigma2 = noise.variance(cfg)
    if sigma2 > 0:
        rng = make_rng(seed)
        z = rng.standard_normal((cfg.N, 2 * cfg.M)).view(complex)
        H += np.sqrt(sigma2 / 2.0) * z
    if masked:
        H *= cfg.mask
    return H


def sample_rice(rng: np.random.Generator, nu: float = 2.0, sigma: float = 1.0, size=None):
    x1 = rng.standard_normal(size)
    x2 = rng.standard_normal(size)
    return np.hypot(nu + sigma * x1, sigma * x2)


def sample_scene(
    count: int,
    seed,
    cfg: SensingConfig,
    r_range: tuple[float, float] = (10.0, 100.0),
    v_range: tuple[float, float] = (-5.0, 5.0),
) -> list[Target]:
    """Random targets: uniform range/speed, Rician(2, 1) magnitude with path loss, uniform phase."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed)
    targets = []
    for _ in range(count):
        r = rng.uniform(*r_range)
        v = rng.uniform(*v_range)
        mag = path_loss_amplitude(r, cfg) * sample_rice(rng)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        targets.append(Target(r=float(r), v=float(v), alpha=complex(mag * np.exp(1j * phase))))
    return targets
