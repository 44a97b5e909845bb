"""Radio, TDD and DFT-grid parameters plus the bin <-> physical mappings.

Defaults reproduce the 27.4 GHz / 120 kHz / 1584-subcarrier numerology with
eight 104 DL + 36 UL symbol patterns per frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Raised for invalid or unreadable sensing configurations."""


def next_pow2(x: int) -> int:
    return 1 << max(0, math.ceil(math.log2(max(1, x))))


@dataclass(frozen=True)
class RadioConfig:
    """RF parameters of the OFDM sensing frame.

    ``T_0`` defaults to ``(1 + cp_fraction) / delta_f``. With
    ``cp_fraction = 1/14`` one 140-symbol pattern lasts exactly 1.25 ms.
    """

    f_c: float = 27.4e9
    delta_f: float = 120e3
    N: int = 1584
    T_0: float | None = None
    cp_fraction: float = 0.0
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.f_c <= 0 or self.delta_f <= 0:
            raise ConfigError("f_c and delta_f must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if self.cp_fraction < 0:
            raise ConfigError("cp_fraction must be >= 0")
        if self.T_0 is None:
            object.__setattr__(self, "T_0", (1.0 + self.cp_fraction) / self.delta_f)
        # tolerate float round-off when T_0 is read back from a text file
        if self.T_0 < (1.0 - 1e-12) / self.delta_f:
            raise ConfigError("T_0 must be at least 1/delta_f")
        object.__setattr__(self, "N", int(self.N))

    @property
    def bandwidth(self) -> float:
        return self.N * self.delta_f

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c


@dataclass(frozen=True)
class TddPattern:
    """DL/UL symbol pattern repeated ``R`` times per frame."""

    M_DL: int = 104
    M_UL: int = 36
    R: int = 8

    def __post_init__(self):
        for name in ("M_DL", "M_UL", "R"):
            value = getattr(self, name)
            if int(value) != value:
                raise ConfigError(f"{name} must be an integer, got {value}")
            object.__setattr__(self, name, int(value))
        if self.M_DL < 1 or self.M_UL < 0 or self.R < 1:
            raise ConfigError("need M_DL >= 1, M_UL >= 0, R >= 1")

    @property
    def M_TDD(self) -> int:
        return self.M_DL + self.M_UL

    @property
    def M(self) -> int:
        return self.R * self.M_TDD

    @property
    def duty_cycle(self) -> float:
        return self.M_DL / self.M_TDD


@dataclass(frozen=True)
class GridConfig:
    """Zero-padded DFT lengths: ``N_pad`` over subcarriers, ``M_pad`` over symbols."""

    N_pad: int
    M_pad: int

    def __post_init__(self):
        for name in ("N_pad", "M_pad"):
            value = getattr(self, name)
            if int(value) != value or value < 2 or value % 2:
                raise ConfigError(f"{name} must be an even integer >= 2, got {value}")
            object.__setattr__(self, name, int(value))

    @classmethod
    def default_for(cls, N: int, M: int) -> GridConfig:
        return cls(N_pad=next_pow2(2 * N), M_pad=next_pow2(M))


def make_mask(tdd: TddPattern) -> np.ndarray:
    """Length-M DL indicator: element m is 1 iff ``m mod M_TDD < M_DL``."""
    m = np.arange(tdd.M)
    return ((m % tdd.M_TDD) < tdd.M_DL).astype(float)


@dataclass(frozen=True)
class SensingConfig:
    radio: RadioConfig = field(default_factory=RadioConfig)
    tdd: TddPattern = field(default_factory=TddPattern)
    grid: GridConfig | None = None

    def __post_init__(self):
        if self.grid is None:
            object.__setattr__(self, "grid", GridConfig.default_for(self.radio.N, self.tdd.M))
        if self.grid.N_pad < self.radio.N or self.grid.M_pad < self.tdd.M:
            raise ConfigError(
                f"grid {self.grid.N_pad}x{self.grid.M_pad} smaller than "
                f"frame {self.radio.N}x{self.tdd.M}"
            )

    # short aliases used throughout the numerics
    @property
    def N(self) -> int:
        return self.radio.N

    @property
    def M(self) -> int:
        return self.tdd.M

    @property
    def N_pad(self) -> int:
        return self.grid.N_pad

    @property
    def M_pad(self) -> int:
        return self.grid.M_pad

    @property
    def c(self) -> float:
        return self.radio.c

    @cached_property
    def mask(self) -> np.ndarray:
        d = make_mask(self.tdd)
        d.setflags(write=False)
        return d

    @property
    def T_TDD(self) -> float:
        return self.tdd.M_TDD * self.radio.T_0

    @property
    def range_resolution(self) -> float:
        return self.c / (2.0 * self.radio.bandwidth)

    @property
    def speed_resolution(self) -> float:
        return self.c / (2.0 * self.radio.f_c * self.M * self.radio.T_0)

    @property
    def sidelobe_doppler_spacing(self) -> float:
        """Doppler spacing of the impulsive sidelobes, ``1/T_TDD`` in Hz."""
        return 1.0 / self.T_TDD

    @property
    def sidelobe_speed_spacing(self) -> float:
        return self.sidelobe_doppler_spacing * self.c / (2.0 * self.radio.f_c)

    @property
    def sidelobe_bin_spacing(self) -> float:
        """Impulsive-sidelobe spacing in (fractional) Doppler bins."""
        return self.M_pad / self.tdd.M_TDD

    @property
    def range_bin(self) -> float:
        """Metres per range bin of the padded grid."""
        return self.c / (2.0 * self.radio.delta_f * self.N_pad)

    @property
    def speed_bin(self) -> float:
        """m/s per Doppler bin of the padded grid."""
        return self.c / (2.0 * self.radio.f_c * self.radio.T_0 * self.M_pad)

    @property
    def max_speed(self) -> float:
        """Unambiguous speed ``c / (4 f_c T_0)``."""
        return self.c / (4.0 * self.radio.f_c * self.radio.T_0)

    @property
    def max_range(self) -> float:
        return self.N_pad * self.range_bin

    def with_grid(self, N_pad: int, M_pad: int) -> SensingConfig:
        return SensingConfig(self.radio, self.tdd, GridConfig(N_pad, M_pad))

    def with_tdd(self, M_DL: int, M_UL: int, R: int) -> SensingConfig:
        """Same radio and grid lengths, different TDD pattern.

        The grid is re-derived if the new frame no longer fits.
        """
        tdd = TddPattern(M_DL, M_UL, R)
        grid = self.grid if self.grid.M_pad >= tdd.M else None
        return SensingConfig(self.radio, tdd, grid)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self.radio).items()}
        out.update(asdict(self.tdd))
        out.update(asdict(self.grid))
        return out


def default_config() -> SensingConfig:
    return SensingConfig()


def resolutions(cfg: SensingConfig) -> tuple[float, float]:
    """Range and speed resolution ``(c/2B, c/(2 f_c M T_0))``."""
    return cfg.range_resolution, cfg.speed_resolution


def _check_bins(n, m, cfg: SensingConfig):
    n = np.asarray(n, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(~np.isfinite(n)) or np.any(~np.isfinite(m)):
        raise ValueError("bin indices must be finite")
    if np.any((n < 0) | (n >= cfg.N_pad)):
        raise ValueError(f"range bin outside [0, {cfg.N_pad})")
    half = cfg.M_pad / 2
    if np.any((m < -half) | (m >= half)):
        raise ValueError(f"Doppler bin outside [{-half}, {half})")
    return n, m


def bin_to_physical(n, m, cfg: SensingConfig):
    """Map (possibly fractional) range bin ``n`` and signed Doppler bin ``m``
    to range in metres and radial speed in m/s."""
    n, m = _check_bins(n, m, cfg)
    r = n * cfg.range_bin
    v = m * cfg.speed_bin
    if r.ndim == 0:
        return float(r), float(v)
    return r, v


def physical_to_bin(r, v, cfg: SensingConfig):
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    n = r / cfg.range_bin
    m = v / cfg.speed_bin
    _check_bins(n, m, cfg)
    if n.ndim == 0:
        return float(n), float(m)
    return n, m


def wrap_bins(n, m, cfg: SensingConfig):
    """Fold fractional bins into the grid domain (range mod N', Doppler into [-M'/2, M'/2))."""
    n = np.mod(n, cfg.N_pad)
    half = cfg.M_pad / 2
    m = np.mod(np.asarray(m) + half, cfg.M_pad) - half
    if np.ndim(n) == 0:
        return float(n), float(m)
    return n, m


# config file I/O ---------------------------------------------------------

_RADIO_KEYS = ("f_c", "delta_f", "N", "T_0", "cp_fraction", "c")
_TDD_KEYS = ("M_DL", "M_UL", "R")
_GRID_KEYS = ("N_pad", "M_pad")


def config_from_dict(values: dict) -> SensingConfig:
    unknown = set(values) - set(_RADIO_KEYS + _TDD_KEYS + _GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        radio = RadioConfig(**{k: values[k] for k in _RADIO_KEYS if k in values})
        tdd = TddPattern(**{k: values[k] for k in _TDD_KEYS if k in values})
        grid = None
        if any(k in values for k in _GRID_KEYS):
            default = GridConfig.default_for(radio.N, tdd.M)
            grid = GridConfig(
                values.get("N_pad", default.N_pad), values.get("M_pad", default.M_pad)
            )
        return SensingConfig(radio, tdd, grid)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"cannot parse value {text!r}") from None


def parse_config_text(text: str) -> SensingConfig:
    """Parse a JSON object or ``key = value`` lines (``#`` starts a comment)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return config_from_dict(json.loads(stripped))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _parse_value(value)
    return config_from_dict(values)


def load_config(path) -> SensingConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: SensingConfig) -> str:
    lines = [f"{k} = {json.dumps(v)}" for k, v in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"
