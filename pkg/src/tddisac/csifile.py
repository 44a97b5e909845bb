"""Binary CSI files: one JSON header line, then row-major little-endian complex128 samples.

The header carries ``N, M, M_DL, M_UL, R, f_c, delta_f, T_0``; the sample
block holds ``N * M`` interleaved (real, imaginary) float64 pairs.
"""

from __future__ import annotations

import json

import numpy as np

from tddisac.config import RadioConfig, SensingConfig, TddPattern

HEADER_KEYS = ("N", "M", "M_DL", "M_UL", "R", "f_c", "delta_f", "T_0")


class CsiFormatError(ValueError):
    pass


def header_for(cfg: SensingConfig) -> dict:
    return {
        "N": cfg.N,
        "M": cfg.M,
        "M_DL": cfg.tdd.M_DL,
        "M_UL": cfg.tdd.M_UL,
        "R": cfg.tdd.R,
        "f_c": cfg.radio.f_c,
        "delta_f": cfg.radio.delta_f,
        "T_0": cfg.radio.T_0,
    }


def write_csi(path, H: np.ndarray, cfg: SensingConfig) -> None:
    if H.shape != (cfg.N, cfg.M):
        raise ValueError(f"CSI shape {H.shape} does not match config ({cfg.N}, {cfg.M})")
    head = json.dumps(header_for(cfg), sort_keys=True).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(head + b"\n")
        fh.write(np.ascontiguousarray(H, dtype="<c16").tobytes())


def read_csi(path, cfg: SensingConfig | None = None) -> tuple[np.ndarray, SensingConfig]:
    """Load a CSI file.

    Without ``cfg`` the configuration is rebuilt from the header (default
    grid); with ``cfg`` the header must agree with it.
    """
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        head = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CsiFormatError(f"{path}: malformed header") from exc
    missing = [k for k in HEADER_KEYS if k not in head]
    if missing:
        raise CsiFormatError(f"{path}: header lacks {missing}")
    N, M = int(head["N"]), int(head["M"])
    tdd = TddPattern(int(head["M_DL"]), int(head["M_UL"]), int(head["R"]))
    if tdd.M != M:
        raise CsiFormatError(f"{path}: M={M} inconsistent with the TDD pattern ({tdd.M})")
    if cfg is None:
        radio = RadioConfig(f_c=float(head["f_c"]), delta_f=float(head["delta_f"]), N=N, T_0=float(head["T_0"]))
        cfg = SensingConfig(radio=radio, tdd=tdd)
    else:
        mine = header_for(cfg)
        for key in HEADER_KEYS:
            if not np.isclose(float(mine[key]), float(head[key]), rtol=1e-12, atol=0):
                raise CsiFormatError(f"{path}: header {key}={head[key]} differs from config ({mine[key]})")
    if len(payload) != N * M * 16:
        raise CsiFormatError(f"{path}: expected {N * M * 16} sample bytes, found {len(payload)}")
    H = np.frombuffer(payload, dtype="<c16").reshape(N, M).astype(complex)
    return H, cfg
