"""Figures for the CLI report paths, rendered off-screen to image files."""

from __future__ import annotations

from collections import defaultdict

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from tddisac.config import SensingConfig


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120)


def _to_db(P: np.ndarray, floor_db: float = -300.0) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(10 * np.log10(P), floor_db)


def plot_psf(window_db: np.ndarray, path, title: str = "2D PSF |W_RD|^2") -> None:
    """Heat map of a PSF window given in dB (rows = range offsets)."""
    n_half, m_half = window_db.shape[0] // 2, window_db.shape[1] // 2
    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot()
    im = ax.imshow(
        window_db,
        origin="lower",
        aspect="auto",
        extent=(-m_half - 0.5, window_db.shape[1] - m_half - 0.5, -n_half - 0.5, window_db.shape[0] - n_half - 0.5),
        vmin=window_db.max() - 80,
        cmap="viridis",
    )
    ax.set_xlabel("Doppler bin offset")
    ax.set_ylabel("range bin offset")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    _save(fig, path)


def plot_periodogram(
    P: np.ndarray,
    cfg: SensingConfig,
    path,
    confirmed=(),
    rejected=(),
    max_range: float | None = None,
    dynamic_range_db: float = 60.0,
    title: str = "range-speed periodogram",
) -> None:
    """Power periodogram over range and speed with detection markers.

    ``confirmed`` and ``rejected`` hold objects with ``r`` and ``v``
    attributes; confirmed peaks are drawn as green circles, rejected
    candidates as red crosses.
    """
    n_rows = P.shape[0] if max_range is None else min(P.shape[0], int(np.ceil(max_range / cfg.range_bin)) + 1)
    img = _to_db(P[:n_rows])
    top = float(img.max())
    half = cfg.M_pad // 2
    extent = ((-half - 0.5) * cfg.speed_bin, (half - 0.5) * cfg.speed_bin, -0.5 * cfg.range_bin, (n_rows - 0.5) * cfg.range_bin)
    fig = Figure(figsize=(7, 5))
    ax = fig.add_subplot()
    im = ax.imshow(img, origin="lower", aspect="auto", extent=extent, vmin=top - dynamic_range_db, vmax=top, cmap="magma")
    if confirmed:
        ax.scatter([p.v for p in confirmed], [p.r for p in confirmed], s=80, facecolors="none", edgecolors="lime", label="confirmed")
    if rejected:
        ax.scatter([p.v for p in rejected], [p.r for p in rejected], s=30, marker="x", color="red", label="rejected")
    if confirmed or rejected:
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("speed (m/s)")
    ax.set_ylabel("range (m)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    _save(fig, path)


def plot_metrics(rows, path) -> None:
    """P_MD and F1 against the reference SNR, one line per (method, target count)."""
    groups = defaultdict(list)
    for row in rows:
        groups[(row.method, row.targets)].append(row)
    fig = Figure(figsize=(10, 4))
    ax_md, ax_f1 = fig.add_subplot(1, 2, 1), fig.add_subplot(1, 2, 2)
    for (method, count), grp in sorted(groups.items()):
        grp.sort(key=lambda r: r.snr_ref_db)
        x = [r.snr_ref_db for r in grp]
        style = "-o" if count == 1 else "--s"
        label = f"{method}, |P|={count}"
        ax_md.errorbar(x, [r.p_md for r in grp], yerr=[[r.p_md - r.p_md_lo for r in grp], [r.p_md_hi - r.p_md for r in grp]], fmt=style, capsize=3, label=label)
        ax_f1.errorbar(x, [r.f1 for r in grp], yerr=[[r.f1 - r.f1_lo for r in grp], [r.f1_hi - r.f1 for r in grp]], fmt=style, capsize=3, label=label)
    ax_md.set_ylabel("P_MD")
    ax_f1.set_ylabel("F1")
    for ax in (ax_md, ax_f1):
        ax.set_xlabel("reference SNR (dB)")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
    ax_f1.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_tracks(records, path, detections=None, frame_interval: float = 1.0) -> None:
    """Track ranges over time; optional raw detections as grey dots.

    ``detections`` is the per-frame list fed to the tracker.
    """
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    if detections is not None:
        for k, dets in enumerate(detections):
            rs = [d.r if hasattr(d, "r") else d[0] for d in dets]
            ax.scatter([k * frame_interval] * len(rs), rs, s=6, color="0.6")
    by_track = defaultdict(list)
    for rec in records:
        by_track[rec.track_id].append(rec)
    for tid, recs in sorted(by_track.items()):
        ax.plot([r.frame * frame_interval for r in recs], [r.r for r in recs], "-", lw=1.2, label=f"track {tid}" if len(by_track) <= 10 else None)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("range (m)")
    if 0 < len(by_track) <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
