"""Command-line front end: ``tddisac <subcommand> [options]``.

Exit status is 0 on success, 2 for configuration or usage errors and 3 for
file I/O errors. CSV floats are written with 17 significant digits so that
outputs are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from tddisac.cfar import CfarConfig, detect_candidates
from tddisac.config import ConfigError, SensingConfig, default_config, load_config
from tddisac.csifile import CsiFormatError, read_csi, write_csi
from tddisac.harness import (
    DEFAULT_METHODS,
    METHODS,
    KalmanConfig,
    MonteCarloPlan,
    detect,
    metrics_csv,
    noise_for_snr,
    run_montecarlo,
    track_frames,
)
from tddisac.psf import kernel_doppler, kernel_range
from tddisac.scene import NoiseSpec, Target, path_loss_amplitude, sample_scene, synthesize_csi
from tddisac.specest import complex_periodogram, power_periodogram
from tddisac.tddclean import CheckConfig, cleaned_periodogram, run_detection

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _db(P: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(P)


def _write_grid(path, P: np.ndarray, cfg: SensingConfig, max_range: float | None) -> None:
    """dB grid: one row per range bin, one column per signed Doppler bin."""
    n_rows = P.shape[0] if max_range is None else min(P.shape[0], int(np.ceil(max_range / cfg.range_bin)) + 1)
    half = cfg.M_pad // 2
    db = _db(P[:n_rows])
    with open(path, "w", newline="") as fh:
        fh.write("range_bin," + ",".join(str(m) for m in range(-half, half)) + "\n")
        for n in range(n_rows):
            fh.write(str(n) + "," + ",".join("%.17g" % x for x in db[n]) + "\n")


def _parse_window(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        rows, cols = int(a), int(b)
    except ValueError:
        raise UsageError(f"window must look like 64x64, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise UsageError("window sizes must be positive")
    return rows, cols


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _noise_power(args, cfg: SensingConfig) -> float:
    """P_n from ``--noise`` or ``--snr-db``; noiseless when neither is given."""
    if args.noise is not None:
        if args.noise < 0:
            raise UsageError("--noise must be >= 0")
        return args.noise
    if args.snr_db is None:
        return 0.0
    return noise_for_snr(args.snr_db, cfg)


def _peak_rows(peaks, cfg):
    for i, p in enumerate(peaks):
        a = p.csi_alpha(cfg)
        yield (i, p.r, p.v, p.n, p.m, p.power_db, a.real, a.imag)


PEAK_HEADER = ("index", "range_m", "speed_mps", "range_bin", "doppler_bin", "power_db", "alpha_re", "alpha_im")


# ---------------------------------------------------------------------------
# subcommands


def cmd_psf(args, cfg: SensingConfig) -> None:
    rows, cols = _parse_window(args.window)
    n_off = np.arange(rows) - rows // 2
    m_off = np.arange(cols) - cols // 2
    W = np.outer(kernel_range(n_off, cfg), kernel_doppler(m_off, cfg))
    db = _db(np.abs(W) ** 2)
    out = args.out or "psf.csv"
    with open(out, "w", newline="") as fh:
        fh.write("range_offset," + ",".join(str(m) for m in m_off) + "\n")
        for n, line in zip(n_off, db):
            fh.write(str(n) + "," + ",".join("%.17g" % x for x in line) + "\n")
    if args.figure:
        from tddisac.plotting import plot_psf

        plot_psf(db, args.figure)


def _scene_from_args(args, cfg: SensingConfig) -> list[Target]:
    if args.target:
        targets = []
        for spec in args.target:
            vals = _parse_floats(spec)
            if len(vals) not in (2, 3):
                raise UsageError("--target takes r,v or r,v,amplitude")
            r, v = vals[:2]
            amp = vals[2] if len(vals) == 3 else path_loss_amplitude(r, cfg)
            targets.append(Target(r, v, complex(amp)))
        return targets
    if args.targets < 1:
        raise UsageError("--targets must be >= 1")
    return sample_scene(args.targets, (args.seed, 0), cfg)


def cmd_simulate(args, cfg: SensingConfig) -> None:
    targets = _scene_from_args(args, cfg)
    try:
        H = synthesize_csi(targets, NoiseSpec(_noise_power(args, cfg)), cfg, seed=(args.seed, 1))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or "scene.csi"
    write_csi(out, H, cfg)
    if args.truth:
        _write_rows(
            args.truth,
            ("index", "range_m", "speed_mps", "alpha_re", "alpha_im"),
            [(i, t.r, t.v, t.alpha.real, t.alpha.imag) for i, t in enumerate(targets)],
        )


def _load(args, cfg_given: bool, cfg: SensingConfig):
    H, file_cfg = read_csi(args.input, cfg if cfg_given else None)
    return H, file_cfg


def cmd_periodogram(args, cfg: SensingConfig, cfg_given: bool) -> None:
    H, cfg = _load(args, cfg_given, cfg)
    P = power_periodogram(complex_periodogram(H, cfg))
    out = args.out or "periodogram.csv"
    _write_grid(out, P, cfg, args.max_range)
    cands = detect_candidates(P, CfarConfig(pfa=args.pfa), cfg)
    if args.peaks:
        _write_rows(
            args.peaks,
            ("index", "range_bin", "doppler_bin", "range_m", "speed_mps", "power_db"),
            [(i, c.n, c.m, c.r, c.v, float(_db(np.float64(c.power)))) for i, c in enumerate(cands)],
        )
    if args.figure:
        from tddisac.plotting import plot_periodogram

        plot_periodogram(P, cfg, args.figure, confirmed=cands, max_range=args.max_range)


def cmd_detect(args, cfg: SensingConfig, cfg_given: bool) -> None:
    if args.cleaned and not args.method.startswith("tdd-"):
        raise UsageError("--cleaned needs a tdd-* method")
    H, cfg = _load(args, cfg_given, cfg)
    cfar = CfarConfig(pfa=args.pfa)
    rejected = []
    if args.method.startswith("tdd-"):
        check = CheckConfig(removal_mode=args.method.split("-", 1)[1], gamma=args.gamma)
        report = run_detection(H, cfg, cfar, check)
        peaks, rejected = report.confirmed, report.rejected
    else:
        peaks = detect(args.method, H, cfg, cfar)
    out = args.out or "peaks.csv"
    _write_rows(out, PEAK_HEADER, _peak_rows(peaks, cfg))
    if args.audit:
        rows = []
        for p in peaks:
            rows.append(("confirmed", p.r, p.v, p.power_db, "", "", "", ""))
        for rej in rejected:
            sides = {s.side: s for s in rej.check.sides}
            lo, hi = sides.get(-1), sides.get(1)
            rows.append(
                ("rejected", rej.peak.r, rej.peak.v, rej.peak.power_db, lo.before, lo.after, hi.before, hi.after)
            )
        _write_rows(
            args.audit,
            ("status", "range_m", "speed_mps", "power_db", "lower_before", "lower_after", "upper_before", "upper_after"),
            rows,
        )
    if args.cleaned or args.figure:
        P_clean = cleaned_periodogram(H, peaks, cfg) if args.method.startswith("tdd-") else None
        if args.cleaned:
            _write_grid(args.cleaned, P_clean, cfg, args.max_range)
        if args.figure:
            from tddisac.plotting import plot_periodogram

            P = power_periodogram(complex_periodogram(H, cfg))
            plot_periodogram(
                P, cfg, args.figure, confirmed=peaks, rejected=[r.peak for r in rejected],
                max_range=args.max_range, title=f"{args.method} detections",
            )


def cmd_montecarlo(args, cfg: SensingConfig) -> None:
    methods = tuple(m for m in args.methods.split(",") if m)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise UsageError(f"unknown methods {sorted(unknown)}")
    trials = 10_000 if args.full else args.trials
    if trials < 1:
        raise UsageError("--trials must be >= 1")
    plan = MonteCarloPlan(
        snr_db=_parse_floats(args.snr_db),
        target_counts=_parse_ints(args.targets),
        trials=trials,
        methods=methods,
        master_seed=args.seed,
        check=CheckConfig(gamma=args.gamma),
        grid=_parse_window(args.grid) if args.grid else None,
    )
    rows = run_montecarlo(cfg, plan, workers=args.workers)
    Path(args.out or "metrics.csv").write_text(metrics_csv(rows))
    if args.figure:
        from tddisac.plotting import plot_metrics

        plot_metrics(rows, args.figure)


def _read_detections(path) -> list[list[tuple[float, float]]]:
    frames: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"frame", "range_m", "speed_mps"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise UsageError(f"{path}: detection CSV needs columns {sorted(need)}")
        for row in reader:
            frames.setdefault(int(row["frame"]), []).append((float(row["range_m"]), float(row["speed_mps"])))
    last = max(frames) if frames else -1
    return [frames.get(k, []) for k in range(last + 1)]


def _simulate_frames(args, cfg: SensingConfig, kf: KalmanConfig):
    """Detections over a moving-target scene, one CSI frame per step."""
    rng_targets = sample_scene(args.targets, (args.seed, 0), cfg)
    P_n = _noise_power(args, cfg)
    frames, truth = [], []
    for k in range(args.frames):
        now = []
        for t in rng_targets:
            r = t.r + kf.range_rate_sign * t.v * kf.frame_interval * k
            if not 0 < r < cfg.max_range:
                continue
            now.append(Target(r, t.v, complex(path_loss_amplitude(r, cfg) / path_loss_amplitude(t.r, cfg)) * t.alpha))
        H = synthesize_csi(now, NoiseSpec(P_n), cfg, seed=(args.seed, 2, k))
        frames.append(detect(args.method, H, cfg))
        truth.append(now)
    return frames, truth


def cmd_track(args, cfg: SensingConfig) -> None:
    kf = KalmanConfig(frame_interval=args.frame_interval, max_misses=args.max_misses)
    if args.detections:
        frames = _read_detections(args.detections)
    else:
        if args.frames < 1:
            raise UsageError("--frames must be >= 1")
        frames, _ = _simulate_frames(args, cfg, kf)
    history = track_frames(frames, kf)
    _write_rows(
        args.out or "tracks.csv",
        ("frame", "time_s", "track_id", "status", "range_m", "speed_mps", "var_r", "var_v"),
        [(h.frame, h.frame * kf.frame_interval, h.track_id, h.status, h.r, h.v, h.var_r, h.var_v) for h in history],
    )
    if args.figure:
        from tddisac.plotting import plot_tracks

        plot_tracks(history, args.figure, detections=frames, frame_interval=kf.frame_interval)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sensing configuration file (JSON or key = value lines)")
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--out", help="output path")
    common.add_argument("--figure", help="also render a figure to this image file")

    noise = argparse.ArgumentParser(add_help=False)
    noise.add_argument("--snr-db", type=float, help="reference SNR (dB); default is noiseless")
    noise.add_argument("--noise", type=float, help="noise power P_n (overrides --snr-db)")

    parser = argparse.ArgumentParser(prog="tddisac", description="TDD-aware OFDM sensing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("psf", parents=[common], help="2D PSF window as a dB grid")
    p.add_argument("--window", default="64x64", help="ROWSxCOLS bin window centred on the origin")

    p = sub.add_parser("simulate", parents=[common, noise], help="synthesize a TDD-masked CSI file")
    p.add_argument("--targets", type=int, default=1, help="number of random targets")
    p.add_argument("--target", action="append", help="explicit target r,v[,amplitude] (repeatable)")
    p.add_argument("--truth", help="write the true targets to this CSV")

    for name, helptext in (("periodogram", "power periodogram and CFAR candidates"), ("detect", "run a detector")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("input", help="CSI file")
        p.add_argument("--pfa", type=float, default=1e-6)
        p.add_argument("--max-range", type=float, help="crop grid outputs to this range (m)")
        if name == "periodogram":
            p.add_argument("--peaks", help="CFAR candidate CSV")
        else:
            p.add_argument("--method", choices=METHODS, default="tdd-psf")
            p.add_argument("--gamma", type=float, default=0.0)
            p.add_argument("--audit", help="per-candidate audit CSV")
            p.add_argument("--cleaned", help="cleaned periodogram dB grid CSV")

    p = sub.add_parser("montecarlo", parents=[common], help="P_MD / F1 sweep")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--full", action="store_true", help="10000 trials per point")
    p.add_argument("--snr-db", default="-30,-20,-10,0,10", help="comma-separated reference SNRs")
    p.add_argument("--targets", default="1,3", help="comma-separated target counts")
    p.add_argument("--methods", default=",".join(DEFAULT_METHODS))
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--grid", help="DFT grid N'xM' (default: unpadded N x M)")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("track", parents=[common, noise], help="Kalman tracking over detections")
    p.add_argument("--detections", help="CSV with frame,range_m,speed_mps columns")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--targets", type=int, default=1)
    p.add_argument("--method", choices=METHODS, default="tdd-psf")
    p.add_argument("--frame-interval", type=float, default=0.1)
    p.add_argument("--max-misses", type=int, default=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        cfg_given = args.config is not None
        cfg = load_config(args.config) if cfg_given else default_config()
        if args.command == "psf":
            cmd_psf(args, cfg)
        elif args.command == "simulate":
            cmd_simulate(args, cfg)
        elif args.command == "periodogram":
            cmd_periodogram(args, cfg, cfg_given)
        elif args.command == "detect":
            cmd_detect(args, cfg, cfg_given)
        elif args.command == "montecarlo":
            cmd_montecarlo(args, cfg)
        else:
            cmd_track(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"tddisac: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CsiFormatError) as exc:
        print(f"tddisac: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
