"""Command-line front end.

Exit codes: 0 success, 2 validation or rank-condition errors, 3 I/O errors,
4 numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .ctf import CtfConfig, RankConditionError, default_filter_len, estimate_ctf, ls_residual, save_bank, write_bank_csv
from .dataset import load_item_audio, read_manifest, synthesize_dataset
from .decay import edc_time, fourier_deconvolve, rt60_from_edc
from .evaluate import VARIANTS, evaluate_variant, summarize
from .grad import gradient_check, random_instance
from .rir_spec import rir_estimate, write_rir_csv
from .room import align_direct_path
from .stft import stft
from .wavio import read_wav, write_wav

log = logging.getLogger("rirphys")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class NumericalFailure(RuntimeError):
    pass


class InputError(OSError):
    pass


def _config(args, **extra) -> RunConfig:
    over = dict(seed=args.seed, jobs=args.jobs)
    over.update(extra)
    return load_config(args.config, **over)


def _read(path, expected_rate=None):
    try:
        return read_wav(path, expected_rate)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def cmd_synth(args) -> int:
    cfg = _config(args, regime=args.regime, excitation=args.excitation, dry_samples=args.dry_samples)
    dry_files = None
    if args.dry_dir:
        dry_files = sorted(str(p) for p in Path(args.dry_dir).glob("*.wav"))
        if not dry_files:
            raise InputError(f"no WAV files in {args.dry_dir}")
    if args.count < 0:
        raise ValueError("count must be nonnegative")
    manifest = synthesize_dataset(
        args.out, args.count, cfg.regime, cfg.seed, cfg.dry_samples, cfg.excitation,
        jobs=cfg.jobs, dry_files=dry_files,
    )
    print(f"wrote {args.count} items to {manifest}")
    return EXIT_OK


def _estimate_inputs(args, cfg: RunConfig):
    if args.manifest:
        rows = {r["item_id"]: r for r in read_manifest(args.manifest)}
        if args.item not in rows:
            raise ValueError(f"item {args.item!r} not in manifest")
        try:
            dry, rir, wet = load_item_audio(rows[args.item], Path(args.manifest).parent)
        except (OSError, ValueError) as exc:
            raise InputError(str(exc)) from exc
        return dry, wet, rir.duration
    if not (args.dry and args.wet):
        raise ValueError("give --dry and --wet, or --manifest and --item")
    dry = _read(args.dry)
    wet = _read(args.wet, dry.sample_rate)
    return dry, wet, cfg.rir_seconds


def cmd_estimate(args) -> int:
    cfg = _config(args, crossbands=args.crossbands, filter_len=args.filter_len,
                  rir_seconds=args.rir_seconds, ridge=args.ridge,
                  residual_threshold=args.max_residual)
    dry, wet, rir_seconds = _estimate_inputs(args, cfg)
    X, Y = stft(dry, cfg.stft), stft(wet, cfg.stft)
    T_h = cfg.filter_len or default_filter_len(rir_seconds, cfg.stft, dry.sample_rate)
    ctf_cfg = CtfConfig(cfg.crossbands, T_h, cfg.ridge)
    bank = estimate_ctf(X, Y, ctf_cfg)
    res = ls_residual(X, Y, bank)
    y_norm = np.linalg.norm(Y.bins)
    rel = float(np.linalg.norm(res) / y_norm) if y_norm > 0 else float(np.linalg.norm(res))

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_bank(bank, out / "bank.bin")
        write_bank_csv(bank, out / "bank.csv")
        write_rir_csv(rir_estimate(bank), out / "rir_estimate.csv")
        with open(out / "residual.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f", "residual", "deficient"])
            for f, (r, d) in enumerate(zip(res, bank.deficient)):
                w.writerow([f, repr(float(r)), int(d)])
    except OSError as exc:
        raise InputError(str(exc)) from exc
    print(f"F'={ctf_cfg.crossbands} T_h={T_h} T_y={Y.n_frames} bands={bank.n_bins} "
          f"deficient={int(bank.deficient.sum())}")
    print(f"relative residual: {rel:.3e}")
    print(f"max band residual: {float(res.max()):.3e}")
    if cfg.residual_threshold is not None and rel > cfg.residual_threshold:
        raise NumericalFailure(f"relative residual {rel:.3e} exceeds {cfg.residual_threshold:.3e}")
    return EXIT_OK


def _eval_row(task):
    row, root, variant, est_dir, cfg = task
    try:
        dry, rir, wet = load_item_audio(row, root)
        x_hat = None
        if est_dir:
            x_hat = read_wav(Path(est_dir) / f"{row['item_id']}.wav", dry.sample_rate)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    value = evaluate_variant(variant, dry, rir, wet, x_hat, cfg.stft, cfg.filter_len, cfg.ridge,
                             cfg.threshold_db, cfg.eps_floor)
    return row["item_id"], value


def cmd_eval(args) -> int:
    cfg = _config(args)
    try:
        rows = read_manifest(args.manifest)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    root = Path(args.manifest).parent
    tasks = [(r, root, args.variant, args.estimates, cfg) for r in rows]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_eval_row, tasks))
    else:
        results = [_eval_row(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "metric", "value"])
        for item_id, value in results:
            w.writerow([item_id, args.variant, repr(float(value))])
    mean, std, n = summarize(v for _, v in results)
    if args.summary:
        with open(args.summary, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "mean", "std", "n"])
            w.writerow([args.variant, f"{mean:.6f}", f"{std:.6f}", n])
    print(f"{args.variant}: {mean:.3f} ± {std:.3f} over {n} items")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    T_y = args.frames + args.filter_len - 1
    CtfConfig(args.crossbands, args.filter_len).check_rank(T_y)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    worst = 0.0
    for trial in range(args.trials):
        X_hat, Y, target, ctf_cfg = random_instance(
            rng, args.bins, args.frames, args.filter_len, args.crossbands)
        err = gradient_check(X_hat, Y, target, ctf_cfg, n_coords=args.coords, rng=rng)
        worst = max(worst, err)
        print(f"trial {trial}: max relative error {err:.3e}")
    print(f"max relative FD error over {args.trials} trials: {worst:.3e}")
    if worst > args.tol:
        raise NumericalFailure(f"gradient check failed: {worst:.3e} > {args.tol:.1e}")
    return EXIT_OK


def cmd_rt60(args) -> int:
    h = _read(args.rir)
    if not args.no_align:
        h = align_direct_path(h)
    print(f"{rt60_from_edc(edc_time(h)):.4f}")
    return EXIT_OK


def cmd_deconvolve(args) -> int:
    cfg = _config(args, eps_floor=args.eps_floor)
    dry = _read(args.dry)
    wet = _read(args.wet, dry.sample_rate)
    h = fourier_deconvolve(wet, dry, cfg.eps_floor)
    try:
        write_wav(args.out, h)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    print(f"wrote {h.samples.size} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rirphys", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file (flags take precedence)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize a (dry, RIR, wet) dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--regime", choices=["matched", "mismatched"])
    s.add_argument("--excitation", choices=["white", "pink", "chirps"])
    s.add_argument("--dry-samples", type=int)
    s.add_argument("--dry-dir", help="directory of dry WAV files to use instead of excitations")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("estimate", parents=[common], help="estimate a CTF bank and RIR spectrogram")
    s.add_argument("--dry")
    s.add_argument("--wet")
    s.add_argument("--manifest")
    s.add_argument("--item")
    s.add_argument("--out", required=True)
    s.add_argument("--crossbands", type=int)
    s.add_argument("--filter-len", type=int)
    s.add_argument("--rir-seconds", type=float)
    s.add_argument("--ridge", type=float)
    s.add_argument("--max-residual", type=float, help="fail (exit 4) above this relative residual")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("eval", parents=[common], help="score a manifest under one variant")
    s.add_argument("--manifest", required=True)
    s.add_argument("--variant", required=True, choices=VARIANTS)
    s.add_argument("--estimates", help="directory of <item_id>.wav dry estimates (default: oracle)")
    s.add_argument("--out", required=True, help="per-item metrics CSV")
    s.add_argument("--summary", help="summary CSV (mean, std)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check")
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--bins", type=int, default=9)
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--filter-len", type=int, default=3)
    s.add_argument("--crossbands", type=int, default=0)
    s.add_argument("--coords", type=int, default=40)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("rt60", parents=[common], help="RT60 of an impulse response WAV")
    s.add_argument("rir")
    s.add_argument("--no-align", action="store_true", help="skip direct-path alignment")
    s.set_defaults(func=cmd_rt60)

    s = sub.add_parser("deconvolve", parents=[common], help="Fourier-domain RIR deconvolution")
    s.add_argument("--wet", required=True)
    s.add_argument("--dry", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eps-floor", type=float)
    s.set_defaults(func=cmd_deconvolve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (NumericalFailure, FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except (RankConditionError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
