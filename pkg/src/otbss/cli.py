"""Command-line front end: ``otbss train | separate | eval | figure1``.

Exit codes: 0 on success, 1 for numerical failures, 2 for I/O, format and
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings

import numpy as np

from . import archive
from .audio import Signal, read_wav, stft, write_wav
from .config import MODES, Config, load_config
from .errors import InputError, InvalidSpec, IoError, LengthMismatch, OTBSSError
from .separation import (build_model, conservation_residual, reconstruct, separate,
                         train_source_model)
from .spectral import CostSpec, NoteSpec, figure1_curves

SDR_CAP_DB = 200.0


def _common(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--rank", type=int)
    parser.add_argument("--gamma", help="OT regularization as a multiple of mean(C) "
                        "(figure1: comma-separated list)")
    parser.add_argument("--rho1", type=float)
    parser.add_argument("--rho2", type=float)
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--power", type=float)
    parser.add_argument("--window", type=int)
    parser.add_argument("--hop", type=int)
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otbss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn one dictionary per source")
    p.add_argument("sources", nargs="+", help="one WAV file per source")
    p.add_argument("--labels", help="comma-separated source names (default: file stems)")
    p.add_argument("--log", help="training log CSV (default: <out>.train.csv)")
    p.add_argument("--export-csv", metavar="DIR", help="also write every matrix as CSV")
    _common(p)

    p = sub.add_parser("separate", help="separate a mixture with a trained model")
    p.add_argument("model")
    p.add_argument("mixture")
    _common(p)

    p = sub.add_parser("eval", help="SDR/SNR of estimates against references")
    p.add_argument("--ref", nargs="+", required=True)
    p.add_argument("--est", nargs="+", required=True)
    _common(p)

    p = sub.add_parser("figure1", help="loss curves between shifted synthetic notes")
    p.add_argument("--fundamental", type=float, default=950.0)
    p.add_argument("--sigma-max", type=float, default=1000.0)
    p.add_argument("--sigma-step", type=float, default=100.0)
    _common(p)
    return parser


def _config(args, base: Config = Config()) -> Config:
    config = load_config(args.config, base) if args.config else base
    gamma = None
    if args.gamma is not None and args.command != "figure1":
        try:
            gamma = float(args.gamma)
        except ValueError:
            raise InvalidSpec(f"--gamma: not a number: {args.gamma!r}") from None
    return config.override(rank=args.rank, gamma=gamma, rho1=args.rho1, rho2=args.rho2,
                           lam=args.lam, power=args.power, window=args.window, hop=args.hop,
                           mode=args.mode, threads=args.threads, seed=args.seed)


def _write_csv(path, header, rows):
    try:
        fh = open(path, "w", newline="") if path else sys.stdout
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        finally:
            if path:
                fh.close()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _read(path, config: Config) -> Signal:
    signal = read_wav(path)
    if signal.sample_rate != config.sample_rate:
        raise InputError(f"{path}: sample rate {signal.sample_rate} Hz, expected "
                         f"{config.sample_rate} Hz (resample before use)")
    return signal


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _config(args)
    if not args.out:
        raise InputError("train needs --out")
    labels = (args.labels.split(",") if args.labels
              else [os.path.splitext(os.path.basename(p))[0] for p in args.sources])
    if len(labels) != len(args.sources) or len(set(labels)) != len(labels):
        raise InputError("labels must be distinct, one per source")
    signals = [_read(p, config) for p in args.sources]
    models = [train_source_model(s, config.rank, config, label) for s, label in zip(signals, labels)]
    grid = models[0].dictionary.frequency_grid
    model = build_model([m.dictionary for m in models], config, grid)
    archive.save(args.out, model, config)
    rows = [(label, i, repr(float(v)))
            for label, m in zip(labels, models) for i, v in enumerate(m.objective_trace)]
    _write_csv(args.log or args.out + ".train.csv", ("source", "iteration", "objective"), rows)
    if args.export_csv:
        archive.export_csv(args.out, args.export_csv)
    return 0


def cmd_separate(args) -> int:
    model, stored = archive.load(args.model)
    # the archive's settings are the base; a config file and flags override them
    config = _config(args, stored)
    if not args.out:
        raise InputError("separate needs --out (output directory)")
    mixture = _read(args.mixture, config)
    spec = stft(mixture, config.window_size, config.hop)
    result = separate(spec, model, config)
    signals = reconstruct(result, spec)
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise IoError(f"{args.out}: {exc}") from exc
    for label, sig in zip(model.labels, signals):
        write_wav(sig, os.path.join(args.out, f"{label}.wav"))
    residual = conservation_residual(result.test_magnitudes, spec)
    mass = spec.magnitude.sum(axis=0)
    _write_csv(os.path.join(args.out, "conservation.csv"), ("frame", "mixture_l1", "residual_l1"),
               [(i, repr(float(m)), repr(float(r))) for i, (m, r) in enumerate(zip(mass, residual))])
    return 0


def sdr_db(reference, estimate) -> float:
    """``10 log10(||ref||^2 / ||ref - est||^2)``, capped at 200 dB."""
    num = float(np.dot(reference, reference))
    err = reference - estimate
    den = float(np.dot(err, err))
    if den == 0:
        return SDR_CAP_DB
    if num == 0:
        return -SDR_CAP_DB
    return min(SDR_CAP_DB, 10 * np.log10(num / den))


def snr_db(reference, estimate) -> float:
    """Scale-invariant signal-to-noise ratio: SDR after projecting the estimate's gain."""
    energy = float(np.dot(reference, reference))
    if energy == 0:
        return -SDR_CAP_DB
    target = reference * (np.dot(estimate, reference) / energy)
    return sdr_db(target, estimate)


def cmd_eval(args) -> int:
    config = _config(args)
    if len(args.ref) != len(args.est):
        raise InputError("--ref and --est need the same number of files")
    rows = []
    for ref_path, est_path in zip(args.ref, args.est):
        ref, est = read_wav(ref_path), read_wav(est_path)
        if ref.sample_rate != est.sample_rate:
            raise InputError(f"{ref_path} and {est_path} have different sample rates")
        if abs(len(ref) - len(est)) > config.window_size:
            raise LengthMismatch(f"{ref_path} ({len(ref)} samples) and {est_path} "
                                 f"({len(est)} samples) differ by more than one window")
        n = min(len(ref), len(est))
        r, e = ref.samples[:n], est.samples[:n]
        rows.append((ref_path, est_path, f"{sdr_db(r, e):.4f}", f"{snr_db(r, e):.4f}",
                     "not computed", "not computed"))
    _write_csv(args.out, ("reference", "estimate", "sdr_db", "snr_db", "pemoq", "peass"), rows)
    return 0


def cmd_figure1(args) -> int:
    config = _config(args)
    gammas = [0.005, 0.02]
    if args.gamma:
        try:
            gammas = [float(g) for g in args.gamma.split(",")]
        except ValueError:
            raise InvalidSpec(f"--gamma: expected comma-separated numbers, got {args.gamma!r}") from None
    if not all(g > 0 for g in gammas):
        raise InvalidSpec("gamma values must be positive")
    if not args.sigma_step > 0 or args.sigma_max < 0:
        raise InvalidSpec("sigma range must be non-negative with a positive step")
    sigmas = np.arange(0.0, args.sigma_max + 0.5 * args.sigma_step, args.sigma_step)
    curves = figure1_curves(sigmas, gammas, NoteSpec(args.fundamental),
                            CostSpec(config.lam, config.power))
    header = list(curves)
    rows = [[repr(float(curves[h][i])) for h in header] for i in range(sigmas.size)]
    _write_csv(args.out, header, rows)
    return 0


COMMANDS = {"train": cmd_train, "separate": cmd_separate, "eval": cmd_eval, "figure1": cmd_figure1}


def _summarize(caught):
    """One stderr line per warning kind instead of one per solver call."""
    seen = {}
    for w in caught:
        name = w.category.__name__
        count, _ = seen.get(name, (0, None))
        seen[name] = (count + 1, str(w.message))
    for name, (count, last) in seen.items():
        more = f" ({count} times; last: {last})" if count > 1 else f": {last}"
        print(f"otbss: warning: {name}{more}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads or 1
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                return COMMANDS[args.command](args)
            finally:
                _summarize(caught)
    except OTBSSError as exc:
        print(f"otbss: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"otbss: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
