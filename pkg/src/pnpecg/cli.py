"""Command-line entry point: ``pnpecg <verb> [options]``.

Exit codes: 0 success, 2 bad arguments or input files, 3 numerical failure,
4 contractivity check failed (``verify``).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import denoiser as dn
from . import experiments, gmm
from .signals import Signal, mse, pad_to_multiple, read_signal, snr_db, write_signal
from .solver import SolverConfig, SolverError

logger = logging.getLogger("pnpecg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_CHECK_FAILED = 4
OUT_ENV = "PNPECG_OUT"


class UsageError(ValueError):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_signal(path, start=0, length=None) -> Signal:
    sig = read_signal(path)
    x = sig.samples
    if length is not None or start:
        stop = x.size if length is None else start + length
        if start < 0 or stop > x.size:
            raise UsageError(f"segment [{start}, {stop}) outside signal of length {x.size}")
        x = x[start:stop]
    return Signal(x, sig.label)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(gamma=args.gamma, freeze_at=args.freeze_at, max_iters=args.max_iters,
                        tol=args.tol, sigma=args.sigma)


def _resolve_m(args, n):
    if args.m is not None:
        return args.m
    if args.cr is not None:
        return max(1, round(n * (1 - args.cr / 100.0)))
    raise UsageError("give --m or --cr")


# ---------------------------------------------------------------------------


def cmd_simulate(args):
    from .datasets import synthetic_record

    rec = synthetic_record(args.duration, fs=args.fs, heart_rate=args.heart_rate, seed=args.seed)
    out = Path(args.output)
    write_signal(out, rec, header=f"synthetic ECG (ECGSYN), fs={args.fs} Hz, seed={args.seed}")
    print(f"wrote {len(rec)} samples to {out}")


def cmd_train(args):
    sig = _load_signal(args.signal, args.start, args.length)
    patches = gmm.extract_training_patches(sig, args.patch_len)
    cfg = gmm.EmConfig(n_components=args.components, max_iters=args.em_iters,
                       loglik_rel_tol=args.em_tol, seed=args.seed)
    model, report = gmm.fit_em(patches, cfg)
    gmm.save_model(model, args.output)
    print(f"patches: {patches.shape[0]} x {patches.shape[1]}")
    print(f"EM iterations: {report.n_iter} (converged={report.converged})")
    print(f"final mean log-likelihood: {report.final_loglik:.6f}")
    if report.reseeded:
        print(f"re-seeded components: {report.reseeded}")
    print(f"wrote model (K={model.n_components}, P={model.patch_len}) to {args.output}")


def cmd_denoise(args):
    model = gmm.load_model(args.model)
    sig = _load_signal(args.signal, args.start, args.length)
    reference = _load_signal(args.reference, args.start, args.length).samples if args.reference else None
    z = sig.samples
    if args.input_snr is not None:
        reference = z
        noise = np.random.default_rng(args.seed).standard_normal(z.size)
        noise *= np.linalg.norm(z) / (np.linalg.norm(noise) * 10 ** (args.input_snr / 20))
        z = z + noise
        sigma = float(np.linalg.norm(noise) / math.sqrt(z.size))
    elif args.sigma is not None:
        sigma = args.sigma
    else:
        raise UsageError("give --sigma, or --input-snr to simulate noise on a clean signal")
    if reference is not None and reference.size != z.size:
        raise UsageError("reference and signal lengths differ")
    if z.size < model.patch_len:
        raise UsageError(f"signal shorter than model patch length {model.patch_len}")
    d = dn.AdaptiveDenoiser.from_model(model, sigma)
    out = dn.denoise_adaptive(d, z)
    outdir = _out_dir(args)
    write_signal(outdir / "denoised.txt", out, header=f"GMM denoised, sigma={sigma!r}")
    if args.input_snr is not None:
        write_signal(outdir / "noisy.txt", z, header=f"simulated noise at {args.input_snr} dB")
    print(f"sigma: {sigma:.6g}")
    if reference is not None:
        print(f"input SNR: {snr_db(reference, z):.4f} dB")
        print(f"output SNR: {snr_db(reference, out):.4f} dB")
        print(f"output MSE: {mse(reference, out):.6g}")
    if args.plot:
        from . import plotting

        plotting.plot_signals(outdir / "denoised.png", reference, out, z, title="GMM denoising")


def cmd_reconstruct(args):
    model = gmm.load_model(args.model)
    sig = _load_signal(args.signal, args.start, args.length)
    x = sig.samples
    n = x.size
    m = _resolve_m(args, n)
    if not 1 <= m <= n:
        raise UsageError(f"need 1 <= M <= N, got M={m}, N={n}")
    phi_seed = args.phi_seed if args.phi_seed is not None else experiments.derive_seed(args.seed, args.trial, 0)
    noise_seed = experiments.derive_seed(args.seed, args.trial, 1)
    snr_in = math.inf if args.noise_snr is None else args.noise_snr
    row, res = experiments.run_trial(x, model, m, snr_in, phi_seed, noise_seed, _solver_config(args),
                                     signal_id=sig.label, trial=args.trial, return_result=True)
    outdir = _out_dir(args)
    write_signal(outdir / "reconstruction.txt", res.x[:n],
                 header=f"PnP-PGD reconstruction, M={m}, phi_seed={phi_seed}")
    res.trace.write_csv(outdir / "trace.csv")
    res.frozen.save(outdir / "frozen.csv")
    (outdir / "contractivity.json").write_text(res.contractivity.to_json() + "\n")
    experiments.write_rows([row], outdir / "result.csv")
    print(f"N={n} (padded {pad_to_multiple(x, model.patch_len)[0].size}) M={m} CR={row.cr:.2f}%")
    print(f"sigma: {res.sigma:.6g}  iterations: {row.iterations}")
    print(f"lambda_max(W): {res.contractivity.lambda_max:.12f}  pass={res.contractivity.passed}")
    if res.trace.contraction_ratio is not None:
        print(f"frozen-phase contraction ratio: {res.trace.contraction_ratio:.12f}")
    print(f"output SNR: {row.output_snr_db:.4f} dB  MSE: {row.mse:.6g}")
    if args.plot:
        from . import plotting

        plotting.plot_residuals(res.trace, outdir / "residuals.png", title=f"M={m}, N={n}")
        plotting.plot_signals(outdir / "reconstruction.png", x, res.x[:n], title=f"M={m}")


def cmd_sweep(args):
    model = gmm.load_model(args.model)
    signals = {}
    for path in args.signal:
        sig = _load_signal(path, args.start, args.length)
        signals[sig.label] = sig.samples
    n = min(len(x) for x in signals.values())
    if args.m:
        m_values = args.m
    elif args.cr:
        m_values = [max(1, round(n * (1 - c / 100.0))) for c in args.cr]
    elif args.m_frac:
        m_values = [max(1, round(n * f)) for f in args.m_frac]
    else:
        raise UsageError("give --m, --cr or --m-frac")
    snrs = list(args.noise_snr or [])
    if args.include_noiseless or not snrs:
        snrs.insert(0, math.inf)
    spec = experiments.ExperimentSpec(signals, m_values, snrs, args.trials, args.seed, _solver_config(args))
    done = [0]

    def progress(i, total):
        if i * 10 // total != done[0]:
            done[0] = i * 10 // total
            logger.info("sweep %d/%d", i, total)

    rows = experiments.run_sweep(spec, model, jobs=args.jobs, progress=progress)
    summary = experiments.summarize(rows)
    outdir = _out_dir(args)
    experiments.write_rows(rows, outdir / "sweep_rows.csv")
    experiments.write_summary(summary, outdir / "sweep_summary.csv")
    print("signal,m,cr,input_snr_db,trials,failed,mean_snr_db,std_snr_db")
    for s in summary:
        print("{signal_id},{m},{cr:.2f},{input_snr_db},{trials},{failed},{mean_snr_db:.4f},{std_snr_db:.4f}".format(**s))
    if args.plot:
        from . import plotting

        plotting.plot_sweep(summary, outdir / "sweep_snr_vs_m.png", x="m")
        plotting.plot_sweep(summary, outdir / "sweep_snr_vs_cr.png", x="cr")
        plotting.plot_trials(rows, outdir / "sweep_trials.png")
    if any(r.error for r in rows):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify(args):
    model = gmm.load_model(args.model)
    p = model.patch_len
    if args.n % p:
        raise UsageError(f"N={args.n} is not a multiple of the patch length {p}")
    d = dn.AdaptiveDenoiser.from_model(model, args.sigma)
    tables = []
    if args.surrogate:
        z = read_signal(args.surrogate).samples
        if z.size != args.n:
            raise UsageError(f"surrogate length {z.size} != N={args.n}")
        tables.append(("surrogate", dn.freeze_coefficients(d, z)))
    if args.random_surrogates:
        rng = np.random.default_rng(args.seed)
        scale = float(np.sqrt(np.mean(np.diagonal(model.covariances, axis1=1, axis2=2))))
        for i in range(args.random_surrogates):
            tables.append((f"random-{i}", dn.freeze_coefficients(d, scale * rng.standard_normal(args.n))))
    if not tables:
        tables.append(("uniform", dn.uniform_coefficients(d, args.n)))
    reports = []
    for name, frozen in tables:
        rep = dn.verify_contractivity(d, frozen, max_iters=args.power_iters)
        reports.append({"name": name, **json.loads(rep.to_json())})
        print(f"{name}: lambda_max={rep.lambda_max!r} margin={rep.residual:.3g} "
              f"block_bound={rep.block_bound!r} pass={rep.passed}" + (f" ({rep.diagnostic})" if rep.diagnostic else ""))
    if args.out:
        (_out_dir(args) / "contractivity.json").write_text(json.dumps(reports, indent=2) + "\n")
    ok = all(r["passed"] for r in reports)
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_eigendump(args):
    model = gmm.load_model(args.model)
    out = Path(args.output)
    gmm.write_eigendump_csv(model, out)
    worst = max(np.max(np.abs(V.T @ V - np.eye(V.shape[1]))) for _, V in gmm.read_eigendump_csv(out))
    print(f"wrote spectra of {model.n_components} components to {out} (orthonormality error {worst:.2e})")
    if args.plot:
        from . import plotting

        plotting.plot_eigenvectors(model, out.with_name(out.stem + "_largest.png"), "largest")
        plotting.plot_eigenvectors(model, out.with_name(out.stem + "_smallest.png"), "smallest")


# ---------------------------------------------------------------------------


def _add_solver_flags(p):
    p.add_argument("--gamma", type=float, default=1.0, help="step size (default 1)")
    p.add_argument("--freeze-at", type=int, default=10, help="iteration T at which coefficients freeze")
    p.add_argument("--max-iters", type=int, default=150)
    p.add_argument("--tol", type=float, default=1e-8, help="stop when |x_k+1 - x_k| < tol (frozen phase)")
    p.add_argument("--sigma", type=float, default=None,
                   help="denoiser noise level (default 0.05 x std of the first gradient step)")


def _add_segment_flags(p):
    p.add_argument("--start", type=int, default=0, help="first sample of the segment to use")
    p.add_argument("--length", type=int, default=None, help="segment length (default: to the end)")


def build_parser():
    ap = argparse.ArgumentParser(prog="pnpecg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="write a synthetic ECG record")
    p.add_argument("--duration", type=int, default=60, help="seconds")
    p.add_argument("--fs", type=int, default=360)
    p.add_argument("--heart-rate", type=int, default=70)
    p.add_argument("--seed", type=int, default=104)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the GMM patch prior")
    p.add_argument("--signal", required=True)
    _add_segment_flags(p)
    p.add_argument("-P", "--patch-len", type=int, default=30)
    p.add_argument("-K", "--components", type=int, default=10)
    p.add_argument("--em-iters", type=int, default=200)
    p.add_argument("--em-tol", type=float, default=1e-7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="output", required=True, help="model JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise a signal with the GMM denoiser")
    p.add_argument("--model", required=True)
    p.add_argument("--signal", required=True)
    _add_segment_flags(p)
    p.add_argument("--reference", help="clean reference for SNR reporting")
    p.add_argument("--sigma", type=float)
    p.add_argument("--input-snr", type=float, help="treat --signal as clean and add noise at this SNR (dB)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("reconstruct", help="simulate CS acquisition and reconstruct")
    p.add_argument("--model", required=True)
    p.add_argument("--signal", required=True)
    _add_segment_flags(p)
    p.add_argument("--m", type=int)
    p.add_argument("--cr", type=float, help="compression ratio in percent (alternative to --m)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--phi-seed", type=int, help="sensing-matrix seed (overrides the derived one)")
    p.add_argument("--noise-snr", type=float, help="measurement SNR in dB (default noiseless)")
    _add_solver_flags(p)
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sweep", help="reconstruction SNR over M / CR / noise levels and trials")
    p.add_argument("--model", required=True)
    p.add_argument("--signal", action="append", required=True)
    _add_segment_flags(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--m", type=int, nargs="+")
    g.add_argument("--cr", type=float, nargs="+")
    g.add_argument("--m-frac", type=float, nargs="+", help="M as fractions of N")
    p.add_argument("--noise-snr", type=float, nargs="+", help="measurement SNR levels (dB)")
    p.add_argument("--include-noiseless", action="store_true")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    _add_solver_flags(p)
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="check contractivity of the frozen denoiser")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--surrogate", help="signal file to freeze coefficients from (default: uniform rows)")
    p.add_argument("--random-surrogates", type=int, default=0)
    p.add_argument("--power-iters", type=int, default=10_000, help="power-iteration budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eigendump", help="write covariance spectra and eigenvectors as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_eigendump)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except (SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, IndexError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
