"""Command-line front end.

Every stage reads and writes container files so the pipeline can be run
piecewise::

    hrtf-dunet synth --out work/subjects
    hrtf-dunet degrade --input work/subjects/test-000.hrir --out work/noisy --snr-db 5
    hrtf-dunet denoise --input work/noisy/test-000.hrir --methods kalman --out work/den
    hrtf-dunet evaluate --reference work/subjects/test-000.hrir --input work/den/kalman/test-000.hrir
    hrtf-dunet run --config experiment.json --out results

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, denoise, experiment, report, sh, upsample
from .errors import ConfigError, DataError, NumericalAbort
from .noise import NoiseSpec, degrade_set
from .nn import models, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _csv_list(text, kind=str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a list of {kind.__name__}")


def _int_list(text):
    return _csv_list(text, int)


def _add_common(p):
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--methods", type=_csv_list, help="comma-separated method names")
    p.add_argument("--sparsity", type=_int_list, help="comma-separated sparsity levels")
    p.add_argument("--snr-db", type=float, help="noise SNR in dB")
    p.add_argument("--noise", choices=("white", "pink"), help="noise colour")


def build_parser():
    parser = argparse.ArgumentParser(prog="hrtf-dunet", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic train/test subjects")
    _add_common(p)

    p = sub.add_parser("degrade", help="add measurement noise to HRIR containers")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)

    p = sub.add_parser("fit-sh", help="SH coefficients of the dB magnitude field")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--order", type=int, help="SH order (default: highest the grid supports)")
    p.add_argument("--lambda", dest="lam", type=float, help="ridge weight")

    p = sub.add_parser("denoise", help="classical or D-UNet denoising")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--checkpoint", help="D-UNet checkpoint (method dunet)")

    p = sub.add_parser("upsample", help="subsample then interpolate back to the full grid")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)

    p = sub.add_parser("train", help="train the configured networks and write checkpoints")
    _add_common(p)

    p = sub.add_parser("evaluate", help="metrics of processed sets against references")
    _add_common(p)
    p.add_argument("--reference", nargs="+", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--label", default="input", help="method name written to the CSV")

    p = sub.add_parser("report", help="summary CSV and box plots from a metrics CSV")
    _add_common(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("run", help="full experiment")
    _add_common(p)
    return parser


def _config(args):
    overrides = {
        "seed": args.seed, "out": args.out, "methods": args.methods,
        "sparsity": args.sparsity, "snr_db": args.snr_db, "noise": args.noise,
    }
    if args.config:
        return experiment.load_config(args.config, **overrides)
    return experiment.config_from_dict({}, **overrides)


def _out(args, cfg=None):
    out = Path(args.out or (cfg.out if cfg is not None else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stem(path):
    return Path(path).name.split(".")[0]


def cmd_synth(args):
    cfg = _config(args)
    out = _out(args, cfg)
    grid = sh.fibonacci_grid(cfg.grid_size)
    scfg = cfg.synth_config()
    for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i in range(n):
            h = data.synth_subject(scfg.replace(seed=experiment.subject_seed(cfg, split, i)), grid)
            data.save_container(h, out / f"{split}-{i:03d}.hrir")
    return EXIT_OK


def cmd_degrade(args):
    cfg = _config(args)
    out = _out(args)
    for i, path in enumerate(args.input):
        h = data.load_container(path)
        spec = NoiseSpec(cfg.noise, cfg.snr_db if cfg.snr_db is not None else 5.0,
                         cfg.num_sources, cfg.seed * 1_000_003 + i)
        data.save_container(degrade_set(h, spec), out / Path(path).name)
    return EXIT_OK


def cmd_fit_sh(args):
    out = _out(args)
    for path in args.input:
        hrtf = data.hrir_to_hrtf(data.load_container(path))
        order = args.order if args.order is not None else sh.max_order_for_points(hrtf.num_positions)
        coeffs = sh.sht_fit(hrtf.db_field(), hrtf.positions, order, args.lam)
        sh.save_coeffs(coeffs, out / f"{_stem(path)}.shc", hrtf.frequencies)
    return EXIT_OK


def cmd_denoise(args):
    cfg = _config(args)
    out = _out(args)
    methods = args.methods or list(denoise.METHODS)
    for method in methods:
        if method not in denoise.METHODS + ("dunet",):
            raise ConfigError(f"unknown denoiser {method!r}")
        if method == "dunet" and not args.checkpoint:
            raise ConfigError("method dunet needs --checkpoint")
    for method in methods:
        (out / method).mkdir(parents=True, exist_ok=True)
        model = _load_dunet(args.checkpoint, cfg) if method == "dunet" else None
        for path in args.input:
            h = data.load_container(path)
            if model is None:
                res = denoise.denoise_set(h, method)
            else:
                hrtf = data.hrir_to_hrtf(h)
                x = experiment.channels(hrtf, cfg.high_order)[None]
                db = sh.sht_eval(sh.ShCoeffTensor.from_channels(model.forward(x)[0]), hrtf.positions)
                res = data.hrtf_to_hrir(hrtf.with_db_field(db))
            data.save_container(res, out / method / Path(path).name)
    return EXIT_OK


def _load_dunet(path, cfg):
    state = train.load_state(path)
    model = models.CoeffDenoiser(cfg.dunet_config(cfg.high_order), np.random.default_rng(0))
    train.load_into(model, state, "dunet")
    return model.eval()


def cmd_upsample(args):
    cfg = _config(args)
    out = _out(args)
    methods = args.methods or ["sh", "barycentric"]
    for m in methods:
        if m not in ("sh", "barycentric"):
            raise ConfigError(f"upsample supports sh and barycentric, not {m!r}")
    levels = args.sparsity or list(cfg.sparsity)
    for path in args.input:
        hrtf = data.hrir_to_hrtf(data.load_container(path))
        for s in levels:
            if not 1 <= s <= hrtf.num_positions:
                raise ConfigError(f"sparsity {s} outside [1, {hrtf.num_positions}]")
            sparse = hrtf.subset(data.subsample_indices(hrtf.positions, s, cfg.seed))
            for m in methods:
                if m == "barycentric":
                    res = upsample.barycentric_upsample(sparse, hrtf.positions)
                else:
                    res = upsample.sh_upsample(sparse, hrtf.positions)
                d = out / f"{m}-s{s}"
                d.mkdir(parents=True, exist_ok=True)
                data.save_container(data.hrtf_to_hrir(res), d / Path(path).name)
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    neural = [m for m in cfg.methods if m in ("dunet", "aegan", "hrtf-dunet")]
    if not neural:
        raise ConfigError("no trainable method selected (dunet, aegan, hrtf-dunet)")
    cfg = experiment.config_from_dict({**cfg.to_dict(), "methods": neural})
    experiment.run_experiment(cfg, _out(args, cfg))
    return EXIT_OK


def cmd_evaluate(args):
    if len(args.reference) != len(args.input):
        raise ConfigError("--reference and --input need the same number of files")
    cfg = _config(args)
    rows = []
    for ref_path, path in zip(args.reference, args.input):
        ref = data.hrir_to_hrtf(data.load_container(ref_path))
        proc = data.hrir_to_hrtf(data.load_container(path))
        order = min(cfg.high_order, sh.max_order_for_points(ref.num_positions))
        ref_high = experiment.channels(ref, order)
        for name, v in experiment.evaluate(ref, proc, ref_high, order, cfg.metrics).items():
            rows.append((_stem(ref_path), args.label, ref.num_positions, name, v))
    out = _out(args)
    report.write_metrics(rows, out / "metrics.csv")
    return EXIT_OK


def cmd_report(args):
    report.report(args.input, _out(args))
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    experiment.run_experiment(cfg, _out(args, cfg))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "degrade": cmd_degrade, "fit-sh": cmd_fit_sh, "denoise": cmd_denoise,
    "upsample": cmd_upsample, "train": cmd_train, "evaluate": cmd_evaluate,
    "report": cmd_report, "run": cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
