"""Command-line front end: gen -> extract -> train-v -> train-va -> eval -> localize, plus cost.

Exit codes: 0 success, 2 usage, 3 validation, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
from dataclasses import asdict
import functools
import io
import os
import sys
import time

from . import __version__
from .cost import format_report, model_cost, table3_comparisons
from .evaluate import PATCH_CUTOFF, best_threshold, evaluate_images, metrics_report, predict_windows, verdict_from_map
from .localize import bounding_box, localized_path, write_overlay
from .model import ModelConfig, build_mmv, build_mmva, config_from_text, config_to_text
from .nn.weights import load_weights, save_weights
from .patches import SplitConfig, build_corpus, load_corpus, load_image, read_manifest, save_corpus
from .synth import SynthConfig, generate_dataset
from .training import Hyper, epoch_log_line, run_trial, select_donor, trial_report

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4
JOBS_ENV = "MISSMARPLE_JOBS"


class ValidationError(ValueError):
    pass


def _header(args, extra=()):
    lines = [f"# missmarple {__version__}", f"# command: {args.command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func"):
            continue
        lines.append(f"# {key}: {value}")
    lines += [f"# {line}" for line in extra]
    return "\n".join(lines) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _need_file(path, field):
    if not path or not os.path.exists(path):
        raise ValidationError(f"{field}: no such file or directory: {path}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- config precedence: flags > config file > defaults --------------------

TRAIN_KEYS = {"epochs": int, "lr": float, "batch_size": int, "patience": int, "n_iterations": int,
              "rho": float, "eps": float}


def _load_config_file(path):
    model, train = ModelConfig(), {}
    if path:
        _need_file(path, "--config")
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if "model" in cp:
            only_model = configparser.ConfigParser()
            only_model["model"] = dict(cp["model"])
            model = config_from_text(_cp_text(only_model))
        if "train" in cp:
            for key, raw in cp["train"].items():
                if key not in TRAIN_KEYS:
                    raise ValidationError(f"--config: unknown [train] key {key!r}")
                train[key] = TRAIN_KEYS[key](raw)
    return model, train


def _cp_text(cp):
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _hyper(args, file_train):
    values = {**file_train}
    for key in TRAIN_KEYS:
        flag = "iterations" if key == "n_iterations" else key
        if getattr(args, flag, None) is not None:
            values[key] = getattr(args, flag)
    try:
        return Hyper(**values)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _run_config_text(model_name, config, hyper=None, iteration=None):
    text = config_to_text(config)
    cp = configparser.ConfigParser()
    cp["run"] = {"model": model_name}
    if iteration is not None:
        cp["run"]["iteration"] = str(iteration)
    if hyper is not None:
        cp["train"] = {k: str(v) for k, v in asdict(hyper).items()}
    return text + _cp_text(cp)


def load_run(run_dir):
    """Rebuild the trained network stored in a train-v/train-va output directory."""
    cfg_path = os.path.join(run_dir, "model.ini")
    w_path = os.path.join(run_dir, "weights.mmwt")
    _need_file(cfg_path, "run directory model.ini")
    _need_file(w_path, "run directory weights.mmwt")
    cp = configparser.ConfigParser()
    cp.read(cfg_path, encoding="utf-8")
    only_model = configparser.ConfigParser()
    only_model["model"] = dict(cp["model"])
    config = config_from_text(_cp_text(only_model))
    run = cp["run"] if "run" in cp else {}
    kind = run.get("model", "MM-V")
    store = load_weights(w_path)
    net = build_mmva(config, store) if kind == "MM-V-A" else build_mmv(config)
    net.load_params(store)
    net.iteration = int(run["iteration"]) if "iteration" in run else None
    return net, kind


# -- model factories (module level so worker processes can pickle them) ---

def _mmv_factory(config, seed):
    return build_mmv(config, seed)


def _mmva_factory(config, donor, seed):
    return build_mmva(config, donor, seed)


# -- subcommands ----------------------------------------------------------

def cmd_gen(args):
    try:
        config = SynthConfig(n_authentic=args.n_authentic, n_spliced=args.n_spliced, size=args.size,
                             regime=args.regime, seed=args.seed,
                             shapes=tuple(args.shapes.split(",")))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    manifest = generate_dataset(config, args.out)
    print(f"wrote {len(manifest.entries)} images and {os.path.join(args.out, 'manifest.tsv')}")


def cmd_extract(args):
    _need_file(args.manifest, "--manifest")
    try:
        manifest = read_manifest(args.manifest, patch_size=args.patch_size,
                                 fake_overlap=args.overlap, stride=args.stride).validate()
        corpus = build_corpus(manifest, SplitConfig(args.test_fraction, args.train_fraction), args.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    save_corpus(corpus, args.out, args.patch_size)
    counts = corpus.counts()
    lines = [f"{split}.{k}={v}" for split in ("train", "val") for k, v in counts[split].items()]
    lines.append(f"test_images={counts['test_images']}")
    _write(os.path.join(args.out, "corpus.txt"), _header(args) + "\n".join(lines) + "\n")
    print("\n".join(lines))


def _train(args, model_name, factory, config, hyper):
    _need_file(args.corpus, "--corpus")
    corpus = load_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    log_lines = []

    def log(run, rec):
        line = epoch_log_line(run, rec, timing=not args.no_timing)
        log_lines.append(line)
        if args.verbose:
            print(line, flush=True)

    summary = run_trial(factory, corpus, hyper, hyper.n_iterations, jobs=args.jobs, log=log)
    best = summary.best_run
    save_weights(best.weights, os.path.join(args.out, "weights.mmwt"))
    _write(os.path.join(args.out, "model.ini"), _run_config_text(model_name, config, hyper, best.iteration))
    header = _header(args)
    _write(os.path.join(args.out, "trial.log"), header + "\n".join(log_lines) + "\n")
    report = trial_report(summary, model_name, args.dataset, timing=not args.no_timing)
    _write(os.path.join(args.out, "summary.txt"), header + report)
    print(report, end="")
    return summary


def cmd_train_v(args):
    config, file_train = _load_config_file(args.config)
    hyper = _hyper(args, file_train)
    summary = _train(args, "MM-V", functools.partial(_mmv_factory, config), config, hyper)
    select_donor(summary, "V_conv2d_3", os.path.join(args.out, "donor.mmwt"))


def cmd_train_va(args):
    config, file_train = _load_config_file(args.config)
    hyper = _hyper(args, file_train)
    _need_file(args.donor, "--donor")
    donor = load_weights(args.donor)
    if "V_conv2d_3/kernel" not in donor:
        raise ValidationError(f"--donor: {args.donor} has no V_conv2d_3 kernel")
    try:
        build_mmva(config, donor)
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"--donor: {exc}") from None
    _train(args, "MM-V-A", functools.partial(_mmva_factory, config, donor), config, hyper)


def cmd_eval(args):
    net, kind = load_run(args.run)
    _need_file(args.corpus, "--corpus")
    corpus = load_corpus(args.corpus)
    test = set(corpus.test_images)
    fit_ids = [i for i in range(len(corpus.sources)) if i not in test]
    threshold = args.threshold
    if args.grid:
        fractions = [verdict_from_map(predict_windows(net, load_image(corpus.sources[i]), args.stride), 0.0).fraction
                     for i in fit_ids]
        threshold = best_threshold(fractions, [corpus.labels[i] for i in fit_ids], args.grid)
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"--threshold must be in [0, 1], got {threshold}")
    ids = sorted(test)
    images = [load_image(corpus.sources[i]) for i in ids]
    labels = [corpus.labels[i] for i in ids]
    start = time.perf_counter()
    report, verdicts = evaluate_images(net, images, labels, threshold, args.stride, ids)
    seconds = time.perf_counter() - start
    iteration = args.iteration if args.iteration is not None else (net.iteration or "-")
    text = metrics_report([(kind, args.dataset, iteration, report, seconds)], timing=not args.no_timing)
    per_image = [f"image {v.image_id}: fraction={v.fraction:.4f} fake={v.n_fake}/{v.n_patches} verdict={v.label}"
                 for v in verdicts]
    out = _header(args) + text + "\n" + "\n".join(per_image) + "\n"
    if args.out:
        _write(args.out, out)
    print(text, end="")


def cmd_localize(args):
    net, _ = load_run(args.run)
    lines = []
    for path in args.image:
        _need_file(path, "--image")
        pmap = predict_windows(net, load_image(path), args.stride)
        verdict = verdict_from_map(pmap, args.threshold)
        box = bounding_box(pmap, args.cutoff) if verdict.spliced else None
        target = None
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            target = os.path.join(args.out_dir, os.path.basename(localized_path(path)))
        written = write_overlay(path, box, target)
        coords = "none" if box is None else ",".join(map(str, box.as_tuple()))
        lines.append(f"{os.path.basename(path)}\tverdict={verdict.label}\tfraction={verdict.fraction:.4f}"
                     f"\tbox={coords}\toutput={os.path.basename(written)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, _header(args) + text)
    print(text, end="")


def cmd_cost(args):
    reports, comparisons = [], []
    if args.preset == "table3":
        comparisons = table3_comparisons()
    else:
        config, _ = _load_config_file(args.config)
        mmv = build_mmv(config)
        donor = {"V_conv2d_3/kernel": mmv.params["V_conv2d_3/kernel"]}
        reports = [model_cost(mmv), model_cost(build_mmva(config, donor))]
    text = format_report(reports, comparisons)
    if args.out:
        _write(args.out, _header(args) + text)
    print(text, end="")


# -- parser ---------------------------------------------------------------

def _train_flags(p):
    p.add_argument("--corpus", required=True, help="directory written by `extract`")
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--config", help="INI file with [model] and/or [train] sections")
    p.add_argument("--iterations", type=int, help="independent seeded restarts (default 100)")
    p.add_argument("--epochs", type=int, help="max epochs per iteration (default 30)")
    p.add_argument("--lr", type=float, help="RMSprop learning rate (default 1e-4)")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int, help="early-stopping patience on val loss (default 5)")
    p.add_argument("--jobs", type=int, default=int(os.environ.get(JOBS_ENV, "1")),
                   help=f"parallel iterations (default ${JOBS_ENV} or 1)")
    p.add_argument("--dataset", default="synth", help="dataset label for reports")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock times from outputs")
    p.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="missmarple", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"missmarple {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen", help="generate a synthetic splice dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--regime", choices=("coarse", "fine"), default="coarse")
    p.add_argument("--n-authentic", type=int, default=10)
    p.add_argument("--n-spliced", type=int, default=10)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--shapes", default="rect,ellipse,polygon")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="build a balanced patch corpus from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", type=float, default=0.40, help="min mask fraction for fake patches")
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--test-fraction", type=float, default=0.20)
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-v", help="train MM-V and export the V_conv2d_3 donor")
    _train_flags(p)
    p.set_defaults(func=cmd_train_v)

    p = sub.add_parser("train-va", help="train MM-V-A with a frozen donor branch")
    _train_flags(p)
    p.add_argument("--donor", required=True, help="donor weights file from train-v")
    p.set_defaults(func=cmd_train_va)

    p = sub.add_parser("eval", help="image-level evaluation on held-out test images")
    p.add_argument("--run", required=True, help="run directory from train-v/train-va")
    p.add_argument("--corpus", required=True)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--grid", type=_floats, help="comma-separated thresholds searched on non-test images")
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--dataset", default="synth")
    p.add_argument("--iteration", type=int)
    p.add_argument("--out", help="report path")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("localize", help="draw a bounding box on images judged spliced")
    p.add_argument("--run", required=True)
    p.add_argument("--image", required=True, action="append")
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--cutoff", type=float, default=PATCH_CUTOFF)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--out-dir")
    p.add_argument("--out", help="report path")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("cost", help="convolution multiplication counts")
    p.add_argument("--preset", choices=("table3", "default"), default="default")
    p.add_argument("--config", help="model config file (ignored for --preset table3)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"missmarple {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"missmarple {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())
