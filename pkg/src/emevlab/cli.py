"""Command-line entry point: generate | train | eval | compare | flops."""

import argparse
import csv
import io
import logging
import os
import sys

from . import __version__
from .bundle import ModelBundle
from .channel import PROFILE_NAMES, get_profile
from .channel_id import CodecRegistry, RoutedCodec
from .dataset import make_dataset, mix_datasets
from .emevnet import EmevConfig, complexity_report, complexity_totals
from .errors import (ConfigurationError, DimensionError, FormatError, NumericalError,
                     OutOfModelError, OverheadMismatchError, UsageError)
from .formats import read_config, read_dataset, write_dataset
from .metrics import (IdentityCodec, compare_columns, compare_rows, evaluate, manifest_line,
                      write_report)
from .pipeline import resolve_l_eps, train_baseline, train_classifier, train_emev
from .training import TrainConfig, read_curve

log = logging.getLogger("emevlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

KIND_LABELS = {"emev": "N_sp", "baseline": "N_csi"}


def _load_config(path):
    return read_config(path) if path else {}


def _model_config(args, mapping):
    overrides = {}
    for key in ("n_rb", "n_t", "n_r"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return EmevConfig.from_mapping(mapping, **overrides)


def _manifest(args, seeds=()):
    skip = {"func", "command"}
    items = [(k, v) for k, v in sorted(vars(args).items()) if k not in skip and v is not None]
    flat = [(k, ",".join(map(str, v)) if isinstance(v, list) else v) for k, v in items]
    return manifest_line(args.command, flat, seeds)


# generate ---------------------------------------------------------------------

def cmd_generate(args):
    if args.mix:
        parts = [read_dataset(p) for p in args.mix]
        ds = mix_datasets(parts, args.seed)
    else:
        if not args.profile:
            raise UsageError("generate needs --profile or --mix")
        mapping = _load_config(args.config)
        cfg = _model_config(args, mapping)
        profile = get_profile(args.profile, n_rb=cfg.n_rb, n_t=cfg.n_t, n_r=cfg.n_r)
        ds = make_dataset(profile, args.count, args.seed)
    digest = write_dataset(args.out, ds)
    print(f"{len(ds)} samples written to {args.out} sha256={digest}")
    return EXIT_OK


# train ------------------------------------------------------------------------

def _curve_path(out):
    stem = out[:-5] if out.endswith(".ckpt") else out
    return stem + ".curve.csv"


def cmd_train(args):
    ds = read_dataset(args.data)
    mapping = _load_config(args.config)
    hyper = TrainConfig.from_mapping(mapping, max_epochs=args.epochs, lr=args.lr,
                                     batch_size=args.batch_size)
    resume = ModelBundle.load(args.resume) if args.resume else None
    history = None
    if resume is not None:
        if resume.kind != args.model:
            raise UsageError(f"--resume checkpoint holds a {resume.kind} model, not {args.model}")
        curve = _curve_path(args.resume)
        history = read_curve(curve) if os.path.exists(curve) else None
    curve_path = _curve_path(args.out)
    if args.model == "classifier":
        bundle = train_classifier(ds, args.seed, hyper, curve_path, resume, history)
    else:
        cfg = resolve_l_eps(_model_config(args, mapping), args.beta_h, args.l_eps)
        trainer = train_emev if args.model == "emev" else train_baseline
        bundle = trainer(ds, cfg, args.seed, hyper, curve_path, resume, history)
    bundle.save(args.out)
    state = bundle.state
    print(f"trained {args.model} for {state.epoch} epochs; best val {state.best_val:.6g} "
          f"at epoch {state.best_epoch}; checkpoint {args.out}; curve {curve_path}")
    return EXIT_OK


# eval -------------------------------------------------------------------------

def _load_codec(spec, dims):
    if spec == "identity":
        return IdentityCodec(*dims), "identity"
    bundle = ModelBundle.load(spec)
    if bundle.kind == "classifier":
        raise UsageError(f"{spec} is a classifier; use --registry to evaluate the switch path")
    label = "N_mix" if bundle.metadata.get("profile") == "mix" and bundle.kind == "emev" \
        else KIND_LABELS[bundle.kind]
    return bundle.model, label


def _load_registry(path):
    mapping = read_config(path)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    if "classifier" not in mapping or "fallback" not in mapping:
        raise ConfigurationError(f"{path}: registry needs 'classifier' and 'fallback' entries")
    classifier = ModelBundle.load(resolve(mapping["classifier"])).model
    fallback = ModelBundle.load(resolve(mapping["fallback"])).model
    entries = {k: ModelBundle.load(resolve(v)).model for k, v in mapping.items()
               if k in PROFILE_NAMES}
    return RoutedCodec(classifier, CodecRegistry(entries, fallback))


def _indices(ds, split):
    return None if split == "test" else (list(range(len(ds))) if split == "all"
                                         else ds.splits()[split])


def cmd_eval(args):
    datasets = [read_dataset(p) for p in args.data]
    rows = []
    specs = list(args.ckpt or [])
    for spec in specs:
        for ds in datasets:
            codec, label = _load_codec(spec, ds.dims)
            rows.append(evaluate(codec, ds, _indices(ds, args.split), model_kind=label))
    if args.registry:
        routed = _load_registry(args.registry)
        for ds in datasets:
            rows.append(evaluate(routed, ds, _indices(ds, args.split), model_kind="routed"))
    if not rows:
        raise UsageError("eval needs at least one --ckpt or --registry")
    write_report(args.report, rows, _manifest(args, sorted({d.seed for d in datasets})))
    print(f"{len(rows)} rows written to {args.report}")
    return EXIT_OK


# compare ----------------------------------------------------------------------

def cmd_compare(args):
    datasets = [read_dataset(p) for p in args.data]
    specialized = [ModelBundle.load(p) for p in args.specialized]
    mixed = [ModelBundle.load(p) for p in args.mixed or []]
    baseline = [ModelBundle.load(p) for p in args.baseline or []]
    lengths = {b.config.l_eps for b in specialized + mixed + baseline}
    sp_lengths = {b.config.l_eps for b in specialized}
    for group, name in ((mixed, "mixed"), (baseline, "baseline")):
        missing = sp_lengths - {b.config.l_eps for b in group}
        if group and missing:
            raise OverheadMismatchError(
                f"{name} models lack payload lengths {sorted(missing)}; all lengths seen {sorted(lengths)}")
        extra = {b.config.l_eps for b in group} - sp_lengths
        if extra:
            raise OverheadMismatchError(
                f"{name} models at payload lengths {sorted(extra)} have no specialized counterpart")

    by_profile = {ds.profile: ds for ds in datasets}
    sp_rows, mix_rows, base_rows = [], [], []
    for b in specialized:
        profile = b.metadata.get("profile")
        if profile not in by_profile:
            raise UsageError(f"no --data file for profile {profile!r} of a specialized model")
        ds = by_profile[profile]
        sp_rows.append(evaluate(b.model, ds, model_kind="N_sp"))
        for b_mix in mixed:
            if b_mix.config.l_eps == b.config.l_eps:
                mix_rows.append(evaluate(b_mix.model, ds, model_kind="N_mix"))
        for b_csi in baseline:
            if b_csi.config.l_eps == b.config.l_eps:
                base_rows.append(evaluate(b_csi.model, ds, model_kind="N_csi"))
    records = compare_rows(sp_rows, mix_rows, base_rows)
    write_report(args.report, records, _manifest(args, sorted({d.seed for d in datasets})),
                 columns=compare_columns())
    print(f"{len(records)} comparison rows written to {args.report}")
    return EXIT_OK


# flops ------------------------------------------------------------------------

def cmd_flops(args):
    cfg = _model_config(args, _load_config(args.config))
    layers = None
    if args.layers is not None:
        layers = [x.strip() for x in args.layers.split(",") if x.strip()]
    rows = complexity_report(cfg, layers)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "params", "flops"])
    writer.writerows(rows)
    params, flops = complexity_totals(rows)
    writer.writerow(["total", params, flops])
    text = buf.getvalue()
    width = max([len(r.layer) for r in rows] + [5])
    print(f"{'layer':<{width}}  {'params':>14}  {'flops':>16}")
    for r in rows:
        print(f"{r.layer:<{width}}  {r.params:>14,}  {r.flops:>16,}")
    print(f"{'total':<{width}}  {params:>14,}  {flops:>16,}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    return EXIT_OK


# wiring -------------------------------------------------------------------------

def _add_dims(p):
    p.add_argument("--n-rb", dest="n_rb", type=int, help="resource blocks (overrides config)")
    p.add_argument("--n-t", dest="n_t", type=int, help="transmit antennas (overrides config)")
    p.add_argument("--n-r", dest="n_r", type=int, help="receive antennas (overrides config)")


def build_parser():
    parser = argparse.ArgumentParser(prog="emevlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"emevlab {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a channel dataset file")
    p.add_argument("--profile", choices=PROFILE_NAMES)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", nargs="+", metavar="DATASET", help="concatenate existing dataset files")
    p.add_argument("--config", help="key = value file with dims")
    p.add_argument("--out", required=True)
    _add_dims(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("emev", "baseline", "classifier"), default="emev")
    size = p.add_mutually_exclusive_group()
    size.add_argument("--beta-h", dest="beta_h", type=float)
    size.add_argument("--l-eps", dest="l_eps", type=int)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, help="maximum epochs (overrides config)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--out", required=True)
    _add_dims(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on datasets")
    p.add_argument("--ckpt", nargs="+", help="checkpoint paths or 'identity'")
    p.add_argument("--registry", help="key = value file: classifier, fallback, <profile> = ckpt")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--split", choices=("test", "val", "train", "all"), default="test")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="specialized vs mixed vs baseline at equal payload")
    p.add_argument("--specialized", nargs="+", required=True)
    p.add_argument("--mixed", nargs="+")
    p.add_argument("--baseline", nargs="+")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("flops", help="per-layer parameter and FLOP table")
    p.add_argument("--config")
    p.add_argument("--layers", help="comma-separated layer names; empty string for none")
    p.add_argument("--out", help="CSV output path")
    _add_dims(p)
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, OutOfModelError) as exc:
        print(f"emevlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DimensionError, OverheadMismatchError) as exc:
        print(f"emevlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"emevlab: file error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"emevlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
