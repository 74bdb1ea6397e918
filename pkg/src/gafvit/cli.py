"""Command-line interface.

Subcommands: synth, cluster, transform, train, eval, classify, gradcheck.
Exit codes: 0 success, 1 usage, 2 data problem, 3 numeric failure.

Only the standard library is imported at module level; numpy (and the rest
of the package) loads lazily inside handlers so that --threads can pin the
BLAS thread count before numpy initializes.
"""
from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this project reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _UsageError(ValueError):
    """Bad flag value detected after argparse parsing."""


def _set_threads(argv):
    """Honor --threads before anything imports numpy."""
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None and threads.isdigit() and int(threads) > 0:
        for var in _THREAD_VARS:
            os.environ[var] = threads


def _resolve_seed(value):
    if value is not None:
        return value
    env = os.environ.get("GAFVIT_SEED", "")
    return int(env) if env.strip() else 0


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def _write_echo(args, out_dir, command):
    """Resolved configuration, one key=value per line, reusable via --config."""
    lines = [f"command={command}"]
    for dest in sorted(vars(args)):
        if dest in ("command", "func", "config"):
            continue
        lines.append(f"{dest}={_format_value(getattr(args, dest))}")
    path = os.path.join(out_dir, "run_config.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _read_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ValueError(f"cannot read config file: {exc}") from exc
    return values


def _apply_config_defaults(parser, subparser, file_values):
    """Convert key=value strings through each option's own type and install
    them as defaults, so explicit flags still win."""
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in file_values.items():
        if key == "command":
            continue
        action = actions.get(key)
        if action is None:
            parser.error(f"unknown configuration key {key!r}")
        if raw == "":
            continue
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except ValueError:
                parser.error(f"bad value for configuration key {key!r}: {raw!r}")
        else:
            defaults[key] = raw
    subparser.set_defaults(**defaults)


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _parse_counts(text):
    parts = [p for p in text.split(",") if p.strip() != ""]
    try:
        counts = tuple(int(p) for p in parts)
    except ValueError:
        raise _UsageError(f"counts must be integers, got {text!r}")
    if any(c < 0 for c in counts):
        raise _UsageError(f"counts must be non-negative, got {text!r}")
    return counts


def _parse_split(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise _UsageError(f"split needs three comma-separated fractions, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise _UsageError(f"split fractions must be numbers, got {text!r}")


def _parse_grid(text):
    import numpy as np
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise _UsageError(f"grid must be start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise _UsageError(f"bad grid {text!r}")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


# -- sample loading shared by several commands -----------------------------------

def _load_samples(data_path):
    from .data import clean_and_split, load_trips
    from .errors import EmptyInput

    samples = clean_and_split(load_trips(data_path))
    if not samples:
        raise EmptyInput(f"{data_path}: no usable trips "
                         "(need 198 or 199 steps and some positive speed)")
    return samples


def _prepare_inputs(model, samples, degenerate):
    """Encode samples, honoring the degenerate-feature policy."""
    import warnings

    import numpy as np

    from .errors import DegenerateSeries

    kept, arrays = [], []
    for s in samples:
        try:
            arrays.append(model.prepare_inputs([s.matrix])[0])
            kept.append(s)
        except DegenerateSeries as exc:
            if degenerate == "error":
                raise
            warnings.warn(f"skipping {s.trip_id}: {exc}")
    if not kept:
        from .errors import EmptyInput
        raise EmptyInput("every sample was dropped as degenerate")
    return kept, np.stack(arrays, axis=0)


def _vit_config_from_args(args):
    from .vit import VitConfig
    return VitConfig(image_h=args.image_size, image_w=args.image_size,
                     channels=args.channels, patch_size=args.patch_size,
                     patch_mode=args.patch_mode, embed_dim=args.embed_dim,
                     depth=args.depth, heads=args.heads, mlp_dim=args.mlp_dim,
                     num_classes=args.num_classes)


# -- handlers ----------------------------------------------------------------------

def _cmd_synth(args):
    from .data import synth_generate, write_labels_csv, write_trips_csv

    counts = _parse_counts(args.counts)
    seed = _resolve_seed(args.seed)
    out = _out_dir(args)
    trips, samples = synth_generate(counts=counts, seed=seed)
    write_trips_csv(os.path.join(out, "trips.csv"), trips)
    write_labels_csv(os.path.join(out, "labels.csv"), samples)
    args.seed = seed
    _write_echo(args, out, "synth")
    print(f"wrote {len(trips)} trips ({len(samples)} windows) to {out}")
    return EXIT_OK


def _cmd_cluster(args):
    from . import clustering

    samples = _load_samples(args.data)
    out = _out_dir(args)
    thetas = _parse_grid(args.grid) if args.grid else None
    result = clustering.label_dataset(
        [s.matrix for s in samples], thetas=thetas, threshold=args.theta,
        literal_form=args.eq12_literal)

    with open(os.path.join(out, "labels.csv"), "w") as fh:
        fh.write("trip_id,label\n")
        for s, label in zip(samples, result.labels):
            fh.write(f"{s.trip_id},{label}\n")
    with open(os.path.join(out, "theta_curve.csv"), "w") as fh:
        fh.write("theta,clusters\n")
        for theta, count in zip(result.thetas, result.counts):
            fh.write(f"{float(theta)!r},{int(count)}\n")
    sizes = result.summary()
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(f"threshold={result.threshold!r}\n")
        fh.write(f"clusters={result.model.n_clusters}\n")
        for label, size in sizes.items():
            fh.write(f"class_{label}={size}\n")
    _write_echo(args, out, "cluster")
    print(f"threshold {result.threshold}: {result.model.n_clusters} clusters, "
          f"sizes {sizes}")
    return EXIT_OK


def _cmd_transform(args):
    import warnings

    from .errors import DegenerateSeries, EmptyInput
    from .gaf import encode_matrix, render_channel

    samples = _load_samples(args.data)
    if args.trip is not None:
        samples = [s for s in samples if s.trip_id == args.trip]
        if not samples:
            raise EmptyInput(f"no sample named {args.trip!r} in {args.data}")
    out = _out_dir(args)
    written = 0
    for s in samples:
        try:
            image = encode_matrix(s.matrix)
        except DegenerateSeries as exc:
            if args.degenerate == "error":
                raise
            warnings.warn(f"skipping {s.trip_id}: {exc}")
            continue
        sample_dir = os.path.join(out, s.trip_id)
        os.makedirs(sample_dir, exist_ok=True)
        for channel, name in enumerate(image.channel_names):
            fname = name.replace("/", "_") + "." + args.format
            render_channel(image, channel, os.path.join(sample_dir, fname))
            written += 1
    _write_echo(args, out, "transform")
    print(f"wrote {written} channel images to {out}")
    return EXIT_OK


def _common_train_objects(args, samples):
    import numpy as np

    from .data import attach_labels, read_labels_csv
    from .errors import LabelOutOfRange
    from .model import AblationFlags, GafVitModel

    attach_labels(samples, read_labels_csv(args.labels))
    seed = _resolve_seed(args.seed)
    config = _vit_config_from_args(args)
    ablation = AblationFlags(no_attention=args.no_attention, no_gaf=args.no_gaf)
    model = GafVitModel(config=config, ablation=ablation, seed=seed,
                        reduction_ratio=args.reduction_ratio)
    kept, inputs = _prepare_inputs(model, samples, args.degenerate)
    labels = np.array([s.label for s in kept], dtype=np.int64)
    if labels.max() >= config.num_classes or labels.min() < 0:
        raise LabelOutOfRange(
            f"labels span {labels.min()}..{labels.max()}, model has "
            f"{config.num_classes} classes")
    return model, inputs, labels, seed


def _cmd_train(args):
    from . import engine

    samples = _load_samples(args.data)
    model, inputs, labels, seed = _common_train_objects(args, samples)
    train_cfg = engine.TrainConfig(
        batch_size=args.batch_size, learning_rate=args.lr, epochs=args.epochs,
        weight_decay=args.weight_decay, split=_parse_split(args.split), seed=seed)
    out = _out_dir(args)
    args.seed = seed
    _write_echo(args, out, "train")

    result = engine.fit(model, inputs, labels, train_cfg, log=print)
    engine.write_history_csv(result.history, os.path.join(out, "history.csv"))
    model.save(os.path.join(out, "model.gvt"), train_config=train_cfg,
               params=result.best_params)
    if result.history:
        print(f"best epoch {result.best_epoch} (val_loss {result.best_val_loss:.6f}); "
              f"checkpoint and history written to {out}")
    else:
        print(f"no epochs run; initial checkpoint written to {out}")
    return EXIT_OK


def _cmd_eval(args):
    import numpy as np

    from . import engine, metrics
    from .data import attach_labels, read_labels_csv
    from .model import GafVitModel

    model, ckpt = GafVitModel.from_checkpoint(args.checkpoint)
    samples = _load_samples(args.data)
    attach_labels(samples, read_labels_csv(args.labels))
    kept, inputs = _prepare_inputs(model, samples, args.degenerate)
    labels = np.array([s.label for s in kept], dtype=np.int64)

    train_raw = dict(ckpt.config.get("train", {}))
    if train_raw.get("split") is not None:
        train_raw["split"] = tuple(train_raw["split"])
    train_cfg = engine.TrainConfig(**train_raw) if train_raw else engine.TrainConfig()

    if args.split_part == "all":
        part_inputs, part_labels = inputs, labels
    else:
        idx = dict(zip(("train", "val", "test"),
                       engine.split_dataset(np.arange(len(inputs)), train_cfg)))
        chosen = idx[args.split_part]
        part_inputs, part_labels = inputs[chosen], labels[chosen]

    preds, _ = engine.predict(model, part_inputs, batch_size=args.batch_size)
    cm = metrics.confusion_matrix(part_labels, preds,
                                  num_classes=model.config.num_classes)
    rep = metrics.report(cm)
    out = _out_dir(args)
    with open(os.path.join(out, "metrics.json"), "w") as fh:
        fh.write(rep.to_json() + "\n")
    metrics.write_confusion_csv(cm, os.path.join(out, "confusion.csv"))
    _write_echo(args, out, "eval")
    print(rep.table())
    return EXIT_OK


def _cmd_classify(args):
    from .data import attach_labels, read_labels_csv
    from .errors import EmptyInput
    from .model import GafVitModel

    model, _ = GafVitModel.from_checkpoint(args.checkpoint)
    samples = _load_samples(args.data)
    if args.trip is not None:
        samples = [s for s in samples if s.trip_id == args.trip]
        if not samples:
            raise EmptyInput(f"no sample named {args.trip!r} in {args.data}")
    for s in samples:
        label, logits = model.classify_matrix(s.matrix)
        scores = " ".join(f"{v:.6f}" for v in logits.scores)
        print(f"{s.trip_id} class={label} scores=[{scores}]")
    _write_echo(args, _out_dir(args), "classify")
    return EXIT_OK


def _cmd_gradcheck(args):
    import numpy as np

    from . import engine
    from .attention import init_attention_params, reweight
    from .autodiff import tsum, mul, Tensor
    from .engine import cross_entropy, grad_check
    from .model import GafVitModel
    from .vit import VitConfig

    rng = np.random.default_rng(_resolve_seed(args.seed))

    att_params = init_attention_params(2, 1, rng, std=0.5)
    att_store = engine.ParamStore()
    att_store.add_named(att_params.named())
    image = Tensor(rng.normal(0.0, 1.0, (4, 4, 2)))
    probe = rng.normal(0.0, 1.0, (4, 4, 2))

    def att_loss():
        return tsum(mul(reweight(image, att_params), probe))

    args.seed = _resolve_seed(args.seed)
    _write_echo(args, _out_dir(args), "gradcheck")
    att_report = grad_check(att_loss, att_store, step=args.step)
    print(f"attention-only max relative error: {att_report.max_rel_err:.3e} "
          f"(tolerance {args.tol_attention:g})")

    config = VitConfig(image_h=8, image_w=8, channels=2, patch_size=4,
                       patch_mode="strip", embed_dim=8, depth=1, heads=2,
                       mlp_dim=8, num_classes=3)
    toy = GafVitModel(config=config, seed=int(rng.integers(1 << 31)), init_std=0.2)
    x = rng.normal(0.0, 1.0, (2, 8, 8, 2))
    y = np.array([0, 2])

    def full_loss():
        return cross_entropy(toy.forward_batch(x), y)

    full_report = grad_check(full_loss, toy.params, step=args.step)
    print(f"full-model max relative error: {full_report.max_rel_err:.3e} "
          f"(tolerance {args.tol_full:g})")

    if att_report.within(args.tol_attention) and full_report.within(args.tol_full):
        print("gradients verified")
        return EXIT_OK
    for entry in sorted(full_report.entries, key=lambda e: -e.max_rel_err)[:5]:
        print(f"  worst: {entry.name} {entry.max_rel_err:.3e}", file=sys.stderr)
    print("gradient check FAILED", file=sys.stderr)
    return EXIT_NUMERIC


# -- parser ------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("-o", "--out", type=str, default="out", help="output directory")
    sub.add_argument("--seed", type=int, default=None,
                     help="RNG seed (default: GAFVIT_SEED env var, then 0)")
    sub.add_argument("--threads", type=int, default=None,
                     help="pin BLAS/OpenMP thread count (set before numpy loads)")
    sub.add_argument("--config", type=str, default=None,
                     help="key=value file supplying defaults for this command")


def _add_model_flags(sub):
    sub.add_argument("--image-size", type=int, default=99)
    sub.add_argument("--channels", type=int, default=6)
    sub.add_argument("--patch-size", type=int, default=9)
    sub.add_argument("--patch-mode", type=str, choices=("strip", "square"), default="strip")
    sub.add_argument("--embed-dim", type=int, default=128)
    sub.add_argument("--depth", type=int, default=4)
    sub.add_argument("--heads", type=int, default=4)
    sub.add_argument("--mlp-dim", type=int, default=128)
    sub.add_argument("--num-classes", type=int, default=4)
    sub.add_argument("--reduction-ratio", type=int, default=1)
    sub.add_argument("--no-attention", action="store_true",
                     help="drop the channel-attention gate")
    sub.add_argument("--no-gaf", action="store_true",
                     help="replace the field encoding with a trainable reshape")
    sub.add_argument("--degenerate", choices=("skip", "error"), default="error",
                     help="what to do with constant feature columns")


def _build_parser():
    parser = _Parser(prog="gafvit",
                     description="driving-behavior classification pipeline")
    subs = parser.add_subparsers(dest="command", metavar="command")
    registry = {}

    synth = subs.add_parser("synth", help="generate synthetic trips")
    synth.add_argument("--counts", type=str, default="250,250,250,250",
                       help="trips per regime, comma separated")
    _add_common(synth)
    synth.set_defaults(func=_cmd_synth)
    registry["synth"] = synth

    cluster = subs.add_parser("cluster", help="label windows by endpoint clustering")
    cluster.add_argument("--data", type=str, required=True, help="trips CSV")
    cluster.add_argument("--theta", type=float, default=None,
                         help="fixed threshold (default: elbow over the grid)")
    cluster.add_argument("--grid", type=str, default=None,
                         help="threshold grid start:stop:step (default 0.02:0.5:0.02)")
    cluster.add_argument("--eq12-literal", action="store_true",
                         help="wrap the cosine similarity in an extra cosine")
    _add_common(cluster)
    cluster.set_defaults(func=_cmd_cluster)
    registry["cluster"] = cluster

    transform = subs.add_parser("transform", help="render angular-field images")
    transform.add_argument("--data", type=str, required=True, help="trips CSV")
    transform.add_argument("--trip", type=str, default=None,
                           help="single window id (default: all)")
    transform.add_argument("--format", choices=("pgm", "png"), default="pgm")
    transform.add_argument("--degenerate", choices=("skip", "error"), default="error")
    _add_common(transform)
    transform.set_defaults(func=_cmd_transform)
    registry["transform"] = transform

    train = subs.add_parser("train", help="train the classifier")
    train.add_argument("--data", type=str, required=True, help="trips CSV")
    train.add_argument("--labels", type=str, required=True, help="labels CSV")
    train.add_argument("--batch-size", type=int, default=8)
    train.add_argument("--lr", type=float, default=1e-5)
    train.add_argument("--epochs", type=int, default=50)
    train.add_argument("--weight-decay", type=float, default=0.01)
    train.add_argument("--split", type=str, default="0.8,0.1,0.1")
    _add_model_flags(train)
    _add_common(train)
    train.set_defaults(func=_cmd_train)
    registry["train"] = train

    ev = subs.add_parser("eval", help="score a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", type=str, required=True)
    ev.add_argument("--data", type=str, required=True)
    ev.add_argument("--labels", type=str, required=True)
    ev.add_argument("--split-part", choices=("train", "val", "test", "all"),
                    default="test")
    ev.add_argument("--batch-size", type=int, default=32)
    ev.add_argument("--degenerate", choices=("skip", "error"), default="error")
    _add_common(ev)
    ev.set_defaults(func=_cmd_eval)
    registry["eval"] = ev

    classify = subs.add_parser("classify", help="classify windows with a checkpoint")
    classify.add_argument("--checkpoint", type=str, required=True)
    classify.add_argument("--data", type=str, required=True)
    classify.add_argument("--trip", type=str, default=None)
    _add_common(classify)
    classify.set_defaults(func=_cmd_classify)
    registry["classify"] = classify

    gradcheck = subs.add_parser("gradcheck", help="finite-difference gradient audit")
    gradcheck.add_argument("--step", type=float, default=1e-5)
    gradcheck.add_argument("--tol-attention", type=float, default=1e-4)
    gradcheck.add_argument("--tol-full", type=float, default=1e-3)
    _add_common(gradcheck)
    gradcheck.set_defaults(func=_cmd_gradcheck)
    registry["gradcheck"] = gradcheck

    return parser, registry


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _set_threads(argv)
    parser, registry = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if getattr(args, "config", None):
        try:
            file_values = _read_config_file(args.config)
        except ValueError as exc:
            parser.error(str(exc))
        command = file_values.get("command")
        if command is not None and command != args.command:
            parser.error(f"config file is for {command!r}, not {args.command!r}")
        _apply_config_defaults(parser, registry[args.command], file_values)
        args = parser.parse_args(argv)

    from .errors import DataError, GafVitError, NumericError
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except NumericError as exc:
        print(f"gafvit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"gafvit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GafVitError as exc:
        print(f"gafvit: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"gafvit: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
