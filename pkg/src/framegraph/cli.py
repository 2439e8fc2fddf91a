"""Command-line driver.

Subcommands: ``gen`` (synthesise a dataset), ``train``, ``eval``,
``ablate``, ``gradcheck``, ``export``.  Config files are UTF-8 ``key=value``
lines with ``#`` comments.  Exit codes: 0 success, 1 usage or config
error, 2 numerical failure (non-finite loss or a failed gradient check),
3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .container import load_checkpoint, read_dataset, write_dataset
from .data import SyntheticSpec, make_dataset
from .errors import ConfigError, NumericError, ParseError, ShapeError
from .export import export_heatmaps, export_weight_csv
from .gradcheck import SCOPES, run_gradcheck
from .train import (
    DEFAULT_ABLATION_VARIANTS,
    RunConfig,
    ablation,
    confusion_percentages,
    evaluate_model,
    train,
)

__all__ = ["main", "parse_config_file"]

_CONFIG_TYPES = {
    "dataset": str,
    "out_dir": str,
    "feature_dim": int,
    "module_count": int,
    "use_weighted_fusion": None,  # bool, parsed specially
    "fusion_mean_axis": str,
    "epochs": int,
    "learning_rate": float,
    "weight_decay": float,
    "batch_size": int,
    "seed": int,
    "n_frames": int,
    "n_classes": int,
}


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{value}'")


def parse_config_file(path) -> dict:
    """Read ``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            caster = _CONFIG_TYPES[key]
            if caster is None:
                out[key] = _parse_bool(value)
            else:
                try:
                    out[key] = caster(value)
                except ValueError:
                    raise ConfigError(
                        f"{path}:{lineno}: bad value '{value}' for key '{key}'"
                    ) from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors become exit code 1
        raise ConfigError(message)


def _run_config_from_args(args) -> RunConfig:
    fields = {}
    if args.config:
        fields.update(parse_config_file(args.config))
    overrides = {
        "dataset": args.data,
        "out_dir": args.out,
        "feature_dim": args.feature_dim,
        "module_count": args.modules,
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "weight_decay": args.weight_decay,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "fusion_mean_axis": args.fusion_mean_axis,
        "use_weighted_fusion": args.fusion,
    }
    for key, value in overrides.items():
        if value is not None:
            fields[key] = value
    if "dataset" not in fields:
        raise ConfigError("a dataset path is required (--data or config file)")
    if "out_dir" not in fields:
        raise ConfigError("an output directory is required (--out or config file)")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(fields) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**fields)


def _cmd_gen(args) -> int:
    spec = SyntheticSpec(
        n_classes=args.classes,
        n_frames=args.frames,
        rows=args.size,
        cols=args.size,
        curve_family=args.curve,
        noise_sigma=args.noise,
        region_size=args.region_size,
        seed=args.seed,
    )
    dataset = make_dataset(spec, args.per_class)
    write_dataset(dataset, args.out)
    print(f"wrote {len(dataset.samples)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    result = train(_run_config_from_args(args))
    final = result.metrics[-1]
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(
        f"epoch {final.epoch}: train_loss={final.train_loss:.4f} "
        f"train_acc={final.train_acc:.4f} val_acc={final.val_acc:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    labels = dataset.labels()
    if args.split == "all":
        idx = None
        images, y = dataset.images(), labels
    else:
        train_idx, val_idx = dataset.split()
        idx = train_idx if args.split == "train" else val_idx
        images, y = dataset.images(idx), labels[idx]
    accuracy, confusion = evaluate_model(model, images, y)
    print(f"accuracy on {args.split} split: {accuracy:.4f} ({len(y)} samples)")
    percent = confusion_percentages(confusion)
    print("confusion matrix (rows: true class, columns: predicted, in %):")
    for row in percent:
        print("  " + " ".join(f"{v:6.1f}" for v in row))
    return 0


def _parse_variants(text: str):
    """Variant grammar: comma-separated ``<k>`` or ``<k>f`` tokens, e.g.
    ``0,1,2,3,2f`` — module count, with ``f`` adding weighted fusion."""
    variants = []
    for token in text.split(","):
        token = token.strip().lower()
        if not token:
            continue
        fused = token.endswith("f")
        if fused:
            token = token[:-1]
        try:
            count = int(token)
        except ValueError:
            raise ConfigError(f"bad ablation variant '{token}'") from None
        variants.append((count, fused))
    if not variants:
        raise ConfigError("no ablation variants given")
    return tuple(variants)


def _cmd_ablate(args) -> int:
    config = _run_config_from_args(args)
    variants = (
        _parse_variants(args.variants) if args.variants else DEFAULT_ABLATION_VARIANTS
    )
    rows = ablation(config, variants)
    width = max(len(r.describe()) for r in rows)
    print(f"{'variant':<{width}}  val_acc  oversmoothing")
    for row in rows:
        print(f"{row.describe():<{width}}  {row.val_acc:7.4f}  {row.oversmoothing:.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.scope, seed=args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 2


def _cmd_export(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    if args.kind == "weights":
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "weights.csv")
        export_weight_csv(model, path)
        print(f"wrote {path}")
    else:
        if not 0 <= args.sample < len(dataset.samples):
            raise ConfigError(
                f"sample {args.sample} out of range for {len(dataset.samples)} samples"
            )
        paths = export_heatmaps(model, dataset.samples[args.sample].images, args.out)
        print(f"wrote {len(paths)} heatmaps to {args.out}")
    return 0


def _add_train_flags(parser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--data", help="dataset container path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--feature-dim", dest="feature_dim", type=int)
    parser.add_argument("--modules", type=int, help="graph module count (0-3)")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--fusion-mean-axis", dest="fusion_mean_axis", choices=("column", "row"))
    fusion = parser.add_mutually_exclusive_group()
    fusion.add_argument("--fusion", dest="fusion", action="store_true", default=None)
    fusion.add_argument("--no-fusion", dest="fusion", action="store_false", default=None)


def _build_parser() -> _Parser:
    parser = _Parser(prog="framegraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="synthesise a labelled sequence dataset")
    gen.add_argument("--classes", type=int, default=6)
    gen.add_argument("--per-class", dest="per_class", type=int, default=50)
    gen.add_argument("--frames", type=int, default=16)
    gen.add_argument("--size", type=int, default=16, help="frame rows = cols")
    gen.add_argument("--curve", choices=("ramp", "bump"), default="ramp")
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--region-size", dest="region_size", type=int, default=4)
    gen.add_argument("--seed", type=int, default=11)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen)

    tr = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    _add_train_flags(tr)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=("val", "train", "all"), default="val")
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="train and compare component variants")
    _add_train_flags(ab)
    ab.add_argument("--variants", help="e.g. 0,1,2,3,2f (f = weighted fusion)")
    ab.set_defaults(func=_cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--scope", choices=SCOPES, default="all")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=_cmd_gradcheck)

    ex = sub.add_parser("export", help="export weight curves or heatmaps")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--kind", choices=("weights", "heatmaps"), required=True)
    ex.add_argument("--out", default=".")
    ex.add_argument("--sample", type=int, default=0, help="sample index for heatmaps")
    ex.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ShapeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            print(f"error: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
