"""``dorakit`` command line.

Subcommands::

    dorakit synth-gen      --out DIR [--seed N] [--separation S] ...
    dorakit poi-convert    --facilities F.csv --locations L.csv --out OUT.csv
    dorakit pretrain       --data DIR [--alpha A] [--tau T] [--dz D] ...
    dorakit finetune-eval  --data DIR --checkpoint CKPT --shots 1,5 --seeds 5
    dorakit ablate         --data DIR --feature-subset sweep --freeze-encoder --alpha 0.5,0.7

A data directory holds ``schema.ini``, ``unlabeled.csv``, ``train.csv``,
``test.csv`` and optionally ``validation.csv`` (the layout ``synth-gen``
writes). Every command leaves a ``manifest.json`` next to its outputs.

Exit codes: 0 success, 1 usage or configuration error, 2 data, schema or
checkpoint error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, NoReturn, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .ablation import build_ablation_grid, run_ablation
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, default_out_dir, load_config
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
    SchemaError,
    ValidationError,
)
from .evaluation import DEFAULT_HIT_KS, format_report
from .log import LL_DEBUG, LL_ERROR, LL_INFO, LL_VERBOSE, log_set
from .model import FeatureSubset, ModelConfig
from .poi import PoiClass, PoiPoint, RadiusProfile, build_index, poi_column_names, poi_convert_many
from .schema import (
    ID_COLUMN,
    Dataset,
    FeatureSchema,
    Role,
    load_csv,
    read_schema,
    save_csv,
    write_schema,
)
from .synthetic import SynthConfig, SyntheticGenerator
from .training import ExperimentData, ExperimentReport, Method, pretrain, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

SCHEMA_FILE = "schema.ini"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "model.ckpt"


class UsageError(Exception):
    """Bad command-line usage detected after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to rerun a command: argv, resolved config, seeds, paths."""

    command: str
    argv: list[str]
    config: dict[str, Any]
    seeds: list[int] = field(default_factory=list)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    wall_clock_seconds: float = 0.0

    def write(self, out_dir: Path) -> Path:
        return write_atomic(out_dir / MANIFEST_FILE, json.dumps(asdict(self), indent=2) + "\n")


def write_atomic(path: Path, text: str) -> Path:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 1,5, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers like 0.5,0.7, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--out", type=Path, default=None, help="output directory (default: $DORAKIT_OUT_DIR)"
    )
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="only log errors")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, default=None, help="data directory")
    p.add_argument("--schema", type=Path, default=None, help=f"default: DATA/{SCHEMA_FILE}")
    p.add_argument("--unlabeled", type=Path, default=None, help="default: DATA/unlabeled.csv")
    p.add_argument("--strict", action="store_true", help="reject unseen categorical tokens")


def _add_training(p: argparse.ArgumentParser, *, sweep: bool) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--tau", type=float, default=None, help="contrastive temperature")
    g.add_argument("--epochs-pretrain", type=int, default=None)
    g.add_argument("--epochs-finetune", type=int, default=None)
    g.add_argument("--lr", type=float, default=None, help="learning rate of both stages")
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--seed", type=int, default=None, help="pre-training seed")
    if sweep:
        g.add_argument("--alpha", type=_float_list, default=[], help="alpha values to sweep")
        g.add_argument("--dz", type=_int_list, default=[], help="d_z values to sweep")
        g.add_argument(
            "--feature-subset", type=_str_list, default=[],
            help="subsets to sweep, or 'sweep' for all four",
        )
        g.add_argument("--pretext-target", type=_str_list, default=[], help="targets to sweep")
        g.add_argument("--freeze-encoder", action="store_true", help="add the freeze on/off axis")
        g.add_argument(
            "--corpus-filter", type=_str_list, default=[],
            help="property types to sweep ('all' keeps every type)",
        )
    else:
        g.add_argument("--alpha", type=float, default=None, help="cross-entropy weight")
        g.add_argument("--dz", type=int, default=None, help="representation width d_z")
        g.add_argument(
            "--feature-subset", default=None, choices=[s.value for s in FeatureSubset]
        )
        g.add_argument("--pretext-target", default=None, help="'town' or a categorical column")
        g.add_argument("--freeze-encoder", action="store_true", default=None)
        g.add_argument("--corpus-filter", default=None, help="pre-train on one property type")


def _add_eval(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", type=Path, default=None, help="pre-trained checkpoint")
    p.add_argument("--shots", type=_int_list, default=None, help="k values, e.g. 1,5")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (0..N-1)")
    p.add_argument("--hit-k", type=_float_list, default=list(DEFAULT_HIT_KS), help="HR tolerances")
    p.add_argument("--workers", type=int, default=1, help="parallel seeds / grid cells")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dorakit", description="Few-shot real estate appraisal toolkit")
    parser.add_argument("--version", action="version", version=f"dorakit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic corpus")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-cities", type=int, default=SynthConfig.n_cities)
    p.add_argument("--towns-per-city", type=int, default=SynthConfig.towns_per_city)
    p.add_argument("--n-unlabeled", type=int, default=SynthConfig.n_unlabeled)
    p.add_argument("--n-train", type=int, default=SynthConfig.n_train)
    p.add_argument("--n-test", type=int, default=SynthConfig.n_test)
    p.add_argument("--n-validation", type=int, default=SynthConfig.n_validation)
    p.add_argument("--separation", type=float, default=SynthConfig.town_separation)
    p.add_argument("--price-noise", type=float, default=SynthConfig.price_noise_std)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("poi-convert", help="turn facility points into radius-count features")
    _add_common(p)
    p.add_argument("--facilities", type=Path, required=True, help="CSV with x, y, class")
    p.add_argument("--locations", type=Path, required=True, help="CSV with x, y (and id)")
    p.add_argument("--radii", type=_float_list, default=None, help="radii in meters")
    p.add_argument("--output", type=Path, default=None, help="output CSV (default: OUT/poi.csv)")
    p.set_defaults(func=cmd_poi_convert)

    p = sub.add_parser("pretrain", help="stage 1: self-supervised pre-training")
    _add_common(p)
    _add_data(p)
    _add_training(p, sweep=False)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser(
        "finetune-eval", aliases=["evaluate"], help="stage 2 over seeds and shots, plus baselines"
    )
    _add_common(p)
    _add_data(p)
    _add_training(p, sweep=False)
    _add_eval(p)
    p.add_argument("--baseline", choices=["ha", "lr", "dnn", "dnn-cl"], default=None)
    p.add_argument("--no-pretrain", action="store_true", help="scratch init (DNN baseline)")
    p.add_argument("--by-city", action="store_true", help="append a per-city block")
    p.set_defaults(func=cmd_finetune_eval)

    p = sub.add_parser("ablate", help="one-factor-at-a-time ablation grid")
    _add_common(p)
    _add_data(p)
    _add_training(p, sweep=True)
    _add_eval(p)
    p.set_defaults(func=cmd_ablate)
    return parser


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out if args.out is not None else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args: argparse.Namespace, *, sweep: bool = False) -> RunConfig:
    cfg = load_config(args.config)
    cfg = cfg.override("loss", tau=args.tau)
    cfg = cfg.override(
        "pretrain", epochs=args.epochs_pretrain, lr=args.lr, batch_size=args.batch_size,
        seed=args.seed,
    )
    cfg = cfg.override("finetune", epochs=args.epochs_finetune, lr=args.lr, tau=args.tau)
    if not sweep:
        cfg = cfg.override("loss", alpha=args.alpha)
        cfg = cfg.override(
            "model", d_z=args.dz, feature_subset=args.feature_subset,
            pretext_target=args.pretext_target,
        )
        cfg = cfg.override("pretrain", corpus_filter=args.corpus_filter)
        cfg = cfg.override("finetune", freeze_encoder=args.freeze_encoder)
    return cfg


def _schema_path(args: argparse.Namespace) -> Path:
    if args.schema is not None:
        return Path(args.schema)
    if args.data is None:
        raise UsageError("give --schema or --data")
    return Path(args.data) / SCHEMA_FILE


def _split_path(args: argparse.Namespace, name: str) -> Optional[Path]:
    if name == "unlabeled" and args.unlabeled is not None:
        return Path(args.unlabeled)
    if args.data is None:
        return None
    return Path(args.data) / f"{name}.csv"


def _load(
    args: argparse.Namespace, schema: FeatureSchema, name: str, role: Role, *, required: bool
) -> Optional[Dataset]:
    path = _split_path(args, name)
    if path is None or not path.exists():
        if required:
            raise FileNotFoundError(path if path is not None else f"{name}.csv (no --data given)")
        return None
    return load_csv(path, schema, role, strict=args.strict)


def _experiment_data(args: argparse.Namespace, schema: FeatureSchema) -> ExperimentData:
    train = _load(args, schema, "train", Role.TRAIN, required=True)
    test = _load(args, schema, "test", Role.TEST, required=True)
    assert train is not None and test is not None
    return ExperimentData(
        unlabeled=_load(args, schema, "unlabeled", Role.UNLABELED, required=False),
        train=train,
        test=test,
        validation=_load(args, schema, "validation", Role.VALIDATION, required=False),
    )


def _inputs(args: argparse.Namespace, *names: str) -> dict[str, str]:
    out = {"schema": str(_schema_path(args))}
    for name in names:
        path = _split_path(args, name)
        if path is not None and path.exists():
            out[name] = str(path)
    return out


def _report_json(reports: Sequence[ExperimentReport]) -> str:
    body = []
    for rep in reports:
        body.append(
            {
                "model": rep.label,
                "dataset": rep.dataset,
                "shots": rep.shots,
                "seeds": [
                    {
                        "seed": r.seed,
                        "metrics": r.metrics.as_dict(),
                        "validation": r.validation.as_dict() if r.validation else None,
                    }
                    for r in rep.results
                ],
                "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in rep.aggregate().items()},
            }
        )
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth_gen(args: argparse.Namespace) -> RunManifest:
    try:
        cfg = SynthConfig(
            n_cities=args.n_cities,
            towns_per_city=args.towns_per_city,
            n_unlabeled=args.n_unlabeled,
            n_train=args.n_train,
            n_test=args.n_test,
            n_validation=args.n_validation,
            town_separation=args.separation,
            price_noise_std=args.price_noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args)
    gen = SyntheticGenerator(cfg)
    unlabeled, train, test, schema = gen.generate()
    write_schema(schema, out / SCHEMA_FILE)
    outputs = {"schema": str(out / SCHEMA_FILE)}
    splits = [("unlabeled", unlabeled), ("train", train), ("test", test)]
    validation = gen.validation()
    if validation is not None:
        splits.append(("validation", validation))
    for name, data in splits:
        path = out / f"{name}.csv"
        save_csv(data, path)
        outputs[name] = str(path)
    print(f"wrote {', '.join(f'{len(d)} {n}' for n, d in splits)} record(s) to {out}")
    config = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}
    return RunManifest("synth-gen", [], config, seeds=[cfg.seed], outputs=outputs)


def cmd_poi_convert(args: argparse.Namespace) -> RunManifest:
    profile = RadiusProfile(tuple(args.radii)) if args.radii else RadiusProfile()
    facilities = pd.read_csv(args.facilities)
    locations = pd.read_csv(args.locations)
    for frame, path, cols in (
        (facilities, args.facilities, ("x", "y", "class")),
        (locations, args.locations, ("x", "y")),
    ):
        missing = [c for c in cols if c not in frame.columns]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
    points = []
    for i, (x, y, klass) in enumerate(facilities[["x", "y", "class"]].itertuples(index=False)):
        try:
            points.append(PoiPoint(float(x), float(y), PoiClass(str(klass).strip().upper())))
        except ValueError as exc:
            raise ValidationError(f"{args.facilities}: {exc}", row=i + 1) from None
    index = build_index(points, profile)
    coords = locations[["x", "y"]].to_numpy(dtype=np.float64)
    try:
        counts = poi_convert_many(index, coords, profile)
    except ValueError as exc:
        raise DataError(f"{args.locations}: {exc}") from exc
    frame = pd.DataFrame(counts.astype(np.int64), columns=list(poi_column_names(profile)))
    if ID_COLUMN in locations.columns:
        ids = locations[ID_COLUMN].to_numpy()
    else:
        ids = np.arange(1, len(locations) + 1)
    frame.insert(0, ID_COLUMN, ids)
    out_path = args.output if args.output is not None else _out_dir(args) / "poi.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_path, index=False)
    print(f"converted {len(frame)} location(s) against {len(index)} facilities -> {out_path}")
    return RunManifest(
        "poi-convert",
        [],
        {"radii": list(profile.radii)},
        inputs={"facilities": str(args.facilities), "locations": str(args.locations)},
        outputs={"poi": str(out_path)},
    )


def _history_tsv(ckpt: Checkpoint) -> str:
    cols = ["epoch", "loss", "ce", "cl", "macro_f1", "micro_f1"]
    lines = ["\t".join(cols)]
    for row in ckpt.history:
        lines.append("\t".join([str(int(row["epoch"]))] + [f"{row[c]:.6f}" for c in cols[1:]]))
    return "\n".join(lines) + "\n"


def cmd_pretrain(args: argparse.Namespace) -> RunManifest:
    cfg = _resolve_config(args)
    schema = read_schema(_schema_path(args))
    unlabeled = _load(args, schema, "unlabeled", Role.UNLABELED, required=True)
    assert unlabeled is not None
    ckpt = pretrain(unlabeled, cfg.model, cfg.pretrain)
    out = _out_dir(args)
    ckpt_path = out / CHECKPOINT_FILE
    save_checkpoint(ckpt, ckpt_path)
    hist_path = write_atomic(out / "history.tsv", _history_tsv(ckpt))
    if ckpt.history:
        last = ckpt.history[-1]
        print(f"macro_f1\t{last['macro_f1']:.4f}\nmicro_f1\t{last['micro_f1']:.4f}")
    return RunManifest(
        "pretrain",
        [],
        cfg.to_dict(),
        seeds=[cfg.pretrain.seed],
        inputs=_inputs(args, "unlabeled"),
        outputs={"checkpoint": str(ckpt_path), "history": str(hist_path)},
    )


def _model_differences(requested: ModelConfig, loaded: ModelConfig) -> list[str]:
    """``name=requested (checkpoint: loaded)`` for every model setting that differs."""
    want, have = asdict(requested), asdict(loaded)
    return [
        f"{name}={getattr(want[name], 'value', want[name])}"
        f" (checkpoint: {getattr(have[name], 'value', have[name])})"
        for name in want
        if want[name] != have[name]
    ]


def cmd_finetune_eval(args: argparse.Namespace) -> RunManifest:
    cfg = _resolve_config(args)
    schema = read_schema(_schema_path(args))
    data = _experiment_data(args, schema)
    if args.baseline is not None:
        method = Method(args.baseline)
    elif args.no_pretrain:
        method = Method.DNN
    else:
        method = Method.DORA

    checkpoint = None
    if method is Method.DORA:
        if args.checkpoint is not None:
            checkpoint = load_checkpoint(args.checkpoint)
            checkpoint.check_schema(schema)
            ignored = _model_differences(cfg.model, checkpoint.config)
            if ignored:
                logger.warning(
                    "checkpoint model settings take precedence; ignoring %s", ", ".join(ignored)
                )
        else:
            logger.info("no --checkpoint given; pre-training first")
            if data.unlabeled is None:
                raise FileNotFoundError("unlabeled.csv (needed to pre-train)")
            checkpoint = pretrain(data.unlabeled, cfg.model, cfg.pretrain)
        model_config = checkpoint.config
    else:
        model_config = cfg.model

    seeds = list(range(args.seeds))
    shots = args.shots or [cfg.finetune.k_shots]
    reports = [
        run_experiment(
            data,
            method,
            model_config=model_config,
            pretrain_cfg=cfg.pretrain,
            finetune_cfg=cfg.finetune,
            seeds=seeds,
            k_shots=k,
            checkpoint=checkpoint,
            ks=args.hit_k,
            workers=args.workers,
        )
        for k in shots
    ]
    text = format_report(reports, args.hit_k, by_city=args.by_city)
    out = _out_dir(args)
    tsv = write_atomic(out / "report.tsv", text)
    js = write_atomic(out / "report.json", _report_json(reports))
    sys.stdout.write(text)
    inputs = _inputs(args, "unlabeled", "train", "test", "validation")
    if args.checkpoint is not None:
        inputs["checkpoint"] = str(args.checkpoint)
    config = cfg.to_dict()
    config["method"] = method.value
    config["shots"] = shots
    return RunManifest(
        "finetune-eval", [], config, seeds=seeds, inputs=inputs,
        outputs={"report": str(tsv), "report_json": str(js)},
    )


def cmd_ablate(args: argparse.Namespace) -> RunManifest:
    cfg = _resolve_config(args, sweep=True)
    schema = read_schema(_schema_path(args))
    data = _experiment_data(args, schema)
    subsets = args.feature_subset
    if subsets == ["sweep"]:
        subsets = [s.value for s in FeatureSubset]
    try:
        cells = build_ablation_grid(
            cfg.model,
            cfg.pretrain,
            cfg.finetune,
            pretext_targets=args.pretext_target,
            feature_subsets=[FeatureSubset(s) for s in subsets],
            freeze_encoder=args.freeze_encoder,
            alphas=args.alpha,
            d_zs=args.dz,
            corpus_filters=[None if c == "all" else c for c in args.corpus_filter],
        )
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise UsageError(str(exc)) from exc
    seeds = list(range(args.seeds))
    shots = args.shots or [cfg.finetune.k_shots]
    reports = []
    for k in shots:
        results = run_ablation(
            cells, data, seeds=seeds, k_shots=k, ks=args.hit_k, workers=args.workers
        )
        reports.extend(rep for _, rep in results)
    text = format_report(reports, args.hit_k)
    out = _out_dir(args)
    tsv = write_atomic(out / "ablation.tsv", text)
    js = write_atomic(out / "ablation.json", _report_json(reports))
    sys.stdout.write(text)
    config = cfg.to_dict()
    config["cells"] = [f"{c.axis}={c.value}" for c in cells]
    config["shots"] = shots
    return RunManifest(
        "ablate", [], config, seeds=seeds,
        inputs=_inputs(args, "unlabeled", "train", "test", "validation"),
        outputs={"report": str(tsv), "report_json": str(js)},
    )


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _log_level(args: argparse.Namespace) -> int:
    if args.quiet:
        return LL_ERROR
    return {0: LL_INFO, 1: LL_DEBUG}.get(args.verbose, LL_VERBOSE)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    log_set(_log_level(args))
    started = time.perf_counter()
    try:
        manifest: RunManifest = args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dorakit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, CheckpointError, FileNotFoundError) as exc:
        print(f"dorakit: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"dorakit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"dorakit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest.argv = argv
    manifest.wall_clock_seconds = round(time.perf_counter() - started, 3)
    manifest.write(Path(next(iter(manifest.outputs.values()))).parent)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
