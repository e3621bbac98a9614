"""Command-line entry point: ``nceplrec <subcommand> ...``.

Exit status: 0 success, 1 unexpected failure, 2 usage error, 3 bad input
data (parse errors, missing timestamps, nothing left after binarizing),
4 invalid hyperparameters, 5 cold-start requested for a model without
regression weights, 6 unreadable or incompatible model file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path


from . import dataio, experiment
from .dataio import FormatError, ModelFileError, RatingsFormat, load_model, save_model, write_report
from .embedding import EmptyMatrixError
from .eval import (
    DEFAULT_KS,
    DEFAULT_NDCG_DEPTH,
    DEFAULT_GRID,
    evaluate,
    grid_search,
    top1_items,
    top1_popularity_distribution,
    user_buckets,
)
from .models import ColdStartUnsupported, Hyperparameters, InvalidHyperparameters, Kind, train
from .numkit import col_nnz, deterministic, row_nnz

log = logging.getLogger("nceplrec")

EXIT_DATA = 3
EXIT_HYPER = 4
EXIT_COLDSTART = 5
EXIT_MODEL_FILE = 6

DEFAULTS = {
    "format": "csv",
    "threshold": 3.0,
    "split": "chronological",
    "seed": 0,
    "deterministic": True,
    "ks": list(DEFAULT_KS),
    "ndcg_depth": DEFAULT_NDCG_DEPTH,
    "k": 50,
    "beta": 1.0,
    "alpha": 0.0,
    "lam": 1.0,
    "power_iterations": 7,
    "holdout_fraction": 0.05,
}


def _ks(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file of option values (flags win)")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    p.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    p.add_argument("-v", "--verbose", action="store_true")


def _hyper_flags(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int, help="latent dimension")
    p.add_argument("--beta", type=float, help="popularity sensitivity")
    p.add_argument("--alpha", type=float, help="loss weighting (>= -1)")
    p.add_argument("--lam", "--lambda", dest="lam", type=float, help="ridge regularization (> 0)")
    p.add_argument("--power-iterations", type=int)


def _eval_flags(p: argparse.ArgumentParser):
    p.add_argument("--ks", type=_ks, help="comma-separated cutoffs, default 5,10,20,50")
    p.add_argument("--ndcg-depth", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nceplrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="binarize a ratings file and write train/valid/test splits")
    _common(p)
    p.add_argument("--ratings", type=Path, required=True)
    p.add_argument("--format", help="preset (csv, movielens-csv, ml100k, recbole) or delim=..,columns=..,header")
    p.add_argument("--threshold", type=float, help="keep ratings strictly above this value")
    p.add_argument("--split", choices=["chronological", "random"])
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one model and print its training time")
    _common(p)
    _hyper_flags(p)
    p.add_argument("--data", type=Path, required=True, help="directory written by prepare")
    p.add_argument("--model", required=True, choices=[k.value for k in Kind])
    p.add_argument("--params", type=Path, help="hyperparameter JSON (e.g. grid-search best file)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="rank held-out items and write a metrics report")
    _common(p)
    _eval_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model-file", type=Path, required=True)
    p.add_argument("--target", choices=["valid", "test"], default="test")
    p.add_argument("--buckets", action="store_true", help="add per user-activity bucket means")
    p.add_argument("--per-user", action="store_true", help="include per-user metric values")
    p.add_argument("--out", default="-")

    p = sub.add_parser("grid-search", help="tune hyperparameters on the validation split")
    _common(p)
    _eval_flags(p)
    _hyper_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", required=True, choices=[k.value for k in Kind])
    p.add_argument("--grid", help="JSON grid file, or 'default' for the standard ranges", default="default")
    p.add_argument("--metric", default="NDCG")
    p.add_argument("--best-out", type=Path, required=True)
    p.add_argument("--report", default="-")

    p = sub.add_parser("coldstart", help="score held-out users through the learned projection")
    _common(p)
    _hyper_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--models", default="NCE-PLRec,PLRec", help="comma-separated kinds (two gives a difference)")
    p.add_argument("--params", type=Path, action="append", default=[], help="best-hyperparameter file; repeatable")
    p.add_argument("--heldout", type=Path, help="file of held-out user ids, one per line")
    p.add_argument("--holdout-fraction", type=float)
    p.add_argument("--cutoff", type=int, default=50)
    p.add_argument("--out", default="-")

    p = sub.add_parser("report-popularity", help="popularity of each model's first recommendation")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model-files", type=Path, nargs="+", required=True)
    p.add_argument("--out", default="-")

    p = sub.add_parser("reproduce", help="tune all models and write test, popularity and cold-start reports")
    _common(p)
    _eval_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--grid", default="default")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--timing", action="store_true", help="also time NCE-PLRec against NCE-PLRec-W")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Flags override config-file values, which override defaults."""
    config = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text())
    merged = dict(DEFAULTS)
    merged.update({k.replace("-", "_"): v for k, v in config.items()})
    merged.update({k: v for k, v in vars(args).items() if v is not None})
    return merged


def _hyper(cfg: dict, params_file: Path | None = None) -> Hyperparameters:
    values = {f.name: cfg[f.name] for f in fields(Hyperparameters) if f.name in cfg}
    if params_file is not None:
        doc = json.loads(Path(params_file).read_text())
        values.update(doc.get("hyper", doc))
        values["seed"] = cfg["seed"]
    return Hyperparameters(**values)


def _grid(spec: str) -> dict:
    if spec == "default":
        return DEFAULT_GRID
    return json.loads(Path(spec).read_text())


def cmd_prepare(cfg) -> int:
    fmt = RatingsFormat.parse(cfg["format"])
    split, maps = experiment.prepare_split(cfg["ratings"], fmt, cfg["threshold"], cfg["split"], cfg["seed"])
    dataio.save_split(split, maps, cfg["out"])
    print(
        f"users={maps.shape[0]} items={maps.shape[1]} "
        f"train={split.train.nnz} valid={split.valid.nnz} test={split.test.nnz}"
    )
    return 0


def cmd_train(cfg) -> int:
    hyper = _hyper(cfg, cfg.get("params"))
    split, maps = dataio.load_split(cfg["data"])
    start = time.perf_counter()
    model = train(cfg["model"], split.train, hyper)
    seconds = time.perf_counter() - start
    model.user_ids, model.item_ids = maps.user_ids, maps.item_ids
    save_model(model, cfg["out"])
    print(f"model={Kind(cfg['model']).value} train_seconds={seconds:.6f}")
    return 0


def cmd_evaluate(cfg) -> int:
    split, _ = dataio.load_split(cfg["data"])
    model = load_model(cfg["model_file"])
    target = split.test if cfg["target"] == "test" else split.valid
    extra = split.valid if cfg["target"] == "test" else None
    report = evaluate(model, split.train, target, extra, ks=cfg["ks"], ndcg_depth=cfg["ndcg_depth"])
    doc = {
        "model": model.kind.value,
        "target": cfg["target"],
        "metrics": experiment.metrics_document(report),
    }
    if cfg.get("per_user"):
        doc["users"] = report.users
        doc["per_user"] = report.per_user
    if cfg.get("buckets"):
        counts = row_nnz(split.train)[report.users]
        doc["buckets"] = [
            {"bucket": b.index, "upper_edge": b.upper_edge, "user_count": int(b.users.size),
             "mean": b.mean, "std": b.std}
            for b in user_buckets(counts, report.per_user)
        ]
    write_report(doc, cfg["out"])
    return 0


def cmd_grid_search(cfg) -> int:
    split, _ = dataio.load_split(cfg["data"])
    kind = Kind(cfg["model"])
    base = _hyper(cfg)
    points = experiment.kind_grid(kind, _grid(cfg["grid"]), base)
    def valid_metric(model):
        r = evaluate(model, split.train, split.valid, ks=cfg["ks"], ndcg_depth=cfg["ndcg_depth"])
        return r.metrics[cfg["metric"]].mean

    result = grid_search(lambda h: train(kind, split.train, h), points, valid_metric)
    doc = experiment.grid_document(kind, result)
    doc["metric"] = cfg["metric"]
    write_report({"kind": kind.value, "hyper": asdict(result.best), "value": result.best_value}, cfg["best_out"])
    write_report(doc, cfg["report"])
    return 0


def cmd_coldstart(cfg) -> int:
    split, maps = dataio.load_split(cfg["data"])
    kinds = [Kind(k) for k in cfg["models"].split(",") if k]
    for kind in kinds:
        if not kind.has_weights:
            raise ColdStartUnsupported(f"cold-start unsupported for this model ({kind.value})")
    from_files = {}
    for path in cfg.get("params") or []:
        doc = json.loads(Path(path).read_text())
        from_files[Kind(doc["kind"])] = path
    hypers = {kind: _hyper(cfg, from_files.get(kind)) for kind in kinds}
    heldout = None
    if cfg.get("heldout"):
        ids = [line.strip() for line in Path(cfg["heldout"]).read_text().splitlines() if line.strip()]
        heldout = [maps.user_index[i] for i in ids]
    doc = experiment.coldstart_study(
        split, hypers, heldout, cfg["holdout_fraction"], cfg["seed"], k=cfg["cutoff"]
    )
    doc["heldout_user_ids"] = [maps.user_ids[i] for i in doc["heldout_users"]]
    write_report(doc, cfg["out"])
    return 0


def cmd_report_popularity(cfg) -> int:
    split, _ = dataio.load_split(cfg["data"])
    pop = col_nnz(split.train)
    top1 = {}
    for path in cfg["model_files"]:
        model = load_model(path)
        name = model.kind.value if model.kind.value not in top1 else f"{model.kind.value}:{Path(path).name}"
        top1[name] = top1_items(model, split.train)
    write_report({"max_item_count": int(pop.max()), "models": top1_popularity_distribution(top1, pop)}, cfg["out"])
    return 0


def cmd_reproduce(cfg) -> int:
    split, _ = dataio.load_split(cfg["data"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc = experiment.reproduce(split, cfg["seed"], _grid(cfg["grid"]), ks=cfg["ks"], ndcg_depth=cfg["ndcg_depth"])
    write_report(doc["test"], out / "test_metrics.json")
    write_report(doc["grid"], out / "grid.json")
    write_report(doc["best"], out / "best.json")
    write_report(doc["popularity"], out / "popularity.json")
    if doc["coldstart"] is not None:
        write_report(doc["coldstart"], out / "coldstart.json")
    if cfg.get("timing"):
        hyper = Hyperparameters(**doc["best"][Kind.NCE_PLREC.value])
        timing = experiment.timing_comparison(split.train, hyper)
        for name, seconds in timing.items():
            print(f"model={name} train_seconds={seconds:.6f}")
    for name, metrics in doc["test"].items():
        print(f"model={name} NDCG={metrics['NDCG']['mean']:.6f}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "grid-search": cmd_grid_search,
    "coldstart": cmd_coldstart,
    "report-popularity": cmd_report_popularity,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve(args)
        with deterministic(cfg["deterministic"]):
            return COMMANDS[args.command](cfg)
    except (FormatError, EmptyMatrixError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ColdStartUnsupported as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COLDSTART
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL_FILE
    except InvalidHyperparameters as exc:
        print(f"error: invalid hyperparameters: {exc}", file=sys.stderr)
        return EXIT_HYPER
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
