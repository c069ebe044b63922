"""Command-line entry point: ``callqa <verb> ...``.

Exit codes: 0 success, 2 config/validation error, 3 data error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .errors import (CallQAError, ConfigError, DataError, FitError, InvalidInputError,
                     InvalidTimelineError, ParseError, TrainingDivergedError)
from .features import (Dataset, SilenceConfig, compute_features, load_feature_csv,
                       load_timeline_csv, read_wav, segment_silence, write_feature_csv,
                       write_timeline_csv)
from .metrics import fmt
from .model import FittedModel

log = logging.getLogger("callqa")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        path.write_text(data)
    else:
        path.write_bytes(data)
    log.info("wrote %s", path)


def benchmark_doc() -> dict:
    return json.loads(resources.files("callqa").joinpath("configs/benchmark.json").read_text())


# --------------------------------------------------------------------------
# config handling


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline config (flags override --config keys)")
    g.add_argument("--config", help="flat JSON pipeline config")
    g.add_argument("--transform", choices=("none", "zscore", "power"))
    g.add_argument("--feature-learning", choices=("none", "rbm"))
    g.add_argument("--rbm-hidden", type=int)
    g.add_argument("--rbm-learning-rate", type=float)
    g.add_argument("--rbm-batch-size", type=int)
    g.add_argument("--rbm-epochs", type=int)
    g.add_argument("--grid-hidden", type=_ints, metavar="H,H,...")
    g.add_argument("--grid-learning-rates", type=_floats, metavar="R,R,...")
    g.add_argument("--grid-logspace", type=_floats, metavar="LO,HI,COUNT")
    g.add_argument("--grid-batch-sizes", type=_ints, metavar="B,B,...")
    g.add_argument("--full-grid", action="store_true",
                   help="the full 7 x 20 x 4 hyperparameter grid")
    g.add_argument("--selection-metric")
    g.add_argument("--n-init", type=int)
    g.add_argument("--workers", type=int)


CONFIG_FLAGS = ("transform", "feature_learning", "rbm_hidden", "rbm_learning_rate",
                "rbm_batch_size", "rbm_epochs", "grid_hidden", "grid_learning_rates",
                "grid_logspace", "grid_batch_sizes", "selection_metric", "n_init", "workers",
                "seed")


def build_config(args, base=None):
    """The ``--config`` file (or ``base``) with command-line flags applied.

    Fixed RBM flags replace any grid and vice versa, so a grid config can be
    narrowed to one point from the command line.
    """
    from .pipeline import PipelineConfig
    from .search import FULL_BATCHES, FULL_HIDDEN, FULL_LOGSPACE

    if args.config:
        try:
            doc = json.loads(_read_bytes(args.config))
        except (json.JSONDecodeError, DataError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        cfg = PipelineConfig.from_dict(doc.get("pipeline", doc))
    else:
        cfg = base if base is not None else PipelineConfig()

    changes = {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}
    if getattr(args, "full_grid", False):
        changes.update(grid_hidden=FULL_HIDDEN, grid_logspace=FULL_LOGSPACE,
                       grid_batch_sizes=FULL_BATCHES)
    if "grid_logspace" in changes:
        lo, hi, count = changes["grid_logspace"]
        changes["grid_logspace"] = (lo, hi, int(count))
        changes.setdefault("grid_learning_rates", None)
    elif "grid_learning_rates" in changes:
        changes["grid_logspace"] = None

    fixed = {"rbm_hidden", "rbm_learning_rate", "rbm_batch_size"}
    grid = {"grid_hidden", "grid_learning_rates", "grid_logspace", "grid_batch_sizes"}
    given = {k for k, v in changes.items() if v is not None}
    if given & fixed:
        changes.update({k: None for k in grid})
        changes.setdefault("feature_learning", "rbm")
    elif given & grid:
        changes.update({k: None for k in fixed})
        changes.setdefault("feature_learning", "rbm")
    return replace(cfg, **changes)


# --------------------------------------------------------------------------
# verbs


def cmd_segment(args) -> int:
    cfg = SilenceConfig(args.frame_ms / 1000, args.hop_ms / 1000, args.floor, args.rel,
                        args.min_segment)
    timelines = []
    for path in args.wav:
        samples, rate = read_wav(path)
        timelines.append(segment_silence(samples, rate, cfg, call_id=Path(path).stem))
    out = write_timeline_csv(timelines)
    if args.output:
        _write(args.output, out)
    else:
        sys.stdout.write(out.decode())
    return EXIT_OK


def _read_meta(path) -> dict[str, tuple[int | None, dt.date | None]]:
    reader = csv.DictReader(io.StringIO(_read_bytes(path).decode()))
    if reader.fieldnames is None or "call_id" not in reader.fieldnames:
        raise ParseError("metadata CSV needs a call_id column", 1)
    meta = {}
    for lineno, rec in enumerate(reader, start=2):
        label = (rec.get("label") or "").strip()
        date = (rec.get("date") or "").strip()
        if label not in ("", "0", "1"):
            raise ParseError(f"label must be empty, 0 or 1, got {label!r}", lineno)
        try:
            stamp = dt.date.fromisoformat(date) if date else None
        except ValueError:
            raise ParseError(f"date is not ISO-8601: {date!r}", lineno) from None
        meta[rec["call_id"]] = (int(label) if label else None, stamp)
    return meta


def cmd_features(args) -> int:
    timelines = load_timeline_csv(_read_bytes(args.timeline))
    meta = _read_meta(args.meta) if args.meta else {}
    rows = [compute_features(tl, *meta.get(tl.call_id, (None, None))) for tl in timelines]
    out = write_feature_csv(Dataset(rows))
    if args.output:
        _write(args.output, out)
    else:
        sys.stdout.write(out.decode())
    return EXIT_OK


def _synth_spec(args):
    from .pipeline import SynthSpec

    doc = dict(benchmark_doc()["synth"])
    if args.synth_config:
        doc = json.loads(_read_bytes(args.synth_config))
        doc = doc.get("synth", doc)
    for key in ("n_total", "malpractice_fraction", "labeled_fraction", "hold_fraction"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    if args.seed is not None:
        doc["seed"] = args.seed
    for key in ("alpha_malpractice", "alpha_normal", "alpha_hold"):
        if key in doc:
            doc[key] = tuple(doc[key])
    try:
        return SynthSpec(**doc)
    except TypeError as exc:
        raise ConfigError(f"synth: {exc}") from None


def cmd_synth(args) -> int:
    from .pipeline import synth_dataset

    ds = synth_dataset(_synth_spec(args))
    out = write_feature_csv(ds)
    if args.output:
        _write(args.output, out)
    else:
        sys.stdout.write(out.decode())
    log.info("%d calls, %d labeled", len(ds), ds.labeled_count)
    return EXIT_OK


def cmd_split(args) -> int:
    from .pipeline import split_dataset

    train, val = split_dataset(load_feature_csv(_read_bytes(args.data)))
    _write(args.train, write_feature_csv(train))
    _write(args.validation, write_feature_csv(val))
    print(f"train {len(train)}  validation {len(val)}")
    return EXIT_OK


def _dataset(args) -> Dataset:
    return load_feature_csv(_read_bytes(args.data))


def cmd_fit(args) -> int:
    from .pipeline import fit, split_dataset

    cfg = build_config(args)
    train, val = split_dataset(_dataset(args))
    res = fit(cfg, train, val)
    doc = {"fitted": res.model.to_dict(), "fit_report": res.report}
    _write(args.output, json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(f"fitted {res.model.name} on {len(train)} unlabeled calls")
    return EXIT_OK


def _print_metrics(name: str, m: dict) -> None:
    c = m["confusion"]
    print(f"{name}: tp={c['tp']} fp={c['fp']} fn={c['fn']} tn={c['tn']}  "
          f"recall(w)={fmt(m['recall']['weighted'])} f1(w)={fmt(m['f1']['weighted'])}  "
          f"recall(pos)={fmt(m['recall']['pos'])} mce={fmt(m['mce'])}")


def cmd_evaluate(args) -> int:
    from .pipeline import dataset_summary, dumps_report, evaluate, split_dataset

    doc = json.loads(_read_bytes(args.model))
    model = FittedModel.from_dict(doc["fitted"])
    ds = _dataset(args)
    val = Dataset([r for r in ds.rows if r.label is not None])
    if len(val) == 0:
        raise DataError("no labeled rows to evaluate")
    report = dict(doc.get("fit_report") or {})
    report["metrics"] = evaluate(model, val)
    try:
        train, _ = split_dataset(ds)
    except DataError:
        train = Dataset([])
    report["dataset"] = dataset_summary(train, val)
    _write(args.output, dumps_report(report)) if args.output else None
    _print_metrics(model.name, report["metrics"])
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = replace(build_config(args), data=args.data, output=args.output)
    report = run_pipeline(cfg)
    _print_metrics(report["model"], report["metrics"])
    return EXIT_OK


def cmd_search(args) -> int:
    from .pipeline import fit, split_dataset

    cfg = build_config(args)
    if not cfg.uses_grid:
        raise ConfigError("grid_*: search needs a hyperparameter grid")
    cfg = replace(cfg, data=args.data)
    train, val = split_dataset(_dataset(args))
    res = fit(cfg, train, val)
    rep = res.search
    out = Path(args.output)
    _write(out / "search.json", rep.to_json() + "\n")
    _write(out / "search.csv", rep.to_csv())
    if not args.no_figures:
        from .figures import plot_search
        plot_search(rep.to_dict(), out / "search.png")
    b = rep.best
    print(f"{len(rep.records)} points, best #{b.index}: hidden={b.n_hidden} "
          f"lr={b.learning_rate:.6g} batch={b.batch_size} "
          f"{rep.selection_metric}={fmt(b.score(rep.selection_metric))}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .pipeline import (comparison_csv, compare, default_compare_config, dumps_report,
                           split_dataset, synth_dataset)

    cfg = build_config(args, base=default_compare_config())
    if args.data:
        ds = _dataset(args)
    else:
        ds = synth_dataset(_synth_spec(args))
        log.info("using the synthetic benchmark (%d calls)", len(ds))
    split_dataset(ds)
    result = compare(cfg, ds)
    out = Path(args.output)
    _write(out / "comparison.csv", comparison_csv(result))
    _write(out / "comparison.json", dumps_report(result))
    if not args.no_figures:
        from .figures import plot_comparison, plot_confusions
        plot_comparison(result["rows"], out / "mce.png")
        plot_confusions(result["rows"], out / "confusion.png")
    print(f"{'model':<16} {'recall':>7} {'f1':>7} {'mce':>7}  hyperparameters")
    for r in result["rows"]:
        hp = "" if r["hidden_units"] is None else (
            f"h={r['hidden_units']} lr={r['learning_rate']:.4g} batch={r['batch_size']}")
        print(f"{r['model']:<16} {fmt(r['recall']):>7} {fmt(r['f1']):>7} "
              f"{fmt(r['mce']):>7}  {hp}")
    return EXIT_OK


def cmd_kpi(args) -> int:
    from .pipeline import kpi_csv, kpi_report

    rows = kpi_report(_dataset(args), args.period)
    out = kpi_csv(rows)
    if args.output:
        _write(args.output, out)
        if not args.no_figures:
            from .figures import plot_kpi
            plot_kpi(rows, Path(args.output).with_suffix(".png"), args.period)
    else:
        sys.stdout.write(out.decode())
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="callqa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, help="master seed for all randomness")
        return sp

    sp = verb("segment", cmd_segment, "energy-threshold silence segmentation of WAV files")
    sp.add_argument("wav", nargs="+")
    sp.add_argument("-o", "--output")
    sp.add_argument("--frame-ms", type=float, default=25.0)
    sp.add_argument("--hop-ms", type=float, default=10.0)
    sp.add_argument("--floor", type=float, default=1e-4, help="absolute RMS floor")
    sp.add_argument("--rel", type=float, default=0.1, help="factor on the median frame RMS")
    sp.add_argument("--min-segment", type=float, default=0.2, help="seconds")

    sp = verb("features", cmd_features, "timeline CSV -> feature CSV")
    sp.add_argument("timeline")
    sp.add_argument("--meta", help="CSV with call_id,label,date columns")
    sp.add_argument("-o", "--output")

    def synth_args(sp):
        sp.add_argument("--synth-config", help="JSON synthetic spec (default: benchmark)")
        sp.add_argument("--n", dest="n_total", type=int)
        sp.add_argument("--malpractice-fraction", type=float)
        sp.add_argument("--labeled-fraction", type=float)
        sp.add_argument("--hold-fraction", type=float)

    sp = verb("synth", cmd_synth, "generate the seeded synthetic dataset")
    synth_args(sp)
    sp.add_argument("-o", "--output")

    sp = verb("split", cmd_split, "labeled rows -> validation, unlabeled -> train")
    sp.add_argument("data")
    sp.add_argument("--train", required=True)
    sp.add_argument("--validation", required=True)

    sp = verb("fit", cmd_fit, "fit one configuration and save the model")
    sp.add_argument("--data", required=True)
    sp.add_argument("-o", "--output", required=True)
    add_config_args(sp)

    sp = verb("evaluate", cmd_evaluate, "score a saved model on labeled rows")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("-o", "--output")

    sp = verb("run", cmd_run, "fit and evaluate one configuration")
    sp.add_argument("--data", required=True)
    sp.add_argument("-o", "--output")
    add_config_args(sp)

    sp = verb("search", cmd_search, "RBM hyperparameter grid search")
    sp.add_argument("--data", required=True)
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.add_argument("--no-figures", action="store_true")
    add_config_args(sp)

    sp = verb("compare", cmd_compare, "run all five models and tabulate them")
    sp.add_argument("--data", help="feature CSV (default: synthetic benchmark)")
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.add_argument("--no-figures", action="store_true")
    synth_args(sp)
    add_config_args(sp)

    sp = verb("kpi", cmd_kpi, "mean silence per calendar period")
    sp.add_argument("data")
    sp.add_argument("--period", choices=("year", "month"), default="year")
    sp.add_argument("-o", "--output")
    sp.add_argument("--no-figures", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidInputError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, InvalidTimelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CallQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
