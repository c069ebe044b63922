"""End-to-end runner: config, data split, the five experiment arms, synthetic
data and the silence KPI."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError
from .features import Dataset, FeatureVector, load_feature_csv
from .metrics import MODES, confusion, lookup, metrics_block
from .model import PERCENT, FittedModel, arm_name, derive_seed, fit_head
from .rbm import RbmHyper
from .search import (KMEANS_SEED_TAG, RBM_SEED_TAG, GridSpec, SearchConfig, grid_search,
                     logspace)
from .transform import fit_transform_model

SCHEMA_VERSION = 1
TRANSFORMS = ("none", "zscore", "power")
ARMS = {
    "k-means": ("none", False),
    "ZN_k-means": ("zscore", False),
    "PT_k-means": ("power", False),
    "ZN_RBM_k-means": ("zscore", True),
    "PT_RBM_k-means": ("power", True),
}
SELECTION_METRICS = tuple(f"{m}_{a}" for m in ("recall", "precision", "f1") for a in MODES) + (
    "mce",)


# --------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class PipelineConfig:
    """Flat, versioned run configuration.

    With ``feature_learning == "rbm"`` exactly one of the fixed
    hyperparameters (``rbm_hidden``, ``rbm_learning_rate``,
    ``rbm_batch_size``) or the grid (``grid_hidden``, ``grid_batch_sizes``
    and either ``grid_learning_rates`` or ``grid_logspace``) must be given.
    """

    schema_version: int = SCHEMA_VERSION
    transform: str = "none"
    feature_learning: str = "none"
    rbm_hidden: int | None = None
    rbm_learning_rate: float | None = None
    rbm_batch_size: int | None = None
    rbm_epochs: int = 20
    grid_hidden: tuple[int, ...] | None = None
    grid_learning_rates: tuple[float, ...] | None = None
    grid_logspace: tuple[float, float, int] | None = None
    grid_batch_sizes: tuple[int, ...] | None = None
    k: int = 2
    n_init: int = 10
    selection_metric: str = "recall_weighted"
    seed: int = 1
    workers: int = 1
    data: str | None = None
    output: str | None = None
    figures: str | None = None

    def __post_init__(self):
        for key in ("grid_hidden", "grid_learning_rates", "grid_logspace", "grid_batch_sizes"):
            v = getattr(self, key)
            if isinstance(v, list):
                object.__setattr__(self, key, tuple(v))
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported value {self.schema_version!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"transform: expected one of {TRANSFORMS}, got {self.transform!r}")
        if self.feature_learning not in ("none", "rbm"):
            raise ConfigError(f"feature_learning: expected 'none' or 'rbm', "
                              f"got {self.feature_learning!r}")
        if self.k != 2:
            raise ConfigError(f"k: only k = 2 is supported, got {self.k}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"selection_metric: unknown metric {self.selection_metric!r}")
        if self.rbm_epochs < 1:
            raise ConfigError("rbm_epochs: must be >= 1")
        if self.n_init < 1:
            raise ConfigError("n_init: must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        paths = [p for p in (self.data, self.output, self.figures) if p]
        if len(set(paths)) != len(paths):
            raise ConfigError("data/output/figures: paths must be distinct")
        if self.feature_learning == "rbm":
            fixed = [self.rbm_hidden, self.rbm_learning_rate, self.rbm_batch_size]
            grid = [self.grid_hidden, self.grid_learning_rates or self.grid_logspace,
                    self.grid_batch_sizes]
            has_fixed = any(v is not None for v in fixed)
            has_grid = any(v is not None for v in grid)
            if has_fixed == has_grid:
                raise ConfigError("rbm_*/grid_*: give exactly one of fixed RBM "
                                  "hyperparameters or a grid")
            if has_fixed and any(v is None for v in fixed):
                raise ConfigError("rbm_hidden/rbm_learning_rate/rbm_batch_size: all three "
                                  "are required")
            if has_grid:
                if self.grid_learning_rates and self.grid_logspace:
                    raise ConfigError("grid_learning_rates/grid_logspace: give only one")
                if any(v is None for v in grid):
                    raise ConfigError("grid_hidden/grid_batch_sizes/grid_learning_rates: "
                                      "all grid axes are required")
                try:
                    self.grid_spec()
                except ValueError as exc:
                    raise ConfigError(f"grid_*: {exc}") from None
            if has_fixed:
                try:
                    self.rbm_hyper()
                except ValueError as exc:
                    raise ConfigError(f"rbm_*: {exc}") from None

    @property
    def uses_grid(self) -> bool:
        return self.feature_learning == "rbm" and self.grid_hidden is not None

    def grid_spec(self) -> GridSpec:
        rates = self.grid_learning_rates
        if rates is None:
            lo, hi, count = self.grid_logspace
            rates = logspace(float(lo), float(hi), int(count))
        return GridSpec(tuple(int(h) for h in self.grid_hidden), tuple(float(r) for r in rates),
                        tuple(int(b) for b in self.grid_batch_sizes))

    def rbm_hyper(self) -> RbmHyper:
        return RbmHyper(float(self.rbm_learning_rate), int(self.rbm_batch_size),
                        int(self.rbm_hidden), int(self.rbm_epochs))

    @property
    def arm(self) -> str:
        return arm_name(self.transform, self.feature_learning == "rbm")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config key")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        return cls.from_dict(doc)

    def override(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        unknown = sorted(set(changes) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config key")
        return replace(self, **changes)


def for_arm(base: PipelineConfig, arm: str) -> PipelineConfig:
    """``base`` rewritten to run one of the five named arms.

    RBM arms keep the base grid or fixed hyperparameters; the others drop them.
    """
    if arm not in ARMS:
        raise ConfigError(f"arm: unknown model {arm!r}; expected one of {list(ARMS)}")
    transform, rbm = ARMS[arm]
    if rbm:
        return replace(base, transform=transform, feature_learning="rbm")
    return replace(base, transform=transform, feature_learning="none",
                   rbm_hidden=None, rbm_learning_rate=None, rbm_batch_size=None,
                   grid_hidden=None, grid_learning_rates=None, grid_logspace=None,
                   grid_batch_sizes=None)


def default_compare_config(**overrides) -> PipelineConfig:
    """The reduced benchmark grid {2, 20} x {0.01, 0.1} x {8, 64}."""
    base = PipelineConfig(grid_hidden=(2, 20), grid_learning_rates=(0.01, 0.1),
                          grid_batch_sizes=(8, 64), feature_learning="rbm")
    return base.override(**overrides)


# --------------------------------------------------------------------------
# data


def split_dataset(dataset: Dataset) -> tuple[Dataset, Dataset]:
    """Unlabeled rows train, labeled rows validate."""
    train = Dataset([r for r in dataset.rows if r.label is None])
    val = Dataset([r for r in dataset.rows if r.label is not None])
    if len(val) == 0:
        raise DataError("no labeled rows: the validation split is empty")
    if len(train) == 0:
        raise DataError("every row is labeled: the unlabeled training split is empty")
    return train, val


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SynthSpec:
    """Per-class Dirichlet draws over (speech, music, noise, silence).

    Non-malpractice calls may come from two components: regular calls and,
    with probability ``hold_fraction``, calls dominated by hold music.
    """

    n_total: int = 20_000
    malpractice_fraction: float = 0.03
    labeled_fraction: float = 0.022
    alpha_malpractice: tuple[float, float, float, float] = (11.46, 1.92, 2.5, 5.26)
    alpha_normal: tuple[float, float, float, float] = (54.84, 0.45, 1.72, 0.96)
    # share of non-malpractice calls drawn from alpha_hold (long hold music)
    hold_fraction: float = 0.07
    alpha_hold: tuple[float, float, float, float] = (9.29, 19.11, 0.49, 8.98)
    seed: int = 1
    start_date: str = "2016-01-01"
    n_days: int = 4 * 365

    def __post_init__(self):
        if self.n_total < 0:
            raise ConfigError("n_total: must be >= 0")
        for name in ("malpractice_fraction", "labeled_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name}: must lie in (0, 1), got {v}")
        if not 0 <= self.hold_fraction < 1:
            raise ConfigError(f"hold_fraction: must lie in [0, 1), got {self.hold_fraction}")
        for name in ("alpha_malpractice", "alpha_normal", "alpha_hold"):
            a = getattr(self, name)
            if len(a) != 4 or any(not x > 0 for x in a):
                raise ConfigError(f"{name}: need four positive concentrations")
        if self.n_days < 1:
            raise ConfigError("n_days: must be >= 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _round_simplex(p: np.ndarray) -> np.ndarray:
    """Round rows to 6 decimals, keeping the sum at 1 by adjusting the largest entry."""
    q = np.round(p, 6)
    top = np.argmax(q, axis=1)
    rows = np.arange(q.shape[0])
    q[rows, top] = np.round(1.0 - (q.sum(axis=1) - q[rows, top]), 6)
    return q


def synth_dataset(spec: SynthSpec = SynthSpec()) -> Dataset:
    """Seeded synthetic calls.

    Exactly ``round(n_total * malpractice_fraction)`` rows are malpractice
    and ``round(n_total * labeled_fraction)`` rows carry labels, split between
    the classes in proportion to their sizes. Features are pre-rounded to the
    CSV's six decimals so files and in-memory data agree.
    """
    n = spec.n_total
    if n == 0:
        return Dataset([])
    rng = np.random.default_rng(spec.seed)
    n_pos = _half_up(n * spec.malpractice_fraction)
    y = np.zeros(n, dtype=int)
    y[:n_pos] = 1
    y = y[rng.permutation(n)]
    feats = np.empty((n, 4))
    feats[y == 1] = rng.dirichlet(spec.alpha_malpractice, size=n_pos)
    neg = np.flatnonzero(y == 0)
    hold = rng.random(neg.size) < spec.hold_fraction
    feats[neg[~hold]] = rng.dirichlet(spec.alpha_normal, size=int((~hold).sum()))
    feats[neg[hold]] = rng.dirichlet(spec.alpha_hold, size=int(hold.sum()))
    feats = _round_simplex(feats)

    n_lab = _half_up(n * spec.labeled_fraction)
    n_lab_pos = min(n_pos, _half_up(n_lab * n_pos / n))
    n_lab_neg = min(n - n_pos, n_lab - n_lab_pos)
    labeled = np.zeros(n, dtype=bool)
    labeled[rng.choice(np.flatnonzero(y == 1), size=n_lab_pos, replace=False)] = True
    labeled[rng.choice(np.flatnonzero(y == 0), size=n_lab_neg, replace=False)] = True

    durations = np.round(rng.gamma(4.0, 30.0, size=n) + 1.0, 3)
    start = dt.date.fromisoformat(spec.start_date)
    offsets = rng.integers(0, spec.n_days, size=n)
    width = len(str(n))
    rows = [
        FeatureVector(f"call-{i:0{width}d}", float(durations[i]), *map(float, feats[i]),
                      label=int(y[i]) if labeled[i] else None,
                      timestamp=start + dt.timedelta(days=int(offsets[i])))
        for i in range(n)
    ]
    return Dataset(rows)


# --------------------------------------------------------------------------
# KPI


@dataclass(frozen=True)
class KpiRow:
    period: str
    mean_silence: float
    n_calls: int


def kpi_report(dataset: Dataset, period: str = "year") -> list[KpiRow]:
    """Mean silence fraction per calendar year or month, oldest first."""
    if period not in ("year", "month"):
        raise ConfigError(f"period: expected 'year' or 'month', got {period!r}")
    missing = [r.call_id for r in dataset.rows if r.timestamp is None]
    if missing:
        raise DataError(f"rows without a date: {', '.join(missing[:20])}"
                        + (" ..." if len(missing) > 20 else ""))
    groups: dict[str, list[float]] = defaultdict(list)
    for r in dataset.rows:
        key = f"{r.timestamp.year:04d}" if period == "year" else r.timestamp.strftime("%Y-%m")
        groups[key].append(r.pct_silence)
    # fsum makes the mean independent of summation order
    return [KpiRow(k, math.fsum(v) / len(v), len(v)) for k, v in sorted(groups.items())]


def kpi_csv(rows: list[KpiRow]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version", "period", "mean_pct_silence", "n_calls"])
    for r in rows:
        w.writerow([SCHEMA_VERSION, r.period, repr(r.mean_silence), r.n_calls])
    return buf.getvalue().encode("utf-8")


# --------------------------------------------------------------------------
# running


def load_dataset(config: PipelineConfig) -> Dataset:
    if config.data is None:
        raise ConfigError("data: no input dataset given")
    try:
        return load_feature_csv(Path(config.data).read_bytes())
    except OSError as exc:
        raise DataError(f"data: cannot read {config.data}: {exc}") from None


def dataset_summary(train: Dataset, val: Dataset) -> dict:
    y = val.labels()
    return {
        "n_rows": len(train) + len(val),
        "n_train": len(train),
        "n_validation": len(val),
        "n_validation_pos": int(np.sum(y == 1)),
        "n_validation_neg": int(np.sum(y == 0)),
    }


@dataclass
class RunResult:
    report: dict
    model: FittedModel
    search: object | None = field(default=None, repr=False)


def fit(config: PipelineConfig, train: Dataset, val: Dataset | None = None) -> RunResult:
    """Fit the configured arm on ``train``; a grid needs ``val`` for selection.

    The returned report has no metrics block; :func:`evaluate` adds one.
    """
    t0 = time.perf_counter()
    x_train = train.matrix() * PERCENT
    tm = fit_transform_model(config.transform, x_train)
    z_train = tm.apply(x_train)
    kmeans_seed = derive_seed(config.seed, KMEANS_SEED_TAG)
    search = None
    chosen = None
    if config.uses_grid:
        if val is None:
            raise DataError("grid search needs labeled validation rows")
        y_val = val.labels()
        if np.unique(y_val).size < 2:
            raise DataError("validation rows must contain both classes")
        search = grid_search(
            z_train, tm.apply(val.matrix() * PERCENT), y_val, config.grid_spec(),
            SearchConfig(config.seed, config.rbm_epochs, config.selection_metric,
                         config.n_init, config.workers))
        head = search.best_head
        best = search.best
        chosen = {"n_hidden": best.n_hidden, "learning_rate": best.learning_rate,
                  "batch_size": best.batch_size, "epochs": config.rbm_epochs,
                  "rbm_seed": best.rbm_seed, "grid_index": best.index}
    else:
        hyper = config.rbm_hyper() if config.feature_learning == "rbm" else None
        rbm_seed = derive_seed(config.seed, RBM_SEED_TAG, 0)
        head = fit_head(z_train, hyper, rbm_seed, kmeans_seed, config.n_init)
        if hyper is not None:
            chosen = {"n_hidden": hyper.n_hidden, "learning_rate": hyper.learning_rate,
                      "batch_size": hyper.batch_size, "epochs": hyper.epochs,
                      "rbm_seed": rbm_seed, "grid_index": None}
    model = FittedModel(tm, head, PERCENT)
    report = {
        "schema_version": SCHEMA_VERSION,
        "generator": f"callqa {__version__}",
        "model": config.arm,
        "config": config.to_dict(),
        "dataset": {"n_train": len(train)},
        "hyperparameters": chosen,
        "kmeans_seed": kmeans_seed,
        "search": None if search is None else search.to_dict(),
        "timing": {"fit_s": time.perf_counter() - t0},
    }
    return RunResult(report, model, search)


def evaluate(model: FittedModel, val: Dataset) -> dict:
    y = val.labels()
    if np.any(y < 0):
        raise DataError("evaluation rows must all be labeled")
    if y.size == 0:
        raise DataError("no labeled rows to evaluate")
    return metrics_block(confusion(y, model.predict(val.matrix())))


def run_pipeline(config: PipelineConfig, dataset: Dataset | None = None) -> dict:
    """Fit on the unlabeled rows, score on the labeled rows, and return the
    report (also written to ``config.output`` when set)."""
    if dataset is None:
        dataset = load_dataset(config)
    train, val = split_dataset(dataset)
    if np.unique(val.labels()).size < 2:
        raise DataError("labeled validation rows must contain both classes")
    res = fit(config, train, val)
    t0 = time.perf_counter()
    report = res.report
    report["dataset"] = dataset_summary(train, val)
    report["metrics"] = evaluate(res.model, val)
    report["timing"]["evaluate_s"] = time.perf_counter() - t0
    if config.output:
        Path(config.output).write_text(dumps_report(report))
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n"


def strip_timing(doc):
    """Copy of a report with every timing field removed, for comparisons."""
    if isinstance(doc, dict):
        return {k: strip_timing(v) for k, v in doc.items()
                if k not in ("timing", "wall_time_s")}
    if isinstance(doc, list):
        return [strip_timing(v) for v in doc]
    return doc


# --------------------------------------------------------------------------
# five-arm comparison

COMPARE_COLUMNS = ["schema_version", "model", "recall", "f1", "mce", "recall_pos", "f1_pos",
                   "precision", "batch_size", "learning_rate", "hidden_units",
                   "tp", "fp", "fn", "tn"]


def compare(base: PipelineConfig, dataset: Dataset, arms=tuple(ARMS)) -> dict:
    """Run each arm with ``base``'s seed and grid; rows follow Table-2 order."""
    t0 = time.perf_counter()
    rows = []
    reports = {}
    for arm in arms:
        cfg = replace(for_arm(base, arm), output=None)
        rep = run_pipeline(cfg, dataset)
        reports[arm] = rep
        rows.append(comparison_row(rep, base.selection_metric))
    return {
        "schema_version": SCHEMA_VERSION,
        "generator": f"callqa {__version__}",
        "selection_metric": base.selection_metric,
        "seed": base.seed,
        "rows": rows,
        "reports": reports,
        "timing": {"total_s": time.perf_counter() - t0},
    }


def comparison_row(report: dict, selection_metric: str = "recall_weighted") -> dict:
    m = report["metrics"]
    hp = report["hyperparameters"] or {}
    metric = selection_metric.split("_")[-1] if selection_metric != "mce" else "weighted"
    return {
        "model": report["model"],
        "recall": lookup(m, f"recall_{metric}"),
        "f1": lookup(m, f"f1_{metric}"),
        "precision": lookup(m, f"precision_{metric}"),
        "mce": m["mce"],
        "recall_pos": m["recall"]["pos"],
        "f1_pos": m["f1"]["pos"],
        "batch_size": hp.get("batch_size"),
        "learning_rate": hp.get("learning_rate"),
        "hidden_units": hp.get("n_hidden"),
        **m["confusion"],
    }


def comparison_csv(result: dict) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for row in result["rows"]:
        out = []
        for col in COMPARE_COLUMNS:
            v = SCHEMA_VERSION if col == "schema_version" else row[col]
            if v is None:
                out.append("" if col in ("batch_size", "learning_rate", "hidden_units")
                           else "n/a")
            elif isinstance(v, float):
                out.append(f"{v:.6f}")
            else:
                out.append(v)
        w.writerow(out)
    return buf.getvalue().encode("utf-8")


# --------------------------------------------------------------------------
# schema


def report_schema() -> dict:
    return json.loads(resources.files("callqa").joinpath("schemas/report.schema.json")
                      .read_text())


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` breaks the schema."""
    import jsonschema

    jsonschema.validate(report, report_schema())
