"""Exhaustive RBM hyperparameter grid search scored on the labeled split."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CallQAError, DataError, InvalidInputError, TrainingDivergedError
from .metrics import confusion, lookup, metrics_block
from .model import Head, derive_seed, fit_head
from .rbm import RbmHyper

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RBM_SEED_TAG = 1
KMEANS_SEED_TAG = 2

FULL_HIDDEN = (2, 20, 45, 70, 135, 170, 200)
FULL_LOGSPACE = (-3.0, 0.0, 20)
FULL_BATCHES = (8, 16, 64, 128)


def logspace(lo_exp: float, hi_exp: float, count: int) -> list[float]:
    """``10 ** (lo + i (hi - lo) / (count - 1))`` for ``i = 0 .. count - 1``.

    Endpoints are computed as exact powers of ten.
    """
    if count < 1:
        raise InvalidInputError("logspace count must be >= 1")
    if count == 1:
        return [10.0 ** lo_exp]
    step = (hi_exp - lo_exp) / (count - 1)
    out = [10.0 ** (lo_exp + i * step) for i in range(count)]
    out[-1] = 10.0 ** hi_exp
    return out


@dataclass(frozen=True)
class GridSpec:
    hidden_units: tuple[int, ...]
    learning_rates: tuple[float, ...]
    batch_sizes: tuple[int, ...]

    def __post_init__(self):
        for name in ("hidden_units", "learning_rates", "batch_sizes"):
            values = getattr(self, name)
            if not values:
                raise InvalidInputError(f"grid axis {name} is empty")
            if any(not v > 0 for v in values):
                raise InvalidInputError(f"grid axis {name} must be positive")

    @classmethod
    def from_logspace(cls, hidden_units: Sequence[int], lo_exp: float, hi_exp: float,
                      count: int, batch_sizes: Sequence[int]) -> "GridSpec":
        return cls(tuple(hidden_units), tuple(logspace(lo_exp, hi_exp, count)),
                   tuple(batch_sizes))

    @classmethod
    def full(cls) -> "GridSpec":
        return cls.from_logspace(FULL_HIDDEN, *FULL_LOGSPACE, FULL_BATCHES)

    def to_dict(self) -> dict:
        return {"hidden_units": list(self.hidden_units),
                "learning_rates": list(self.learning_rates),
                "batch_sizes": list(self.batch_sizes)}


def build_grid(spec: GridSpec) -> list[tuple[int, float, int]]:
    """Cartesian product ordered by hidden units, then rate, then batch size."""
    return [(int(h), float(r), int(b)) for h, r, b in
            itertools.product(spec.hidden_units, spec.learning_rates, spec.batch_sizes)]


@dataclass(frozen=True)
class SearchConfig:
    master_seed: int = 1
    epochs: int = 20
    selection_metric: str = "recall_weighted"
    n_init: int = 10
    workers: int = 1


@dataclass
class PointRecord:
    index: int
    n_hidden: int
    learning_rate: float
    batch_size: int
    rbm_seed: int
    metrics: dict | None
    failed: bool = False
    error: str | None = None
    wall_time_s: float = 0.0

    def score(self, metric: str) -> float | None:
        if self.failed or self.metrics is None:
            return None
        return lookup(self.metrics, metric)

    def to_dict(self) -> dict:
        return {
            "index": self.index, "n_hidden": self.n_hidden,
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "rbm_seed": self.rbm_seed, "failed": self.failed, "error": self.error,
            "metrics": self.metrics, "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointRecord":
        return cls(**d)


@dataclass
class SearchReport:
    grid: GridSpec
    records: list[PointRecord]
    best_index: int
    selection_metric: str
    master_seed: int
    kmeans_seed: int
    epochs: int
    # the winning head, kept in memory only
    best_head: Head | None = field(default=None, repr=False, compare=False)

    @property
    def best(self) -> PointRecord:
        return self.records[self.best_index]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "grid": self.grid.to_dict(),
            "selection_metric": self.selection_metric,
            "master_seed": self.master_seed,
            "kmeans_seed": self.kmeans_seed,
            "epochs": self.epochs,
            "best_index": self.best_index,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchReport":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported search schema {doc.get('schema_version')!r}")
        g = doc["grid"]
        return cls(GridSpec(tuple(g["hidden_units"]), tuple(g["learning_rates"]),
                            tuple(g["batch_sizes"])),
                   [PointRecord.from_dict(r) for r in doc["records"]], doc["best_index"],
                   doc["selection_metric"], doc["master_seed"], doc["kmeans_seed"],
                   doc["epochs"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schema_version", "index", "n_hidden", "learning_rate", "batch_size",
                    "rbm_seed", "failed", "recall_weighted", "recall_pos", "f1_weighted",
                    "f1_pos", "precision_weighted", "mce", "tp", "fp", "fn", "tn",
                    "wall_time_s"])
        for r in self.records:
            m = r.metrics
            vals = (["" if lookup(m, k) is None else repr(lookup(m, k))
                     for k in ("recall_weighted", "recall_pos", "f1_weighted", "f1_pos",
                               "precision_weighted", "mce")]
                    + [m["confusion"][k] for k in ("tp", "fp", "fn", "tn")]) if m else [""] * 10
            w.writerow([SCHEMA_VERSION, r.index, r.n_hidden, repr(r.learning_rate),
                        r.batch_size, r.rbm_seed, int(r.failed), *vals,
                        f"{r.wall_time_s:.3f}"])
        return buf.getvalue().encode("utf-8")


def select_best(records: Sequence[PointRecord], metric: str) -> int:
    """Index of the highest-scoring record; the earliest wins ties.

    ``mce`` is minimised, every other metric maximised.
    """
    sign = -1.0 if metric == "mce" else 1.0
    best, best_score = None, None
    for i, r in enumerate(records):
        s = r.score(metric)
        if s is None:
            continue
        if best is None or sign * s > sign * best_score:
            best, best_score = i, s
    if best is None:
        raise CallQAError("every grid point failed or had an undefined selection metric")
    return best


def _evaluate_point(args):
    index, (h, lr, bs), train_z, val_z, val_y, cfg, kmeans_seed = args
    rbm_seed = derive_seed(cfg.master_seed, RBM_SEED_TAG, index)
    t0 = time.perf_counter()
    try:
        head = fit_head(train_z, RbmHyper(lr, bs, h, cfg.epochs), rbm_seed, kmeans_seed,
                        cfg.n_init)
    except TrainingDivergedError as exc:
        rec = PointRecord(index, h, lr, bs, rbm_seed, None, True, str(exc),
                          time.perf_counter() - t0)
        return rec, None
    block = metrics_block(confusion(val_y, head.predict(val_z)))
    rec = PointRecord(index, h, lr, bs, rbm_seed, block, False, None, time.perf_counter() - t0)
    return rec, head


def grid_search(train_z, val_z, val_y, spec: GridSpec,
                cfg: SearchConfig = SearchConfig()) -> SearchReport:
    """Train one RBM + k-means per grid point and keep the best by
    ``cfg.selection_metric`` on the validation labels.

    Inputs are already transformed. Each point's RBM seed depends only on
    the master seed and the point's grid index, so ``cfg.workers`` never
    changes the result.
    """
    val_y = np.asarray(val_y, dtype=int)
    if val_y.size == 0:
        raise DataError("validation set is empty")
    if np.unique(val_y).size < 2:
        raise DataError("validation set must contain both classes")
    grid = build_grid(spec)
    kmeans_seed = derive_seed(cfg.master_seed, KMEANS_SEED_TAG)
    jobs = [(i, p, train_z, val_z, val_y, cfg, kmeans_seed) for i, p in enumerate(grid)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_evaluate_point, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_evaluate_point(job))
            rec = results[-1][0]
            log.info("grid point %d/%d h=%d lr=%.4g bs=%d -> %s", rec.index + 1, len(grid),
                     rec.n_hidden, rec.learning_rate, rec.batch_size,
                     "failed" if rec.failed else f"{cfg.selection_metric}="
                     f"{rec.score(cfg.selection_metric)}")
    records = [r for r, _ in results]
    best = select_best(records, cfg.selection_metric)
    return SearchReport(spec, records, best, cfg.selection_metric, cfg.master_seed,
                        kmeans_seed, cfg.epochs, results[best][1])
