"""Bernoulli restricted Boltzmann machine trained with CD-1.

Visible units take real values in [0, 1] read as activation
probabilities, so transformed features go through a min-max adapter first.
Energy: ``E(v, h) = -v'Wh - b'v - c'h``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DimensionError, FitError, InvalidInputError, TrainingDivergedError

SCHEMA_VERSION = 1
INIT_STD = 0.01
MAX_ENUM_UNITS = 20


@dataclass(frozen=True)
class RbmHyper:
    learning_rate: float = 0.1
    batch_size: int = 16
    n_hidden: int = 2
    epochs: int = 20

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.n_hidden < 1 or self.epochs < 0:
            raise InvalidInputError("batch_size and n_hidden must be >= 1, epochs >= 0")


@dataclass(frozen=True)
class RbmModel:
    W: np.ndarray  # n_visible x n_hidden
    b: np.ndarray  # visible bias
    c: np.ndarray  # hidden bias
    hyper: RbmHyper = field(default_factory=RbmHyper)
    seed: int | None = None

    def __post_init__(self):
        nv, nh = self.W.shape
        if self.b.shape != (nv,) or self.c.shape != (nh,):
            raise DimensionError(f"bias shapes {self.b.shape}, {self.c.shape} "
                                 f"do not match W {self.W.shape}")

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))
                    and np.all(np.isfinite(self.c)))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_visible": self.n_visible,
            "n_hidden": self.n_hidden,
            "W": self.W.ravel().tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "hyperparameters": {
                "learning_rate": self.hyper.learning_rate,
                "batch_size": self.hyper.batch_size,
                "n_hidden": self.hyper.n_hidden,
                "epochs": self.hyper.epochs,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RbmModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported RBM schema {doc.get('schema_version')!r}")
        nv, nh = int(doc["n_visible"]), int(doc["n_hidden"])
        W = np.asarray(doc["W"], dtype=float).reshape(nv, nh)
        return cls(W, np.asarray(doc["b"], dtype=float), np.asarray(doc["c"], dtype=float),
                   RbmHyper(**doc["hyperparameters"]), doc.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RbmModel":
        return cls.from_dict(json.loads(text))


def rbm_init(n_visible: int, n_hidden: int, seed: int,
             hyper: RbmHyper | None = None) -> RbmModel:
    if n_visible < 1 or n_hidden < 1:
        raise InvalidInputError("RBM needs at least one visible and one hidden unit")
    if hyper is None:
        hyper = RbmHyper(n_hidden=n_hidden)
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, INIT_STD, size=(n_visible, n_hidden))
    return RbmModel(W, np.zeros(n_visible), np.zeros(n_hidden), hyper, seed)


# --------------------------------------------------------------------------
# [0, 1] adapter


@dataclass(frozen=True)
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "MinMaxScaler":
        return cls(np.asarray(doc["min"], dtype=float), np.asarray(doc["max"], dtype=float))


def minmax_scale_fit(train) -> MinMaxScaler:
    x = np.asarray(train, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise FitError("cannot fit scaling on an empty matrix")
    lo, hi = x.min(axis=0), x.max(axis=0)
    for j in np.flatnonzero(~(hi > lo)):
        raise FitError(f"feature {j} is constant; cannot scale to [0, 1]")
    return MinMaxScaler(lo, hi)


def minmax_scale_apply(params: MinMaxScaler, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != params.lo.size:
        raise DimensionError(f"expected {params.lo.size} features, got {x.shape[1]}")
    return np.clip((x - params.lo) / (params.hi - params.lo), 0.0, 1.0)


# --------------------------------------------------------------------------
# training


def _check_data(model: RbmModel, data) -> np.ndarray:
    v = np.asarray(data, dtype=float)
    if v.ndim != 2 or v.shape[1] != model.n_visible:
        raise DimensionError(f"expected n x {model.n_visible} data, got shape {v.shape}")
    return v


def cd1_epoch(model: RbmModel, data, rng: np.random.Generator,
              epoch: int | None = None) -> tuple[RbmModel, float]:
    """One pass of CD-1 over shuffled mini-batches.

    Returns the updated model and the mean squared reconstruction error
    ``mean ||v - v_neg||^2`` over the epoch's rows.
    """
    v_all = _check_data(model, data)
    hp = model.hyper
    eps = hp.learning_rate
    W, b, c = model.W.copy(), model.b.copy(), model.c.copy()
    order = rng.permutation(v_all.shape[0])
    sq_err = 0.0
    # overflow surfaces as non-finite parameters, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, order.size, hp.batch_size):
            v = v_all[order[start:start + hp.batch_size]]
            m = v.shape[0]
            h_pos = expit(v @ W + c)
            h_sample = (rng.random(h_pos.shape) < h_pos).astype(float)
            v_neg = expit(h_sample @ W.T + b)
            h_neg = expit(v_neg @ W + c)
            if eps:
                W += eps * (v.T @ h_pos - v_neg.T @ h_neg) / m
                b += eps * (v - v_neg).mean(axis=0)
                c += eps * (h_pos - h_neg).mean(axis=0)
            sq_err += float(np.sum((v - v_neg) ** 2))
    updated = replace(model, W=W, b=b, c=c)
    if not updated.is_finite():
        where = "" if epoch is None else f" at epoch {epoch}"
        raise TrainingDivergedError(f"RBM parameters became non-finite{where}", epoch)
    return updated, sq_err / max(1, v_all.shape[0])


def train_rbm(data, hyper: RbmHyper, seed: int,
              init: RbmModel | None = None) -> tuple[RbmModel, list[float]]:
    """Initialise (unless ``init`` is given) and run ``hyper.epochs`` CD-1 epochs.

    Both the initial weights and the sampling stream derive from ``seed``.
    """
    v = np.asarray(data, dtype=float)
    ss = np.random.SeedSequence(seed)
    init_seed, train_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    model = init if init is not None else rbm_init(v.shape[1], hyper.n_hidden, init_seed, hyper)
    model = replace(model, hyper=hyper, seed=seed)
    rng = np.random.default_rng(train_seed)
    errors = []
    for epoch in range(1, hyper.epochs + 1):
        model, err = cd1_epoch(model, v, rng, epoch)
        errors.append(err)
    return model, errors


def hidden_features(model: RbmModel, x) -> np.ndarray:
    """Hidden-unit activation probabilities ``sigmoid(v W + c)`` per row."""
    v = _check_data(model, x)
    return expit(v @ model.W + model.c)


# --------------------------------------------------------------------------
# exact quantities for small models


def _binary_states(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(-1, n)


def _check_enumerable(model: RbmModel) -> None:
    if model.n_visible + model.n_hidden > MAX_ENUM_UNITS:
        raise InvalidInputError(
            f"exact enumeration refused for {model.n_visible}+{model.n_hidden} units "
            f"(limit {MAX_ENUM_UNITS})")


def _neg_energy(model: RbmModel, V: np.ndarray, H: np.ndarray) -> np.ndarray:
    """-E(v, h) for every (row of V, row of H) pair, shape (len V, len H)."""
    return (V @ model.W) @ H.T + (V @ model.b)[:, None] + (H @ model.c)[None, :]


def exact_log_likelihood(model: RbmModel, data) -> float:
    """Sum of ``ln p(v)`` over the rows of ``data`` by enumerating every
    joint binary state."""
    _check_enumerable(model)
    V = _check_data(model, data)
    H = _binary_states(model.n_hidden)
    all_v = _binary_states(model.n_visible)
    log_z = float(logsumexp(_neg_energy(model, all_v, H)))
    unnorm = logsumexp(_neg_energy(model, V, H), axis=1)
    return float(np.sum(unnorm) - V.shape[0] * log_z)


def exact_gradient(model: RbmModel, data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of the mean log-likelihood w.r.t. (W, b, c), by enumeration."""
    _check_enumerable(model)
    V = _check_data(model, data)
    ph = expit(V @ model.W + model.c)
    all_v = _binary_states(model.n_visible)
    H = _binary_states(model.n_hidden)
    ne = _neg_energy(model, all_v, H)
    p = np.exp(ne - logsumexp(ne))
    model_vh = all_v.T @ p @ H
    dW = V.T @ ph / V.shape[0] - model_vh
    db = V.mean(axis=0) - p.sum(axis=1) @ all_v
    dc = ph.mean(axis=0) - p.sum(axis=0) @ H
    return dW, db, dc
