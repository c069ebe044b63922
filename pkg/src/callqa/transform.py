"""Feature-wise Gaussianizing transforms: z-score and Yeo-Johnson.

Box-Cox is exposed as a plain function only; percentage features are
frequently exactly zero, which it cannot take.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DimensionError, FitError, InvalidInputError

SCHEMA_VERSION = 1
LAMBDA_BOUNDS = (-5.0, 5.0)
LAMBDA_TOL = 1e-6


@dataclass(frozen=True)
class FeatureParams:
    mean: float
    std: float
    lmbda: float | None = None


@dataclass(frozen=True)
class TransformModel:
    kind: str  # "identity" | "zscore" | "yeo-johnson"
    per_feature: tuple[FeatureParams, ...]
    d: int

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "d": self.d,
            "per_feature": [
                {"lambda": p.lmbda, "mean": p.mean, "std": p.std} for p in self.per_feature
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TransformModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported transform schema {doc.get('schema_version')!r}")
        params = tuple(FeatureParams(p["mean"], p["std"], p["lambda"]) for p in doc["per_feature"])
        return cls(doc["kind"], params, int(doc["d"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TransformModel":
        return cls.from_dict(json.loads(text))

    def apply(self, x) -> np.ndarray:
        if self.kind == "identity":
            return _check_matrix(x, self.d).copy()
        if self.kind == "zscore":
            return zscore_apply(self, x)
        if self.kind == "yeo-johnson":
            return power_apply(self, x)
        raise InvalidInputError(f"unknown transform kind {self.kind!r}")


def _check_matrix(x, d: int | None = None, min_rows: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {x.shape}")
    if d is not None and x.shape[1] != d:
        raise DimensionError(f"expected {d} features, got {x.shape[1]}")
    if x.shape[0] < min_rows:
        raise FitError(f"need at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    return x


def identity_fit(train) -> TransformModel:
    x = _check_matrix(train)
    return TransformModel("identity", tuple(FeatureParams(0.0, 1.0) for _ in range(x.shape[1])),
                          x.shape[1])


# --------------------------------------------------------------------------
# z-score


def zscore_fit(train) -> TransformModel:
    x = _check_matrix(train, min_rows=2)
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    for j, s in enumerate(std):
        if not s > 0:
            raise FitError(f"feature {j} has zero variance")
    return TransformModel("zscore", tuple(FeatureParams(float(m), float(s))
                                          for m, s in zip(mean, std)), x.shape[1])


def zscore_apply(model: TransformModel, x) -> np.ndarray:
    x = _check_matrix(x, model.d)
    mean = np.array([p.mean for p in model.per_feature])
    std = np.array([p.std for p in model.per_feature])
    return (x - mean) / std


# --------------------------------------------------------------------------
# power transforms


def _power_branch(y: np.ndarray, lmbda: float) -> np.ndarray:
    """(y**lmbda - 1) / lmbda for y > 0, with the log limit at lmbda = 0."""
    if lmbda == 0:
        return np.log(y)
    return np.expm1(lmbda * np.log(y)) / lmbda


def box_cox(x, lmbda: float):
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        raise InvalidInputError("Box-Cox needs x > 0")
    out = _power_branch(arr, lmbda)
    return float(out) if np.ndim(x) == 0 else out


def yeo_johnson(x, lmbda: float):
    """Yeo-Johnson transform of a scalar or array for a fixed ``lmbda``."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or not math.isfinite(lmbda):
        raise InvalidInputError("yeo_johnson needs finite x and lambda")
    out = np.empty_like(arr)
    pos = arr >= 0
    neg = ~pos
    # expm1 keeps the lambda -> 0 and lambda -> 2 limits smooth
    out[pos] = _power_branch(arr[pos] + 1.0, lmbda)
    out[neg] = -_power_branch(1.0 - arr[neg], 2.0 - lmbda)
    if np.ndim(x) == 0:
        return float(out)
    return out


def yeo_johnson_loglik(column, lmbda: float) -> float:
    """Profile log-likelihood of ``lmbda`` under a normal model of the
    transformed column (biased variance)."""
    x = np.asarray(column, dtype=float)
    n = x.size
    y = yeo_johnson(x, lmbda)
    var = y.var()
    if not var > 0:
        return -math.inf
    jac = np.sum(np.sign(x) * np.log1p(np.abs(x)))
    return -0.5 * n * math.log(var) + (lmbda - 1.0) * jac


def fit_yeo_johnson_lambda(column, bounds=LAMBDA_BOUNDS) -> float:
    """Maximum-likelihood Yeo-Johnson exponent.

    A coarse scan over ``bounds`` picks the basin, then bounded Brent
    refines within one coarse step on each side.
    """
    x = np.asarray(column, dtype=float).ravel()
    if x.size < 2:
        raise FitError("need at least two values to fit lambda")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("column contains non-finite values")
    if np.ptp(x) == 0:
        raise FitError("cannot fit lambda on a constant column")
    lo, hi = bounds
    coarse = np.linspace(lo, hi, 101)
    ll = np.array([yeo_johnson_loglik(x, lm) for lm in coarse])
    k = int(np.argmax(ll))
    step = coarse[1] - coarse[0]
    a, b = max(lo, coarse[k] - step), min(hi, coarse[k] + step)
    res = minimize_scalar(lambda lm: -yeo_johnson_loglik(x, lm), bounds=(a, b),
                          method="bounded", options={"xatol": LAMBDA_TOL})
    best = float(res.x)
    if yeo_johnson_loglik(x, best) < ll[k]:
        best = float(coarse[k])
    if not math.isfinite(best):
        raise FitError("lambda estimate is not finite")
    return best


def power_fit(train) -> TransformModel:
    """Fit a Yeo-Johnson exponent per column, then standardize the
    transformed training columns to zero mean and unit sample std."""
    x = _check_matrix(train, min_rows=2)
    params = []
    for j in range(x.shape[1]):
        try:
            lm = fit_yeo_johnson_lambda(x[:, j])
        except FitError as exc:
            raise FitError(f"feature {j}: {exc}") from None
        y = yeo_johnson(x[:, j], lm)
        s = float(y.std(ddof=1))
        if not s > 0:
            raise FitError(f"feature {j} is constant after transformation")
        params.append(FeatureParams(float(y.mean()), s, lm))
    return TransformModel("yeo-johnson", tuple(params), x.shape[1])


def power_apply(model: TransformModel, x) -> np.ndarray:
    x = _check_matrix(x, model.d)
    out = np.empty_like(x)
    for j, p in enumerate(model.per_feature):
        out[:, j] = (yeo_johnson(x[:, j], p.lmbda) - p.mean) / p.std
    return out


def fit_transform_model(kind: str, train) -> TransformModel:
    """Dispatch on the pipeline's transform names."""
    if kind in ("none", "identity"):
        return identity_fit(train)
    if kind == "zscore":
        return zscore_fit(train)
    if kind in ("power", "yeo-johnson"):
        return power_fit(train)
    raise InvalidInputError(f"unknown transform {kind!r}")
