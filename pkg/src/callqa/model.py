"""A fitted transform -> (RBM) -> k-means chain and the steps that build it."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cluster import (KMeansModel, assign_classes_by_size, kmeans_fit, kmeans_predict,
                      predict_classes)
from .errors import InvalidInputError
from .rbm import (MinMaxScaler, RbmHyper, RbmModel, hidden_features, minmax_scale_apply,
                  minmax_scale_fit, train_rbm)
from .transform import TransformModel, fit_transform_model

SCHEMA_VERSION = 1
# fractions enter the transforms as percentages; Yeo-Johnson is not scale-free
PERCENT = 100.0
# pipeline names and fitted-model kinds both map to the report prefix
TRANSFORM_TAGS = {"none": "", "identity": "", "zscore": "ZN_", "power": "PT_",
                  "yeo-johnson": "PT_"}


def derive_seed(master: int, *path: int) -> int:
    """A 32-bit seed that depends only on ``master`` and ``path``."""
    return int(np.random.SeedSequence([int(master), *path]).generate_state(1)[0])


def arm_name(transform: str, rbm: bool) -> str:
    """``k-means``, ``ZN_k-means``, ``PT_RBM_k-means`` and so on."""
    return f"{TRANSFORM_TAGS[transform]}{'RBM_' if rbm else ''}k-means"


@dataclass(frozen=True)
class Head:
    """Everything fitted after the transform."""

    scaler: MinMaxScaler | None
    rbm: RbmModel | None
    kmeans: KMeansModel

    def embed(self, z) -> np.ndarray:
        if self.rbm is None:
            return np.asarray(z, dtype=float)
        return hidden_features(self.rbm, minmax_scale_apply(self.scaler, z))

    def predict(self, z) -> np.ndarray:
        return predict_classes(self.kmeans, self.embed(z))


def fit_head(z_train, hyper: RbmHyper | None, rbm_seed: int, kmeans_seed: int,
             n_init: int = 10) -> Head:
    """Fit the optional RBM and the two-cluster k-means on transformed
    training features, then label clusters by size."""
    z = np.asarray(z_train, dtype=float)
    scaler = rbm = None
    feats = z
    if hyper is not None:
        scaler = minmax_scale_fit(z)
        v = minmax_scale_apply(scaler, z)
        rbm, _ = train_rbm(v, hyper, rbm_seed)
        feats = hidden_features(rbm, v)
    km = kmeans_fit(feats, k=2, seed=kmeans_seed, n_init=n_init)
    km = assign_classes_by_size(km, kmeans_predict(km, feats))
    return Head(scaler, rbm, km)


@dataclass(frozen=True)
class FittedModel:
    transform: TransformModel
    head: Head
    input_scale: float = PERCENT

    @property
    def name(self) -> str:
        return arm_name(self.transform.kind, self.head.rbm is not None)

    def predict(self, x) -> np.ndarray:
        return self.head.predict(self.transform.apply(np.asarray(x, dtype=float)
                                                      * self.input_scale))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.name,
            "input_scale": self.input_scale,
            "transform": self.transform.to_dict(),
            "scaler": None if self.head.scaler is None else self.head.scaler.to_dict(),
            "rbm": None if self.head.rbm is None else self.head.rbm.to_dict(),
            "kmeans": self.head.kmeans.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported model schema {doc.get('schema_version')!r}")
        head = Head(
            None if doc["scaler"] is None else MinMaxScaler.from_dict(doc["scaler"]),
            None if doc["rbm"] is None else RbmModel.from_dict(doc["rbm"]),
            KMeansModel.from_dict(doc["kmeans"]),
        )
        return cls(TransformModel.from_dict(doc["transform"]), head, float(doc["input_scale"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def fit_model(x_train, transform: str, hyper: RbmHyper | None, rbm_seed: int,
              kmeans_seed: int, n_init: int = 10) -> FittedModel:
    """Fit the whole chain on a matrix of fractions."""
    x = np.asarray(x_train, dtype=float) * PERCENT
    tm = fit_transform_model(transform, x)
    return FittedModel(tm, fit_head(tm.apply(x), hyper, rbm_seed, kmeans_seed, n_init))
