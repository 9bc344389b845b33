"""Downstream predictors and the repeated fit/predict protocol.

Three kinds per task: a closed-form linear model (least squares, or L2
logistic regression fitted by Newton iterations), an SGD-trained linear model
and a small MLP. Each spec is fitted ``repeats`` times with per-repeat seeds.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import SGDClassifier, SGDRegressor
from sklearn.neural_network import MLPClassifier, MLPRegressor

from . import seeding
from .datasets import encode_frame
from .training import transform_dataset
from .errors import ConfigError, DimensionError

log = logging.getLogger(__name__)

TASKS = ("regression", "classification")
KINDS = ("closed-form-linear", "sgd-linear", "mlp")
SHORT = {"closed-form-linear": "LR", "sgd-linear": "SGD", "mlp": "MLP"}
RIDGE = 1e-6


@dataclass(frozen=True)
class PredictorSpec:
    task: str
    kind: str
    repeats: int = 10
    seed: int = 0
    mlp_widths: tuple[int, ...] = (32,)
    max_iter: int = 200

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown predictor kind {self.kind!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")

    @property
    def name(self) -> str:
        return f"{SHORT[self.kind]}_{'R' if self.task == 'regression' else 'C'}"

    @property
    def deterministic(self) -> bool:
        return self.kind == "closed-form-linear"


def suite(task: str, repeats: int = 10, seed: int = 0, **kwargs) -> list[PredictorSpec]:
    return [PredictorSpec(task, kind, repeats, seed, **kwargs) for kind in KINDS]


@dataclass
class PredictionRun:
    spec: PredictorSpec
    params: list = field(default_factory=list)
    predictions: dict[str, np.ndarray] = field(default_factory=dict)

    def write_csv(self, path, row_ids: Mapping[str, np.ndarray] | None = None) -> Path:
        """Long format: ``row_id, repeat, eval_set, prediction``."""
        path = Path(path)
        row_ids = row_ids or {}
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row_id", "repeat", "eval_set", "prediction"])
            for name, preds in self.predictions.items():
                ids = row_ids.get(name, np.arange(preds.shape[1]))
                for r in range(preds.shape[0]):
                    for rid, p in zip(ids, preds[r]):
                        writer.writerow([int(rid), r, name, repr(float(p))])
        return path


# ---------------------------------------------------------------------------
# closed-form models


def _with_intercept(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def least_squares(X, y) -> np.ndarray:
    """Coefficients ``[intercept, w...]``; rank deficiency falls back to ridge."""
    Xi = _with_intercept(np.asarray(X, dtype=float))
    coef, _, rank, _ = np.linalg.lstsq(Xi, y, rcond=None)
    if rank < Xi.shape[1]:
        warnings.warn(f"singular normal equations; ridge fallback with lambda={RIDGE}",
                      RuntimeWarning, stacklevel=2)
        reg = RIDGE * np.eye(Xi.shape[1])
        reg[0, 0] = 0.0
        coef = np.linalg.solve(Xi.T @ Xi + reg, Xi.T @ y)
    return coef


def logistic_newton(X, y, l2: float = 1.0, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """L2-penalized logistic regression (intercept unpenalized) by Newton steps.

    Minimizes ``sum(logloss) + l2 / 2 * ||w||^2``, the same objective as
    scikit-learn's default ``LogisticRegression(C=1 / l2)``.
    """
    Xi = _with_intercept(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    penalty = np.full(Xi.shape[1], l2)
    penalty[0] = 0.0
    coef = np.zeros(Xi.shape[1])
    if np.all(y == y[0]):
        # separable by the intercept alone; Newton would walk off to infinity
        coef[0] = 30.0 if y[0] == 1 else -30.0
        return coef
    for _ in range(max_iter):
        p = expit(Xi @ coef)
        grad = Xi.T @ (p - y) + penalty * coef
        hess = (Xi * (p * (1 - p))[:, None]).T @ Xi + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(hess + RIDGE * np.eye(len(coef)), grad)
        coef -= step
        if np.max(np.abs(step)) < tol:
            break
    return coef


def _linear_predict(coef, X, task):
    score = _with_intercept(X) @ coef
    return score if task == "regression" else (score > 0).astype(float)


# ---------------------------------------------------------------------------


def _estimator(spec: PredictorSpec, seed: int):
    if spec.kind == "sgd-linear":
        if spec.task == "regression":
            return SGDRegressor(max_iter=spec.max_iter, tol=1e-4, random_state=seed)
        return SGDClassifier(loss="log_loss", max_iter=spec.max_iter, tol=1e-4, random_state=seed)
    if spec.task == "regression":
        return MLPRegressor(hidden_layer_sizes=spec.mlp_widths, max_iter=spec.max_iter,
                            random_state=seed)
    return MLPClassifier(hidden_layer_sizes=spec.mlp_widths, max_iter=spec.max_iter,
                         random_state=seed)


def fit_predict(spec: PredictorSpec, X_train, y_train, eval_sets: Mapping[str, np.ndarray]) -> PredictionRun:
    """Fit ``spec.repeats`` models and predict every evaluation set.

    Predictions are real values for regression and 0/1 labels for
    classification, stacked as ``repeats x n`` arrays.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    width = X_train.shape[1]
    for name, X in eval_sets.items():
        if np.asarray(X).shape[1] != width:
            raise DimensionError(f"eval set {name!r} has width {np.asarray(X).shape[1]}, "
                                 f"training features have {width}")
    if spec.task == "classification" and not np.isin(y_train, (0.0, 1.0)).all():
        raise ConfigError("classification targets must be binary")

    run = PredictionRun(spec)
    outputs: dict[str, list[np.ndarray]] = {name: [] for name in eval_sets}
    if spec.deterministic:
        coef = (least_squares(X_train, y_train) if spec.task == "regression"
                else logistic_newton(X_train, y_train))
        for _ in range(spec.repeats):
            run.params.append(coef)
            for name, X in eval_sets.items():
                outputs[name].append(_linear_predict(coef, np.asarray(X, dtype=float), spec.task))
    else:
        for r in range(spec.repeats):
            seed = seeding.subseed(spec.seed, f"{spec.name}/repeat{r}")
            est = _estimator(spec, seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                if spec.task == "classification" and len(np.unique(y_train)) == 1:
                    est = _ConstantClassifier(y_train[0])
                est.fit(X_train, y_train)
            run.params.append(est)
            for name, X in eval_sets.items():
                outputs[name].append(np.asarray(est.predict(np.asarray(X, dtype=float)), dtype=float))
    run.predictions = {name: np.vstack(preds) for name, preds in outputs.items()}
    return run


class _ConstantClassifier:
    def __init__(self, label):
        self.label = float(label)

    def fit(self, X, y):
        return self

    def predict(self, X):
        return np.full(len(X), self.label)


# ---------------------------------------------------------------------------
# feature sets


FEATURE_SETS = ("FULL", "X", "ZXP", "XNON")


def feature_sets(dataset, model=None, names=("FULL", "ZXP")) -> dict[str, np.ndarray]:
    """Named feature matrices for the rows of ``dataset``.

    ``FULL`` is the encoded sensitive block followed by the covariate block,
    ``X`` the covariates alone, ``ZXP`` the structured representation from a
    trained model and ``XNON`` the covariates known to be non-descendants of
    the sensitive attribute (synthetic data only).
    """
    out = {}
    for name in names:
        if name == "FULL":
            out[name] = np.hstack([dataset.block("sensitive"), dataset.block("covariate")])
        elif name == "X":
            out[name] = dataset.block("covariate")
        elif name == "ZXP":
            if model is None:
                raise ConfigError("ZXP features need a trained model")
            out[name] = transform_dataset(model, dataset)
        elif name == "XNON":
            flags = dataset.meta.get("non_descendant")
            if flags is None:
                raise ConfigError("XNON needs ground-truth non-descendant flags")
            cols = [c for c in dataset.columns("covariate") if c.name in set(flags)]
            out[name] = encode_frame(dataset.frame, cols, dataset.scaler)
        else:
            raise ConfigError(f"unknown feature set {name!r}")
    return out
