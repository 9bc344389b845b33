"""Situation-test auditing of downstream predictors.

Each audited individual is paired with a copy whose sensitive attributes are
inverted. A predictor's unfairness score compares its predictions on the
two: root-mean-square shift for regression, fraction of flipped labels for
classification.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import seeding
from .datasets import TabularDataset
from .errors import ConfigError, DimensionError, SchemaError
from .predictors import PredictorSpec, feature_sets, fit_predict

log = logging.getLogger(__name__)

LABELS = {"FULL": "Full", "X": "X only", "ZXP": "CF-VAE", "XNON": "Non-descendants"}


@dataclass
class AuditSet:
    original: TabularDataset
    matched: TabularDataset
    description: str = ""

    def __len__(self) -> int:
        return len(self.original)


def invert_sensitive(dataset: TabularDataset, rules: Mapping[str, tuple] | None = None) -> TabularDataset:
    """Flip every sensitive column.

    Binary columns swap their two values. Categorical columns need a rule
    ``(c1, c2)`` in ``rules``: rows at ``c1`` move to ``c2`` and vice versa,
    other categories stay put. Both cases are involutions.
    """
    rules = rules or {}
    frame = dataset.frame.copy()
    for col in dataset.columns("sensitive"):
        values = frame[col.name]
        if col.kind == "binary":
            if col.categories:
                lo, hi = col.categories
                frame[col.name] = values.map({lo: hi, hi: lo})
            else:
                frame[col.name] = 1 - values.astype(int)
        elif col.kind == "categorical" and col.name in rules:
            c1, c2 = rules[col.name]
            if c1 not in col.categories or c2 not in col.categories:
                raise SchemaError(f"{col.name}: inversion rule {rules[col.name]} names unknown categories")
            frame[col.name] = values.map(lambda v: c2 if v == c1 else c1 if v == c2 else v)
        else:
            raise SchemaError(f"sensitive column {col.name!r} ({col.kind}) has no inversion rule")
    return replace(dataset, frame=frame)


def build_audit_set(dataset: TabularDataset, selection: Mapping[str, object] | None = None,
                    limit: int | None = None, seed: int = 0,
                    rules: Mapping[str, tuple] | None = None) -> AuditSet:
    """Select audit rows from ``dataset`` and pair them with inverted copies.

    ``selection`` maps column names to required raw values (all must hold).
    When more than ``limit`` rows qualify, a seeded sample of ``limit`` rows
    is kept in original order.
    """
    mask = np.ones(len(dataset), dtype=bool)
    for name, value in (selection or {}).items():
        if name not in dataset.frame.columns:
            raise SchemaError(f"selection column {name!r} not in dataset")
        mask &= (dataset.frame[name] == value).to_numpy()
    idx = np.flatnonzero(mask)
    if limit is not None and len(idx) > limit:
        idx = np.sort(seeding.rng(seed, "audit").choice(idx, size=limit, replace=False))
    keep = np.zeros(len(dataset), dtype=bool)
    keep[idx] = True
    original = dataset.subset(keep)
    matched = invert_sensitive(original, rules)
    desc = " and ".join(f"{k} == {v!r}" for k, v in (selection or {}).items()) or "all rows"
    if limit is not None:
        desc += f", at most {limit}"
    return AuditSet(original, matched, desc)


def ufs_r(pred_original, pred_matched) -> float:
    a = np.asarray(pred_original, dtype=float)
    b = np.asarray(pred_matched, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"prediction lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ufs_c(pred_original, pred_matched) -> float:
    a = np.asarray(pred_original, dtype=float)
    b = np.asarray(pred_matched, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"prediction lengths differ: {a.shape} vs {b.shape}")
    if not (np.isin(a, (0.0, 1.0)).all() and np.isin(b, (0.0, 1.0)).all()):
        raise ValueError("UFS_C needs binary predictions")
    if a.size == 0:
        return 0.0
    return float(np.mean(a != b))


def rmse(pred, target) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(target)) ** 2)))


def accuracy(pred, target) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(target)))


@dataclass
class AuditCell:
    method: str
    feature_set: str
    predictor: str
    metric: str
    metric_mean: float
    metric_std: float
    ufs: str
    ufs_mean: float
    ufs_std: float
    structural_zero: bool
    predictions: str = ""


@dataclass
class AuditReport:
    """Accuracy/RMSE and UFS per (method, predictor); ``std`` is over repeats."""

    cells: list[AuditCell] = field(default_factory=list)

    FIELDS = ("method", "feature_set", "predictor", "metric", "metric_mean", "metric_std",
              "ufs", "ufs_mean", "ufs_std", "structural_zero", "predictions")

    def cell(self, method: str, predictor: str) -> AuditCell:
        for c in self.cells:
            if c.method == method and c.predictor == predictor:
                return c
        raise KeyError((method, predictor))

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(c.method for c in self.cells))

    @property
    def predictors(self) -> list[str]:
        return list(dict.fromkeys(c.predictor for c in self.cells))

    def extend(self, other: "AuditReport") -> "AuditReport":
        self.cells.extend(other.cells)
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        for c in self.cells:
            row = []
            for name in self.FIELDS:
                v = getattr(c, name)
                row.append(f"{v:.6f}" if isinstance(v, float) else str(v))
            writer.writerow(row)
        return buf.getvalue()

    def to_markdown(self) -> str:
        preds = self.predictors
        if not self.cells:
            return ""
        metric = self.cells[0].metric
        ufs = self.cells[0].ufs
        head = ["Method"] + [f"{metric} {p}" for p in preds] + [f"{ufs} {p}" for p in preds]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for m in self.methods:
            row = [m]
            for attr in ("metric", "ufs"):
                for p in preds:
                    try:
                        c = self.cell(m, p)
                    except KeyError:
                        row.append("")
                        continue
                    row.append(f"{getattr(c, attr + '_mean'):.3f} ± {getattr(c, attr + '_std'):.3f}")
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"

    def write(self, directory, stem: str = "audit") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        md_path = directory / f"{stem}.md"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        md_path.write_text(self.to_markdown(), encoding="utf-8")
        return csv_path, md_path


def evaluate(model, dataset: TabularDataset, specs: Sequence[PredictorSpec],
             names: Sequence[str], audit_set: AuditSet, labels: Mapping[str, str] | None = None,
             out_dir=None) -> AuditReport:
    """Fit every predictor on every feature set and score it.

    Predictors are trained on the training rows, scored on the test rows and
    audited on the (original, matched) pairs. Only ``FULL`` may see the
    sensitive block; every other feature set must come out identical across
    each matched pair, which is recorded as ``structural_zero``.
    """
    labels = {**LABELS, **(labels or {})}
    train, test = dataset.train(), dataset.test()
    y_train, y_test = train.target_vector(), test.target_vector()
    task = dataset.task
    if any(s.task != task for s in specs):
        raise ConfigError(f"predictor task does not match dataset task {task!r}")
    pred_dir = None
    if out_dir is not None:
        pred_dir = Path(out_dir) / "predictions"
        pred_dir.mkdir(parents=True, exist_ok=True)

    f_train = feature_sets(train, model, names)
    f_test = feature_sets(test, model, names)
    f_orig = feature_sets(audit_set.original, model, names)
    f_match = feature_sets(audit_set.matched, model, names)

    report = AuditReport()
    for name in names:
        identical = bool(np.array_equal(f_orig[name], f_match[name]))
        if name != "FULL" and not identical:
            raise AssertionError(f"feature set {name} changed under sensitive inversion")
        evals = {"test": f_test[name], "audit_original": f_orig[name], "audit_matched": f_match[name]}
        for spec in specs:
            run = fit_predict(spec, f_train[name], y_train, evals)
            preds = run.predictions
            if task == "regression":
                metric = [rmse(p, y_test) for p in preds["test"]]
                ufs = [ufs_r(a, b) for a, b in zip(preds["audit_original"], preds["audit_matched"])]
            else:
                metric = [accuracy(p, y_test) for p in preds["test"]]
                ufs = [ufs_c(a, b) for a, b in zip(preds["audit_original"], preds["audit_matched"])]
            method = labels.get(name, name)
            pred_file = ""
            if pred_dir is not None:
                slug = re.sub(r"[^A-Za-z0-9]+", "_", method).strip("_") or name
                path = pred_dir / f"{slug}__{spec.name}.csv"
                run.write_csv(path, {
                    "test": test.row_ids,
                    "audit_original": audit_set.original.row_ids,
                    "audit_matched": audit_set.matched.row_ids,
                })
                pred_file = str(path.relative_to(Path(out_dir)))
            report.cells.append(AuditCell(
                method=method, feature_set=name, predictor=spec.name,
                metric="RMSE" if task == "regression" else "Accuracy",
                metric_mean=float(np.mean(metric)), metric_std=float(np.std(metric)),
                ufs="UFS_R" if task == "regression" else "UFS_C",
                ufs_mean=float(np.mean(ufs)), ufs_std=float(np.std(ufs)),
                structural_zero=identical, predictions=pred_file,
            ))
    return report
