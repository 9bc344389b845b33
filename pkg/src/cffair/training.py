"""Seeded minibatch optimization of the CF-VAE objective."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import seeding
from .cfvae import DTYPE, CfvaeConfig, CfvaeModel, LossBreakdown, save_checkpoint
from .datasets import TabularDataset
from .errors import ConfigError, DivergenceError

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")
LOSS_COLUMNS = ("epoch",) + LossBreakdown.NAMES


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    cfvae: CfvaeConfig = field(default_factory=CfvaeConfig)

    def validate(self, n_train: int | None = None) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if n_train is not None and self.batch_size > n_train:
            raise ConfigError(f"batch_size {self.batch_size} exceeds {n_train} training rows")
        if not 0 <= self.learning_rate < 1:
            raise ConfigError("learning_rate must lie in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        self.cfvae.validate()


@dataclass
class TrainReport:
    history: list[dict[str, float]]
    seconds: float
    checkpoint: Path | None = None

    def write_loss_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOSS_COLUMNS)
            for i, row in enumerate(self.history, start=1):
                writer.writerow([i] + [repr(row[n]) for n in LossBreakdown.NAMES])
        return path


def _blocks(dataset: TabularDataset):
    a = torch.as_tensor(dataset.block("sensitive"), dtype=DTYPE)
    x = torch.as_tensor(dataset.block("covariate"), dtype=DTYPE)
    return a, x


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        # a trailing singleton would make the TC estimate undefined
        if len(idx) >= 2:
            yield idx


def build_model(dataset: TabularDataset, config: CfvaeConfig) -> CfvaeModel:
    return CfvaeModel(config, dataset.columns("sensitive"), dataset.columns("covariate"))


def train(dataset: TabularDataset, config: TrainConfig, run_dir=None):
    """Fit a CF-VAE on the training rows of ``dataset``.

    Returns ``(report, model)``. With ``run_dir`` the config echo, the
    per-epoch loss CSV and the checkpoint are written there.
    """
    train_rows = dataset.train()
    n = len(train_rows)
    if n == 0:
        raise ConfigError("dataset has no training rows")
    config.validate(n)
    a, x = _blocks(train_rows)

    model = build_model(dataset, config.cfvae)
    if config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=config.learning_rate)
    shuffle = seeding.rng(config.seed, "shuffle")
    noise = torch.Generator().manual_seed(seeding.subseed(config.seed, "noise"))

    history: list[dict[str, float]] = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        sums = dict.fromkeys(LossBreakdown.NAMES, 0.0)
        seen = 0
        for idx in _batches(shuffle.permutation(n), config.batch_size):
            idx_t = torch.as_tensor(idx)
            parts = model.loss(a[idx_t], x[idx_t], n, generator=noise)
            if not torch.isfinite(parts.total):
                report = TrainReport(history, time.perf_counter() - started)
                raise DivergenceError(
                    f"non-finite loss in epoch {epoch + 1}; last finite epoch {len(history)}",
                    report)
            opt.zero_grad()
            parts.total.backward()
            opt.step()
            for name, value in parts.as_floats().items():
                sums[name] += value * len(idx)
            seen += len(idx)
        history.append({k: v / seen for k, v in sums.items()})
        log.debug("epoch %d total %.4f", epoch + 1, history[-1]["total"])

    report = TrainReport(history, time.perf_counter() - started)
    if run_dir is not None:
        write_run(run_dir, report, model, config)
    return report, model


def write_run(run_dir, report: TrainReport, model: CfvaeModel, config: TrainConfig) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    echo = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "optimizer": config.optimizer,
        "seed": config.seed,
        "cfvae": config.cfvae.to_dict(),
    }
    (run_dir / "train_config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    report.write_loss_csv(run_dir / "loss.csv")
    report.checkpoint = save_checkpoint(model, run_dir / "checkpoint.npz", {"train": echo})
    return run_dir


def transform_dataset(model: CfvaeModel, rows) -> np.ndarray:
    """Deterministic structured features for downstream predictors.

    ``rows`` is a :class:`TabularDataset` or an already encoded X block. Only
    the covariate columns are read, so sensitive values cannot leak in.
    """
    if isinstance(rows, TabularDataset):
        names = [c.name for c in rows.columns("covariate")]
        if names != [c.name for c in model.x_schema]:
            raise ConfigError("dataset covariates do not match the model's schema")
        rows = rows.block("covariate")
    return model.structured_means(rows)


def relative_decrease(history: list[dict[str, float]]) -> float:
    first, last = history[0]["total"], history[-1]["total"]
    return (first - last) / abs(first) if first else math.nan
