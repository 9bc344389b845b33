"""Tabular datasets: ingestion, encoding, splitting and synthetic generation.

A :class:`TabularDataset` keeps the decoded values in a data frame and
encodes on demand: continuous columns are standardized with statistics taken
from the training rows, binary columns become 0/1, and categoricals are
one-hot expanded in the category order stored on the schema.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import seeding
from .causal_graph import ConceptGraph, topological_order
from .errors import IngestionError, SchemaError

KINDS = ("continuous", "binary", "categorical")
ROLES = ("sensitive", "covariate", "target")
MISSING = ("?", "")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    role: str
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind == "categorical" and len(self.categories) < 2:
            raise SchemaError(f"{self.name}: categorical columns need at least 2 categories")
        if self.kind == "binary" and len(self.categories) not in (0, 2):
            raise SchemaError(f"{self.name}: binary columns take 0 or 2 category labels")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1

    @property
    def encoded_names(self) -> list[str]:
        if self.kind == "categorical":
            return [f"{self.name}={c}" for c in self.categories]
        return [self.name]


def validate_schema(schema: Sequence[ColumnSpec]) -> None:
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")
    if sum(c.role == "target" for c in schema) != 1:
        raise SchemaError("schema needs exactly one target column")
    if not any(c.role == "sensitive" for c in schema):
        raise SchemaError("schema needs at least one sensitive column")


@dataclass
class TabularDataset:
    """Column-typed table with role tags, split labels and scaler state.

    ``meta`` carries dataset-specific extras (ground truth for synthetic data,
    binarization thresholds) and is persisted with the archive.
    """

    schema: list[ColumnSpec]
    frame: pd.DataFrame
    split_labels: np.ndarray
    scaler: dict[str, tuple[float, float]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_schema(self.schema)
        self.frame = self.frame[[c.name for c in self.schema]].reset_index(drop=True)
        self.split_labels = np.asarray(self.split_labels, dtype=object)
        if len(self.split_labels) != len(self.frame):
            raise SchemaError("split labels do not match row count")
        if self.frame.isna().any().any():
            raise SchemaError("dataset contains missing values")

    def __len__(self) -> int:
        return len(self.frame)

    # schema helpers -------------------------------------------------------

    def columns(self, role: str) -> list[ColumnSpec]:
        return [c for c in self.schema if c.role == role]

    @property
    def target(self) -> ColumnSpec:
        return self.columns("target")[0]

    @property
    def task(self) -> str:
        return "regression" if self.target.kind == "continuous" else "classification"

    def encoded_names(self, role: str | None = None) -> list[str]:
        cols = self.schema if role is None else self.columns(role)
        return [n for c in cols for n in c.encoded_names]

    # encoding -------------------------------------------------------------

    @property
    def rows(self) -> np.ndarray:
        return encode_frame(self.frame, self.schema, self.scaler)

    def block(self, role: str) -> np.ndarray:
        return encode_frame(self.frame, self.columns(role), self.scaler)

    def target_vector(self) -> np.ndarray:
        return self.block("target")[:, 0]

    # splits ---------------------------------------------------------------

    def mask(self, label: str) -> np.ndarray:
        return self.split_labels == label

    def subset(self, mask) -> "TabularDataset":
        mask = np.asarray(mask)
        return replace(
            self,
            frame=self.frame[mask].reset_index(drop=True),
            split_labels=self.split_labels[mask],
            meta={**self.meta, "row_ids": self.row_ids[mask].tolist()},
        )

    def train(self) -> "TabularDataset":
        return self.subset(self.mask("train"))

    def test(self) -> "TabularDataset":
        return self.subset(self.mask("test"))

    @property
    def row_ids(self) -> np.ndarray:
        ids = self.meta.get("row_ids")
        return np.arange(len(self)) if ids is None else np.asarray(ids)


# ---------------------------------------------------------------------------
# encoding primitives


def _binary_values(series: pd.Series, col: ColumnSpec) -> np.ndarray:
    if col.categories:
        lookup = {c: i for i, c in enumerate(col.categories)}
        try:
            return series.map(lambda v: lookup[v]).to_numpy(dtype=float)
        except KeyError as exc:
            raise SchemaError(f"{col.name}: unexpected value {exc.args[0]!r}") from None
    values = series.to_numpy(dtype=float)
    if not np.isin(values, (0.0, 1.0)).all():
        raise SchemaError(f"{col.name}: binary column holds values other than 0/1")
    return values


def encode_frame(frame: pd.DataFrame, schema: Sequence[ColumnSpec], scaler=None) -> np.ndarray:
    scaler = scaler or {}
    blocks = []
    for col in schema:
        s = frame[col.name]
        if col.kind == "continuous":
            mean, std = scaler.get(col.name, (0.0, 1.0))
            blocks.append(((s.to_numpy(dtype=float) - mean) / std)[:, None])
        elif col.kind == "binary":
            blocks.append(_binary_values(s, col)[:, None])
        else:
            codes = pd.Categorical(s, categories=col.categories).codes
            if (codes < 0).any():
                bad = s[codes < 0].iloc[0]
                raise SchemaError(f"{col.name}: value {bad!r} not among declared categories")
            blocks.append(np.eye(len(col.categories))[codes])
    if not blocks:
        return np.zeros((len(frame), 0))
    return np.hstack(blocks)


def decode_matrix(matrix, schema: Sequence[ColumnSpec], scaler=None) -> pd.DataFrame:
    """Inverse of :func:`encode_frame`; categoricals decode by argmax."""
    matrix = np.asarray(matrix, dtype=float)
    scaler = scaler or {}
    out = {}
    pos = 0
    for col in schema:
        chunk = matrix[:, pos:pos + col.width]
        pos += col.width
        if col.kind == "continuous":
            mean, std = scaler.get(col.name, (0.0, 1.0))
            out[col.name] = chunk[:, 0] * std + mean
        elif col.kind == "binary":
            bits = (chunk[:, 0] > 0.5).astype(int)
            out[col.name] = [col.categories[b] for b in bits] if col.categories else bits
        else:
            out[col.name] = [col.categories[k] for k in chunk.argmax(axis=1)]
    if pos != matrix.shape[1]:
        raise SchemaError(f"matrix width {matrix.shape[1]} does not match schema width {pos}")
    return pd.DataFrame(out)


def fit_scaler(frame: pd.DataFrame, schema: Sequence[ColumnSpec], mask=None) -> dict:
    """Per-column (mean, std) of continuous columns over the masked rows."""
    scaler = {}
    for col in schema:
        if col.kind != "continuous":
            continue
        values = frame[col.name].to_numpy(dtype=float)
        if mask is not None:
            values = values[np.asarray(mask)]
        if values.size == 0:
            raise SchemaError("cannot fit scaler on zero rows")
        mean = float(values.mean())
        std = float(values.std())
        scaler[col.name] = (mean, std if std > 0 else 1.0)
    return scaler


def standardize(dataset: TabularDataset) -> TabularDataset:
    """Bake the current standardization into the frame and refit on train rows."""
    frame = dataset.frame.copy()
    for col in dataset.schema:
        if col.kind == "continuous":
            mean, std = dataset.scaler.get(col.name, (0.0, 1.0))
            frame[col.name] = (frame[col.name].to_numpy(dtype=float) - mean) / std
    out = replace(dataset, frame=frame)
    out.scaler = fit_scaler(frame, dataset.schema, dataset.mask("train"))
    return out


# ---------------------------------------------------------------------------
# splitting


def split(dataset: TabularDataset, train_fraction: float = 0.7, seed: int = 0) -> TabularDataset:
    """Seeded train/test split; refits the scaler on the training rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    if n == 0:
        raise SchemaError("cannot split an empty dataset")
    n_train = math.floor(train_fraction * n + 1e-9)
    order = seeding.rng(seed, "split").permutation(n)
    labels = np.full(n, "test", dtype=object)
    labels[order[:n_train]] = "train"
    out = replace(dataset, split_labels=labels)
    out.scaler = fit_scaler(out.frame, out.schema, out.mask("train"))
    return out


# ---------------------------------------------------------------------------
# ingestion


def _read_csv(path, required: Sequence[str]) -> pd.DataFrame:
    frame = pd.read_csv(
        path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8"
    )
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
    frame = frame.apply(lambda s: s.str.strip())
    return frame


def _drop_missing(frame: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    bad = frame[list(columns)].isin(MISSING).any(axis=1)
    return frame[~bad].reset_index(drop=True)


def _to_numeric(frame: pd.DataFrame, column: str) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    if values.isna().any():
        row = int(np.flatnonzero(values.isna().to_numpy())[0])
        raise IngestionError(f"column {column!r}: cannot parse {frame[column].iloc[row]!r}", row)
    return values.astype(float)


def _all_train(frame: pd.DataFrame) -> np.ndarray:
    return np.full(len(frame), "train", dtype=object)


ADULT_COLUMNS = {
    "age": "age",
    "race": "race",
    "sex": "sex",
    "native_country": "native-country",
    "marital": "marital-status",
    "relationship": "relationship",
    "workclass": "workclass",
    "hours": "hours-per-week",
    "occupation": "occupation",
    "education": "education-num",
    "income": "income",
}


def load_adult(path, columns: dict[str, str] | None = None) -> TabularDataset:
    """Load the concatenated UCI Adult CSV.

    Rows with any missing field are dropped. Sensitive attributes are made
    binary so the situation test can flip them: race as White/other, native
    country as United-States/other, and age split at the median of the
    cleaned data. The median is stored in ``meta["age_threshold"]``.
    """
    names = {**ADULT_COLUMNS, **(columns or {})}
    raw = _read_csv(path, list(names.values()))
    raw = _drop_missing(raw, list(raw.columns))

    age = _to_numeric(raw, names["age"])
    threshold = float(age.median()) if len(age) else 0.0
    frame = pd.DataFrame({
        "race": np.where(raw[names["race"]] == "White", "White", "Other"),
        "age": (age >= threshold).astype(int),
        "sex": raw[names["sex"]].to_numpy(),
        "native_country": np.where(
            raw[names["native_country"]] == "United-States", "United-States", "Other"),
        "marital": raw[names["marital"]].to_numpy(),
        "relationship": raw[names["relationship"]].to_numpy(),
        "workclass": raw[names["workclass"]].to_numpy(),
        "hours": _to_numeric(raw, names["hours"]).to_numpy(),
        "occupation": raw[names["occupation"]].to_numpy(),
        "education": _to_numeric(raw, names["education"]).to_numpy(),
        "income": raw[names["income"]].str.rstrip(".").to_numpy(),
    })
    bad_sex = set(frame["sex"]) - {"Female", "Male"}
    if bad_sex:
        raise SchemaError(f"unexpected sex values {sorted(bad_sex)}")
    bad_income = set(frame["income"]) - {"<=50K", ">50K"}
    if bad_income:
        raise SchemaError(f"unexpected income values {sorted(bad_income)}")

    def cats(name):
        values = sorted(set(frame[name]))
        if len(values) < 2:
            raise SchemaError(f"column {name!r} has fewer than two categories")
        return tuple(values)

    schema = [
        ColumnSpec("race", "binary", "sensitive", ("Other", "White")),
        ColumnSpec("age", "binary", "sensitive"),
        ColumnSpec("sex", "binary", "sensitive", ("Female", "Male")),
        ColumnSpec("native_country", "binary", "sensitive", ("Other", "United-States")),
        ColumnSpec("marital", "categorical", "covariate", cats("marital")),
        ColumnSpec("relationship", "categorical", "covariate", cats("relationship")),
        ColumnSpec("workclass", "categorical", "covariate", cats("workclass")),
        ColumnSpec("hours", "continuous", "covariate"),
        ColumnSpec("occupation", "categorical", "covariate", cats("occupation")),
        ColumnSpec("education", "continuous", "covariate"),
        ColumnSpec("income", "binary", "target", ("<=50K", ">50K")),
    ]
    labels = _all_train(frame)
    return TabularDataset(
        schema, frame, labels, fit_scaler(frame, schema), {"name": "adult", "age_threshold": threshold}
    )


LAW_COLUMNS = {"gender": "sex", "race": "race", "LSAT": "LSAT", "GPA": "UGPA", "FYA": "ZFYA"}


def load_law(path, columns: dict[str, str] | None = None, race_reference: str = "White") -> TabularDataset:
    """Load an LSAC law-school survey CSV.

    ``columns`` maps the canonical names ``gender, race, LSAT, GPA, FYA`` to
    the source header; the default matches the widely circulated
    ``law_data.csv``. Gender must take exactly two values (ordered by sort);
    race is reduced to ``race_reference`` versus everyone else.
    """
    names = {**LAW_COLUMNS, **(columns or {})}
    raw = _read_csv(path, list(names.values()))
    raw = _drop_missing(raw, list(names.values()))
    gender_values = sorted(set(raw[names["gender"]]))
    if len(gender_values) != 2:
        raise SchemaError(f"gender column must be binary, found {gender_values}")
    frame = pd.DataFrame({
        "gender": raw[names["gender"]].to_numpy(),
        "race": np.where(raw[names["race"]] == race_reference, race_reference, "Other"),
        "LSAT": _to_numeric(raw, names["LSAT"]).to_numpy(),
        "GPA": _to_numeric(raw, names["GPA"]).to_numpy(),
        "FYA": _to_numeric(raw, names["FYA"]).to_numpy(),
    })
    schema = [
        ColumnSpec("gender", "binary", "sensitive", tuple(gender_values)),
        ColumnSpec("race", "binary", "sensitive", ("Other", race_reference)),
        ColumnSpec("LSAT", "continuous", "covariate"),
        ColumnSpec("GPA", "continuous", "covariate"),
        ColumnSpec("FYA", "continuous", "target"),
    ]
    labels = _all_train(frame)
    return TabularDataset(schema, frame, labels, fit_scaler(frame, schema), {"name": "law"})


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Linear-Gaussian SCM over concepts, covariate readouts and a target.

    Each concept gets ``readouts_per_concept`` covariate columns. The first
    ``sensitive_readouts`` of them also receive ``sensitive_effect * A``;
    the rest are non-descendants of A.
    """

    n_samples: int
    graph: ConceptGraph
    noise_scale: float = 0.5
    sensitive_effect: float = 1.0
    seed: int = 0
    readouts_per_concept: int = 2
    sensitive_readouts: int = 1
    target_weights: tuple[float, ...] | None = None
    target_noise: float | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        if not 0 <= self.sensitive_readouts <= self.readouts_per_concept:
            raise ValueError("sensitive_readouts must lie in [0, readouts_per_concept]")
        if self.target_weights is not None and len(self.target_weights) != self.graph.n:
            raise ValueError("target_weights needs one weight per concept")

    @property
    def weights(self) -> np.ndarray:
        if self.target_weights is None:
            return np.ones(self.graph.n)
        return np.asarray(self.target_weights, dtype=float)


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    C = spec.graph.adjacency()
    order = topological_order(C)
    gen = seeding.rng(spec.seed, "synthetic")
    n, k = spec.n_samples, spec.graph.n

    a = gen.binomial(1, 0.5, size=n).astype(float)
    concepts = np.zeros((n, k))
    exogenous = gen.standard_normal((n, k))
    for j in order:
        concepts[:, j] = concepts @ C[:, j] + exogenous[:, j]

    data = {"a": a.astype(int)}
    schema = [ColumnSpec("a", "binary", "sensitive")]
    non_descendant = []
    noise = gen.standard_normal((n, k, spec.readouts_per_concept))
    for j in range(k):
        for r in range(spec.readouts_per_concept):
            name = f"x{j}_{r}"
            values = concepts[:, j] + spec.noise_scale * noise[:, j, r]
            if r < spec.sensitive_readouts:
                values = values + spec.sensitive_effect * a
            else:
                non_descendant.append(name)
            data[name] = values
            schema.append(ColumnSpec(name, "continuous", "covariate"))

    y_noise = spec.noise_scale if spec.target_noise is None else spec.target_noise
    data["y"] = concepts @ spec.weights + spec.sensitive_effect * a + y_noise * gen.standard_normal(n)
    schema.append(ColumnSpec("y", "continuous", "target"))

    frame = pd.DataFrame(data)
    meta = {
        "name": "synthetic",
        "concepts": concepts.tolist(),
        "target_weights": spec.weights.tolist(),
        "non_descendant": non_descendant,
    }
    labels = _all_train(frame)
    return TabularDataset(schema, frame, labels, fit_scaler(frame, schema), meta)


# ---------------------------------------------------------------------------
# archive


def save_dataset(dataset: TabularDataset, directory) -> Path:
    """Write ``schema.ini`` and ``rows.csv`` (encoded matrix + split) to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["dataset"] = {
        "n_rows": str(len(dataset)),
        "columns": ", ".join(c.name for c in dataset.schema),
        "meta": json.dumps({k: v for k, v in dataset.meta.items() if k != "concepts"}),
    }
    for col in dataset.schema:
        section = {"kind": col.kind, "role": col.role}
        if col.categories:
            section["categories"] = json.dumps(list(col.categories))
        if col.name in dataset.scaler:
            mean, std = dataset.scaler[col.name]
            section["mean"] = repr(mean)
            section["std"] = repr(std)
        cp[f"column:{col.name}"] = section
    with (directory / "schema.ini").open("w", encoding="utf-8") as fh:
        cp.write(fh)
    table = pd.DataFrame(dataset.rows, columns=dataset.encoded_names())
    table.insert(0, "split", dataset.split_labels)
    table.insert(0, "row_id", dataset.row_ids)
    table.to_csv(directory / "rows.csv", index=False, float_format="%.17g")
    return directory


def load_dataset(directory) -> TabularDataset:
    directory = Path(directory)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(directory / "schema.ini", encoding="utf-8"):
        raise SchemaError(f"{directory}: no schema.ini")
    schema, scaler = [], {}
    for name in [c.strip() for c in cp["dataset"]["columns"].split(",")]:
        sec = cp[f"column:{name}"]
        cats = tuple(json.loads(sec["categories"])) if "categories" in sec else ()
        schema.append(ColumnSpec(name, sec["kind"], sec["role"], cats))
        if "mean" in sec:
            scaler[name] = (float(sec["mean"]), float(sec["std"]))
    table = pd.read_csv(directory / "rows.csv", dtype={"split": str})
    frame = decode_matrix(table.iloc[:, 2:].to_numpy(dtype=float), schema, scaler)
    meta = json.loads(cp["dataset"]["meta"])
    meta["row_ids"] = table["row_id"].tolist()
    return TabularDataset(schema, frame, table["split"].to_numpy(dtype=object), scaler, meta)
