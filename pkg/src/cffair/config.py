"""INI experiment configuration.

Grammar (every section except ``[experiment]`` is optional)::

    [experiment]
    dataset = law | adult | synthetic
    path = data/law_data.csv        ; required for law and adult
    graph = graphs/law.graph        ; concept graph, sizes D_Zx
    out = runs/law
    seed = 0
    subsample = 10000               ; optional seeded row cap before the split

    [split]
    train_fraction = 0.7

    [columns]                       ; canonical name = source header
    GPA = UGPA

    [synthetic]
    n_samples = 5000
    noise_scale = 0.5
    sensitive_effect = 1.0
    readouts_per_concept = 2
    sensitive_readouts = 1
    target_weights = 1.0, 1.0

    [cfvae]                         ; CfvaeConfig fields, d_zx defaults to the graph size
    [train]                         ; epochs, batch_size, learning_rate, optimizer
    [predictors]                    ; kinds, repeats, mlp_widths, max_iter
    [audit]                         ; feature_sets, selection, limit, source, invert.<col>
    [ablation]                      ; arms, seeds

Relative paths resolve against the directory of the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import seeding
from .causal_graph import ConceptGraph, read_graph
from .cfvae import CfvaeConfig
from .datasets import (SyntheticSpec, TabularDataset, generate_synthetic, load_adult, load_law,
                       split)
from .errors import CffairError, ConfigError
from .predictors import FEATURE_SETS, KINDS, PredictorSpec
from .training import TrainConfig

DATASETS = ("law", "adult", "synthetic")
ARMS = ("full", "minus_m", "minus_mprime_tcr", "cfvae")
SOURCES = ("test", "all")
DEFAULT_SELECTION = {"adult": {"sex": "Female", "income": "<=50K"}}
DEFAULT_LIMIT = {"adult": 10000}
DEFAULT_SOURCE = {"adult": "all"}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    dataset: str
    out: Path
    seed: int = 0
    path: Path | None = None
    graph: ConceptGraph | None = None
    graph_path: Path | None = None
    subsample: int | None = None
    train_fraction: float = 0.7
    columns: dict[str, str] = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)
    cfvae: CfvaeConfig = field(default_factory=CfvaeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    predictor_kinds: tuple[str, ...] = KINDS
    repeats: int = 10
    mlp_widths: tuple[int, ...] = (32,)
    max_iter: int = 200
    feature_sets: tuple[str, ...] = ("FULL", "ZXP")
    selection: dict[str, str] = field(default_factory=dict)
    limit: int | None = None
    audit_source: str = "test"
    inversion: dict[str, tuple[str, str]] = field(default_factory=dict)
    arms: tuple[str, ...] = ARMS
    ablation_seeds: int = 3
    text: str = ""

    # -- derived ------------------------------------------------------------

    @property
    def task(self) -> str:
        return "regression" if self.dataset in ("law", "synthetic") else "classification"

    def predictor_specs(self, seed: int | None = None) -> list[PredictorSpec]:
        seed = self.seed if seed is None else seed
        return [PredictorSpec(self.task, k, self.repeats, seed, self.mlp_widths, self.max_iter)
                for k in self.predictor_kinds]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with a new root seed; model init draws from its own sub-seed."""
        cf = replace(self.cfvae, seed=seeding.subseed(seed, "model_init"))
        return replace(self, seed=seed, cfvae=cf, train=replace(self.train, seed=seed, cfvae=cf))

    def load_data(self) -> TabularDataset:
        if self.dataset == "synthetic":
            spec = SyntheticSpec(graph=self.graph, seed=self.seed, **self.synthetic)
            ds = generate_synthetic(spec)
        elif self.dataset == "law":
            ds = load_law(self.path, self.columns or None)
        else:
            ds = load_adult(self.path, self.columns or None)
        if self.subsample is not None and self.subsample < len(ds):
            idx = seeding.rng(self.seed, "subsample").choice(len(ds), self.subsample, replace=False)
            keep = [False] * len(ds)
            for i in idx:
                keep[i] = True
            ds = ds.subset(keep)
        return split(ds, self.train_fraction, self.seed)

    def validate(self) -> None:
        if self.dataset != "synthetic":
            if self.path is None or not self.path.is_file():
                raise ConfigError(f"data file not found: {self.path}")
        elif self.graph is None:
            raise ConfigError("synthetic data needs a graph")
        for name in self.feature_sets:
            if name not in FEATURE_SETS:
                raise ConfigError(f"unknown feature set {name!r}")
        for kind in self.predictor_kinds:
            if kind not in KINDS:
                raise ConfigError(f"unknown predictor kind {kind!r}")
        for arm in self.arms:
            if arm not in ARMS:
                raise ConfigError(f"unknown ablation arm {arm!r}")
        if self.audit_source not in SOURCES:
            raise ConfigError(f"audit source must be one of {SOURCES}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.repeats < 1 or self.ablation_seeds < 1:
            raise ConfigError("repeats and seeds must be positive")
        if self.graph is not None and self.cfvae.use_causal_constraints and self.graph.n != self.cfvae.d_zx:
            raise ConfigError(f"graph has {self.graph.n} concepts but d_zx = {self.cfvae.d_zx}")
        self.train.validate()


def _resolve(base: Path, value: str) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p)


def parse_config(text: str, base: Path | str = ".", seed: int | None = None,
                 out: str | None = None) -> ExperimentConfig:
    base = Path(base)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_section("experiment"):
        raise ConfigError("config needs an [experiment] section")

    def section(name):
        return cp[name] if cp.has_section(name) else {}

    try:
        exp = cp["experiment"]
        dataset = exp.get("dataset", "").strip()
        if dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {dataset!r}")
        root_seed = int(exp.get("seed", "0")) if seed is None else seed
        graph_path = _resolve(base, exp["graph"]) if "graph" in exp else None
        graph = None
        if graph_path is not None:
            if not graph_path.is_file():
                raise ConfigError(f"graph file not found: {graph_path}")
            graph = read_graph(graph_path)

        cf_sec = section("cfvae")
        cf_kwargs = {}
        for f in fields(CfvaeConfig):
            if f.name not in cf_sec or f.name in ("C", "seed"):
                continue
            raw = cf_sec[f.name]
            if f.name in ("encoder_widths", "decoder_widths"):
                cf_kwargs[f.name] = _ints(raw)
            elif f.name in ("use_causal_constraints", "learn_decoder_variance"):
                cf_kwargs[f.name] = cp.getboolean("cfvae", f.name)
            elif f.name in ("d_za", "d_zx"):
                cf_kwargs[f.name] = int(raw)
            elif f.name in ("gamma", "opr_weight"):
                cf_kwargs[f.name] = float(raw)
            else:
                cf_kwargs[f.name] = raw.strip()
        if graph is not None:
            cf_kwargs.setdefault("d_zx", graph.n)
            cf_kwargs.setdefault("d_za", cf_kwargs["d_zx"])
            cf_kwargs["C"] = graph.adjacency()
        cf_kwargs["seed"] = seeding.subseed(root_seed, "model_init")
        cfvae = CfvaeConfig(**cf_kwargs)

        tr = section("train")
        train = TrainConfig(
            epochs=int(tr.get("epochs", "200")),
            batch_size=int(tr.get("batch_size", "64")),
            learning_rate=float(tr.get("learning_rate", "1e-3")),
            optimizer=tr.get("optimizer", "adam").strip(),
            seed=root_seed,
            cfvae=cfvae,
        )

        syn = section("synthetic")
        synthetic = {}
        for key, conv in (("n_samples", int), ("noise_scale", float), ("sensitive_effect", float),
                          ("readouts_per_concept", int), ("sensitive_readouts", int),
                          ("target_noise", float)):
            if key in syn:
                synthetic[key] = conv(syn[key])
        if "target_weights" in syn:
            synthetic["target_weights"] = _floats(syn["target_weights"])
        if dataset == "synthetic":
            synthetic.setdefault("n_samples", 5000)

        pr = section("predictors")
        au = section("audit")
        selection = dict(DEFAULT_SELECTION.get(dataset, {}))
        if "selection" in au:
            selection = {}
            for item in _words(au["selection"]):
                if "=" not in item:
                    raise ConfigError(f"selection item {item!r} is not column=value")
                k, v = item.split("=", 1)
                selection[k] = v
        inversion = {}
        for key, value in au.items():
            if key.startswith("invert."):
                pair = _words(value)
                if len(pair) != 2:
                    raise ConfigError(f"{key} needs exactly two categories")
                inversion[key[len("invert."):]] = pair
        limit = au.get("limit", DEFAULT_LIMIT.get(dataset))
        ab = section("ablation")

        cfg = ExperimentConfig(
            dataset=dataset,
            out=Path(out) if out is not None else _resolve(base, exp.get("out", "runs/" + dataset)),
            seed=root_seed,
            path=_resolve(base, exp["path"]) if "path" in exp else None,
            graph=graph,
            graph_path=graph_path,
            subsample=int(exp["subsample"]) if exp.get("subsample", "").strip() else None,
            train_fraction=float(section("split").get("train_fraction", "0.7")),
            columns=dict(section("columns")),
            synthetic=synthetic,
            cfvae=cfvae,
            train=train,
            predictor_kinds=_words(pr.get("kinds", " ".join(KINDS))),
            repeats=int(pr.get("repeats", "10")),
            mlp_widths=_ints(pr.get("mlp_widths", "32")),
            max_iter=int(pr.get("max_iter", "200")),
            feature_sets=_words(au.get("feature_sets", "FULL ZXP")),
            selection=selection,
            limit=int(limit) if limit not in (None, "") else None,
            audit_source=au.get("source", DEFAULT_SOURCE.get(dataset, "test")).strip(),
            inversion=inversion,
            arms=_words(ab.get("arms", " ".join(ARMS))),
            ablation_seeds=int(ab.get("seeds", "3")),
            text=text,
        )
    except (ValueError, KeyError) as exc:
        if isinstance(exc, CffairError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent, seed, out)
