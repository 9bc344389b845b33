"""Concept-level causal graphs and the linear-SEM structured transform.

A concept graph is a DAG over the latent "concepts" of the covariates. Its
weighted adjacency matrix ``C`` (``C[i, j]`` is the weight of edge i -> j)
turns independent codes ``z`` into structured codes ``z'`` by solving

    (I - C^T) z' = z

so each concept equals its own exogenous part plus the weighted sum of its
parents' structured values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
import torch

from .errors import CycleError, DimensionError, SchemaError

TRANSFORM_MODES = ("exact", "one_step")


@dataclass(frozen=True)
class ConceptGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...] = ()
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.n < 1:
            raise SchemaError("a concept graph needs at least one concept")
        labels = tuple(self.labels) or tuple(f"c{i}" for i in range(self.n))
        if len(labels) != self.n:
            raise SchemaError(f"expected {self.n} labels, got {len(labels)}")
        object.__setattr__(self, "labels", labels)
        edges = tuple((int(i), int(j), float(w)) for i, j, w in self.edges)
        for i, j, w in edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise SchemaError(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise SchemaError(f"self-loop on concept {i}")
            if not np.isfinite(w):
                raise SchemaError(f"non-finite weight on edge ({i}, {j})")
        object.__setattr__(self, "edges", edges)
        validate_dag(self.adjacency())

    def adjacency(self) -> np.ndarray:
        C = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            C[i, j] = w
        return C

    @classmethod
    def from_adjacency(cls, C, labels: Sequence[str] = ()) -> "ConceptGraph":
        C = np.asarray(C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise DimensionError(f"adjacency must be square, got {C.shape}")
        edges = [(i, j, C[i, j]) for i, j in zip(*np.nonzero(C))]
        return cls(C.shape[0], tuple(edges), tuple(labels))

    @classmethod
    def empty(cls, n: int) -> "ConceptGraph":
        return cls(n)


def _digraph(C: np.ndarray) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(range(C.shape[0]))
    g.add_edges_from(zip(*np.nonzero(C)))
    return g


def validate_dag(C) -> None:
    """Raise :class:`CycleError` unless the nonzero entries of ``C`` form a DAG."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionError(f"adjacency must be square, got {C.shape}")
    g = _digraph(C)
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return
    raise CycleError([u for u, _ in cycle])


def topological_order(C) -> list[int]:
    C = np.asarray(C, dtype=float)
    validate_dag(C)
    # lexicographic tie-break keeps the permutation stable across runs
    return list(nx.lexicographical_topological_sort(_digraph(C)))


def structure_transform(z, C, mode: str = "exact"):
    """Map independent codes ``z`` (``B x n`` or ``n``) to structured codes.

    ``mode="exact"`` solves ``(I - C^T) z' = z`` by a unit lower-triangular
    solve in topological order. ``mode="one_step"`` applies ``(I + C^T) z``,
    which keeps only direct parent contributions.

    Accepts numpy arrays or torch tensors and returns the same kind; with
    tensors the result is differentiable in both ``z`` and ``C``.
    """
    if mode not in TRANSFORM_MODES:
        raise ValueError(f"unknown transform mode {mode!r}")
    as_numpy = not torch.is_tensor(z)
    zt = torch.as_tensor(np.asarray(z, dtype=float)) if as_numpy else z
    Ct = C if torch.is_tensor(C) else torch.as_tensor(np.asarray(C, dtype=float), dtype=zt.dtype)
    Ct = Ct.to(dtype=zt.dtype)
    n = Ct.shape[0]
    if Ct.ndim != 2 or Ct.shape[1] != n:
        raise DimensionError(f"adjacency must be square, got {tuple(Ct.shape)}")
    squeeze = zt.ndim == 1
    if squeeze:
        zt = zt.unsqueeze(0)
    if zt.ndim != 2 or zt.shape[1] != n:
        raise DimensionError(f"codes have width {zt.shape[-1]}, graph has {n} concepts")

    if mode == "one_step":
        out = zt + zt @ Ct
    else:
        order = topological_order(Ct.detach().cpu().numpy())
        perm = torch.as_tensor(order)
        # rows of M index children, columns parents; unit lower-triangular in topo order
        M = torch.eye(n, dtype=zt.dtype) - Ct.T[perm][:, perm]
        solved = torch.linalg.solve_triangular(
            M, zt[:, perm].T, upper=False, unitriangular=True
        ).T
        out = solved[:, torch.argsort(perm)]
    if squeeze:
        out = out.squeeze(0)
    return out.numpy() if as_numpy else out


# ---------------------------------------------------------------------------
# graph interchange text format


def parse_graph(text: str) -> ConceptGraph:
    """Parse the plain-text graph format.

    ::

        # comments and blank lines are ignored
        n 3
        labels knowledge career income
        knowledge career 1.0
        0 2 1.0

    Endpoints may be given as labels or zero-based indices.
    """
    n = None
    labels: tuple[str, ...] = ()
    raw_edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "n":
            if len(parts) != 2:
                raise SchemaError(f"line {lineno}: expected 'n <count>'")
            try:
                n = int(parts[1])
            except ValueError:
                raise SchemaError(f"line {lineno}: bad concept count {parts[1]!r}") from None
        elif parts[0] == "labels":
            labels = tuple(parts[1:])
        elif len(parts) == 3:
            raw_edges.append((lineno, parts))
        else:
            raise SchemaError(f"line {lineno}: expected 'parent child weight', got {line!r}")
    if n is None:
        if not labels:
            raise SchemaError("graph file does not declare 'n'")
        n = len(labels)
    index = {name: i for i, name in enumerate(labels)}
    edges = []
    for lineno, (p, c, w) in raw_edges:
        try:
            edges.append((_endpoint(p, index), _endpoint(c, index), float(w)))
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return ConceptGraph(n, tuple(edges), labels)


def _endpoint(token: str, index: dict[str, int]) -> int:
    if token in index:
        return index[token]
    try:
        return int(token)
    except ValueError:
        raise ValueError(f"unknown concept {token!r}") from None


def format_graph(graph: ConceptGraph) -> str:
    lines = [f"n {graph.n}", "labels " + " ".join(graph.labels)]
    lines += [f"{graph.labels[i]} {graph.labels[j]} {w!r}" for i, j, w in graph.edges]
    return "\n".join(lines) + "\n"


def read_graph(path) -> ConceptGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def write_graph(graph: ConceptGraph, path) -> None:
    Path(path).write_text(format_graph(graph), encoding="utf-8")


# ---------------------------------------------------------------------------
# descendant queries on attribute-level graphs


def is_non_descendant(graph: nx.DiGraph, node, sensitive: Iterable | None = None) -> bool:
    """True iff no directed path from a sensitive node reaches ``node``.

    Sensitive nodes default to those with attribute ``role == "sensitive"``.
    A sensitive node counts as its own descendant.
    """
    if node not in graph:
        raise KeyError(f"unknown node {node!r}")
    if sensitive is None:
        sensitive = [v for v, role in graph.nodes(data="role") if role == "sensitive"]
    sensitive = list(sensitive)
    for s in sensitive:
        if s not in graph:
            raise KeyError(f"unknown sensitive node {s!r}")
    if node in sensitive:
        return False
    return not any(s in nx.ancestors(graph, node) for s in sensitive)


def situation_graph() -> nx.DiGraph:
    """Attribute-level graph with the four covariate subsets and both codes.

    Node names: ``A``, ``Y``, ``X_AY`` (descendant of A, parent of Y),
    ``X_NY`` (parent of Y only), ``X_AN`` (descendant of A only), ``X_NN``
    (unrelated), and the representations ``Z_a`` and ``Z_xs``.
    """
    g = nx.DiGraph()
    g.add_node("A", role="sensitive")
    g.add_node("Y", role="target")
    for name in ("X_AY", "X_NY", "X_AN", "X_NN"):
        g.add_node(name, role="covariate")
    g.add_node("Z_a", role="representation")
    g.add_node("Z_xs", role="representation")
    g.add_edges_from([
        ("A", "X_AY"), ("A", "Y"), ("A", "X_AN"),
        ("X_AY", "Y"), ("X_NY", "Y"), ("Y", "X_AN"),
        ("Z_a", "A"),
        ("Z_xs", "X_AY"), ("Z_xs", "X_NY"), ("Z_xs", "Y"), ("Z_xs", "X_NN"),
    ])
    return g
