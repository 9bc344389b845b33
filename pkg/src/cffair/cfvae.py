"""The CF-VAE model and every term of its loss.

Two encoder/decoder pairs: one for the sensitive block A (code ``z_a``) and
one for the covariate block X (code ``z_x``). When causal constraints are on,
``z_x`` is pushed through :func:`~cffair.causal_graph.structure_transform`
before the X decoder sees it. The loss is

    total = -(recon_a + recon_x - kl_a - kl_x) + tcr + opr

where ``recon_*`` are batch-mean log-likelihoods, ``tcr`` is the weighted
total-correlation estimate on the pre-transform ``z_x`` and ``opr`` is the
weighted mean cosine similarity between ``z_a`` and the structured code.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .causal_graph import TRANSFORM_MODES, structure_transform, validate_dag
from .datasets import ColumnSpec
from .errors import ConfigError, DimensionError, NumericalError

DTYPE = torch.float64
TC_ESTIMATORS = ("mb", "mws", "mss")
LOG_2PI = math.log(2 * math.pi)


@dataclass
class CfvaeConfig:
    d_za: int = 2
    d_zx: int = 2
    gamma: float = 10.0
    opr_weight: float = 1.0
    use_causal_constraints: bool = True
    C: np.ndarray | None = None
    encoder_widths: tuple[int, ...] = (64, 64)
    decoder_widths: tuple[int, ...] = (64,)
    transform_mode: str = "exact"
    tc_estimator: str = "mb"
    learn_decoder_variance: bool = True
    seed: int = 0

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if self.C is not None:
            self.C = np.asarray(self.C, dtype=float)

    def validate(self) -> None:
        if self.d_za < 1 or self.d_zx < 1:
            raise ConfigError("latent dimensions must be positive")
        if self.gamma < 0 or self.opr_weight < 0:
            raise ConfigError("gamma and opr_weight must be non-negative")
        if self.transform_mode not in TRANSFORM_MODES:
            raise ConfigError(f"unknown transform mode {self.transform_mode!r}")
        if self.tc_estimator not in TC_ESTIMATORS:
            raise ConfigError(f"unknown TC estimator {self.tc_estimator!r}")
        if self.opr_weight > 0 and self.d_za != self.d_zx:
            raise ConfigError(
                f"orthogonality needs d_za == d_zx, got {self.d_za} and {self.d_zx}")
        if self.use_causal_constraints:
            C = self.adjacency()
            if C.shape != (self.d_zx, self.d_zx):
                raise ConfigError(
                    f"adjacency is {C.shape[0]}x{C.shape[1]} but d_zx = {self.d_zx}")
            validate_dag(C)

    def adjacency(self) -> np.ndarray:
        return np.zeros((self.d_zx, self.d_zx)) if self.C is None else self.C

    def to_dict(self) -> dict:
        out = asdict(self)
        out["C"] = None if self.C is None else self.C.tolist()
        out["encoder_widths"] = list(self.encoder_widths)
        out["decoder_widths"] = list(self.decoder_widths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CfvaeConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class LatentBatch:
    mu_a: torch.Tensor
    logvar_a: torch.Tensor
    mu_x: torch.Tensor
    logvar_x: torch.Tensor
    z_a: torch.Tensor
    z_x: torch.Tensor
    z_x_structured: torch.Tensor


@dataclass
class LossBreakdown:
    recon_a: torch.Tensor
    recon_x: torch.Tensor
    kl_a: torch.Tensor
    kl_x: torch.Tensor
    tcr: torch.Tensor
    opr: torch.Tensor
    total: torch.Tensor

    NAMES = ("recon_a", "recon_x", "kl_a", "kl_x", "tcr", "opr", "total")

    def as_floats(self) -> dict[str, float]:
        return {n: float(getattr(self, n).detach()) for n in self.NAMES}


# ---------------------------------------------------------------------------
# likelihood heads


@dataclass(frozen=True)
class Head:
    kind: str
    start: int
    stop: int


def head_layout(schema: Sequence[ColumnSpec]) -> list[Head]:
    heads, pos = [], 0
    for col in schema:
        heads.append(Head(col.kind, pos, pos + col.width))
        pos += col.width
    return heads


def gaussian_log_likelihood(mean, target, logvar=0.0):
    logvar = torch.as_tensor(logvar, dtype=mean.dtype)
    return -0.5 * (LOG_2PI + logvar + (target - mean) ** 2 * torch.exp(-logvar))


def bernoulli_log_likelihood(logit, target):
    return -F.binary_cross_entropy_with_logits(logit, target, reduction="none")


def categorical_log_likelihood(logits, onehot):
    return (onehot * F.log_softmax(logits, dim=-1)).sum(-1, keepdim=True)


def log_likelihood(output, target, heads: Sequence[Head], logvar=None):
    """Per-sample log p(target | decoder output), summed over columns.

    ``logvar`` holds one log-variance per encoded column (only the entries of
    continuous heads are read); ``None`` means unit variance.
    """
    width = heads[-1].stop if heads else 0
    if output.shape[-1] != width or target.shape[-1] != width:
        raise DimensionError(
            f"decoder heads cover {width} columns; got output {output.shape[-1]}, "
            f"target {target.shape[-1]}")
    parts = []
    for h in heads:
        out, tgt = output[:, h.start:h.stop], target[:, h.start:h.stop]
        if h.kind == "continuous":
            lv = 0.0 if logvar is None else logvar[h.start:h.stop]
            parts.append(gaussian_log_likelihood(out, tgt, lv))
        elif h.kind == "binary":
            parts.append(bernoulli_log_likelihood(out, tgt))
        else:
            parts.append(categorical_log_likelihood(out, tgt))
    return torch.cat(parts, dim=1).sum(1)


# ---------------------------------------------------------------------------
# regularizers


def kl_standard_normal(mu, logvar):
    """Batch-mean KL[N(mu, exp(logvar)) || N(0, I)]."""
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1).mean()


def gaussian_log_density(z, mu, logvar):
    return -0.5 * (LOG_2PI + logvar + (z - mu).pow(2) * torch.exp(-logvar))


def _tc_log_weights(B: int, dataset_size: int, estimator: str, like):
    """Log importance weights ``w[i, j]`` for the aggregate-posterior estimate.

    ``mws`` weights every batch member by ``1 / (N * B)``; ``mb`` uses ``1 / B``,
    which has the same gradients but drops the constant ``(D - 1) log N`` that
    ``mws`` adds to the estimate. ``mss`` gives the
    member that produced the sample weight ``1 / N`` and splits the remaining
    ``(N - 1) / N`` evenly over the other ``B - 1`` members, so the weights of
    each row sum to one.
    """
    if estimator == "mws":
        return torch.full((B, B), -math.log(dataset_size * B), dtype=like.dtype)
    if estimator == "mb":
        return torch.full((B, B), -math.log(B), dtype=like.dtype)
    if estimator != "mss":
        raise ValueError(f"unknown TC estimator {estimator!r}")
    N = max(dataset_size, B)
    logw = torch.full((B, B), math.log((N - 1) / (N * (B - 1))), dtype=like.dtype)
    logw.fill_diagonal_(-math.log(N))
    return logw


def tcr_loss(z, mu, logvar, gamma: float, dataset_size: int, estimator: str = "mb"):
    """``gamma`` times a minibatch estimate of the total correlation of ``z``.

    The joint and each marginal of the aggregate posterior are estimated as
    ``logsumexp_j (log w[i, j] + log q(z_i | x_j))`` over the batch.
    """
    B = z.shape[0]
    if B < 2:
        raise ValueError("total-correlation estimate needs a batch of at least 2")
    if gamma == 0:
        return z.new_zeros(())
    # [i, j, k]: density of sample i's k-th coordinate under posterior j
    logq = gaussian_log_density(z.unsqueeze(1), mu.unsqueeze(0), logvar.unsqueeze(0))
    logw = _tc_log_weights(B, dataset_size, estimator, z)
    log_qz = torch.logsumexp(logw + logq.sum(2), dim=1)
    log_prod = torch.logsumexp(logw.unsqueeze(2) + logq, dim=1).sum(1)
    return gamma * (log_qz - log_prod).mean()


def opr_loss(z_a, z_x_structured, eps: float = 1e-8):
    """Mean per-sample cosine similarity between the two codes."""
    if z_a.shape != z_x_structured.shape:
        raise ConfigError(
            f"cosine similarity needs equal code widths, got {tuple(z_a.shape)} "
            f"and {tuple(z_x_structured.shape)}")
    dot = (z_a * z_x_structured).sum(1)
    norms = torch.linalg.vector_norm(z_a, dim=1) * torch.linalg.vector_norm(z_x_structured, dim=1)
    return (dot / (norms + eps)).mean()


def total_loss(recon_a, recon_x, kl_a, kl_x, tcr, opr, opr_weight: float = 1.0) -> LossBreakdown:
    """Assemble the objective. ``tcr`` already carries its weight; ``opr`` is raw."""
    opr = opr_weight * opr
    total = -(recon_a + recon_x - kl_a - kl_x) + tcr + opr
    return LossBreakdown(recon_a, recon_x, kl_a, kl_x, tcr, opr, total)


# ---------------------------------------------------------------------------
# networks


def mlp(sizes: Sequence[int], generator: torch.Generator) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lin = nn.Linear(fan_in, fan_out, dtype=DTYPE)
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            lin.weight.uniform_(-bound, bound, generator=generator)
            lin.bias.uniform_(-bound, bound, generator=generator)
        layers.append(lin)
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _check_finite(t: torch.Tensor, what: str) -> None:
    bad = ~torch.isfinite(t).all(dim=-1)
    if bad.any():
        raise NumericalError(f"non-finite {what}", int(torch.nonzero(bad)[0, 0]))


class CfvaeModel(nn.Module):
    """Encoders, decoders and the fixed adjacency for one dataset schema."""

    def __init__(self, config: CfvaeConfig, a_schema: Sequence[ColumnSpec],
                 x_schema: Sequence[ColumnSpec]):
        super().__init__()
        config.validate()
        self.config = config
        self.a_schema = list(a_schema)
        self.x_schema = list(x_schema)
        self.a_heads = head_layout(self.a_schema)
        self.x_heads = head_layout(self.x_schema)
        self.a_width = sum(c.width for c in self.a_schema)
        self.x_width = sum(c.width for c in self.x_schema)
        gen = torch.Generator().manual_seed(int(config.seed))
        enc, dec = list(config.encoder_widths), list(config.decoder_widths)
        self.enc_a = mlp([self.a_width, *enc, 2 * config.d_za], gen)
        self.enc_x = mlp([self.x_width, *enc, 2 * config.d_zx], gen)
        self.dec_a = mlp([config.d_za, *dec, self.a_width], gen)
        self.dec_x = mlp([config.d_zx, *dec, self.x_width], gen)
        self.register_buffer("C", torch.as_tensor(config.adjacency(), dtype=DTYPE))
        # one global log-variance per encoded column, used by continuous heads only
        self.logvar_a = nn.Parameter(torch.zeros(self.a_width, dtype=DTYPE),
                                     requires_grad=config.learn_decoder_variance)
        self.logvar_x = nn.Parameter(torch.zeros(self.x_width, dtype=DTYPE),
                                     requires_grad=config.learn_decoder_variance)

    # ------------------------------------------------------------------

    def encode_x(self, x):
        if x.shape[-1] != self.x_width:
            raise DimensionError(f"X block has width {x.shape[-1]}, expected {self.x_width}")
        h = self.enc_x(x)
        _check_finite(h, "X-encoder output")
        return h[:, :self.config.d_zx], h[:, self.config.d_zx:]

    def encode_a(self, a):
        if a.shape[-1] != self.a_width:
            raise DimensionError(f"A block has width {a.shape[-1]}, expected {self.a_width}")
        h = self.enc_a(a)
        _check_finite(h, "A-encoder output")
        return h[:, :self.config.d_za], h[:, self.config.d_za:]

    def structure(self, z_x):
        if not self.config.use_causal_constraints:
            return z_x
        return structure_transform(z_x, self.C, self.config.transform_mode)

    def encode(self, a, x, eps_a=None, eps_x=None, generator=None) -> LatentBatch:
        mu_a, logvar_a = self.encode_a(a)
        mu_x, logvar_x = self.encode_x(x)
        if eps_a is None:
            eps_a = torch.randn(mu_a.shape, generator=generator, dtype=DTYPE)
        if eps_x is None:
            eps_x = torch.randn(mu_x.shape, generator=generator, dtype=DTYPE)
        z_a = mu_a + torch.exp(0.5 * logvar_a) * eps_a
        z_x = mu_x + torch.exp(0.5 * logvar_x) * eps_x
        z_xs = self.structure(z_x)
        _check_finite(z_xs, "structured code")
        return LatentBatch(mu_a, logvar_a, mu_x, logvar_x, z_a, z_x, z_xs)

    def decode(self, latent: LatentBatch, a, x):
        """Batch-mean reconstruction log-likelihoods ``(recon_a, recon_x)``."""
        recon_a = log_likelihood(self.dec_a(latent.z_a), a, self.a_heads, self.logvar_a).mean()
        recon_x = log_likelihood(self.dec_x(latent.z_x_structured), x, self.x_heads,
                                 self.logvar_x).mean()
        return recon_a, recon_x

    def loss(self, a, x, dataset_size: int, eps_a=None, eps_x=None, generator=None) -> LossBreakdown:
        cfg = self.config
        latent = self.encode(a, x, eps_a, eps_x, generator)
        recon_a, recon_x = self.decode(latent, a, x)
        kl_a = kl_standard_normal(latent.mu_a, latent.logvar_a)
        kl_x = kl_standard_normal(latent.mu_x, latent.logvar_x)
        tcr = tcr_loss(latent.z_x, latent.mu_x, latent.logvar_x, cfg.gamma, dataset_size,
                       cfg.tc_estimator)
        if cfg.opr_weight > 0:
            opr = opr_loss(latent.z_a, latent.z_x_structured)
        else:
            opr = a.new_zeros(())
        return total_loss(recon_a, recon_x, kl_a, kl_x, tcr, opr, cfg.opr_weight)

    @torch.no_grad()
    def structured_means(self, x) -> np.ndarray:
        """Posterior means of ``z_x`` pushed through the structure transform."""
        x = torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)
        mu_x, _ = self.encode_x(x)
        return self.structure(mu_x).numpy()


# ---------------------------------------------------------------------------
# checkpoints


def _schema_json(schema):
    return [{"name": c.name, "kind": c.kind, "role": c.role, "categories": list(c.categories)}
            for c in schema]


def save_checkpoint(model: CfvaeModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "a_schema": _schema_json(model.a_schema),
        "x_schema": _schema_json(model.x_schema),
        "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
        **(extra or {}),
    }
    arrays = {f"param/{k}": v.detach().numpy() for k, v in model.state_dict().items()}
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> CfvaeModel:
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        state = {k[len("param/"):]: torch.from_numpy(archive[k].copy())
                 for k in archive.files if k.startswith("param/")}
    config = CfvaeConfig.from_dict(header["config"])
    a_schema = [ColumnSpec(**c) for c in header["a_schema"]]
    x_schema = [ColumnSpec(**c) for c in header["x_schema"]]
    model = CfvaeModel(config, a_schema, x_schema)
    for name, shape in header["shapes"].items():
        if list(state[name].shape) != shape:
            raise DimensionError(f"checkpoint array {name} has shape {list(state[name].shape)}, "
                                 f"declared {shape}")
    model.load_state_dict(state)
    return model
