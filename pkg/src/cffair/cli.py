"""Command-line entry point: ``cffair <verb> --config FILE``.

Exit status is 0 on success, 2 when the configuration or input data fail
validation, and 3 when a run fails after compute has started.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audit import AuditCell, AuditReport, build_audit_set, evaluate
from .cfvae import load_checkpoint
from .config import ExperimentConfig, load_config
from .datasets import save_dataset
from .errors import CffairError, ConfigError, DivergenceError, NumericalError
from .training import train

log = logging.getLogger("cffair")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
ARM_LABELS = {
    "full": "Full",
    "minus_m": "-M",
    "minus_mprime_tcr": "-M' + TCR",
    "cfvae": "-M' + TCR + OPR",
}


def _echo(cfg: ExperimentConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.ini").write_text(cfg.text, encoding="utf-8")
    (directory / "seed.txt").write_text(f"{cfg.seed}\n", encoding="utf-8")


def cmd_ingest(cfg: ExperimentConfig) -> Path:
    ds = cfg.load_data()
    target = cfg.out / "dataset"
    save_dataset(ds, target)
    _echo(cfg, target)
    print(f"{len(ds)} rows ({int(ds.mask('train').sum())} train) -> {target}")
    return target


def cmd_train(cfg: ExperimentConfig, run_dir: Path | None = None) -> Path:
    ds = cfg.load_data()
    run_dir = run_dir or cfg.out / "run"
    report, _ = train(ds, cfg.train, run_dir)
    _echo(cfg, run_dir)
    last = report.history[-1]["total"]
    print(f"trained {cfg.train.epochs} epochs in {report.seconds:.1f}s, final loss {last:.4f} -> {run_dir}")
    return run_dir


def _audit_set(cfg: ExperimentConfig, ds):
    source = ds if cfg.audit_source == "all" else ds.test()
    return build_audit_set(source, cfg.selection, cfg.limit, cfg.seed, cfg.inversion)


def cmd_audit(cfg: ExperimentConfig, run_dir: Path | None = None) -> AuditReport:
    ds = cfg.load_data()
    model = None
    if any(name == "ZXP" for name in cfg.feature_sets):
        run_dir = run_dir or cfg.out / "run"
        ckpt = run_dir / "checkpoint.npz"
        if not ckpt.is_file():
            raise ConfigError(f"no checkpoint at {ckpt}; run 'train' first")
        model = load_checkpoint(ckpt)
    out = cfg.out / "audit"
    report = evaluate(model, ds, cfg.predictor_specs(), cfg.feature_sets, _audit_set(cfg, ds),
                      out_dir=out)
    report.write(out)
    _echo(cfg, out)
    print(report.to_markdown(), end="")
    return report


def arm_config(cfg: ExperimentConfig, arm: str) -> ExperimentConfig:
    """The experiment config for one rung of the ablation ladder."""
    cf = cfg.cfvae
    if arm == "minus_m":
        cf = replace(cf, use_causal_constraints=False, gamma=0.0, opr_weight=0.0)
    elif arm == "minus_mprime_tcr":
        cf = replace(cf, use_causal_constraints=True, opr_weight=0.0)
    elif arm == "cfvae":
        cf = replace(cf, use_causal_constraints=True)
    return replace(cfg, cfvae=cf, train=replace(cfg.train, cfvae=cf),
                   feature_sets=("FULL",) if arm == "full" else ("ZXP",))


def cmd_ablation(cfg: ExperimentConfig, arms=None) -> AuditReport:
    """Run each arm on the same data for ``ablation_seeds`` consecutive root seeds.

    Per-seed reports land in ``out/ablation/seed<k>/<arm>/``; the summary
    table holds the median over seeds of each cell's mean, with the spread
    column reporting the median of the per-seed repeat spread.
    """
    arms = tuple(arms or cfg.arms)
    base = cfg.out / "ablation"
    per_seed: dict[tuple[str, str], list[AuditCell]] = {}
    for k in range(cfg.ablation_seeds):
        seeded = cfg.with_seed(cfg.seed + k)
        ds = seeded.load_data()
        audit_set = _audit_set(seeded, ds)
        for arm in arms:
            acfg = arm_config(seeded, arm)
            arm_dir = base / f"seed{seeded.seed}" / arm
            model = None
            if arm != "full":
                _, model = train(ds, acfg.train, arm_dir / "run")
            rep = evaluate(model, ds, acfg.predictor_specs(), acfg.feature_sets, audit_set,
                           labels={acfg.feature_sets[0]: ARM_LABELS[arm]}, out_dir=arm_dir)
            rep.write(arm_dir)
            _echo(acfg, arm_dir)
            for cell in rep.cells:
                per_seed.setdefault((arm, cell.predictor), []).append(cell)
            log.info("seed %d arm %s done", seeded.seed, arm)

    summary = AuditReport()
    for (arm, pred), cells in per_seed.items():
        first = cells[0]
        summary.cells.append(replace(
            first,
            metric_mean=float(np.median([c.metric_mean for c in cells])),
            metric_std=float(np.median([c.metric_std for c in cells])),
            ufs_mean=float(np.median([c.ufs_mean for c in cells])),
            ufs_std=float(np.median([c.ufs_std for c in cells])),
            structural_zero=all(c.structural_zero for c in cells),
            predictions=";".join(str(Path(f"seed{cfg.seed + i}") / arm / c.predictions)
                                 for i, c in enumerate(cells)),
        ))
    summary.write(base, "ablation")
    _echo(cfg, base)
    print(summary.to_markdown(), end="")
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cffair", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("train", "audit", "ablation", "ingest", "validate-config"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", help="output directory (overrides [experiment] out)")
        p.add_argument("--seed", type=int, help="root seed override")
        if verb == "audit":
            p.add_argument("--run", type=Path, help="run directory holding checkpoint.npz")
        if verb == "ablation":
            p.add_argument("--arm", action="append", choices=list(ARM_LABELS),
                           help="run only this arm (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except (CffairError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.verb == "validate-config":
        print(f"ok: {cfg.dataset} config, {len(cfg.predictor_kinds)} predictors, out={cfg.out}")
        return EXIT_OK
    try:
        if args.verb == "ingest":
            cmd_ingest(cfg)
        elif args.verb == "train":
            cmd_train(cfg)
        elif args.verb == "audit":
            cmd_audit(cfg, args.run)
        else:
            cmd_ablation(cfg, args.arm)
    except (DivergenceError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CffairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
