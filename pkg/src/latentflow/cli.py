"""Command-line entry point: train, eval, diagnose, compare, toy.

stdout carries machine-readable JSON only (eval/diagnose/compare); all
human-readable progress goes to stderr. Verbosity is controlled by the
LATENTFLOW_LOG environment variable (debug|info|warning|quiet).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .data import (
    DataError,
    PairedDataset,
    TaskKind,
    apply_normalization,
    load_csv,
    split,
    standardize,
    synth_regression,
    toy_crossing,
)
from .diagnostics import build_report, write_report
from .model import (
    ModelSpec,
    TrainConfig,
    TrainingAbort,
    build_direct_fm,
    build_model,
    build_node_baseline,
    direct_fm_train,
    evaluate_metric,
    load_model_params,
    mse,
    node_baseline_train,
    save_model,
    train,
)
from .solvers import SolverError, SolverSpec

log = logging.getLogger("latentflow")

_LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "quiet": logging.CRITICAL,
}


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("LATENTFLOW_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")


def resolve_dataset(cfg: RunConfig) -> PairedDataset:
    spec = cfg.dataset
    if spec == "toy":
        return toy_crossing(True)
    if spec == "toy_control":
        return toy_crossing(False)
    if spec.startswith("csv:"):
        x_cols = [c.strip() for c in cfg.x_cols.split(",") if c.strip()]
        y_cols = [c.strip() for c in cfg.y_cols.split(",") if c.strip()]
        if cfg.task == "classification":
            task = TaskKind.classification(cfg.num_classes) if cfg.num_classes else "classification"
        else:
            task = TaskKind.regression()
        return load_csv(spec[4:], x_cols, y_cols, task)
    if spec.startswith("synth:"):
        parts = [int(p) for p in spec[len("synth:"):].split(",")]
        seed = parts[2] if len(parts) == 3 else cfg.seed
        return synth_regression(parts[0], parts[1], seed)
    raise ConfigError(f"unknown dataset spec {spec!r}")


def prepare_splits(cfg: RunConfig, ds: PairedDataset) -> tuple[PairedDataset, PairedDataset | None]:
    """Optional validation split; normalization stats always come from train data."""
    if cfg.val_split > 0.0:
        return split(ds, 1.0 - cfg.val_split, cfg.split_seed)
    wants_norm = cfg.standardize == "on" or (
        cfg.standardize == "auto" and not cfg.dataset.startswith("toy")
    )
    return (standardize(ds) if wants_norm else ds), None


def model_spec_from(cfg: RunConfig, ds: PairedDataset) -> ModelSpec:
    return ModelSpec(
        d_x=ds.d_x,
        d_y=ds.d_y,
        task=ds.task,
        schedule=cfg.schedule,
        latent_dim=cfg.latent_dim if cfg.latent_dim > 0 else None,
        enc_hidden=cfg.enc_hidden,
        enc_depth=cfg.enc_depth,
        dyn_hidden=cfg.dyn_hidden,
        dyn_depth=cfg.dyn_depth,
    )


def train_config_from(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        iterations=cfg.iterations,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        lr_schedule=cfg.lr_schedule,
        p_zero=cfg.t_zero_prob,
        sigma=cfg.label_noise_std,
        seed=cfg.seed,
        eval_interval=cfg.eval_interval,
        patience=cfg.patience,
        eval_solver=SolverSpec.parse(cfg.solver),
        log_every=cfg.log_every,
    )


def _normalization_dict(ds: PairedDataset) -> dict:
    return {
        "x_mean": ds.x_mean.tolist(),
        "x_std": ds.x_std.tolist(),
        "y_mean": ds.y_mean.tolist(),
        "y_std": ds.y_std.tolist(),
    }


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    return _apply_overrides(cfg, args).validate()


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for attr in ("seed", "out", "solver", "dataset"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    ds = resolve_dataset(cfg)
    train_ds, val_ds = prepare_splits(cfg, ds)
    spec = model_spec_from(cfg, train_ds)
    model = build_model(spec, cfg.seed)
    tc = train_config_from(cfg)

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    train_log = train(model, train_ds, tc, val_ds)
    wall = time.perf_counter() - t0
    log.info("training finished: %d logged steps in %.1fs", len(train_log.entries), wall)

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "checkpoint.json", model)
    with (out_dir / "train_log.jsonl").open("w") as fh:
        for entry in train_log.entries:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")

    final: dict = {"stopped_early": train_log.stopped_early, "best_val": train_log.best_val}
    if cfg.iterations > 0:
        metric, nfe = evaluate_metric(model, train_ds, tc.eval_solver)
        final["train_metric"] = metric
        final["train_nfe"] = nfe
        if val_ds is not None:
            final["val_metric"] = evaluate_metric(model, val_ds, tc.eval_solver)[0]
    # the output path is an invocation detail, not part of the experiment
    # record; dropping it keeps manifests byte-reproducible across runs
    recorded_cfg = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    manifest = {
        "command": "train",
        "config": recorded_cfg,
        "model_spec": spec.to_dict(),
        "normalization": _normalization_dict(train_ds),
        "dims": {
            "d_x": train_ds.d_x,
            "d_y": train_ds.d_y,
            "latent": spec.resolved_latent_dim(),
            "n_train": train_ds.n,
            "n_val": val_ds.n if val_ds is not None else 0,
        },
        "seed": cfg.seed,
        "final_metrics": final,
        "timing": {"started_at": started, "wall_clock_sec": wall},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    log.info("wrote checkpoint, manifest and log to %s", out_dir)
    return 0


def _load_checkpointed_model(checkpoint_dir: Path):
    manifest_path = checkpoint_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"no manifest.json under {checkpoint_dir}")
    manifest = json.loads(manifest_path.read_text())
    spec = ModelSpec.from_dict(manifest["model_spec"])
    model = build_model(spec, manifest.get("seed", 0))
    load_model_params(checkpoint_dir / "checkpoint.json", model)
    return model, manifest


class DimensionMismatch(RuntimeError):
    pass


def _dataset_for_manifest(manifest: dict, args, spec: ModelSpec) -> PairedDataset:
    """Resolve the dataset named on the command line (or in the manifest),
    check its dims against the checkpoint, then apply the training-time
    normalization stats."""
    cfg = RunConfig(**manifest["config"])
    cfg = _apply_overrides(cfg, args)
    cfg.validate()
    ds = resolve_dataset(cfg)
    if ds.d_x != spec.d_x or ds.d_y != spec.d_y:
        raise DimensionMismatch(
            f"dataset dims ({ds.d_x}, {ds.d_y}) do not match checkpoint dims "
            f"({spec.d_x}, {spec.d_y})"
        )
    norm = manifest["normalization"]
    return apply_normalization(ds, norm["x_mean"], norm["x_std"], norm["y_mean"], norm["y_std"])


def cmd_eval(args) -> int:
    checkpoint_dir = Path(args.checkpoint)
    model, manifest = _load_checkpointed_model(checkpoint_dir)
    ds = _dataset_for_manifest(manifest, args, model.spec)
    solver = SolverSpec.parse(args.solver) if args.solver else SolverSpec.parse(
        manifest["config"]["solver"]
    )
    metric, nfe = evaluate_metric(model, ds, solver)
    print(json.dumps({"metric": metric, "nfe_mean": float(nfe)}, sort_keys=True))
    return 0


def cmd_diagnose(args) -> int:
    checkpoint_dir = Path(args.checkpoint)
    model, manifest = _load_checkpointed_model(checkpoint_dir)
    ds = _dataset_for_manifest(manifest, args, model.spec)
    report = build_report(model, ds)
    out_dir = Path(args.out) if args.out else checkpoint_dir
    payload = write_report(report, out_dir)
    print(json.dumps(payload, sort_keys=True))
    log.info("wrote diagnostics to %s", out_dir)
    return 0


def run_comparison(cfg: RunConfig) -> dict:
    """Train the latent model, the data-space velocity-regression control, and
    the unrolled-solver baseline on one dataset; tabulate cost and accuracy."""
    ds = resolve_dataset(cfg)
    train_ds, _ = prepare_splits(cfg, ds)
    is_cls = train_ds.task.is_classification
    specs = {
        "metric_euler1": SolverSpec.euler(1),
        f"metric_euler{cfg.node_steps}": SolverSpec.euler(cfg.node_steps),
        "metric_dopri5": SolverSpec.dopri5(1e-3, 1e-3),
    }
    rows = []

    def _metrics(m) -> dict:
        out = {}
        for name, solver in specs.items():
            if is_cls:
                out[name] = evaluate_metric(m, train_ds, solver)[0]
            else:
                pred, _ = m.predict_raw(train_ds.x, solver)
                out[name] = mse(pred, train_ds.y)
        return out

    tc = train_config_from(cfg)

    model = build_model(model_spec_from(cfg, train_ds), cfg.seed)
    calls0, t0 = model.dynamics.calls, time.perf_counter()
    train(model, train_ds, tc)
    wall = time.perf_counter() - t0
    nfe_per_step = (model.dynamics.calls - calls0) / max(cfg.iterations, 1)
    rows.append({"method": "latent_fm", "train_nfe_per_step": nfe_per_step,
                 "wall_clock_sec": wall, **_metrics(model)})

    direct = build_direct_fm(train_ds.d_x, train_ds.d_y, train_ds.task,
                             schedule=cfg.schedule, hidden=cfg.dyn_hidden,
                             depth=cfg.dyn_depth, seed=cfg.seed)
    calls0, t0 = direct.dynamics.calls, time.perf_counter()
    direct_fm_train(direct, train_ds, tc)
    wall = time.perf_counter() - t0
    nfe_per_step = (direct.dynamics.calls - calls0) / max(cfg.iterations, 1)
    rows.append({"method": "direct_fm", "train_nfe_per_step": nfe_per_step,
                 "wall_clock_sec": wall, **_metrics(direct)})

    node = build_node_baseline(train_ds.d_x, train_ds.d_y, train_ds.task,
                               hidden=cfg.dyn_hidden, depth=cfg.dyn_depth, seed=cfg.seed)
    node_tc = tc if cfg.node_lr <= 0 else dataclasses.replace(tc, lr=cfg.node_lr)
    calls0, t0 = node.dynamics.calls, time.perf_counter()
    node_baseline_train(node, train_ds, cfg.node_steps, node_tc)
    wall = time.perf_counter() - t0
    nfe_per_step = (node.dynamics.calls - calls0) / max(cfg.iterations, 1)
    rows.append({"method": f"node_euler{cfg.node_steps}", "train_nfe_per_step": nfe_per_step,
                 "wall_clock_sec": wall, **_metrics(node)})

    return {"dataset": cfg.dataset, "metric_kind": "accuracy" if is_cls else "mse",
            "metric_columns": list(specs), "rows": rows}


def _format_table(table: dict) -> str:
    headers = ["method", "train_nfe_per_step", *table["metric_columns"], "wall_clock_sec"]
    lines = ["  ".join(f"{h:>18}" for h in headers)]
    for row in table["rows"]:
        cells = [row["method"], f"{row['train_nfe_per_step']:.1f}",
                 *(f"{row[m]:.4g}" for m in table["metric_columns"]),
                 f"{row['wall_clock_sec']:.2f}"]
        lines.append("  ".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)


def cmd_compare(args) -> int:
    cfg = _load_run_config(args)
    table = run_comparison(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    print(json.dumps(table, sort_keys=True))
    print(_format_table(table), file=sys.stderr)
    return 0


def cmd_toy(args) -> int:
    ds = toy_crossing(args.variant == "crossing")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["x0", "x1", "y0", "y1"])
    for i in range(ds.n):
        writer.writerow([repr(float(v)) for v in (*ds.x[i], *ds.y[i])])
    sys.stdout.write(buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentflow",
        description="Simulation-free training of continuous-depth models on paired data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--solver", default=None)
        p.add_argument("--dataset", default=None)

    p_train = sub.add_parser("train", help="train a latent flow model")
    common(p_train, config_required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True, help="directory written by train")
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_diag = sub.add_parser("diagnose", help="write the diagnostics report for a checkpoint")
    p_diag.add_argument("--checkpoint", required=True)
    common(p_diag)
    p_diag.set_defaults(func=cmd_diagnose)

    p_cmp = sub.add_parser("compare", help="latent vs direct velocity regression vs unrolled solver")
    common(p_cmp, config_required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_toy = sub.add_parser("toy", help="print the canonical crossing dataset as CSV")
    p_toy.add_argument("--variant", choices=["crossing", "control"], default="crossing")
    p_toy.set_defaults(func=cmd_toy)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        log.error("%s", exc)
        return 2
    except (TrainingAbort, SolverError, DimensionMismatch) as exc:
        log.error("%s", exc)
        return 1


def entrypoint() -> None:
    sys.exit(main())
