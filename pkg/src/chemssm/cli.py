"""Command-line orchestration: data generation through evaluation and export.

Every command is idempotent for fixed inputs and seed: artifacts carry no
timestamps, checkpoints and datasets serialize deterministically, and each
run writes its resolved configuration next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O.
Set ``CHEMSSM_THREADS`` before launching to pin BLAS thread counts (single
threaded execution is what makes reruns bit-identical).
"""

from __future__ import annotations

import os

_threads = os.environ.get("CHEMSSM_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import dataclasses
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, write_resolved
from .dataset import DatasetFormatError, TrajectoryDataset, read_dataset, write_dataset
from .datagen import generate_dataset, mechanism_by_name
from .metrics import rel_l2, write_report_csv, write_report_json
from .model import ModelSpec, build_model, prepare_windows
from .pipeline import WindowPlan, clamp_nonneg, time_decompose
from .regimes import NoFlatRegimeError, compute_tau, split_by_threshold
from .rollout import RolloutError, RolloutPlan, recursive_rollout
from .rosenbrock import IntegratorError
from .simplex import DegenerateFaceError, InvalidEncodingError
from .tensor import NumericsError
from .training import TrainingDivergedError, train_backbone

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_NUMERIC_ERRORS = (TrainingDivergedError, RolloutError, IntegratorError,
                   NumericsError, DegenerateFaceError, InvalidEncodingError,
                   NoFlatRegimeError, np.linalg.LinAlgError)
_IO_ERRORS = (DatasetFormatError, CheckpointFormatError, OSError)


# -- helpers ----------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _loss_csv(path: Path, result) -> None:
    rows = [(i, repr(float(lr)), repr(float(loss)))
            for i, (lr, loss) in enumerate(zip(result.lr_trace, result.losses))]
    _write_csv(path, ["iteration", "lr", "loss"], rows)


def _temperature_index(variables: list[str], name: str) -> int:
    if name not in variables:
        raise ConfigError(
            f"temperature variable '{name}' not in dataset columns {variables}"
        )
    return variables.index(name)


# -- gen-data ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    params = {name: float(value) for name, value in (args.param or [])}
    spec = mechanism_by_name(args.mechanism, **params)
    ranges = None
    if args.ic_range:
        ranges = {name: (float(lo), float(hi)) for name, lo, hi in args.ic_range}
    ds = generate_dataset(spec, args.samples, args.nt, args.dt, args.seed,
                          split=args.split, ranges=ranges,
                          rtol=args.rtol, atol=args.atol)
    write_dataset(args.out, ds)
    print(f"wrote {ds.n_samples} x {ds.n_t} x {ds.n_vars} trajectories to {args.out}")
    return EXIT_OK


# -- fit-stats --------------------------------------------------------------


def cmd_fit_stats(args) -> int:
    ds = read_dataset(args.data)
    plan = WindowPlan(width=args.width, segments=args.segments)
    spec = ModelSpec(variant=args.variant, exponent=args.exponent)
    prep = prepare_windows(ds.values, ds.variables, ds.species, spec, plan)
    out = Path(args.out)
    _write_json(out, {
        "stats": prep.stats.to_json(),
        "window": {"width": plan.width, "segments": plan.segments},
        "variant": args.variant,
    })
    print(f"fitted stats for {prep.targets.shape[0]} windows -> {out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------


def _train_one(cfg: ExperimentConfig, ds: TrajectoryDataset, out: Path,
               name: str, threshold=None) -> None:
    prep = prepare_windows(ds.values, ds.variables, ds.species, cfg.model, cfg.window)
    model = build_model(prep, cfg.model, ds.variables, ds.species,
                        seed=cfg.seed, window=cfg.window)
    model.threshold = threshold
    snapdir = out / "snapshots"

    def snap(done: int) -> None:
        save_checkpoint(snapdir / f"{name}-{done:06d}.ckpt", model)

    result = train_backbone(model.params, model.cfg, prep.inputs, prep.targets,
                            cfg.train, checkpoint_fn=snap)
    save_checkpoint(out / f"{name}.ckpt", model)
    _loss_csv(out / f"loss-{name}.csv", result)
    print(f"{name}: {prep.targets.shape[0]} windows, "
          f"final loss {result.losses[-1]:.6e} -> {out / (name + '.ckpt')}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.variant:
        if args.variant == "regime-pair":
            if cfg.regimes is None:
                raise ConfigError(
                    "--variant regime-pair needs a 'regimes' section (epsilon is required)"
                )
        else:
            cfg = dataclasses.replace(
                cfg,
                model=dataclasses.replace(cfg.model, variant=args.variant),
                regimes=None,
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = read_dataset(cfg.train_data)

    if cfg.regimes is not None:
        t_idx = _temperature_index(ds.variables, cfg.regimes.temperature)
        temps = ds.values[:, :, t_idx]
        threshold = compute_tau(temps, cfg.regimes.epsilon)
        below, above = split_by_threshold(temps[:, 0], threshold)
        if not below.any() or not above.any():
            raise ConfigError(
                f"regime split is degenerate: {int(below.sum())} below / "
                f"{int(above.sum())} above tau={threshold.tau}"
            )
        _write_json(out / "threshold.json", threshold.to_json())
        print(f"tau = {threshold.tau} ({int(below.sum())} below, {int(above.sum())} above)")
        _train_one(cfg, ds.select(below), out, "below", threshold)
        _train_one(cfg, ds.select(above), out, "above", threshold)
    else:
        _train_one(cfg, ds, out, "model")
    write_resolved(cfg, out)
    return EXIT_OK


# -- predict ----------------------------------------------------------------


def _load_pair(args):
    """Either one --checkpoint, or --below and --above forming a routed pair."""
    if args.checkpoint and (args.below or args.above):
        raise ConfigError("give either --checkpoint or --below/--above, not both")
    if args.checkpoint:
        return load_checkpoint(args.checkpoint), None, [args.checkpoint]
    if not (args.below and args.above):
        raise ConfigError("need --checkpoint, or both --below and --above")
    below = load_checkpoint(args.below)
    above = load_checkpoint(args.above)
    if below.threshold is None or above.threshold is None:
        raise ConfigError("regime checkpoints must carry a threshold")
    if below.threshold != above.threshold:
        raise ConfigError("below/above checkpoints disagree on the threshold")
    return below, above, [args.below, args.above]


def cmd_predict(args) -> int:
    model, above, sources = _load_pair(args)
    ds = read_dataset(args.data)
    if ds.variables != model.variables:
        raise ConfigError(
            f"dataset columns {ds.variables} != model columns {model.variables}"
        )
    if model.window is None:
        raise ConfigError("checkpoint carries no window plan; cannot decompose")
    plan = model.window
    values = clamp_nonneg(ds.values)
    windows = time_decompose(values, plan)
    ics = windows[:, 0, :]
    n = ds.n_samples

    if above is None:
        pred = model.predict_physical(ics, plan.width)
    else:
        t_idx = _temperature_index(ds.variables, args.temperature)
        below_mask, _ = split_by_threshold(values[:, 0, t_idx], model.threshold)
        window_below = np.repeat(below_mask, plan.segments)
        pred = np.empty((windows.shape[0], plan.width, len(ds.variables)))
        if window_below.any():
            pred[window_below] = model.predict_physical(ics[window_below], plan.width)
        if (~window_below).any():
            pred[~window_below] = above.predict_physical(ics[~window_below], plan.width)

    full = pred.reshape(n, plan.segments * plan.width, len(ds.variables))
    out_ds = TrajectoryDataset(
        values=full,
        variables=list(ds.variables),
        dt=ds.dt,
        units=dict(ds.units),
        species=list(ds.species),
        meta={
            "mode": "time-decomposed",
            "window": {"width": plan.width, "segments": plan.segments},
            "source": str(args.data),
            "checkpoints": [str(s) for s in sources],
        },
    )
    write_dataset(args.out, out_ds)
    print(f"wrote predictions {full.shape} to {args.out}")
    return EXIT_OK


# -- rollout ----------------------------------------------------------------


def _parse_plan(text: str) -> RolloutPlan:
    try:
        return RolloutPlan(tuple(int(tok) for tok in text.split(",") if tok))
    except ValueError as e:
        raise ConfigError(f"bad --plan '{text}': {e}") from e


def cmd_rollout(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    if ds.variables != model.variables:
        raise ConfigError(
            f"dataset columns {ds.variables} != model columns {model.variables}"
        )
    if args.plan:
        plan = _parse_plan(args.plan)
    elif model.window is not None:
        plan = RolloutPlan((model.window.width,) * model.window.segments)
    else:
        raise ConfigError("no --plan given and checkpoint has no window plan")

    if args.sample >= ds.n_samples:
        raise ConfigError(f"--sample {args.sample} out of range (n={ds.n_samples})")
    samples = range(ds.n_samples) if args.sample < 0 else [args.sample]
    need = plan.starts[-1] + plan.windows[-1]
    values = clamp_nonneg(ds.values)
    have_truth = ds.n_t >= need
    if args.teacher_forcing and not have_truth:
        raise ConfigError(
            f"teacher forcing needs {need} source points, dataset has {ds.n_t}"
        )

    preds = []
    rows = []
    for s in samples:
        truth = values[s] if have_truth else None
        ic0 = model.ic_codes(values[s, :1, :])[0]
        result = recursive_rollout(ic0, model, plan, truth=truth,
                                   teacher_forcing=args.teacher_forcing,
                                   jump_threshold=args.jump_threshold)
        preds.append(result.values)
        for rep in result.reports:
            rows.append((s, rep.index, rep.length, rep.start,
                         repr(rep.seed_jump), int(rep.flagged),
                         "" if rep.rel_l2 is None else repr(rep.rel_l2)))

    out = Path(args.out)
    out_ds = TrajectoryDataset(
        values=np.stack(preds),
        variables=list(ds.variables),
        dt=ds.dt,
        units=dict(ds.units),
        species=list(ds.species),
        meta={
            "mode": "teacher-forced" if args.teacher_forcing else "recursive",
            "plan": list(plan.windows),
            "samples": [int(s) for s in samples],
            "source": str(args.data),
            "checkpoints": [str(args.checkpoint)],
        },
    )
    write_dataset(out, out_ds)
    _write_csv(out / "windows.csv",
               ["sample", "window", "length", "start", "seed_jump", "flagged", "rel_l2"],
               rows)
    print(f"rolled out {len(preds)} trajectories of {plan.total} points to {out}")
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------


def _aligned_truth(pred: TrajectoryDataset, truth: TrajectoryDataset) -> np.ndarray:
    """Truth values matching the prediction layout point for point."""
    if pred.variables != truth.variables:
        raise ConfigError(
            f"prediction columns {pred.variables} != truth columns {truth.variables}"
        )
    if pred.n_samples != truth.n_samples:
        raise ConfigError(
            f"prediction has {pred.n_samples} samples, truth has {truth.n_samples}"
        )
    if pred.n_t == truth.n_t:
        return truth.values
    window = pred.meta.get("window")
    if window is not None:
        plan = WindowPlan(width=int(window["width"]), segments=int(window["segments"]))
        if pred.n_t != plan.segments * plan.width:
            raise ConfigError(
                f"prediction length {pred.n_t} does not match its window plan {window}"
            )
        decomposed = time_decompose(truth.values, plan)
        return decomposed.reshape(truth.n_samples, plan.segments * plan.width,
                                  len(truth.variables))
    raise ConfigError(
        f"prediction length {pred.n_t} != truth length {truth.n_t} and no window "
        "metadata to align them"
    )


def cmd_evaluate(args) -> int:
    pred = read_dataset(args.pred)
    truth = read_dataset(args.truth)
    aligned = _aligned_truth(pred, truth)
    report = rel_l2(pred.values, aligned, clip=args.clip, variables=pred.variables)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(out / "report.json", report)
    write_report_csv(out / "report.csv", report)
    per_var = ", ".join(f"{v}={e:.4f}%" for v, e in zip(report.variables, report.per_variable))
    print(f"overall {report.overall:.4f}% ({per_var}) -> {out}")
    return EXIT_OK


# -- export -----------------------------------------------------------------

_EXPORT_PATTERNS = ("config.json", "threshold.json", "loss-*.csv", "report.json",
                    "report.csv", "windows.csv")


def cmd_export(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise ConfigError(f"run directory {run} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    copied = []
    for pattern in _EXPORT_PATTERNS:
        for src in sorted(run.rglob(pattern)):
            rel = src.relative_to(run)
            dest = out / "-".join(rel.parts)
            shutil.copyfile(src, dest)
            copied.append(dest.name)
    if not copied:
        print(f"no exportable artifacts under {run}")
    else:
        print(f"exported {len(copied)} files to {out}: {', '.join(copied)}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chemssm",
        description="Surrogate modeling of stiff chemical kinetics with a "
                    "selective state-space backbone.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress details to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="integrate a mechanism into a dataset")
    p.add_argument("--mechanism", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--ic-range", nargs=3, action="append",
                   metavar=("NAME", "LO", "HI"))
    p.add_argument("--param", nargs=2, action="append", metavar=("NAME", "VALUE"))
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--atol", type=float, default=1e-10)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("fit-stats", help="fit normalization stats on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=101)
    p.add_argument("--segments", type=int, default=10)
    p.add_argument("--exponent", type=float, default=0.2)
    p.add_argument("--variant", default="standalone",
                   choices=("standalone", "mass-conserving"))
    p.set_defaults(fn=cmd_fit_stats)

    p = sub.add_parser("train", help="train a surrogate per the experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant",
                   choices=("standalone", "mass-conserving", "latent", "regime-pair"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="time-decomposed prediction on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--below", help="non-igniting regime checkpoint")
    p.add_argument("--above", help="igniting regime checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temperature", default="T",
                   help="routing column for regime pairs")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("rollout", help="recursive window-chained prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", help="comma-separated window lengths, e.g. 101,76,31")
    p.add_argument("--sample", type=int, default=-1,
                   help="trajectory index; -1 rolls out all")
    p.add_argument("--teacher-forcing", action="store_true")
    p.add_argument("--jump-threshold", type=float, default=np.inf)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("evaluate", help="relative-L2 error of predictions vs truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip", action="store_true",
                   help="floor near-zero denominators")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export", help="collect plot-ready CSV/JSON artifacts")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except _IO_ERRORS as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
