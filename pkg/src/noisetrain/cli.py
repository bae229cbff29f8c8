"""Command-line entry point: train / eval / sweep / report."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from .bound import BoundInputs, bound_rhs, taylor_check
from .config import ConfigError, ExperimentConfig, load_config
from .evalharness import evaluate
from .network import load_checkpoint, save_checkpoint
from .optim import train
from .perturb import NoiseSpec
from .sharpness import LossSliceSpec, loss_slice
from .tensorcore import NumericError, RngStream

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_dataset(data_cfg: dict, seed: int):
    """Materialize the (train, val, test) splits described by a data config."""
    kind = data_cfg["kind"]
    rng = RngStream(data_cfg.get("seed", seed), "init", replicate=1000)
    if kind == "blobs":
        ds = datamod.gen_blobs(data_cfg["classes"], data_cfg["per_class"],
                               data_cfg["dim"], data_cfg["separation"], rng)
    elif kind == "spirals":
        ds = datamod.gen_spirals(data_cfg["classes"], data_cfg["per_class"],
                                 data_cfg.get("noise_std", 0.1), rng)
    elif kind == "idx":
        ds = datamod.load_idx(data_cfg["images"], data_cfg["labels"])
    else:
        raise ConfigError(f"unknown data kind {kind}")
    fractions = data_cfg.get("fractions", [0.6, 0.2, 0.2])
    split_rng = RngStream(data_cfg.get("seed", seed), "data-shuffle", replicate=1000)
    return datamod.split(ds, fractions, split_rng)


def _output_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get("NOISETRAIN_OUTPUT_ROOT", "")
    return Path(root) / cfg.output_dir if root else Path(cfg.output_dir)


def run_train(cfg: ExperimentConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds, _test_ds = build_dataset(cfg.data, cfg.train.seed)
    result = train(cfg.model, train_ds, val_ds, cfg.train)

    chash = cfg.config_hash
    with open(out_dir / "metrics.jsonl", "w") as f:
        for rec in result.log:
            f.write(json.dumps({**rec, "config_hash": chash}) + "\n")
    meta = {"config_hash": chash, "data": cfg.data, "best_epoch": result.best_epoch,
            "label_smoothing": cfg.train.label_smoothing}
    save_checkpoint(out_dir / "best.ckpt", cfg.model, result.best_params, meta)
    save_checkpoint(out_dir / "final.ckpt", cfg.model, result.final_params, meta)
    with open(out_dir / "config.resolved.json", "w") as f:
        json.dump({"config_hash": chash, "config": cfg.raw}, f, indent=1)
    return out_dir


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out_dir = run_train(cfg, _output_dir(cfg))
    print(f"wrote artifacts to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    checkpoints = [Path(p) for p in args.checkpoint]
    for p in checkpoints:
        if not p.exists():
            raise ConfigError(f"missing checkpoint {p}")
    spec, first, meta = load_checkpoint(checkpoints[0])
    param_sets = [first]
    for p in checkpoints[1:]:
        s2, params, _ = load_checkpoint(p)
        if s2 != spec:
            raise ConfigError(f"checkpoint {p} has a different model spec")
        param_sets.append(params)
    if "data" not in meta:
        raise ConfigError("checkpoint sidecar carries no dataset description")
    _train_ds, _val_ds, test_ds = build_dataset(meta["data"], args.seed)

    reports = []
    for sigma in args.sigma_test:
        rep = evaluate(spec, param_sets, test_ds,
                       NoiseSpec("gaussian", sigma), args.draws, args.seed)
        reports.append(rep)
        single = len(param_sets) == 1
        line = rep.formatted()
        if single:
            line = f"{rep.mean_acc:.4f} ± {rep.noise_std:.4f} (single checkpoint)"
        print(f"sigma_test={sigma:g}: {line}")
    payload = {"config_hash": meta.get("config_hash"),
               "draws": args.draws, "num_seeds": len(param_sets),
               "reports": [r.to_dict() for r in reports]}
    if len(param_sets) == 1:
        for r in payload["reports"]:
            r.pop("weight_std", None)
    if args.output:
        with open(args.output, "w") as f:
            json.dump(payload, f, indent=1)
    else:
        print(json.dumps(payload, indent=1))
    return 0


def run_sweep(cfg: ExperimentConfig, out_dir: Path, resume: bool) -> dict:
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    sigma_trains = [float(s) for s in cfg.sweep.get("sigma_train", [cfg.train.schedule.max_strength])]
    sigma_tests = [float(s) for s in cfg.sweep.get("sigma_test", cfg.eval_sigma_test)]
    seeds = [int(s) for s in cfg.sweep.get("seeds", list(range(cfg.eval_seeds)))]

    table: dict[float, dict[float, dict]] = {}
    failures = []
    for st in sigma_trains:
        cell_dir = out_dir / f"sigma_train_{st:g}"
        cell_file = cell_dir / "cell.json"
        if resume and cell_file.exists():
            with open(cell_file) as f:
                table[st] = {float(k): v for k, v in json.load(f)["by_sigma_test"].items()}
            continue
        try:
            param_sets = []
            for seed in seeds:
                from dataclasses import replace
                tcfg = replace(cfg.train, seed=seed,
                               schedule=replace(cfg.train.schedule, max_strength=st))
                sub = ExperimentConfig(cfg.model, cfg.data, tcfg, cfg.eval_sigma_test,
                                       cfg.eval_draws, cfg.eval_seeds,
                                       str(cell_dir / f"seed_{seed}"), None,
                                       {**cfg.raw, "_cell": [st, seed]})
                run_dir = cell_dir / f"seed_{seed}"
                if not (resume and (run_dir / "best.ckpt").exists()):
                    run_train(sub, run_dir)
                _, params, _ = load_checkpoint(run_dir / "best.ckpt")
                param_sets.append(params)
            _train_ds, _val_ds, test_ds = build_dataset(cfg.data, cfg.train.seed)
            by_sigma = {}
            for sigma in sigma_tests:
                rep = evaluate(cfg.model, param_sets, test_ds,
                               NoiseSpec("gaussian", sigma), cfg.eval_draws,
                               rng_seed=hash((st, sigma)) % (2 ** 31))
                by_sigma[sigma] = rep.to_dict()
            table[st] = by_sigma
            cell_dir.mkdir(parents=True, exist_ok=True)
            with open(cell_file, "w") as f:
                json.dump({"sigma_train": st,
                           "by_sigma_test": {str(k): v for k, v in by_sigma.items()},
                           "config_hash": cfg.config_hash}, f, indent=1)
        except Exception as e:  # record and continue with remaining cells
            failures.append({"sigma_train": st, "error": str(e)})
    summary = {"table": table, "failures": failures,
               "sigma_tests": sigma_tests, "config_hash": cfg.config_hash}
    _write_sweep_summary(summary, out_dir)
    return summary


def _write_sweep_summary(summary: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    table, sigma_tests = summary["table"], summary["sigma_tests"]
    best = {s: max(table, key=lambda st: table[st][s]["mean_acc"])
            for s in sigma_tests if table}
    lines = ["sigma_train \\ sigma_test | " +
             " | ".join(f"{s:g}" for s in sigma_tests)]
    for st in sorted(table):
        cells = []
        for s in sigma_tests:
            r = table[st][s]
            txt = f"{r['mean_acc']:.4f} ± {r['noise_std']:.4f} ± {r['weight_std']:.4f}"
            if best.get(s) == st:
                txt = "*" + txt
            cells.append(txt)
        lines.append(f"{st:g} | " + " | ".join(cells))
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    with open(out_dir / "summary.json", "w") as f:
        json.dump({"config_hash": summary["config_hash"],
                   "best_per_sigma_test": {str(k): v for k, v in best.items()},
                   "failures": summary["failures"],
                   "table": {str(st): {str(s): r for s, r in row.items()}
                             for st, row in table.items()}}, f, indent=1)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    summary = run_sweep(cfg, _output_dir(cfg), args.resume)
    print((_output_dir(cfg) / "summary.txt").read_text())
    return 0


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def run_report(run_dir: Path, with_bound: bool = True,
               with_slice: bool = True, mc_samples: int = 2000) -> Path:
    metrics_path = run_dir / "metrics.jsonl"
    if not metrics_path.exists():
        raise ConfigError(f"no metrics.jsonl in {run_dir}")
    records = [json.loads(line) for line in metrics_path.read_text().splitlines()]
    rep_dir = run_dir / "report"
    rep_dir.mkdir(exist_ok=True)

    _write_csv(rep_dir / "accuracy_vs_epoch.csv",
               ["epoch", "val_acc_clean", "val_acc_noisy"],
               [(r["epoch"], r["val_acc_clean"], r["val_acc_noisy"]) for r in records])
    _write_csv(rep_dir / "grad_norm_vs_epoch.csv",
               ["epoch", "grad_norm_mean", "lr", "strength_t"],
               [(r["epoch"], r["grad_norm_mean"], r["lr"], r["strength_t"]) for r in records])
    _write_csv(rep_dir / "sharpness_vs_loss.csv",
               ["train_loss", "grad_sharpness_mean"],
               [(r["train_loss"], r["grad_sharpness_mean"]) for r in records])
    cos_rows = [(r["epoch"], r["cos_sim_mean"]) for r in records
                if r.get("cos_sim_mean") is not None]
    if cos_rows:
        _write_csv(rep_dir / "cosine_vs_epoch.csv", ["epoch", "cos_sim_mean"], cos_rows)
    cum = np.cumsum([r["step_distance"] for r in records])
    _write_csv(rep_dir / "distance_cumulative.csv", ["epoch", "cumulative_distance"],
               [(r["epoch"], c) for r, c in zip(records, cum)])

    ckpt = run_dir / "best.ckpt"
    if ckpt.exists() and (with_bound or with_slice):
        spec, params, meta = load_checkpoint(ckpt)
        train_ds, _val, _test = build_dataset(meta["data"], 0)
        smoothing = meta.get("label_smoothing", 0.0)
        rng = RngStream(0, "noise-eval", replicate=777)
        if with_bound:
            wns = float(np.dot(params.theta, params.theta))
            rows = []
            for sigma in (0.01, 0.02, 0.05, 0.1):
                inp = BoundInputs(params.theta.size, len(train_ds), 0.05, wns, sigma)
                res = bound_rhs(spec, params, train_ds, inp, mc_samples, rng, smoothing)
                rows.append((sigma, res["expected_loss"], res["h_term"], res["total"]))
            _write_csv(rep_dir / "bound_table.csv",
                       ["sigma", "expected_loss", "h_term", "total"], rows)
            lhs, rhs, gap = taylor_check(spec, params, train_ds, 0.01,
                                         mc_samples, rng, smoothing)
            _write_csv(rep_dir / "taylor_check.csv",
                       ["sigma", "mc_expected_loss", "second_order", "abs_gap"],
                       [(0.01, lhs, rhs, gap)])
        if with_slice:
            alphas, _betas, grid = loss_slice(spec, params, train_ds,
                                              LossSliceSpec(grid=21, extent=0.5),
                                              rng, smoothing)
            _write_csv(rep_dir / "loss_slice.csv", ["alpha", "loss"],
                       list(zip(alphas, grid)))
    return rep_dir


def cmd_report(args) -> int:
    rep_dir = run_report(Path(args.run), with_bound=not args.no_bound,
                         with_slice=not args.no_slice)
    print(f"wrote report to {rep_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noisetrain",
                                description="Weight-noise-robust training toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="noisy evaluation of checkpoints")
    e.add_argument("--checkpoint", nargs="+", required=True,
                   help="one checkpoint per trained seed")
    e.add_argument("--sigma-test", dest="sigma_test", type=float, nargs="+",
                   default=[0.0, 0.1])
    e.add_argument("--draws", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output", default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid sweep over perturbation strengths")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="emit plot-ready CSV series from a run")
    r.add_argument("--run", required=True)
    r.add_argument("--no-bound", action="store_true")
    r.add_argument("--no-slice", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
