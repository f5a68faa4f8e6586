"""Command line entry point: ``hmbitcn <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as tn
from .cif import CifConfig, apply_cif
from .data import ConfigError, Dataset, atomic_write, generate_synthetic, load_dataset, save_dataset
from .experiment import ExperimentConfig, ablation, cif_grid, write_csv
from .metrics import METRIC_NAMES
from .model import HmBiTcn, HmBiTcnConfig, receptive_field_rows, timing_report
from .snr import snr_grid, verify_snr_grid
from .svd import svd_report_rows
from .train import MetricsReport, evaluate, run_multi_seed, split

log = logging.getLogger("hmbitcn")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if args.seed is not None:
        cfg.train.seeds = [args.seed]
        if cfg.synthetic is not None and getattr(args, "command", "") == "gen-data":
            cfg.synthetic.seed = args.seed
    if getattr(args, "mode", None):
        cfg.model.direction_mode = args.mode
    overrides = {k: getattr(args, k) for k in ("t", "n", "a", "b") if getattr(args, k, None) is not None}
    if overrides and getattr(args, "command", "") not in ("grid-cif",):
        base = cfg.cif.to_dict() if cfg.cif is not None else CifConfig().to_dict()
        cfg.cif = CifConfig.from_dict({**base, **{k: v[0] if isinstance(v, list) else v for k, v in overrides.items()}})
    return cfg


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    out = Path(args.out or (cfg.output_dir if cfg is not None else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_snr_verify(args) -> int:
    coefficients = None
    if args.a is not None and args.b is not None:
        coefficients = list(zip(args.a, args.b))
    cells = snr_grid(coefficients)
    seed = 0 if args.seed is None else args.seed
    start = time.perf_counter()
    rows = verify_snr_grid(cells, count=args.count, seed=seed)
    elapsed = time.perf_counter() - start
    out = _out_dir(args)
    write_csv(out / "snr_verify.csv", rows)
    ok = sum(abs(r["empirical_gain"] - r["theoretical_gain"]) / r["theoretical_gain"] <= args.tolerance for r in rows)
    print(f"{ok}/{len(rows)} cells within {args.tolerance:.0%} at N={args.count} ({elapsed:.1f}s) -> {out / 'snr_verify.csv'}")
    return 0 if ok >= 0.99 * len(rows) else 1


def cmd_gradcheck(args) -> int:
    cif = CifConfig(t=1, n=2, a=1.0, b=-1.0, coefficient_mode="learnable_suppression")
    if args.config:
        base = ExperimentConfig.load(args.config)
        cif = base.cif or cif
        model_cfg = HmBiTcnConfig(**{**base.model.to_dict(), "input_channels": 4, "cif": cif})
    else:
        model_cfg = HmBiTcnConfig(input_channels=4, cif=cif)
    seed = 0 if args.seed is None else args.seed
    model = HmBiTcn(model_cfg, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 16, 4))
    labels = np.array([0, 1]) % model_cfg.num_classes

    def loss():
        return tn.softmax_cross_entropy(model(x), labels)

    tn.backward(loss())
    rows = []
    for i, p in enumerate(model.parameters()):
        err = tn.relative_error(p.grad, tn.numerical_gradient(loss, p, args.h))
        rows.append({"param": i, "shape": "x".join(map(str, p.shape)) or "scalar", "max_rel_error": err})
    worst = max(r["max_rel_error"] for r in rows)
    if args.out:
        write_csv(_out_dir(args) / "gradcheck.csv", rows)
    for r in rows:
        print(f"param {r['param']:3d} {r['shape']:>10}  {r['max_rel_error']:.3e}")
    print(f"worst relative error {worst:.3e} (limit {args.tolerance:g})")
    return 0 if worst < args.tolerance else 1


def cmd_svd_report(args) -> int:
    cfg = _load_config(args)
    ds = cfg.load_data()
    X = ds.values.reshape(-1, ds.channels)
    ns = args.n or list(range(1, ds.channels // 2 + 1))
    coefficients = list(zip(args.a, args.b)) if args.a and args.b else [(1.0, 1.0), (1.0, -1.0)]
    rows = svd_report_rows(X, [(n, a, b) for n in ns for a, b in coefficients])
    out = _out_dir(args, cfg)
    write_csv(out / "svd_report.csv", rows)
    print(f"{len(rows)} rows -> {out / 'svd_report.csv'}")
    return 0


def cmd_cif_apply(args) -> int:
    if not args.dataset:
        raise ConfigError("cif-apply needs --dataset")
    cfg = _load_config(args)
    ds = load_dataset(args.dataset)
    cif = cfg.cif or CifConfig()
    fused = Dataset(apply_cif(ds.values, cif), ds.labels, ds.subjects, ds.num_classes,
                    None if ds.signal is None else apply_cif(ds.signal, cif))
    out = _out_dir(args)
    save_dataset(fused, out)
    print(f"fused {len(ds)} samples with t={cif.t} n={cif.n} a={cif.a} b={cif.b} -> {out}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if cfg.synthetic is None:
        raise ConfigError("config has no synthetic section")
    ds = generate_synthetic(cfg.synthetic)
    out = _out_dir(args)
    save_dataset(ds, out)
    print(f"{len(ds)} samples, T={ds.steps}, C={ds.channels}, K={ds.num_classes} -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = cfg.load_data()
    splits = split(ds, cfg.split)
    model_cfg = cfg.model_config(ds)
    out = _out_dir(args, cfg)
    report, results = run_multi_seed(model_cfg, splits, cfg.train)
    for seed, result in zip(cfg.train.seeds, results):
        write_csv(out / f"history_seed{seed}.csv", result.history, ["epoch", "train_loss", "val_f1"])
        result.model.save(out / f"model_seed{seed}.bin")
    write_csv(out / "report.csv", report.per_seed)
    cfg.save(out / "config.json")
    summary = report.summary()
    atomic_write(out / "summary.txt", summary + "\n")
    print(summary)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    ds = cfg.load_data()
    _, _, test = split(ds, cfg.split)
    model_cfg = cfg.model_config(ds)
    runs = []
    for path in args.model:
        model = HmBiTcn.load(path, model_cfg)
        runs.append({"model": str(path), **evaluate(model, test)})
    out = _out_dir(args, cfg)
    write_csv(out / "eval.csv", runs)
    report = MetricsReport.from_runs(runs)
    print(report.summary())
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    if cfg.cif is None:
        cfg.cif = CifConfig()
    table, per_seed, _ = ablation(cfg)
    out = _out_dir(args, cfg)
    write_csv(out / "ablation.csv", table, ["cif", "direction", *METRIC_NAMES])
    write_csv(out / "ablation_seeds.csv", per_seed,
              ["cif", "direction", "seed", "best_epoch", "epochs_run", *METRIC_NAMES])
    width = max(len(n) for n in METRIC_NAMES)
    print(f"{'cif':<4} {'direction':<9} " + " ".join(f"{n:>{width}}" for n in METRIC_NAMES))
    for row in table:
        print(f"{row['cif']:<4} {row['direction']:<9} " + " ".join(f"{row[n]:>{width}}" for n in METRIC_NAMES))
    return 0


def cmd_grid_cif(args) -> int:
    cfg = _load_config(args)
    base = cfg.cif or CifConfig()
    ts = args.t or [base.t]
    ns = args.n or [base.n]
    a_vals = args.a or [base.a]
    b_vals = args.b or [base.b]
    rows = cif_grid(cfg, ts, ns, [(a, b) for a in a_vals for b in b_vals])
    out = _out_dir(args, cfg)
    write_csv(out / "grid_cif.csv", rows)
    for r in rows:
        print(f"t={r['t']} n={r['n']} a={r['a']} b={r['b']}: accuracy {100 * r['accuracy_mean']:.2f}±{100 * r['accuracy_std']:.2f}")
    return 0


def cmd_rf_report(args) -> int:
    cfg = _load_config(args)
    rows = receptive_field_rows(cfg.model)
    if args.out:
        write_csv(_out_dir(args) / "receptive_field.csv", rows)
    print("conv block dilation empirical stacked_formula quoted_formula support")
    for r in rows:
        print(f"{r['conv_layer']:4d} {r['block']:5d} {r['dilation']:8d} {r['empirical_span']:9d} "
              f"{r['stacked_formula']:15d} {r['quoted_formula']:13d} {r['empirical_support']:7d}")
    return 0 if all(r["empirical_span"] == r["stacked_formula"] for r in rows) else 1


def cmd_timing(args) -> int:
    cfg = _load_config(args)
    report = timing_report(cfg.model)
    print(json.dumps(report, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmbitcn", description="Channel-imposed fusion and HM-BiTCN toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, coefs="single"):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--dataset", help="dataset directory (overrides the config)")
        p.add_argument("--mode", choices=["forward", "backward", "both"], help="direction mode override")
        if coefs == "single":
            p.add_argument("--t", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--a", type=float)
            p.add_argument("--b", type=float)
        else:
            p.add_argument("--t", type=_ints, help="comma separated")
            p.add_argument("--n", type=_ints, help="comma separated")
            p.add_argument("--a", type=_floats, help="comma separated")
            p.add_argument("--b", type=_floats, help="comma separated")
        p.set_defaults(func=fn)
        return p

    p = add("snr-verify", cmd_snr_verify, "Monte-Carlo check of the SNR gain law", coefs="list")
    p.add_argument("--count", type=int, default=1_000_000)
    p.add_argument("--tolerance", type=float, default=0.02)
    p = add("gradcheck", cmd_gradcheck, "finite-difference check of full-model gradients")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    add("svd-report", cmd_svd_report, "SVD fusion diagnostics per (n, a, b)", coefs="list")
    add("cif-apply", cmd_cif_apply, "apply CIF to a dataset directory")
    add("gen-data", cmd_gen_data, "write a synthetic dataset")
    add("train", cmd_train, "train one model per seed and report test metrics")
    p = add("eval", cmd_eval, "evaluate saved models on the test split")
    p.add_argument("--model", nargs="+", required=True, help="parameter files written by train")
    add("ablate", cmd_ablate, "CIF on/off x forward/backward/both ablation table")
    add("grid-cif", cmd_grid_cif, "manual sweep over t, n, a, b", coefs="list")
    add("rf-report", cmd_rf_report, "receptive field probe vs closed forms")
    add("timing", cmd_timing, "parameter count and forward/backward wall-clock")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"hmbitcn {args.command}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
