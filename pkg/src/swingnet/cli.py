"""Command-line pipeline: simulate, generate-data, train, evaluate,
benchmark, seed-matrix.

Every run is driven by a self-describing JSON config; command-line flags
only override config fields.  Non-timing outputs are reproducible byte for
byte from config plus seed.  Exit codes: 0 success, 1 numerical failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import benchmark as bench
from . import datasets as dsmod
from . import mlp, network, solver, training

USAGE_ERROR = 2
NUMERICAL_ERROR = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "kundur11"
    scenario: str = "A"
    flavour: str = "vanilla"
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    disturbance_bus: int | None = None      # 1-based, like the case files
    workspace: str = "."
    solver: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, overrides=None):
        with open(path) as fh:
            raw = json.load(fh)
        cfg = cls(**{k: v for k, v in raw.items() if k in cls.__dataclass_fields__})
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if overrides:
            for k, v in overrides.items():
                if v is not None:
                    setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def validate(self):
        if self.flavour not in ("vanilla", "dtnn", "pinn"):
            raise ConfigError(f"unknown flavour {self.flavour!r}")
        if self.scenario not in dsmod.SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        lam_dt = self.training.get("lambda_dt")
        lam_f = self.training.get("lambda_f_max")
        if self.flavour == "vanilla" and (lam_dt or lam_f):
            raise ConfigError("vanilla flavour requires lambda_dt = lambda_f = 0")
        if self.flavour == "dtnn" and lam_f:
            raise ConfigError("dtnn flavour requires lambda_f = 0")
        if self.flavour == "pinn" and (lam_dt == 0 or lam_f == 0):
            raise ConfigError("pinn flavour requires nonzero lambda_dt and lambda_f")

    def load_model_case(self):
        if os.path.exists(self.case):
            return network.load_case(self.case)
        return network.load_bundled_case(self.case)

    def bus_index(self, model):
        if self.disturbance_bus is not None:
            return int(self.disturbance_bus) - 1
        return dsmod.DEFAULT_DISTURBANCE_BUS[model.name]

    def solver_config(self, default_rel=1e-10):
        kwargs = dict(self.solver)
        kwargs.setdefault("rel_tol", default_rel)
        return solver.SolverConfig(**kwargs)

    def hyperparameters(self):
        over = dict(self.training)
        lam_dt = over.pop("lambda_dt", None)
        lam_f0 = over.pop("lambda_f0", 0.005)
        lam_f_max = over.pop("lambda_f_max", None)
        fade = over.pop("fade_epochs", 15.0)
        hyper = training.preset_hyperparameters(
            self.flavour, self.scenario, seed=self.seed,
            lambda_f0=lam_f0, fade_epochs=fade, **over,
        )
        weights = hyper.weights
        if lam_dt is not None or lam_f_max is not None:
            weights = training.flavour_weights(
                self.flavour,
                lambda_dt=weights.lambda_dt if lam_dt is None else lam_dt,
                lambda_f0=lam_f0,
                lambda_f_max=weights.lambda_f_max if lam_f_max is None else lam_f_max,
                fade_epochs=fade,
            )
        from dataclasses import replace
        return replace(hyper, weights=weights)


def _data_paths(cfg, kind):
    base = os.path.join(cfg.workspace, "data")
    tag = {"train": cfg.scenario, "val": f"{cfg.scenario}_val",
           "test": "test", "collocation": "collocation"}[kind]
    return os.path.join(base, f"{cfg.case}_{tag}.csv")


def _ensure_dataset(cfg, model, kind):
    path = _data_paths(cfg, kind)
    if os.path.exists(path):
        return dsmod.load_dataset(path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    bus = cfg.bus_index(model)
    sc = cfg.solver_config()
    if kind == "train":
        ds = dsmod.generate(model, cfg.scenario, bus, sc)
    elif kind == "val":
        ds = dsmod.generate_offset_validation(
            model, dsmod.scenario_grid(cfg.scenario), bus, sc, scenario=cfg.scenario
        )
    elif kind == "test":
        ds = dsmod.generate(model, "test", bus, sc)
    else:
        ds = dsmod.collocation_grid(model=model)
    dsmod.save_dataset(ds, path)
    return ds


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config_from_args(args)
    model = cfg.load_model_case()
    bus = cfg.bus_index(model)
    sconf = cfg.solver_config(default_rel=args.rel_tol or 1e-8)
    disturbance = network.Disturbance(bus, args.disturbance)
    tic = time.perf_counter()
    traj = solver.simulate(model, disturbance, args.t_max, sconf)
    wall = time.perf_counter() - tic
    out_dir = args.out or os.path.join(cfg.workspace, "trajectories")
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{model.name}_P{args.disturbance:g}_eps{sconf.rel_tol:g}"
    csv_path = os.path.join(out_dir, stem + ".csv")
    solver.export_trajectory(
        traj, csv_path, os.path.join(out_dir, stem + ".manifest.json"),
        model.state_labels(), disturbance, sconf, wall,
    )
    print(f"wrote {csv_path} ({len(traj.times)} steps, {wall:.2f}s)")
    return 0


def cmd_generate_data(args):
    cfg = _config_from_args(args)
    model = cfg.load_model_case()
    kinds = ["train", "val"] if args.with_validation else ["train"]
    if args.with_collocation:
        kinds.append("collocation")
    for kind in kinds:
        path = _data_paths(cfg, kind)
        if os.path.exists(path) and not args.force:
            ds = dsmod.load_dataset(path)
            print(f"{path}: exists, {len(ds)} rows, hash ok")
            continue
        if os.path.exists(path):
            os.remove(path)
        ds = _ensure_dataset(cfg, model, kind)
        print(f"{path}: {len(ds)} rows, generated in "
              f"{ds.manifest.get('wall_time_s', 0.0):.2f}s")
    return 0


def _train_one(cfg):
    model = cfg.load_model_case()
    train_ds = _ensure_dataset(cfg, model, "train")
    val_ds = _ensure_dataset(cfg, model, "val")
    hyper = cfg.hyperparameters()
    collocation = None
    if hyper.weights.lambda_f_max != 0.0:
        collocation = _ensure_dataset(cfg, model, "collocation")
    record = training.train(model, train_ds, val_ds, hyper,
                            collocation=collocation, bus_index=cfg.bus_index(model))
    out_dir = os.path.join(cfg.workspace, "models")
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{cfg.case}_{cfg.scenario}_{cfg.flavour}_seed{cfg.seed}"
    model_path = os.path.join(out_dir, stem + ".swnn")
    mlp.save_model(record.model, model_path)
    training.export_train_record(
        record,
        os.path.join(out_dir, stem + "_record.csv"),
        os.path.join(out_dir, stem + "_summary.json"),
        os.path.join(out_dir, stem + "_timing.json"),
    )
    return model_path, record


def cmd_train(args):
    cfg = _config_from_args(args)
    model_path, record = _train_one(cfg)
    print(f"wrote {model_path} (best epoch {record.best_epoch}, "
          f"val loss {record.best_val_loss:.3e})")
    return 0


def _seed_worker(payload):
    cfg = RunConfig(**payload)
    path, record = _train_one(cfg)
    return cfg.seed, path, record.best_val_loss


def cmd_seed_matrix(args):
    cfg = _config_from_args(args)
    model = cfg.load_model_case()
    for kind in ("train", "val") + (("collocation",) if cfg.flavour == "pinn" else ()):
        _ensure_dataset(cfg, model, kind)
    payloads = []
    for seed in cfg.seeds:
        d = cfg.__dict__.copy()
        d["seed"] = int(seed)
        payloads.append(d)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_seed_worker, payloads))
    else:
        results = [_seed_worker(p) for p in payloads]
    for seed, path, val in sorted(results):
        print(f"seed {seed}: {path} (val loss {val:.3e})")
    return 0


def cmd_evaluate(args):
    cfg = _config_from_args(args)
    surrogate = mlp.load_model(args.model)
    grid_model = cfg.load_model_case()
    layout = dsmod.OutputLayout.for_model(grid_model)
    if args.test_data:
        test_ds = dsmod.load_dataset(args.test_data)
    else:
        test_ds = _ensure_dataset(cfg, grid_model, "test")
    report = bench.evaluate_accuracy(surrogate, test_ds, layout,
                                     label=os.path.basename(args.model))
    prefix = args.out or os.path.join(cfg.workspace, "reports",
                                      os.path.basename(args.model).rsplit(".", 1)[0])
    if os.path.dirname(prefix):
        os.makedirs(os.path.dirname(prefix), exist_ok=True)
    written = bench.emit_report(prefix, accuracy_reports=[report])
    print(f"max_AE_delta {report.max_ae['delta']:.4g}  "
          f"max_AE_domega {report.max_ae['domega']:.4g}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_benchmark(args):
    cfg = _config_from_args(args)
    grid_model = cfg.load_model_case()
    surrogate = mlp.load_model(args.model)
    queries = [(t, args.disturbance) for t in (1.0, 5.0, 10.0, 20.0)]
    nn_rows = bench.time_nn(surrogate, queries, reps=args.reps, case=grid_model.name)
    sv_rows = bench.time_solver(
        grid_model, queries, solver.SolverConfig(rel_tol=args.rel_tol or 1e-6),
        reps=args.reps,
    )
    # up-front cost = dataset generation + training seconds, where known
    upfront = 0.0
    timing_json = args.model.rsplit(".", 1)[0] + "_timing.json"
    if os.path.exists(timing_json):
        with open(timing_json) as fh:
            upfront += json.load(fh).get("total_s", 0.0)
    scenario = surrogate.meta.get("scenario")
    if scenario:
        manifest = os.path.join(cfg.workspace, "data",
                                f"{cfg.case}_{scenario}.csv.manifest.json")
        if os.path.exists(manifest):
            with open(manifest) as fh:
                upfront += json.load(fh).get("wall_time_s", 0.0)
    nn20 = next(r for r in nn_rows if r.t == 20.0)
    sv20 = next(r for r in sv_rows if r.t == 20.0)
    cost_nn = bench.CostModel("nn", upfront, nn20.median_s)
    cost_solver = bench.CostModel("solver", 0.0, sv20.median_s)
    prefix = args.out or os.path.join(cfg.workspace, "reports", "benchmark")
    if os.path.dirname(prefix):
        os.makedirs(os.path.dirname(prefix), exist_ok=True)
    written = bench.emit_report(prefix, timing_rows=nn_rows + sv_rows,
                                cost_models=[cost_nn, cost_solver])
    n_crit = bench.critical_n(cost_nn, cost_solver)
    print(f"speedup at t=20s: {sv20.median_s / nn20.median_s:.1f}x, "
          f"critical n = {n_crit}")
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------

def _config_from_args(args):
    overrides = {}
    for key in ("case", "scenario", "flavour", "seed", "workspace"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "seeds", None):
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.config:
        return RunConfig.load(args.config, overrides)
    cfg = RunConfig()
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


def _add_common(p):
    p.add_argument("--config", help="JSON run config; flags override its fields")
    p.add_argument("--case", help="bundled case name or case-file path")
    p.add_argument("--scenario", help="dataset scenario A-E or test")
    p.add_argument("--flavour", help="vanilla | dtnn | pinn")
    p.add_argument("--seed", type=int)
    p.add_argument("--workspace", help="root directory for all outputs")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swingnet",
        description="Swing-equation simulation and NN-surrogate pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one disturbance response")
    _add_common(p)
    p.add_argument("--disturbance", type=float, required=True, help="step size in pu")
    p.add_argument("--t-max", type=float, default=20.0)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate-data", help="build scenario datasets")
    _add_common(p)
    p.add_argument("--with-validation", action="store_true")
    p.add_argument("--with-collocation", action="store_true")
    p.add_argument("--force", action="store_true", help="regenerate even if present")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one surrogate")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("seed-matrix", help="train one flavour across many seeds")
    _add_common(p)
    p.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_seed_matrix)

    p = sub.add_parser("evaluate", help="accuracy report of a model on a test set")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test-data")
    p.add_argument("--out", help="report path prefix")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="NN vs solver run-time and total cost")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--disturbance", type=float, default=6.09)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--out", help="report path prefix")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, network.CaseFormatError, FileNotFoundError,
            dsmod.DatasetIntegrityError, mlp.ModelFormatError,
            mlp.ModelVersionError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (network.EquilibriumError, solver.IntegrationError,
            training.TrainingDiverged, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
