"""Command-line entry point: reproducible runs wired from problems, training,
and benchmark sweeps to CSV/JSON artifacts.

Values resolve as: environment (HYPERODE_SEED, root seed only) > explicit
flag > TOML config file > built-in default. Exit codes are a stable
scripting contract: 0 success, 2 usage/config, 3 I/O, 4 numeric/training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .bench import (
    pareto_sweep,
    solver_name,
    speedup_table,
    write_manifest,
    write_pareto_csv,
    write_speedup_csv,
)
from .dopri5 import ground_truth_trajectory
from .errors import NumericError
from .hypersolver import (
    Hypersolver,
    TrainConfig,
    load_bundle,
    make_hypersolver,
    save_bundle,
    train,
)
from .metrics import order_slope
from .nn import ACTIVATIONS
from .problems import get_problem
from .solvers import NAMED_TABLEAUS, save_trajectory, solve_fixed, tableau_alpha
from .hypersolver import hyper_solve

GEN_TRUTH_TOL = 1e-7
DEFAULT_EPS_GRID = tuple(2.0 ** -k for k in range(3, 11))


# --- config plumbing ----------------------------------------------------------


def parse_seeds(spec) -> list:
    """'0..4' -> [0,1,2,3,4]; '1,5,9' -> [1,5,9]; 7 -> [7]."""
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        return [int(v) for v in spec]
    spec = str(spec)
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in spec.split(",") if tok]


def parse_solver(spec: str):
    """Solver spec: tableau name, 'alpha:<value>', or a bundle directory."""
    if spec in NAMED_TABLEAUS:
        return NAMED_TABLEAUS[spec]()
    if spec.startswith("alpha:"):
        return tableau_alpha(float(spec.split(":", 1)[1]))
    if (Path(spec) / "bundle.json").exists():
        return load_bundle(spec)[0]
    raise KeyError(
        f"unknown solver spec {spec!r}: not a named tableau, alpha:<value>, "
        f"or a bundle directory"
    )


def _load_config(path):
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _cfg(ns, file_cfg, key, default):
    val = getattr(ns, key, None)
    if val is None:
        val = file_cfg.get(key, default)
    return val


def _root_seed(ns, file_cfg) -> int:
    env = os.environ.get("HYPERODE_SEED")
    if env is not None:
        return int(env)
    return int(_cfg(ns, file_cfg, "seed", 0))


def _out_dir(ns, file_cfg) -> Path:
    out = Path(_cfg(ns, file_cfg, "out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solver_specs(ns, file_cfg) -> list:
    specs = _cfg(ns, file_cfg, "solver", None)
    if not specs:
        raise KeyError("no --solver given")
    if isinstance(specs, str):
        specs = [specs]
    return list(specs)


def _bundle_hashes(specs, solvers) -> dict:
    out = {}
    for spec, solver in zip(specs, solvers):
        if isinstance(solver, Hypersolver):
            digest = hashlib.sha256(
                (Path(spec) / "corrector.json").read_bytes()).hexdigest()
            out[solver_name(solver)] = digest
    return out


# --- subcommands --------------------------------------------------------------


def cmd_gen(ns, file_cfg) -> int:
    prob = get_problem(_cfg(ns, file_cfg, "problem", None) or _missing("problem"))
    K = int(_cfg(ns, file_cfg, "K", 10))
    seeds = parse_seeds(_cfg(ns, file_cfg, "seeds", "0"))
    span = _cfg(ns, file_cfg, "span", None) or prob.span_default
    tol = float(_cfg(ns, file_cfg, "tol", GEN_TRUTH_TOL))
    out = _out_dir(ns, file_cfg)
    for seed in seeds:
        f = prob.field.clone()
        truth = ground_truth_trajectory(f, prob.sample_ic(seed),
                                        (float(span[0]), float(span[1])), K, tol, tol)
        path = out / f"{prob.name}-K{K}-seed{seed}.csv"
        save_trajectory(truth, path, problem=prob.name, solver="dopri5",
                        seed=seed, nfe=f.nfe)
        print(f"wrote {path}")
    return 0


def cmd_train(ns, file_cfg) -> int:
    prob = get_problem(_cfg(ns, file_cfg, "problem", None) or _missing("problem"))
    base_spec = str(_cfg(ns, file_cfg, "base", "euler"))
    base = parse_solver(base_spec)
    if isinstance(base, Hypersolver):
        raise KeyError("--base must be a tableau, not a bundle")
    hidden = _cfg(ns, file_cfg, "hidden", "32,32")
    if isinstance(hidden, str):
        hidden = tuple(int(tok) for tok in hidden.split(",") if tok)
    activation = str(_cfg(ns, file_cfg, "activation", "prelu"))
    include_s = bool(_cfg(ns, file_cfg, "include_s", False))
    span = _cfg(ns, file_cfg, "span", None) or prob.span_default

    root = np.random.SeedSequence(_root_seed(ns, file_cfg))
    init_ss, train_ss = root.spawn(2)  # component split: net init, training stream
    hs = make_hypersolver(base, n_z=prob.dim, hidden=tuple(hidden),
                          activation=activation, include_s=include_s,
                          seed=int(init_ss.generate_state(1)[0]))
    dflt = TrainConfig()  # single source of default hyperparameters
    iterations = int(_cfg(ns, file_cfg, "iterations", dflt.iterations))
    cfg = TrainConfig(
        iterations=iterations,
        lr_max=float(_cfg(ns, file_cfg, "lr_max", dflt.lr_max)),
        lr_min=float(_cfg(ns, file_cfg, "lr_min", dflt.lr_min)),
        weight_decay=float(_cfg(ns, file_cfg, "weight_decay", dflt.weight_decay)),
        batch_swap_every=int(_cfg(ns, file_cfg, "swap_every", dflt.batch_swap_every)),
        pretrain_iters=int(_cfg(ns, file_cfg, "pretrain_iters",
                                min(dflt.pretrain_iters, iterations))),
        loss=str(_cfg(ns, file_cfg, "loss", dflt.loss)),
        lam=float(_cfg(ns, file_cfg, "lam", dflt.lam)),
        seed=int(train_ss.generate_state(1)[0]),
        K=int(_cfg(ns, file_cfg, "K", dflt.K)),
        span=(float(span[0]), float(span[1])),
        batch_size=int(_cfg(ns, file_cfg, "batch_size", dflt.batch_size)),
        pool_size=int(_cfg(ns, file_cfg, "pool_size", dflt.pool_size)),
    )
    res = train(hs, [prob], cfg)
    out = Path(_cfg(ns, file_cfg, "out", f"{prob.name}-hyper-{base.name}"))
    save_bundle(out, hs, cfg, res.delta, res.history)
    print(f"wrote bundle {out}")
    print(f"final delta {res.delta:.17g}")
    return 0


def _sweep_command(ns, file_cfg, K_grid, csv_name: str) -> int:
    prob = get_problem(_cfg(ns, file_cfg, "problem", None) or _missing("problem"))
    specs = _solver_specs(ns, file_cfg)
    solvers = [parse_solver(s) for s in specs]
    seeds = parse_seeds(_cfg(ns, file_cfg, "seeds", "0..3"))
    jobs = int(_cfg(ns, file_cfg, "jobs", 1))
    out = _out_dir(ns, file_cfg)
    rows = pareto_sweep(solvers, prob, K_grid, seeds, jobs=jobs)
    csv_path = out / csv_name
    write_pareto_csv(rows, csv_path)
    write_manifest(csv_path.with_suffix(".json"), prob.name, seeds,
                   extra={"solvers": specs, "K_grid": list(K_grid),
                          "bundles": _bundle_hashes(specs, solvers)})
    for r in rows:
        flag = " FAILED" if r.failed else ""
        print(f"{r.solver} K={r.K} macs={r.macs} mape={r.mape:.6g}{flag}")
    print(f"wrote {csv_path}")
    return 0


def cmd_bench(ns, file_cfg) -> int:
    K = int(_cfg(ns, file_cfg, "K", 10))
    return _sweep_command(ns, file_cfg, [K], "bench.csv")


def cmd_pareto(ns, file_cfg) -> int:
    grid = _cfg(ns, file_cfg, "K_grid", "5,10,20")
    if isinstance(grid, str):
        grid = [int(tok) for tok in grid.split(",") if tok]
    return _sweep_command(ns, file_cfg, [int(k) for k in grid], "pareto.csv")


def cmd_order(ns, file_cfg) -> int:
    prob = get_problem(_cfg(ns, file_cfg, "problem", None) or _missing("problem"))
    spec = _cfg(ns, file_cfg, "solver", None)
    if not spec:
        raise KeyError("no --solver given")
    if isinstance(spec, (list, tuple)):
        if len(spec) != 1:
            raise ValueError("order takes exactly one --solver")
        spec = spec[0]
    solver = parse_solver(spec)
    grid = _cfg(ns, file_cfg, "eps_grid", None)
    if grid is None:
        grid = DEFAULT_EPS_GRID
    elif isinstance(grid, str):
        grid = [float(tok) for tok in grid.split(",") if tok]
    out = _out_dir(ns, file_cfg)

    fit = order_slope(solver, prob, grid)
    span = prob.span_default
    width = span[1] - span[0]
    z0 = prob.sample_ic(0)
    if prob.has_exact:
        ref = prob.field.exact_solution(span[1], z0)
    else:
        ref = ground_truth_trajectory(prob.field.clone(), z0, span, 1,
                                      1e-9, 1e-9).terminal
    csv_path = out / "order.csv"
    with open(csv_path, "w") as fh:
        fh.write("eps,global_err,slope,intercept,r2\n")
        for eps in sorted(float(e) for e in grid):
            K = max(1, round(width / eps))
            if isinstance(solver, Hypersolver):
                traj = hyper_solve(solver, prob.field.clone(), z0, span, K)
            else:
                traj = solve_fixed(solver, prob.field.clone(), z0, span, K)
            err = float(np.linalg.norm(traj.terminal - ref))
            fh.write(f"{width / K:.17g},{err:.17g},{fit.slope:.17g},"
                     f"{fit.intercept:.17g},{fit.r_squared:.17g}\n")
    write_manifest(csv_path.with_suffix(".json"), prob.name, [0],
                   extra={"solver": str(spec), "slope": fit.slope,
                          "r_squared": fit.r_squared, "n_used": fit.n_used,
                          "truncated": fit.truncated,
                          "eps_grid": [float(e) for e in grid]})
    print(f"slope {fit.slope:.4f} (r2 {fit.r_squared:.6f})")
    print(f"wrote {csv_path}")
    return 0


def cmd_speedup(ns, file_cfg) -> int:
    prob = get_problem(_cfg(ns, file_cfg, "problem", None) or _missing("problem"))
    specs = _solver_specs(ns, file_cfg)
    solvers = [parse_solver(s) for s in specs]
    budget = float(_cfg(ns, file_cfg, "budget", 0.1))
    seeds = parse_seeds(_cfg(ns, file_cfg, "seeds", "0..3"))
    K_max = int(_cfg(ns, file_cfg, "K_max", 10_000))
    out = _out_dir(ns, file_cfg)
    rows = speedup_table(solvers, prob, budget, seeds, K_max=K_max)
    csv_path = out / "speedup.csv"
    write_speedup_csv(rows, csv_path)
    write_manifest(csv_path.with_suffix(".json"), prob.name, seeds,
                   extra={"solvers": specs, "budget": budget, "K_max": K_max,
                          "bundles": _bundle_hashes(specs, solvers)})
    for r in rows:
        flag = "" if r.reachable else " UNREACHABLE"
        print(f"{r.solver} K={r.K} speedup={r.speedup:.3g}{flag}")
    print(f"wrote {csv_path}")
    return 0


def cmd_show(ns, file_cfg) -> int:
    path = Path(ns.bundle)
    if not (path / "bundle.json").exists():
        raise KeyError(f"no bundle at {path}")
    hs, doc = load_bundle(path)
    dims = hs.g.dims
    print(f"bundle: {path}")
    print(f"base: {doc['base']} (order {doc['order']})")
    print(f"corrector: dims {dims}, activation {hs.g.activation}, "
          f"include_s {hs.include_s}")
    if doc.get("delta") is not None:
        print(f"delta: {doc['delta']:.6g}")
    tc = doc.get("train_config")
    if tc:
        print(f"trained: {tc['iterations']} iterations, loss {tc['loss']}, "
              f"seed {tc['seed']}")
    return 0


def _missing(key: str):
    raise KeyError(f"missing required option --{key}")


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="hyperode",
        description="Fixed-step ODE solvers with trained correctors: data "
                    "generation, training, and benchmark sweeps.")
    sub = top.add_subparsers(dest="cmd")

    def common(p):
        p.add_argument("--config", help="TOML config file; flags win over it")
        p.add_argument("--problem")
        p.add_argument("--out")
        p.add_argument("--seed", type=int, help="root seed (HYPERODE_SEED wins)")

    p = sub.add_parser("gen", help="write reference trajectories as CSVs")
    common(p)
    p.add_argument("--K", type=int)
    p.add_argument("--seeds", help="IC seeds: '0..4' or '1,5,9'")
    p.add_argument("--span", type=float, nargs=2)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("train", help="fit a corrector, write a bundle")
    common(p)
    p.add_argument("--base", help="base tableau name or alpha:<v>")
    p.add_argument("--hidden")
    p.add_argument("--activation", choices=ACTIVATIONS)
    p.add_argument("--include-s", dest="include_s", action="store_const", const=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--swap-every", dest="swap_every", type=int)
    p.add_argument("--pretrain-iters", dest="pretrain_iters", type=int)
    p.add_argument("--loss", choices=("residual", "trajectory", "combined"))
    p.add_argument("--lam", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--span", type=float, nargs=2)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pool-size", dest="pool_size", type=int)

    p = sub.add_parser("bench", help="single-K benchmark rows")
    common(p)
    p.add_argument("--solver", action="append")
    p.add_argument("--K", type=int)
    p.add_argument("--seeds")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("pareto", help="accuracy-vs-cost sweep over a K grid")
    common(p)
    p.add_argument("--solver", action="append")
    p.add_argument("--K-grid", dest="K_grid")
    p.add_argument("--seeds")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("order", help="empirical convergence order")
    common(p)
    p.add_argument("--solver", action="append")
    p.add_argument("--eps-grid", dest="eps_grid")

    p = sub.add_parser("speedup", help="minimal steps under an accuracy budget")
    common(p)
    p.add_argument("--solver", action="append")
    p.add_argument("--budget", type=float, help="max terminal MAPE, percent")
    p.add_argument("--seeds")
    p.add_argument("--K-max", dest="K_max", type=int)

    p = sub.add_parser("show", help="pretty-print a bundle")
    p.add_argument("bundle")
    p.add_argument("--config", help=argparse.SUPPRESS)

    return top


DISPATCH = {
    "gen": cmd_gen,
    "train": cmd_train,
    "bench": cmd_bench,
    "pareto": cmd_pareto,
    "order": cmd_order,
    "speedup": cmd_speedup,
    "show": cmd_show,
}


def main(argv=None) -> int:
    top = build_parser()
    ns = top.parse_args(argv)
    if ns.cmd is None:
        top.print_help(sys.stderr)
        return 2
    try:
        file_cfg = _load_config(getattr(ns, "config", None))
        return DISPATCH[ns.cmd](ns, file_cfg)
    except NumericError as err:  # includes training divergence and stiffness
        extra = ""
        if getattr(err, "iteration", None) is not None:
            extra = f" (iteration {err.iteration})"
        print(f"numeric failure: {err}{extra}", file=sys.stderr)
        return 4
    except (KeyError, ValueError) as err:
        msg = err.args[0] if err.args else err
        print(f"config error: {msg}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
