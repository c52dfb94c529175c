"""Command line entry points: ``pmc offline | online | simplified | gw-check | budget``.

Every run writes a deterministic ``report.json`` (sorted keys, no clock
values) plus ``run_info.json`` holding the timestamp and runtime, so two
runs with the same flags produce byte-identical reports.

Exit codes: 0 success, 2 invalid input or configuration, 3 a check
requested with ``--assert`` failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_INVALID, EXIT_ASSERT = 0, 2, 3
OUTPUT_ENV = "PMC_OUTPUT_DIR"

# per-scenario overrides for the online game; explicit flags win
ONLINE_PRESETS = {
    "two-block": {"rank": 1, "alpha": 6.0, "theta": 2.0, "eta_M": 2.0, "eta_C": 0.05},
    "uniform-subset": {"eta_M_scale": 10.0},
    "full-uniform": {"eta_M_scale": 10.0},
}
TWO_BLOCK_MASS, TWO_BLOCK_ERROR, IDENTITY_TOL = 0.8, 0.1, 1e-12
SPEARMAN_LIMIT = -0.5


class CliError(Exception):
    """Invalid input detected by the CLI; exits with status 2."""


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "pmc-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, report: dict, checks: dict, started: float) -> int:
    """Write the report and run info, print the report and map checks to an exit code."""
    report = dict(report)
    report["checks"] = checks
    text = dumps(report)
    out = getattr(args, "_out", None)
    if out is not None:
        (out / "report.json").write_text(text)
        info = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "runtime_s": time.perf_counter() - started, "version": __version__, "command": args.command}
        (out / "run_info.json").write_text(dumps(info))
    if not args.quiet:
        sys.stdout.write(text)
    failed = [k for k, ok in checks.items() if not ok]
    if args.check and failed:
        print(f"check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def _write_matrix_csv(path, A: np.ndarray) -> None:
    np.savetxt(path, A, delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------------
# data sources


def _synthetic_spec(args, N: int):
    from .harness import SyntheticSpec

    return SyntheticSpec(m=args.m, n=args.n, rank=args.rank, structure=args.structure, c=args.c, noise=args.noise,
                         amplitude=args.amplitude, N=N, seed=args.seed, popularity_skew=args.popularity_skew)


def _ratings(args):
    from .harness import holdout_split, ingest_ratings

    obs, scale = ingest_ratings(args.ratings, args.m_ratings, args.n_ratings)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    train, held = holdout_split(obs, args.holdout_frac, split_seed)
    if held.N == 0:
        raise CliError("holdout is empty; raise --holdout-frac")
    meta = {"path": str(args.ratings), "N": obs.N, "shape": list(obs.shape), "scale": scale.as_dict(),
            "holdout_frac": args.holdout_frac, "split_seed": split_seed, "train_N": train.N, "holdout_N": held.N}
    return train, held, meta


def _buckets_out(args, table, title):
    from .harness import write_table_csv

    write_table_csv(args._out / "buckets.csv", table.rows())
    if not args.no_plots:
        from .plotting import plot_buckets

        plot_buckets(table.confidence, table.mse, table.count, args._out / "buckets.png", title)


def _group_order(inst):
    if inst.spec.structure != "two-block":
        return None
    return (np.argsort(inst.row_perm >= inst.spec.m // 2, kind="stable"),
            np.argsort(inst.col_perm >= inst.spec.n // 2, kind="stable"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_budget(args) -> int:
    from .completion import sample_budget_max, sample_budget_trace

    tau = args.tau if args.tau is not None else args.K * math.sqrt(args.m * args.n)
    report = {
        "eps": args.eps, "delta": args.delta, "K": args.K, "tau": tau, "m": args.m, "n": args.n, "c0": args.c0,
        "sample_budget_max": sample_budget_max(args.eps, args.delta, args.K, args.m, args.n, args.c0),
        "sample_budget_trace": sample_budget_trace(args.eps, args.delta, tau, args.m, args.n, args.c0),
    }
    return _finish(args, report, {}, time.perf_counter())


def cmd_gw_check(args) -> int:
    from .rounding import gw_suite

    started = time.perf_counter()
    res = gw_suite(pairs=args.pairs, mc=args.mc, dim=args.dim, seed=args.seed)
    checks = {"cos_sweep": res["cos_sweep_ok"], "pairs": res["pairs_ok"], "flip_probability": res["flip_ok"]}
    return _finish(args, {"pairs": args.pairs, "mc": args.mc, "dim": args.dim, "seed": args.seed, **res},
                   checks, started)


def cmd_offline(args) -> int:
    from .completion import FullCompConfig
    from .harness import bucketed_error, generate, support_mass
    from .offline import SolverBudget, prediction_error, run_algorithm1, run_algorithm2

    started = time.perf_counter()
    budget = SolverBudget(iterations=args.iterations, restarts=args.restarts, steps=args.steps, seed=args.seed)
    fit = FullCompConfig(K=args.K, rank=args.fit_rank, seed=args.seed)
    run = run_algorithm2 if args.algorithm == 2 else run_algorithm1
    report = {"algorithm": args.algorithm, "eps": args.eps, "delta": args.delta, "K": args.K, "seed": args.seed}
    checks = {}
    if args.ratings:
        train, held, meta = _ratings(args)
        res = run(train, args.eps, args.delta, args.K, fit, budget)
        table = bucketed_error(res.confidence, res.completion.dense(), held.rows, held.cols, held.values)
        report.update(data=meta)
    else:
        inst = generate(_synthetic_spec(args, args.N))
        res = run(inst.observations, args.eps, args.delta, args.K, fit, budget)
        est = res.completion.dense()
        err = prediction_error(res.confidence, inst.truth, res.completion)
        hr, hc = np.nonzero(np.ones_like(inst.support))
        table = bucketed_error(res.confidence, est, hr, hc, inst.truth[hr, hc])
        report.update(data={"synthetic": _jsonable(vars(inst.spec)), "support_size": int(inst.support.sum())},
                      coverage_ratio=res.coverage / float(inst.support.sum()),
                      support_mass=support_mass(res.confidence, inst.support), weighted_error=err)
        checks["weighted_error"] = err <= args.eps
    diag = {k: v for k, v in res.diagnostics.items() if not k.endswith("_s") and "time" not in k}
    report.update(res.summary(), diagnostics=diag, buckets=table.rows(), spearman=table.spearman())
    checks["feasible"] = bool(res.feasible)
    _write_matrix_csv(args._out / "confidence.csv", res.confidence)
    _buckets_out(args, table, "error by confidence (offline)")
    if not args.no_plots:
        from .plotting import plot_confidence

        order = None if args.ratings else _group_order(inst)
        plot_confidence(res.confidence, args._out / "confidence.png", "confidence (offline)", order)
    return _finish(args, report, checks, started)


def _online_config(args):
    from .online import OnlineConfig

    preset = ONLINE_PRESETS.get(args.scenario, {}) if args.events is None else {}
    pick = lambda name, default=None: getattr(args, name) if getattr(args, name) is not None else preset.get(name, default)  # noqa: E731
    cfg = OnlineConfig(setting=args.setting, delta=args.delta, alpha=pick("alpha"), theta=pick("theta"),
                       eta_C=pick("eta_C"), eta_M=pick("eta_M"), eta_C_scale=pick("eta_C_scale", 1.0),
                       eta_M_scale=pick("eta_M_scale", 1.0), K=args.K, seed=args.seed)
    return cfg, pick("rank", args.rank_default)


def cmd_online(args) -> int:
    from .core import weighted_loss
    from .harness import generate, support_mass
    from .online import read_events, run_odd

    started = time.perf_counter()
    cfg, rank = _online_config(args)
    inst = None
    if args.events:
        if args.m is None or args.n is None:
            raise CliError("--events needs --m and --n")
        events = read_events(args.events, args.m, args.n)
        if args.T is not None:
            events = events[: args.T]
        shape = (args.m, args.n)
        data = {"events": str(args.events)}
    else:
        args.m = 60 if args.m is None else args.m
        args.n = 60 if args.n is None else args.n
        args.rank = rank
        args.structure = args.scenario
        inst = generate(_synthetic_spec(args, args.T))
        events, shape = inst.observations, (args.m, args.n)
        data = {"synthetic": _jsonable(vars(inst.spec)), "support_size": int(inst.support.sum())}
    res = run_odd(events, shape, cfg, trace_path=args._out / "trace.jsonl")
    estimate = 0.5 * (res.M1_bar + res.M2_bar)
    d = res.diagnostics
    report = {
        "scenario": args.scenario if inst is not None else "events", "data": data, "params": res.params.as_dict(),
        "coverage": float(res.C_bar.sum()),
        "coverage_sum_over_max": float(res.C_bar.sum() / res.C_bar.max()),
        "regret_C": res.regret_C, "regret_M": res.regret_M, "game_regret": res.game_regret,
        "regret_scale": res.regret_scale(), "identity_gap": d["identity_gap"], "projection": d["projection"],
    }
    checks = {"identity": d["identity_gap"] <= IDENTITY_TOL}
    if inst is not None:
        mass = support_mass(res.C_bar, inst.support)
        err = weighted_loss(res.C_bar, inst.truth, estimate)
        report.update(support_mass=mass, weighted_error=err)
        if args.scenario == "two-block":
            checks.update(support_mass=mass >= TWO_BLOCK_MASS, weighted_error=err <= TWO_BLOCK_ERROR)
    _write_matrix_csv(args._out / "confidence.csv", res.C_bar)
    if not args.no_plots:
        from .plotting import plot_confidence, plot_trace

        plot_confidence(res.C_bar, args._out / "confidence.png", "averaged confidence",
                        _group_order(inst) if inst is not None else None)
        plot_trace(res.trace, args._out / "trace.png")
    return _finish(args, report, checks, started)


def cmd_simplified(args) -> int:
    from .completion import FullCompConfig
    from .harness import confidence_error_study, generate, reveal_support
    from .online import SimplifiedConfig

    started = time.perf_counter()
    sim = SimplifiedConfig(alpha=args.alpha, eta=args.eta, T=args.T, refit_every=args.refit_every, theta=args.theta,
                           K=args.K, fit_steps=args.fit_steps, seed=args.seed)
    fit = FullCompConfig(K=args.K, rank=args.fit_rank, seed=args.seed)
    report = {"config": _jsonable(vars(sim))}
    if args.ratings:
        train, held, meta = _ratings(args)
        rows, cols, vals = held.rows, held.cols, held.values
        report["data"] = meta
    else:
        inst = generate(_synthetic_spec(args, 0))
        train = reveal_support(inst, args.seed)
        rows, cols = np.nonzero(~inst.support)
        vals = inst.truth[rows, cols]
        report["data"] = {"synthetic": _jsonable(vars(inst.spec)), "observed": train.N,
                          "held_out": int(rows.size)}
    if rows.size == 0:
        raise CliError("no held-out entries to evaluate")
    study = confidence_error_study(train, rows, cols, vals, sim, fit)
    rho = study.buckets.spearman()
    report.update(buckets=study.buckets.rows(), spearman=rho, train_loss=study.diagnostics["train_loss"])
    checks = {"spearman": bool(rho < SPEARMAN_LIMIT)}
    _write_matrix_csv(args._out / "confidence.csv", study.C_bar)
    _buckets_out(args, study.buckets, "held-out error by confidence")
    if not args.no_plots:
        from .plotting import plot_confidence

        plot_confidence(study.C_bar, args._out / "confidence.png", "averaged confidence")
    return _finish(args, report, checks, started)


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./pmc-out)")
    p.add_argument("--config", help="YAML or JSON file whose keys override flag defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assert", dest="check", action="store_true", help="exit 3 when a reported check fails")
    p.add_argument("--quiet", action="store_true", help="do not echo the report")
    p.add_argument("--no-plots", action="store_true")


def _synthetic_flags(p, m=20, n=20, rank=1, structure="two-block", c=0.5, skew=0.0):
    p.add_argument("--m", type=int, default=m)
    p.add_argument("--n", type=int, default=n)
    p.add_argument("--rank", type=int, default=rank)
    p.add_argument("--structure", choices=["two-block", "uniform-subset", "full-uniform"], default=structure)
    p.add_argument("--c", type=float, default=c, help="support fraction for uniform-subset")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--popularity-skew", type=float, default=skew)


def _ratings_flags(p):
    p.add_argument("--ratings", help="i,j,value CSV (1-based); replaces the synthetic instance")
    p.add_argument("--m-ratings", type=int, help="row count of the ratings matrix (default: max index)")
    p.add_argument("--n-ratings", type=int, help="column count of the ratings matrix (default: max index)")
    p.add_argument("--holdout-frac", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, help="holdout split seed (default: --seed)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmc", description="Partial matrix completion experiments.")
    ap.add_argument("--version", action="version", version=f"pmc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="fit a completion and solve the coverage program")
    _common(p)
    _synthetic_flags(p)
    _ratings_flags(p)
    p.add_argument("--N", type=int, default=400, help="sample count for the synthetic instance")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--algorithm", type=int, choices=[1, 2], default=2)
    p.add_argument("--fit-rank", type=int)
    p.add_argument("--iterations", type=int, default=40)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="play the confidence and completion players on a reveal stream")
    _common(p)
    p.add_argument("--scenario", choices=["two-block", "uniform-subset", "full-uniform"], default="two-block")
    p.add_argument("--events", help="t,i,j,value CSV reveal order; replaces the synthetic instance")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int, default=4096)
    p.add_argument("--rank", type=int)
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--popularity-skew", type=float, default=0.0)
    p.add_argument("--setting", choices=["H1", "H2"], default="H1")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--K", type=float, default=1.0)
    for name in ("alpha", "theta", "eta-C", "eta-M", "eta-C-scale", "eta-M-scale"):
        p.add_argument(f"--{name}", type=float, dest=name.replace("-", "_"))
    p.set_defaults(func=cmd_online, rank_default=2)

    p = sub.add_parser("simplified", help="Simplified ODD confidence against held-out error")
    _common(p)
    _synthetic_flags(p, m=100, n=100, rank=2, structure="uniform-subset", c=0.15, skew=1.0)
    _ratings_flags(p)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--theta", type=float, default=20.0)
    p.add_argument("--T", type=int)
    p.add_argument("--refit-every", type=int, default=50)
    p.add_argument("--fit-steps", type=int, default=60)
    p.add_argument("--fit-rank", type=int, default=10)
    p.add_argument("--K", type=float, default=1.0)
    p.set_defaults(func=cmd_simplified)

    p = sub.add_parser("gw-check", help="run the random-hyperplane rounding checks")
    _common(p)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--mc", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=3)
    p.set_defaults(func=cmd_gw_check)

    p = sub.add_parser("budget", help="print the sample budgets")
    _common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tau", type=float, help="trace-norm bound (default K sqrt(mn))")
    p.add_argument("--c0", type=float, default=1.0)
    p.set_defaults(func=cmd_budget)
    return ap


def load_config(path) -> dict:
    """Read a flat mapping of option names to values from YAML or JSON."""
    import yaml

    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise CliError(f"{path}: config must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _apply_config(ap, sub_name, cfg: dict) -> None:
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices[sub_name]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - known - {"config", "help"})
    if unknown:
        raise CliError(f"unknown config keys for {sub_name}: {', '.join(unknown)}")
    for a in sub._actions:
        if a.dest in cfg:
            a.required = False
    sub.set_defaults(**cfg)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        # the config file must be read before parsing, since it may supply required flags
        pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
        pre.add_argument("--config")
        cfg_path = pre.parse_known_args(argv)[0].config
        command = next((a for a in argv if not a.startswith("-")), None)
        if cfg_path and command in {"offline", "online", "simplified", "gw-check", "budget"}:
            _apply_config(ap, command, load_config(cfg_path))
        args = ap.parse_args(argv)
        if args.command != "budget":
            args._out = _out_dir(args)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
