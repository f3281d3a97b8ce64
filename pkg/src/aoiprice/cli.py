"""Command-line entry point: estimate, solve, optimize, simulate, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import mobility
from .anneal import sa_optimize, tau_string
from .aoi import analyze
from .coloring import accelerated_sa
from .config import RunConfig, write_json, write_table
from .errors import AoiPriceError, ConfigError
from .joac import evaluate, t_max as compute_t_max
from .mdp import (AgingMdpInstance, ThresholdPolicy, average_reward, solve_average_reward,
                  stationary_upload_prices, upload_set_conditions)
from .rng import component_rng
from .sim import simulate_policy

logger = logging.getLogger("aoiprice")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(args) -> int:
    if args.centers:
        records = mobility.read_xy_trace(args.trace, args.centers)
    else:
        records = mobility.read_trace(args.trace)
    est = mobility.estimate_from_trace(records, args.resample_step, method=args.method)
    out = _outdir(args.out)
    mobility.write_model(est.model, out / "model.csv")
    mobility.write_remap(est, out / "remap.csv")
    write_json(out / "estimate.json", {
        "locations": est.model.num_locations,
        "dropped": [str(c) for c in est.dropped],
        "transitions_observed": int(est.counts.sum()),
        "stationary": est.model.stationary,
        "resample_step": args.resample_step,
        "method": args.method,
    })
    print(f"estimated {est.model.num_locations} locations -> {out / 'model.csv'}")
    return 0


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    cfg = RunConfig.load(args.config)
    inst = cfg.mdp_instance()
    sol = solve_average_reward(inst)
    pred = upload_set_conditions(inst)
    used = stationary_upload_prices(inst, sol.policy.action)
    out = _outdir(args.out)
    tau = inst.max_age - sol.policy.action.sum(axis=0)
    write_table(out / "thresholds.csv", ("location", "price", "threshold"),
                [(l, inst.prices[l], tau[l]) for l in range(inst.num_locations)])
    M, L = inst.max_age, inst.num_locations
    write_table(out / "value.csv", ("age", "location", "value", "upload"),
                [(x + 1, l, sol.value[x, l], sol.policy.action[x, l])
                 for x in range(M) for l in range(L)])
    per_price = sol.thresholds.per_price if sol.thresholds is not None else None
    write_json(out / "solve.json", {
        "gain": sol.gain,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "thresholds": tau,
        "thresholds_by_price": per_price,
        "threshold_structure": sol.thresholds is not None,
        "upload_prices_mdp": sorted(used),
        "upload_prices_predicted": sorted(pred.predicted),
        "prediction_matches": used == pred.predicted,
        "never_upload_predicted": pred.never_upload,
    })
    print(f"gain {sol.gain!r} thresholds {tau.tolist()}")
    return 0


# ---------------------------------------------------------------------------
# optimize


def _joac_from_args(cfg: RunConfig, args):
    inst = cfg.joac_instance(d=getattr(args, "d", None), epsilon=getattr(args, "epsilon", None))
    if getattr(args, "t_max", None) is not None:
        inst = inst.replace(t_max_override=args.t_max)
    return inst


def cmd_optimize(args) -> int:
    cfg = RunConfig.load(args.config)
    inst = _joac_from_args(cfg, args)
    seed = cfg.seed if args.seed is None else args.seed
    conf = cfg.anneal_config(seed=seed, schedule=args.schedule, a_hat=args.a_hat,
                             iteration_cap=args.iteration_cap)
    out = _outdir(args.out)
    tm = compute_t_max(inst)
    if args.accelerated:
        res = accelerated_sa(inst, conf, rng=component_rng(seed, "accelerated"), tmax=tm)
        stream = res.stream
        stream.best.write_csv(out / "coloring.csv")
        stream.write_trace(out / "coloring_trace.csv")
    else:
        res = sa_optimize(inst, conf, rng=component_rng(seed, "anneal"), tmax=tm)
    res.trace.write_csv(out / "trace.csv")
    ev = evaluate(inst, res.best_tau)
    write_json(out / "best.json", {
        "best_tau": res.best_tau,
        "best_W": res.best_W,
        "baseline_W": float(inst.costs @ inst.D),
        "Y": ev.Y,
        "tail": ev.tail,
        "t_max": tm,
        "iterations": res.iterations,
        "stop_reason": res.stop_reason,
        "capped": res.capped,
        "accelerated": bool(args.accelerated),
        "seed": seed,
        "schedule": conf.schedule,
    })
    print(f"best W {res.best_W!r} at tau {tau_string(res.best_tau)} ({res.stop_reason})")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _thresholds(cfg: RunConfig, args, model):
    if args.tau:
        return np.array([int(v) for v in args.tau.split(",")], dtype=np.int64)
    if cfg.get("thresholds") is not None:
        return np.asarray(cfg.get("thresholds"), dtype=np.int64)
    mdp = cfg.mdp_instance(model)
    sol = solve_average_reward(mdp)
    return mdp.max_age - sol.policy.action.sum(axis=0)


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    model = cfg.model()
    tau = _thresholds(cfg, args, model)
    inst = None
    if cfg.get("prices") is not None:
        inst = cfg.mdp_instance(model)
    elif cfg.get("costs") is not None:
        inst = cfg.joac_instance(model)
    seed = cfg.seed if args.seed is None else args.seed
    res = simulate_policy(model, inst, tau, args.cycles, component_rng(seed, "simulate"),
                          warmup=args.warmup)
    out = _outdir(args.out)
    L = model.num_locations
    write_table(out / "y.csv", ("origin", "upload_location", "empirical", "analytic"),
                _y_rows(model, tau, res.empirical_y))
    write_table(out / "aoi_hist.csv", ("origin", "age", "fraction"),
                [(i, t + 1, res.aoi_hist[i, t]) for i in range(L)
                 for t in range(res.aoi_hist.shape[1])])
    summary = res.summary()
    summary.update({"thresholds": tau, "seed": seed, "warmup": args.warmup})
    if isinstance(inst, AgingMdpInstance):
        summary["analytic_reward"] = average_reward(inst, ThresholdPolicy(tau))
    elif inst is None:
        summary["mean_reward"] = None
    write_json(out / "sim.json", summary)
    print(f"{res.sample_count} cycles, mean reward {res.mean_reward!r} +- {res.reward_se!r}")
    return 0


def _y_rows(model, tau, emp):
    y = analyze(model, tau).y
    L = model.num_locations
    return [(i, z, emp[i, z], y[i, z]) for i in range(L) for z in range(L)]


# ---------------------------------------------------------------------------
# report


def _cost_ranges(costs, ranges):
    if ranges:
        return [(float(lo), float(hi)) for lo, hi in ranges]
    qs = np.quantile(costs, [0, 1 / 3, 2 / 3, 1])
    return [(float(qs[k]), float(qs[k + 1])) for k in range(3)]


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    cfg_path = run / "config.json"
    if not run.is_dir() or not cfg_path.exists():
        raise ConfigError(f"run directory {run} has no config.json")
    cfg = RunConfig.load(cfg_path)
    section = cfg.get("report", {})
    seed = cfg.seed if args.seed is None else args.seed
    out = _outdir(run / "report")
    model = cfg.model()
    summary = {"seed": seed}

    if cfg.get("costs") is not None:
        base = cfg.joac_instance(model)
        d_values = sorted(int(d) for d in section.get("d_values", [base.d]))
        conf = cfg.anneal_config(seed=seed, iteration_cap=section.get("iteration_cap"))
        ranges = _cost_ranges(base.costs, section.get("cost_ranges"))
        cost_rows, share_rows, conv_rows = [], [], []
        prev = None
        last = None
        for d in d_values:
            inst = base.replace(d=d)
            tm = compute_t_max(inst)
            start = prev if prev is not None and prev.max() <= tm else None
            res = sa_optimize(inst, conf, rng=component_rng(seed, "report", d), initial=start, tmax=tm)
            prev = res.best_tau
            baseline = float(inst.costs @ inst.D)
            cost_rows.append((d, tm, res.best_W, baseline, 1.0 - res.best_W / baseline,
                              tau_string(res.best_tau)))
            Y = evaluate(inst, res.best_tau).Y
            for k, (lo, hi) in enumerate(ranges):
                sel = (inst.costs >= lo) & ((inst.costs <= hi) if k == len(ranges) - 1 else (inst.costs < hi))
                share_rows.append((d, k, lo, hi, Y[sel].sum() / Y.sum()))
            best = np.inf
            for row in res.trace.rows:
                if row[8] < best:
                    best = row[8]
                    conv_rows.append((d, row[0], row[8]))
            last = (inst, res.best_tau)
        write_table(out / "cost_vs_d.csv",
                    ("d", "t_max", "best_W", "baseline_W", "reduction", "best_tau"), cost_rows)
        write_table(out / "traffic_share.csv", ("d", "range", "cost_lo", "cost_hi", "share"), share_rows)
        write_table(out / "convergence.csv", ("d", "t", "best_W"), conv_rows)
        inst, tau = last
        curve_rows = []
        an = analyze(model, tau)
        for i in range(model.num_locations):
            for dd, v in enumerate(an.ccdf_curve(i)):
                curve_rows.append((i, dd, v))
        write_table(out / "aoi_ccdf.csv", ("origin", "d", "ccdf"), curve_rows)
        summary["cost_vs_d"] = [{"d": r[0], "best_W": r[2], "reduction": r[4]} for r in cost_rows]
        costs = [r[2] for r in cost_rows]
        summary["cost_non_increasing"] = all(b <= a for a, b in zip(costs, costs[1:]))

    if cfg.get("prices") is not None:
        mdp = cfg.mdp_instance(model)
        loc = int(section.get("sweep_location", 0))
        values = section.get("price_values") or list(np.linspace(0.0, float(mdp.max_age), 11))
        rows = []
        for v in sorted(float(x) for x in values):
            p = mdp.prices.copy()
            p[loc] = v
            sol = solve_average_reward(mdp.with_prices(p))
            rows.append((loc, v, sol.gain, tau_string(mdp.max_age - sol.policy.action.sum(axis=0))))
        write_table(out / "reward_vs_price.csv", ("location", "price", "gain", "thresholds"), rows)
        gains = [r[2] for r in rows]
        summary["reward_non_increasing"] = all(b <= a + 1e-9 for a, b in zip(gains, gains[1:]))

    if len(summary) == 1:
        raise ConfigError("config has neither costs nor prices; nothing to report")
    write_json(out / "report.json", summary)
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aoiprice", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a mobility chain from a trace")
    p.add_argument("--trace", required=True, help="timestamp,device,cell (or x,y with --centers)")
    p.add_argument("--centers", help="cell_id,x,y file; trace then carries coordinates")
    p.add_argument("--resample-step", type=float, required=True)
    p.add_argument("--method", choices=("hold", "nearest"), default="hold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("solve", help="optimal device policy for given prices")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("optimize", help="anneal per-location thresholds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--schedule", choices=("log", "power"))
    p.add_argument("--a-hat", type=float)
    p.add_argument("--t-max", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iteration-cap", type=int)
    p.add_argument("--accelerated", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="Monte Carlo replay of a threshold policy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", help="comma-separated thresholds (default: config or MDP optimum)")
    p.add_argument("--cycles", type=int, default=100_000)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="aggregate tables for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AoiPriceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
