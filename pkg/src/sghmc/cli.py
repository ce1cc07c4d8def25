"""Command-line experiment runner.

Every run writes ``config.json`` (all resolved parameters plus a build id),
``summary.json`` (results, warnings, timing) and one CSV per table into the
``--out`` directory. CSV floats use the shortest round-trip representation.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments, rng as rngmod
from .errors import ConfigError, DivergenceError
from .oracle import TargetDistribution

SCHEMA_VERSION = 1

# Built-in defaults per subcommand (lowest precedence).
DEFAULTS = {
    "quantile": dict(eta=1e-3, gamma=0.5, beta=1e10, lambda_r=1e-5, iters=1_000_000, seeds=5, seed_base=0,
                     algo=None, stride=None, batch=1, dist=None, q=None, epsilon=1e-4),
    "quadratic": dict(eta=1e-3, gamma=0.5, beta=10.0, lambda_r=None, iters=1_000_000, seeds=1, seed_base=0,
                      algo="sghmc", stride=None, batch=1, a=1.0, noise_sd=0.0, dim=1, burn_frac=0.1),
    "rate": dict(eta=None, gamma=0.5, beta=1e10, lambda_r=1e-5, iters=None, seeds=None, seed_base=0,
                 algo="sghmc", stride=None, batch=1, dist="L(0,1)", q=0.95,
                 etas=list(experiments.RATE_ETAS), horizon=80.0, chains=400, ref_eta=1e-5, ref_chains=40,
                 ref_burn=60.0, n_boot=200),
    "certify": dict(eta=1e-3, gamma=0.5, beta=1e10, lambda_r=1e-5, iters=None, seeds=None, seed_base=0,
                    algo=None, stride=None, batch=1, dist="L(0,1)", q=0.95, samples=1_000_000, pairs=10),
    "transfer": dict(eta=1e-2, gamma=0.5, beta=1e8, lambda_r=1e-6, iters=20_000, seeds=1, seed_base=0,
                     algo="sghmc", stride=None, batch=32, samples=10_000, pre_iters=20_000, width=30,
                     clip=1.0, eval_every=1000),
    "hedge": dict(eta=0.1, gamma=0.5, beta=1e12, lambda_r=None, iters=None, seeds=1, seed_base=0,
                  algo="sghmc", stride=None, batch=128, scenario="table-col1", K=20, steps=50, nu=5,
                  samples_per_step=20_000, n_test=10_000),
}

CSV_DOCS = {
    "quantile": "table.csv: dist,q,algo,true_quantile,estimate,mse,time_to_eps_iters,time_to_eps_censored; "
                "seeds.csv: dist,q,algo,seed,estimate,first_hit; traj_*.csv: iteration,theta,v",
    "quadratic": "seeds.csv: seed,var_theta,var_v,mean_theta; traj_seed*.csv: iteration,theta*,v*",
    "rate": "sweep.csv: eta,n,excess_risk_mean,excess_risk_se,excess_risk_min,excess_risk_max,excess_risk_sd,"
            "w1,w1_se,w2,w2_se,theta_mean,theta_sd,slope_*; endpoints.csv: eta,chain,theta; "
            "reference.csv: i,theta",
    "certify": "checks.csv: name,statistic,threshold,pass; constants.csv: name,value",
    "transfer": "seed*/pretrain_curve.csv and seed*/tlfn_curve.csv: iteration,train_mse,val_mse; "
                "seed*/tlfn_theta.csv: index,value",
    "hedge": "seed*/curve.csv: step,train_loss,test_score",
}


def fmt(x) -> str:
    """Round-trip float formatting; other values via str."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0].keys()))
        for r in rows:
            w.writerow([fmt(v) for v in r.values()])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def build_id() -> str:
    """SHA-1 over the package sources, in the spirit of a git tree hash."""
    h = hashlib.sha1()
    root = Path(__file__).resolve().parent
    for p in sorted(root.glob("*.py")):
        data = p.read_bytes()
        h.update(f"blob {p.name} {len(data)}\0".encode())
        h.update(data)
    return h.hexdigest()


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


# -- argument parsing ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("common")
    g.add_argument("--eta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--lambda-r", dest="lambda_r", type=float)
    g.add_argument("--iters", type=int)
    g.add_argument("--seeds", type=int, help="number of seeds")
    g.add_argument("--seed-base", dest="seed_base", type=int)
    g.add_argument("--algo", choices=("sghmc", "sgld"))
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.add_argument("--stride", type=int, help="trajectory thinning stride")
    g.add_argument("--batch", type=int, help="mini-batch size")
    g.add_argument("--config", type=Path, help="JSON file of parameters (overridden by flags)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sghmc-exp", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantile", help="quantile benchmark, SGHMC vs SGLD",
                       epilog="CSV columns: " + CSV_DOCS["quantile"])
    _common(p)
    p.add_argument("--dist", action="append", help="e.g. 'L(0,1)', 'N(-1,1)', 'G(0,2)'; repeatable")
    p.add_argument("--q", type=float, help="quantile level (default: 0.95 and 0.99 rows)")
    p.add_argument("--epsilon", type=float, help="excess-risk tolerance for time-to-tolerance")

    p = sub.add_parser("quadratic", help="Gaussian sanity target", epilog="CSV columns: " + CSV_DOCS["quadratic"])
    _common(p)
    p.add_argument("--a", type=float)
    p.add_argument("--noise-sd", dest="noise_sd", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--burn-frac", dest="burn_frac", type=float)

    p = sub.add_parser("rate", help="step-size sweep at fixed n*eta", epilog="CSV columns: " + CSV_DOCS["rate"])
    _common(p)
    p.add_argument("--dist")
    p.add_argument("--q", type=float)
    p.add_argument("--etas", type=float, nargs="+")
    p.add_argument("--horizon", type=float, help="n*eta held fixed across the sweep")
    p.add_argument("--chains", type=int)
    p.add_argument("--ref-eta", dest="ref_eta", type=float)
    p.add_argument("--ref-chains", dest="ref_chains", type=int)
    p.add_argument("--ref-burn", dest="ref_burn", type=float)
    p.add_argument("--n-boot", dest="n_boot", type=int)

    p = sub.add_parser("certify", help="constants, eta_max and assumption checks",
                       epilog="CSV columns: " + CSV_DOCS["certify"])
    _common(p)
    p.add_argument("--dist")
    p.add_argument("--q", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--pairs", type=int)

    p = sub.add_parser("transfer", help="pretrain then transfer-train the TLFN",
                       epilog="CSV columns: " + CSV_DOCS["transfer"])
    _common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--pre-iters", dest="pre_iters", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--clip", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)

    p = sub.add_parser("hedge", help="train hedging policies", epilog="CSV columns: " + CSV_DOCS["hedge"])
    _common(p)
    p.add_argument("--scenario", choices=("table-col1", "table-col2", "table-col3", "table-col4"))
    p.add_argument("--K", type=int, help="number of rebalancing dates")
    p.add_argument("--steps", type=int)
    p.add_argument("--nu", type=int)
    p.add_argument("--samples-per-step", dest="samples_per_step", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    return ap


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    cfg = dict(DEFAULTS[command])
    if ns.config is not None:
        try:
            loaded = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}", "config") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object", "config")
        loaded = loaded.get("params", loaded)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(ns, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("iters", "seeds", "batch", "stride"):
        v = cfg.get(key)
        if v is not None and (v < (0 if key == "iters" else 1)):
            raise ConfigError("out of range", key)
    return cfg


# -- subcommands -------------------------------------------------------------------------

def _seeds(cfg) -> list[int]:
    return [cfg["seed_base"] + i for i in range(cfg["seeds"])]


def cmd_quantile(cfg: dict) -> experiments.Output:
    if cfg["dist"]:
        dists = [TargetDistribution.parse(d) for d in cfg["dist"]]
        levels = [cfg["q"]] if cfg["q"] is not None else [0.95]
        rows = [(d, q) for d in dists for q in levels]
    else:
        rows = [(TargetDistribution.parse(d), q) for d, q, _ in experiments.QUANTILE_TABLE
                if cfg["q"] is None or q == cfg["q"]]
        if not rows:
            rows = [(TargetDistribution.parse(d), cfg["q"]) for d, q, _ in experiments.QUANTILE_TABLE if q == 0.95]
    algos = (cfg["algo"],) if cfg["algo"] else ("sghmc", "sgld")
    return experiments.run_quantile(rows, algos, eta=cfg["eta"], gamma=cfg["gamma"], beta=cfg["beta"],
                                    lambda_r=cfg["lambda_r"], iters=cfg["iters"], seeds=cfg["seeds"],
                                    seed_base=cfg["seed_base"], epsilon=cfg["epsilon"], stride=cfg["stride"],
                                    batch=cfg["batch"])


def cmd_quadratic(cfg: dict) -> experiments.Output:
    return experiments.run_quadratic(a=cfg["a"], noise_sd=cfg["noise_sd"], dim=cfg["dim"], eta=cfg["eta"],
                                     gamma=cfg["gamma"], beta=cfg["beta"], iters=cfg["iters"],
                                     seeds=cfg["seeds"], seed_base=cfg["seed_base"], algo=cfg["algo"],
                                     burn_frac=cfg["burn_frac"], stride=cfg["stride"], batch=cfg["batch"])


def cmd_rate(cfg: dict) -> experiments.Output:
    etas = cfg["etas"] if cfg["eta"] is None else [cfg["eta"]]
    return experiments.run_rate(TargetDistribution.parse(cfg["dist"]), cfg["q"], etas=tuple(etas),
                                horizon=cfg["horizon"], n_chains=cfg["chains"], gamma=cfg["gamma"],
                                beta=cfg["beta"], lambda_r=cfg["lambda_r"], ref_eta=cfg["ref_eta"],
                                ref_chains=cfg["ref_chains"], ref_burn=cfg["ref_burn"],
                                seed_base=cfg["seed_base"], n_boot=cfg["n_boot"], algo=cfg["algo"])


def cmd_certify(cfg: dict) -> experiments.Output:
    return experiments.run_certify(TargetDistribution.parse(cfg["dist"]), cfg["q"], cfg["lambda_r"],
                                   cfg["gamma"], cfg["beta"], cfg["eta"], cfg["samples"], cfg["pairs"],
                                   seed=cfg["seed_base"])


def _per_seed(cfg, fn) -> experiments.Output:
    outs = {seed: fn(seed) for seed in _seeds(cfg)}
    tables = {f"seed{seed}/{name}": rows for seed, o in outs.items() for name, rows in o.tables.items()}
    summary = {"per_seed": {str(seed): o.summary for seed, o in outs.items()}}
    return experiments.Output(summary, tables, [w for o in outs.values() for w in o.warnings])


def cmd_transfer(cfg: dict) -> experiments.Output:
    return _per_seed(cfg, lambda seed: experiments.run_transfer(
        n_samples=cfg["samples"], seed=seed, pre_iters=cfg["pre_iters"], iters=cfg["iters"], batch=cfg["batch"],
        eta=cfg["eta"], gamma=cfg["gamma"], beta=cfg["beta"], lambda_r=cfg["lambda_r"], width=cfg["width"],
        clip_c=cfg["clip"], eval_every=cfg["eval_every"], algo=cfg["algo"]))


def cmd_hedge(cfg: dict) -> experiments.Output:
    return _per_seed(cfg, lambda seed: experiments.run_hedge(
        cfg["scenario"], K=cfg["K"], seed=seed, optimizer=cfg["algo"], eta=cfg["eta"], gamma=cfg["gamma"],
        beta=cfg["beta"], steps=cfg["steps"], batch=cfg["batch"], samples_per_step=cfg["samples_per_step"],
        nu=cfg["nu"], n_test=cfg["n_test"]))


COMMANDS = {"quantile": cmd_quantile, "quadratic": cmd_quadratic, "rate": cmd_rate, "certify": cmd_certify,
            "transfer": cmd_transfer, "hedge": cmd_hedge}


def run(command: str, cfg: dict, out: Path) -> experiments.Output:
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    write_json(out / "config.json", {"schema_version": SCHEMA_VERSION, "command": command, "params": cfg,
                                     "build_id": build_id(), "bit_generator": rngmod.BIT_GENERATOR,
                                     "gaussian_method": rngmod.GAUSSIAN_METHOD})
    result = COMMANDS[command](cfg)
    for name, rows in result.tables.items():
        write_csv(out / f"{_safe_path(name)}.csv", rows)
    write_json(out / "summary.json", {"schema_version": SCHEMA_VERSION, "command": command,
                                      "started_utc": started.isoformat(),
                                      "wall_time_s": time.perf_counter() - t0,
                                      "warnings": result.warnings, "result": result.summary})
    return result


def _safe_path(name: str) -> str:
    return "/".join(_safe(part) for part in name.split("/"))


def main(argv=None) -> int:
    parser = make_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve(ns.command, ns)
        result = run(ns.command, cfg, ns.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {ns.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
