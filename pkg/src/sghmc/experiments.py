"""Experiment drivers shared by the command line and the acceptance tests.

Each driver returns plain data: a ``summary`` dict and named tables (lists of
row dicts) that the CLI writes to CSV. Nothing here touches the filesystem.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import certify, diagnostics, hedging, neuralnet
from . import rng as rngmod
from .oracle import QuantileProblem, TargetDistribution, quadratic_oracle, quantile_oracle
from .sampler import SamplerConfig, gaussian_init, run_chain, run_reference_chain

# Rows of the quantile benchmark: (distribution, q, tabulated true quantile).
QUANTILE_TABLE = [
    ("N(-1,1)", 0.95, 0.645), ("N(1,2)", 0.95, 4.290), ("N(3,5)", 0.95, 11.224),
    ("L(0,1)", 0.95, 2.944), ("L(-1,1)", 0.95, 1.944), ("L(-3,3)", 0.95, 5.833),
    ("G(0,1)", 0.95, 2.970), ("G(0,2)", 0.95, 5.940), ("G(1,2)", 0.95, 6.940),
    ("N(-1,1)", 0.99, 1.326), ("N(1,2)", 0.99, 5.653), ("N(3,5)", 0.99, 14.632),
    ("L(0,1)", 0.99, 4.595), ("L(-1,1)", 0.99, 3.595), ("L(-3,3)", 0.99, 10.785),
    ("G(0,1)", 0.99, 4.600), ("G(0,2)", 0.99, 9.200), ("G(1,2)", 0.99, 10.200),
]

QUANTILE_DEFAULTS = dict(eta=1e-3, gamma=0.5, beta=1e10, lambda_r=1e-5, iters=1_000_000, seeds=5,
                         seed_base=0, epsilon=1e-4, stride=None, batch=1)


@dataclass
class Output:
    summary: dict
    tables: dict = field(default_factory=dict)   # name -> list of row dicts
    warnings: list = field(default_factory=list)


def _stride(iters: int, stride: int | None, points: int = 1000) -> int:
    if stride:
        return stride
    return max(1, iters // points)


# -- quantile ------------------------------------------------------------------------

def quantile_row(dist: TargetDistribution, q: float, algo: str, eta: float, gamma: float, beta: float,
                 lambda_r: float, iters: int, seeds: list[int], epsilon: float, stride: int | None = None,
                 batch: int = 1, stop_at_tolerance: bool = False):
    """Run one benchmark row for one algorithm across seeds.

    Time-to-tolerance is the first step count at which u(theta_n) - inf u <
    epsilon. Because u is convex this set is an interval, computed once, so
    the check inside the loop is a cheap bounds test.
    """
    prob = QuantileProblem(dist, q, lambda_r)
    oracle = quantile_oracle(dist, q, lambda_r)
    interval = diagnostics.tolerance_interval(prob, epsilon)
    st = _stride(iters, stride)
    per_seed, trajectories = [], {}
    for seed in seeds:
        cfg = SamplerConfig(eta, gamma, beta, iters, seed=seed, batch_size=batch)
        init = gaussian_init(seed, 0, 1)
        t0 = time.perf_counter()
        tr = run_chain(oracle, cfg, init, algo, stride=st, hit_box=interval, stop_on_hit=stop_at_tolerance)
        wall = time.perf_counter() - t0
        est = float(tr.final_state.theta[0])
        per_seed.append({"seed": seed, "estimate": est, "first_hit": tr.first_hit, "steps": tr.step_count,
                         "wall_time": wall})
        trajectories[seed] = tr
    q_star = prob.true_quantile
    est = np.array([r["estimate"] for r in per_seed])
    hits = [r["first_hit"] for r in per_seed]
    censored = sum(h is None for h in hits)
    hit_vals = np.array([iters if h is None else h for h in hits], dtype=float)
    summary = {
        "dist": dist.label, "q": q, "algo": algo, "true_quantile": q_star,
        "estimate": float(est.mean()), "mse": float(np.mean((est - q_star) ** 2)),
        "abs_error": float(abs(est.mean() - q_star)),
        "time_to_eps_iters": float(hit_vals.mean()), "time_to_eps_censored": censored,
        "tolerance_interval": list(interval),
        "wall_time_mean": float(np.mean([r["wall_time"] for r in per_seed])),
    }
    return summary, per_seed, trajectories


def run_quantile(rows=None, algos=("sghmc", "sgld"), **kw) -> Output:
    opts = {**QUANTILE_DEFAULTS, **{k: v for k, v in kw.items() if v is not None}}
    if rows is None:
        rows = [(TargetDistribution.parse(d), q) for d, q, _ in QUANTILE_TABLE]
    seeds = [opts["seed_base"] + i for i in range(opts["seeds"])]
    summaries, seed_rows, tables = [], [], {}
    for dist, q in rows:
        for algo in algos:
            s, per_seed, trajs = quantile_row(dist, q, algo, opts["eta"], opts["gamma"], opts["beta"],
                                              opts["lambda_r"], opts["iters"], seeds, opts["epsilon"],
                                              opts["stride"], opts["batch"])
            summaries.append(s)
            for r in per_seed:
                seed_rows.append({"dist": dist.label, "q": q, "algo": algo, "seed": r["seed"],
                                  "estimate": r["estimate"],
                                  "first_hit": "" if r["first_hit"] is None else r["first_hit"]})
                tr = trajs[r["seed"]]
                tables[f"traj_{dist.label}_q{q}_{algo}_seed{r['seed']}"] = [
                    {"iteration": int(n), "theta": float(t[0]), "v": float(v[0])}
                    for n, t, v in zip(tr.iterations, tr.theta, tr.v)]
    table = [{k: s[k] for k in ("dist", "q", "algo", "true_quantile", "estimate", "mse",
                                "time_to_eps_iters", "time_to_eps_censored")} for s in summaries]
    tables = {"table": table, "seeds": seed_rows, **tables}
    # wall-clock numbers vary run to run, so they live in the summary only
    return Output({"settings": opts, "rows": summaries}, tables)


# -- quadratic ---------------------------------------------------------------------

def run_quadratic(a: float = 1.0, noise_sd: float = 0.0, dim: int = 1, eta: float = 1e-3, gamma: float = 0.5,
                  beta: float = 10.0, iters: int = 1_000_000, seeds: int = 1, seed_base: int = 0,
                  algo: str = "sghmc", burn_frac: float = 0.1, stride: int | None = None, batch: int = 1) -> Output:
    """Long chains on a Gaussian target; compares sample variances with 1/(beta*a) and 1/beta."""
    oracle = quadratic_oracle(a, noise_sd, dim)
    burn = int(burn_frac * iters)
    rows, tables = [], {}
    thetas, vs = [], []
    for i in range(seeds):
        seed = seed_base + i
        cfg = SamplerConfig(eta, gamma, beta, iters, seed=seed, burn_in=burn, batch_size=batch)
        init = gaussian_init(seed, 0, dim, theta_sd=1 / math.sqrt(beta * a), v_sd=1 / math.sqrt(beta))
        tr = run_chain(oracle, cfg, init, algo, stride=1)
        thetas.append(tr.theta)
        vs.append(tr.v)
        rows.append({"seed": seed, "var_theta": float(tr.theta.var()), "var_v": float(tr.v.var()),
                     "mean_theta": float(tr.theta.mean())})
        st = _stride(iters, stride)
        tables[f"traj_seed{seed}"] = [{"iteration": int(n), **{f"theta{j}": float(t[j]) for j in range(dim)},
                                       **{f"v{j}": float(v[j]) for j in range(dim)}}
                                      for n, t, v in zip(tr.iterations[::st], tr.theta[::st], tr.v[::st])]
    var_t = float(np.concatenate(thetas).var()) if iters else math.nan
    var_v = float(np.concatenate(vs).var()) if iters else math.nan
    summary = {"a": a, "noise_sd": noise_sd, "dim": dim, "eta": eta, "gamma": gamma, "beta": beta,
               "iters": iters, "burn_in": burn, "algo": algo, "var_theta": var_t, "var_v": var_v,
               "target_var_theta": 1 / (beta * a), "target_var_v": 1 / beta,
               "rel_err_theta": var_t * beta * a - 1, "rel_err_v": var_v * beta - 1}
    tables["seeds"] = rows
    return Output(summary, tables)


# -- rate sweep ----------------------------------------------------------------------

RATE_ETAS = (4e-3, 2e-3, 1e-3, 5e-4)


def run_rate(dist: TargetDistribution | None = None, q: float = 0.95, etas=RATE_ETAS, horizon: float = 80.0,
             n_chains: int = 400, gamma: float = 0.5, beta: float = 1e10, lambda_r: float = 1e-5,
             ref_eta: float = 1e-5, ref_chains: int = 40, ref_burn: float = 60.0, seed_base: int = 0,
             n_boot: int = 200, algo: str = "sghmc") -> Output:
    """Distance to stationarity as a function of the step size at fixed n*eta.

    For each eta, ``n_chains`` independent chains run for horizon/eta steps
    and their endpoints form the theta-marginal. A reference sample of the
    same size comes from ``ref_chains`` chains at ``ref_eta``, each
    contributing evenly spaced states after ``ref_burn`` time units. Reported
    per eta: expected excess risk, W1 and W2 to the reference, with bootstrap
    SEs; then log-log slopes of each against eta.
    """
    dist = dist or TargetDistribution("logistic", 0.0, 1.0)
    prob = QuantileProblem(dist, q, lambda_r)
    oracle = quantile_oracle(dist, q, lambda_r)
    per_ref = -(-n_chains // ref_chains)
    ref_total = int(round(horizon / ref_eta))
    ref_burn_steps = int(round(ref_burn / ref_eta))
    ref_stride = max(1, (ref_total - ref_burn_steps) // per_ref)
    ref_samples = []
    for c in range(ref_chains):
        seed = seed_base + 1_000_000 + c
        cfg = SamplerConfig(ref_eta, gamma, beta, ref_total, seed=seed,
                            burn_in=ref_total - (per_ref - 1) * ref_stride)
        tr = run_reference_chain(oracle, cfg, gaussian_init(seed, 0, 1), ref_eta=ref_eta,
                                 n_iters=ref_total, burn_in=cfg.burn_in, stride=ref_stride)
        ref_samples.extend(tr.theta[:, 0].tolist())
    ref = np.sort(np.array(ref_samples[:n_chains]))

    rows = []
    endpoint_rows = []
    for eta in etas:
        n = int(round(horizon / eta))
        ends = []
        for c in range(n_chains):
            seed = seed_base + c
            cfg = SamplerConfig(eta, gamma, beta, n, seed=seed)
            tr = run_chain(oracle, cfg, gaussian_init(seed, 0, 1), algo, stride=max(1, n))
            ends.append(float(tr.final_state.theta[0]))
        ends = np.array(ends)
        rep = diagnostics.excess_risk(ends, prob, eta=eta, n_iters=n)
        srt = np.sort(ends)
        rows.append({"eta": eta, "n": n, "excess_risk_mean": rep.excess_risk_mean,
                     "excess_risk_se": rep.excess_risk_se, "excess_risk_min": rep.excess_risk_min,
                     "excess_risk_max": rep.excess_risk_max, "excess_risk_sd": rep.excess_risk_sd,
                     "w1": diagnostics.empirical_w1_1d(srt, ref),
                     "w1_se": diagnostics.bootstrap_se(srt, ref, 1, n_boot, seed=1),
                     "w2": diagnostics.empirical_w2_1d(srt, ref),
                     "w2_se": diagnostics.bootstrap_se(srt, ref, 2, n_boot, seed=2),
                     "theta_mean": float(ends.mean()), "theta_sd": float(ends.std(ddof=1))})
        endpoint_rows.extend({"eta": eta, "chain": c, "theta": float(t)} for c, t in enumerate(ends))
    slopes = {}
    for key in ("excess_risk_mean", "w1", "w2"):
        pts = [(r["eta"], r[key]) for r in rows]
        if len(pts) >= 3 and all(v > 0 for _, v in pts):
            s, b, r2 = diagnostics.rate_slope(pts)
        else:
            s = b = r2 = math.nan
        slopes[key] = {"slope": s, "intercept": b, "r2": r2}
    for r in rows:
        for key, v in slopes.items():
            r[f"slope_{key}"] = v["slope"]
    monotone = all(rows[i]["w2"] >= rows[i + 1]["w2"] - 2 * math.hypot(rows[i]["w2_se"], rows[i + 1]["w2_se"])
                   for i in range(len(rows) - 1)) if sorted(etas, reverse=True) == list(etas) else None
    summary = {"dist": dist.label, "q": q, "horizon": horizon, "n_chains": n_chains, "gamma": gamma,
               "beta": beta, "lambda_r": lambda_r, "ref_eta": ref_eta, "ref_chains": ref_chains,
               "argmin": diagnostics.argmin_u(prob)[0], "ref_mean": float(ref.mean()),
               "ref_sd": float(ref.std(ddof=1)), "slopes": slopes, "w2_non_increasing": monotone,
               "rows": rows}
    return Output(summary, {"sweep": rows, "endpoints": endpoint_rows,
                            "reference": [{"i": i, "theta": float(t)} for i, t in enumerate(ref)]})


# -- certify -------------------------------------------------------------------------

def run_certify(dist: TargetDistribution | None = None, q: float = 0.95, lambda_r: float = 1e-5,
                gamma: float = 0.5, beta: float = 1e10, eta: float = 1e-3, n_samples: int = 1_000_000,
                n_pairs: int = 10, seed: int = 0, thetas=None) -> Output:
    dist = dist or TargetDistribution("logistic", 0.0, 1.0)
    prob = QuantileProblem(dist, q, lambda_r)
    oracle = quantile_oracle(dist, q, lambda_r)
    inputs = certify.quantile_assumptions(prob, gamma, beta)
    consts = certify.derive_constants(inputs)
    r = rngmod.stream(seed, 0, rngmod.Purpose.AUX)
    q_star = prob.true_quantile
    if thetas is None:
        thetas = [0.0, q_star, q_star - dist.scale, q_star + dist.scale]
    box = (dist.loc - 5 * dist.scale, dist.loc + 5 * dist.scale)
    checks = [
        certify.check_unbiasedness(oracle, thetas, n_samples, r),
        certify.check_avg_lipschitz(oracle, inputs.L, n_pairs, n_samples, r, box=box),
        certify.check_dissipativity(oracle, inputs.a, inputs.b, r.uniform(-100, 100, 1000), r),
        certify.check_G_bound(oracle, lambda x: np.full(len(x), 2.0), 100, r),
    ]
    warns = certify.step_warnings(eta, consts)
    notes = [
        "b_prime uses the larger of the second-moment and squared-mean forms",
        "c7_tilde uses coefficient 120; c7_tilde_table shows the alternative 90 (not used in eta_max)",
        "K1_tilde evaluated at eta = 1",
    ]
    summary = {"problem": {"dist": dist.label, "q": q, "lambda_r": lambda_r}, "eta": eta,
               "inputs": {k: getattr(inputs, k) for k in inputs.__dataclass_fields__},
               "constants": consts.to_dict(), "checks": [c.to_dict() for c in checks], "notes": notes}
    table = [{"name": c.name, "statistic": c.statistic, "threshold": c.threshold, "pass": int(c.passed)}
             for c in checks]
    const_rows = [{"name": k, "value": v} for k, v in consts.to_dict().items()
                  if isinstance(v, float)]
    return Output(summary, {"checks": table, "constants": const_rows}, warns)


# -- transfer learning -------------------------------------------------------------------

def run_transfer(n_samples: int = 10_000, seed: int = 0, pre_iters: int = 20_000, iters: int = 20_000,
                 batch: int = 32, eta: float = 1e-2, gamma: float = 0.5, beta: float = 1e8,
                 lambda_r: float = 1e-6, width: int = 30, clip_c: float = 1.0, eval_every: int = 1000,
                 algo: str = "sghmc") -> Output:
    """Pretrain a ThreeLFN on the source task, freeze its first and last
    matrices, then train the TLFN on the target task."""
    pre_data = neuralnet.Dataset.generate(neuralnet.pretrain_target, n_samples,
                                          rngmod.stream(seed, 0, rngmod.Purpose.AUX))
    data = neuralnet.Dataset.generate(neuralnet.transfer_target, n_samples,
                                      rngmod.stream(seed, 1, rngmod.Purpose.AUX))
    shape = neuralnet.ThreeLFNShape(m1=2, d1=width, d2=width, d3=width, m2=1)
    pre_cfg = neuralnet.TrainConfig(eta=eta, gamma=gamma, beta=beta, lambda_r=lambda_r, iters=pre_iters,
                                    batch=batch, eval_every=eval_every, algo=algo, seed=seed)
    W0, W3, pre = neuralnet.threelfn_train(pre_data, pre_cfg, shape)
    base = neuralnet.init_tlfn(W0, W3, rngmod.stream(seed, 1, rngmod.Purpose.INIT), c=clip_c)
    cfg = neuralnet.TrainConfig(eta=eta, gamma=gamma, beta=beta, lambda_r=lambda_r, iters=iters,
                                batch=batch, eval_every=eval_every, algo=algo, seed=seed)
    trained, res = neuralnet.tlfn_train(base, data, cfg)
    summary = {"n_samples": n_samples, "width": width, "clip_c": clip_c, "eta": eta, "gamma": gamma,
               "beta": beta, "lambda_r": lambda_r, "batch": batch, "pre_iters": pre_iters, "iters": iters,
               "pretrain_initial_val_mse": pre.initial_val, "pretrain_final_val_mse": pre.final_val,
               "initial_val_mse": res.initial_val, "final_val_mse": res.final_val,
               "val_mse_reduction": 1 - res.final_val / res.initial_val}
    tables = {
        "pretrain_curve": [{"iteration": i, "train_mse": a, "val_mse": b} for i, a, b in pre.curve],
        "tlfn_curve": [{"iteration": i, "train_mse": a, "val_mse": b} for i, a, b in res.curve],
        "tlfn_theta": [{"index": i, "value": float(v)} for i, v in enumerate(trained.flatten())],
    }
    return Output(summary, tables)


# -- hedging ----------------------------------------------------------------------------

def run_hedge(scenario: str = "table-col1", K: int = 20, seed: int = 0, **train_kw) -> Output:
    market = hedging.scenario(scenario, K=K)
    tcfg = hedging.HedgeTrainConfig(seed=seed, **train_kw)
    res = hedging.train(market, tcfg)
    summary = {"scenario": scenario, "market": market.to_dict(), "train": tcfg.__dict__,
               "parameter_count": hedging.PolicyLayout(market.p, tcfg.nu, market.K).dim,
               "initial_train_loss": res.initial_train_loss, "initial_test_score": res.initial_test_score,
               "final_train_loss": res.final_train_loss, "final_test_score": res.final_test_score,
               "train_loss_ratio": res.final_train_loss / res.initial_train_loss,
               "action_set_note": hedging.ACTION_SET_NOTE, "wall_time": res.wall_time}
    curve = [{"step": s, "train_loss": a, "test_score": b} for s, a, b in res.curve]
    return Output(summary, {"curve": curve})
