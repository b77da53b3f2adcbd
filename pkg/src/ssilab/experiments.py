"""Experiment drivers behind the command-line front end.

Each ``cmd_*`` function takes a resolved config (see :mod:`ssilab.config`)
and returns a plain-dict run report: the echoed config, tool version, a seed
ledger, per-trial records, aggregates, and a PASS/FAIL verdict where the
command defines one.  All randomness flows through per-trial seed tuples
derived from the base seed, so re-running a report's echoed config
reproduces aggregates bit-identically.  Trials are reduced sequentially in
trial order regardless of the SSILAB_DETERMINISTIC toggle, which is echoed
for provenance.
"""

from __future__ import annotations

import os
import time

import numpy as np
from scipy import stats

from . import __version__
from .config import (build_grid, build_method, build_oracle, build_schedule,
                     config_hash)
from .diagnostics import (chi_square_bound, correlation_metrics, mse,
                          projection_concentration, singularity_trace,
                          trace_rms)
from .errors import ConfigError
from .flow import Formulation, IntegratorSpec, Method, sample
from .interp import SlerpPair, slerp
from .inversion import (InversionConfig, InversionMethod, InversionResult,
                        ddim_invert_baseline, reconstruct, ssi_invert_ve,
                        ssi_invert_vp)
from .schedules import Family, TimeGrid

_TAG_DATA = 0xD0
_TAG_NOISE = 0x55
_TAG_REFERENCE = 0x60D
_TAG_INIT = 0x5A

# regime guard: the projection law is asymptotic in sigma / atom spacing
_REGIME_FRACTION = 0.1


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def _trial_noise(seed_tuples, shape_tail) -> np.ndarray:
    rows = [_rng(s).standard_normal(shape_tail) for s in seed_tuples]
    return np.stack(rows)


def _jsonify(value):
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonify(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def _new_report(cfg: dict) -> dict:
    return {
        "tool": "ssilab",
        "version": __version__,
        "command": cfg["command"],
        "config": dict(cfg),
        "config_sha256": config_hash(cfg),
        "deterministic_mode": os.environ.get("SSILAB_DETERMINISTIC") == "1",
        "seed_ledger": [],
        "trials": [],
        "aggregates": {},
        "verdict": None,
        "notes": [],
        "csv": {},
    }


def _finish(report: dict, t_start: float) -> dict:
    report["wall_clock_seconds"] = time.perf_counter() - t_start
    return _jsonify(report)


def _ssi_grid(cfg: dict, t_ssi: float = None, steps: int = None) -> TimeGrid:
    t_ssi = cfg["t_ssi"] if t_ssi is None else t_ssi
    if cfg["grid"]["kind"] == "kappa":
        grid = build_grid(cfg)
        if abs(float(grid.times[0]) - t_ssi) > 1e-12:
            raise ConfigError(
                "kappa grid must start at t_ssi; set t_ssi to offset/full_steps")
        return grid
    return build_grid(cfg, t_min=t_ssi, steps=steps)


def _ssi_invert_batch(oracle, schedule, cfg, grid, x0, noise):
    inv_cfg = InversionConfig(t_ssi=float(grid.times[0]), grid=grid,
                              noise_seed=None, method=InversionMethod.SSI)
    if schedule.family is Family.VE_KARRAS:
        return ssi_invert_ve(oracle, schedule, x0, inv_cfg,
                             injected_noise=noise, keep_trajectory=True)
    return ssi_invert_vp(oracle, schedule, x0, inv_cfg,
                         injected_noise=noise, keep_trajectory=True)


# -- commands ----------------------------------------------------------------


def cmd_verify_singularity(cfg: dict) -> dict:
    """Sample trajectories and check the trace sigma * ||score|| stabilizes."""
    t0 = time.perf_counter()
    report = _new_report(cfg)
    oracle = build_oracle(cfg)
    schedule = build_schedule(cfg)
    if schedule.family is not Family.VE_KARRAS:
        raise ConfigError("singularity verification runs on the VE schedule")
    grid_down = build_grid(cfg).reversed()
    spec = IntegratorSpec(build_method(cfg), Formulation.VE)
    init_seed = (cfg["seed"], _TAG_INIT)
    report["seed_ledger"].append({"role": "init", "seed": list(init_seed)})
    _, traj = sample(schedule, oracle, spec, grid_down, init_seed,
                     cfg["trials"], return_trajectory=True)
    sigmas, ratios = singularity_trace(oracle, traj)
    rms = trace_rms(ratios)

    sigma_min = float(sigmas.min())
    decade = sigmas <= 10.0 * sigma_min
    band = rms[decade]
    spread = float((band.max() - band.min()) / band.mean())
    target = float(np.sqrt(oracle.dim - oracle.manifold_dim))
    deviation = float(abs(band.mean() - target) / target)

    is_subspace = oracle.manifold_dim > 0
    ok = spread < 0.25 and (deviation < 0.10 or not is_subspace)
    report["trials"] = [{"trial": i, "final_ratio": float(ratios[-1, i])}
                       for i in range(cfg["trials"])]
    report["aggregates"] = {
        "trace_max": float(rms.max()),
        "decade_mean": float(band.mean()),
        "decade_rel_spread": spread,
        "target": target,
        "target_rel_deviation": deviation,
    }
    report["verdict"] = "PASS" if ok else "FAIL"
    report["csv"]["trace"] = {
        "columns": ["sigma", "rms_ratio"],
        "rows": np.column_stack([sigmas, rms]),
    }
    return _finish(report, t0)


def cmd_verify_projection(cfg: dict) -> dict:
    """KS-test the projection-distance law over a sigma ladder."""
    t0 = time.perf_counter()
    report = _new_report(cfg)
    oracle = build_oracle(cfg)
    rungs = []
    judged = []
    for i, sigma in enumerate(cfg["sigma_ladder"]):
        rung_seed = (cfg["seed"], i)
        report["seed_ledger"].append({"role": f"rung_{i}",
                                      "seed": list(rung_seed)})
        in_regime = sigma <= _REGIME_FRACTION * oracle.feature_scale
        rep = projection_concentration(oracle, sigma, cfg["trials"], rung_seed)
        entry = rep.to_dict()
        entry["sigma"] = sigma
        entry["asymptotic_regime"] = bool(in_regime)
        entry["ks_pass"] = bool(in_regime and rep.ks_pvalue > 0.01)
        if not in_regime:
            entry["flag"] = "asymptotic regime violated"
        else:
            judged.append(rep.ratios)
        rungs.append(entry)
    scale_p = None
    if len(judged) >= 2:
        scale_p = float(stats.ks_2samp(judged[0], judged[1]).pvalue)
    judged_entries = [r for r in rungs if r["asymptotic_regime"]]
    ok = bool(judged_entries) and all(r["ks_pass"] for r in judged_entries)
    if scale_p is not None:
        ok = ok and scale_p > 0.01
    report["trials"] = rungs
    report["aggregates"] = {
        "rungs": rungs,
        "scale_invariance_pvalue": scale_p,
        "judged_rungs": len(judged_entries),
    }
    report["verdict"] = ("PASS" if ok else "FAIL") if judged_entries else None
    if not judged_entries:
        report["notes"].append("no rung inside the asymptotic regime; "
                               "no verdict claimed")
    report["csv"]["concentration"] = {
        "columns": ["sigma", "ks_statistic", "ks_pvalue", "coverage_fraction",
                    "ratio_mean", "in_regime"],
        "rows": [[r["sigma"], r["ks_statistic"], r["ks_pvalue"],
                  r["coverage_fraction"], r["ratio_mean"],
                  int(r["asymptotic_regime"])] for r in rungs],
    }
    return _finish(report, t0)


def _gaussianity(z, oracle):
    if getattr(oracle, "grid_shape", None) is None:
        return None
    return correlation_metrics(z, grid_shape=oracle.grid_shape)


def _metric_row(rep):
    if rep is None:
        return None
    return rep.to_dict()


def _pairwise_abs_cosine(noises: np.ndarray) -> float:
    unit = noises / np.linalg.norm(noises, axis=1, keepdims=True)
    gram = np.abs(unit @ unit.T)
    b = noises.shape[0]
    off = gram[~np.eye(b, dtype=bool)]
    return float(off.mean())


def cmd_invert(cfg: dict) -> dict:
    """Invert oracle samples and measure how Gaussian the noise looks."""
    t0 = time.perf_counter()
    report = _new_report(cfg)
    oracle = build_oracle(cfg)
    schedule = build_schedule(cfg)
    trials = cfg["trials"]
    run_ssi = cfg["method"] in ("ssi", "both")
    run_base = cfg["method"] in ("baseline_ddim", "both")
    if run_base and schedule.family is not Family.VP_LINEAR_BETA:
        raise ConfigError("baseline DDIM inversion needs the VP schedule")

    data_seed = (cfg["seed"], _TAG_DATA)
    report["seed_ledger"].append({"role": "data", "seed": list(data_seed)})
    if cfg["shared_input"]:
        x0 = np.broadcast_to(oracle.sample_data(data_seed, 1),
                             (trials, oracle.dim)).copy()
    else:
        x0 = oracle.sample_data(data_seed, trials)

    noise_seeds = [(cfg["seed"], i, _TAG_NOISE) for i in range(trials)]
    report["seed_ledger"] += [{"role": f"trial_{i}", "seed": list(s)}
                              for i, s in enumerate(noise_seeds)]

    aggregates = {}
    z_ssi = None
    if run_ssi:
        grid = _ssi_grid(cfg)
        noise = _trial_noise(noise_seeds, (oracle.dim,))
        res = _ssi_invert_batch(oracle, schedule, cfg, grid, x0, noise)
        sigma_T = float(schedule.sigma(res.final_time))
        z_ssi = res.noise / sigma_T
        aggregates["ssi_metrics"] = _metric_row(_gaussianity(z_ssi, oracle))
        aggregates["ssi_mean_abs_cosine"] = _pairwise_abs_cosine(res.noise)

    z_base = None
    if run_base:
        grid = build_grid(cfg)
        res_b = ddim_invert_baseline(oracle, schedule, x0, grid)
        sigma_T = float(schedule.sigma(res_b.final_time))
        z_base = res_b.noise / sigma_T
        aggregates["baseline_metrics"] = _metric_row(_gaussianity(z_base, oracle))
        aggregates["baseline_mean_abs_cosine"] = _pairwise_abs_cosine(res_b.noise)

    ref_seed = (cfg["seed"], _TAG_REFERENCE)
    report["seed_ledger"].append({"role": "reference", "seed": list(ref_seed)})
    z_ref = _rng(ref_seed).standard_normal((trials, oracle.dim))
    ref = _gaussianity(z_ref, oracle)
    aggregates["reference_metrics"] = _metric_row(ref)

    verdict = None
    if ref is not None:
        def _excess(rep):
            out = {}
            for name in ("chan", "hori", "vert"):
                se = float(np.hypot(getattr(rep, name + "_se"),
                                    getattr(ref, name + "_se")))
                diff = getattr(rep, name + "_corr") - getattr(ref, name + "_corr")
                out[name] = diff / se if se > 0 else np.inf
            return out
        if z_ssi is not None:
            ssi_rep = _gaussianity(z_ssi, oracle)
            aggregates["ssi_excess_se"] = _excess(ssi_rep)
            ssi_ok = all(abs(v) <= 2.0
                         for v in aggregates["ssi_excess_se"].values())
            verdict = "PASS" if ssi_ok else "FAIL"
        if z_base is not None:
            base_rep = _gaussianity(z_base, oracle)
            aggregates["baseline_excess_se"] = _excess(base_rep)
            base_fails = max(aggregates["baseline_excess_se"].values()) > 5.0
            if cfg["method"] == "both":
                verdict = ("PASS" if (verdict == "PASS" and base_fails)
                           else "FAIL")
    report["aggregates"] = aggregates
    rows = []
    for label, rep in (("ssi", aggregates.get("ssi_metrics")),
                       ("baseline", aggregates.get("baseline_metrics")),
                       ("reference", aggregates.get("reference_metrics"))):
        if rep is not None:
            rows.append([label, rep["chan_corr"], rep["hori_corr"],
                         rep["vert_corr"], rep["chan_se"], rep["hori_se"],
                         rep["vert_se"]])
    report["csv"]["metrics"] = {
        "columns": ["which", "chan_corr", "hori_corr", "vert_corr",
                    "chan_se", "hori_se", "vert_se"],
        "rows": rows,
    }
    report["verdict"] = verdict
    return _finish(report, t0)


def _roundtrip_batch(oracle, schedule, cfg, t_ssi, steps, cell_tag):
    """Invert a batch, reconstruct it, and return errors plus the trace max."""
    trials = cfg["trials"]
    data_seed = (cfg["seed"], cell_tag, _TAG_DATA)
    noise_seeds = [(cfg["seed"], cell_tag, i, _TAG_NOISE)
                   for i in range(trials)]
    x0 = oracle.sample_data(data_seed, trials)
    noise = _trial_noise(noise_seeds, (oracle.dim,))
    grid = _ssi_grid(cfg, t_ssi=t_ssi, steps=steps)
    res = _ssi_invert_batch(oracle, schedule, cfg, grid, x0, noise)
    _, ratios = singularity_trace(oracle, res.trajectory)
    grid_down = TimeGrid(grid.times[::-1])
    x_hat = reconstruct(oracle, schedule, res, grid_down,
                        method=build_method(cfg))
    err = np.linalg.norm(x_hat - x0, axis=-1)
    per_trial_mse = np.mean((x_hat - x0) ** 2, axis=-1)
    dist = np.linalg.norm(x_hat - oracle.nearest_manifold_point(x_hat), axis=-1)
    return {
        "x0": x0, "x_hat": x_hat, "errors": err, "mse": per_trial_mse,
        "manifold_dist": dist, "trace_max": float(ratios.max()),
        "sigma_ssi": float(schedule.sigma(float(grid.times[0]))),
        "data_seed": data_seed, "noise_seeds": noise_seeds,
    }


def cmd_sweep_tssi(cfg: dict) -> dict:
    """Map the roundtrip error over the skipping-time / step-count grid."""
    t0 = time.perf_counter()
    report = _new_report(cfg)
    oracle = build_oracle(cfg)
    schedule = build_schedule(cfg)
    if cfg["grid"]["kind"] == "kappa":
        raise ConfigError("the sweep varies t_ssi; use a karras or uniform grid")
    ladder = cfg["t_ssi_ladder"]
    steps_ladder = cfg["steps_ladder"]
    table = []
    cell_tag = 0
    for steps in steps_ladder:
        for t_ssi in ladder:
            out = _roundtrip_batch(oracle, schedule, cfg, t_ssi, steps, cell_tag)
            report["seed_ledger"].append({"role": f"cell_{cell_tag}",
                                          "seed": list(out["data_seed"])})
            table.append({
                "steps": steps, "t_ssi": t_ssi,
                "mse": float(out["mse"].mean()),
                "manifold_dist": float(out["manifold_dist"].mean()),
            })
            cell_tag += 1
    best = min(table, key=lambda row: row["mse"])
    degenerate = len(ladder) < 3
    interior = None
    if not degenerate:
        interior = bool(ladder[0] < best["t_ssi"] < ladder[-1])
    report["trials"] = table
    report["aggregates"] = {
        "table": table,
        "best_cell": {"steps": best["steps"], "t_ssi": best["t_ssi"],
                      "mse": best["mse"]},
        "interior_minimum": interior,
    }
    if degenerate:
        report["notes"].append("single-point ladder; no verdict claimed")
        report["verdict"] = None
    else:
        report["verdict"] = "PASS" if interior else "FAIL"
    report["csv"]["sweep"] = {
        "columns": ["steps", "t_ssi", "mse", "manifold_dist"],
        "rows": [[r["steps"], r["t_ssi"], r["mse"], r["manifold_dist"]]
                 for r in table],
    }
    return _finish(report, t0)


def cmd_interpolate(cfg: dict) -> dict:
    """Invert two samples, slerp between their noises, decode every frame."""
    t0 = time.perf_counter()
    report = _new_report(cfg)
    oracle = build_oracle(cfg)
    schedule = build_schedule(cfg)
    grid = _ssi_grid(cfg)
    grid_down = TimeGrid(grid.times[::-1])
    endpoints = []
    for which, data_seed in (("a", cfg["data_seed_a"]), ("b", cfg["data_seed_b"])):
        seed = (cfg["seed"], data_seed, _TAG_DATA)
        noise_seed = (cfg["seed"], data_seed, _TAG_NOISE)
        report["seed_ledger"] += [
            {"role": f"data_{which}", "seed": list(seed)},
            {"role": f"noise_{which}", "seed": list(noise_seed)}]
        x0 = oracle.sample_data(seed, 1)[0]
        noise = _rng(noise_seed).standard_normal(oracle.dim)
        endpoints.append(_ssi_invert_batch(oracle, schedule, cfg, grid, x0, noise))
    pair = SlerpPair(endpoints[0].noise, endpoints[1].noise)
    sqrt_d = np.sqrt(oracle.dim)
    frames = []
    for lam in cfg["lambdas"]:
        mixed = slerp(pair, float(lam))
        res = InversionResult(noise=mixed, final_time=endpoints[0].final_time,
                              config=endpoints[0].config)
        x_hat = reconstruct(oracle, schedule, res, grid_down,
                            method=build_method(cfg))
        dist = float(np.linalg.norm(
            x_hat - oracle.nearest_manifold_point(x_hat)) / sqrt_d)
        frame = {"lambda": float(lam), "manifold_dist": dist}
        if oracle.dim <= 16:
            frame["state"] = x_hat
        frames.append(frame)
    dists = [f["manifold_dist"] for f in frames]
    ok = all(d < cfg["manifold_threshold"] for d in dists)
    report["trials"] = frames
    report["aggregates"] = {
        "manifold_dists": dists,
        "max_manifold_dist": max(dists),
        "threshold": cfg["manifold_threshold"],
    }
    report["verdict"] = "PASS" if ok else "FAIL"
    report["csv"]["interpolation"] = {
        "columns": ["lambda", "manifold_dist"],
        "rows": [[f["lambda"], f["manifold_dist"]] for f in frames],
    }
    return _finish(report, t0)


def cmd_reconstruct(cfg: dict) -> dict:
    """Roundtrip trials and check the high-probability error bound."""
    t0 = time.perf_counter()
    report = _new_report(cfg)
    oracle = build_oracle(cfg)
    schedule = build_schedule(cfg)
    out = _roundtrip_batch(oracle, schedule, cfg, cfg["t_ssi"], None, 0)
    report["seed_ledger"].append({"role": "data", "seed": list(out["data_seed"])})
    report["seed_ledger"] += [{"role": f"trial_{i}", "seed": list(s)}
                              for i, s in enumerate(out["noise_seeds"])]
    delta = cfg["delta"]
    chk = chi_square_bound(oracle.dim, delta)
    bound = out["trace_max"] + np.sqrt(chk.chi_bound)
    ratio = out["errors"] / out["sigma_ssi"]
    fraction = float(np.mean(ratio <= bound))
    ok = fraction >= 1.0 - delta
    report["trials"] = [{"trial": i, "error_ratio": float(r)}
                       for i, r in enumerate(ratio)]
    report["aggregates"] = {
        "score_bound_c": out["trace_max"],
        "chi_radicand": chk.chi_bound,
        "error_bound": float(bound),
        "fraction_within": fraction,
        "delta": delta,
        "mean_mse": float(out["mse"].mean()),
    }
    report["verdict"] = "PASS" if ok else "FAIL"
    report["csv"]["reconstruct"] = {
        "columns": ["trial", "error_ratio"],
        "rows": [[i, float(r)] for i, r in enumerate(ratio)],
    }
    return _finish(report, t0)


_COMMAND_FUNCS = {
    "verify-singularity": cmd_verify_singularity,
    "verify-projection": cmd_verify_projection,
    "invert": cmd_invert,
    "sweep-tssi": cmd_sweep_tssi,
    "interpolate": cmd_interpolate,
    "reconstruct": cmd_reconstruct,
}


def run_command(cfg: dict) -> dict:
    """Dispatch a resolved config to its command driver."""
    return _COMMAND_FUNCS[cfg["command"]](cfg)


def replay(report: dict) -> dict:
    """Re-run a report from its echoed config (without writing outputs)."""
    cfg = dict(report["config"])
    cfg["out"] = None
    return run_command(cfg)
