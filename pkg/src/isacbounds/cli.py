"""Command-line front end: seeded, reproducible sweep runs.

    isacbounds run {re-region,cd-boundary,crb-rate,elmmse,zzb,all} [CONFIG]
    isacbounds validate [CONFIG]

Outputs are CSV (or JSON) tables plus a JSON manifest; identical
(config, seed) pairs reproduce byte-identical tables regardless of the
worker count. Exit codes: 0 success, 2 invalid configuration, 3 solver
non-convergence (partial outputs are written and flagged).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import cap_distortion as cd
from . import crb_rate as cr
from . import elmmse as el
from . import ranging_zzb as rz
from . import rate_exponent as re_mod
from .channels import CommChannel
from .config import ConfigError, config_hash, load_config
from .numerics import SeededRng, sample_gaussian_matrix
from .runio import RunManifest, write_table

STAGE_SEEDS = {"re_region": 11, "cd_boundary": 23, "crb_rate": 37,
               "elmmse": 53, "zzb": 71}


def _stage_re_region(cfg, out_dir, rng, fmt, workers):
    p = cfg["re_region"]
    n = p["n_elements"]
    power = p["power"]
    # alpha = 1; noise variances back out of the requested SNRs
    sigma_c2 = power * n / 10.0 ** (p["snr_c_db"] / 10.0)
    sigma_s2 = power * n * n / 10.0 ** (p["snr_s_db"] / 10.0)
    lam_grid = np.linspace(0.0, 1.0, p["n_lambda"])
    theta_grid = np.linspace(-np.pi / 2, np.pi / 2, p["beampattern_points"])
    outputs = []
    flagged = False
    for i, th_s_deg in enumerate(p["theta_s_deg_list"]):
        th_c = np.deg2rad(p["theta_c_deg"])
        th_s = np.deg2rad(th_s_deg)
        curve = re_mod.re_boundary_pointlike(
            th_c, th_s, 1.0, 1.0, power, sigma_c2, sigma_s2,
            lambda_grid=lam_grid, n_elements=n)
        rows = [(pt.control, pt.rate, pt.sensing_value) for pt in curve.points]
        outputs.append(write_table(out_dir / f"re_region_{i}.csv",
                                   ["lambda", "rate_bits", "exponent"], rows, fmt))
        hull = re_mod.upper_convex_hull(curve)
        hull_rows = [(pt.control, pt.rate, pt.sensing_value) for pt in hull.points]
        outputs.append(write_table(out_dir / f"re_region_{i}_hull.csv",
                                   ["lambda", "rate_bits", "exponent"], hull_rows, fmt))
        # beam patterns of the two endpoint beamformers
        from .channels import steering_vector
        from .numerics import eig_hermitian
        a_c = steering_vector(th_c, n)
        a_s = steering_vector(th_s, n)
        gains = {}
        for tag, lam in (("lambda0", 0.0), ("lambda1", 1.0)):
            m = (1 - lam) * np.outer(a_c, a_c.conj()) + lam * np.outer(a_s, a_s.conj())
            _, u = eig_hermitian(m)
            gains[tag] = re_mod.beampattern(u[:, 0], theta_grid)
        bp_rows = list(zip(np.rad2deg(theta_grid), gains["lambda0"], gains["lambda1"]))
        outputs.append(write_table(out_dir / f"beampattern_{i}.csv",
                                   ["theta_deg", "gain_lambda0", "gain_lambda1"],
                                   bp_rows, fmt))
    return outputs, flagged


def _stage_cd_boundary(cfg, out_dir, rng, fmt, workers):
    p = cfg["cd_boundary"]
    budget = 10.0 ** (p["budget_db"] / 10.0)
    spec = cd.gaussian_fading_spec(
        budget, grid_halfwidth_scale=p["grid_halfwidth_scale"],
        n_input=p["n_input"], state_step=p["state_step"],
        state_span=p["state_span"], output_step=p["output_step"])
    boundary = cd.cd_boundary(spec, cd.siso_costs(), budget, p["mu_schedule"],
                              power_tol=p["power_tol"], tol=p["tol"],
                              max_iters=p["max_iters"])
    rows = [(pt.mu, pt.lam, pt.rate_bits, pt.avg_power, pt.avg_distortion)
            for pt in boundary.points]
    outputs = [write_table(out_dir / "cd_boundary.csv",
                           ["mu", "lambda", "rate_bits", "avg_power", "avg_distortion"],
                           rows, fmt)]
    dist_rows = []
    for idx, pt in enumerate(boundary.points):
        for x, m in zip(spec.input_grid, pt.mass):
            dist_rows.append((idx, x, m))
    outputs.append(write_table(out_dir / "cd_distributions.csv",
                               ["point_index", "x", "mass"], dist_rows, fmt))
    flagged = not all(pt.converged for pt in boundary.points)
    return outputs, flagged


def _stage_crb_rate(cfg, out_dir, rng, fmt, workers):
    p = cfg["crb_rate"]
    bfim = cr.random_bfim_map(p["k_dim"], p["m_dim"], rng.substream(0))
    h_c = sample_gaussian_matrix(p["n_comm_rx"], p["m_dim"], 1.0, rng.substream(1))
    comm = CommChannel(h_c, p["sigma_c2"])
    sweep = cr.corner_points(bfim, comm, p["power"], p["sigma_s2"],
                             p["t_cs"], p["t_sc"], p["n_mc"], rng.substream(2))
    header = ["point", "rate_bits", "crb", "crb_lower", "crb_upper", "rank", "T", "K"]
    rows = [tuple(r[k] for k in header) for r in sweep.rows]
    return [write_table(out_dir / "crb_rate.csv", header, rows, fmt)], False


def _stage_elmmse(cfg, out_dir, rng, fmt, workers):
    p = cfg["elmmse"]
    sgd = el.SgdConfig(batch=p["sgd_batch"], iters=p["sgd_iters"],
                       pilot_iters=p["sgd_pilot_iters"], seed=cfg["global"]["seed"])
    points = el.precoder_sweep(p["m_dim"], p["n_rx"], p["t_block"],
                               p["snr_db_list"], p["n_mc"], rng,
                               rho=p["rho"], power=p["power"], sgd=sgd,
                               workers=workers)
    header = ["snr_db", "xi_wf", "xi_dd", "xi_di",
              "stderr_wf", "stderr_dd", "stderr_di"]
    rows = [(q.snr_db, q.xi_wf, q.xi_dd, q.xi_di,
             q.stderr_wf, q.stderr_dd, q.stderr_di) for q in points]
    return [write_table(out_dir / "elmmse_sweep.csv", header, rows, fmt)], False


def _stage_zzb(cfg, out_dir, rng, fmt, workers):
    p = cfg["zzb"]
    eps_max = p["eps_max_factor"] / p["f_high"]
    outputs = []
    summary = []
    for si, snr_db in enumerate(p["snr_db_list"]):
        snr = 10.0 ** (snr_db / 10.0)
        psd, val = rz.zzb_optimal_psd(snr, p["n_bins"], p["f_high"],
                                      eps_max=eps_max, restarts=p["restarts"],
                                      rng=rng.substream(si), n_lag=p["n_lag"],
                                      workers=workers)
        label = format(snr_db, "+.1f").replace(".", "p")
        rows = list(zip(psd.freqs, psd.power))
        outputs.append(write_table(out_dir / f"zzb_psd_snr{label}db.csv",
                                   ["f_hz", "psd_value"], rows, fmt))
        summary.append((snr_db, val, rz.band_power_fraction(psd, p["f_high"] / 2.0)))
    outputs.append(write_table(out_dir / "zzb_summary.csv",
                               ["snr_db", "zzb_value", "frac_top_half"], summary, fmt))
    return outputs, False


_STAGE_FUNCS = {
    "re_region": _stage_re_region,
    "cd_boundary": _stage_cd_boundary,
    "crb_rate": _stage_crb_rate,
    "elmmse": _stage_elmmse,
    "zzb": _stage_zzb,
}

_SUBCOMMANDS = {"re-region": ["re_region"], "cd-boundary": ["cd_boundary"],
                "crb-rate": ["crb_rate"], "elmmse": ["elmmse"], "zzb": ["zzb"],
                "all": list(_STAGE_FUNCS.keys())}


def _parse_override_value(text):
    return yaml.safe_load(text)


def _build_parser():
    ap = argparse.ArgumentParser(prog="isacbounds",
                                 description="Sensing/communication tradeoff sweeps")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one stage or all of them")
    run.add_argument("stage", choices=sorted(_SUBCOMMANDS.keys()))
    run.add_argument("config_path", nargs="?", default=None)
    run.add_argument("--config", dest="config_flag", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--scale", choices=["desk", "paper"], default=None)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--format", choices=["csv", "json"], default="csv")
    run.add_argument("--theta-c", type=float, default=None,
                     help="user bearing in degrees (re-region shortcut)")
    run.add_argument("--theta-s", type=float, default=None,
                     help="target bearing in degrees (re-region shortcut)")
    run.add_argument("--set", dest="sets", action="append", default=[],
                     metavar="SECTION.KEY=VALUE", help="generic config override")

    val = sub.add_parser("validate", help="parse and validate a config, run nothing")
    val.add_argument("config_path", nargs="?", default=None)
    val.add_argument("--config", dest="config_flag", default=None)
    val.add_argument("--scale", choices=["desk", "paper"], default=None)
    val.add_argument("--set", dest="sets", action="append", default=[])
    return ap


def _collect_overrides(args):
    overrides = {}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        key, _, raw = item.partition("=")
        overrides[key.strip()] = _parse_override_value(raw)
    if getattr(args, "seed", None) is not None:
        overrides["global.seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["global.out"] = args.out
    if getattr(args, "scale", None) is not None:
        overrides["global.scale"] = args.scale
    if getattr(args, "theta_c", None) is not None:
        overrides["re_region.theta_c_deg"] = args.theta_c
    if getattr(args, "theta_s", None) is not None:
        overrides["re_region.theta_s_deg_list"] = [args.theta_s]
    return overrides


def _error_json(kind, message):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config_path = args.config_flag or args.config_path
    try:
        cfg = load_config(config_path, _collect_overrides(args))
    except ConfigError as exc:
        _error_json("invalid-config", str(exc))
        return 2
    except (OSError, yaml.YAMLError) as exc:
        _error_json("invalid-config", str(exc))
        return 2

    if args.command == "validate":
        print(json.dumps({"status": "ok", "config_hash": config_hash(cfg)}))
        return 0

    out_dir = Path(cfg["global"]["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg["global"]["seed"]
    manifest = RunManifest(config_hash(cfg), seed, __version__)
    flagged_stages = []
    try:
        for stage in _SUBCOMMANDS[args.stage]:
            rng = SeededRng(seed, stream_id=STAGE_SEEDS[stage])
            manifest.start(stage)
            outputs, flagged = _STAGE_FUNCS[stage](cfg, out_dir, rng, args.format,
                                                   max(1, args.workers))
            manifest.finish(stage)
            for path in outputs:
                manifest.add_output(path)
            if flagged:
                flagged_stages.append(stage)
    except Exception as exc:           # solver-level failure: report, exit 3
        manifest.data["error"] = str(exc)
        manifest.write(out_dir)
        _error_json("solver-failure", str(exc))
        return 3
    if flagged_stages:
        manifest.data["non_converged_stages"] = flagged_stages
    manifest.write(out_dir)
    if flagged_stages:
        _error_json("non-convergence",
                    f"stages with non-converged points: {', '.join(flagged_stages)}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
