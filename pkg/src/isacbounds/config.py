"""Scenario configuration: schema, desk/paper defaults, validation.

Configs are YAML documents (JSON parses as a YAML subset, so either works)
with one section per pipeline stage plus a `global` section. Unknown keys
are rejected; every physical parameter is validated against the solver
preconditions at parse time, before anything runs.
"""

from __future__ import annotations

import copy
import hashlib
import json

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_GLOBAL_DEFAULTS = dict(seed=7, scale="desk", out="results")

_DESK = dict(
    re_region=dict(
        n_elements=10, theta_c_deg=60.0, theta_s_deg_list=[90.0, -30.0],
        snr_c_db=10.0, snr_s_db=0.0, power=1.0, n_lambda=101,
        beampattern_points=361,
    ),
    cd_boundary=dict(
        budget_db=10.0, n_input=161, state_step=0.1, state_span=5.0,
        output_step=0.25, grid_halfwidth_scale=4.0,
        mu_schedule=[0.0, 4.0, 8.0, 16.0, 48.0],
        power_tol=1e-3, tol=1e-9, max_iters=10000,
    ),
    crb_rate=dict(
        k_dim=3, m_dim=4, n_comm_rx=4, power=4.0, sigma_c2=0.05,
        sigma_s2=1.0, t_cs=32, t_sc=32, n_mc=400,
    ),
    elmmse=dict(
        m_dim=16, n_rx=8, t_block=16, snr_db_list=[-5.0, 0.0, 5.0, 10.0],
        n_mc=200, rho=0.9, power=1.0, codebook="gaussian",
        sgd_batch=16, sgd_iters=20000, sgd_pilot_iters=1200,
    ),
    zzb=dict(
        n_bins=64, f_high=1.0, eps_max_factor=10.0,
        snr_db_list=[-10.0, 0.0, 10.0, 20.0], restarts=20, n_lag=2048,
    ),
)

_PAPER = copy.deepcopy(_DESK)
_PAPER["cd_boundary"]["mu_schedule"] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 48.0]
_PAPER["crb_rate"].update(k_dim=4, m_dim=6, t_cs=64, t_sc=64, n_mc=2000)
_PAPER["elmmse"].update(m_dim=64, n_rx=32, t_block=32, n_mc=500)
_PAPER["zzb"].update(n_bins=96, restarts=40, n_lag=4096)

STAGES = tuple(_DESK.keys())


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def _check_number(section, key, value, low=None, high=None, integer=False,
                  low_open=False):
    field = f"{section}.{key}"
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             field, f"expected a number, got {value!r}")
    if integer:
        _require(float(value).is_integer(), field, f"expected an integer, got {value!r}")
    if low is not None:
        if low_open:
            _require(value > low, field, f"must be > {low}, got {value!r}")
        else:
            _require(value >= low, field, f"must be >= {low}, got {value!r}")
    if high is not None:
        _require(value <= high, field, f"must be <= {high}, got {value!r}")


def _check_number_list(section, key, value, min_len=1):
    field = f"{section}.{key}"
    _require(isinstance(value, (list, tuple)), field, f"expected a list, got {value!r}")
    _require(len(value) >= min_len, field, f"needs at least {min_len} entries")
    for v in value:
        _require(isinstance(v, (int, float)) and not isinstance(v, bool),
                 field, f"list entries must be numbers, got {v!r}")


def _merge(defaults, overrides, path):
    out = copy.deepcopy(defaults)
    for key, val in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"{path}.{key}: unknown key")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}.{key}: expected a mapping")
            out[key] = _merge(defaults[key], val, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _validate(cfg):
    g = cfg["global"]
    _check_number("global", "seed", g["seed"], low=0, integer=True)
    _require(g["scale"] in ("desk", "paper"), "global.scale",
             f"must be 'desk' or 'paper', got {g['scale']!r}")
    _require(isinstance(g["out"], str) and g["out"], "global.out",
             "must be a nonempty path")

    r = cfg["re_region"]
    _check_number("re_region", "n_elements", r["n_elements"], low=1, integer=True)
    _check_number("re_region", "theta_c_deg", r["theta_c_deg"], low=-90.0, high=90.0)
    _check_number_list("re_region", "theta_s_deg_list", r["theta_s_deg_list"])
    for v in r["theta_s_deg_list"]:
        _check_number("re_region", "theta_s_deg_list[]", v, low=-90.0, high=90.0)
    _check_number("re_region", "power", r["power"], low=0.0, low_open=True)
    _check_number("re_region", "n_lambda", r["n_lambda"], low=2, integer=True)
    _check_number("re_region", "beampattern_points", r["beampattern_points"], low=2, integer=True)
    _check_number("re_region", "snr_c_db", r["snr_c_db"])
    _check_number("re_region", "snr_s_db", r["snr_s_db"])

    c = cfg["cd_boundary"]
    _check_number("cd_boundary", "budget_db", c["budget_db"])
    _check_number("cd_boundary", "n_input", c["n_input"], low=9, integer=True)
    _check_number("cd_boundary", "state_step", c["state_step"], low=0.0, low_open=True)
    _check_number("cd_boundary", "state_span", c["state_span"], low=1.0)
    _check_number("cd_boundary", "output_step", c["output_step"], low=0.0, low_open=True)
    _check_number("cd_boundary", "grid_halfwidth_scale", c["grid_halfwidth_scale"], low=1.5)
    _check_number_list("cd_boundary", "mu_schedule", c["mu_schedule"])
    for v in c["mu_schedule"]:
        _check_number("cd_boundary", "mu_schedule[]", v, low=0.0)
    _check_number("cd_boundary", "power_tol", c["power_tol"], low=0.0, low_open=True)
    _check_number("cd_boundary", "tol", c["tol"], low=0.0, low_open=True)
    _check_number("cd_boundary", "max_iters", c["max_iters"], low=10, integer=True)

    k = cfg["crb_rate"]
    _check_number("crb_rate", "k_dim", k["k_dim"], low=1, integer=True)
    _check_number("crb_rate", "m_dim", k["m_dim"], low=1, integer=True)
    _check_number("crb_rate", "n_comm_rx", k["n_comm_rx"], low=1, integer=True)
    _check_number("crb_rate", "power", k["power"], low=0.0, low_open=True)
    _check_number("crb_rate", "sigma_c2", k["sigma_c2"], low=0.0, low_open=True)
    _check_number("crb_rate", "sigma_s2", k["sigma_s2"], low=0.0, low_open=True)
    _check_number("crb_rate", "t_cs", k["t_cs"], low=2, integer=True)
    _check_number("crb_rate", "t_sc", k["t_sc"], low=1, integer=True)
    _check_number("crb_rate", "n_mc", k["n_mc"], low=2, integer=True)
    _require(k["t_cs"] > min(k["k_dim"], k["m_dim"]), "crb_rate.t_cs",
             "the DoF-loss bound needs t_cs > min(k_dim, m_dim)")
    _require(k["t_sc"] >= k["m_dim"], "crb_rate.t_sc",
             "semi-unitary signaling needs t_sc >= m_dim")

    e = cfg["elmmse"]
    _check_number("elmmse", "m_dim", e["m_dim"], low=1, integer=True)
    _check_number("elmmse", "n_rx", e["n_rx"], low=1, integer=True)
    _check_number("elmmse", "t_block", e["t_block"], low=1, integer=True)
    _check_number_list("elmmse", "snr_db_list", e["snr_db_list"])
    _check_number("elmmse", "n_mc", e["n_mc"], low=2, integer=True)
    _check_number("elmmse", "rho", e["rho"], low=0.0, high=0.999)
    _check_number("elmmse", "power", e["power"], low=0.0, low_open=True)
    _require(e["codebook"] in ("gaussian", "semiunitary"), "elmmse.codebook",
             f"must be 'gaussian' or 'semiunitary', got {e['codebook']!r}")
    if e["codebook"] == "semiunitary":
        _require(e["t_block"] >= e["m_dim"], "elmmse.t_block",
                 "semiunitary codebook requires t_block >= m_dim")
    _check_number("elmmse", "sgd_batch", e["sgd_batch"], low=1, integer=True)
    _check_number("elmmse", "sgd_iters", e["sgd_iters"], low=10, integer=True)
    _check_number("elmmse", "sgd_pilot_iters", e["sgd_pilot_iters"], low=10, integer=True)

    z = cfg["zzb"]
    _check_number("zzb", "n_bins", z["n_bins"], low=2, integer=True)
    _check_number("zzb", "f_high", z["f_high"], low=0.0, low_open=True)
    _check_number("zzb", "eps_max_factor", z["eps_max_factor"], low=0.0, low_open=True)
    _check_number_list("zzb", "snr_db_list", z["snr_db_list"])
    _check_number("zzb", "restarts", z["restarts"], low=1, integer=True)
    _check_number("zzb", "n_lag", z["n_lag"], low=64, integer=True)
    return cfg


def load_config(path=None, overrides=None) -> dict:
    """Load, merge with scale defaults, apply overrides, and validate.

    `overrides` is a mapping of dotted keys ("section.key") to values, as
    collected from command-line flags; it is applied after the file.
    """
    doc = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a mapping")
    for key in doc:
        if key != "global" and key not in STAGES:
            raise ConfigError(f"{key}: unknown section")
    g_doc = doc.get("global") or {}
    if not isinstance(g_doc, dict):
        raise ConfigError("global: expected a mapping")
    g = _merge(_GLOBAL_DEFAULTS, g_doc, "global")
    for dotted, value in (overrides or {}).items():
        if dotted.startswith("global."):
            key = dotted.split(".", 1)[1]
            if key not in _GLOBAL_DEFAULTS:
                raise ConfigError(f"{dotted}: unknown key")
            g[key] = value
    base = _DESK if g["scale"] == "desk" else _PAPER
    cfg = {"global": g}
    for stage in STAGES:
        stage_doc = doc.get(stage) or {}
        if not isinstance(stage_doc, dict):
            raise ConfigError(f"{stage}: expected a mapping")
        cfg[stage] = _merge(base[stage], stage_doc, stage)
    for dotted, value in (overrides or {}).items():
        if dotted.startswith("global."):
            continue
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in STAGES:
            raise ConfigError(f"{dotted}: unknown override target")
        section, key = parts
        if key not in cfg[section]:
            raise ConfigError(f"{dotted}: unknown key")
        cfg[section][key] = value
    return _validate(cfg)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace drift)."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
