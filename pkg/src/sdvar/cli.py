"""
Command-line front end.

    sdvar <simulate|estimate|filter|irf|mc-study> --config FILE --seed N --out DIR [--workers N]

Model structure and workflow settings come from a JSON config (see
``CONFIG_SCHEMA``); flags only carry the seed, paths and parallelism.  Every
run writes ``manifest.json`` with the config hash, seed, library versions
and the SHA-256 of each output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import plotting
from .estimate import StaticsFitter, fit, two_step_densities
from .filtering import bands, init_theta, run_filter, run_smoother
from .io import DataError, ingest, sha256_file, write_csv
from .irf import irf, irf_bands
from .model import IdentificationError, LagStructure, ModelSpec, Restriction, StaticParams
from .simulate import DgpConfig, default_theta0, mc_study, simulate

__all__ = ["main", "build_parser", "load_config", "ConfigError", "CONFIG_SCHEMA"]

_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "model"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "model": {
            "type": "object",
            "required": ["n", "skewt"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "lags": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["plain", "heterogeneous"]},
                        "p": {"type": "integer", "minimum": 1},
                    },
                },
                "skewt": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["delta", "nu"],
                        "additionalProperties": False,
                        "properties": {
                            "delta": {"type": "number", "exclusiveMinimum": -1,
                                      "exclusiveMaximum": 1},
                            "nu": {"type": "number", "exclusiveMinimum": 2},
                        },
                    },
                },
                "penalty_k": {"type": "number", "minimum": 0},
                "squaring_q": {"type": "integer", "minimum": 1},
            },
        },
        "data": {
            "type": "object",
            "required": ["path"],
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "center": {"type": "boolean"},
            },
        },
        "restriction": {
            "oneOf": [
                {"enum": ["by_block", "diagonal_offdiagonal", "per_component"]},
                {
                    "type": "object",
                    "required": ["names", "groups"],
                    "additionalProperties": False,
                    "properties": {
                        "names": {"type": "array", "items": {"type": "string"}},
                        "groups": {"type": "array",
                                   "items": {"type": "array",
                                             "items": {"type": "integer", "minimum": 0}}},
                    },
                },
            ]
        },
        "statics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "from_estimate": {"type": "string"},
                "alpha": _NUMS,
                "omega": _NUMS,
                "beta": _NUMS,
            },
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["ols", "given", "reference"]},
                "window": {"type": "integer", "minimum": 1},
                "theta0": _NUMS,
            },
        },
        "dgp": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["score_driven", "deterministic_sine", "shock_driven_rw",
                                  "constant"]},
                "T": {"type": "integer", "minimum": 2},
                "alpha": _NUMS,
                "theta0": _NUMS,
                "sine_amplitudes": {**_NUMS, "minItems": 3, "maxItems": 3},
                "shock_alpha": _NUMS,
            },
        },
        "estimate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "integrated": {"type": "boolean"},
                "init": _NUMS,
                "n_starts": {"type": "integer", "minimum": 1},
                "two_step": {"type": "boolean"},
                "band_draws": {"type": "integer", "minimum": 0},
            },
        },
        "filter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "smoother": {"type": "boolean"},
                "band_draws": {"type": "integer", "minimum": 0},
                "components": {"type": "array", "items": {"type": "string"}},
            },
        },
        "irf": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "draws": {"type": "integer", "minimum": 2, "multipleOf": 2},
                "repetitions": {"type": "integer", "minimum": 0},
                "t": {"type": "integer", "minimum": 0},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "replications": {"type": "integer", "minimum": 2},
                "analysis": {"enum": ["fixed", "estimate"]},
                "init_window": {"type": "integer", "minimum": 1},
                "components": {"type": "array", "items": {"type": "string"}},
                "burn_in": {"type": "integer", "minimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path):
    """Parse and validate a config; errors carry the JSON pointer of the problem."""
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        msgs = []
        for e in errors:
            pointer = "/" + "/".join(str(p) for p in e.absolute_path)
            msgs.append(f"{pointer}: {e.message}")
        raise ConfigError("config does not match the schema:\n  " + "\n  ".join(msgs))
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# config -> objects


def _spec(cfg):
    m = cfg["model"]
    lags = m.get("lags", {})
    spec = ModelSpec(
        n=m["n"],
        lags=LagStructure(lags.get("kind", "plain"), lags.get("p", 1)),
        skewt=tuple((p["delta"], p["nu"]) for p in m["skewt"]),
        penalty_k=m.get("penalty_k", 200.0),
        squaring_q=m.get("squaring_q", 10),
    )
    spec.validate_identification()
    return spec


def _restriction(cfg, spec):
    r = cfg.get("restriction", "by_block")
    if isinstance(r, dict):
        return Restriction.from_dict(r)
    return getattr(Restriction, r)(spec)


def _resolve(base, path):
    p = Path(path)
    return p if p.is_absolute() else (base / p)


def _load_estimate(path):
    with open(path) as fh:
        return json.load(fh)


def _statics(cfg, spec, restriction, base):
    st = cfg.get("statics", {})
    if "from_estimate" in st:
        est = _load_estimate(_resolve(base, st["from_estimate"]))
        return StaticParams.from_dict(est["statics"]), est
    if "alpha" not in st:
        raise ConfigError("/statics: give 'alpha' or 'from_estimate'")
    alpha = np.asarray(st["alpha"], dtype=float)
    if alpha.shape == (len(restriction),):
        alpha = restriction.expand(alpha, spec.d)
    if alpha.shape != (spec.d,):
        raise ConfigError(f"/statics/alpha: need {len(restriction)} group values or {spec.d} "
                          "component values")
    omega = np.asarray(st.get("omega", np.zeros(spec.d)), dtype=float)
    beta = np.asarray(st.get("beta", np.ones(spec.d)), dtype=float)
    return StaticParams(omega, beta, alpha), None


def _theta0(cfg, spec, y, est=None):
    init = cfg.get("init", {})
    method = init.get("method", "ols")
    if est is not None and est.get("theta0") is not None and "init" not in cfg:
        return np.asarray(est["theta0"], dtype=float)
    if method == "given":
        if "theta0" not in init:
            raise ConfigError("/init/theta0: required when method is 'given'")
        th = np.asarray(init["theta0"], dtype=float)
        if th.shape != (spec.d,):
            raise ConfigError(f"/init/theta0: need {spec.d} values")
        return th
    if method == "reference":
        return default_theta0(spec)
    return init_theta(y, spec, init.get("window"))


def _dataset(cfg, base):
    if "data" not in cfg:
        raise ConfigError("/data: required for this command")
    d = cfg["data"]
    return ingest(_resolve(base, d["path"]), center=d.get("center", True))


# ---------------------------------------------------------------------------
# workflows


def _filtered_rows(out, smoothed=None):
    table = out.table()
    header = out.columns()
    if smoothed is not None:
        header = header + [f"smoothed_{lab}" for lab in out.spec.labels()]
        table = np.column_stack([table, smoothed.theta_path])
    rows = []
    for r in table:
        row = [int(r[0])] + list(r[1:])
        rows.append(row)
    flag_col = out.columns().index("flag")
    for row in rows:
        row[flag_col] = int(row[flag_col])
    return header, rows


def _default_components(spec):
    labels = spec.labels()
    picks = ["S11"] + [lab for lab in labels if lab.startswith("A")][:3]
    picks += [f"{b}_11" for b in spec.lags.block_names[:2]]
    return [p for p in picks if p in labels]


def cmd_simulate(cfg, seed, out, base, workers):
    spec = _spec(cfg)
    dgp = cfg.get("dgp", {"kind": "score_driven"})
    kw = {"kind": dgp["kind"], "T": dgp.get("T", 750), "spec": spec, "seed": seed}
    if "theta0" in dgp:
        kw["theta0"] = np.asarray(dgp["theta0"], dtype=float)
    if "alpha" in dgp:
        restr = _restriction(cfg, spec)
        kw["statics"] = StaticParams.integrated(restr.expand(dgp["alpha"], spec.d))
    if "sine_amplitudes" in dgp:
        kw["sine_amplitudes"] = tuple(dgp["sine_amplitudes"])
    if "shock_alpha" in dgp:
        kw["shock_alpha"] = tuple(dgp["shock_alpha"])
    sim = simulate(DgpConfig(**kw))
    names = [f"y{i + 1}" for i in range(spec.n)]
    write_csv(out / "y.csv", ["date"] + names,
              ([t] + list(r) for t, r in enumerate(sim.y)))
    truth = {"labels": spec.labels(), "theta_true": sim.theta_true.tolist(),
             "eps_true": sim.eps_true.tolist(), "dgp": dgp, "model": cfg["model"],
             "seed": seed}
    (out / "truth.json").write_text(json.dumps(truth))
    plotting.plot_series(sim.y, names, out / "y.png")
    plotting.plot_paths(sim.theta_true, spec.labels(), _default_components(spec),
                        out / "theta_true.png")
    return ["y.csv", "truth.json", "y.png", "theta_true.png"]


def _write_filter_outputs(out_dir, spec, filt, smooth=None, band=None, comps=None,
                          names=None):
    header, rows = _filtered_rows(filt, smooth)
    if band is not None:
        header = header + [f"halfwidth_{lab}" for lab in spec.labels()]
        rows = [r + list(h) for r, h in zip(rows, band.halfwidth)]
    write_csv(out_dir / "filtered.csv", header, rows)
    comps = comps or _default_components(spec)
    lo = hi = None
    if band is not None:
        lo, hi = band.lower, band.upper
    L = spec.lags.max_lag
    plotting.plot_paths(filt.theta_path[L:], spec.labels(), comps, out_dir / "filtered.png",
                        lower=None if lo is None else lo[L:], upper=None if hi is None else hi[L:],
                        smoothed=None if smooth is None else smooth.theta_path[L:])
    _, _, var = filt.derived()
    plotting.plot_series(var[L:], [f"var {nm}" for nm in names], out_dir / "variances.png")
    return ["filtered.csv", "filtered.png", "variances.png"]


def cmd_filter(cfg, seed, out, base, workers):
    spec = _spec(cfg)
    ds = _dataset(cfg, base)
    restr = _restriction(cfg, spec)
    statics, est = _statics(cfg, spec, restr, base)
    theta0 = _theta0(cfg, spec, ds.values, est)
    fcfg = cfg.get("filter", {})
    filt = run_filter(ds.values, spec, statics, theta0)
    smooth = run_smoother(ds.values, spec, statics, filt) if fcfg.get("smoother", True) else None
    band = None
    draws = fcfg.get("band_draws", 0)
    if draws:
        cov = None
        if est is not None and est.get("cov") is not None:
            cov = np.asarray(est["cov"])[:len(restr), :len(restr)]
        band = bands(ds.values, spec, statics, theta0, cov, restr, draws,
                     np.random.default_rng(seed))
    files = _write_filter_outputs(out, spec, filt, smooth, band, fcfg.get("components"),
                                  ds.names)
    summary = {"loglik": filt.loglik, "n_flags": filt.n_flags,
               "theta_next": filt.theta_next.tolist(), "labels": spec.labels()}
    (out / "filter.json").write_text(json.dumps(summary, indent=2))
    return files + ["filter.json"]


def cmd_estimate(cfg, seed, out, base, workers):
    spec = _spec(cfg)
    ds = _dataset(cfg, base)
    restr = _restriction(cfg, spec)
    theta0 = _theta0(cfg, spec, ds.values)
    ecfg = cfg.get("estimate", {})
    integrated = ecfg.get("integrated", True)
    kw = {"integrated": integrated, "n_starts": ecfg.get("n_starts", 3)}
    if "init" in ecfg:
        kw["init"] = np.asarray(ecfg["init"], dtype=float)
    res = fit(ds.values, spec, restr, theta0, **kw)
    if ecfg.get("two_step", False):
        spec = two_step_densities(ds.values, spec, res.statics, theta0)
        kw["init"] = res.values
        res = fit(ds.values, spec, restr, theta0, **kw)
    (out / "estimate.json").write_text(res.to_json())
    (out / "estimate_table.txt").write_text(res.table() + "\n")
    write_csv(out / "estimate_table.csv", ["parameter", "value", "robust_se", "t_stat"],
              ([nm, v, s, t] for nm, v, s, t in zip(res.names, res.values, res.robust_se,
                                                   res.t_stats)))
    filt = run_filter(ds.values, spec, res.statics, theta0)
    band = None
    draws = ecfg.get("band_draws", 0)
    if draws:
        band = bands(ds.values, spec, res.statics, theta0,
                     res.cov[:len(restr), :len(restr)], restr, draws,
                     np.random.default_rng(seed))
    files = _write_filter_outputs(out, spec, filt, run_smoother(ds.values, spec, res.statics,
                                                                 filt), band, None, ds.names)
    return ["estimate.json", "estimate_table.txt", "estimate_table.csv"] + files


def cmd_irf(cfg, seed, out, base, workers):
    spec = _spec(cfg)
    ds = _dataset(cfg, base)
    restr = _restriction(cfg, spec)
    statics, est = _statics(cfg, spec, restr, base)
    theta0 = _theta0(cfg, spec, ds.values, est)
    icfg = cfg.get("irf", {})
    K = icfg.get("K", 60)
    draws = icfg.get("draws", 10000)
    reps = icfg.get("repetitions", 0)
    T = ds.T
    t = icfg.get("t", T)
    rng = np.random.default_rng(seed)
    if reps >= 2:
        cov = None
        if est is not None and est.get("cov") is not None:
            cov = np.asarray(est["cov"])[:len(restr), :len(restr)]
        res = irf_bands(ds.values, spec, statics, theta0, cov, restr, t=t, K=K, draws=draws,
                        repetitions=reps, rng=rng)
    else:
        filt = run_filter(ds.values, spec, statics, theta0)
        theta_t = filt.theta_next if t == T else filt.theta_path[t]
        res = irf(ds.values[:t], spec, statics, theta_t, K=K, draws=draws, rng=rng)
    write_csv(out / "irf.csv", ["i", "j", "k", "mean", "halfwidth"], res.to_long())
    meta = dict(res.meta)
    meta["variables"] = ds.names
    (out / "irf.json").write_text(json.dumps(
        {"meta": meta, "responses": res.responses.tolist(),
         "band_halfwidths": res.band_halfwidths.tolist()}))
    plotting.plot_irf(res, ds.names, out / "irf.png")
    return ["irf.csv", "irf.json", "irf.png"]


def cmd_mc_study(cfg, seed, out, base, workers):
    spec = _spec(cfg)
    dgp = cfg.get("dgp", {"kind": "score_driven"})
    mcfg = cfg.get("mc", {})
    restr = _restriction(cfg, spec)
    kw = {"kind": dgp["kind"], "T": dgp.get("T", 750), "spec": spec, "seed": seed}
    if "alpha" in dgp:
        kw["statics"] = StaticParams.integrated(restr.expand(dgp["alpha"], spec.d))
    if "sine_amplitudes" in dgp:
        kw["sine_amplitudes"] = tuple(dgp["sine_amplitudes"])
    if "shock_alpha" in dgp:
        kw["shock_alpha"] = tuple(dgp["shock_alpha"])
    dcfg = DgpConfig(**kw)
    if mcfg.get("analysis", "fixed") == "estimate":
        summary = mc_study(dcfg, mcfg.get("replications", 100),
                           estimator=StaticsFitter(restr), init_window=mcfg.get("init_window"),
                           workers=workers)
    else:
        statics, _ = _statics(cfg, spec, restr, base)
        summary = mc_study(dcfg, mcfg.get("replications", 100), statics=statics,
                           init_window=mcfg.get("init_window"), workers=workers)
    labels = spec.labels()
    header = ["t", "component"]
    for kind in ("filtered_abs", "filtered_rel", "smoothed_abs", "smoothed_rel"):
        header += [f"{kind}_q16", f"{kind}_q50", f"{kind}_q84"]
    rows = []
    T = summary.filtered_abs.shape[1]
    for t in range(T):
        for k, lab in enumerate(labels):
            row = [t, lab]
            for kind in ("filtered_abs", "filtered_rel", "smoothed_abs", "smoothed_rel"):
                row += list(getattr(summary, kind)[:, t, k])
            rows.append(row)
    write_csv(out / "mc_summary.csv", header, rows)
    burn = mcfg.get("burn_in", 100)
    cov = {lab: float(c) for lab, c in
           zip(labels, summary.coverage_of_zero("filtered_abs", burn))}
    alphas = np.array([restr.collapse(s.alpha) for s in summary.statics])
    info = {"replications": summary.replications, "failed": summary.failed,
            "zero_in_filtered_band": cov, "alpha_names": list(restr.names),
            "alpha_estimates": alphas.tolist()}
    (out / "mc.json").write_text(json.dumps(info, indent=2))
    comps = mcfg.get("components") or _default_components(spec)
    plotting.plot_error_bands(summary, comps, out / "mc_abs_errors.png", "abs")
    plotting.plot_error_bands(summary, comps, out / "mc_rel_errors.png", "rel")
    files = ["mc_summary.csv", "mc.json", "mc_abs_errors.png", "mc_rel_errors.png"]
    if mcfg.get("analysis", "fixed") == "estimate":
        truth = restr.collapse(dcfg.statics.alpha) if dcfg.statics is not None else None
        plotting.plot_estimates(alphas, list(restr.names), truth, out / "mc_estimates.png")
        files.append("mc_estimates.png")
    return files


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "filter": cmd_filter,
    "irf": cmd_irf,
    "mc-study": cmd_mc_study,
}


def _versions():
    import matplotlib
    import numba
    import scipy
    return {"sdvar": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "matplotlib": matplotlib.__version__}


def run_workflow(command, config_path, seed, out_dir, workers=None):
    """Run one workflow and write its outputs plus ``manifest.json`` into ``out_dir``."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = Path(config_path).resolve().parent
    workers = workers or os.cpu_count() or 1
    files = COMMANDS[command](cfg, seed, out, base, workers)
    manifest = {
        "command": command,
        "config": str(config_path),
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "versions": _versions(),
        "outputs": {f: sha256_file(out / f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="sdvar", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=_u64, default=0, help="master seed (u64)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="maximum worker processes (default: all cores)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        manifest = run_workflow(args.command, args.config, args.seed, args.out, args.workers)
    except (ConfigError, DataError, IdentificationError) as err:
        print(f"sdvar: error: {err}", file=sys.stderr)
        return 2
    for f in manifest["outputs"]:
        print(Path(args.out) / f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
