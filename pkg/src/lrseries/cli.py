"""Command-line surface: dataset simulation, estimation runs, band emission,
and the Monte Carlo tables, driven by a YAML config file with per-section
schema validation.  CLI flags override file values.

Exit codes: 0 success, 2 input/schema problem, 3 identification/numerical
failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

import numpy as np
import pandas as pd
import yaml

from .basis import BasisSpec, bspline_spec_from_data, design_matrix
from .crossfit import Dataset, FirstStageConfig, crossfit_signals, make_folds
from .errors import ConfigError, DomainError, EstimationError
from .lre import LREFit, diagnostics, uniform_band
from .montecarlo import DesignConfig, gen_design, run_mc
from .numerics import RngStream
from .signals import SignalKind

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_INTERNAL = 4

_PRESETS = {
    "table1": {"n": 500, "dim_z": 500, "rho": 0.5, "c": 0.1, "reps": 300, "alpha": 0.05},
    "table2": {"n": 500, "dim_z": 500, "rho": 0.5, "c": 20.0, "reps": 300, "alpha": 0.1},
}

# section -> key -> caster; unknown sections/keys are rejected outright.
_SCHEMA = {
    "seed": int,
    "data": {"input": str},
    "basis": {
        "kind": str, "degree": int, "ndim": int, "include_intercept": bool,
        "knots": list, "boundary": list, "n_knots": int,
    },
    "first_stage": {
        "lambda": (float, "auto"), "logistic_penalty_scale": float,
        "trim_floor": float, "adaptive_kde": bool,
        "lasso_intercept": bool, "logistic_intercept": bool, "standardize": bool,
        "capd_quadratic": bool,
    },
    "estimate": {"kind": str, "folds": int, "out": str},
    "band": {
        "grid": (dict, list), "bootstrap": int, "alpha": float,
        "out_csv": str, "out_json": str,
    },
    "montecarlo": {
        "preset": str, "n": int, "dim_z": int, "rho": float, "c": float,
        "reps": int, "alpha": float, "folds": int, "out_csv": str,
        "out_json": str, "workers": int,
    },
    "simulate": {
        "n": int, "dim_z": int, "rho": float, "c": float, "out": str,
    },
}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as handle:
        raw = yaml.safe_load(handle) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")
    _validate_config(raw)
    return raw


def _validate_config(raw: dict) -> None:
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, value in raw.items():
        schema = _SCHEMA[section]
        if not isinstance(schema, dict):
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        bad = set(value) - set(schema)
        if bad:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(bad)}")


def _section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name) or {})


def _rng_from(cfg: dict, args) -> RngStream:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    return RngStream(int(seed))


def _first_stage_config(cfg: dict) -> FirstStageConfig:
    fs = _section(cfg, "first_stage")
    lam = fs.get("lambda", "auto")
    if isinstance(lam, str):
        if lam != "auto":
            raise ConfigError(f"first_stage.lambda must be a number or 'auto', got {lam!r}")
        lam = None
    return FirstStageConfig(
        lam=lam,
        logistic_penalty_scale=float(fs.get("logistic_penalty_scale", 0.5)),
        trim_floor=float(fs.get("trim_floor", 0.02)),
        adaptive_kde=bool(fs.get("adaptive_kde", True)),
        lasso_intercept=bool(fs.get("lasso_intercept", False)),
        logistic_intercept=bool(fs.get("logistic_intercept", False)),
        standardize=bool(fs.get("standardize", True)),
        capd_quadratic=bool(fs.get("capd_quadratic", True)),
    )


def _numbered_columns(df: pd.DataFrame, prefix: str) -> list[str]:
    cols = []
    for name in df.columns:
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            cols.append((int(name[len(prefix):]), name))
    return [name for _, name in sorted(cols)]


def _dataset_from_csv(path: str, kind: SignalKind) -> Dataset:
    df = pd.read_csv(path)
    required = ["y_o", "d"]
    if kind.needs_treatment:
        required.append("t")
    if kind.needs_derivative_variable:
        required.append("w")
    x_cols = _numbered_columns(df, "x")
    z_cols = _numbered_columns(df, "z")
    missing = [c for c in required if c not in df.columns]
    problems = []
    if missing:
        problems.append(f"missing required column(s): {missing}")
    if not x_cols:
        problems.append("no covariate columns x1..xr found")
    if not z_cols:
        problems.append("no control columns z1..zp found")
    if problems:
        raise ConfigError(
            "; ".join(problems) + f"; columns present: {list(df.columns)}"
        )
    return Dataset(
        y_obs=df["y_o"].to_numpy(dtype=float),
        d=df["d"].to_numpy(dtype=float),
        x=df[x_cols].to_numpy(dtype=float),
        z=df[z_cols].to_numpy(dtype=float),
        t=df["t"].to_numpy(dtype=float) if "t" in df.columns else None,
        w=df["w"].to_numpy(dtype=float) if "w" in df.columns else None,
    )


def _basis_from_config(cfg: dict, data: Dataset) -> BasisSpec:
    b = _section(cfg, "basis")
    kind = b.get("kind", "polynomial")
    if kind == "bspline":
        if "knots" in b and "boundary" in b:
            return BasisSpec(
                kind="bspline",
                degree=int(b.get("degree", 2)),
                ndim=1,
                include_intercept=False,
                knots=tuple(float(k) for k in b["knots"]),
                boundary=tuple(float(v) for v in b["boundary"]),
            )
        return bspline_spec_from_data(
            data.x[:, 0], order=int(b.get("degree", 2)), n_knots=int(b.get("n_knots", 1)),
        )
    ndim = int(b.get("ndim", data.x.shape[1]))
    if ndim != data.x.shape[1]:
        raise ConfigError(
            f"basis.ndim = {ndim} but the data has {data.x.shape[1]} covariate columns"
        )
    return BasisSpec(
        kind="polynomial",
        degree=int(b.get("degree", 1)),
        ndim=ndim,
        include_intercept=bool(b.get("include_intercept", True)),
    )


def _run_estimation(cfg: dict, args) -> tuple[LREFit, dict, Dataset]:
    est = _section(cfg, "estimate")
    data_section = _section(cfg, "data")
    path = data_section.get("input")
    if path is None:
        raise ConfigError("estimate/band runs need data.input in the config")
    kind = SignalKind(est.get("kind", "robust_missing"))
    data = _dataset_from_csv(path, kind)
    spec = _basis_from_config(cfg, data)
    k_folds = int(args.folds if args.folds is not None else est.get("folds", 5))
    rng = _rng_from(cfg, args)
    fs_config = _first_stage_config(cfg)
    folds = make_folds(data.n_obs, k_folds, rng.child(0))
    cf = crossfit_signals(data, folds, kind, fs_config)
    dm = design_matrix(data.x, spec)
    fit = LREFit.from_design(dm, cf.yhat)
    report = diagnostics(fit, grid=data.x, trim_binding_fraction=cf.trim_binding_fraction)
    meta = {
        "kind": kind.value,
        "seed": rng.seed,
        "k_folds": k_folds,
        "n_obs": data.n_obs,
        "basis": spec.to_dict(),
        "coef": fit.coef.tolist(),
        "gram": fit.gram.tolist(),
        "covariance": fit.cov.tolist(),
        "diagnostics": report.to_dict(),
        "first_stage": {
            "trim_floor": fs_config.trim_floor,
            "penalties": cf.penalties,
            "trim_binding_fraction": cf.trim_binding_fraction,
        },
    }
    meta["_signal"] = cf.yhat
    meta["_design"] = dm
    return fit, meta, data


def _write_json(obj: dict, path: str) -> None:
    with open(path, "w") as handle:
        json.dump(obj, handle, sort_keys=True, indent=2)
        handle.write("\n")


def cmd_estimate(cfg: dict, args) -> int:
    fit, meta, _ = _run_estimation(cfg, args)
    meta.pop("_signal")
    meta.pop("_design")
    meta["command"] = "estimate"
    out = args.out or _section(cfg, "estimate").get("out", "lre_fit.json")
    _write_json(meta, out)
    print(f"estimate: wrote {out}")
    return EXIT_OK


def _band_grid(cfg: dict, data: Dataset) -> np.ndarray:
    band = _section(cfg, "band")
    grid_spec = band.get("grid")
    if isinstance(grid_spec, list):
        return np.asarray([float(g) for g in grid_spec])
    if isinstance(grid_spec, dict):
        unknown = set(grid_spec) - {"min", "max", "points"}
        if unknown:
            raise ConfigError(f"unknown band.grid keys: {sorted(unknown)}")
        lo = float(grid_spec.get("min", data.x[:, 0].min()))
        hi = float(grid_spec.get("max", data.x[:, 0].max()))
        pts = int(grid_spec.get("points", 25))
        return np.linspace(lo, hi, pts)
    return np.linspace(data.x[:, 0].min(), data.x[:, 0].max(), 25)


def cmd_band(cfg: dict, args) -> int:
    fit, meta, data = _run_estimation(cfg, args)
    if fit.spec.ndim != 1:
        raise ConfigError("bands are emitted over a one-dimensional covariate grid")
    band_cfg = _section(cfg, "band")
    n_draws = int(args.bootstrap if args.bootstrap is not None else band_cfg.get("bootstrap", 200))
    alpha = float(args.alpha if args.alpha is not None else band_cfg.get("alpha", 0.05))
    grid = _band_grid(cfg, data)
    rng = _rng_from(cfg, args)
    result = uniform_band(
        fit, meta.pop("_design"), meta.pop("_signal"), grid,
        n_draws=n_draws, alpha=alpha, rng=rng.child(1),
    )
    out_csv = args.out or band_cfg.get("out_csv", "band.csv")
    out_json = band_cfg.get("out_json", str(out_csv).rsplit(".", 1)[0] + ".json")
    result.to_csv(out_csv)
    payload = result.to_dict()
    payload["command"] = "band"
    payload["pointwise_z"] = (
        float(np.sqrt(fit.n_obs) * (result.point_hi[0] - result.estimate[0]) / result.stderr[0])
        if result.stderr[0] > 0 else None
    )
    payload["estimate_meta"] = {k: v for k, v in meta.items() if not k.startswith("_")}
    _write_json(payload, out_json)
    print(f"band: wrote {out_csv} and {out_json} (t_star={result.crit_value:.6g}, B={n_draws})")
    return EXIT_OK


def cmd_montecarlo(cfg: dict, args) -> int:
    mc = _section(cfg, "montecarlo")
    preset = args.preset or mc.get("preset")
    settings: dict = {}
    if preset:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(_PRESETS)}")
        settings.update(_PRESETS[preset])
    for key in ("n", "dim_z", "rho", "c", "reps", "alpha", "folds"):
        if key in mc:
            settings[key] = mc[key]
    if args.reps is not None:
        settings["reps"] = args.reps
    if args.dim_z is not None:
        settings["dim_z"] = args.dim_z
    if args.alpha is not None:
        settings["alpha"] = args.alpha
    if args.folds is not None:
        settings["folds"] = args.folds
    config = DesignConfig(
        n=int(settings.get("n", 500)),
        dim_z=int(settings.get("dim_z", 500)),
        rho=float(settings.get("rho", 0.5)),
        c=float(settings.get("c", 0.1)),
    )
    reps = int(settings.get("reps", 300))
    alpha = float(settings.get("alpha", 0.05))
    k_folds = int(settings.get("folds", 5))
    rng = _rng_from(cfg, args)
    summary = run_mc(
        config, reps=reps, alpha=alpha, k_folds=k_folds, rng=rng,
        first_stage=_first_stage_config(cfg),
        n_jobs=mc.get("workers"),
    )
    out_csv = args.out or mc.get("out_csv", "mc_summary.csv")
    out_json = mc.get("out_json", str(out_csv).rsplit(".", 1)[0] + ".json")
    summary.to_csv(out_csv)
    payload = summary.to_dict()
    payload["command"] = "montecarlo"
    payload["seed"] = rng.seed
    _write_json(payload, out_json)
    print(f"montecarlo: {reps} reps, {summary.n_failures} resampled failures; "
          f"wrote {out_csv} and {out_json}")
    return EXIT_OK


def cmd_simulate(cfg: dict, args) -> int:
    sim = _section(cfg, "simulate")
    config = DesignConfig(
        n=int(sim.get("n", 500)),
        dim_z=int(args.dim_z if args.dim_z is not None else sim.get("dim_z", 500)),
        rho=float(sim.get("rho", 0.5)),
        c=float(sim.get("c", 0.1)),
    )
    rng = _rng_from(cfg, args)
    data = gen_design(config, rng)
    out = args.out or sim.get("out", "simulated.csv")
    frame = {"y_star": data.y_star, "y_o": data.y_obs, "d": data.d.astype(int)}
    for j in range(data.x.shape[1]):
        frame[f"x{j + 1}"] = data.x[:, j]
    for j in range(data.z.shape[1]):
        frame[f"z{j + 1}"] = data.z[:, j]
    pd.DataFrame(frame).to_csv(out, index=False)
    print(f"simulate: wrote {out} ({config.n} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrseries",
        description="Locally robust series estimation, confidence bands, and "
                    "the Monte Carlo comparison harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("estimate", cmd_estimate),
        ("band", cmd_band),
        ("montecarlo", cmd_montecarlo),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="primary output path")
        p.add_argument("--preset", default=None, choices=sorted(_PRESETS))
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--folds", type=int, default=None)
        p.add_argument("--bootstrap", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--dimZ", dest="dim_z", type=int, default=None)
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.handler(cfg, args)
    except (ConfigError, FileNotFoundError, DomainError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception:  # pragma: no cover - last-resort guard
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
