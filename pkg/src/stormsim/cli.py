"""Command-line front end: fit, simulate, risk and diagnose.

Every command is a pure function of (config file, input files, seed): outputs
are byte-identical across re-runs.  The config is a single JSON document and
command-line flags override config keys.  All CSV outputs start with a
comment line echoing the effective configuration, and simulated catalogs are
written in the input schema plus provenance columns so they can be re-read by
any command.

Exit codes: 0 ok, 2 validation/input problems, 3 fit or runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import engine, evt, gam, risk
from .catalog import build_grid, load_catalog, pacf
from .errors import FitError, StormError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "paths": {"catalog": None, "bundle": "bundle.json", "output_dir": ".", "simulated": None},
    "years_of_record": None,
    "fit": {},  # FitConfig field overrides
    "simulation": {"n_storms": 1000, "seed": None, "workers": 1, "max_age": 800,
                   "hazard_region": None},
    "risk": {
        "regions": [{"name": "uk", "lon_min": -11.0, "lon_max": 2.0,
                     "lat_min": 50.0, "lat_max": 60.0}],
        "omegas": [8.0, 10.0, 12.0, 13.36],
        "return_years": [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
        "bootstrap_b": 200,
        "grid_dlon": 4.0,
        "grid_dlat": 3.0,
        "cell_omega": 13.36,
        "seed": 0,
    },
    "diagnose": {"pacf_max_lag": 10, "mrl_points": 15, "qq_points": 99, "qq_boot": 200},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        user = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return _merge(DEFAULT_CONFIG, user)


def _config_echo(config: dict) -> str:
    return "# config: " + json.dumps(config, sort_keys=True, separators=(",", ":"))


def _write_csv(path: Path, header: list[str], rows, config: dict, extra_comments=()):
    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [_config_echo(config)]
    lines += list(extra_comments)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %s (%d rows)", path, len(rows))


def _require_catalog(config: dict, key: str = "catalog"):
    path = config["paths"].get(key)
    if not path:
        raise ValidationError(f"no {key} path given (config paths.{key} or flag)")
    if not Path(path).exists():
        raise ValidationError(f"{key} file not found: {path}")
    return load_catalog(path, years_of_record=config.get("years_of_record"))


def _fit_config(config: dict) -> engine.FitConfig:
    overrides = dict(config.get("fit", {}))
    if "window" in overrides:
        overrides["window"] = tuple(overrides["window"])
    if "gam_covariates" in overrides:
        overrides["gam_covariates"] = tuple(overrides["gam_covariates"])
    try:
        return engine.FitConfig(**overrides)
    except TypeError as exc:
        raise ValidationError(f"bad fit config: {exc}") from exc


def cmd_fit(config: dict) -> int:
    catalog = _require_catalog(config)
    fit_cfg = _fit_config(config)
    bundle = engine.fit_all(catalog, fit_cfg)
    out_dir = Path(config["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle_path = out_dir / config["paths"]["bundle"]
    engine.save_bundle(bundle, bundle_path)

    report_path = out_dir / "fit_report.txt"
    report_path.write_text(
        _config_echo(config) + "\n" + engine.fit_report(bundle), encoding="utf-8"
    )

    w_tracks, _ = engine.laplace_tracks(bundle, catalog)
    w = np.concatenate([t[np.isfinite(t)] for t in w_tracks])
    grid = np.quantile(w, np.linspace(0.5, 0.995, config["diagnose"]["mrl_points"]))
    rows = evt.mean_residual_life(w, grid)
    _write_csv(out_dir / "mrl.csv",
               ["threshold", "n_exceed", "mean_excess", "lo95", "hi95"], rows, config)
    log.info("fit complete: bundle at %s", bundle_path)
    print(f"wrote {bundle_path}, {report_path}, {out_dir / 'mrl.csv'}")
    return 0


def _write_simulated(catalog, stats, path: Path, config: dict):
    rows = []
    for storm in catalog.storms:
        for i, p in enumerate(storm.points):
            tag = storm.sampler_tags[i] if storm.sampler_tags else ""
            rows.append((storm.id, p.time_index, p.lon, p.lat, p.vorticity,
                         storm.seed_token, tag, storm.termination_cause))
    _write_csv(
        path,
        ["storm_id", "time_index", "lon", "lat", "vorticity", "seed",
         "sampler_tag", "termination_cause"],
        rows, config,
        extra_comments=[f"# years_of_record: {catalog.years_of_record!r}"],
    )


def cmd_simulate(config: dict) -> int:
    sim = config["simulation"]
    if sim.get("seed") is None:
        raise ValidationError("simulate requires an explicit seed (--seed or simulation.seed)")
    bundle_path = Path(config["paths"]["output_dir"]) / config["paths"]["bundle"]
    if not bundle_path.exists():
        bundle_path = Path(config["paths"]["bundle"])
    if not bundle_path.exists():
        raise ValidationError(f"bundle not found: {bundle_path}")
    bundle = engine.load_bundle(bundle_path)
    region = sim.get("hazard_region")
    catalog, stats = engine.simulate_catalog(
        bundle, n=int(sim["n_storms"]), seed=int(sim["seed"]),
        workers=int(sim.get("workers", 1)), max_age=int(sim.get("max_age", 800)),
        hazard_region=[tuple(p) for p in region] if region else None,
    )
    out_dir = Path(config["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / (config["paths"].get("simulated") or "simulated.csv")
    _write_simulated(catalog, stats, out_path, config)
    causes = " ".join(f"{k}={v}" for k, v in sorted(stats["causes"].items()))
    print(f"simulated {stats['n']} storms (seed {stats['seed']}): {causes}; "
          f"rejected attempts {stats['rejected_attempts']}; wrote {out_path}")
    return 0


def _risk_catalog(config: dict):
    paths = config["paths"]
    if paths.get("simulated") and Path(paths["simulated"]).exists():
        return load_catalog(paths["simulated"], years_of_record=None)
    return _require_catalog(config)


def cmd_risk(config: dict) -> int:
    catalog = _risk_catalog(config)
    rcfg = config["risk"]
    out_dir = Path(config["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(rcfg.get("seed", 0))
    n_boot = int(rcfg["bootstrap_b"])

    regions = [
        (r.get("name", f"region{i}"),
         risk.Region(r["lon_min"], r["lon_max"], r["lat_min"], r["lat_max"]))
        for i, r in enumerate(rcfg["regions"])
    ]

    exc_rows, lvl_rows, per_rows = [], [], []
    for name, region in regions:
        for omega in rcfg["omegas"]:
            try:
                res = risk.exceedance_prob(catalog, region, omega, n_boot=n_boot, seed=seed)
                lo, hi = res.ci if res.ci else (float("nan"), float("nan"))
                exc_rows.append((name, omega, res.estimate, lo, hi, res.n_num, res.n_den))
                per = risk.return_period(catalog, region, omega, n_boot=n_boot, seed=seed)
                plo, phi = per.ci if per.ci else (float("nan"), float("nan"))
                per_rows.append((name, omega, per.estimate, plo, phi, per.note))
            except risk.UndefinedRegionError:
                log.warning("region %s has no catalog points; writing NA row", name)
                exc_rows.append((name, omega, float("nan"), float("nan"), float("nan"), 0, 0))
                per_rows.append((name, omega, float("nan"), float("nan"), float("nan"), "undefined-region"))
        for r_years in rcfg["return_years"]:
            try:
                lvl = risk.return_level(catalog, region, r_years, n_boot=n_boot, seed=seed)
                lo, hi = lvl.ci if lvl.ci else (float("nan"), float("nan"))
                lvl_rows.append((name, r_years, lvl.estimate, lo, hi, lvl.note))
            except risk.UndefinedRegionError:
                lvl_rows.append((name, r_years, float("nan"), float("nan"), float("nan"), "undefined-region"))

    _write_csv(out_dir / "exceedance.csv",
               ["region", "omega", "prob", "lo95", "hi95", "n_exceed", "n_points"],
               exc_rows, config)
    _write_csv(out_dir / "return_periods.csv",
               ["region", "omega", "years", "lo95", "hi95", "note"], per_rows, config)
    _write_csv(out_dir / "return_levels.csv",
               ["region", "r_years", "omega", "lo95", "hi95", "note"], lvl_rows, config)

    # per-cell return-period map on the risk grid
    cell_grid = build_grid(catalog, dlon=float(rcfg["grid_dlon"]), dlat=float(rcfg["grid_dlat"]))
    omega = float(rcfg["cell_omega"])
    cell_rows = []
    for cell in sorted(cell_grid.active_cells):
        lon_c, lat_c = cell_grid.cell_center(cell)
        region = risk.Region(
            lon_c - cell_grid.dlon / 2, lon_c + cell_grid.dlon / 2,
            lat_c - cell_grid.dlat / 2, lat_c + cell_grid.dlat / 2,
        )
        try:
            per = risk.return_period(catalog, region, omega, n_boot=0)
            cell_rows.append((cell[0], cell[1], lon_c, lat_c, omega, per.estimate, per.note))
        except risk.UndefinedRegionError:
            cell_rows.append((cell[0], cell[1], lon_c, lat_c, omega, float("nan"), "undefined-region"))
    _write_csv(out_dir / "cell_return_periods.csv",
               ["cell_i", "cell_j", "lon", "lat", "omega", "years", "note"],
               cell_rows, config)
    print(f"wrote risk tables to {out_dir}")
    return 0


def cmd_diagnose(config: dict) -> int:
    catalog = _require_catalog(config)
    dcfg = config["diagnose"]
    out_dir = Path(config["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    # per-variable PACF averaged over storms long enough for the lag window
    max_lag = int(dcfg["pacf_max_lag"])
    pacf_rows = []
    for name, getter in (
        ("speed", lambda s: s.speeds),
        ("direction", lambda s: s.bearings),
        ("vorticity", lambda s: s.vorticities),
    ):
        vals = []
        for storm in catalog.storms:
            series = getter(storm)
            if series.size > max_lag + 1 and np.ptp(series) > 0:
                vals.append(pacf(series, max_lag))
        if vals:
            mean = np.mean(vals, axis=0)
            for lag in range(max_lag + 1):
                pacf_rows.append((name, lag, float(mean[lag]), len(vals)))
    _write_csv(out_dir / "pacf.csv", ["variable", "lag", "pacf", "n_storms"], pacf_rows, config)

    fit_grid = build_grid(
        catalog,
        dlon=float(config["fit"].get("grid_dlon", 8.0)),
        dlat=float(config["fit"].get("grid_dlat", 4.0)),
    )
    for subset in ("all", "genesis", "lysis"):
        rows = [
            (c[0], c[1], lon, lat, dens)
            for (c, lon, lat, dens) in risk.spatial_density(catalog, fit_grid, subset=subset)
        ]
        _write_csv(out_dir / f"density_{subset}.csv",
                   ["cell_i", "cell_j", "lon", "lat", "density"], rows, config)

    # raw-vorticity mean residual life table
    w = np.concatenate([s.vorticities for s in catalog.storms])
    grid = np.quantile(w, np.linspace(0.5, 0.995, int(dcfg["mrl_points"])))
    _write_csv(out_dir / "mrl_vorticity.csv",
               ["threshold", "n_exceed", "mean_excess", "lo95", "hi95"],
               evt.mean_residual_life(w, grid), config)

    sim_path = config["paths"].get("simulated")
    if sim_path and Path(sim_path).exists():
        sim = load_catalog(sim_path, years_of_record=None)
        probs = np.linspace(0.01, 0.99, int(dcfg["qq_points"]))
        pairs = {
            "speed": (np.concatenate([s.speeds for s in catalog.storms]),
                      np.concatenate([s.speeds for s in sim.storms])),
            "direction": (np.concatenate([s.bearings for s in catalog.storms]),
                          np.concatenate([s.bearings for s in sim.storms])),
            "vorticity": (np.concatenate([s.vorticities for s in catalog.storms]),
                          np.concatenate([s.vorticities for s in sim.storms])),
            "lifetime": (np.array([float(len(s)) for s in catalog.storms]),
                         np.array([float(len(s)) for s in sim.storms])),
        }
        for name, (obs, simv) in pairs.items():
            rows = risk.qq_envelope(obs, simv, probs, n_boot=int(dcfg["qq_boot"]), seed=0)
            _write_csv(out_dir / f"qq_{name}.csv",
                       ["p", "observed", "simulated", "lo95", "hi95", "inside"], rows, config)
    else:
        log.warning("no simulated catalog available; skipping QQ tables")
    print(f"wrote diagnostics to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormsim",
        description="Fit, simulate and analyse stochastic extratropical storm tracks.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit", "fit a model bundle from a track catalog"),
        ("simulate", "simulate synthetic storms from a fitted bundle"),
        ("risk", "exceedance/return-level tables from a catalog"),
        ("diagnose", "PACF, density, MRL and QQ diagnostic tables"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--catalog", default=None, help="track catalog CSV")
        p.add_argument("--bundle", default=None, help="model bundle JSON path")
        p.add_argument("--output-dir", default=None, help="directory for outputs")
        p.add_argument("--simulated", default=None, help="simulated catalog CSV path")
        p.add_argument("--years", type=float, default=None, help="catalog years of record")
        if name == "simulate":
            p.add_argument("--seed", type=int, default=None, help="simulation seed (required)")
            p.add_argument("--n-storms", type=int, default=None)
            p.add_argument("--workers", type=int, default=None)
    return parser


def _apply_flags(config: dict, args: argparse.Namespace) -> dict:
    paths = {}
    for flag, key in (("catalog", "catalog"), ("bundle", "bundle"),
                      ("output_dir", "output_dir"), ("simulated", "simulated")):
        val = getattr(args, flag, None)
        if val is not None:
            paths[key] = val
    override: dict = {"paths": paths} if paths else {}
    if getattr(args, "years", None) is not None:
        override["years_of_record"] = args.years
    sim = {}
    for flag, key in (("seed", "seed"), ("n_storms", "n_storms"), ("workers", "workers")):
        val = getattr(args, flag, None)
        if val is not None:
            sim[key] = val
    if sim:
        override["simulation"] = sim
    return _merge(config, override)


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "risk": cmd_risk, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _apply_flags(load_config(args.config), args)
        return COMMANDS[args.command](config)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 2
    except StormError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
