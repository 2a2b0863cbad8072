"""Command-line interface: ``kcontact <command> --config run.json``.

Every command reads a JSON object whose keys are the fields of the
command's config dataclass below; unknown keys are rejected.  Two optional
keys are accepted everywhere: ``"version": 1`` and ``"command": <name>``
(which must match the command being run).  Relative paths inside a config
file are resolved against the directory of that file.

Global flags (before or after the command name):

``--config PATH``   the JSON config (optional for validate-bound, coverage)
``--seed INT``      overrides the config's ``seed``
``--workers INT``   process pool size for independent chains / grid cells

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence
failure (R-hat at or above the threshold).

Example ``fit`` config::

    {"version": 1, "command": "fit", "catalog": "sim/catalog.tsv",
     "out": "fit", "n_chains": 10, "n_iter": 3000}

Intensity specs (``simulate``'s ``model``) are ``{"kind", "params",
"domain"}`` mappings with kind one of homogeneous, bivariate-gaussian,
gaussian-mixture or frb; e.g. ``{"kind": "frb", "params": {"n_frbs": 525,
"b": 1.5, "c": 6, "d": 2, "dm0": 560, "dm_star": 400}}``.  Domains are
``{"lower", "upper", "weights", "periodic", "names"}``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import atomic_write_text, read_catalog, read_previous_values, write_catalog
from .contact import ContactQuery, compare_with_previous, posterior_bound, simulate_pc
from .errors import ConfigError, DataError, KContactError
from .geometry import Domain, frb_domain, unit_square
from .intensity import frb_family, homogeneous_family, make_intensity
from .mcmc import (
    ChainConfig,
    CoverageConfig,
    coverage_study,
    diagnose_chains,
    frb_hyperprior,
    homogeneous_hyperprior,
    pool_draws,
    read_chain,
    run_chains,
    simulate_catalog,
)
from .simulate import SIGMA_GRID, BoundValidationConfig, bound_validation_experiment, derived_seed

CONFIG_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


# -- configs ------------------------------------------------------------------------------

@dataclass
class SimulateConfig:
    model: dict
    out: str = "simulated"
    pos_sigma: float = 0.2
    dm_sigma_range: tuple = (0.4, 3.0)
    seed: int = 0


@dataclass
class FitConfig:
    catalog: str
    out: str = "fit"
    family: str = "frb"
    domain: dict = None
    n_chains: int = 10
    n_iter: int = 3000
    burn_in: int = 1000
    adapt_at: int = 1000
    thin: int = 1
    rhat_threshold: float = 1.01
    min_ess: float = 400.0
    chain_format: str = "csv"
    prior_low: float = 1.0
    prior_high: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 2:
            raise ConfigError("fit needs n_chains >= 2 for R-hat")
        if self.chain_format not in ("csv", "npz"):
            raise ConfigError("chain_format must be 'csv' or 'npz'")
        _check_family(self.family)


@dataclass
class PcConfig:
    catalog: str
    chains: list
    out: str = "pc"
    family: str = "frb"
    domain: dict = None
    count_scaling: float = 1.0
    n_rep: int = 5000
    n_mc: int = 2048
    n_outer: int = 2000
    n_inner: int = 2048
    previous: str = None
    significance: float = None
    seed: int = 0

    def __post_init__(self):
        if not self.chains:
            raise ConfigError("pc needs at least one chain file")
        if not self.count_scaling > 0:
            raise ConfigError("count_scaling must be positive")
        _check_family(self.family)


@dataclass
class ValidateBoundConfig:
    out: str = "bound"
    intensities: tuple = ("gaussian", "mixture")
    sigmas: tuple = SIGMA_GRID
    radius: float = 1e-2
    k: int = 2
    n_test: int = 500
    n_rep: int = 5000
    test_points: str = "uniform"
    bound_method: str = "iid"
    n_grid: int = 48
    n_inner: int = 2048
    n_outer: int = 2000
    block_size: int = 250
    seed: int = 0

    def cells(self) -> list:
        out = []
        for name in self.intensities:
            for sigma in self.sigmas:
                out.append(BoundValidationConfig(
                    intensity=name, sigma=float(sigma), radius=self.radius, k=self.k,
                    n_test=self.n_test, n_rep=self.n_rep, seed=self.seed,
                    test_points=self.test_points, bound_method=self.bound_method,
                    n_grid=self.n_grid, n_inner=self.n_inner, n_outer=self.n_outer,
                    block_size=self.block_size,
                ))
        return out


@dataclass
class CoverageCliConfig(CoverageConfig):
    out: str = "coverage"


@dataclass
class DiagnoseConfig:
    chains: list
    out: str = None
    rhat_threshold: float = 1.01
    min_ess: float = 400.0
    split: bool = False


def _check_family(name):
    if name not in ("frb", "homogeneous"):
        raise ConfigError(f"family must be 'frb' or 'homogeneous', got {name!r}")


PATH_KEYS = {"out", "catalog", "chains", "previous"}


def build_config(cls, raw: dict, command: str, base_dir: Path = None, seed=None):
    """Validate a raw mapping against ``cls`` and construct it."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    version = raw.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    cmd = raw.pop("command", command)
    if cmd != command:
        raise ConfigError(f"config is for command {cmd!r}, not {command!r}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    if seed is not None:
        if "seed" not in names:
            raise ConfigError(f"{command} takes no seed")
        raw["seed"] = int(seed)
    if base_dir is not None:
        # default output locations also live next to the config file
        for f in dataclasses.fields(cls):
            if f.name in PATH_KEYS and f.name not in raw and isinstance(f.default, str):
                raw[f.name] = f.default
        for key in PATH_KEYS & set(raw):
            val = raw[key]
            if isinstance(val, list):
                raw[key] = [str(base_dir / v) for v in val]
            elif isinstance(val, str) and val:
                raw[key] = str(base_dir / val)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad config for {command}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, KContactError):
            raise
        raise ConfigError(f"bad config for {command}: {exc}") from exc


def config_hash(cfg) -> str:
    text = json.dumps(asdict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _family_and_domain(name: str, domain: dict):
    dom = Domain.from_dict(domain) if domain else (frb_domain() if name == "frb" else unit_square())
    return (frb_family(dom) if name == "frb" else homogeneous_family(dom)), dom


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _write_manifest(out: Path, command: str, cfg, extra: dict) -> None:
    manifest = {
        "schema": "kcontact-manifest v1",
        "package_version": __version__,
        "command": command,
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
    }
    manifest.update(extra)
    _write_json(out / "manifest.json", manifest)


def _write_csv(path, header_line: str, rows: list) -> None:
    buf = io.StringIO()
    buf.write(header_line + "\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


# -- commands -----------------------------------------------------------------------------

def cmd_simulate(cfg: SimulateConfig, workers: int = 1) -> int:
    model = make_intensity(cfg.model)
    catalog, ds = simulate_catalog(model, np.random.SeedSequence(cfg.seed), cfg.pos_sigma, cfg.dm_sigma_range)
    out = _out_dir(cfg.out)
    write_catalog(out / "catalog.tsv", catalog)
    names = list(model.domain.names)
    rows = [dict(id=i, **{n: repr(float(v)) for n, v in zip(names, x)})
            for i, x in zip(catalog.ids, ds.true_positions)]
    _write_csv(out / "truth.csv", "#kcontact-truth v1", rows)
    model_text = json.dumps(model.to_dict(), sort_keys=True, default=_json_default)
    _write_manifest(out, "simulate", cfg, {
        "seed": cfg.seed,
        "model": model.to_dict(),
        "model_hash": hashlib.sha256(model_text.encode()).hexdigest()[:16],
        "n_events": len(catalog),
        "noiseless": all(n.is_degenerate for n in catalog.noises),
        "catalog_hash": catalog.digest(),
    })
    print(f"wrote {len(catalog)} events to {out / 'catalog.tsv'}")
    return EXIT_OK


def cmd_fit(cfg: FitConfig, workers: int = 1) -> int:
    family, dom = _family_and_domain(cfg.family, cfg.domain)
    catalog = read_catalog(cfg.catalog, dom)
    if len(catalog) == 0:
        raise DataError("catalog has no events")
    prior = frb_hyperprior() if cfg.family == "frb" else homogeneous_hyperprior(cfg.prior_low, cfg.prior_high)
    chain_cfg = ChainConfig(n_iter=cfg.n_iter, burn_in=cfg.burn_in, adapt_at=cfg.adapt_at,
                            thin=cfg.thin, seed=cfg.seed)
    chains = run_chains(catalog, prior, chain_cfg, cfg.n_chains, family, workers)
    out = _out_dir(cfg.out)
    files = []
    for c, chain in enumerate(chains):
        path = out / f"chain_{c:02d}.{cfg.chain_format}"
        chain.to_csv(path) if cfg.chain_format == "csv" else chain.to_npz(path)
        files.append(path.name)
    report = diagnose_chains(chains, cfg.rhat_threshold, cfg.min_ess)
    converged = _converged(report.max_rhat, cfg.rhat_threshold)
    _write_json(out / "diagnostics.json", {"schema": "kcontact-diagnostics v1", "converged": converged,
                                           **report.to_dict()})
    atomic_write_text(out / "diagnostics.txt", report.table() + "\n")
    _write_manifest(out, "fit", cfg, {"seed": cfg.seed, "chains": files, "catalog_hash": catalog.digest(),
                                      "converged": converged})
    print(report.table())
    return EXIT_OK if converged else EXIT_CONVERGENCE


def _converged(max_rhat: float, threshold: float) -> bool:
    # R-hat below 1 is sampling noise, so a threshold at or below 1 can never certify convergence
    return threshold > 1.0 and max_rhat < threshold


def cmd_pc(cfg: PcConfig, workers: int = 1) -> int:
    family, dom = _family_and_domain(cfg.family, cfg.domain)
    catalog = read_catalog(cfg.catalog, dom)
    chains = [read_chain(p) for p in cfg.chains]
    for ch in chains:
        if tuple(ch.param_names) != tuple(family.param_names):
            raise DataError(f"chain parameters {ch.param_names} do not match family {family.name}")
    draws = pool_draws(chains)
    clusters = catalog.clusters()
    if not clusters:
        raise DataError("catalog has no labelled clusters")
    results = []
    for ci, (label, idx) in enumerate(sorted(clusters.items())):
        if len(idx) < 2:
            raise DataError(f"cluster {label!r} has a single member")
        points = catalog.observed[idx]
        noises = [catalog.noise(i) for i in idx]
        q = ContactQuery.from_cluster(points, dom)
        res = simulate_pc(draws, family, points, noises, cfg.count_scaling, cfg.n_rep, cfg.n_mc,
                          seed=derived_seed(cfg.seed, ci, 1), identifier=str(label))
        res.bound = posterior_bound(draws, family, noises, q, cfg.count_scaling, cfg.n_outer, cfg.n_inner,
                                    seed=derived_seed(cfg.seed, ci, 0))
        results.append(res)
    out = _out_dir(cfg.out)
    rows = []
    for res in results:
        row = res.to_row()
        for key in ("center", "weights"):
            row[key] = " ".join(repr(v) for v in row[key])
        if cfg.significance is not None:
            row["significant"] = int(res.median < cfg.significance)
        rows.append(row)
    _write_csv(out / "pc.csv", "#kcontact-pc v1", rows)
    report = {"schema": "kcontact-pc v1", "results": rows}
    if cfg.previous:
        table = compare_with_previous(results, read_previous_values(cfg.previous))
        _write_csv(out / "comparison.csv", "#kcontact-comparison v1", table.rows)
        report["comparison"] = table.summary()
    _write_json(out / "pc.json", report)
    _write_manifest(out, "pc", cfg, {"seed": cfg.seed, "catalog_hash": catalog.digest(),
                                     "n_posterior_draws": int(draws.shape[0])})
    for row in rows:
        print(f"{row['id']}: k={row['k']} P_C median {row['pc_median']} bound {row.get('bound')}")
    return EXIT_OK


def _bound_cell(cell: BoundValidationConfig):
    return bound_validation_experiment(cell)


def cmd_validate_bound(cfg: ValidateBoundConfig, workers: int = 1) -> int:
    cells = cfg.cells()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(_bound_cell, cells))
    else:
        tables = [_bound_cell(c) for c in cells]
    out = _out_dir(cfg.out)
    summary = []
    for cell, table in zip(cells, tables):
        name = f"bound_{cell.intensity}_sigma{cell.sigma:g}.csv"
        table.to_csv(out / name)
        s = table.summary()
        s["file"] = name
        summary.append(s)
        print(f"{cell.intensity:>9} sigma={cell.sigma:<6g} violations={s['dominance_violations']} "
              f"ratio range [{s['ratio_min']:.3g}, {s['ratio_max']:.3g}]")
    _write_json(out / "summary.json", {"schema": "kcontact-bound-summary v1", "cells": summary})
    _write_manifest(out, "validate-bound", cfg, {"seed": cfg.seed})
    return EXIT_OK


def cmd_coverage(cfg: CoverageCliConfig, workers: int = 1) -> int:
    run_cfg = CoverageConfig(**{k: v for k, v in asdict(cfg).items() if k != "out"})
    run_cfg.workers = max(run_cfg.workers, workers)
    table = coverage_study(run_cfg, progress=lambda r, c: print(f"replicate {r}: {c.astype(int).tolist()}"))
    out = _out_dir(cfg.out)
    table.to_csv(out / "coverage.csv")
    _write_json(out / "coverage.json", {"schema": "kcontact-coverage v1", "counts": table.counts,
                                        "n_replicates": table.n_replicates, "level": table.level})
    _write_manifest(out, "coverage", cfg, {"seed": cfg.seed})
    print(table.table())
    return EXIT_OK


def cmd_diagnose(cfg: DiagnoseConfig, workers: int = 1) -> int:
    chains = [read_chain(p) for p in cfg.chains]
    if len(chains) < 2:
        raise DataError("diagnose needs at least two chains")
    names = {tuple(c.param_names) for c in chains}
    if len(names) != 1:
        raise DataError("chains have different parameters")
    report = diagnose_chains(chains, cfg.rhat_threshold, cfg.min_ess, cfg.split)
    converged = _converged(report.max_rhat, cfg.rhat_threshold)
    if cfg.out:
        _write_json(cfg.out, {"schema": "kcontact-diagnostics v1", "converged": converged, **report.to_dict()})
    print(report.table())
    return EXIT_OK if converged else EXIT_CONVERGENCE


COMMANDS = {
    "simulate": (cmd_simulate, SimulateConfig, True),
    "fit": (cmd_fit, FitConfig, True),
    "pc": (cmd_pc, PcConfig, True),
    "validate-bound": (cmd_validate_bound, ValidateBoundConfig, False),
    "coverage": (cmd_coverage, CoverageCliConfig, False),
    "diagnose": (cmd_diagnose, DiagnoseConfig, True),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="process pool size")
    parser = argparse.ArgumentParser(prog="kcontact", parents=[common],
                                     description="k-contact coincidence probabilities for noisy point catalogs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def load_config(command: str, path, seed=None):
    _, cls, required = COMMANDS[command]
    if path is None:
        if required:
            raise ConfigError(f"{command} needs --config")
        return build_config(cls, {}, command, None, seed)
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return build_config(cls, raw, command, path.parent, seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    workers = getattr(args, "workers", 1)
    try:
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.command, getattr(args, "config", None), getattr(args, "seed", None))
        return COMMANDS[args.command][0](cfg, workers)
    except KContactError as exc:
        print(f"kcontact {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (EXIT_CONFIG, EXIT_DATA) else 1


if __name__ == "__main__":
    sys.exit(main())
