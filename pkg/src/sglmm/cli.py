"""Command-line pipeline with file-based, reproducible interchange.

Subcommands: prep, fit, diagnose, compare, scenario, simulate.  A JSON config
file provides defaults, command-line flags override it, and the resolved
configuration (plus its digest) is written next to every output so any run
can be reproduced from its artifacts alone.

Exit codes: 0 success, 2 data error, 3 numerical error, 4 convergence flags
under --strict.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compare import compare_model, summarize_coefficients
from .data_prep import (
    aggregate_report,
    cents_to_dollars,
    per_capita_standardize,
    read_adjacency,
    read_covariates,
    read_donations,
    read_registry,
)
from .dataset import ArealDataset
from .diagnostics import diagnose
from .errors import (
    ConvergenceError,
    DataError,
    NumericalError,
    SglmmError,
)
from .likelihoods import Family
from .model import ModelSpec, param_names, spec_digest
from .sampler import PosteriorDraws, SamplerConfig, load_chain_files, run, save_chain_files
from .scenario import ScenarioSpec, Selection, power_diagnostic, simulate_scenario
from .simulate import SynthSpec, generate
from .spatial import moran_basis

__all__ = ["RunConfig", "main"]

_FAMILIES = ("gamma", "lognormal", "normal", "weibull")


@dataclass(frozen=True)
class RunConfig:
    """Resolved view of one invocation: paths, model, sampler, scenario."""

    seed: int = 0
    out: str = "out"
    strict: bool = False
    # input paths
    donations: str | None = None
    districts: str | None = None
    merges: str | None = None
    drops: str | None = None
    covariates: str | None = None
    adjacency: str | None = None
    dataset: str | None = None
    draws: str | None = None
    selections: str | None = None
    floor: float | None = None
    # model
    family: str = "gamma"
    spatial: bool = True
    r: int = 7
    # sampler
    iters: int = 1_500_000
    thin: int = 10
    keep: int = 30_000
    chains: int = 3
    adapt_interval: int = 50
    target_accept: float = 0.234
    adapt_decay: float = 1.0
    # scenario
    shift_sd: float = 3.0
    diagonal_cov: bool = False
    power: bool = False
    n_replicates: int = 26
    cutoff: float = 0.9
    power_iters: int = 30_000
    power_keep: int = 1_500
    power_chains: int = 1
    # simulate
    n_districts: int = 26
    n_sectors: int = 7
    n_covariates: int = 8
    graph: str = "random_planar"
    true_theta: float = 1.0
    true_sigma2: float = 1.0
    true_beta: list | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        allowed = {f.name for f in dataclasses.fields(cls)}
        cleaned = {k: v for k, v in payload.items() if k != "config_digest"}
        unknown = sorted(set(cleaned) - allowed)
        if unknown:
            raise DataError(f"unknown config keys: {unknown}")
        return cls(**cleaned)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    payload: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise DataError(f"config file {path} must hold a JSON object")
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {
        k: v for k, v in vars(args).items() if k in field_names and v is not None
    }
    payload.update(overrides)
    return RunConfig.from_dict(payload)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_resolved_config(cfg: RunConfig, out: Path) -> str:
    digest = cfg.digest()
    payload = cfg.to_dict()
    payload["config_digest"] = digest
    (out / "resolved_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    return digest


def _write_json(path: Path, payload: dict, digest: str) -> None:
    payload = dict(payload)
    payload["config_digest"] = digest
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_dataset(cfg: RunConfig, out: Path) -> ArealDataset:
    path = Path(cfg.dataset) if cfg.dataset else out / "dataset.json"
    if not path.exists():
        raise DataError(
            f"dataset not found at {path}; run prep or simulate first, "
            f"or pass --dataset"
        )
    return ArealDataset.load_json(path)


def _model_spec(cfg: RunConfig, data: ArealDataset) -> ModelSpec:
    return ModelSpec(
        family=Family(cfg.family),
        spatial=cfg.spatial,
        r=cfg.r if cfg.spatial else 0,
        k=data.k,
        J=data.J,
    )


def _basis_for(spec: ModelSpec, data: ArealDataset):
    if not spec.spatial:
        return None
    return moran_basis(data.A, data.X, spec.r)


def _sampler_config(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(
        n_iter=cfg.iters,
        thin=cfg.thin,
        keep=cfg.keep,
        n_chains=cfg.chains,
        seed=cfg.seed,
        adapt_interval=cfg.adapt_interval,
        target_accept=cfg.target_accept,
        adapt_decay=cfg.adapt_decay,
    )


def _chain_paths(directory: Path) -> list[Path]:
    paths = sorted(directory.glob("chain_*.npz"))
    if not paths:
        raise DataError(f"no chain files in {directory}")
    return paths


def _check_draws_match(draws: PosteriorDraws, data: ArealDataset) -> None:
    if draws.spec_hash != spec_digest(draws.model, data):
        raise DataError(
            "chain files were fit to a different dataset or model "
            "(provenance digest mismatch)"
        )


def _write_csv(path: Path, digest: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _print_flags(report) -> None:
    for flag in report.flags:
        print(f"  flag: {flag}", file=sys.stderr)


def cmd_prep(cfg: RunConfig) -> int:
    for name in ("donations", "districts", "covariates"):
        if getattr(cfg, name) is None:
            raise DataError(f"prep requires --{name}")
    out = _out_dir(cfg)
    digest = _emit_resolved_config(cfg, out)

    registry = read_registry(cfg.districts, cfg.merges, cfg.drops)
    records = read_donations(cfg.donations)
    report = aggregate_report(records, registry)
    raw_cov, cov_names = read_covariates(cfg.covariates, registry)
    A = read_adjacency(cfg.adjacency, registry) if cfg.adjacency else None
    per_capita = cents_to_dollars(report.totals_cents)
    dataset = per_capita_standardize(
        per_capita,
        registry,
        raw_cov,
        covariate_names=cov_names,
        adjacency=A,
        floor=cfg.floor,
    )

    dataset.save_json(out / "dataset.json", extra={"config_digest": digest})
    prep_report = {
        "records_in": report.n_records,
        "projects": report.n_projects,
        "currency_in_cents": report.currency_in_cents,
        "allocated_cents": report.allocated_cents,
        "discarded_cents": report.discarded_cents,
        "discarded": [list(d) for d in report.discarded],
        "conserved": report.conserved,
        "merged_districts": dict(registry.merge_map),
        "dropped_districts": list(registry.drop_list),
        "n_districts": dataset.n,
        "n_sectors": dataset.J,
        "n_cells": dataset.n * dataset.J,
    }
    _write_json(out / "prep_report.json", prep_report, digest)
    if not report.conserved:
        raise DataError("currency audit failed: in != allocated + discarded")
    print(
        f"prep: {report.n_records} records -> {dataset.n} districts x "
        f"{dataset.J} sectors ({dataset.n * dataset.J} cells); "
        f"conserved={report.conserved}; discarded_cents={report.discarded_cents}"
    )
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    digest = _emit_resolved_config(cfg, out)
    k, J = cfg.n_covariates, cfg.n_sectors
    if cfg.true_beta is not None:
        beta = np.asarray(cfg.true_beta, dtype=float)
    else:
        rng = np.random.default_rng([cfg.seed, 1])
        beta = rng.normal(0.0, 0.5, size=(k, J))
        beta[0, :] = 2.0
    spec = SynthSpec(
        n=cfg.n_districts,
        J=J,
        k=k,
        graph=cfg.graph,
        family=Family(cfg.family),
        true_beta=beta,
        true_sigma2=cfg.true_sigma2,
        true_theta=cfg.true_theta,
        r=cfg.r if cfg.spatial else 0,
        seed=cfg.seed,
    )
    result = generate(spec)
    result.dataset.save_json(out / "dataset.json", extra={"config_digest": digest})
    truth = {
        "values": result.truth.values.tolist(),
        "param_names": list(
            param_names(
                result.model,
                result.dataset.sector_names,
                result.dataset.covariate_names,
            )
        ),
        "model": result.model.to_dict(),
        "true_beta": beta.tolist(),
        "true_theta": cfg.true_theta,
        "true_sigma2": cfg.true_sigma2,
    }
    _write_json(out / "truth.json", truth, digest)
    print(
        f"simulate: {cfg.n_districts} districts x {J} sectors on a "
        f"{cfg.graph} graph; family={cfg.family}; wrote dataset.json, truth.json"
    )
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    digest = _emit_resolved_config(cfg, out)
    data = _load_dataset(cfg, out)
    spec = _model_spec(cfg, data)
    basis = _basis_for(spec, data)
    scfg = _sampler_config(cfg)
    draws = run(spec, data, basis, scfg)
    save_chain_files(
        draws, out, extra_meta={"config_digest": digest, "sampler": scfg.to_dict()}
    )

    report = diagnose(draws)
    _write_json(out / "diagnostics.json", report.to_dict(), digest)
    summary = summarize_coefficients(draws)
    rows = [
        [
            row.sector,
            row.covariate,
            repr(row.mean),
            repr(row.sd),
            repr(row.mcse),
            repr(row.prob_positive),
            int(row.flagged),
        ]
        for row in summary.rows
    ]
    _write_csv(
        out / "coefficients.csv",
        digest,
        ["sector", "covariate", "mean", "sd", "mcse", "prob_positive", "flagged"],
        rows,
    )
    print(
        f"fit: {spec.n_params} parameters, {cfg.chains} chains x {cfg.iters} "
        f"iterations (kept {draws.keep}/chain); coefficient scale: "
        f"{summary.coefficient_scale}; {len(report.flags)} diagnostic flags"
    )
    _print_flags(report)
    if cfg.strict and not report.converged:
        raise ConvergenceError(
            f"{len(report.flags)} convergence flags with --strict"
        )
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    if cfg.draws is None:
        raise DataError("diagnose requires --draws <dir>")
    out = _out_dir(cfg)
    digest = _emit_resolved_config(cfg, out)
    draws = load_chain_files(_chain_paths(Path(cfg.draws)))
    report = diagnose(draws)
    _write_json(out / "diagnostics.json", report.to_dict(), digest)
    print(
        f"diagnose: {draws.n_chains} chains x {draws.keep} kept draws, "
        f"{draws.dim} parameters; {len(report.flags)} flags; "
        f"multivariate rhat={report.rhat_multivariate:.4f}"
    )
    _print_flags(report)
    if cfg.strict and not report.converged:
        raise ConvergenceError(
            f"{len(report.flags)} convergence flags with --strict"
        )
    return 0


def _model_label(family: str, spatial: bool) -> str:
    return f"{family}_{'spatial' if spatial else 'nonspatial'}"


def cmd_compare(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    digest = _emit_resolved_config(cfg, out)
    data = _load_dataset(cfg, out)
    variants = [(f, sp) for f in _FAMILIES for sp in (True, False)]

    fitted: dict[str, tuple[ModelSpec, PosteriorDraws]] = {}
    if cfg.draws:
        root = Path(cfg.draws)
        missing = [
            _model_label(f, sp)
            for f, sp in variants
            if not list((root / _model_label(f, sp)).glob("chain_*.npz"))
        ]
        if missing:
            raise DataError(f"missing fits under {root}: {missing}")
        for f, sp in variants:
            label = _model_label(f, sp)
            draws = load_chain_files(_chain_paths(root / label))
            _check_draws_match(draws, data)
            fitted[label] = (draws.model, draws)
    else:
        scfg = _sampler_config(cfg)

        def _fit(variant: tuple[str, bool]):
            f, sp = variant
            spec = ModelSpec(
                family=Family(f), spatial=sp, r=cfg.r if sp else 0, k=data.k, J=data.J
            )
            basis = _basis_for(spec, data)
            return _model_label(f, sp), spec, run(spec, data, basis, scfg)

        with ThreadPoolExecutor(max_workers=4) as pool:
            for label, spec, draws in pool.map(_fit, variants):
                fitted[label] = (spec, draws)

    rows = []
    for f, sp in variants:
        label = _model_label(f, sp)
        spec, draws = fitted[label]
        basis = _basis_for(spec, data)
        rep = compare_model(spec, data, basis, draws, seed=cfg.seed)
        rows.append((label, f, sp, rep))

    best = {
        metric: min(rows, key=lambda row: getattr(row[3], metric))[0]
        for metric in ("mae", "mse", "dic")
    }
    csv_rows = [
        [
            label,
            family,
            int(spatial),
            repr(rep.mae),
            repr(rep.mse),
            repr(rep.dic),
            repr(rep.dbar),
            repr(rep.pd),
            int(best["mae"] == label),
            int(best["mse"] == label),
            int(best["dic"] == label),
        ]
        for label, family, spatial, rep in rows
    ]
    _write_csv(
        out / "comparison.csv",
        digest,
        ["model", "family", "spatial", "mae", "mse", "dic", "dbar", "pd",
         "best_mae", "best_mse", "best_dic"],
        csv_rows,
    )
    _write_json(
        out / "comparison.json",
        {
            "rows": {
                label: rep.to_dict() for label, _, _, rep in rows
            },
            "best": best,
        },
        digest,
    )
    print("compare: model            mae          mse          dic")
    for label, _, _, rep in rows:
        marks = "".join(
            "*" if best[m] == label else " " for m in ("mae", "mse", "dic")
        )
        print(f"  {label:<22} {rep.mae:>11.4f} {rep.mse:>12.4f} {rep.dic:>12.2f} {marks}")
    print(f"  best: mae={best['mae']} mse={best['mse']} dic={best['dic']}")
    return 0


def _read_selections(path: Path) -> tuple[Selection, ...]:
    if not path.exists():
        raise DataError(f"selections file not found: {path}")
    selections = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"sector", "covariate", "expected_sign"}
        have = set(reader.fieldnames or ())
        if not needed <= have:
            raise DataError(
                f"{path}: selections need columns {sorted(needed)}, "
                f"got {sorted(have)}"
            )
        for row in reader:
            selections.append(
                Selection(
                    sector=row["sector"].strip(),
                    covariate=row["covariate"].strip(),
                    expected_sign=row["expected_sign"].strip(),
                )
            )
    if not selections:
        raise DataError(f"{path}: no selections")
    return tuple(selections)


def cmd_scenario(cfg: RunConfig) -> int:
    if cfg.draws is None:
        raise DataError("scenario requires --draws <dir>")
    if cfg.selections is None:
        raise DataError("scenario requires --selections <csv>")
    out = _out_dir(cfg)
    digest = _emit_resolved_config(cfg, out)
    data = _load_dataset(cfg, out)
    draws = load_chain_files(_chain_paths(Path(cfg.draws)))
    _check_draws_match(draws, data)
    spec = draws.model
    basis = _basis_for(spec, data)
    scen = ScenarioSpec(
        selections=_read_selections(Path(cfg.selections)),
        shift_sd=cfg.shift_sd,
        diagonal_cov=cfg.diagonal_cov,
    )
    result = simulate_scenario(spec, data, basis, draws, scen, seed=cfg.seed)

    header = ["district"] + list(data.sector_names)
    rows = [
        [data.district_names[i]] + [repr(v) for v in result.residuals[i]]
        for i in range(data.n)
    ]
    _write_csv(out / "residuals.csv", digest, header, rows)
    report = {
        "shift_sd": scen.shift_sd,
        "diagonal_cov": scen.diagonal_cov,
        "selections": [dataclasses.asdict(s) for s in scen.selections],
        "n_draws": result.n_draws,
        "sector_totals_max_rel_dev": {
            s: float(v)
            for s, v in zip(data.sector_names, result.sector_totals_check)
        },
        "mean_abs_residual": float(np.mean(np.abs(result.residuals))),
    }
    _write_json(out / "scenario_report.json", report, digest)
    worst = float(result.sector_totals_check.max())
    print(
        f"scenario: {result.n_draws} adjusted draws; worst sector-total "
        f"relative deviation {worst:.3e}; wrote residuals.csv"
    )

    if cfg.power:
        pcfg = SamplerConfig(
            n_iter=cfg.power_iters,
            thin=cfg.thin,
            keep=cfg.power_keep,
            n_chains=cfg.power_chains,
            seed=cfg.seed,
            adapt_interval=cfg.adapt_interval,
            target_accept=cfg.target_accept,
            adapt_decay=cfg.adapt_decay,
        )
        power = power_diagnostic(
            spec,
            data,
            basis,
            result,
            n_replicates=cfg.n_replicates,
            cutoff=cfg.cutoff,
            cfg=pcfg,
        )
        _write_json(out / "power.json", power, digest)
        print(
            f"power: detect_rate={power['detect_rate']:.3f} "
            f"sign_reversals={power['sign_reversals']} "
            f"refits={power['n_refits']}"
        )
    return 0


_COMMANDS = {
    "prep": cmd_prep,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
    "scenario": cmd_scenario,
    "simulate": cmd_simulate,
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with defaults")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument(
        "--strict",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="exit 4 when convergence flags are raised",
    )

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", dest="family", choices=_FAMILIES, default=None)
    model.add_argument(
        "--spatial", action=argparse.BooleanOptionalAction, default=None
    )
    model.add_argument("--r", type=int, default=None, help="Moran basis rank")

    samp = argparse.ArgumentParser(add_help=False)
    samp.add_argument("--iters", type=int, default=None)
    samp.add_argument("--thin", type=int, default=None)
    samp.add_argument("--keep", type=int, default=None)
    samp.add_argument("--chains", type=int, default=None)

    parser = argparse.ArgumentParser(
        prog="sglmm",
        description="Spatial GLMM pipeline for district-by-sector donation data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", parents=[common], help="ingest CSVs into a dataset")
    p.add_argument("--donations", default=None)
    p.add_argument("--districts", default=None)
    p.add_argument("--merges", default=None)
    p.add_argument("--drops", default=None)
    p.add_argument("--covariates", default=None)
    p.add_argument("--adjacency", default=None)
    p.add_argument("--floor", type=float, default=None,
                   help="replace nonpositive per-capita cells with this value")

    p = sub.add_parser("fit", parents=[common, model, samp], help="run the sampler")
    p.add_argument("--dataset", default=None)

    p = sub.add_parser("diagnose", parents=[common], help="diagnostics for saved chains")
    p.add_argument("--draws", default=None, help="directory with chain_*.npz")

    p = sub.add_parser("compare", parents=[common, samp],
                       help="MAE/MSE/DIC across the eight model variants")
    p.add_argument("--dataset", default=None)
    p.add_argument("--draws", default=None,
                   help="directory of per-model subdirectories; skips refits")
    p.add_argument("--r", type=int, default=None, help="Moran basis rank")

    p = sub.add_parser("scenario", parents=[common],
                       help="counterfactual simulation and residuals")
    p.add_argument("--dataset", default=None)
    p.add_argument("--draws", default=None, help="directory with chain_*.npz")
    p.add_argument("--selections", default=None, help="CSV: sector,covariate,expected_sign")
    p.add_argument("--shift-sd", dest="shift_sd", type=float, default=None)
    p.add_argument("--diagonal-cov", dest="diagonal_cov",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--power", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--replicates", dest="n_replicates", type=int, default=None)
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--power-iters", dest="power_iters", type=int, default=None)
    p.add_argument("--power-keep", dest="power_keep", type=int, default=None)
    p.add_argument("--power-chains", dest="power_chains", type=int, default=None)

    p = sub.add_parser("simulate", parents=[common, model],
                       help="generate a synthetic dataset with known truth")
    p.add_argument("--n-districts", dest="n_districts", type=int, default=None)
    p.add_argument("--n-sectors", dest="n_sectors", type=int, default=None)
    p.add_argument("--n-covariates", dest="n_covariates", type=int, default=None)
    p.add_argument("--graph", choices=("lattice", "path", "cycle", "random_planar"),
                   default=None)
    p.add_argument("--true-theta", dest="true_theta", type=float, default=None)
    p.add_argument("--true-sigma2", dest="true_sigma2", type=float, default=None)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConvergenceError as exc:
        _report_error(exc, 4)
        return 4
    except DataError as exc:
        _report_error(exc, 2)
        return 2
    except (NumericalError, SglmmError) as exc:
        _report_error(exc, 3)
        return 3
    except FileNotFoundError as exc:
        _report_error(exc, 2)
        return 2


def _report_error(exc: Exception, code: int) -> None:
    payload = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
