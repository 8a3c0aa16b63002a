"""
Command-line interface.

Commands::

    poiar fit       --counts C --edges E [--covariates X] --out DIR
    poiar simulate  --out DIR [--replicates B]
    poiar predict   FIT_DIR --counts C --edges E [--covariates X] --out DIR
    poiar compare   FIT_DIR FIT_DIR [...] [--out DIR]
    poiar diagnose  FIT_DIR

Settings come from an INI file (``--config``) with the sections ``[data]``
(counts, covariates, edges, out, holdout), ``[model]`` (ModelConfig and
PriorConfig keys), ``[covariates]`` (growth, baseline, standardize_global,
standardize_per_area), ``[sampler]`` (NutsConfig keys) and
``[simulation]`` (SimSpec keys). Flags override the file.

Exit codes: 0 success, 1 error, 3 convergence warning (split R-hat > 1.05).
"""

import argparse
import configparser
import logging
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from poiar import __version__
from poiar.config import ModelConfig, NutsConfig, PriorConfig
from poiar.diagnostics import (
    RHAT_PASS,
    compare_scores,
    mask_digest,
    predictive_metrics,
    summarize,
)
from poiar.errors import PoiarError
from poiar.fit import fit_model
from poiar.graph import read_edge_list
from poiar.io import (
    EPIDEMIC_FILE,
    PREDICTIONS_FILE,
    SUMMARY_FILE,
    ingest_counts,
    ingest_covariates,
    layout_from_manifest,
    read_draws,
    read_manifest,
    read_mask,
    read_scores,
    write_cell_summary,
    write_dataset,
    write_fit,
)
from poiar.model import (
    DesignMatrices,
    ModelData,
    epidemic_proportion,
    rate_matrix,
)
from poiar.parameters import ParameterSet
from poiar.simulate import (
    SimSpec,
    holdout_mask,
    recovery_model_config,
    run_recovery,
    simulate_replicate,
    write_manifest,
)
from poiar.streams import HOLDOUT, PREDICTIVE, make_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONVERGENCE = 3

COVARIATE_KEYS = {
    "growth": "growth_covariates",
    "baseline": "baseline_covariates",
    "standardize_global": "standardize_global",
    "standardize_per_area": "standardize_per_area",
}
NUTS_FLAGS = {
    "seed": "seed",
    "chains": "n_chains",
    "iter": "n_iter",
    "warmup": "n_warmup",
    "thin": "thin",
}


class RunConfig(BaseModel):
    """
    Everything one command needs, after merging the INI file and the flags.

    Attributes:
        command: One of fit, simulate, predict, compare, diagnose
        counts: Counts CSV
        covariates: Covariate CSV; None fits intercepts only
        edges: Edge-list file
        out: Output directory
        holdout: Share of cells held out at random when the counts file has
            no ``in_sample`` column
        fit_dirs: Fit directories read by predict, compare and diagnose
        model: Model settings
        nuts: Sampler settings
        simulation: Generator settings
    """

    model_config = ConfigDict(frozen=True)

    command: str
    counts: Optional[Path] = None
    covariates: Optional[Path] = None
    edges: Optional[Path] = None
    out: Optional[Path] = None
    holdout: float = 0.0
    fit_dirs: tuple[Path, ...] = ()
    model: ModelConfig = ModelConfig()
    nuts: NutsConfig = NutsConfig()
    simulation: SimSpec = SimSpec()

    def require(self, *names: str) -> None:
        missing = [f"--{n}" for n in names if getattr(self, n) is None]
        if missing:
            raise PoiarError(f"{self.command} needs {', '.join(missing)}")


def _section(parser: configparser.ConfigParser, name: str) -> dict[str, str]:
    if not parser.has_section(name):
        return {}
    return {k: v for k, v in parser.items(name) if v.strip() != ""}


def _read_ini(path: Optional[str]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is None:
        return parser
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except (OSError, configparser.Error) as e:
        raise PoiarError(f"Cannot read config {path}: {e}") from e
    for section in parser.sections():
        if section not in ("data", "model", "covariates", "sampler", "simulation"):
            logger.warning("Ignored unknown config section [%s]", section)
    return parser


def _flags(args: argparse.Namespace, mapping: dict[str, str]) -> dict[str, Any]:
    return {
        key: getattr(args, flag)
        for flag, key in mapping.items()
        if getattr(args, flag, None) is not None
    }


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge the INI file named by ``--config`` with the command-line flags.

    Raises:
        pydantic.ValidationError: If a value fails validation
    """
    ini = _read_ini(args.config)
    data = _section(ini, "data")

    model = _section(ini, "model")
    priors = {k: model.pop(k) for k in list(model) if k in PriorConfig.model_fields}
    for key, value in _section(ini, "covariates").items():
        if key not in COVARIATE_KEYS:
            raise PoiarError(f"Unknown key '{key}' in [covariates]")
        model[COVARIATE_KEYS[key]] = value
    model.update(_flags(args, {
        "variant": "variant", "tau": "tau", "depletion": "depletion_mode",
    }))
    if priors:
        model["priors"] = priors

    nuts = _section(ini, "sampler")
    nuts.update(_flags(args, NUTS_FLAGS))

    simulation = _section(ini, "simulation")
    simulation.update(_flags(args, {
        "seed": "seed", "tau": "tau", "holdout": "holdout", "replicates": "replicates",
        "weeks": "n_weeks", "rows": "lattice_rows", "cols": "lattice_cols",
    }))
    base = Path(args.config).parent if args.config else Path(".")

    def path(name):
        if getattr(args, name, None) is not None:
            return Path(getattr(args, name))
        # file entries are relative to the config file
        return base / data[name] if name in data else None

    edges = path("edges")
    if edges is not None:
        simulation.setdefault("edges_path", str(edges))

    holdout = args.holdout if getattr(args, "holdout", None) is not None else (
        data.get("holdout", 0.0)
    )
    return RunConfig(
        command=args.command,
        counts=path("counts"),
        covariates=path("covariates"),
        edges=path("edges"),
        out=path("out"),
        holdout=holdout,
        fit_dirs=tuple(Path(p) for p in getattr(args, "fit_dirs", []) or []),
        model=ModelConfig(**model),
        nuts=NutsConfig(**nuts),
        simulation=SimSpec(**simulation) if args.command == "simulate" else SimSpec(),
    )


def _load_data(
    run: RunConfig,
    model: Optional[ModelConfig] = None,
    mask: Optional[np.ndarray] = None,
) -> ModelData:
    run.require("counts", "edges")
    model = model or run.model
    graph = read_edge_list(run.edges)
    panel = ingest_counts(run.counts)
    if mask is not None and panel.in_sample.all():
        if mask.shape != panel.counts.shape:
            raise PoiarError(
                f"The panel has shape {panel.counts.shape}, the fit {mask.shape}"
            )
        panel = panel.with_mask(mask)
    elif run.holdout > 0 and panel.in_sample.all():
        rng = make_rng(run.nuts.seed, HOLDOUT, 0)
        panel = panel.with_mask(
            holdout_mask(panel.n_areas, panel.n_weeks, run.holdout, rng)
        )
    if run.covariates is not None:
        designs = ingest_covariates(run.covariates, model, panel)
    elif model.growth_covariates or model.baseline_covariates:
        raise PoiarError("Covariates are bound but --covariates is missing")
    else:
        designs = DesignMatrices.intercept_only(panel.n_areas, panel.n_weeks)
    return ModelData(graph, panel, designs, model)


def run_fit(run: RunConfig) -> int:
    """Fit the model and write draws, summary, scores, manifest and area map."""
    run.require("out")
    data = _load_data(run)
    result = fit_model(data, run.nuts)
    write_fit(result, run.out)
    values = result.constrained.reshape(-1, result.constrained.shape[-1])
    epidemic = np.stack([
        epidemic_proportion(data, ParameterSet.from_constrained(v, result.layout))
        for v in values
    ])
    write_cell_summary(data.panel, epidemic, run.out / EPIDEMIC_FILE)
    scores = result.scores
    logger.info(
        "waic %.2f (se %.2f), elpd_loo %.2f (se %.2f), max R-hat %.3f",
        scores.waic, scores.waic_se, scores.elpd_loo, scores.loo_se,
        result.summary.max_rhat,
    )
    return EXIT_OK if result.converged else EXIT_CONVERGENCE


def run_simulate(run: RunConfig) -> int:
    """Write one synthetic data set, or run the recovery study with B > 1."""
    run.require("out")
    spec = run.simulation
    run.out.mkdir(parents=True, exist_ok=True)
    config = recovery_model_config(spec, run.model.priors)
    if spec.replicates > 1:
        report = run_recovery(spec, run.nuts, config)
        report.to_csv(run.out / "recovery.csv")
        write_manifest(report, spec, run.out / "manifest.json")
        logger.info(
            "Pooled coverage %.3f, field coverage %.3f, %d excluded",
            report.pooled_coverage, report.field_coverage, report.n_excluded,
        )
        return EXIT_OK

    graph = spec.graph()
    replicate = simulate_replicate(spec, graph, 0, config)
    data = ModelData(graph, replicate.panel, replicate.designs, config)
    write_dataset(
        run.out, graph, replicate.panel, replicate.designs, replicate.truth, data.layout
    )
    ini = configparser.ConfigParser()
    ini["data"] = {"counts": "counts.csv", "covariates": "covariates.csv",
                   "edges": "edges.txt"}
    ini["model"] = {"variant": config.variant.value, "tau": str(config.tau)}
    ini["covariates"] = {"growth": ", ".join(replicate.designs.x_names[1:])}
    with open(run.out / "poiar.ini", "w", encoding="utf-8") as handle:
        ini.write(handle)
    logger.info("Wrote a %d x %d synthetic panel to %s",
                graph.n_areas, spec.n_weeks, run.out)
    return EXIT_OK


def _single_fit_dir(run: RunConfig) -> Path:
    if len(run.fit_dirs) != 1:
        raise PoiarError(f"{run.command} takes exactly one fit directory")
    return run.fit_dirs[0]


def run_predict(run: RunConfig) -> int:
    """Posterior predictive means and 95% intervals on the fitted in-sample split."""
    run.require("out")
    fit_dir = _single_fit_dir(run)
    manifest = read_manifest(fit_dir)
    model = ModelConfig(**manifest["model_config"])
    data = _load_data(run, model, read_mask(fit_dir))
    layout = layout_from_manifest(manifest)
    if layout != data.layout:
        raise PoiarError("The panel and covariates do not match the fitted layout")
    if mask_digest(data.panel.in_sample) != manifest["mask_digest"]:
        raise PoiarError(
            "The in-sample cells differ from those the fit was scored on; "
            "drop --holdout or the in_sample column to reuse the fitted split"
        )
    constrained, _ = read_draws(fit_dir, layout.constrained_names)
    rng = make_rng(run.nuts.seed, PREDICTIVE)
    predictions = np.stack([
        rng.poisson(rate_matrix(data, ParameterSet.from_constrained(v, layout)))
        for v in constrained.reshape(-1, constrained.shape[-1])
    ])
    run.out.mkdir(parents=True, exist_ok=True)
    write_cell_summary(data.panel, predictions, run.out / PREDICTIONS_FILE)
    counts = data.panel.counts
    population = np.broadcast_to(data.panel.population[:, None], counts.shape)
    for label, cells in (("in-sample", data.panel.in_sample),
                         ("held-out", ~data.panel.in_sample)):
        if cells.any():
            metrics = predictive_metrics(
                predictions[:, cells], counts[cells], population[cells]
            )
            logger.info(
                "%s: rmse %.3f per 10k, coverage %.3f over %d cells",
                label, metrics.rmse_rate, metrics.coverage, metrics.n_cells,
            )
    return EXIT_OK


def run_compare(run: RunConfig) -> int:
    """Rank fits by elpd_loo and print the table."""
    reports = {}
    for fit_dir in run.fit_dirs:
        label = fit_dir.name
        while label in reports:
            label += "'"
        reports[label] = read_scores(fit_dir)
    table = compare_scores(reports)
    if run.out is not None:
        run.out.mkdir(parents=True, exist_ok=True)
        table.to_csv(run.out / "comparison.csv", index=False, float_format="%.10g")
    sys.stdout.write(table.to_string(index=False) + "\n")
    return EXIT_OK


def run_diagnose(run: RunConfig) -> int:
    """Recompute the summary of a fit directory and check R-hat."""
    fit_dir = _single_fit_dir(run)
    layout = layout_from_manifest(read_manifest(fit_dir))
    constrained, _ = read_draws(fit_dir, layout.constrained_names)
    summary = summarize(layout.constrained_names, constrained)
    out = run.out or fit_dir
    out.mkdir(parents=True, exist_ok=True)
    summary.to_csv(out / SUMMARY_FILE)
    worst = summary.table.sort_values("rhat", ascending=False).head(5)
    sys.stdout.write(worst.to_string(index=False) + "\n")
    if summary.converged(RHAT_PASS):
        return EXIT_OK
    logger.warning("Split R-hat up to %.3f exceeds %.2f", summary.max_rhat, RHAT_PASS)
    return EXIT_CONVERGENCE


RUNNERS = {
    "fit": run_fit,
    "simulate": run_simulate,
    "predict": run_predict,
    "compare": run_compare,
    "diagnose": run_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poiar",
        description="Bayesian spatio-temporal Poisson autoregression.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="INI file with [data], [model], "
                        "[covariates], [sampler] and [simulation] sections")
    shared.add_argument("--counts", help="Counts CSV (area_id, week_index, count, "
                        "population[, in_sample])")
    shared.add_argument("--covariates", help="Covariates CSV (area_id, week_index, "
                        "name, value)")
    shared.add_argument("--edges", help="Edge-list file with an area_count header")
    shared.add_argument("--out", help="Output directory")
    shared.add_argument("--seed", type=int, help="Run seed")
    shared.add_argument("--chains", type=int, help="Number of chains")
    shared.add_argument("--iter", type=int, help="Post-warmup iterations per chain")
    shared.add_argument("--warmup", type=int, help="Warmup iterations per chain")
    shared.add_argument("--thin", type=int, help="Keep every n-th draw")
    shared.add_argument("--variant", choices=list("abcde"), help="Model variant")
    shared.add_argument("--tau", type=int, help="Number of lags")
    shared.add_argument("--depletion", choices=["susceptible", "literal"],
                        help="Depletion factor mode")
    shared.add_argument("--holdout", type=float,
                        help="Share of cells held out at random (fit) or per replicate "
                        "(simulate)")
    verbosity = shared.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("fit", parents=[shared], help="Fit a model to a panel")
    simulate = commands.add_parser(
        "simulate",
        parents=[shared],
        help="Write a synthetic panel or run a recovery study",
    )
    simulate.add_argument("--replicates", type=int, help="Run B > 1 replicates")
    simulate.add_argument("--weeks", type=int, help="Number of weeks T")
    simulate.add_argument("--rows", type=int, help="Lattice rows")
    simulate.add_argument("--cols", type=int, help="Lattice columns")
    for name, text, nargs in (
        ("predict", "Posterior predictive intervals from a fit directory", 1),
        ("compare", "Rank fit directories by WAIC and LOO", "+"),
        ("diagnose", "Recompute R-hat and ESS of a fit directory", 1),
    ):
        sub = commands.add_parser(name, parents=[shared], help=text)
        sub.add_argument("fit_dirs", nargs=nargs, metavar="FIT_DIR")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point of the ``poiar`` command."""
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        run = load_run_config(args)
        return RUNNERS[run.command](run)
    except ValidationError as e:
        logger.error("Invalid settings:\n%s", e)
    except (PoiarError, ValueError, OSError) as e:
        logger.error("%s", e)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
