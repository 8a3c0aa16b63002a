"""
Reading and writing panels, covariates, draws and fit artifacts.

File formats (UTF-8, comma separated, header row):

``counts.csv``
    ``area_id, week_index, count, population[, in_sample]``; one row per
    cell. Negative week indices are pre-period weeks (``-1`` is the week
    just before week 0). Areas are indexed in order of first appearance.
``covariates.csv``
    ``area_id, week_index, name, value``; a row with an empty
    ``week_index`` applies to every week of its area.
``draws_chain<c>.csv``
    ``lp__`` then one column per constrained parameter, one row per kept
    draw.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from poiar.config import ModelConfig
from poiar.diagnostics import ScoreReport
from poiar.errors import DataValidationError
from poiar.fit import FitResult
from poiar.graph import AreaGraph, write_edge_list
from poiar.model import CountPanel, DesignMatrices, standardize_covariates
from poiar.parameters import Layout, ParameterSet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

COUNT_COLUMNS = ["area_id", "week_index", "count", "population"]
COVARIATE_COLUMNS = ["area_id", "name", "value"]
FLOAT_FORMAT = "%.17g"

DRAWS_PATTERN = "draws_chain{chain}.csv"
SUMMARY_FILE = "summary.csv"
SCORES_FILE = "scores.csv"
MANIFEST_FILE = "manifest.json"
AREA_MAP_FILE = "area_map.csv"
PREDICTIONS_FILE = "predictions.csv"
LOO_FILE = "loo_pointwise.csv"
EPIDEMIC_FILE = "epidemic.csv"
MASK_FILE = "in_sample.csv"


def _rows(frame: pd.DataFrame, selector) -> list[int]:
    """File line numbers (header is line 1) of the selected rows."""
    return [int(i) + 2 for i in np.flatnonzero(np.asarray(selector))]


def _read_csv(path: PathLike, required: list[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"area_id": str}, encoding="utf-8")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataValidationError(f"Cannot read {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataValidationError(f"Missing columns {missing}", location=str(path))
    incomplete = frame[required].isna().any(axis=1)
    if incomplete.any():
        raise DataValidationError(
            "Empty required fields", location=f"rows {_rows(frame, incomplete)}"
        )
    return frame


def _integer_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values) | (values != np.round(values))
    if bad.any():
        raise DataValidationError(
            f"{column} must be an integer", location=f"rows {_rows(frame, bad)}"
        )
    return values.astype(np.int64)


def ingest_counts(path: PathLike) -> CountPanel:
    """
    Read a long-format counts file into a panel.

    Args:
        path: CSV with ``area_id, week_index, count, population`` and an
            optional 0/1 ``in_sample`` column

    Returns:
        The dense panel; ``panel.area_ids`` holds the external identifiers

    Raises:
        DataValidationError: On missing cells, duplicated cells, negative
            counts or a population that changes within an area; the message
            names the offending rows or cell
    """
    frame = _read_csv(path, COUNT_COLUMNS)
    weeks = _integer_column(frame, "week_index")
    counts = _integer_column(frame, "count")
    population = pd.to_numeric(frame["population"], errors="coerce").to_numpy(float)

    negative = counts < 0
    if negative.any():
        raise DataValidationError(
            "Negative count", location=f"rows {_rows(frame, negative)}"
        )
    if not np.all(population > 0):
        raise DataValidationError(
            "Population must be positive",
            location=f"rows {_rows(frame, ~(population > 0))}",
        )
    duplicated = frame.duplicated(["area_id", "week_index"], keep=False).to_numpy()
    if duplicated.any():
        raise DataValidationError(
            "Duplicated cell", location=f"rows {_rows(frame, duplicated)}"
        )

    area_ids = tuple(pd.unique(frame["area_id"]))
    index = {area: i for i, area in enumerate(area_ids)}
    areas = frame["area_id"].map(index).to_numpy()

    per_area = pd.Series(population).groupby(areas).nunique()
    if (per_area > 1).any():
        area = area_ids[int(per_area.index[per_area > 1][0])]
        rows = _rows(frame, areas == index[area])
        raise DataValidationError(
            f"Inconsistent population for area {area}", location=f"rows {rows}"
        )
    area_population = np.zeros(len(area_ids))
    area_population[areas] = population

    if not (weeks >= 0).any():
        raise DataValidationError("No observed weeks", location=str(path))
    n_weeks = int(weeks.max()) + 1
    n_pre = int(max(0, -weeks.min()))
    grid = np.full((len(area_ids), n_pre + n_weeks), -1, dtype=np.int64)
    grid[areas, weeks + n_pre] = counts
    holes = np.argwhere(grid < 0)
    if len(holes):
        area, position = holes[0]
        raise DataValidationError(
            f"Missing cell ({len(holes)} in total)",
            location=f"area {area_ids[area]}, week {int(position) - n_pre}",
        )

    in_sample = None
    if "in_sample" in frame.columns:
        flags = _integer_column(frame, "in_sample")
        if not np.isin(flags, (0, 1)).all():
            raise DataValidationError(
                "in_sample must be 0 or 1",
                location=f"rows {_rows(frame, ~np.isin(flags, (0, 1)))}",
            )
        observed = weeks >= 0
        in_sample = np.ones((len(area_ids), n_weeks), dtype=bool)
        in_sample[areas[observed], weeks[observed]] = flags[observed].astype(bool)

    logger.info(
        "Read %d areas x %d weeks (%d pre-period weeks) from %s",
        len(area_ids), n_weeks, n_pre, path,
    )
    return CountPanel(
        counts=grid[:, n_pre:],
        population=area_population,
        pre_counts=grid[:, :n_pre],
        in_sample=in_sample,
        area_ids=area_ids,
    )


def write_counts(panel: CountPanel, path: PathLike) -> None:
    """Write ``panel`` in the counts file format, pre-period rows first."""
    area_ids = panel.area_ids or tuple(str(i) for i in range(panel.n_areas))
    rows = []
    for i, area in enumerate(area_ids):
        for p in range(panel.n_pre):
            rows.append((area, p - panel.n_pre, panel.pre_counts[i, p],
                         panel.population[i], 1))
        for t in range(panel.n_weeks):
            rows.append((area, t, panel.counts[i, t], panel.population[i],
                         int(panel.in_sample[i, t])))
    frame = pd.DataFrame(rows, columns=COUNT_COLUMNS + ["in_sample"])
    frame.to_csv(path, index=False, float_format="%.10g")


def ingest_covariates(
    path: PathLike, config: ModelConfig, panel: CountPanel
) -> DesignMatrices:
    """
    Build the design matrices from a long-format covariate file.

    Covariates named in ``config.growth_covariates`` go to X and those in
    ``config.baseline_covariates`` to V, each after an intercept column.
    Standardization follows ``config.standardize_global`` and
    ``config.standardize_per_area``; other columns (indicators) are used as
    given.

    Args:
        path: Covariate CSV
        config: Model settings with the bindings
        panel: Panel the covariates refer to; its ``area_ids`` map the rows

    Returns:
        The design matrices

    Raises:
        DataValidationError: On an unknown area or covariate name, a
            covariate missing some cells, or a zero-variance
            standardization target
    """
    frame = _read_csv(path, COVARIATE_COLUMNS)
    area_ids = panel.area_ids or tuple(str(i) for i in range(panel.n_areas))
    index = {str(area): i for i, area in enumerate(area_ids)}
    areas = frame["area_id"].map(index)
    unknown = areas.isna().to_numpy()
    if unknown.any():
        raise DataValidationError(
            "Unknown area_id", location=f"rows {_rows(frame, unknown)}"
        )
    areas = areas.to_numpy(dtype=np.int64)

    values = pd.to_numeric(frame["value"], errors="coerce").to_numpy(float)
    if not np.all(np.isfinite(values)):
        raise DataValidationError(
            "Non-numeric value", location=f"rows {_rows(frame, ~np.isfinite(values))}"
        )
    if "week_index" in frame.columns:
        weeks = pd.to_numeric(frame["week_index"], errors="coerce").to_numpy(float)
    else:
        weeks = np.full(len(frame), np.nan)
    constant = np.isnan(weeks)
    out_of_panel = ~constant & ((weeks < 0) | (weeks >= panel.n_weeks))
    if out_of_panel.any():
        logger.warning(
            "Ignored %d covariate rows outside weeks 0..%d",
            int(out_of_panel.sum()), panel.n_weeks - 1,
        )

    available = set(frame["name"])
    bound = list(config.growth_covariates) + list(config.baseline_covariates)
    for name in bound:
        if name not in available:
            raise DataValidationError("Unknown covariate in bindings", location=name)
    unused = sorted(available - set(bound))
    if unused:
        logger.warning("Ignored %d unbound covariates: %s", len(unused), unused)
    for name in list(config.standardize_global) + list(config.standardize_per_area):
        if name not in bound:
            raise DataValidationError(
                "Standardized covariate is not bound", location=name
            )

    names = frame["name"].to_numpy()
    shape = (panel.n_areas, panel.n_weeks)

    def column(name):
        grid = np.full(shape, np.nan)
        rows = (names == name) & constant
        grid[areas[rows]] = values[rows][:, None]
        rows = (names == name) & ~constant & ~out_of_panel
        grid[areas[rows], weeks[rows].astype(np.int64)] = values[rows]
        if np.isnan(grid).any():
            area, week = np.argwhere(np.isnan(grid))[0]
            raise DataValidationError(
                f"Covariate {name} is missing cells",
                location=f"area {area_ids[area]}, week {week}",
            )
        return grid

    def design(selected):
        columns = ["intercept"] + list(selected)
        stacked = np.stack([np.ones(shape)] + [column(n) for n in selected], axis=2)
        for per_area, targets in (
            (False, config.standardize_global),
            (True, config.standardize_per_area),
        ):
            targets = [n for n in targets if n in selected]
            if targets:
                stacked = standardize_covariates(stacked, per_area, columns, targets)
        return stacked, tuple(columns)

    x, x_names = design(config.growth_covariates)
    v, v_names = design(config.baseline_covariates)
    return DesignMatrices(x=x, v=v, x_names=x_names, v_names=v_names)


def write_covariates(
    designs: DesignMatrices, panel: CountPanel, path: PathLike
) -> None:
    """Write the non-intercept growth and baseline columns in long format."""
    area_ids = panel.area_ids or tuple(str(i) for i in range(panel.n_areas))
    rows = []
    for design, names in ((designs.x, designs.x_names), (designs.v, designs.v_names)):
        for k, name in enumerate(names):
            if name == "intercept":
                continue
            for i, area in enumerate(area_ids):
                rows += [(area, t, name, design[i, t, k]) for t in range(panel.n_weeks)]
    frame = pd.DataFrame(rows, columns=["area_id", "week_index", "name", "value"])
    frame.drop_duplicates(["area_id", "week_index", "name"]).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )


def write_area_map(panel: CountPanel, path: PathLike) -> None:
    area_ids = panel.area_ids or tuple(str(i) for i in range(panel.n_areas))
    pd.DataFrame({"area_id": list(area_ids), "index": range(len(area_ids))}).to_csv(
        path, index=False
    )


def write_mask(panel: CountPanel, path: PathLike) -> None:
    """Write the in-sample mask as one row per area and one column per week."""
    area_ids = panel.area_ids or tuple(str(i) for i in range(panel.n_areas))
    frame = pd.DataFrame(
        panel.in_sample.astype(int), index=pd.Index(list(area_ids), name="area_id")
    )
    frame.to_csv(path)


def read_mask(fit_dir: PathLike) -> Optional[np.ndarray]:
    """The in-sample mask a fit was scored on, or None for older fit directories."""
    path = Path(fit_dir) / MASK_FILE
    if not path.exists():
        return None
    frame = pd.read_csv(path, index_col="area_id")
    return frame.to_numpy(dtype=int).astype(bool)


def write_draws(
    out_dir: PathLike, names: tuple[str, ...], constrained: np.ndarray, lp: np.ndarray
) -> list[Path]:
    """
    Write one CSV of constrained draws per chain.

    Args:
        out_dir: Output directory
        names: Constrained parameter names
        constrained: ``(chains, draws, len(names))`` values
        lp: ``(chains, draws)`` log densities

    Returns:
        The written paths
    """
    out_dir = Path(out_dir)
    paths = []
    for chain in range(constrained.shape[0]):
        frame = pd.DataFrame(constrained[chain], columns=list(names))
        frame.insert(0, "lp__", lp[chain])
        path = out_dir / DRAWS_PATTERN.format(chain=chain)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        paths.append(path)
    return paths


def read_draws(
    fit_dir: PathLike, names: Optional[tuple[str, ...]] = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    Read the per-chain draw files of a fit directory.

    Args:
        fit_dir: Directory written by :func:`write_fit`
        names: Expected parameter columns, in order; checked when given

    Returns:
        ``(constrained, lp)`` with shapes ``(chains, draws, p)`` and
        ``(chains, draws)``
    """
    fit_dir = Path(fit_dir)
    paths = sorted(
        fit_dir.glob(DRAWS_PATTERN.format(chain="*")),
        key=lambda p: int(p.stem.rsplit("chain", 1)[1]),
    )
    if not paths:
        raise DataValidationError("No draw files", location=str(fit_dir))
    frames = [pd.read_csv(p, encoding="utf-8") for p in paths]
    columns = list(frames[0].columns[1:])
    for path, frame in zip(paths, frames):
        if list(frame.columns[1:]) != columns or len(frame) != len(frames[0]):
            raise DataValidationError("Draw files disagree", location=str(path))
    if names is not None and tuple(columns) != tuple(names):
        raise DataValidationError(
            "Draw columns do not match the model layout", location=str(fit_dir)
        )
    constrained = np.stack([f[columns].to_numpy(dtype=float) for f in frames])
    lp = np.stack([f["lp__"].to_numpy(dtype=float) for f in frames])
    return constrained, lp


def write_fit(result: FitResult, out_dir: PathLike) -> dict[str, Path]:
    """
    Write the artifacts of a fit: draws, summary, scores, manifest, area map.

    Returns:
        Artifact name to path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"draws": out_dir}
    layout = result.layout
    write_draws(out_dir, layout.constrained_names, result.constrained, result.draws.lp)
    paths["summary"] = out_dir / SUMMARY_FILE
    result.summary.to_csv(paths["summary"])
    paths["scores"] = out_dir / SCORES_FILE
    result.scores.to_frame().to_csv(paths["scores"], index=False, float_format="%.10g")
    if result.scores.loo_pointwise is not None:
        paths["loo"] = out_dir / LOO_FILE
        pd.DataFrame({"elpd_loo_i": result.scores.loo_pointwise}).to_csv(
            paths["loo"], index=False, float_format=FLOAT_FORMAT
        )
    paths["manifest"] = out_dir / MANIFEST_FILE
    with open(paths["manifest"], "w", encoding="utf-8") as handle:
        json.dump(result.manifest(), handle, indent=2)
    paths["area_map"] = out_dir / AREA_MAP_FILE
    write_area_map(result.data.panel, paths["area_map"])
    paths["mask"] = out_dir / MASK_FILE
    write_mask(result.data.panel, paths["mask"])
    logger.info("Wrote fit artifacts to %s", out_dir)
    return paths


def read_manifest(fit_dir: PathLike) -> dict:
    path = Path(fit_dir) / MANIFEST_FILE
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise DataValidationError(
            f"Cannot read manifest: {e}", location=str(path)
        ) from e


def read_scores(fit_dir: PathLike) -> ScoreReport:
    """Read the score report of a fit, with its pointwise LOO values if present."""
    fit_dir = Path(fit_dir)
    try:
        report = ScoreReport.from_frame(pd.read_csv(fit_dir / SCORES_FILE))
    except (OSError, KeyError, IndexError) as e:
        raise DataValidationError(
            f"Cannot read scores: {e}", location=str(fit_dir)
        ) from e
    if (fit_dir / LOO_FILE).exists():
        loo = pd.read_csv(fit_dir / LOO_FILE)["elpd_loo_i"].to_numpy(dtype=float)
        report.loo_pointwise = loo
    return report


def layout_from_manifest(manifest: dict) -> Layout:
    """Rebuild the parameter layout recorded in a manifest."""
    fields = manifest["layout"]
    return Layout(
        n_beta=fields["n_beta"],
        n_eta=fields["n_eta"],
        tau=fields["tau"],
        n_areas=fields["n_areas"],
        n_weeks=fields["n_weeks"],
        has_phi=fields["has_phi"],
        has_psi=fields["has_psi"],
    )


def write_truth(params: ParameterSet, layout: Layout, path: PathLike) -> None:
    """Write true constrained parameter values as ``parameter, value`` rows."""
    pd.DataFrame({
        "parameter": list(layout.constrained_names),
        "value": params.flatten_constrained(layout),
    }).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_dataset(
    out_dir: PathLike,
    graph: AreaGraph,
    panel: CountPanel,
    designs: DesignMatrices,
    truth: Optional[ParameterSet] = None,
    layout: Optional[Layout] = None,
) -> dict[str, Path]:
    """Write counts, covariates, edges and optionally the truth of a data set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "counts": out_dir / "counts.csv",
        "covariates": out_dir / "covariates.csv",
        "edges": out_dir / "edges.txt",
    }
    write_counts(panel, paths["counts"])
    write_covariates(designs, panel, paths["covariates"])
    write_edge_list(graph, paths["edges"])
    if truth is not None and layout is not None:
        paths["truth"] = out_dir / "truth.csv"
        write_truth(truth, layout, paths["truth"])
    return paths


def write_cell_summary(
    panel: CountPanel, draws: np.ndarray, path: PathLike
) -> pd.DataFrame:
    """
    Write per-cell posterior means and central 95% intervals.

    Used for predictive counts and for the epidemic proportion.

    Args:
        panel: Panel the draws refer to
        draws: ``(draws, L, T)`` per-cell draws
        path: Output CSV

    Returns:
        The written table
    """
    area_ids = panel.area_ids or tuple(str(i) for i in range(panel.n_areas))
    lower, upper = np.quantile(draws, [0.025, 0.975], axis=0)
    areas, weeks = np.indices(panel.counts.shape)
    frame = pd.DataFrame({
        "area_id": np.asarray(area_ids, dtype=object)[areas.ravel()],
        "week_index": weeks.ravel(),
        "observed": panel.counts.ravel(),
        "in_sample": panel.in_sample.ravel().astype(int),
        "mean": draws.mean(axis=0).ravel(),
        "q2.5": lower.ravel(),
        "q97.5": upper.ravel(),
    })
    frame.to_csv(path, index=False, float_format="%.10g")
    return frame
