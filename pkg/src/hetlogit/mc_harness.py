"""Monte Carlo orchestration across estimators, replicates, and summary tables.

Each replicate simulates choices on the full covariate population,
estimates on a three-quarter subset, and records point estimate,
standard error, confidence interval, coverage and rejection indicators,
the outlier flag (any target SE above the threshold), and the nuisance
regression MSEs where applicable. Replicates derive their RNG streams
from (master seed, replicate index), so execution order and worker
count never change the results.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dgp, influence_engine, mle_baselines, nuisance_lambda, structured_estimator
from .errors import EstimationError
from .influence_engine import OUTLIER_SE_THRESHOLD, z_critical
from .seeding import derive_seed

WORKERS_ENV = "HETLOGIT_WORKERS"


@dataclass
class MCConfig:
    replicates: int = 1000
    estimators: tuple[str, ...] = ("oracle", "basic", "ifa", "nn")
    lambda_grid: tuple[float, ...] = nuisance_lambda.DEFAULT_L2_GRID
    S: int = 5
    R: int = 5
    level: float = 0.95
    master_seed: int = 0
    dgp_mode: str = "small"               # small | large
    large_n: int = 50000
    resample_per_replicate: bool = False  # redraw the large population each replicate
    redraw_subset_per_replicate: bool = True
    repeat_on_outlier: bool = True        # rerun splitting R times only after an outlier
    always_repeat: bool = False
    diag_ridge: float = 0.0
    delta_overrides: dict = field(default_factory=dict)
    lambda_overrides: dict = field(default_factory=dict)
    workers: int = 0                      # 0 -> HETLOGIT_WORKERS or 1

    def __post_init__(self):
        self.estimators = tuple(self.estimators)
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        if self.dgp_mode not in ("small", "large"):
            raise ValueError(f"unknown dgp_mode {self.dgp_mode!r}")

    def resolved_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get(WORKERS_ENV, "")
        return max(1, int(env)) if env.strip() else 1


@dataclass(frozen=True)
class CellRecord:
    replicate: int
    estimator: str
    target: str
    theta_true: float
    theta_hat: float = np.nan
    se: float = np.nan
    ci_low: float = np.nan
    ci_high: float = np.nan
    covered: float = np.nan
    rejected: float = np.nan
    outlier: float = np.nan
    mse_lambda_train: float = np.nan
    mse_lambda_test: float = np.nan
    error: str = ""

    @property
    def bias(self) -> float:
        return self.theta_hat - self.theta_true

    @property
    def ok(self) -> bool:
        return self.error == "" and np.isfinite(self.theta_hat)


def ifa_estimator_name(lam: float) -> str:
    return f"ifa_lambda={lam:g}"


def expand_estimators(config: MCConfig) -> list[str]:
    names = []
    for name in config.estimators:
        if name == "ifa":
            names.extend(ifa_estimator_name(lam) for lam in config.lambda_grid)
        else:
            names.append(name)
    return names


def _cells_from_point_estimates(replicate, estimator, per_target, theta_true, z,
                                mse_train=np.nan, mse_test=np.nan):
    outlier = float(any(se > OUTLIER_SE_THRESHOLD for _, se in per_target.values()))
    cells = []
    for label, (theta, se) in per_target.items():
        truth = theta_true[label]
        lo, hi = theta - z * se, theta + z * se
        cells.append(CellRecord(
            replicate=replicate, estimator=estimator, target=label,
            theta_true=truth, theta_hat=theta, se=se, ci_low=lo, ci_high=hi,
            covered=float(lo <= truth <= hi),
            rejected=float(se > 0 and abs(theta / se) > z),
            outlier=outlier,
            mse_lambda_train=mse_train, mse_lambda_test=mse_test))
    return cells


def _error_cells(replicate, estimator, targets, theta_true, message):
    return [CellRecord(replicate=replicate, estimator=estimator, target=t.label,
                       theta_true=theta_true[t.label], error=message)
            for t in targets]


def _design_for(plan, data):
    return mle_baselines.design_from_interactions(
        data.n_alternatives, data.n_attributes, data.reference,
        intercept_features=plan["intercept_features"],
        slope_features=plan["slope_features"],
        name="oracle")


def run_replicate(index: int, config: MCConfig, population: dgp.PopulationFrame,
                  coeffs, targets, theta_true: dict) -> list[CellRecord]:
    """Simulate one replicate and run the configured estimator roster on it."""
    rep_seed = derive_seed(config.master_seed, "replicate", index)
    frame = population
    if config.dgp_mode == "large" and config.resample_per_replicate:
        frame = dgp.resample_large(frame, config.large_n, derive_seed(rep_seed, "resample"))
        theta_true = dgp.true_theta(frame, coeffs, targets)

    free_true = coeffs.free_matrix(frame.w, frame.w_names)
    y = dgp.simulate_choices(frame.x, free_true, frame.reference,
                             derive_seed(rep_seed, "gumbel"))
    subset_seed = derive_seed(rep_seed, "subset") if config.redraw_subset_per_replicate \
        else derive_seed(config.master_seed, "subset")
    est_ids = dgp.estimation_split(frame.n, subset_seed)
    data = frame.subset(est_ids).to_dataset(y[est_ids])

    z = z_critical(config.level)
    records: list[CellRecord] = []
    for name in config.estimators:
        if name in ("oracle", "basic"):
            design = _design_for(coeffs.interaction_plan(), data) if name == "oracle" \
                else mle_baselines.basic_design(data.n_alternatives, data.n_attributes,
                                                data.reference)
            try:
                fit = mle_baselines.fit_logit_mle(data, design)
                per_target = mle_baselines.average_coefficients_from_design(
                    fit, frame.w, frame.w_names, data.attr_names)
                records.extend(_cells_from_point_estimates(
                    index, name, per_target, theta_true, z))
            except EstimationError as exc:
                records.extend(_error_cells(index, name, targets, theta_true, str(exc)))
        elif name == "ifa":
            for lam in config.lambda_grid:
                records.extend(_run_ifa_cell(index, lam, config, data, targets,
                                             theta_true, rep_seed, z))
        elif name == "nn":
            spec = structured_estimator.default_delta_spec(
                data.n_features, data.n_alternatives, data.n_attributes,
                seed=derive_seed(rep_seed, "nn"), **config.delta_overrides)
            try:
                result = mle_baselines.naive_nn_inference(data, spec)
                records.extend(_cells_from_point_estimates(
                    index, name, result.thetas, theta_true, z))
            except EstimationError as exc:
                records.extend(_error_cells(index, name, targets, theta_true, str(exc)))
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return records


def _run_ifa_cell(index, lam, config, data, targets, theta_true, rep_seed, z):
    estimator = ifa_estimator_name(lam)
    delta_spec = structured_estimator.default_delta_spec(
        data.n_features, data.n_alternatives, data.n_attributes,
        **config.delta_overrides)
    lambda_spec = nuisance_lambda.default_lambda_spec(
        data.n_features, data.n_free, **config.lambda_overrides)
    est_config = influence_engine.EstimateConfig(
        delta_spec=delta_spec, lambda_spec=lambda_spec, S=config.S,
        lambda_l2=lam, level=config.level, diag_ridge=config.diag_ridge,
        seed=derive_seed(rep_seed, "ifa", f"{lam:g}"))
    try:
        first = influence_engine.estimate(data, targets, est_config)
        result = first
        hit_outlier = any(e.outlier for e in first.estimates)
        if config.R > 1 and (config.always_repeat
                             or (config.repeat_on_outlier and hit_outlier)):
            result = influence_engine.estimate_repeated(
                data, targets, est_config, config.R, first=first)
    except EstimationError as exc:
        return _error_cells(index, estimator, targets, theta_true, str(exc))
    per_target = {e.target: (e.theta_hat, e.se) for e in result.estimates}
    return _cells_from_point_estimates(index, estimator, per_target, theta_true, z,
                                       mse_train=result.lambda_mse_train,
                                       mse_test=result.lambda_mse_test)


@dataclass(frozen=True)
class MCRun:
    records: tuple[CellRecord, ...]
    theta_true: dict
    estimators: tuple[str, ...]
    targets: tuple[str, ...]


def _replicate_worker(args):
    index, config, population, coeffs, targets, theta_true = args
    return index, run_replicate(index, config, population, coeffs, targets, theta_true)


def run_mc(config: MCConfig, population: dgp.PopulationFrame, coeffs,
           targets=None) -> MCRun:
    """Run all replicates; parallel execution never changes the output."""
    frame = population.select_features(coeffs.required_features)
    if config.dgp_mode == "large" and not config.resample_per_replicate:
        frame = dgp.resample_large(frame, config.large_n,
                                   derive_seed(config.master_seed, "resample"))
    if targets is None:
        targets = influence_engine.average_coefficient_targets(frame.attr_names)
    theta_true = dgp.true_theta(frame, coeffs, targets)

    jobs = [(i, config, frame, coeffs, targets, theta_true)
            for i in range(config.replicates)]
    workers = config.resolved_workers()
    if workers > 1:
        by_index: dict[int, list[CellRecord]] = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, cells in pool.map(_replicate_worker, jobs, chunksize=1):
                by_index[index] = cells
        results = [by_index[i] for i in range(config.replicates)]
    else:
        results = [run_replicate(*job) for job in jobs]

    records = tuple(cell for cells in results for cell in cells)
    return MCRun(records=records, theta_true=theta_true,
                 estimators=tuple(expand_estimators(config)),
                 targets=tuple(t.label for t in targets))


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def lower_median(values) -> float:
    return influence_engine.lower_median(values)


@dataclass(frozen=True)
class MCReport:
    mean_rows: tuple[dict, ...]
    median_rows: tuple[dict, ...]


def summarize(records) -> MCReport:
    """Mean table plus a median table (medians of SE/bias/MSE, means of rates)."""
    cells: dict[tuple[str, str], list[CellRecord]] = {}
    order: list[tuple[str, str]] = []
    for rec in records:
        key = (rec.estimator, rec.target)
        if key not in cells:
            cells[key] = []
            order.append(key)
        cells[key].append(rec)

    mean_rows, median_rows = [], []
    for key in order:
        est, target = key
        valid = [r for r in cells[key] if r.ok]
        base = {"estimator": est, "target": target,
                "n_records": len(cells[key]), "n_valid": len(valid)}
        if not valid:
            empty = {k: np.nan for k in ("bias", "se", "coverage", "rejection",
                                         "outlier_share", "mse_lambda_train",
                                         "mse_lambda_test")}
            mean_rows.append(base | empty)
            median_rows.append(base | empty)
            continue
        biases = [r.bias for r in valid]
        ses = [r.se for r in valid]
        coverage = float(np.mean([r.covered for r in valid]))
        rejection = float(np.mean([r.rejected for r in valid]))
        outlier = float(np.mean([r.outlier for r in valid]))
        mse_tr = [r.mse_lambda_train for r in valid if np.isfinite(r.mse_lambda_train)]
        mse_te = [r.mse_lambda_test for r in valid if np.isfinite(r.mse_lambda_test)]
        mean_rows.append(base | {
            "bias": float(np.mean(biases)), "se": float(np.mean(ses)),
            "coverage": coverage, "rejection": rejection, "outlier_share": outlier,
            "mse_lambda_train": float(np.mean(mse_tr)) if mse_tr else np.nan,
            "mse_lambda_test": float(np.mean(mse_te)) if mse_te else np.nan})
        median_rows.append(base | {
            "bias": lower_median(biases), "se": lower_median(ses),
            "coverage": coverage, "rejection": rejection, "outlier_share": outlier,
            "mse_lambda_train": lower_median(mse_tr) if mse_tr else np.nan,
            "mse_lambda_test": lower_median(mse_te) if mse_te else np.nan})
    return MCReport(mean_rows=tuple(mean_rows), median_rows=tuple(median_rows))


def export_tstats(records):
    """Raw (theta_hat - theta_true) / se rows; zero-SE rows skipped with a count."""
    rows, skipped = [], 0
    for rec in records:
        if not rec.ok:
            continue
        if rec.se == 0:
            skipped += 1
            continue
        rows.append((rec.estimator, rec.target, (rec.theta_hat - rec.theta_true) / rec.se))
    return rows, skipped


# ---------------------------------------------------------------------------
# file outputs
# ---------------------------------------------------------------------------

_RECORD_FIELDS = ("replicate", "estimator", "target", "theta_true", "theta_hat",
                  "se", "ci_low", "ci_high", "covered", "rejected", "outlier",
                  "mse_lambda_train", "mse_lambda_test", "error")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(records, path) -> None:
    with open(path, "w") as handle:
        handle.write(",".join(_RECORD_FIELDS) + "\n")
        for rec in records:
            handle.write(",".join(_fmt(getattr(rec, f)) for f in _RECORD_FIELDS) + "\n")


def read_records(path) -> tuple[CellRecord, ...]:
    records = []
    with open(path) as handle:
        header = handle.readline().strip().split(",")
        assert header == list(_RECORD_FIELDS)
        for line in handle:
            parts = line.rstrip("\n").split(",")
            kwargs = dict(zip(_RECORD_FIELDS, parts))
            for f in _RECORD_FIELDS[3:-1]:
                kwargs[f] = float(kwargs[f])
            kwargs["replicate"] = int(kwargs["replicate"])
            records.append(CellRecord(**kwargs))
    return tuple(records)


def write_table(rows, path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    fields = list(rows[0])
    with open(path, "w") as handle:
        handle.write(",".join(fields) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(row[f]) for f in fields) + "\n")


def write_tstats(rows, path) -> None:
    with open(path, "w") as handle:
        handle.write("estimator,target,tstat\n")
        for est, target, t in rows:
            handle.write(f"{est},{target},{t!r}\n")


def _markdown_metric_table(rows, estimators, targets, metric) -> list[str]:
    lookup = {(r["estimator"], r["target"]): r[metric] for r in rows}
    lines = ["| target | " + " | ".join(estimators) + " |",
             "|---" * (len(estimators) + 1) + "|"]
    for target in targets:
        vals = []
        for est in estimators:
            v = lookup.get((est, target), np.nan)
            vals.append("" if not np.isfinite(v) else f"{v:.4f}")
        lines.append(f"| {target} | " + " | ".join(vals) + " |")
    return lines


def write_markdown_report(report: MCReport, run: MCRun, path, skipped_tstats: int = 0) -> None:
    metrics = ("bias", "se", "coverage", "rejection", "outlier_share",
               "mse_lambda_train", "mse_lambda_test")
    lines = ["# Monte Carlo summary", ""]
    lines.append("True values: " + ", ".join(
        f"{k} = {v:.4f}" for k, v in run.theta_true.items()))
    lines.append("")
    for title, rows in (("Mean table", report.mean_rows),
                        ("Median table", report.median_rows)):
        lines.append(f"## {title}")
        for metric in metrics:
            lines.append("")
            lines.append(f"### {metric}")
            lines.extend(_markdown_metric_table(rows, run.estimators, run.targets, metric))
        lines.append("")
    if skipped_tstats:
        lines.append(f"t-statistic rows skipped for zero SE: {skipped_tstats}")
        lines.append("")
    with open(path, "w") as handle:
        handle.write("\n".join(lines))


def write_outputs(run: MCRun, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    report = summarize(run.records)
    tstats, skipped = export_tstats(run.records)
    write_records(run.records, os.path.join(out_dir, "raw_records.csv"))
    write_table(report.mean_rows, os.path.join(out_dir, "mean_table.csv"))
    write_table(report.median_rows, os.path.join(out_dir, "median_table.csv"))
    write_tstats(tstats, os.path.join(out_dir, "tstats.csv"))
    write_markdown_report(report, run, os.path.join(out_dir, "report.md"), skipped)
