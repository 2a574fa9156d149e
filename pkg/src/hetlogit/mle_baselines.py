"""Benchmark estimators: parametric conditional logit and naive network inference.

The parametric benchmarks express every utility term (alternative
intercepts and attribute slopes) as a linear function of chosen
socio-demographics and fit the resulting homogeneous parameter vector
by Newton-Raphson on the aggregate negative log-likelihood, with
robust sandwich covariance A^{-1} B A^{-1} from the mean Hessian A and
the mean score outer-product B. The naive network benchmark fits the
structured network on the full sample and applies the same sandwich
algebra at the plug-in per-observation coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import choice_core, structured_estimator
from .data import ChoiceDataset
from .errors import BootstrapError, DesignError, EstimationError
from .nn_core import NetworkSpec

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100
MAX_HALVINGS = 30
RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class DesignSpec:
    """Interaction plan mapping utility terms to socio-demographic features.

    Every term always contains its own constant; the listed features are
    interacted on top. `basic` has empty feature lists everywhere.
    """

    name: str
    n_alternatives: int
    n_attributes: int
    reference: int
    intercept_terms: tuple[tuple[int, tuple[str, ...]], ...]
    slope_terms: tuple[tuple[int, tuple[str, ...]], ...]


def basic_design(n_alternatives: int, n_attributes: int, reference: int) -> DesignSpec:
    """Alternative intercepts plus homogeneous slopes, no interactions."""
    return DesignSpec(
        name="basic",
        n_alternatives=n_alternatives,
        n_attributes=n_attributes,
        reference=reference,
        intercept_terms=tuple((j, ()) for j in range(n_alternatives) if j != reference),
        slope_terms=tuple((k, ()) for k in range(n_attributes)),
    )


def design_from_interactions(n_alternatives: int, n_attributes: int, reference: int,
                             intercept_features: dict, slope_features: dict,
                             name: str = "custom") -> DesignSpec:
    """Build a design from per-term feature lists (missing terms get none)."""
    return DesignSpec(
        name=name,
        n_alternatives=n_alternatives,
        n_attributes=n_attributes,
        reference=reference,
        intercept_terms=tuple(
            (j, tuple(intercept_features.get(j, ())))
            for j in range(n_alternatives) if j != reference),
        slope_terms=tuple(
            (k, tuple(slope_features.get(k, ()))) for k in range(n_attributes)),
    )


def fully_interacted_design(n_alternatives: int, n_attributes: int, reference: int,
                            features, name: str = "interacted") -> DesignSpec:
    """Every intercept and every slope interacted with every listed feature."""
    feats = tuple(features)
    return design_from_interactions(
        n_alternatives, n_attributes, reference,
        intercept_features={j: feats for j in range(n_alternatives)},
        slope_features={k: feats for k in range(n_attributes)},
        name=name,
    )


@dataclass(frozen=True)
class BuiltDesign:
    spec: DesignSpec
    matrix: np.ndarray           # (N, J, P)
    labels: tuple[str, ...]
    slope_columns: dict          # attr index -> (param indices, feature names incl. "1")
    intercept_columns: dict      # alt index -> (param indices, feature names incl. "1")


def _feature_columns(data_w: np.ndarray, w_names, features) -> np.ndarray:
    cols = [np.ones(data_w.shape[0])]
    name_to_idx = {name: i for i, name in enumerate(w_names)}
    for f in features:
        if f not in name_to_idx:
            raise DesignError(f"unknown feature {f!r}; have {list(w_names)}")
        cols.append(data_w[:, name_to_idx[f]])
    return np.column_stack(cols)


def build_design(design: DesignSpec, data: ChoiceDataset) -> BuiltDesign:
    n, n_alt = data.n, data.n_alternatives
    blocks, labels = [], []
    slope_columns, intercept_columns = {}, {}
    col = 0
    for j, features in design.intercept_terms:
        f_mat = _feature_columns(data.w, data.w_names, features)
        block = np.zeros((n, n_alt, f_mat.shape[1]))
        block[:, j, :] = f_mat
        blocks.append(block)
        alt = data.alt_names[j]
        labels.append(f"const_{alt}")
        labels.extend(f"{f}_{alt}" for f in features)
        intercept_columns[j] = (tuple(range(col, col + f_mat.shape[1])),
                                ("1",) + tuple(features))
        col += f_mat.shape[1]
    for k, features in design.slope_terms:
        f_mat = _feature_columns(data.w, data.w_names, features)
        block = data.x[:, :, k][:, :, None] * f_mat[:, None, :]
        blocks.append(block)
        attr = data.attr_names[k]
        labels.append(attr)
        labels.extend(f"{attr}*{f}" for f in features)
        slope_columns[k] = (tuple(range(col, col + f_mat.shape[1])), ("1",) + tuple(features))
        col += f_mat.shape[1]
    return BuiltDesign(spec=design, matrix=np.concatenate(blocks, axis=2),
                       labels=tuple(labels), slope_columns=slope_columns,
                       intercept_columns=intercept_columns)


@dataclass(frozen=True)
class MLEFit:
    design: BuiltDesign
    params: np.ndarray
    log_likelihood: float          # total over observations
    mean_hessian: np.ndarray       # A
    mean_score_outer: np.ndarray   # B
    sandwich: np.ndarray           # A^{-1} B A^{-1}
    n: int
    n_iterations: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sandwich) / self.n)


def _nll_parts(d_matrix: np.ndarray, y: np.ndarray, gamma: np.ndarray):
    v = np.einsum("njp,p->nj", d_matrix, gamma)
    logp = choice_core.log_softmax_rows(v)
    nll = -float(np.einsum("nj,nj->", y, logp))
    return nll, np.exp(logp)


def aggregate_score_and_hessian(d_matrix: np.ndarray, y: np.ndarray, probs: np.ndarray):
    """Total negative log-likelihood gradient and Hessian for a design fit."""
    resid = y - probs
    grad = -np.einsum("nj,njp->p", resid, d_matrix)
    q = np.einsum("nj,njp->np", probs, d_matrix)
    hess = np.einsum("nj,njp,njq->pq", probs, d_matrix, d_matrix) - q.T @ q
    return grad, 0.5 * (hess + hess.T)


def sandwich_pieces(data: ChoiceDataset, built: BuiltDesign, gamma: np.ndarray):
    """Mean Hessian A and mean score outer-product B at an arbitrary point."""
    _, probs = _nll_parts(built.matrix, data.y, gamma)
    _, hess = aggregate_score_and_hessian(built.matrix, data.y, probs)
    per_obs = -np.einsum("nj,njp->np", data.y - probs, built.matrix)
    a = hess / data.n
    b = per_obs.T @ per_obs / data.n
    return a, b


def fit_logit_mle(data: ChoiceDataset, design: DesignSpec,
                  tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> MLEFit:
    """Newton-Raphson with step halving; converged when max |gradient| < tol."""
    built = build_design(design, data)
    d_matrix = built.matrix
    p = d_matrix.shape[2]
    gamma = np.zeros(p)
    nll, probs = _nll_parts(d_matrix, data.y, gamma)
    grad, hess = aggregate_score_and_hessian(d_matrix, data.y, probs)

    eigs = np.linalg.eigvalsh(hess)
    if eigs.min() < RANK_REL_TOL * max(eigs.max(), 1.0):
        raise DesignError(f"design {design.name!r} is rank deficient on this data")

    iterations = 0
    while np.abs(grad).max() >= tol:
        if iterations >= max_iter:
            raise EstimationError(
                f"Newton did not converge in {max_iter} iterations "
                f"(max |gradient| = {np.abs(grad).max():.3e})")
        direction = -np.linalg.solve(hess, grad)
        step = 1.0
        for _ in range(MAX_HALVINGS):
            trial_nll, trial_probs = _nll_parts(d_matrix, data.y, gamma + step * direction)
            if trial_nll <= nll:
                break
            step *= 0.5
        gamma = gamma + step * direction
        nll, probs = trial_nll, trial_probs
        grad, hess = aggregate_score_and_hessian(d_matrix, data.y, probs)
        iterations += 1

    a = hess / data.n
    per_obs = -np.einsum("nj,njp->np", data.y - probs, d_matrix)
    b = per_obs.T @ per_obs / data.n
    a_inv = np.linalg.inv(a)
    return MLEFit(design=built, params=gamma, log_likelihood=-nll,
                  mean_hessian=a, mean_score_outer=b,
                  sandwich=a_inv @ b @ a_inv, n=data.n, n_iterations=iterations)


def coefficient_rows(fit: MLEFit, attr_index: int, w: np.ndarray, w_names) -> np.ndarray:
    """Design-implied slope beta_k(w_i) for every row of w."""
    cols, features = fit.design.slope_columns[attr_index]
    f_mat = _feature_columns(np.atleast_2d(w), w_names, features[1:])
    return f_mat @ fit.params[list(cols)]


def average_coefficient(fit: MLEFit, attr_index: int, w: np.ndarray, w_names):
    """Mean of the design-implied slope over the supplied rows, with delta-method SE."""
    cols, features = fit.design.slope_columns[attr_index]
    f_mat = _feature_columns(np.atleast_2d(w), w_names, features[1:])
    grad = np.zeros(fit.params.shape[0])
    grad[list(cols)] = f_mat.mean(axis=0)
    theta = float(grad @ fit.params)
    se = float(np.sqrt(grad @ fit.sandwich @ grad / fit.n))
    return theta, se


def average_coefficients_from_design(fit: MLEFit, w: np.ndarray, w_names,
                                     attr_names) -> dict:
    """Per-attribute average slope over the rows of w (usually the population)."""
    return {name: average_coefficient(fit, k, w, w_names)
            for k, name in enumerate(attr_names)}


def free_matrix_from_fit(fit: MLEFit, w: np.ndarray, w_names) -> np.ndarray:
    """Design-implied free coefficient vectors (one row per w row)."""
    w = np.atleast_2d(w)
    spec = fit.design.spec
    columns = []
    for j in sorted(fit.design.intercept_columns):
        cols, features = fit.design.intercept_columns[j]
        f_mat = _feature_columns(w, w_names, features[1:])
        columns.append(f_mat @ fit.params[list(cols)])
    for k in range(spec.n_attributes):
        columns.append(coefficient_rows(fit, k, w, w_names))
    return np.column_stack(columns)


# ---------------------------------------------------------------------------
# naive network inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NaiveNNResult:
    model: structured_estimator.DeltaModel
    thetas: dict                   # attr name -> (theta_hat, se)
    mean_hessian: np.ndarray
    mean_score_outer: np.ndarray
    sandwich: np.ndarray
    n: int


def naive_nn_inference(data: ChoiceDataset, spec: NetworkSpec) -> NaiveNNResult:
    """Full-sample network fit with sandwich standard errors at the plug-in fit.

    The per-observation coefficients are treated as plug-in values of a
    common parameter vector: A is the mean per-observation Hessian, B
    the mean score outer-product, both evaluated at delta_hat(w_i), and
    the average-coefficient functional selects the slope entry of
    A^{-1} B A^{-1} via the delta method.
    """
    model = structured_estimator.fit_delta(data, spec)
    free = structured_estimator.predict_delta_matrix(model, data.w)
    scores = choice_core.batch_scores(data.y, data.x, free, data.reference)
    hessians = choice_core.batch_hessian_targets(data.x, free, data.reference)
    a = hessians.mean(axis=0)
    b = scores.T @ scores / data.n
    a_inv = np.linalg.inv(a)
    sandwich = a_inv @ b @ a_inv
    n_alpha = data.n_alternatives - 1
    thetas = {}
    for k, name in enumerate(data.attr_names):
        slot = n_alpha + k
        theta = float(free[:, slot].mean())
        se = float(np.sqrt(sandwich[slot, slot] / data.n))
        thetas[name] = (theta, se)
    return NaiveNNResult(model=model, thetas=thetas, mean_hessian=a,
                         mean_score_outer=b, sandwich=sandwich, n=data.n)


# ---------------------------------------------------------------------------
# Efron bootstrap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapResult:
    se: np.ndarray
    n_draws: int
    n_failures: int
    draws: np.ndarray


def efron_bootstrap(data: ChoiceDataset, estimator, n_draws: int, seed: int,
                    max_failure_share: float = 0.05) -> BootstrapResult:
    """Resample observations with replacement and refit; SE = std of the draws.

    `estimator` maps a ChoiceDataset to a statistic vector. Failed
    refits are recorded and skipped; more than `max_failure_share`
    failures aborts.
    """
    if n_draws < 1:
        raise BootstrapError("need at least one bootstrap draw")
    rng = np.random.default_rng(seed)
    stats_rows, failures = [], 0
    for _ in range(n_draws):
        idx = rng.integers(0, data.n, size=data.n)
        try:
            stats_rows.append(np.atleast_1d(np.asarray(estimator(data.subset(idx)), dtype=float)))
        except EstimationError:
            failures += 1
    if failures > max_failure_share * n_draws:
        raise BootstrapError(f"{failures}/{n_draws} bootstrap refits failed")
    draws = np.vstack(stats_rows)
    return BootstrapResult(se=draws.std(axis=0, ddof=0), n_draws=n_draws,
                           n_failures=failures, draws=draws)


def write_estimate_report(fit: MLEFit, path) -> None:
    """Estimation report CSV: term,estimate,se,stars."""
    se = fit.se
    with open(path, "w") as handle:
        handle.write("term,estimate,se,stars\n")
        for label, est, s in zip(fit.design.labels, fit.params, se):
            p_value = 2.0 * (1.0 - stats.norm.cdf(abs(est / s))) if s > 0 else 0.0
            marks = "***" if p_value < 0.01 else "**" if p_value < 0.05 else \
                "*" if p_value < 0.1 else ""
            handle.write(f"{label},{est!r},{s!r},{marks}\n")
