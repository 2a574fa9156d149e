"""Orthogonal influence-function estimator with three-way sample splitting.

Per observation the influence value is

    psi_i = H(w_i, delta(w_i); x*) - H_delta' Lambda(w_i)^{-1} score_i

with the score and the conditional expected Hessian in the
negative-log-likelihood convention (both signs flip together relative
to a likelihood convention, leaving psi unchanged). The split procedure
partitions the sample into S folds; for each fold the complement is
halved, the first half fits the coefficient functions, the second half
fits the Hessian nuisance given those functions, and psi is evaluated
on the held-out fold. The final estimate averages fold means; its
variance estimate averages fold mean squared deviations of psi around
the GLOBAL estimate. Repeated splitting reruns the whole procedure R
times and combines via medians of the point estimates and of the
deviation-corrected variance estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import choice_core, nuisance_lambda, structured_estimator
from .choice_core import CoefficientBundle
from .data import ChoiceDataset, Observation
from .errors import ConfigurationError, EstimationError
from .nn_core import NetworkSpec, with_seed
from .seeding import derive_seed

# A replicate counts as an outlier once any target's estimated SE exceeds this.
OUTLIER_SE_THRESHOLD = 5.0


# ---------------------------------------------------------------------------
# target functionals
# ---------------------------------------------------------------------------

class TargetFunctional:
    """A scalar function of the coefficient bundle with an analytic gradient.

    Subclasses implement per-observation `value`/`grad_free`; the batch
    variants are the hot path and default to loops unless overridden.
    """

    label: str

    def value(self, delta: CoefficientBundle) -> float:
        raise NotImplementedError

    def grad_free(self, delta: CoefficientBundle) -> np.ndarray:
        raise NotImplementedError

    def batch_values(self, free: np.ndarray, n_alternatives: int, reference: int) -> np.ndarray:
        return np.array([
            self.value(CoefficientBundle.from_free(f, n_alternatives, reference))
            for f in free])

    def batch_grads(self, free: np.ndarray, n_alternatives: int, reference: int) -> np.ndarray:
        return np.stack([
            self.grad_free(CoefficientBundle.from_free(f, n_alternatives, reference))
            for f in free])


@dataclass(frozen=True)
class AverageCoefficient(TargetFunctional):
    """Average of one slope coefficient: H = beta_k(w), H_delta = e_k."""

    beta_index: int
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", f"beta[{self.beta_index}]")

    def value(self, delta: CoefficientBundle) -> float:
        return float(delta.betas[self.beta_index])

    def grad_free(self, delta: CoefficientBundle) -> np.ndarray:
        grad = np.zeros(delta.n_free)
        grad[delta.n_alternatives - 1 + self.beta_index] = 1.0
        return grad

    def batch_values(self, free, n_alternatives, reference):
        return free[:, n_alternatives - 1 + self.beta_index].copy()

    def batch_grads(self, free, n_alternatives, reference):
        grads = np.zeros_like(free)
        grads[:, n_alternatives - 1 + self.beta_index] = 1.0
        return grads


@dataclass(frozen=True)
class TravelTimeElasticity(TargetFunctional):
    """Own/cross elasticity of choice probability `row` to the time of `col`.

    H = beta_time(w) * x*[col, time] * (1{row == col} - p_col(delta; x*)),
    the percentage change of the probability of the row alternative
    after a one-percent increase in the column alternative's time
    attribute, evaluated at the fixed attribute matrix x*.
    """

    row: int
    col: int
    x_star: np.ndarray  # (J, K)
    time_col: int
    label: str = ""

    def __post_init__(self):
        x = np.ascontiguousarray(self.x_star, dtype=float)
        x.flags.writeable = False
        object.__setattr__(self, "x_star", x)
        if not self.label:
            object.__setattr__(self, "label", f"elasticity[{self.row},{self.col}]")

    def _own(self) -> float:
        return 1.0 if self.row == self.col else 0.0

    def value(self, delta: CoefficientBundle) -> float:
        p = choice_core.choice_probabilities(delta, self.x_star)
        scale = delta.betas[self.time_col] * self.x_star[self.col, self.time_col]
        return float(scale * (self._own() - p[self.col]))

    def grad_free(self, delta: CoefficientBundle) -> np.ndarray:
        p = choice_core.choice_probabilities(delta, self.x_star)
        t = choice_core.t_matrix(self.x_star, delta.reference)
        g_dot = np.diag(p) - np.outer(p, p)
        beta_time = delta.betas[self.time_col]
        x_mt = self.x_star[self.col, self.time_col]
        grad = -beta_time * x_mt * (t @ g_dot[:, self.col])
        time_slot = delta.n_alternatives - 1 + self.time_col
        grad[time_slot] += x_mt * (self._own() - p[self.col])
        return grad

    def batch_values(self, free, n_alternatives, reference):
        n = free.shape[0]
        x = np.broadcast_to(self.x_star, (n,) + self.x_star.shape)
        p = choice_core.batch_probabilities(free, x, reference)
        beta_time = free[:, n_alternatives - 1 + self.time_col]
        x_mt = self.x_star[self.col, self.time_col]
        return beta_time * x_mt * (self._own() - p[:, self.col])

    def batch_grads(self, free, n_alternatives, reference):
        n = free.shape[0]
        x = np.broadcast_to(self.x_star, (n,) + self.x_star.shape)
        p = choice_core.batch_probabilities(free, x, reference)
        t = choice_core.t_matrix(self.x_star, reference)  # (L, J), shared
        # dp_col / dv_j = p_col (1{j = col} - p_j), one row per observation
        dp_dv = -p * p[:, [self.col]]
        dp_dv[:, self.col] += p[:, self.col]
        beta_time = free[:, n_alternatives - 1 + self.time_col]
        x_mt = self.x_star[self.col, self.time_col]
        grads = -(beta_time * x_mt)[:, None] * (dp_dv @ t.T)
        time_slot = n_alternatives - 1 + self.time_col
        grads[:, time_slot] += x_mt * (self._own() - p[:, self.col])
        return grads


def average_coefficient_targets(attr_names) -> list[AverageCoefficient]:
    return [AverageCoefficient(beta_index=k, label=name)
            for k, name in enumerate(attr_names)]


def elasticity_targets(x_star: np.ndarray, time_col: int, alt_names) -> list[TravelTimeElasticity]:
    """All J x J own/cross time elasticities at the fixed attribute matrix."""
    targets = []
    for row, row_name in enumerate(alt_names):
        for col, col_name in enumerate(alt_names):
            targets.append(TravelTimeElasticity(
                row=row, col=col, x_star=x_star, time_col=time_col,
                label=f"elasticity[{row_name},{col_name}]"))
    return targets


# ---------------------------------------------------------------------------
# sample splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    n: int
    folds: tuple[np.ndarray, ...]
    delta_pieces: tuple[np.ndarray, ...]
    lambda_pieces: tuple[np.ndarray, ...]
    seed: int

    @property
    def S(self) -> int:
        return len(self.folds)


def make_split_plan(n: int, S: int, seed: int) -> SplitPlan:
    """Uniform random S-fold partition with each complement halved.

    S = 1 is a degenerate test-only mode: the single fold is the full
    sample and both pieces are halves of that same sample.
    """
    if S < 1:
        raise ConfigurationError("S must be >= 1")
    if n < 2 * S:
        raise ConfigurationError(f"need n >= 2 S, got n={n}, S={S}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = [np.sort(f) for f in np.array_split(order, S)] if S > 1 else [np.arange(n)]
    delta_pieces, lambda_pieces = [], []
    for s in range(S):
        if S == 1:
            complement = rng.permutation(n)
        else:
            mask = np.ones(n, dtype=bool)
            mask[folds[s]] = False
            complement = rng.permutation(np.flatnonzero(mask))
        half = len(complement) // 2
        delta_pieces.append(np.sort(complement[:half]))
        lambda_pieces.append(np.sort(complement[half:]))
    return SplitPlan(n=n, folds=tuple(folds), delta_pieces=tuple(delta_pieces),
                     lambda_pieces=tuple(lambda_pieces), seed=seed)


# ---------------------------------------------------------------------------
# influence values
# ---------------------------------------------------------------------------

def psi_value(obs: Observation, delta: CoefficientBundle, lambda_inv: np.ndarray,
              target: TargetFunctional) -> float:
    """H minus the gradient-weighted, Hessian-inverse-scaled score correction."""
    correction = target.grad_free(delta) @ (lambda_inv @ choice_core.score(obs, delta))
    return target.value(delta) - float(correction)


def lower_median(values) -> float:
    """Median realized by an actual element: order statistic ceil(n/2)."""
    ordered = np.sort(np.asarray(values, dtype=float))
    return float(ordered[(len(ordered) - 1) // 2])


def combine_repetitions(thetas, psi_vars) -> tuple[float, float]:
    """Median point estimate and deviation-corrected median variance."""
    theta_med = lower_median(thetas)
    shifted = [p + (t - theta_med) ** 2 for t, p in zip(thetas, psi_vars)]
    return theta_med, lower_median(shifted)


def z_critical(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ConfigurationError("confidence level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 * (1.0 + level)))


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateConfig:
    delta_spec: NetworkSpec
    lambda_spec: NetworkSpec
    S: int = 5
    lambda_l2: float = 0.0
    level: float = 0.95
    diag_ridge: float = 0.0
    seed: int = 0
    median_folds: bool = False


@dataclass(frozen=True)
class ThetaEstimate:
    target: str
    theta_hat: float
    psi_variance: float
    n: int
    se: float
    ci_low: float
    ci_high: float
    level: float
    fold_thetas: tuple[float, ...]
    fold_psi_vars: tuple[float, ...]
    outlier: bool
    S: int
    lambda_l2: float
    R: int = 1
    rep_thetas: tuple[float, ...] = ()
    rep_psi_vars: tuple[float, ...] = ()


@dataclass(frozen=True)
class FoldArtifacts:
    fold: np.ndarray
    delta_model: structured_estimator.DeltaModel
    lambda_model: nuisance_lambda.LambdaModel
    diagnostics: tuple[nuisance_lambda.LambdaDiagnostics, ...]


@dataclass(frozen=True)
class EstimateDetails:
    plan: SplitPlan
    folds: tuple[FoldArtifacts, ...]
    psi: dict = field(default_factory=dict)          # label -> (n,) aligned to data order
    plug_in: dict = field(default_factory=dict)      # label -> (n,) H values
    correction: dict = field(default_factory=dict)   # label -> (n,) correction values


@dataclass(frozen=True)
class EstimateResult:
    estimates: tuple[ThetaEstimate, ...]
    lambda_mse_train: float
    lambda_mse_test: float
    n_rescued: int
    details: EstimateDetails | None = None

    def by_label(self, label: str) -> ThetaEstimate:
        for est in self.estimates:
            if est.target == label:
                return est
        raise KeyError(label)


# ---------------------------------------------------------------------------
# the estimator
# ---------------------------------------------------------------------------

def _aggregate(values, median_mode: bool) -> float:
    return lower_median(values) if median_mode else float(np.mean(values))


def estimate(data: ChoiceDataset, targets, config: EstimateConfig,
             keep_details: bool = False) -> EstimateResult:
    """One pass of the S-fold three-way splitting estimator."""
    n = data.n
    n_alt, ref = data.n_alternatives, data.reference
    plan = make_split_plan(n, config.S, derive_seed(config.seed, "split"))
    labels = [t.label for t in targets]
    if len(set(labels)) != len(labels):
        raise ConfigurationError("target labels must be unique")

    psi = {lab: np.full(n, np.nan) for lab in labels}
    plug_in = {lab: np.full(n, np.nan) for lab in labels}
    mse_train, mse_test = [], []
    fold_artifacts = []
    n_rescued = 0

    for s in range(plan.S):
        delta_spec = with_seed(config.delta_spec, derive_seed(config.seed, "delta", s))
        lambda_spec = with_seed(config.lambda_spec, derive_seed(config.seed, "lambda", s))
        try:
            delta_model = structured_estimator.fit_delta(
                data.subset(plan.delta_pieces[s]), delta_spec)
            lambda_model = nuisance_lambda.fit_lambda(
                data.subset(plan.lambda_pieces[s]), delta_model, lambda_spec,
                l2_penalty=config.lambda_l2, diag_ridge=config.diag_ridge)
        except EstimationError as exc:
            raise EstimationError(f"fold {s} training failed: {exc}", fold=s) from exc

        lambda_piece = data.subset(plan.lambda_pieces[s])
        fold_data = data.subset(plan.folds[s])
        mse_train.append(nuisance_lambda.mse_lambda(lambda_model, lambda_piece, delta_model))
        mse_test.append(nuisance_lambda.mse_lambda(lambda_model, fold_data, delta_model))

        free = structured_estimator.predict_delta_matrix(delta_model, fold_data.w)
        scores = choice_core.batch_scores(fold_data.y, fold_data.x, free, ref)
        # Lambda^{-1} score is shared by every target for this observation.
        base = np.empty_like(scores)
        diags = []
        for i in range(fold_data.n):
            inv, diag = nuisance_lambda.predict_lambda_inverse(lambda_model, fold_data.w[i])
            base[i] = inv @ scores[i]
            diags.append(diag)
            n_rescued += int(diag.rescued)
        for target in targets:
            values = target.batch_values(free, n_alt, ref)
            grads = target.batch_grads(free, n_alt, ref)
            psi[target.label][plan.folds[s]] = values - np.einsum("nl,nl->n", grads, base)
            plug_in[target.label][plan.folds[s]] = values
        fold_artifacts.append(FoldArtifacts(
            fold=plan.folds[s], delta_model=delta_model, lambda_model=lambda_model,
            diagnostics=tuple(diags)))

    z = z_critical(config.level)
    estimates = []
    for target in targets:
        values = psi[target.label]
        fold_thetas = [float(values[f].mean()) for f in plan.folds]
        theta_hat = _aggregate(fold_thetas, config.median_folds)
        fold_vars = [float(np.mean((values[f] - theta_hat) ** 2)) for f in plan.folds]
        psi_var = _aggregate(fold_vars, config.median_folds)
        se = float(np.sqrt(psi_var / n))
        estimates.append(ThetaEstimate(
            target=target.label,
            theta_hat=theta_hat,
            psi_variance=psi_var,
            n=n,
            se=se,
            ci_low=theta_hat - z * se,
            ci_high=theta_hat + z * se,
            level=config.level,
            fold_thetas=tuple(fold_thetas),
            fold_psi_vars=tuple(fold_vars),
            outlier=se > OUTLIER_SE_THRESHOLD,
            S=plan.S,
            lambda_l2=config.lambda_l2,
        ))

    details = None
    if keep_details:
        correction = {lab: plug_in[lab] - psi[lab] for lab in labels}
        details = EstimateDetails(plan=plan, folds=tuple(fold_artifacts),
                                  psi=psi, plug_in=plug_in, correction=correction)
    return EstimateResult(
        estimates=tuple(estimates),
        lambda_mse_train=float(np.mean(mse_train)),
        lambda_mse_test=float(np.mean(mse_test)),
        n_rescued=n_rescued,
        details=details,
    )


def _rep_config(config: EstimateConfig, r: int) -> EstimateConfig:
    return config if r == 0 else replace(config, seed=derive_seed(config.seed, "rep", r))


def estimate_repeated(data: ChoiceDataset, targets, config: EstimateConfig, R: int,
                      first: EstimateResult | None = None) -> EstimateResult:
    """Repeat the split procedure R times and combine with medians.

    Repetition 0 uses `config` unchanged, so R = 1 reproduces a single
    `estimate` call exactly; a precomputed first repetition may be
    passed in to avoid refitting it.
    """
    if R < 1:
        raise ConfigurationError("R must be >= 1")
    results = []
    for r in range(R):
        if r == 0 and first is not None:
            results.append(first)
        else:
            results.append(estimate(data, targets, _rep_config(config, r)))
    if R == 1:
        return results[0]

    z = z_critical(config.level)
    estimates = []
    for idx, target in enumerate(targets):
        rep_thetas = [res.estimates[idx].theta_hat for res in results]
        rep_vars = [res.estimates[idx].psi_variance for res in results]
        theta_med, psi_med = combine_repetitions(rep_thetas, rep_vars)
        se = float(np.sqrt(psi_med / data.n))
        estimates.append(ThetaEstimate(
            target=target.label,
            theta_hat=theta_med,
            psi_variance=psi_med,
            n=data.n,
            se=se,
            ci_low=theta_med - z * se,
            ci_high=theta_med + z * se,
            level=config.level,
            fold_thetas=(),
            fold_psi_vars=(),
            outlier=se > OUTLIER_SE_THRESHOLD,
            S=config.S,
            lambda_l2=config.lambda_l2,
            R=R,
            rep_thetas=tuple(rep_thetas),
            rep_psi_vars=tuple(rep_vars),
        ))
    return EstimateResult(
        estimates=tuple(estimates),
        lambda_mse_train=lower_median([r.lambda_mse_train for r in results]),
        lambda_mse_test=lower_median([r.lambda_mse_test for r in results]),
        n_rescued=sum(r.n_rescued for r in results),
    )


def write_estimates(result: EstimateResult, path) -> None:
    """Estimate dump: target,theta,se,ci_low,ci_high,outlier,R,S,lambda."""
    with open(path, "w") as handle:
        handle.write("target,theta,se,ci_low,ci_high,outlier,R,S,lambda\n")
        for est in result.estimates:
            handle.write(
                f"{est.target},{est.theta_hat!r},{est.se!r},{est.ci_low!r},"
                f"{est.ci_high!r},{int(est.outlier)},{est.R},{est.S},{est.lambda_l2!r}\n")
