"""Conditional expected Hessian nuisance: regression and safeguarded inversion.

For every observation in the training piece the packed upper triangle
of the per-observation Hessian (evaluated at coefficient functions
fitted on a disjoint piece) is the regression target; a second network
fits those L(L+1)/2 entries under mean squared error. Predictions are
symmetric by construction but deliberately NOT projected to be positive
semidefinite: near-singular or indefinite predictions are a behaviour
of the procedure that the diagnostics record instead of hiding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import choice_core, nn_core
from .data import ChoiceDataset
from .errors import ConfigurationError, InputError
from .structured_estimator import DeltaModel, predict_delta_matrix

# Relative eigenvalue below this times the spectral norm counts as singular.
SINGULAR_REL_EIG = 1e-12

DEFAULT_L2_GRID = (0.0, 1e-5, 1e-4, 2e-3)


def default_lambda_spec(input_dim: int, n_free: int, **overrides) -> nn_core.NetworkSpec:
    """Nuisance network defaults: same body as the coefficient network, no dropout."""
    base = dict(
        input_dim=input_dim,
        hidden_widths=(100,),
        output_dim=choice_core.packed_length(n_free),
        dropout_rate=0.0,
        l2_penalty=0.0,
        max_epochs=20000,
        batch_size=50,
        loss_tolerance=1e-8,
        patience=100,
    )
    base.update(overrides)
    return nn_core.NetworkSpec(**base)


@dataclass(frozen=True)
class LambdaDiagnostics:
    min_eig: float
    cond: float
    rescued: bool


@dataclass(frozen=True)
class LambdaModel:
    params: nn_core.NetworkParams
    l2_penalty: float
    diag_ridge: float
    n_free: int
    feature_names: tuple[str, ...]


def lambda_targets(data: ChoiceDataset, delta_model: DeltaModel) -> np.ndarray:
    """Packed per-observation Hessians at the fixed coefficient functions, (N, L(L+1)/2)."""
    free = predict_delta_matrix(delta_model, data.w)
    z = choice_core.batch_hessian_targets(data.x, free, data.reference)
    rows, cols = np.triu_indices(data.n_free)
    return z[:, rows, cols]


def mse_loss_adapter(targets: np.ndarray):
    def adapter(outputs: np.ndarray, batch_idx: np.ndarray):
        diff = outputs - targets[batch_idx]
        loss = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size
        return loss, grad

    return adapter


def fit_lambda(data_piece: ChoiceDataset, delta_model: DeltaModel,
               spec: nn_core.NetworkSpec, l2_penalty: float,
               diag_ridge: float = 0.0) -> LambdaModel:
    """Regress packed Hessian entries on w under MSE with the given l2 penalty.

    The caller's split plan is responsible for `delta_model` having been
    fitted on a piece disjoint from `data_piece`.
    """
    if spec.output_dim != choice_core.packed_length(data_piece.n_free):
        raise InputError(
            f"spec.output_dim {spec.output_dim} != packed length "
            f"{choice_core.packed_length(data_piece.n_free)}")
    if diag_ridge < 0.0:
        raise ConfigurationError("diag_ridge must be nonnegative")
    spec = replace(spec, l2_penalty=float(l2_penalty))
    targets = lambda_targets(data_piece, delta_model)
    params = nn_core.fit(spec, data_piece.w, mse_loss_adapter(targets))
    return LambdaModel(
        params=params,
        l2_penalty=float(l2_penalty),
        diag_ridge=float(diag_ridge),
        n_free=data_piece.n_free,
        feature_names=data_piece.w_names,
    )


def predict_lambda_matrix(model: LambdaModel, w: np.ndarray) -> np.ndarray:
    """Unpacked symmetric prediction for one observation."""
    packed = nn_core.forward(model.params, np.atleast_2d(w))[0]
    return choice_core.unpack_upper(packed)


def invert_symmetric(matrix: np.ndarray, diag_ridge: float = 0.0):
    """Invert a symmetric matrix through its eigendecomposition.

    Adds `diag_ridge` to the diagonal first. Eigenvalues whose magnitude
    falls below SINGULAR_REL_EIG times the spectral norm are treated as
    singular; in that case the pseudo-inverse (dropping those directions)
    is returned with the rescued flag set. Indefinite matrices are
    inverted as-is, never projected.
    """
    m = np.asarray(matrix, dtype=float)
    if diag_ridge > 0.0:
        m = m + diag_ridge * np.eye(m.shape[0])
    eigvals, eigvecs = np.linalg.eigh(m)
    abs_eigs = np.abs(eigvals)
    spectral = abs_eigs.max()
    cutoff = SINGULAR_REL_EIG * spectral
    singular = abs_eigs <= cutoff
    if singular.any():
        inv_vals = np.where(singular, 0.0, 1.0 / np.where(singular, 1.0, eigvals))
        diagnostics = LambdaDiagnostics(
            min_eig=float(eigvals.min()), cond=float(np.inf), rescued=True)
    else:
        inv_vals = 1.0 / eigvals
        diagnostics = LambdaDiagnostics(
            min_eig=float(eigvals.min()),
            cond=float(spectral / abs_eigs.min()),
            rescued=False)
    inverse = (eigvecs * inv_vals) @ eigvecs.T
    return inverse, diagnostics


def predict_lambda_inverse(model: LambdaModel, w: np.ndarray):
    """Safeguarded inverse of the predicted matrix plus condition diagnostics."""
    return invert_symmetric(predict_lambda_matrix(model, w), model.diag_ridge)


def mse_lambda(model: LambdaModel, data_piece: ChoiceDataset,
               delta_model: DeltaModel) -> float:
    """Mean squared prediction error over observations and packed entries."""
    if delta_model.n_free != model.n_free:
        raise InputError("delta model and lambda model disagree on the free length")
    targets = lambda_targets(data_piece, delta_model)
    predictions = nn_core.forward(model.params, data_piece.w)
    return float(np.mean((predictions - targets) ** 2))


def write_diagnostics(rows, path) -> None:
    """Per-observation diagnostics stream: obs_id,min_eig,cond,rescued."""
    with open(path, "w") as handle:
        handle.write("obs_id,min_eig,cond,rescued\n")
        for obs_id, diag in rows:
            handle.write(f"{obs_id},{diag.min_eig!r},{diag.cond!r},{int(diag.rescued)}\n")
