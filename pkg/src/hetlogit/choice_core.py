"""Closed-form conditional-logit mathematics.

Conventions used throughout the package:

* Utilities are v_j = alpha_j + x_j' beta with the reference
  alternative's intercept pinned at zero, so the free parameter vector
  phi = (alphas without the reference, betas) has length
  L = (J - 1) + K.
* The per-observation loss is the NEGATIVE log-likelihood. `score` is
  its gradient and `hessian_target` its (positive semidefinite)
  Hessian, so the conditional expected Hessian regressed on w is PSD
  and its inverse enters the correction term with a minus sign.
* Probabilities are always computed through log-sum-exp; nothing here
  clips or floors them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Observation
from .errors import InputError


@dataclass(frozen=True)
class CoefficientBundle:
    """Intercepts and slopes for one observation.

    alphas has length J with alphas[reference] == 0. The free
    parameterization stacks the non-reference intercepts (ascending
    alternative index) and then the K slopes.
    """

    alphas: np.ndarray
    betas: np.ndarray
    reference: int = 0

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float)
        betas = np.asarray(self.betas, dtype=float)
        if alphas.ndim != 1 or betas.ndim != 1:
            raise InputError("alphas and betas must be vectors")
        if not 0 <= self.reference < alphas.shape[0]:
            raise InputError("reference index out of range")
        if alphas[self.reference] != 0.0:
            raise InputError("reference intercept must be exactly zero")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)

    @property
    def n_alternatives(self) -> int:
        return self.alphas.shape[0]

    @property
    def n_free(self) -> int:
        return self.alphas.shape[0] - 1 + self.betas.shape[0]

    def to_free(self) -> np.ndarray:
        """Pack into the free vector (non-reference alphas, then betas)."""
        keep = np.arange(self.n_alternatives) != self.reference
        return np.concatenate([self.alphas[keep], self.betas])

    @classmethod
    def from_free(cls, free, n_alternatives: int, reference: int = 0) -> "CoefficientBundle":
        free = np.asarray(free, dtype=float)
        n_alpha = n_alternatives - 1
        alphas = np.zeros(n_alternatives)
        keep = np.arange(n_alternatives) != reference
        alphas[keep] = free[:n_alpha]
        return cls(alphas=alphas, betas=free[n_alpha:].copy(), reference=reference)


# ---------------------------------------------------------------------------
# stabilized softmax building blocks (vectorized over rows)
# ---------------------------------------------------------------------------

def log_softmax_rows(v: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax via the log-sum-exp shift."""
    v = np.asarray(v, dtype=float)
    shift = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=-1, keepdims=True))
    return shift - lse


def softmax_rows(v: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_rows(v))


def _utilities(delta: CoefficientBundle, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != delta.n_alternatives:
        raise InputError(f"x must be (J, K), got {x.shape}")
    v = delta.alphas + x @ delta.betas
    if not np.isfinite(v).all():
        raise InputError("non-finite utility")
    return v


def t_matrix(x: np.ndarray, reference: int) -> np.ndarray:
    """L x J matrix whose column j stacks (d v_j / d free alphas, x_j)."""
    x = np.asarray(x, dtype=float)
    n_alt = x.shape[0]
    free_alts = [j for j in range(n_alt) if j != reference]
    top = np.zeros((n_alt - 1, n_alt))
    for row, j in enumerate(free_alts):
        top[row, j] = 1.0
    return np.vstack([top, x.T])


# ---------------------------------------------------------------------------
# per-observation operations
# ---------------------------------------------------------------------------

def choice_probabilities(delta: CoefficientBundle, x: np.ndarray) -> np.ndarray:
    """Softmax choice probabilities over the J alternatives."""
    return softmax_rows(_utilities(delta, x))


def log_likelihood(obs: Observation, delta: CoefficientBundle) -> float:
    """sum_j y_j log p_j, computed from stabilized log-probabilities."""
    logp = log_softmax_rows(_utilities(delta, obs.x))
    return float(obs.y @ logp)


def score(obs: Observation, delta: CoefficientBundle) -> np.ndarray:
    """Gradient of the negative log-likelihood w.r.t. the free vector: -T (y - p)."""
    p = choice_probabilities(delta, obs.x)
    return -t_matrix(obs.x, delta.reference) @ (obs.y - p)


def hessian_target(x: np.ndarray, delta: CoefficientBundle) -> np.ndarray:
    """Hessian of the negative log-likelihood: T (diag(p) - p p') T'.

    Symmetric PSD and independent of the realized choice; this is the
    per-observation regression target for the conditional expected
    Hessian.
    """
    p = choice_probabilities(delta, x)
    t = t_matrix(x, delta.reference)
    g_dot = np.diag(p) - np.outer(p, p)
    z = t @ g_dot @ t.T
    return 0.5 * (z + z.T)


# ---------------------------------------------------------------------------
# upper-triangle packing for the nuisance regression
# ---------------------------------------------------------------------------

def packed_length(n_free: int) -> int:
    return n_free * (n_free + 1) // 2


def pack_upper(z: np.ndarray) -> np.ndarray:
    """Row-major upper triangle of a symmetric matrix, length L(L+1)/2."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise InputError(f"expected a square matrix, got {z.shape}")
    rows, cols = np.triu_indices(z.shape[0])
    return z[rows, cols]


def unpack_upper(v: np.ndarray) -> np.ndarray:
    """Inverse of pack_upper; exact round-trip."""
    v = np.asarray(v, dtype=float)
    m = v.shape[-1]
    n = int((np.sqrt(8 * m + 1) - 1) / 2 + 0.5)
    if packed_length(n) != m:
        raise InputError(f"length {m} is not a triangular number")
    z = np.zeros((n, n))
    rows, cols = np.triu_indices(n)
    z[rows, cols] = v
    z[cols, rows] = v
    return z


# ---------------------------------------------------------------------------
# batched variants (hot paths; identical math, vectorized over observations)
# ---------------------------------------------------------------------------

def batch_utilities(free: np.ndarray, x: np.ndarray, reference: int) -> np.ndarray:
    """Utilities for a batch: free (N, L), x (N, J, K) -> (N, J)."""
    n, n_alt, _ = x.shape
    n_alpha = n_alt - 1
    v = np.einsum("njk,nk->nj", x, free[:, n_alpha:])
    keep = np.flatnonzero(np.arange(n_alt) != reference)
    v[:, keep] += free[:, :n_alpha]
    return v


def batch_probabilities(free: np.ndarray, x: np.ndarray, reference: int) -> np.ndarray:
    return softmax_rows(batch_utilities(free, x, reference))


def batch_log_likelihood(y: np.ndarray, x: np.ndarray, free: np.ndarray, reference: int) -> np.ndarray:
    logp = log_softmax_rows(batch_utilities(free, x, reference))
    return np.einsum("nj,nj->n", y, logp)


def batch_scores(y: np.ndarray, x: np.ndarray, free: np.ndarray, reference: int) -> np.ndarray:
    """Per-observation negative log-likelihood gradients, stacked (N, L)."""
    p = batch_probabilities(free, x, reference)
    resid = y - p
    keep = np.flatnonzero(np.arange(x.shape[1]) != reference)
    alpha_part = -resid[:, keep]
    beta_part = -np.einsum("nj,njk->nk", resid, x)
    return np.concatenate([alpha_part, beta_part], axis=1)


def batch_hessian_targets(x: np.ndarray, free: np.ndarray, reference: int) -> np.ndarray:
    """Stacked T (diag(p) - p p') T' matrices, shape (N, L, L)."""
    n, n_alt, n_attr = x.shape
    p = batch_probabilities(free, x, reference)
    keep = np.flatnonzero(np.arange(n_alt) != reference)
    # t[n] is the L x J map from utilities to free parameters
    t = np.zeros((n, n_alt - 1 + n_attr, n_alt))
    t[:, np.arange(n_alt - 1), keep] = 1.0
    t[:, n_alt - 1:, :] = np.swapaxes(x, 1, 2)
    tp = np.einsum("nlj,nj->nl", t, p)
    z = np.einsum("nlj,nj,nmj->nlm", t, p, t) - np.einsum("nl,nm->nlm", tp, tp)
    return 0.5 * (z + np.swapaxes(z, 1, 2))
