"""Semi-synthetic data generation: true coefficient functions and choice simulation.

The travel-mode generating process evaluates fixed coefficient
functions of the observed socio-demographics exactly (no noise), adds
iid standard Gumbel utility shocks via the inverse CDF, and records the
utility-maximizing alternative. True target values are exact population
means of the functional under the true coefficients. A large-sample
mode resamples covariates independently across variables, creating new
combinations while keeping every marginal inside the observed support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import choice_core
from .data import ChoiceDataset
from .errors import InputError

TRAIN, SM, CAR = 0, 1, 2
ALT_NAMES = ("train", "sm", "car")
ATTR_NAMES = ("cost", "freq", "time")
REFERENCE = CAR  # the car intercept is pinned at zero

ESTIMATION_SHARE = 0.75


@dataclass(frozen=True)
class PopulationFrame:
    """Cleaned covariate base: w and x per observation, optional observed choice."""

    w: np.ndarray                 # (N, D)
    x: np.ndarray                 # (N, J, K)
    w_names: tuple[str, ...]
    alt_names: tuple[str, ...] = ALT_NAMES
    attr_names: tuple[str, ...] = ATTR_NAMES
    reference: int = REFERENCE
    y: np.ndarray | None = None   # (N, J) observed one-hot choices, if any
    obs_ids: np.ndarray | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=float)
        x = np.ascontiguousarray(self.x, dtype=float)
        if w.shape[0] != x.shape[0]:
            raise InputError("w and x row counts differ")
        ids = self.obs_ids
        ids = np.arange(w.shape[0]) if ids is None else np.ascontiguousarray(ids, dtype=int)
        for a in (w, x, ids):
            a.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "obs_ids", ids)
        object.__setattr__(self, "w_names", tuple(self.w_names))
        object.__setattr__(self, "alt_names", tuple(self.alt_names))
        object.__setattr__(self, "attr_names", tuple(self.attr_names))
        if self.y is not None:
            y = np.ascontiguousarray(self.y, dtype=float)
            y.flags.writeable = False
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def feature(self, name: str) -> np.ndarray:
        try:
            return self.w[:, self.w_names.index(name)]
        except ValueError:
            raise InputError(f"missing feature {name!r}; have {list(self.w_names)}") from None

    def select_features(self, names) -> "PopulationFrame":
        idx = [self.w_names.index(n) for n in names]
        return PopulationFrame(
            w=self.w[:, idx], x=self.x, w_names=tuple(names),
            alt_names=self.alt_names, attr_names=self.attr_names,
            reference=self.reference, y=self.y, obs_ids=self.obs_ids)

    def subset(self, idx) -> "PopulationFrame":
        idx = np.asarray(idx, dtype=int)
        return PopulationFrame(
            w=self.w[idx], x=self.x[idx], w_names=self.w_names,
            alt_names=self.alt_names, attr_names=self.attr_names,
            reference=self.reference,
            y=None if self.y is None else self.y[idx],
            obs_ids=self.obs_ids[idx])

    def to_dataset(self, y: np.ndarray | None = None) -> ChoiceDataset:
        outcome = y if y is not None else self.y
        if outcome is None:
            raise InputError("frame has no observed choices; pass simulated y")
        return ChoiceDataset(
            y=outcome, x=self.x, w=self.w, w_names=self.w_names,
            alt_names=self.alt_names, attr_names=self.attr_names,
            reference=self.reference, obs_ids=self.obs_ids)


def estimation_split(n: int, seed: int, share: float = ESTIMATION_SHARE) -> np.ndarray:
    """Seeded uniform subset of round(share * n) observation indices."""
    rng = np.random.default_rng(seed)
    size = int(round(share * n))
    return np.sort(rng.permutation(n)[:size])


# ---------------------------------------------------------------------------
# true coefficient functions
# ---------------------------------------------------------------------------

class SwissmetroCoefficients:
    """Travel-mode coefficient functions of (age, income, male, who dummies).

    alpha_train = -1 + income          beta_cost = -6 + income - 0.8 who1 - who2 - 1.2 who3
    alpha_sm    = -3 + age             beta_freq = -5 + income + 0.9 male
    alpha_car   =  0 (reference)       beta_time = -6 + age
    """

    alt_names = ALT_NAMES
    attr_names = ATTR_NAMES
    reference = REFERENCE
    required_features = ("age", "income", "male", "who1", "who2", "who3")

    def free_matrix(self, w: np.ndarray, w_names) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        idx = {}
        for name in self.required_features:
            if name not in w_names:
                raise InputError(f"missing feature {name!r}; have {list(w_names)}")
            idx[name] = list(w_names).index(name)
        age = w[:, idx["age"]]
        income = w[:, idx["income"]]
        male = w[:, idx["male"]]
        who1, who2, who3 = (w[:, idx[f"who{i}"]] for i in (1, 2, 3))
        return np.column_stack([
            -1.0 + income,                                        # alpha_train
            -3.0 + age,                                           # alpha_sm
            -6.0 + income - 0.8 * who1 - 1.0 * who2 - 1.2 * who3,  # beta_cost
            -5.0 + income + 0.9 * male,                           # beta_freq
            -6.0 + age,                                           # beta_time
        ])

    def interaction_plan(self):
        """Feature lists reproducing the functional form exactly (the oracle design)."""
        return {
            "intercept_features": {TRAIN: ("income",), SM: ("age",)},
            "slope_features": {0: ("income", "who1", "who2", "who3"),
                               1: ("income", "male"),
                               2: ("age",)},
        }


class SimpleLinearCoefficients:
    """Small generating process for property runs: J=3, K=2, two features.

    alpha_a = 0.5 + 0.5 w1            beta_1 = -1 + 0.5 w1 + 0.25 w2
    alpha_b = -0.5 + 0.5 w2           beta_2 =  1 - 0.5 w2
    alpha_c = 0 (reference)
    """

    alt_names = ("a", "b", "c")
    attr_names = ("x1", "x2")
    reference = 2
    required_features = ("w1", "w2")

    def free_matrix(self, w: np.ndarray, w_names) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        w1 = w[:, list(w_names).index("w1")]
        w2 = w[:, list(w_names).index("w2")]
        return np.column_stack([
            0.5 + 0.5 * w1,
            -0.5 + 0.5 * w2,
            -1.0 + 0.5 * w1 + 0.25 * w2,
            1.0 - 0.5 * w2,
        ])

    def interaction_plan(self):
        return {
            "intercept_features": {0: ("w1",), 1: ("w2",)},
            "slope_features": {0: ("w1", "w2"), 1: ("w2",)},
        }


def true_delta(coeffs, w: np.ndarray, w_names) -> choice_core.CoefficientBundle:
    """Exact coefficient bundle for a single w row."""
    free = coeffs.free_matrix(np.atleast_2d(w), w_names)[0]
    return choice_core.CoefficientBundle.from_free(
        free, len(coeffs.alt_names), coeffs.reference)


def true_theta(frame: PopulationFrame, coeffs, targets) -> dict:
    """Exact population mean of each target under the true coefficients."""
    free = coeffs.free_matrix(frame.w, frame.w_names)
    return {
        t.label: float(np.mean(t.batch_values(free, len(coeffs.alt_names), coeffs.reference)))
        for t in targets
    }


# ---------------------------------------------------------------------------
# choice simulation
# ---------------------------------------------------------------------------

def simulate_choices(x: np.ndarray, free: np.ndarray, reference: int, seed: int) -> np.ndarray:
    """One-hot argmax of utility plus iid standard Gumbel noise, -log(-log U)."""
    x = np.asarray(x, dtype=float)
    free = np.atleast_2d(np.asarray(free, dtype=float))
    if free.shape[0] != x.shape[0]:
        raise InputError("free coefficient rows must match x rows")
    v = choice_core.batch_utilities(free, x, reference)
    rng = np.random.default_rng(seed)
    u = np.clip(rng.random(v.shape), 1e-300, 1.0 - 1e-16)
    chosen = np.argmax(v - np.log(-np.log(u)), axis=1)
    y = np.zeros_like(v)
    y[np.arange(v.shape[0]), chosen] = 1.0
    return y


# ---------------------------------------------------------------------------
# large-sample covariate resampling
# ---------------------------------------------------------------------------

def resample_large(frame: PopulationFrame, n: int, seed: int) -> PopulationFrame:
    """Draw each w feature and each (alternative, attribute) column independently.

    Independent draws across variables create new covariate combinations
    while every value stays inside the source column's support.
    Structural zeros (the car frequency column) are preserved.
    """
    if frame.n == 0:
        raise InputError("cannot resample an empty population")
    rng = np.random.default_rng(seed)
    w = np.column_stack([rng.choice(frame.w[:, d], size=n) for d in range(frame.w.shape[1])])
    x = np.empty((n, frame.x.shape[1], frame.x.shape[2]))
    for j in range(frame.x.shape[1]):
        for k in range(frame.x.shape[2]):
            x[:, j, k] = rng.choice(frame.x[:, j, k], size=n)
    return PopulationFrame(w=w, x=x, w_names=frame.w_names, alt_names=frame.alt_names,
                           attr_names=frame.attr_names, reference=frame.reference)


# ---------------------------------------------------------------------------
# synthetic covariate bases (stand-ins when no survey file is available)
# ---------------------------------------------------------------------------

def synthetic_population(n: int, seed: int) -> PopulationFrame:
    """Travel-survey-like covariate base with the cleaned-frame schema.

    Marginals roughly mimic the survey (categorical age/income/who,
    mostly male, attribute columns on the divided-by-100 scale, car
    frequency structurally zero). Draws are independent across columns.
    """
    rng = np.random.default_rng(seed)
    age = rng.choice(np.arange(1, 7), size=n, p=(0.10, 0.22, 0.26, 0.20, 0.14, 0.08))
    income = rng.choice(np.arange(0, 5), size=n, p=(0.08, 0.27, 0.35, 0.22, 0.08))
    male = rng.binomial(1, 0.75, size=n)
    who = rng.choice(np.arange(0, 4), size=n, p=(0.12, 0.45, 0.28, 0.15))
    luggage = rng.choice(np.array([0, 1, 3]), size=n, p=(0.55, 0.38, 0.07))
    w = np.column_stack([
        age, income, male,
        (who == 1).astype(float), (who == 2).astype(float), (who == 3).astype(float),
        luggage,
    ]).astype(float)

    def col(low, high):
        return np.round(rng.uniform(low, high, size=n), 2)

    x = np.zeros((n, 3, 3))
    x[:, TRAIN, 0] = col(0.3, 1.4)   # cost
    x[:, TRAIN, 1] = rng.choice(np.array([0.3, 0.6, 1.2]), size=n, p=(0.55, 0.33, 0.12))
    x[:, TRAIN, 2] = col(0.6, 2.0)   # time
    x[:, SM, 0] = col(0.5, 1.8)
    x[:, SM, 1] = rng.choice(np.array([0.1, 0.2, 0.3]), size=n, p=(0.45, 0.40, 0.15))
    x[:, SM, 2] = col(0.3, 1.1)
    x[:, CAR, 0] = col(0.4, 1.6)
    x[:, CAR, 1] = 0.0               # car has no scheduled frequency
    x[:, CAR, 2] = col(0.7, 2.2)
    return PopulationFrame(
        w=w, x=x,
        w_names=("age", "income", "male", "who1", "who2", "who3", "luggage"))


def synthetic_simple_population(n: int, seed: int) -> PopulationFrame:
    """Covariate base for the small generating process: two uniform features."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 2.0, size=(n, 2))
    x = rng.uniform(-1.0, 1.0, size=(n, 3, 2))
    return PopulationFrame(w=w, x=x, w_names=("w1", "w2"),
                           alt_names=("a", "b", "c"), attr_names=("x1", "x2"),
                           reference=2)
