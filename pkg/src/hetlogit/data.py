"""In-memory containers for choice data.

A dataset holds N observations of a one-hot choice over J alternatives,
a J x K matrix of alternative attributes, and a D-vector of
socio-demographics per observation. Containers are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Observation:
    """One choice situation: one-hot outcome y, attributes x, demographics w."""

    y: np.ndarray  # (J,)
    x: np.ndarray  # (J, K)
    w: np.ndarray  # (D,)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise InputError(f"inconsistent shapes: y {y.shape}, x {x.shape}")
        if not (np.isfinite(y).all() and np.isfinite(x).all() and np.isfinite(w).all()):
            raise InputError("observation contains non-finite values")
        ones = np.flatnonzero(y == 1.0)
        if len(ones) != 1 or y.sum() != 1.0:
            raise InputError("y must be one-hot")
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "w", _freeze(w))

    @property
    def chosen(self) -> int:
        return int(np.argmax(self.y))


@dataclass(frozen=True)
class ChoiceDataset:
    """N observations with shared alternative/attribute/feature metadata."""

    y: np.ndarray  # (N, J) one-hot rows
    x: np.ndarray  # (N, J, K)
    w: np.ndarray  # (N, D)
    w_names: tuple[str, ...]
    alt_names: tuple[str, ...]
    attr_names: tuple[str, ...]
    reference: int = 0  # alternative whose intercept is pinned at zero
    obs_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        w = np.asarray(self.w, dtype=float)
        n, j = y.shape
        if x.shape[:2] != (n, j) or w.shape[0] != n:
            raise InputError(f"inconsistent shapes: y {y.shape}, x {x.shape}, w {w.shape}")
        if len(self.alt_names) != j or len(self.attr_names) != x.shape[2]:
            raise InputError("metadata lengths do not match array shapes")
        if len(self.w_names) != w.shape[1]:
            raise InputError("w_names does not match w width")
        if not 0 <= self.reference < j:
            raise InputError(f"reference index {self.reference} out of range")
        if not (np.isfinite(x).all() and np.isfinite(w).all()):
            raise InputError("dataset contains non-finite values")
        if not ((y.sum(axis=1) == 1.0).all() and np.isin(y, (0.0, 1.0)).all()):
            raise InputError("every y row must be one-hot")
        ids = self.obs_ids
        ids = np.arange(n) if ids is None else np.asarray(ids, dtype=int)
        if ids.shape != (n,):
            raise InputError("obs_ids must have one entry per observation")
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "w", _freeze(w))
        object.__setattr__(self, "obs_ids", _freeze(ids))
        object.__setattr__(self, "w_names", tuple(self.w_names))
        object.__setattr__(self, "alt_names", tuple(self.alt_names))
        object.__setattr__(self, "attr_names", tuple(self.attr_names))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_alternatives(self) -> int:
        return self.y.shape[1]

    @property
    def n_attributes(self) -> int:
        return self.x.shape[2]

    @property
    def n_features(self) -> int:
        return self.w.shape[1]

    @property
    def n_free(self) -> int:
        """Length of the free parameter vector: (J - 1) intercepts plus K slopes."""
        return self.n_alternatives - 1 + self.n_attributes

    def subset(self, idx) -> "ChoiceDataset":
        idx = np.asarray(idx, dtype=int)
        return ChoiceDataset(
            y=self.y[idx],
            x=self.x[idx],
            w=self.w[idx],
            w_names=self.w_names,
            alt_names=self.alt_names,
            attr_names=self.attr_names,
            reference=self.reference,
            obs_ids=self.obs_ids[idx],
        )

    def observation(self, i: int) -> Observation:
        return Observation(y=self.y[i], x=self.x[i], w=self.w[i])
