"""Normalized, delta-separated synthetic datasets.

Every input has unit norm and last coordinate 1/sqrt(2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .netcore import Role

LAST = 1.0 / math.sqrt(2.0)
MAX_DRAWS = 10**6
NORM_TOL = 1e-12


class InfeasibleError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    certified_delta: float = math.inf
    label_mode: str = "regression"
    seed: int | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("X must be (n, dim)")
        if self.label_mode == "classification":
            self.Y = np.asarray(self.Y, dtype=np.int64).reshape(-1)
        else:
            self.Y = np.asarray(self.Y, dtype=np.float64)
            if self.Y.ndim == 1:
                self.Y = self.Y[:, None]
        if len(self.Y) != len(self.X):
            raise ValueError("X and Y disagree on the number of samples")
        norms = np.linalg.norm(self.X, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL) or np.any(np.abs(self.X[:, -1] - LAST) > NORM_TOL):
            raise ValueError("inputs must have unit norm and last coordinate 1/sqrt(2)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return 1 if self.label_mode == "classification" else self.Y.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.certified_delta, self.label_mode, self.seed)

    def with_labels(self, Y) -> "Dataset":
        return Dataset(self.X, Y, self.certified_delta, self.label_mode, self.seed)


def normalize_inputs(raw) -> np.ndarray:
    """Common rescale to max norm 1/sqrt(2), one pad coordinate lifting every
    norm to exactly 1/sqrt(2), then the constant 1/sqrt(2).  Output dim = raw dim + 2.
    """
    R = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if not np.all(np.isfinite(R)):
        raise ValueError("raw inputs must be finite")
    norms = np.linalg.norm(R, axis=1)
    top = norms.max()
    if top == 0.0:
        raise ValueError("all raw inputs are zero")
    Z = R * (LAST / top)
    # ratio form so the longest row gets a pad of exactly 0
    pad = LAST * np.sqrt(np.clip(1.0 - (norms / top) ** 2, 0.0, None))
    return np.column_stack([Z, pad, np.full(len(Z), LAST)])


def check_delta(data) -> float:
    """Exact minimum pairwise Euclidean distance (exhaustive)."""
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if len(X) < 2:
        raise ValueError("need at least two points")
    return float(pdist(X).min())


def packing_budget(dim: int, delta: float) -> float:
    """Volume upper bound on points of S^{dim-1} with pairwise chord >= delta."""
    if dim == 1:
        return 2.0 if delta <= 2.0 else 1.0
    return (1.0 + 2.0 / delta) ** dim


def generate_separated_dataset(
    n: int,
    input_dim: int,
    delta: float,
    label_mode: str = "regression",
    seed: int = 0,
    *,
    output_dim: int = 1,
    max_draws: int = MAX_DRAWS,
) -> Dataset:
    """Rejection-sample n inputs with pairwise distance >= delta.

    The free part (first input_dim - 1 coordinates) is a uniform direction
    scaled to norm 1/sqrt(2).  Regression labels are standard Gaussian
    vectors shrunk to norm <= 1; classification labels are uniform classes.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if input_dim < 2:
        raise ValueError("input_dim must be >= 2")
    free = input_dim - 1
    # inputs at distance delta have free parts at chord delta * sqrt(2) on the unit sphere
    chord = delta * math.sqrt(2.0)
    if n > packing_budget(free, chord):
        raise InfeasibleError(f"{n} points at separation {delta} exceed the packing bound for dim {free}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(Role.DATA)])))
    pts = np.empty((n, free))
    count = 0
    draws = 0
    while count < n:
        if draws >= max_draws:
            raise InfeasibleError(f"placed {count}/{n} points after {draws} candidate draws")
        c = rng.standard_normal(free)
        nc = np.linalg.norm(c)
        draws += 1
        if nc == 0.0:
            continue
        c /= nc
        if count and np.min(np.linalg.norm(pts[:count] - c, axis=1)) < chord:
            continue
        pts[count] = c
        count += 1
    X = np.column_stack([pts * LAST, np.full(n, LAST)])
    if label_mode == "regression":
        Y = rng.standard_normal((n, output_dim))
        Y /= np.maximum(np.linalg.norm(Y, axis=1, keepdims=True), 1.0)
    elif label_mode == "classification":
        Y = rng.integers(0, output_dim, size=n)
    else:
        raise ValueError(f"unknown label mode {label_mode!r}")
    cert = check_delta(X) if n >= 2 else math.inf
    if cert < delta:
        raise InfeasibleError("internal error: certified separation below target")
    return Dataset(X, Y, cert, label_mode, seed)
