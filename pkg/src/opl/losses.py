"""Per-sample loss functions f(z; y) acting on network outputs z = B h_L.

Each loss exposes per-sample values and the loss vectors grad_z f(z; y),
which are exactly what the backward pass consumes.
"""
from __future__ import annotations

from enum import Enum
from typing import Callable

import numpy as np
from scipy.special import log_softmax, softmax


class LossKind(str, Enum):
    L2 = "l2"
    CROSS_ENTROPY = "cross_entropy"
    CUSTOM = "custom"


class LossFunction:
    kind: LossKind
    smoothness: float = 1.0
    classification = False

    def value(self, Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, z, y) -> float:
        """Loss of a single output vector."""
        return float(self.value(np.atleast_2d(z), np.asarray(y)[None, ...])[0])

    def gradient(self, z, y) -> np.ndarray:
        return self.grad(np.atleast_2d(z), np.asarray(y)[None, ...])[0]

    def __repr__(self):
        return f"{type(self).__name__}()"


class L2Loss(LossFunction):
    """f(z; y) = 1/2 ||z - y||^2."""

    kind = LossKind.L2

    def value(self, Z, Y):
        R = Z - Y
        return 0.5 * np.sum(R * R, axis=1)

    def grad(self, Z, Y):
        return Z - Y


class CrossEntropyLoss(LossFunction):
    """Softmax cross-entropy with integer class labels."""

    kind = LossKind.CROSS_ENTROPY
    smoothness = 0.5
    classification = True

    def value(self, Z, Y):
        labels = np.asarray(Y, dtype=np.int64).reshape(-1)
        return -log_softmax(Z, axis=1)[np.arange(Z.shape[0]), labels]

    def grad(self, Z, Y):
        labels = np.asarray(Y, dtype=np.int64).reshape(-1)
        P = softmax(Z, axis=1)
        P[np.arange(Z.shape[0]), labels] -= 1.0
        return P


class CustomSmoothLoss(LossFunction):
    """User-supplied smooth loss; ``fn`` and ``grad_fn`` act on a single (z, y) pair."""

    kind = LossKind.CUSTOM

    def __init__(self, fn: Callable, grad_fn: Callable, smoothness: float = 1.0, classification=False):
        self.fn = fn
        self.grad_fn = grad_fn
        self.smoothness = smoothness
        self.classification = classification

    def value(self, Z, Y):
        return np.array([self.fn(z, y) for z, y in zip(Z, Y)], dtype=np.float64)

    def grad(self, Z, Y):
        return np.array([self.grad_fn(z, y) for z, y in zip(Z, Y)], dtype=np.float64).reshape(Z.shape)


def get_loss(name: str | LossKind) -> LossFunction:
    kind = LossKind(name)
    if kind is LossKind.L2:
        return L2Loss()
    if kind is LossKind.CROSS_ENTROPY:
        return CrossEntropyLoss()
    raise ValueError(f"custom losses must be constructed directly, not by name ({name!r})")
