"""Fully-connected deep ReLU network with explicit forward/backward formulas.

Network: h_0 = relu(A x), h_l = relu(W_l h_{l-1}) for l = 1..L, y = B h_L.
Weights are drawn from a keyed Gaussian stream so every matrix row can be
regenerated from (seed, role, layer, row) alone.

Batched arrays keep samples on the leading axis: inputs X are (n, in_dim),
layer activations are (n, width).  ``W`` is a python list, so ``W[0]`` is the
first hidden matrix W_1.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .linalg import lowrank_fro_sq
from .losses import L2Loss, LossFunction

DEFAULT_MEMORY_BUDGET = 3 * 2**30  # bytes of float64 weights


class Kind(str, Enum):
    FC = "fc"
    CONV = "conv"
    RESIDUAL = "residual"


class Role(IntEnum):
    A = 1
    W = 2
    B = 3
    BIAS = 4
    PERTURB = 5
    DATA = 6
    PROBE = 7


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    width: int
    output_dim: int = 1
    depth: int = 1
    kind: Kind = Kind.FC

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.width < 1 or self.depth < 1 or self.output_dim < 1:
            raise ValueError(f"width, depth and output_dim must be >= 1, got {self}")
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2: the last coordinate is the constant 1/sqrt(2)")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "width": self.width,
            "output_dim": self.output_dim,
            "depth": self.depth,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(d["input_dim"], d["width"], d["output_dim"], d["depth"], Kind(d["kind"]))


def keyed_normal(seed: int, role: int, layer: int, shape, std: float) -> np.ndarray:
    """Gaussian array whose row r depends only on (seed, role, layer, r).

    Rows are the leading axes flattened; each row gets its own Philox
    stream so the result does not depend on generation order.
    """
    shape = tuple(int(s) for s in shape)
    out = np.empty(shape, dtype=np.float64)
    flat = out.reshape(-1, shape[-1])
    for r in range(flat.shape[0]):
        ss = np.random.SeedSequence([int(seed), int(role), int(layer), r])
        np.random.Generator(np.random.Philox(ss)).standard_normal(shape[-1], out=flat[r])
    out *= std
    return out


@dataclass
class NetworkParams:
    A: np.ndarray
    W: list
    B: np.ndarray
    arch: ArchSpec
    seed: int = 0
    bias: list | None = None  # conv only: per-layer biases, already unscaled by tau
    ext: object = None  # ConvSpec / ResidualSpec for the structured architectures

    @property
    def L(self) -> int:
        return len(self.W)

    @property
    def hidden_size(self) -> int:
        """Length of each hidden activation vector h_l."""
        return self.B.shape[1]

    def with_W(self, W: list) -> "NetworkParams":
        """Same A, B, biases; new hidden weights."""
        return replace(self, W=list(W))

    def copy(self) -> "NetworkParams":
        return replace(
            self,
            A=self.A.copy(),
            W=[w.copy() for w in self.W],
            B=self.B.copy(),
            bias=None if self.bias is None else [b.copy() for b in self.bias],
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in [self.A, *self.W, self.B, *(self.bias or [])]:
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def nbytes(self) -> int:
        return sum(a.nbytes for a in [self.A, *self.W, self.B, *(self.bias or [])])


def relu(v):
    """Elementwise max(v, 0)."""
    return np.maximum(v, 0.0)


def fc_weight_bytes(arch: ArchSpec) -> int:
    m = arch.width
    return 8 * (m * arch.input_dim + arch.depth * m * m + arch.output_dim * m)


def init_network(
    arch: ArchSpec,
    seed: int,
    *,
    ext=None,
    output_scale: float = 1.0,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> NetworkParams:
    """Random initialization: A, W_l entries N(0, 2/m); B entries N(0, 1/d).

    ``output_scale`` multiplies B (scaled-down initialization variant).
    """
    if arch.kind is not Kind.FC:
        from . import archext

        return archext.init_structured(arch, seed, ext=ext, output_scale=output_scale, memory_budget=memory_budget)
    need = fc_weight_bytes(arch)
    if need > memory_budget:
        raise MemoryError(f"network needs {need / 2**30:.2f} GiB of weights, budget is {memory_budget / 2**30:.2f} GiB")
    m, d = arch.width, arch.output_dim
    std = np.sqrt(2.0 / m)
    A = keyed_normal(seed, Role.A, 0, (m, arch.input_dim), std)
    W = [keyed_normal(seed, Role.W, l, (m, m), std) for l in range(1, arch.depth + 1)]
    B = keyed_normal(seed, Role.B, 0, (d, m), np.sqrt(1.0 / d) * output_scale)
    return NetworkParams(A, W, B, arch, seed)


@dataclass
class ForwardTrace:
    """Everything the forward pass computes, for a batch of n inputs.

    ``g[l]``, ``h[l]``, ``D[l]`` for l = 0..L each have shape (n, width);
    D is the boolean sign pattern 1{g >= 0}.  ``x`` is h_{-1}.
    """

    x: np.ndarray
    g: list
    h: list
    D: list
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def sample(self, i: int) -> "ForwardTrace":
        s = slice(i, i + 1)
        return ForwardTrace(self.x[s], [a[s] for a in self.g], [a[s] for a in self.h], [a[s] for a in self.D], self.y[s])

    def layer_norms(self) -> np.ndarray:
        """(L+1, n) array of ||h_l|| per layer and sample."""
        return np.array([np.linalg.norm(h, axis=1) for h in self.h])


def _as_batch(params: NetworkParams, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise ValueError(f"input has shape {np.shape(x)}, expected (..., {params.arch.input_dim})")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    return X


def _check_finite(trace: ForwardTrace) -> ForwardTrace:
    if not np.all(np.isfinite(trace.y)):
        raise FloatingPointError("forward pass produced non-finite outputs")
    return trace


def forward(params: NetworkParams, x) -> ForwardTrace:
    """Forward pass storing every g_l, h_l, D_l.  ``x`` is (in_dim,) or (n, in_dim)."""
    X = _as_batch(params, x)
    kind = params.arch.kind
    if kind is Kind.FC:
        return _check_finite(_forward_fc(params, X))
    from . import archext

    return _check_finite(archext.forward_structured(params, X))


def _forward_fc(params: NetworkParams, X: np.ndarray) -> ForwardTrace:
    g = X @ params.A.T
    gs, hs, Ds = [g], [relu(g)], [g >= 0]
    for W in params.W:
        g = hs[-1] @ W.T
        gs.append(g)
        hs.append(relu(g))
        Ds.append(g >= 0)
    y = hs[-1] @ params.B.T
    return ForwardTrace(X, gs, hs, Ds, y)


@dataclass
class GradientSet:
    """Per-layer gradients of sum_i <v_i, y_i> with respect to W_1..W_L.

    Fully-connected and residual layers keep the rank-n factor pair (U, H)
    with dW = U^T H; structured layers keep dense arrays.  ``layer(l)``
    materializes one matrix (0-based index), ``norms`` never does.
    """

    factors: list
    dense: list
    dA: np.ndarray | None = None
    dB: np.ndarray | None = None

    def __len__(self):
        return len(self.factors)

    def layer(self, l: int) -> np.ndarray:
        if self.dense[l] is not None:
            return self.dense[l]
        U, H = self.factors[l]
        return U.T @ H

    @cached_property
    def norms(self) -> np.ndarray:
        out = np.empty(len(self))
        for l in range(len(self)):
            if self.dense[l] is not None:
                out[l] = np.linalg.norm(self.dense[l])
            else:
                out[l] = np.sqrt(lowrank_fro_sq(*self.factors[l]))
        return out

    @property
    def total_norm(self) -> float:
        return float(np.sqrt(np.sum(self.norms**2)))

    def all_layers(self) -> list:
        return [self.layer(l) for l in range(len(self))]


def backward(params: NetworkParams, trace: ForwardTrace, loss_vectors, *, joint: bool = False) -> GradientSet:
    """Gradient sum_i D_{i,l} (Back_{i,l+1}^T v_i) h_{i,l-1}^T for every layer.

    ``loss_vectors`` is (n, d), one row per traced sample; any vectors may be
    supplied (true loss gradients or fake ones).  With ``joint`` the A and B
    gradients are produced as well.
    """
    V = np.asarray(loss_vectors, dtype=np.float64)
    if V.ndim == 1:
        V = V[None, :]
    if V.shape != (trace.n, params.arch.output_dim):
        raise ValueError(f"loss vectors have shape {V.shape}, expected {(trace.n, params.arch.output_dim)}")
    if params.arch.kind is Kind.FC:
        return _backward_fc(params, trace, V, joint)
    from . import archext

    return archext.backward_structured(params, trace, V, joint)


def _backward_fc(params, trace, V, joint):
    L = params.L
    u = V @ params.B  # rows are Back_{i,L+1}^T v_i
    factors = [None] * L
    for l in range(L, 0, -1):
        delta = u * trace.D[l]
        factors[l - 1] = (delta, trace.h[l - 1])
        u = delta @ params.W[l - 1]
    dA = dB = None
    if joint:
        dA = (u * trace.D[0]).T @ trace.x
        dB = V.T @ trace.h[L]
    return GradientSet(factors, [None] * L, dA, dB)


def back_matrix(params: NetworkParams, trace: ForwardTrace, l: int, sample: int = 0) -> np.ndarray:
    """Back_{l} = B D_L W_L ... D_l W_l (d x m) for one traced sample; Back_{L+1} = B.

    Built one output row at a time by vector-matrix products.
    """
    L = params.L
    if not 1 <= l <= L + 1:
        raise ValueError(f"layer index {l} outside 1..{L + 1}")
    if params.arch.kind is not Kind.FC:
        from . import archext

        return archext.back_matrix_structured(params, trace, l, sample)
    rows = params.B.copy()
    for k in range(L, l - 1, -1):
        rows = (rows * trace.D[k][sample]) @ params.W[k - 1]
    return rows


class Objective(NamedTuple):
    value: float
    loss_vectors: np.ndarray
    trace: ForwardTrace
    per_sample: np.ndarray


def objective(params: NetworkParams, dataset, loss: LossFunction | None = None) -> Objective:
    """F = sum_i f(B h_{i,L}; y*_i) plus the loss vectors grad_z f for reuse by backward."""
    loss = loss or L2Loss()
    trace = forward(params, dataset.X)
    Y = dataset.Y
    if not loss.classification and np.shape(Y) != trace.y.shape:
        raise ValueError(f"labels have shape {np.shape(Y)}, network outputs {trace.y.shape}")
    per = loss.value(trace.y, Y)
    V = loss.grad(trace.y, Y)
    return Objective(float(np.sum(per)), V, trace, per)


def full_gradient(params: NetworkParams, dataset, loss: LossFunction | None = None, *, joint=False):
    obj = objective(params, dataset, loss)
    return obj, backward(params, obj.trace, obj.loss_vectors, joint=joint)


def network_output(params: NetworkParams, x) -> np.ndarray:
    return forward(params, x).y


def finite_difference_check(params: NetworkParams, dataset, loss: LossFunction | None = None, *, h: float = 1e-6) -> float:
    """max_l ||G_fd - G||_F / ||G||_F over hidden layers, G_fd by central differences of F.

    Perturbs every entry, so it is meant for small instances only.
    """
    loss = loss or L2Loss()
    _, grads = full_gradient(params, dataset, loss)
    worst = 0.0
    for l, W in enumerate(params.W):
        fd = np.empty(W.size)
        flat = W.reshape(-1)
        for k in range(W.size):
            old = flat[k]
            flat[k] = old + h
            up = objective(params, dataset, loss).value
            flat[k] = old - h
            down = objective(params, dataset, loss).value
            flat[k] = old
            fd[k] = (up - down) / (2.0 * h)
        G = np.asarray(grads.layer(l)).reshape(-1)
        worst = max(worst, float(np.linalg.norm(fd - G) / max(np.linalg.norm(G), 1e-12)))
    return worst
