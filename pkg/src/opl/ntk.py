"""Finite-width neural tangent kernel at an initialization snapshot.

A feature is the gradient of one output coordinate y_j with respect to the
hidden weights.  For fully-connected and residual layers each block is the
rank-1 pair (u_l, h_{l-1}) with gradient u_l h_{l-1}^T, so kernels and
linearized outputs reduce to vector inner products.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import cg

from .netcore import Kind, NetworkParams, backward, forward
from .reports import ProbeReport
from .theoryprobes import (
    Mode,
    Perturbation,
    PerturbationSpec,
    gradient_directions,
    perturbation_matrices,
    perturbed_forward,
    random_directions,
)


def snapshot_id(params: NetworkParams) -> str:
    """Cheap identity of a weight snapshot: arch, seed, and the first row of every matrix."""
    h = hashlib.sha256(repr((params.arch.to_dict(), int(params.seed))).encode())
    for M in [params.A, *params.W, params.B]:
        h.update(np.ascontiguousarray(M.reshape(M.shape[0], -1)[0], dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class NtkFeature:
    """Per-layer blocks of grad_W y_j: (u, h) pairs or dense arrays."""

    blocks: list
    j: int
    snapshot: str

    def layer(self, l: int) -> np.ndarray:
        b = self.blocks[l]
        return np.outer(*b) if isinstance(b, tuple) else b

    def flatten(self) -> np.ndarray:
        """Full flattened gradient; test oracle only (O(m^2 L) memory)."""
        return np.concatenate([self.layer(l).ravel() for l in range(len(self.blocks))])

    def norm_sq(self) -> float:
        return _block_inner(self.blocks, self.blocks)


def _pair_inner(a, b) -> float:
    if isinstance(a, tuple) and isinstance(b, tuple):
        return float(np.dot(a[0], b[0]) * np.dot(a[1], b[1]))
    A = np.outer(*a) if isinstance(a, tuple) else a
    B = np.outer(*b) if isinstance(b, tuple) else b
    return float(np.sum(A * B))


def _block_inner(x, y) -> float:
    return float(sum(_pair_inner(a, b) for a, b in zip(x, y)))


def _features_from_gradset(grads, n, j, snap):
    out = []
    for i in range(n):
        blocks = []
        for f, dense in zip(grads.factors, grads.dense):
            if dense is not None:
                raise ValueError("batched dense blocks are not separable per sample")
            blocks.append((f[0][i].copy(), f[1][i].copy()))
        out.append(NtkFeature(blocks, j, snap))
    return out


def ntk_feature(params0: NetworkParams, x, j: int = 0, *, snapshot: str | None = None) -> NtkFeature:
    """Exact gradient of output j at one input, via backward with loss vector e_j."""
    d = params0.arch.output_dim
    if not 0 <= j < d:
        raise ValueError(f"output index {j} outside [0, {d})")
    snap = snapshot or snapshot_id(params0)
    trace = forward(params0, x)
    if trace.n != 1:
        raise ValueError("ntk_feature takes a single input")
    V = np.zeros((1, d))
    V[0, j] = 1.0
    grads = backward(params0, trace, V)
    blocks = []
    for f, dense in zip(grads.factors, grads.dense):
        blocks.append(dense if dense is not None else (f[0][0], f[1][0]))
    return NtkFeature(blocks, j, snap)


def ntk_features(params0: NetworkParams, X, j: int = 0) -> list:
    """Features of every row of X in one batched backward pass (factored layers only)."""
    if params0.arch.kind is Kind.CONV:
        snap = snapshot_id(params0)
        return [ntk_feature(params0, x, j, snapshot=snap) for x in np.atleast_2d(X)]
    trace = forward(params0, X)
    V = np.zeros((trace.n, params0.arch.output_dim))
    V[:, j] = 1.0
    return _features_from_gradset(backward(params0, trace, V), trace.n, j, snapshot_id(params0))


def feature_inner(f: NtkFeature, g: NtkFeature) -> float:
    if f.snapshot != g.snapshot:
        raise ValueError("features come from different weight snapshots")
    return _block_inner(f.blocks, g.blocks)


def ntk_kernel(params0: NetworkParams, x, x2) -> np.ndarray:
    """Per-output kernel values K_j(x, x2), j = 0..d-1."""
    snap = snapshot_id(params0)
    out = np.empty(params0.arch.output_dim)
    for j in range(out.size):
        out[j] = feature_inner(ntk_feature(params0, x, j, snapshot=snap), ntk_feature(params0, x2, j, snapshot=snap))
    return out


def gram(params0: NetworkParams, X, j: int = 0) -> np.ndarray:
    """n x n kernel matrix sum_l (U_l U_l^T) * (H_l H_l^T)."""
    if params0.arch.kind is Kind.CONV:
        feats = ntk_features(params0, X, j)
        n = len(feats)
        K = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                K[a, b] = K[b, a] = feature_inner(feats[a], feats[b])
        return K
    trace = forward(params0, X)
    V = np.zeros((trace.n, params0.arch.output_dim))
    V[:, j] = 1.0
    grads = backward(params0, trace, V)
    K = np.zeros((trace.n, trace.n))
    for U, H in grads.factors:
        K += (U @ U.T) * (H @ H.T)
    return 0.5 * (K + K.T)


def export_gram_csv(Ks: dict, path) -> Path:
    """Rows (row, col, j, value) for each per-output kernel matrix in ``Ks`` (j -> matrix)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "j", "value"])
        for j, K in sorted(Ks.items()):
            for a in range(K.shape[0]):
                for b in range(K.shape[1]):
                    w.writerow([a, b, j, repr(float(K[a, b]))])
    return path


def kernel_regression_cg(K: np.ndarray, y, *, ridge: float = 0.0, tol: float = 1e-10):
    """Diagnostic fit alpha = (K + ridge I)^{-1} y by conjugate gradients; returns (alpha, info)."""
    A = K + ridge * np.eye(K.shape[0])
    alpha, info = cg(A, np.asarray(y, dtype=np.float64).ravel(), rtol=tol, maxiter=10 * K.shape[0])
    return alpha, info


def ntk_objective(params0: NetworkParams, Wprime, x, j: int = 0, *, feature: NtkFeature | None = None) -> float:
    """<grad y_j(W0; x), W'> = sum_l u_l^T W'_l h_{l-1}."""
    f = feature or ntk_feature(params0, x, j)
    deltas = Wprime.deltas if isinstance(Wprime, Perturbation) else list(Wprime)
    if len(deltas) != len(f.blocks):
        raise ValueError(f"W' has {len(deltas)} layers, network has {len(f.blocks)}")
    total = 0.0
    for b, D in zip(f.blocks, deltas):
        if isinstance(D, tuple):
            if not isinstance(b, tuple):
                D = D[0].T @ D[1]
            else:
                total += float(np.dot(D[0] @ b[0], D[1] @ b[1]))
                continue
        D = np.asarray(D)
        if isinstance(b, tuple):
            if D.shape != (b[0].size, b[1].size):
                raise ValueError(f"W' block has shape {D.shape}, expected {(b[0].size, b[1].size)}")
            total += float(b[0] @ (D @ b[1]))
        else:
            if D.shape != b.shape:
                raise ValueError(f"W' block has shape {D.shape}, expected {b.shape}")
            total += float(np.sum(b * D))
    return total


def perturbed_feature(params0: NetworkParams, pert: Perturbation | None, x, j: int = 0) -> tuple[NtkFeature, float]:
    """grad y_j at W0 + W' (rank-1 blocks) and y_j there, without materializing W0 + W'."""
    trace = perturbed_forward(params0, x, pert)
    L = params0.L
    R = params0.B[j : j + 1].copy()
    blocks = [None] * L
    for l in range(L, 0, -1):
        delta = R * trace.D[l]
        blocks[l - 1] = (delta[0], trace.h[l - 1][0])
        nxt = delta @ params0.W[l - 1]
        if pert is not None:
            nxt += pert.backward_term(l, delta)
        R = nxt
    return NtkFeature(blocks, j, "perturbed"), float(trace.y[0, j])


def _rank1_diff_fro(a, b) -> float:
    """||u1 h1^T - u2 h2^T||_F from inner products."""
    (u1, h1), (u2, h2) = a, b
    sq = (u1 @ u1) * (h1 @ h1) + (u2 @ u2) * (h2 @ h2) - 2.0 * (u1 @ u2) * (h1 @ h2)
    return math.sqrt(max(sq, 0.0))


def gradient_deviation_ratio(f0: NtkFeature, f1: NtkFeature) -> float:
    num = math.sqrt(sum(_rank1_diff_fro(a, b) ** 2 for a, b in zip(f1.blocks, f0.blocks)))
    return num / math.sqrt(f0.norm_sq())


@dataclass
class NtkEquivalenceReport:
    omega: float
    m: int
    grad_ratio: list
    first_order_residual: list
    kernel_dev: list
    kernel_dev_abs: list

    def row(self) -> list:
        return [self.omega, self.m, max(self.grad_ratio), max(self.first_order_residual), max(self.kernel_dev)]


EQUIV_HEADER = ["omega", "m", "grad_ratio", "first_order_residual", "kernel_dev"]


def ntk_equivalence_point(params0: NetworkParams, pert: Perturbation | None, x, x2, *, omega: float) -> NtkEquivalenceReport:
    d = params0.arch.output_dim
    ga, res, kd, kda = [], [], [], []
    for j in range(d):
        f0 = ntk_feature(params0, x, j)
        f0b = ntk_feature(params0, x2, j, snapshot=f0.snapshot)
        y0 = float(forward(params0, x).y[0, j])
        f1, y1 = perturbed_feature(params0, pert, x, j)
        f1b, _ = perturbed_feature(params0, pert, x2, j)
        lin = 0.0 if pert is None else ntk_objective(params0, pert, x, j, feature=f0)
        ga.append(gradient_deviation_ratio(f0, f1))
        res.append(abs(y1 - y0 - lin))
        k0 = _block_inner(f0.blocks, f0b.blocks)
        k1 = _block_inner(f1.blocks, f1b.blocks)
        kda.append(abs(k1 - k0))
        kd.append(abs(k1 - k0) / abs(k0) if k0 != 0 else math.inf)
    return NtkEquivalenceReport(omega, params0.hidden_size, ga, res, kd, kda)


@dataclass
class NtkSweep:
    points: list
    residual: ProbeReport
    grad_ratio: ProbeReport

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EQUIV_HEADER)
            for p in self.points:
                w.writerow([repr(float(v)) for v in p.row()])
        return path


def ntk_equivalence(
    params0: NetworkParams,
    omegas,
    x,
    x2,
    *,
    mode=Mode.TARGETED,
    seed: int = 0,
    residual_window=(1.1, 1.55),
    grad_window=(0.15, 0.55),
) -> NtkSweep:
    """First-order residual and gradient deviation across an omega sweep, with log-log slope checks.

    Targeted perturbations attack x and only push units whose backward
    weight toward y_0 is positive, so the kink errors add up rather than
    cancel; this is the adversarial direction the first-order bound covers.
    """
    from .datagen import Dataset

    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    mode = Mode(mode)
    points = []
    ds = Dataset(np.vstack([x, x2]), np.zeros((2, params0.arch.output_dim)))
    directions = None
    for om in omegas:
        om = float(om)
        if om == 0.0:
            points.append(ntk_equivalence_point(params0, None, x, x2, omega=0.0))
            continue
        spec = PerturbationSpec(om, mode, seed, target=0, coherent_output=0 if mode is Mode.TARGETED else None)
        if mode is Mode.TARGETED:
            pert = perturbation_matrices(params0, spec, ds)
        else:
            if directions is None:
                if mode is Mode.GRADIENT:
                    directions = gradient_directions(params0, ds)
                directions = directions or random_directions(params0, seed)
            pert = Perturbation(directions, spec).scaled(om)
        points.append(ntk_equivalence_point(params0, pert, x, x2, omega=om))
    om = [p.omega for p in points]
    residual = ProbeReport(
        "ntk_first_order_residual",
        {"omega": om, "value": [max(p.first_order_residual) for p in points]},
        {"kind": "slope", "x": "omega", "y": "value", "lo": residual_window[0], "hi": residual_window[1]},
        predicted="slope 4/3",
        meta={"m": params0.hidden_size, "L": params0.L, "mode": mode.value},
    )
    grad_ratio = ProbeReport(
        "ntk_grad_deviation",
        {"omega": om, "value": [max(p.grad_ratio) for p in points]},
        {"kind": "slope", "x": "omega", "y": "value", "lo": grad_window[0], "hi": grad_window[1]},
        predicted="slope 1/3",
        meta={"m": params0.hidden_size, "L": params0.L, "mode": mode.value},
    )
    return NtkSweep(points, residual, grad_ratio)
