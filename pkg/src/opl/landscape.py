"""Landscape probes near initialization.

Gradient lower/upper bound ratios, the semi-smoothness residual
R = F(W + W') - F(W) - <grad F(W), W'>, Oja iteration for the most
negatively curved direction of a Gaussian-smoothed Hessian, and 2-D slices
of F along two orthonormal directions.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from .linalg import lowrank_spectral_norm, spectral_norm
from .losses import L2Loss
from .netcore import NetworkParams, Role, backward, keyed_normal, objective
from .reports import ProbeReport
from .theoryprobes import Perturbation, perturbed_forward, targeted_batch

OJA_STEPS = 300
SMOOTHING_SAMPLES = 8
MAX_GRID_EVALS = 10_000


# ---------------------------------------------------------------- gradient bounds


@dataclass
class GradientBoundPoint:
    m: int
    F: float
    r_low: float
    r_up: list
    skipped: bool = False


def gradient_bound_probe(params: NetworkParams, dataset, loss=None, *, delta: float | None = None) -> GradientBoundPoint:
    """r_low = ||grad_{W_L} F||^2 d n^2 / (F delta m) and r_up_l = ||grad_{W_l} F||^2 d / (F n m)."""
    obj = objective(params, dataset, loss)
    m, n, d = params.hidden_size, dataset.n, params.arch.output_dim
    if obj.value < 1e-14:
        return GradientBoundPoint(m, obj.value, float("nan"), [], skipped=True)
    delta = dataset.certified_delta if delta is None else delta
    norms = backward(params, obj.trace, obj.loss_vectors).norms
    F = obj.value
    r_low = norms[-1] ** 2 * d * n * n / (F * delta * m)
    r_up = (norms**2 * d / (F * n * m)).tolist()
    return GradientBoundPoint(m, F, float(r_low), r_up)


def gradient_bound_sweep(points_by_width: dict, factor: float = 5.0) -> ProbeReport:
    """Across widths: floors of r_low within ``factor`` and strictly positive; caps of r_up within ``factor``."""
    widths = sorted(points_by_width)
    floors, caps = [], []
    for m in widths:
        pts = [p for p in points_by_width[m] if not p.skipped]
        floors.append(min(p.r_low for p in pts) if pts else float("nan"))
        caps.append(max(max(p.r_up) for p in pts) if pts else float("nan"))
    rule = {
        "kind": "all",
        "rules": [
            {"kind": "min_ge", "key": "r_low_floor", "lo": 1e-300},
            {"kind": "ratio_within", "key": "r_low_floor", "factor": factor},
            {"kind": "ratio_within", "key": "r_up_cap", "factor": factor},
        ],
    }
    return ProbeReport(
        "gradient_bounds",
        {"m": widths, "r_low_floor": floors, "r_up_cap": caps},
        rule,
        predicted="r_low = Omega(1), r_up = O(1) uniformly in m",
    )


# ---------------------------------------------------------------- semi-smoothness


def _grad_inner(grads, pert: Perturbation) -> float:
    """<grad F, W'> summed over layers without forming grad F."""
    total = 0.0
    for l, (U, H) in enumerate(grads.factors, start=1):
        D = pert.deltas[l - 1]
        if isinstance(D, tuple):
            total += float(np.sum((U @ D[0].T) * (H @ D[1].T)))
        else:
            total += float(np.sum((U @ D) * H))
    return total


def _unit_random(params, seed, k):
    out = []
    for l, W in enumerate(params.W, start=1):
        G = keyed_normal(seed * 1000 + k, Role.PERTURB, l, W.shape, 1.0)
        G /= spectral_norm(G, seed=k).value
        out.append(G)
    return out


@dataclass
class SemiSmoothReport:
    m: int
    omega1: float
    F_center: float
    omega2: list
    residual: list  # per omega2, per direction
    a: float
    c: float
    r2: float
    holdout_max_ratio: float
    descent_fraction: float
    zero_residual: float
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.r2 >= 0.9 and self.holdout_max_ratio <= 2.0 and self.descent_fraction >= 0.95


def resid_F(params, dataset, loss, pert) -> float:
    return float(np.sum(loss.value(perturbed_forward(params, dataset.X, pert).y, dataset.Y)))


def _envelope_fit(w, sqrtF, R):
    """Upper envelope a w sqrt(F) + c w^2 of |R|.

    NNLS with relative weights gives the shape (R^2 measured in log space),
    then both coefficients are scaled up so no fitted point lies above it.
    """
    y = np.maximum(np.abs(R), 1e-300)
    X = np.column_stack([w * sqrtF, w * w])
    wts = 1.0 / np.maximum(y, 1e-300)
    (a, c), _ = nnls(X * wts[:, None], y * wts)
    pred = np.maximum(X @ np.array([a, c]), 1e-300)
    ly, lp = np.log(y), np.log(pred)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - lp) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    # lift the central fit until it covers every fitted point
    lift = max(1.0, float(np.max(y / pred)))
    return float(a * lift), float(c * lift), r2


def semi_smoothness_probe(
    params0: NetworkParams,
    dataset,
    omega1: float,
    omega2s,
    *,
    directions: int = 4,
    seed: int = 0,
    loss=None,
    descent_omegas=None,
    targeted: bool = True,
) -> SemiSmoothReport:
    """Residuals R around W = W0 + (random perturbation of spectral norm omega1).

    Fits the envelope |R| <= a omega2 sqrt(F) + c omega2^2 on even-indexed
    directions, checks held-out directions stay within 2x of it, and checks
    that negative-gradient steps of norm omega2 decrease F.
    """
    loss = loss or L2Loss()
    notes = []
    if omega1 * params0.L**1.5 > 1.0:
        notes.append(f"omega1 * L^1.5 = {omega1 * params0.L**1.5:.3g} > 1: outside the semi-smoothness radius")
    base = Perturbation(_unit_random(params0, seed, 0)).scaled(omega1)
    center = base.apply(params0)
    obj = objective(center, dataset, loss)
    F = obj.value
    grads = backward(center, obj.trace, obj.loss_vectors)
    dirs = [Perturbation(_unit_random(params0, seed, k + 1)) for k in range(directions)]
    omega2s = [float(w) for w in omega2s]
    cols = directions + (dataset.n if targeted else 0)
    R = np.zeros((len(omega2s), cols))

    def resid(P):
        return resid_F(center, dataset, loss, P) - F - _grad_inner(grads, P)

    for a_i, w in enumerate(omega2s):
        for k, D in enumerate(dirs):
            R[a_i, k] = resid(D.scaled(w))
        if targeted:
            tb = targeted_batch(center, dataset.X, w)
            for i in range(dataset.n):
                R[a_i, directions + i] = resid(tb.row(i))
    zero = resid(dirs[0].scaled(0.0))
    w = np.asarray(omega2s)
    absR = np.abs(R)
    train = np.zeros(cols, dtype=bool)
    train[0::2] = True
    # the bound is a sup over W', so the envelope is fitted to the per-omega2 maximum
    a, c, r2 = _envelope_fit(w, math.sqrt(F), absR[:, train].max(axis=1))
    env = a * w * math.sqrt(F) + c * w * w
    ratio = float(np.max(absR[:, ~train] / env[:, None])) if env.min() > 0 else float("inf")
    if descent_omegas is None:
        descent_omegas = np.logspace(-6, -3, 20)
    gdirs = [(-U, H) for U, H in grads.factors]
    gnorm = max(lowrank_spectral_norm(*g) for g in gdirs)
    wins = [resid_F(center, dataset, loss, Perturbation([(U * (s / gnorm), H) for U, H in gdirs])) < F for s in descent_omegas]
    return SemiSmoothReport(
        params0.hidden_size, omega1, F, omega2s, R.tolist(), a, c, r2, ratio, float(np.mean(wins)), zero, notes
    )


def semi_smoothness_width_report(reports: list) -> ProbeReport:
    """First-order coefficient a across widths at fixed omega1 sqrt(m); expected to shrink."""
    reports = sorted(reports, key=lambda r: r.m)
    return ProbeReport(
        "semi_smoothness_first_order",
        {"m": [r.m for r in reports], "a": [r.a for r in reports], "r2": [r.r2 for r in reports]},
        {"kind": "decreasing", "key": "a"},
        predicted="first-order coefficient shrinks with m",
    )


# ---------------------------------------------------------------- Oja iteration


@dataclass
class OjaResult:
    direction: np.ndarray
    rayleigh: float
    rayleigh_history: list
    converged: bool
    steps: int
    gradient_rayleigh: float | None = None
    settings: dict = field(default_factory=dict)


class SmoothedHessian:
    """Hessian-vector products of the Gaussian-smoothed objective by central differences.

    The smoothing offsets are drawn once, so the operator is fixed and
    Rayleigh quotients of different vectors are comparable.
    """

    def __init__(self, grad_fn: Callable, w0: np.ndarray, radius: float, samples: int = SMOOTHING_SAMPLES, seed: int = 0, fd_step=None):
        if not radius > 0:
            raise ValueError("smoothing radius must be > 0")
        self.grad_fn = grad_fn
        self.w0 = np.asarray(w0, dtype=np.float64)
        rng = np.random.default_rng([seed, int(Role.PROBE), 7])
        self.offsets = rng.standard_normal((samples, self.w0.size)) * radius
        self.h = fd_step if fd_step is not None else radius
        self.evals = 0

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.w0)
        for xi in self.offsets:
            base = self.w0 + xi
            out += self.grad_fn(base + self.h * v) - self.grad_fn(base - self.h * v)
            self.evals += 2
        return out / (2.0 * self.h * len(self.offsets))

    def rayleigh(self, v) -> float:
        v = v / np.linalg.norm(v)
        return float(v @ self(v))


def oja_negative_curvature(
    grad_fn: Callable,
    w0,
    smoothing_radius: float,
    steps: int = OJA_STEPS,
    *,
    smoothing_samples: int = SMOOTHING_SAMPLES,
    seed: int = 0,
    init=None,
    tol: float = 1e-8,
) -> OjaResult:
    """Oja iteration v <- normalize(v - eta H v), eta = 1/(8|rho| + 1), on the smoothed Hessian.

    Starts from ``init`` (e.g. the gradient direction) or a random vector and
    returns the iterate with the smallest Rayleigh quotient seen, so the
    result is never worse than the start.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    H = SmoothedHessian(grad_fn, w0, smoothing_radius, smoothing_samples, seed)
    rng = np.random.default_rng([seed, int(Role.PROBE), 11])
    v = rng.standard_normal(w0.size) if init is None else np.asarray(init, dtype=np.float64).copy()
    v /= np.linalg.norm(v)
    Hv = H(v)
    rho = float(v @ Hv)
    start_rho = rho
    best_v, best_rho = v.copy(), rho
    hist = [rho]
    converged = False
    k = 0
    for k in range(1, steps + 1):
        eta = 1.0 / (8.0 * abs(rho) + 1.0)
        nv = v - eta * Hv
        nv /= np.linalg.norm(nv)
        change = float(np.linalg.norm(nv - v))
        v = nv
        Hv = H(v)
        rho = float(v @ Hv)
        hist.append(rho)
        if rho < best_rho:
            best_v, best_rho = v.copy(), rho
        if change < tol:
            converged = True
            break
    settings = {"radius": smoothing_radius, "samples": smoothing_samples, "steps": steps, "step_rule": "1/(8|rho|+1)"}
    return OjaResult(best_v, best_rho, hist, converged, k, start_rho if init is not None else None, settings)


def flatten_W(Ws) -> np.ndarray:
    return np.concatenate([W.ravel() for W in Ws])


def unflatten_W(vec, like) -> list:
    out, pos = [], 0
    for W in like:
        out.append(vec[pos : pos + W.size].reshape(W.shape))
        pos += W.size
    return out


def network_grad_fn(params: NetworkParams, dataset, loss=None):
    """Flat gradient of F as a function of the flat hidden weights."""

    def g(vec):
        p = params.with_W(unflatten_W(vec, params.W))
        obj = objective(p, dataset, loss)
        return flatten_W(backward(p, obj.trace, obj.loss_vectors).all_layers())

    return g


def default_smoothing_radius(params: NetworkParams) -> float:
    """1e-3 ||W0||_F / sqrt(#params)."""
    total = math.sqrt(sum(float(np.sum(W * W)) for W in params.W))
    count = sum(W.size for W in params.W)
    return 1e-3 * total / math.sqrt(count)


def network_negative_curvature(params: NetworkParams, dataset, loss=None, *, steps=OJA_STEPS, seed=0, radius=None) -> OjaResult:
    """Oja on the network objective, started from the normalized gradient."""
    gfn = network_grad_fn(params, dataset, loss)
    w0 = flatten_W(params.W)
    g = gfn(w0)
    radius = radius or default_smoothing_radius(params)
    return oja_negative_curvature(gfn, w0, radius, steps, seed=seed, init=g if np.any(g) else None)


# ---------------------------------------------------------------- slices


def normalized_gradient_direction(params: NetworkParams, dataset, loss=None) -> tuple[list, float]:
    """(grad F / ||grad F||_F, ||grad F||_F) over all hidden layers."""
    obj = objective(params, dataset, loss)
    grads = backward(params, obj.trace, obj.loss_vectors)
    G = grads.all_layers()
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in G))
    if norm == 0:
        raise ValueError("zero gradient: no gradient direction")
    return [g / norm for g in G], norm


def frob_inner(X, Y) -> float:
    return float(sum(np.sum(a * b) for a, b in zip(X, Y)))


def orthonormalize(D1, D2) -> tuple[list, list]:
    """Gram-Schmidt in the Frobenius inner product over all layers."""
    n1 = math.sqrt(frob_inner(D1, D1))
    if n1 == 0:
        raise ValueError("first direction is zero")
    E1 = [d / n1 for d in D1]
    proj = frob_inner(D2, E1)
    R = [d - proj * e for d, e in zip(D2, E1)]
    n2 = math.sqrt(frob_inner(R, R))
    if n2 < 1e-12:
        raise ValueError("directions are parallel")
    return E1, [r / n2 for r in R]


@dataclass
class LandscapeGrid:
    s1: np.ndarray
    s2: np.ndarray
    F: np.ndarray  # F[a, b] = F(W + s1[a] D1 + s2[b] D2)
    center_id: str
    d1: str
    d2: str
    meta: dict = field(default_factory=dict)
    directions: tuple | None = None

    @property
    def center(self) -> float:
        return float(self.F[len(self.s1) // 2, len(self.s2) // 2])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s1", "s2", "F"])
            for a, x in enumerate(self.s1):
                for b, y in enumerate(self.s2):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.F[a, b]))])
        return path

    def write_sidecar(self, path) -> Path:
        """JSON metadata plus the two directions in the checkpoint binary layout."""
        from .io import _write

        path = Path(path)
        side = {"center": self.center_id, "d1": self.d1, "d2": self.d2, "meta": self.meta, "shape": list(self.F.shape)}
        if self.directions is not None:
            bin_path = path.with_suffix(".dirs.bin")
            D1, D2 = self.directions
            _write(bin_path, {"kind": "landscape_directions", "layers": len(D1)}, [*D1, *D2])
            side["directions_file"] = bin_path.name
        path.write_text(json.dumps(side, indent=2, sort_keys=True))
        return path


def _axis(extent: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("grid needs at least one step per axis")
    if steps == 1:
        return np.zeros(1)
    k = (steps - 1) / 2.0
    return extent * (np.arange(steps) - k) / k


def landscape_slice(
    params: NetworkParams,
    dataset,
    D1,
    D2,
    *,
    extent=(1.0, 1.0),
    steps=(11, 11),
    loss=None,
    orthonormal: bool = True,
    labels=("gradient", "negative_curvature"),
    max_evals: int = MAX_GRID_EVALS,
) -> LandscapeGrid:
    """F on the affine grid W + s1 D1 + s2 D2; odd step counts put the exact center on the grid."""
    from .ntk import snapshot_id

    if steps[0] * steps[1] > max_evals:
        raise ValueError(f"grid of {steps[0]}x{steps[1]} exceeds the evaluation budget {max_evals}")
    if orthonormal:
        D1, D2 = orthonormalize(D1, D2)
    s1, s2 = _axis(extent[0], steps[0]), _axis(extent[1], steps[1])
    loss = loss or L2Loss()
    F = np.empty((s1.size, s2.size))
    for a, x in enumerate(s1):
        for b, y in enumerate(s2):
            W = [w + (x * d1 + y * d2) for w, d1, d2 in zip(params.W, D1, D2)]
            F[a, b] = objective(params.with_W(W), dataset, loss).value
    meta = {"m": params.hidden_size, "L": params.L, "loss": loss.kind.value, "extent": list(extent), "steps": list(steps)}
    return LandscapeGrid(s1, s2, F, snapshot_id(params), labels[0], labels[1], meta, (D1, D2))
