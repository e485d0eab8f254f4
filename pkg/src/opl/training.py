"""Full-batch GD and mini-batch SGD on the hidden weights, with convergence traces.

The SGD update is W <- W - eta * (n/b) sum_{i in S_t} grad F_i with S_t a
uniformly random subset of size b drawn without replacement.  With b = n the
batch is every index in order and the scale is exactly 1, so SGD reproduces
GD bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .linalg import linear_fit, power_iteration
from .losses import L2Loss, LossFunction
from .netcore import GradientSet, NetworkParams, Role, backward, objective

DIVERGENCE_FACTOR = 10.0
TRAILING_FRACTION = 0.8
PILOT_ITERS = 50
SKIP_F = 1e-14


@dataclass
class TrainConfig:
    eta: float
    T: int = 1000
    batch: int | None = None  # None or n means full-batch GD
    eps: float = 1e-3
    track_travel: bool = True
    seed: int = 0
    joint: bool = False
    stop_on_accuracy: bool = True
    travel_spec_every: int = 10
    full_grad_records: bool = True

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be > 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepRecord:
    F: float
    grad_norms: np.ndarray
    per_sample: np.ndarray | None = None

    @property
    def grad_fro_max(self) -> float:
        return float(np.max(self.grad_norms))


TRACE_HEADER = ["t", "F", "grad_fro_max", "travel_fro_max", "travel_spec_max", "accuracy"]


@dataclass
class ConvergenceTrace:
    t: list = field(default_factory=list)
    F: list = field(default_factory=list)
    grad_fro_max: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)  # per-layer full-gradient Frobenius norms
    travel_fro_max: list = field(default_factory=list)
    travel_rel_max: list = field(default_factory=list)
    travel_spec_max: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    status: str = "running"
    eta: float = float("nan")
    batch: int | None = None
    params: NetworkParams | None = None
    loss_kind: str = "l2"
    loss_grad_norm: list = field(default_factory=list)  # ||grad_z f|| summed over samples

    @property
    def iterations(self) -> int:
        """Number of weight updates performed."""
        return max(len(self.t) - 1, 0)

    @property
    def final_F(self) -> float:
        return self.F[-1] if self.F else float("nan")

    def linearity(self) -> tuple[float, float]:
        """(slope, R^2) of log F(t) over the trailing 80% of records."""
        F = np.asarray(self.F, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        keep = F > 0
        F, t = F[keep], t[keep]
        if F.size < 3:
            return float("nan"), float("nan")
        start = int(math.floor((1.0 - TRAILING_FRACTION) * F.size))
        fit = linear_fit(t[start:], np.log(F[start:]))
        return fit.slope, fit.r2

    def monotone_fraction(self) -> float:
        F = np.asarray(self.F)
        if F.size < 2:
            return 1.0
        return float(np.mean(np.diff(F) <= 0))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for k in range(len(self.t)):
                acc = self.accuracy[k] if self.accuracy else float("nan")
                w.writerow([self.t[k]] + [repr(float(v)) for v in (self.F[k], self.grad_fro_max[k], self.travel_fro_max[k], self.travel_spec_max[k], acc)])
        return path

    def summary(self) -> dict:
        slope, r2 = self.linearity()
        return {
            "status": self.status,
            "iterations": self.iterations,
            "eta": self.eta,
            "batch": self.batch,
            "F0": self.F[0] if self.F else None,
            "F_final": self.final_F,
            "log_slope": slope,
            "log_r2": r2,
            "travel_rel_max": max(self.travel_rel_max) if self.travel_rel_max else 0.0,
            "accuracy_final": self.accuracy[-1] if self.accuracy else None,
        }


def _check_grads(grads: GradientSet):
    if not np.all(np.isfinite(grads.norms)):
        raise FloatingPointError("non-finite gradient")


def _apply_update(params: NetworkParams, grads: GradientSet, coef: float, joint: bool):
    for l, W in enumerate(params.W):
        dW = grads.layer(l)
        dW *= coef
        W -= dW
    if joint:
        if grads.dA is None or grads.dB is None:
            raise ValueError("joint training needs dA and dB")
        params.A -= coef * grads.dA
        params.B -= coef * grads.dB


def gd_step(params: NetworkParams, dataset, loss: LossFunction | None, eta: float, *, joint=False) -> tuple[NetworkParams, StepRecord]:
    """One in-place full-batch step W_l <- W_l - eta grad_{W_l} F; returns the record at the old iterate."""
    if not eta >= 0:
        raise ValueError("eta must be >= 0")
    obj = objective(params, dataset, loss)
    grads = backward(params, obj.trace, obj.loss_vectors, joint=joint)
    _check_grads(grads)
    rec = StepRecord(obj.value, grads.norms.copy(), obj.per_sample)
    if eta > 0:
        _apply_update(params, grads, eta, joint)
    return params, rec


def sgd_step(params: NetworkParams, dataset, loss: LossFunction | None, eta: float, batch, *, joint=False) -> tuple[NetworkParams, StepRecord]:
    """One in-place step with the (n/b)-rescaled batch gradient; record holds full F and batch gradient norms."""
    S = np.asarray(batch, dtype=np.intp)
    n = dataset.n
    if S.size == 0:
        raise ValueError("batch must be nonempty")
    obj = objective(params, dataset, loss)
    grads = _batch_gradient(params, obj, S, n, joint)
    _check_grads(grads)
    rec = StepRecord(obj.value, grads.norms.copy(), obj.per_sample)
    _apply_update(params, grads, eta * (n / S.size), joint)
    return params, rec


def _batch_gradient(params, obj, S, n, joint):
    if S.size == n and np.array_equal(S, np.arange(n)):
        return backward(params, obj.trace, obj.loss_vectors, joint=joint)
    V = np.zeros_like(obj.loss_vectors)
    V[S] = obj.loss_vectors[S]
    return backward(params, obj.trace, V, joint=joint)


def draw_batch(rng: np.random.Generator, n: int, b: int) -> np.ndarray:
    if b >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=b, replace=False))


def accuracy(params: NetworkParams, dataset) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label."""
    if dataset.label_mode != "classification":
        raise ValueError("accuracy needs classification labels")
    from .netcore import forward

    pred = np.argmax(forward(params, dataset.X).y, axis=1)
    return float(np.mean(pred == dataset.Y))


def _travel(params, W0, spec: bool, seed: int):
    fro, rel, sp = [], [], []
    for W, W0l in zip(params.W, W0):
        diff = W - W0l
        f = float(np.linalg.norm(diff))
        fro.append(f)
        rel.append(f / float(np.linalg.norm(W0l)))
        if spec:
            M = diff.reshape(diff.shape[0], -1)
            est = power_iteration(lambda v: M @ v, lambda w: w @ M, M.shape[1], iters=50, tol=1e-6, seed=seed, restarts=0)
            sp.append(est.value)
    return max(fro), max(rel), (max(sp) if spec else float("nan"))


def train(params: NetworkParams, dataset, loss: LossFunction | None, config: TrainConfig, *, inplace=False) -> ConvergenceTrace:
    """Run GD (batch None or n) or SGD until F <= eps, T updates, or divergence.

    Classification runs also stop once every sample is classified correctly.
    The final parameters are left in ``trace.params``.
    """
    loss = loss or L2Loss()
    p = params if inplace else params.copy()
    n = dataset.n
    b = n if config.batch is None else min(config.batch, n)
    if config.batch is not None and config.batch > n:
        raise ValueError(f"batch {config.batch} exceeds n={n}")
    trace = ConvergenceTrace(eta=config.eta, batch=b, params=p, loss_kind=loss.kind.value)
    W0 = [W.copy() for W in p.W] if config.track_travel else None
    rng = np.random.default_rng([config.seed, int(Role.DATA), 1])
    classify = loss.classification
    F0 = None
    for t in range(config.T + 1):
        try:
            obj = objective(p, dataset, loss)
        except FloatingPointError:
            trace.status = "diverged"
            break
        F = obj.value
        if F0 is None:
            F0 = F
        S = np.arange(n) if b == n else draw_batch(rng, n, b)
        try:
            full = backward(p, obj.trace, obj.loss_vectors, joint=config.joint) if (b == n or config.full_grad_records) else None
            step = full if b == n else _batch_gradient(p, obj, S, n, config.joint)
            _check_grads(step)
        except FloatingPointError:
            trace.status = "diverged"
            break
        norms = full.norms if full is not None else step.norms
        trace.t.append(t)
        trace.F.append(F)
        trace.grad_norms.append(norms.tolist())
        trace.grad_fro_max.append(float(np.max(norms)))
        trace.loss_grad_norm.append(float(np.linalg.norm(obj.loss_vectors)))
        if W0 is not None:
            spec = config.travel_spec_every > 0 and (t % config.travel_spec_every == 0)
            fro, rel, sp = _travel(p, W0, spec and t > 0, config.seed)
            trace.travel_fro_max.append(fro)
            trace.travel_rel_max.append(rel)
            trace.travel_spec_max.append(0.0 if t == 0 else sp)
        else:
            trace.travel_fro_max.append(float("nan"))
            trace.travel_rel_max.append(float("nan"))
            trace.travel_spec_max.append(float("nan"))
        if classify:
            pred = np.argmax(obj.trace.y, axis=1)
            trace.accuracy.append(float(np.mean(pred == dataset.Y)))
        if not math.isfinite(F) or F > DIVERGENCE_FACTOR * F0:
            trace.status = "diverged"
            break
        if F <= config.eps:
            trace.status = "converged"
            break
        if classify and config.stop_on_accuracy and trace.accuracy[-1] == 1.0:
            trace.status = "accuracy"
            break
        if t == config.T:
            trace.status = "max_iters"
            break
        _apply_update(p, step, config.eta * (n / S.size) if b < n else config.eta, config.joint)
    if W0 is not None and trace.t and math.isnan(trace.travel_spec_max[-1]):
        trace.travel_spec_max[-1] = _travel(p, W0, True, config.seed)[2]
    return trace


@dataclass
class EtaSweepResult:
    eta: float
    tried: list  # (eta, monotone, F_last)


def eta_sweep(params: NetworkParams, dataset, loss: LossFunction | None, grid, *, pilot: int = PILOT_ITERS, batch=None) -> EtaSweepResult:
    """Largest eta in ``grid`` whose pilot run has non-increasing loss for ``pilot`` iterations."""
    grid = sorted({float(g) for g in grid}, reverse=True)
    if not grid:
        raise ValueError("empty eta grid")
    loss = loss or L2Loss()
    tried = []
    for eta in grid:
        p = params.copy()
        ok = True
        prev = math.inf
        last = math.nan
        for _ in range(pilot):
            try:
                obj = objective(p, dataset, loss)
                grads = backward(p, obj.trace, obj.loss_vectors)
                _check_grads(grads)
            except FloatingPointError:
                ok = False
                break
            last = obj.value
            if not math.isfinite(last) or last > prev:
                ok = False
                break
            prev = last
            _apply_update(p, grads, eta, False)
        tried.append((eta, ok, last))
        del p
        if ok:
            return EtaSweepResult(eta, tried)
    raise RuntimeError("every eta in the grid failed its pilot: " + ", ".join(f"{e:g} (F={f:.3g})" for e, _, f in tried))


@dataclass
class DominanceReport:
    floor: float
    ratios: list
    skipped: int
    sigma: float | None
    passed: bool


def gradient_dominance_check(trace: ConvergenceTrace, sigma: float | None = None) -> DominanceReport:
    """min_t ||grad_{W_L} F||_F^2 / F(t) along the trace, skipping F < 1e-14."""
    ratios, skipped = [], 0
    for F, norms in zip(trace.F, trace.grad_norms):
        if F < SKIP_F:
            skipped += 1
            continue
        ratios.append(norms[-1] ** 2 / F)
    floor = min(ratios) if ratios else float("nan")
    ok = bool(ratios) and floor > 0 and (sigma is None or floor >= sigma)
    return DominanceReport(floor, ratios, skipped, sigma, ok)
