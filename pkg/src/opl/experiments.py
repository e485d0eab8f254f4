"""Composite experiments shared by the CLI suites and the acceptance tests."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import generate_separated_dataset
from .landscape import GradientBoundPoint
from .linalg import power_iteration
from .losses import L2Loss
from .netcore import ArchSpec, Role, backward, forward, init_network, keyed_normal
from .ntk import _features_from_gradset, gradient_deviation_ratio, snapshot_id
from .reports import ProbeReport
from .training import TrainConfig, eta_sweep, train

ETA_GRID = [1e-2 * 2 ** (-k / 2) for k in range(16)]


def bounds_along_trace(trace, dataset, m: int) -> list:
    """r_low / r_up at every recorded iterate of a training trace."""
    d, n, delta = trace.params.arch.output_dim, dataset.n, dataset.certified_delta
    out = []
    for F, norms in zip(trace.F, trace.grad_norms):
        if F < 1e-14:
            out.append(GradientBoundPoint(m, F, float("nan"), [], skipped=True))
            continue
        norms = np.asarray(norms)
        r_low = norms[-1] ** 2 * d * n * n / (F * delta * m)
        out.append(GradientBoundPoint(m, F, float(r_low), (norms**2 * d / (F * n * m)).tolist()))
    return out


def travel_from_seed(params) -> float:
    """max_l ||W_l - W0_l||_2 with W0 regenerated layer by layer from the seed."""
    m = params.hidden_size
    worst = 0.0
    for l, W in enumerate(params.W, start=1):
        diff = W - keyed_normal(params.seed, Role.W, l, W.shape, math.sqrt(2.0 / m))
        est = power_iteration(lambda v: diff @ v, lambda w: w @ diff, m, iters=100, tol=1e-8, seed=l, restarts=0)
        worst = max(worst, est.value)
        del diff
    return worst


def _mean_feature_deviation(params, X, feats0) -> float:
    trace = forward(params, X)
    V = np.zeros((trace.n, params.arch.output_dim))
    V[:, 0] = 1.0
    feats1 = _features_from_gradset(backward(params, trace, V), trace.n, 0, "trained")
    return float(np.mean([gradient_deviation_ratio(f0, f1) for f0, f1 in zip(feats0, feats1)]))


def _matched(params, data):
    return data.with_labels(forward(params, data.X).y + data.Y)


@dataclass
class WidthPoint:
    m: int
    eta: float
    status: str
    F0: float
    F_final: float
    iterations: int
    travel_spec: float
    deviation_ratio: float
    bounds: list
    seconds: float

    @property
    def r_low_floor(self) -> float:
        vals = [b.r_low for b in self.bounds if not b.skipped]
        return min(vals) if vals else float("nan")

    @property
    def r_up_cap(self) -> float:
        vals = [max(b.r_up) for b in self.bounds if not b.skipped]
        return max(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "eta": self.eta,
            "status": self.status,
            "F0": self.F0,
            "F_final": self.F_final,
            "iterations": self.iterations,
            "travel_spec": self.travel_spec,
            "deviation_ratio": self.deviation_ratio,
            "r_low_floor": self.r_low_floor,
            "r_up_cap": self.r_up_cap,
        }


@dataclass
class WidthSweep:
    points: list
    eta0: float
    reports: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eta0": self.eta0, "points": [p.to_dict() for p in self.points], "reports": {k: r.to_dict() for k, r in self.reports.items()}}


def width_sweep(
    widths=(512, 2048, 8192),
    *,
    depth: int = 4,
    n: int = 8,
    input_dim: int = 10,
    delta: float = 0.1,
    T: int = 30,
    eta0: float | None = None,
    seed: int = 0,
    factor: float = 5.0,
    safety: float = 0.5,
    matched_residual: bool = True,
) -> WidthSweep:
    """GD on one dataset at several widths with eta = eta0 * m0 / m and a fixed step count.

    Records the gradient-bound ratios along each trajectory and the mean
    NTK feature deviation ||grad y(W_T) - grad y(W0)||_F / ||grad y(W0)||_F
    over the training inputs.  W0 is never kept alongside W_T; travel is
    measured by regenerating W0 from the seed.

    With ``matched_residual`` the labels at each width are the network's own
    initial outputs plus the dataset labels, so every width starts from the
    same loss vectors and the same F0.
    """
    widths = sorted(widths)
    data = generate_separated_dataset(n, input_dim, delta, seed=seed)
    loss = L2Loss()
    m0 = widths[0]
    if eta0 is None:
        p0 = init_network(ArchSpec(input_dim, m0, 1, depth), seed)
        eta0 = safety * eta_sweep(p0, _matched(p0, data) if matched_residual else data, loss, ETA_GRID).eta
        del p0
    points = []
    for m in widths:
        start = time.perf_counter()
        params = init_network(ArchSpec(input_dim, m, 1, depth), seed)
        data_m = _matched(params, data) if matched_residual else data
        trace0 = forward(params, data.X)
        V = np.zeros((n, 1))
        V[:, 0] = 1.0
        feats0 = _features_from_gradset(backward(params, trace0, V), n, 0, snapshot_id(params))
        del trace0
        eta = eta0 * m0 / m
        cfg = TrainConfig(eta=eta, T=T, eps=1e-12, track_travel=False, seed=seed)
        tr = train(params, data_m, loss, cfg, inplace=True)
        dev = _mean_feature_deviation(params, data.X, feats0)
        points.append(
            WidthPoint(m, eta, tr.status, tr.F[0], tr.final_F, tr.iterations, travel_from_seed(params), dev, bounds_along_trace(tr, data_m, m), time.perf_counter() - start)
        )
        del params, tr
    sweep = WidthSweep(points, eta0)
    ms = [p.m for p in points]
    sweep.reports["gradient_bounds"] = ProbeReport(
        "gradient_bounds",
        {"m": ms, "r_low_floor": [p.r_low_floor for p in points], "r_up_cap": [p.r_up_cap for p in points]},
        {
            "kind": "all",
            "rules": [
                {"kind": "min_ge", "key": "r_low_floor", "lo": 1e-300},
                {"kind": "ratio_within", "key": "r_low_floor", "factor": factor},
                {"kind": "ratio_within", "key": "r_up_cap", "factor": factor},
            ],
        },
        predicted="r_low bounded below and r_up bounded above uniformly in m",
        meta={"L": depth, "n": n, "T": T, "eta0": eta0, "matched_residual": matched_residual},
    )
    sweep.reports["ntk_deviation_width"] = ProbeReport(
        "ntk_deviation_width",
        {"m": ms, "value": [p.deviation_ratio for p in points], "travel_spec": [p.travel_spec for p in points]},
        {"kind": "decreasing", "key": "value"},
        predicted="feature deviation shrinks with m at the GD-produced travel",
        meta={"L": depth, "n": n, "T": T, "eta0": eta0, "matched_residual": matched_residual},
    )
    return sweep
