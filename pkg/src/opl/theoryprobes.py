"""Initialization-time and perturbation-time measurements on fully-connected nets.

Initialization probes: forward norms, the chi-square law of one layer,
interlaced spectral products, backward norms, and separateness of hidden
representations.  Perturbation probes compare a network at W0 with one at
W0 + W' where every ||W'_l||_2 <= omega.

Perturbations come in three modes.  ``random`` and ``gradient`` are fixed
directions rescaled to spectral norm omega.  ``targeted`` is a greedy
worst case for one input: at each layer it spends the whole budget on the
pre-activations closest to zero, reflecting as many as it can across the
kink with a rank-1 W'_l = t h^T / ||h||^2.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .linalg import accurate_spectral_norm, lowrank_spectral_norm, power_iteration
from .netcore import Kind, NetworkParams, Role, forward, full_gradient, keyed_normal, relu
from .reports import ProbeReport

CONCENTRATION_MIN_WIDTH = 256
SPECTRAL_RATIO_CAP = 10.0
BACKWARD_RATIO_CAP = 4.0


# ---------------------------------------------------------------- initialization


def probe_forward_norms(params: NetworkParams, dataset, eps: float = 0.15, max_frac: float = 0.0) -> ProbeReport:
    """||h_{i,l}|| for every sample and layer against the band [1 - eps, 1 + eps]."""
    norms = forward(params, dataset.X).layer_norms()
    notes = []
    if params.hidden_size < CONCENTRATION_MIN_WIDTH:
        notes.append(f"width {params.hidden_size} is below the concentration regime (< {CONCENTRATION_MIN_WIDTH})")
    return ProbeReport(
        "forward_norms",
        {"norms": norms, "max_deviation": [float(np.max(np.abs(norms - 1.0)))]},
        {"kind": "frac_outside", "key": "norms", "lo": 1.0 - eps, "hi": 1.0 + eps, "max_frac": max_frac},
        predicted="||h_l|| in [1-eps, 1+eps] with high probability",
        notes=notes,
    )


def probe_forward_norms_pooled(draws, eps: float = 0.15, max_frac: float = 0.01) -> ProbeReport:
    """Forward norms pooled over independent (params, dataset) draws.

    ``draws`` is consumed lazily, so only one network is alive at a time.
    Norms within one network are correlated across samples, which is why a
    single draw is a poor estimate of the fraction outside the band.
    """
    blocks, widths = [], set()
    for params, dataset in draws:
        blocks.append(forward(params, dataset.X).layer_norms())
        widths.add(params.hidden_size)
        del params
    if not blocks:
        raise ValueError("no draws")
    norms = np.concatenate(blocks)
    notes = [f"pooled over {len(blocks)} draws"]
    if min(widths) < CONCENTRATION_MIN_WIDTH:
        notes.append(f"width {min(widths)} is below the concentration regime (< {CONCENTRATION_MIN_WIDTH})")
    return ProbeReport(
        "forward_norms",
        {"norms": norms, "max_deviation": [float(np.max(np.abs(norms - 1.0)))]},
        {"kind": "frac_outside", "key": "norms", "lo": 1.0 - eps, "hi": 1.0 + eps, "max_frac": max_frac},
        predicted="||h_l|| in [1-eps, 1+eps] with high probability",
        notes=notes,
        meta={"draws": len(blocks)},
    )


@dataclass
class ChiSquareReport:
    layer: int
    redraws: int
    mean: float
    se: float
    active_fraction: float
    active_mean: float
    active_se: float
    variance: float
    passed: bool


def chi_square_oracle(params: NetworkParams, x, layer: int, redraws: int = 200, seed: int = 0, exact: bool = False):
    """Check that m ||h_l||^2 / (2 ||h_{l-1}||^2) behaves like chi^2_w with w ~ Bin(m, 1/2).

    With h_{l-1} fixed, the layer weights are redrawn ``redraws`` times.  A
    Gaussian W applied to a fixed vector is N(0, 2||h||^2/m I) by rotation
    invariance, so by default that vector is sampled directly; ``exact``
    redraws the full m x m matrix instead.

    Mean m/2 and variance 5m/4 per draw: each coordinate is 0 w.p. 1/2,
    otherwise chi^2_1, so E = 1/2 and E[X^2] = 3/2.
    """
    if params.arch.kind is not Kind.FC:
        raise ValueError("chi-square oracle is defined for fully-connected layers")
    trace = forward(params, x)
    h_prev = trace.x[0] if layer == 0 else trace.h[layer - 1][0]
    hn2 = float(h_prev @ h_prev)
    if hn2 == 0.0:
        raise ValueError("h_{l-1} = 0: the statistic is undefined")
    m = params.arch.width
    rng = np.random.default_rng([seed, int(Role.PROBE), layer])
    if exact:
        G = np.stack([(rng.standard_normal((m, h_prev.size)) * math.sqrt(2.0 / m)) @ h_prev for _ in range(redraws)])
    else:
        G = rng.standard_normal((redraws, m)) * math.sqrt(2.0 * hn2 / m)
    H = relu(G)
    stat = m * np.sum(H * H, axis=1) / (2.0 * hn2)
    active = np.sum(G >= 0, axis=1)
    se = math.sqrt(1.25 * m / redraws)
    active_se = math.sqrt(0.25 * m / redraws)
    mean, act_mean = float(stat.mean()), float(active.mean())
    frac = act_mean / m
    ok = abs(mean - m / 2) <= 3 * se and abs(act_mean - m / 2) <= 3 * active_se and abs(frac - 0.5) <= 0.03
    return ChiSquareReport(layer, redraws, mean, se, frac, act_mean, active_se, float(stat.var(ddof=1)), bool(ok))


def interlaced_product_norm(Ws, Ds, a: int, b: int, *, seed: int = 0):
    """Spectral norm of W_b D_{b-1} W_{b-1} ... D_a W_a by power iteration.

    ``Ws[l-1]`` is W_l and ``Ds[l]`` the 0/1 diagonal of D_l (as a vector).
    """

    def mv(v):
        for l in range(a, b + 1):
            if l > a:
                v = v * Ds[l - 1]
            v = Ws[l - 1] @ v
        return v

    def rmv(w):
        for l in range(b, a - 1, -1):
            w = w @ Ws[l - 1]
            if l > a:
                w = w * Ds[l - 1]
        return w

    return power_iteration(mv, rmv, Ws[a - 1].shape[1], seed=seed)


def probe_intermediate_spectral(params: NetworkParams, dataset, a: int = 1, b: int | None = None, *, cap=SPECTRAL_RATIO_CAP):
    """||W_b D_{b-1} ... D_a W_a||_2 / sqrt(L) for every sample."""
    L = params.L
    b = L if b is None else b
    if not 1 <= a <= b <= L:
        raise ValueError(f"need 1 <= a <= b <= L, got a={a}, b={b}")
    trace = forward(params, dataset.X)
    vals, est2, conv = [], [], True
    for i in range(trace.n):
        Ds = [d[i].astype(np.float64) for d in trace.D]
        est = interlaced_product_norm(params.W, Ds, a, b, seed=i)
        vals.append(est.value)
        est2.append(list(est.estimates))
        conv = conv and est.converged
    ratio = np.asarray(vals) / math.sqrt(L)
    notes = [] if conv else ["power iteration hit the iteration cap"]
    return ProbeReport(
        "intermediate_spectral",
        {"spectral": vals, "ratio": ratio, "estimates": est2},
        {"kind": "max_le", "key": "ratio", "hi": cap},
        predicted="O(sqrt(L))",
        notes=notes,
        meta={"a": a, "b": b, "L": L, "m": params.arch.width},
    )


def intermediate_spectral_sweep(ratios_by_depth: dict, factor: float = 4.0) -> ProbeReport:
    """Depth sweep: every ratio within ``factor`` of the ratio at the smallest depth."""
    depths = sorted(ratios_by_depth)
    return ProbeReport(
        "intermediate_spectral_sweep",
        {"depth": depths, "ratio": [ratios_by_depth[k] for k in depths]},
        {"kind": "within_first", "key": "ratio", "factor": factor},
        predicted="ratio bounded in L",
    )


def _back_rows(params, trace, V, pert=None):
    """Rows v_i^T Back_{i,a} for a = L+1 down to 1, as a dict a -> (n, m).

    ``pert`` optionally adds W'_l to every layer (see :class:`Perturbation`).
    """
    L = params.L
    R = V @ params.B
    out = {L + 1: R}
    for l in range(L, 0, -1):
        R = R * trace.D[l]
        nxt = R @ params.W[l - 1]
        if pert is not None:
            nxt += pert.backward_term(l, R)
        R = nxt
        out[l] = R
    return out


def _unit_rows(n, d, rng):
    V = rng.standard_normal((n, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return V


def probe_backward_norm(params: NetworkParams, dataset, a: int | None = None, *, v=None, num_v=4, seed=0, cap=BACKWARD_RATIO_CAP):
    """||v^T Back_{i,a}|| / (sqrt(m/d) ||v||) over samples and random v (all a when a is None)."""
    L = params.L
    d = params.arch.output_dim
    if a is not None and not 1 <= a <= L + 1:
        raise ValueError(f"layer index {a} outside 1..{L + 1}")
    trace = forward(params, dataset.X)
    n = trace.n
    if v is not None:
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        if np.any(np.linalg.norm(v, axis=1) == 0):
            raise ValueError("v must be nonzero")
        Vs = [np.repeat(v / np.linalg.norm(v, axis=1, keepdims=True), n, axis=0)[:n]]
    else:
        rng = np.random.default_rng([seed, int(Role.PROBE)])
        Vs = [_unit_rows(n, d, rng) for _ in range(num_v)]
    layers = [a] if a is not None else list(range(1, L + 2))
    scale = math.sqrt(params.hidden_size / d)
    ratios = np.zeros((len(Vs), n, len(layers)))
    for k, V in enumerate(Vs):
        rows = _back_rows(params, trace, V)
        for c, la in enumerate(layers):
            ratios[k, :, c] = np.linalg.norm(rows[la], axis=1) / scale
    return ProbeReport(
        "backward_norm",
        {"layers": layers, "ratio": ratios.max(axis=(0, 1)), "ratio_all": ratios},
        {"kind": "max_le", "key": "ratio", "hi": cap},
        predicted="O(sqrt(m/d)) ||v||",
    )


def _separateness_stats(H):
    nrm2 = np.sum(H * H, axis=1)
    G = H @ H.T
    with np.errstate(divide="ignore", invalid="ignore"):
        S2 = nrm2[None, :] - G * G / nrm2[:, None]
    S2 = np.where(np.isfinite(S2), S2, nrm2[None, :])
    np.fill_diagonal(S2, np.inf)
    return np.sqrt(np.clip(S2, 0.0, None))


def probe_separateness(params: NetworkParams, dataset, delta: float | None = None) -> ProbeReport:
    """min_{i != j} ||(I - h_i h_i^T / ||h_i||^2) h_j|| per level (input, then l = 0..L) against delta/2."""
    if dataset.n < 2:
        raise ValueError("separateness needs at least two samples")
    delta = dataset.certified_delta if delta is None else delta
    if not (delta > 0 and math.isfinite(delta)):
        raise ValueError(f"need a finite positive delta, got {delta}")
    trace = forward(params, dataset.X)
    levels = [trace.x, *trace.h]
    mins = [float(_separateness_stats(H).min()) for H in levels]
    return ProbeReport(
        "separateness",
        {"level": list(range(-1, params.L + 1)), "min": mins},
        {"kind": "min_ge", "key": "min", "lo": delta / 2.0},
        predicted=">= delta/2",
        meta={"delta": delta},
    )


# ---------------------------------------------------------------- perturbations


class Mode(str, Enum):
    RANDOM = "random"
    GRADIENT = "gradient"
    TARGETED = "targeted"


@dataclass(frozen=True)
class PerturbationSpec:
    omega: float
    mode: Mode = Mode.RANDOM
    seed: int = 0
    target: int = 0  # targeted mode: which sample to attack
    coherent_output: int | None = None  # targeted mode: only flip units that push y_j one way

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (self.omega >= 0 and math.isfinite(self.omega)):
            raise ValueError("omega must be finite and >= 0")


@dataclass
class Perturbation:
    """Per-layer W'_l: dense arrays or factor pairs (U, V) meaning U^T V."""

    deltas: list
    spec: PerturbationSpec | None = None
    notes: list = field(default_factory=list)

    def layer(self, l: int) -> np.ndarray:
        """Dense W'_l, 1-based."""
        D = self.deltas[l - 1]
        if isinstance(D, tuple):
            return D[0].T @ D[1]
        return D

    def forward_term(self, l, H):
        """H @ W'_l^T for a batch of rows H."""
        D = self.deltas[l - 1]
        if isinstance(D, tuple):
            return (H @ D[1].T) @ D[0]
        return H @ D.T

    def backward_term(self, l, R):
        """R @ W'_l."""
        D = self.deltas[l - 1]
        if isinstance(D, tuple):
            return (R @ D[0].T) @ D[1]
        return R @ D

    def spectral_norms(self) -> np.ndarray:
        out = []
        for D in self.deltas:
            out.append(lowrank_spectral_norm(*D) if isinstance(D, tuple) else accurate_spectral_norm(D))
        return np.asarray(out)

    def apply(self, params: NetworkParams) -> NetworkParams:
        return params.with_W([W + self.layer(l) for l, W in enumerate(params.W, start=1)])

    def scaled(self, c: float) -> "Perturbation":
        return Perturbation([(D[0] * c, D[1]) if isinstance(D, tuple) else D * c for D in self.deltas], self.spec, list(self.notes))


def perturbed_forward(params: NetworkParams, X, pert: Perturbation | None):
    """Forward pass through W0 + W' without materializing the sum."""
    if pert is None:
        return forward(params, X)
    from .netcore import ForwardTrace

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g = X @ params.A.T
    gs, hs, Ds = [g], [relu(g)], [g >= 0]
    for l, W in enumerate(params.W, start=1):
        g = hs[-1] @ W.T
        g += pert.forward_term(l, hs[-1])
        gs.append(g)
        hs.append(relu(g))
        Ds.append(g >= 0)
    return ForwardTrace(X, gs, hs, Ds, hs[-1] @ params.B.T)


def _check_fc(params):
    if params.arch.kind is not Kind.FC:
        raise ValueError("perturbation probes are implemented for fully-connected networks")


def random_directions(params: NetworkParams, seed: int) -> list:
    """Keyed Gaussian matrices with spectral norm exactly 1."""
    out = []
    for l, W in enumerate(params.W, start=1):
        G = keyed_normal(seed, Role.PERTURB, l, W.shape, 1.0)
        G /= accurate_spectral_norm(G)
        out.append(G)
    return out


def gradient_directions(params: NetworkParams, dataset, loss=None) -> list | None:
    """Negative gradient per layer as factor pairs, scaled to spectral norm 1; None if zero."""
    _, grads = full_gradient(params, dataset, loss)
    out = []
    for U, H in grads.factors:
        s = lowrank_spectral_norm(U, H)
        if s == 0.0 or not math.isfinite(s):
            return None
        out.append((-U / s, H.copy()))
    return out


@dataclass
class TargetedBatch:
    """Row-wise rank-1 perturbations: row r of layer l uses W'_l = T[l][r] Z[l][r]^T."""

    T: list
    Z: list
    omegas: np.ndarray
    trace: object  # perturbed trace of the targeted rows

    def forward_term(self, l, H):
        return np.sum(H * self.Z[l - 1], axis=1, keepdims=True) * self.T[l - 1]

    def backward_term(self, l, R):
        return np.sum(R * self.T[l - 1], axis=1, keepdims=True) * self.Z[l - 1]

    def row(self, r: int) -> Perturbation:
        deltas = [(T[r : r + 1].copy(), Z[r : r + 1].copy()) for T, Z in zip(self.T, self.Z)]
        return Perturbation(deltas, PerturbationSpec(float(self.omegas[r]), Mode.TARGETED))


def _spend_budget(g, budget, allowed):
    """Greedy reflection of the smallest |g_k| within ||t|| <= budget, remainder on the next unit."""
    t = np.zeros_like(g)
    if budget <= 0:
        return t
    idx = np.flatnonzero(allowed)
    if idx.size == 0:
        return t
    order = idx[np.argsort(np.abs(g[idx]), kind="stable")]
    cost = np.cumsum(4.0 * g[order] ** 2)
    k = int(np.searchsorted(cost, budget * budget, side="right"))
    t[order[:k]] = -2.0 * g[order[:k]]
    if k < order.size:
        rest = budget * budget - (cost[k - 1] if k else 0.0)
        j = order[k]
        t[j] = -(1.0 if g[j] >= 0 else -1.0) * math.sqrt(max(rest, 0.0))
    return t


def targeted_batch(params: NetworkParams, X, omegas, *, masks=None) -> TargetedBatch:
    """Build the targeted perturbation for each row of X at its own omega.

    ``masks`` optionally maps layer l -> (r, m) boolean array of units that
    may be pushed.  ||W'_l||_2 = ||t|| / ||h|| = omega exactly (unless a mask
    leaves nothing to push).
    """
    _check_fc(params)
    from .netcore import ForwardTrace

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    omegas = np.broadcast_to(np.asarray(omegas, dtype=np.float64), (X.shape[0],)).copy()
    g = X @ params.A.T
    gs, hs, Ds = [g], [relu(g)], [g >= 0]
    Ts, Zs = [], []
    for l, W in enumerate(params.W, start=1):
        h = hs[-1]
        g0 = h @ W.T
        hn = np.linalg.norm(h, axis=1)
        T = np.zeros_like(g0)
        for r in range(g0.shape[0]):
            allowed = np.ones(g0.shape[1], bool) if masks is None else masks[l][r]
            T[r] = _spend_budget(g0[r], omegas[r] * hn[r], allowed)
        Z = h / np.where(hn > 0, hn * hn, 1.0)[:, None]
        g = g0 + T
        Ts.append(T)
        Zs.append(Z)
        gs.append(g)
        hs.append(relu(g))
        Ds.append(g >= 0)
    trace = ForwardTrace(X, gs, hs, Ds, hs[-1] @ params.B.T)
    return TargetedBatch(Ts, Zs, omegas, trace)


def output_gradient_masks(params: NetworkParams, X, j: int) -> dict:
    """Units whose unperturbed backward vector (Back_{l+1}^T e_j)_k is positive, per layer."""
    trace = forward(params, X)
    u = np.zeros((trace.n, params.arch.output_dim))
    u[:, j] = 1.0
    u = u @ params.B
    masks = {}
    for l in range(params.L, 0, -1):
        masks[l] = u > 0
        u = (u * trace.D[l]) @ params.W[l - 1]
    return masks


def perturbation_matrices(params: NetworkParams, spec: PerturbationSpec, dataset=None, *, directions=None) -> Perturbation:
    """W' with ||W'_l||_2 = omega for every layer (``directions`` reuses unit-norm directions)."""
    _check_fc(params)
    om = spec.omega
    L = params.L
    if om == 0.0:
        return Perturbation([np.zeros_like(W) for W in params.W], spec)
    if om * L**1.5 > 1.0:
        warnings.warn(f"omega * L^1.5 = {om * L**1.5:.3g} > 1: outside the perturbation regime", stacklevel=2)
    notes = []
    if spec.mode is Mode.TARGETED:
        if dataset is None:
            raise ValueError("targeted perturbations need a dataset")
        x = dataset.X[spec.target : spec.target + 1]
        masks = None
        if spec.coherent_output is not None:
            masks = output_gradient_masks(params, x, spec.coherent_output)
        pert = targeted_batch(params, x, om, masks=masks).row(0)
        pert.spec = spec
        return pert
    if directions is None:
        if spec.mode is Mode.GRADIENT:
            if dataset is None:
                raise ValueError("gradient-aligned perturbations need a dataset")
            directions = gradient_directions(params, dataset)
            if directions is None:
                notes.append("zero gradient: fell back to random Gaussian direction")
        if directions is None:
            directions = random_directions(params, spec.seed)
    pert = Perturbation(directions, spec, notes).scaled(om)
    return pert


def make_perturbation(params: NetworkParams, spec: PerturbationSpec, dataset=None, *, notes: list | None = None) -> NetworkParams:
    """Materialized W0 + W'.  Fallback notes are appended to ``notes`` when given."""
    if spec.omega == 0.0:
        return params.copy()
    pert = perturbation_matrices(params, spec, dataset)
    if notes is not None:
        notes.extend(pert.notes)
    return pert.apply(params)


# ---------------------------------------------------------------- perturbation probes


def _traces(params0, perturbed, X):
    t0 = forward(params0, X)
    if isinstance(perturbed, NetworkParams):
        t1 = forward(perturbed, X)
        back = lambda V: _back_rows(perturbed, t1, V)  # noqa: E731
    else:
        t1 = perturbed_forward(params0, X, perturbed)
        back = lambda V: _back_rows(params0, t1, V, perturbed)  # noqa: E731
    return t0, t1, back


def sign_changes(t0, t1) -> np.ndarray:
    """(n, L+1) count of units whose sign bit differs."""
    return np.stack([np.sum(a != b, axis=1) for a, b in zip(t0.D, t1.D)], axis=1)


def forward_drift(t0, t1) -> np.ndarray:
    return np.stack([np.linalg.norm(a - b, axis=1) for a, b in zip(t0.h, t1.h)], axis=1)


def backward_drift(params0, t0, back1, V) -> np.ndarray:
    """(n, L) values ||v^T (Back'_a - Back_a)|| / (sqrt(m/d) ||v||) for a = 1..L."""
    r0 = _back_rows(params0, t0, V)
    r1 = back1(V)
    scale = math.sqrt(params0.hidden_size / params0.arch.output_dim)
    vn = np.linalg.norm(V, axis=1)
    return np.stack([np.linalg.norm(r1[a] - r0[a], axis=1) / (scale * vn) for a in range(1, params0.L + 1)], axis=1)


def probe_sign_changes(params0, perturbed, dataset) -> ProbeReport:
    t0, t1, _ = _traces(params0, perturbed, dataset.X)
    counts = sign_changes(t0, t1)
    m = params0.hidden_size
    return ProbeReport(
        "sign_changes",
        {"counts": counts, "fraction": counts / m},
        {"kind": "max_le", "key": "fraction", "hi": 1.0},
        predicted="||D'||_0 <= O(m omega^(2/3) L)",
    )


def probe_forward_drift(params0, perturbed, dataset) -> ProbeReport:
    t0, t1, _ = _traces(params0, perturbed, dataset.X)
    return ProbeReport(
        "forward_drift",
        {"drift": forward_drift(t0, t1)},
        {"kind": "info"},
        predicted="||h'_l|| <= O(omega L^(5/2) sqrt(log m))",
    )


def probe_backward_drift(params0, perturbed, dataset, *, num_v=4, seed=0) -> ProbeReport:
    t0, t1, back1 = _traces(params0, perturbed, dataset.X)
    rng = np.random.default_rng([seed, int(Role.PROBE)])
    d = params0.arch.output_dim
    vals = np.stack([backward_drift(params0, t0, back1, _unit_rows(t0.n, d, rng)) for _ in range(num_v)])
    return ProbeReport(
        "backward_drift",
        {"drift": vals.mean(axis=0)},
        {"kind": "info"},
        predicted="O(omega^(1/3) L^2 sqrt(m log m) / sqrt(d)) before normalization",
    )


SLOPE_RULES = {
    "sign_changes": {"lo": 0.45, "hi": 0.85, "r2_min": 0.9},
    "forward_drift": {"lo": 0.9, "hi": 1.1},
    "backward_drift": {"lo": 0.2, "hi": 0.5},
}
PREDICTED = {"sign_changes": "slope 2/3", "forward_drift": "slope 1", "backward_drift": "slope 1/3"}


def stability_sweep(params: NetworkParams, dataset, omegas, mode=Mode.TARGETED, *, seed=0, num_v=4) -> dict:
    """Sign changes, forward drift and backward drift across an omega sweep.

    Per omega the series hold the mean over samples of each layer's value;
    slopes are fitted to the layer-averaged values.  In targeted mode every
    sample is measured under the perturbation built against it.
    """
    _check_fc(params)
    mode = Mode(mode)
    omegas = np.asarray(omegas, dtype=np.float64)
    n, L, m, d = dataset.n, params.L, params.hidden_size, params.arch.output_dim
    rng = np.random.default_rng([seed, int(Role.PROBE)])
    V = _unit_rows(n, d, rng)
    Vs = [V] + [_unit_rows(n, d, rng) for _ in range(num_v - 1)]
    t0 = forward(params, dataset.X)
    sign, fwd, bwd = [], [], []
    notes = []
    if mode is Mode.TARGETED:
        X = np.tile(dataset.X, (len(omegas), 1))
        om = np.repeat(omegas, n)
        batch = targeted_batch(params, X, om)
        t0r = forward(params, X)
        c = sign_changes(t0r, batch.trace).reshape(len(omegas), n, L + 1)
        f = forward_drift(t0r, batch.trace).reshape(len(omegas), n, L + 1)
        back1 = lambda W: _back_rows(params, batch.trace, W, batch)  # noqa: E731
        b = np.mean([backward_drift(params, t0r, back1, np.tile(W, (len(omegas), 1))) for W in Vs], axis=0)
        b = b.reshape(len(omegas), n, L)
        sign, fwd, bwd = c.mean(axis=1) / m, f.mean(axis=1), b.mean(axis=1)
    else:
        dirs = None
        if mode is Mode.GRADIENT:
            dirs = gradient_directions(params, dataset)
            if dirs is None:
                notes.append("zero gradient: fell back to random Gaussian direction")
        if dirs is None:
            dirs = random_directions(params, seed)
        unit = Perturbation(dirs)
        for om in omegas:
            pert = unit.scaled(om)
            t1 = perturbed_forward(params, dataset.X, pert)
            back1 = lambda W, t1=t1, pert=pert: _back_rows(params, t1, W, pert)  # noqa: E731
            sign.append(sign_changes(t0, t1).mean(axis=0) / m)
            fwd.append(forward_drift(t0, t1).mean(axis=0))
            bwd.append(np.mean([backward_drift(params, t0, back1, W) for W in Vs], axis=0).mean(axis=0))
        sign, fwd, bwd = np.array(sign), np.array(fwd), np.array(bwd)
    reports = {}
    for name, vals in (("sign_changes", sign), ("forward_drift", fwd), ("backward_drift", bwd)):
        vals = np.asarray(vals)
        rule = {"kind": "slope", "x": "omega", "y": "layer_mean", **SLOPE_RULES[name]}
        reports[name] = ProbeReport(
            name,
            {"omega": omegas, "values": vals, "layer_mean": vals.mean(axis=1)},
            rule,
            predicted=PREDICTED[name],
            notes=list(notes),
            meta={"mode": mode.value, "m": m, "L": L, "n": n},
        )
    return reports
