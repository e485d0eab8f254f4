"""Convolutional and residual variants of the network.

CNN: positions 𝔡 with m channels each.  h_{0,j} = relu(A_j x_{Q_j}),
h_{l,j} = relu(W_{l,j} h_{l-1,Q_j} + tau b_{l,j}) for l < L, then a fully
connected W_L and output B.  Hidden vectors are stored position-major,
index j*m + c, so the trace looks like a fully-connected trace of width 𝔡m.

ResNet: h_0 = relu(A x), h_l = relu(h_{l-1} + tau W_l h_{l-1}) for l < L,
h_L = relu(W_L h_{L-1}).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import power_iteration
from .netcore import (
    ArchSpec,
    ForwardTrace,
    GradientSet,
    Kind,
    NetworkParams,
    Role,
    keyed_normal,
    relu,
)

SPECTRAL_CAP = 4.0
PATCH_RETRIES = 200


def build_patch_map(positions: int, q: int, topology: str = "circulant", seed: int = 0) -> tuple:
    """0-based patch map: Q_j lists the q previous-layer positions feeding position j."""
    if not 1 <= q <= positions:
        raise ValueError(f"patch size q={q} must lie in [1, {positions}]")
    if topology == "circulant":
        Q = tuple(tuple((j + t) % positions for t in range(q)) for j in range(positions))
    elif topology == "random_regular":
        Q = _random_regular(positions, q, seed)
    else:
        raise ValueError(f"unknown topology {topology!r}")
    validate_patch_map(Q, positions, q)
    return Q


def _random_regular(positions, q, seed):
    # union of q random perfect matchings, retried until every row has distinct entries
    rng = np.random.default_rng([seed, int(Role.PROBE)])
    for _ in range(PATCH_RETRIES):
        cols = [rng.permutation(positions) for _ in range(q)]
        M = np.stack(cols, axis=1)
        if all(len(set(row)) == q for row in M.tolist()):
            return tuple(tuple(sorted(row)) for row in M.tolist())
    raise RuntimeError(f"no {q}-regular patch map on {positions} positions after {PATCH_RETRIES} tries")


def validate_patch_map(Q, positions: int, q: int) -> None:
    if len(Q) != positions:
        raise ValueError(f"patch map has {len(Q)} sets, expected {positions}")
    counts = np.zeros(positions, dtype=int)
    for j, S in enumerate(Q):
        if len(S) != q or len(set(S)) != q:
            raise ValueError(f"Q_{j} = {S} does not have {q} distinct entries")
        for k in S:
            if not 0 <= k < positions:
                raise ValueError(f"Q_{j} references position {k} outside [0, {positions})")
            counts[k] += 1
    if np.any(counts != q):
        raise ValueError(f"patch map is not {q}-regular: position counts {counts.tolist()}")


@dataclass(frozen=True)
class ConvSpec:
    positions: int
    channels: int
    q: int
    patch_map: tuple
    tau: float
    depth: int

    def __post_init__(self):
        object.__setattr__(self, "patch_map", tuple(tuple(int(k) for k in S) for S in self.patch_map))
        validate_patch_map(self.patch_map, self.positions, self.q)
        if self.tau < 0:
            raise ValueError("bias scale tau must be >= 0")

    @classmethod
    def make(cls, positions, channels, q, depth, *, delta=0.1, tau=None, topology="circulant", seed=0):
        """Default tau = delta^2 / (10 𝔡 L)."""
        if tau is None:
            tau = delta**2 / (10.0 * positions * depth)
        return cls(positions, channels, q, build_patch_map(positions, q, topology, seed), tau, depth)

    @property
    def hidden_size(self) -> int:
        return self.positions * self.channels

    def bias_warning(self, eps: float) -> str | None:
        if self.tau**2 > eps * self.q / (10.0 * self.positions * self.depth):
            return f"tau={self.tau:g} exceeds the concentration window for eps={eps:g}"
        return None

    def to_dict(self) -> dict:
        return {
            "type": "conv",
            "positions": self.positions,
            "channels": self.channels,
            "q": self.q,
            "patch_map": [list(S) for S in self.patch_map],
            "tau": self.tau,
            "depth": self.depth,
        }


@dataclass(frozen=True)
class ResidualSpec:
    width: int
    depth: int
    tau: float

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("residual scale tau must be >= 0")

    @classmethod
    def make(cls, width, depth, c=4.0):
        """Default tau = 1 / (c L ln m)."""
        return cls(width, depth, 1.0 / (c * depth * math.log(width)))

    def warning(self) -> str | None:
        if self.tau * self.depth * math.log(self.width) > 1.0:
            return f"tau*L*ln(m) = {self.tau * self.depth * math.log(self.width):.3g} > 1"
        return None

    def to_dict(self) -> dict:
        return {"type": "residual", "width": self.width, "depth": self.depth, "tau": self.tau}


def spec_from_dict(d: dict | None):
    if d is None:
        return None
    if d["type"] == "conv":
        return ConvSpec(d["positions"], d["channels"], d["q"], d["patch_map"], d["tau"], d["depth"])
    if d["type"] == "residual":
        return ResidualSpec(d["width"], d["depth"], d["tau"])
    raise ValueError(f"unknown architecture extension {d['type']!r}")


def conv_arch(spec: ConvSpec, output_dim: int = 1) -> ArchSpec:
    return ArchSpec(spec.positions, spec.channels, output_dim, spec.depth, Kind.CONV)


def residual_arch(spec: ResidualSpec, input_dim: int, output_dim: int = 1) -> ArchSpec:
    return ArchSpec(input_dim, spec.width, output_dim, spec.depth, Kind.RESIDUAL)


def structured_weight_bytes(arch: ArchSpec, ext) -> int:
    m, L, d = arch.width, arch.depth, arch.output_dim
    if arch.kind is Kind.CONV:
        P, q = ext.positions, ext.q
        M = P * m
        return 8 * (P * m * q + (L - 1) * (P * m * q * m + P * m) + M * M + d * M)
    return 8 * (m * arch.input_dim + L * m * m + d * m)


def init_structured(arch: ArchSpec, seed: int, *, ext=None, output_scale=1.0, memory_budget) -> NetworkParams:
    if arch.kind is Kind.CONV:
        if not isinstance(ext, ConvSpec):
            raise ValueError("conv architecture needs a ConvSpec")
        if ext.positions != arch.input_dim or ext.channels != arch.width or ext.depth != arch.depth:
            raise ValueError("ConvSpec disagrees with ArchSpec")
    elif arch.kind is Kind.RESIDUAL:
        if ext is None:
            ext = ResidualSpec.make(arch.width, arch.depth)
        if not isinstance(ext, ResidualSpec) or ext.width != arch.width or ext.depth != arch.depth:
            raise ValueError("residual architecture needs a matching ResidualSpec")
    need = structured_weight_bytes(arch, ext)
    if need > memory_budget:
        raise MemoryError(f"network needs {need / 2**30:.2f} GiB of weights, budget is {memory_budget / 2**30:.2f} GiB")
    m, L, d = arch.width, arch.depth, arch.output_dim
    if arch.kind is Kind.RESIDUAL:
        std = math.sqrt(2.0 / m)
        A = keyed_normal(seed, Role.A, 0, (m, arch.input_dim), std)
        W = [keyed_normal(seed, Role.W, l, (m, m), std) for l in range(1, L + 1)]
        B = keyed_normal(seed, Role.B, 0, (d, m), math.sqrt(1.0 / d) * output_scale)
        return NetworkParams(A, W, B, arch, seed, ext=ext)
    P, q = ext.positions, ext.q
    M = P * m
    std = math.sqrt(2.0 / (q * m))
    A = keyed_normal(seed, Role.A, 0, (P, m, q), std)
    W = [keyed_normal(seed, Role.W, l, (P, m, q * m), std) for l in range(1, L)]
    # last layer is fully connected over all 𝔡m units; 2/(𝔡m) keeps ||h_L|| near 1
    W.append(keyed_normal(seed, Role.W, L, (M, M), math.sqrt(2.0 / M)))
    bias = [keyed_normal(seed, Role.BIAS, l, (P, m), std) for l in range(1, L)]
    B = keyed_normal(seed, Role.B, 0, (d, M), math.sqrt(1.0 / d) * output_scale)
    return NetworkParams(A, W, B, arch, seed, bias=bias, ext=ext)


def _patch_index(ext: ConvSpec) -> np.ndarray:
    return np.asarray(ext.patch_map, dtype=np.intp)


def forward_structured(params: NetworkParams, X: np.ndarray) -> ForwardTrace:
    if params.arch.kind is Kind.RESIDUAL:
        return _forward_resnet(params, X)
    return _forward_cnn(params, X)


def _forward_cnn(params, X):
    ext = params.ext
    n, P, m = X.shape[0], ext.positions, params.arch.width
    Q = _patch_index(ext)
    g = np.einsum("njq,jmq->njm", X[:, Q], params.A).reshape(n, P * m)
    gs, hs, Ds = [g], [relu(g)], [g >= 0]
    for l in range(1, params.L):
        patches = hs[-1].reshape(n, P, m)[:, Q, :].reshape(n, P, -1)
        g = np.einsum("njk,jmk->njm", patches, params.W[l - 1])
        g += ext.tau * params.bias[l - 1]
        g = g.reshape(n, P * m)
        gs.append(g)
        hs.append(relu(g))
        Ds.append(g >= 0)
    g = hs[-1] @ params.W[-1].T
    gs.append(g)
    hs.append(relu(g))
    Ds.append(g >= 0)
    return ForwardTrace(X, gs, hs, Ds, hs[-1] @ params.B.T)


def _forward_resnet(params, X):
    tau = params.ext.tau
    g = X @ params.A.T
    gs, hs, Ds = [g], [relu(g)], [g >= 0]
    for l in range(1, params.L):
        h = hs[-1]
        g = h @ params.W[l - 1].T
        g *= tau
        g += h
        gs.append(g)
        hs.append(relu(g))
        Ds.append(g >= 0)
    g = hs[-1] @ params.W[-1].T
    gs.append(g)
    hs.append(relu(g))
    Ds.append(g >= 0)
    return ForwardTrace(X, gs, hs, Ds, hs[-1] @ params.B.T)


def _conv_vjp(params, l, U):
    """U (k, 𝔡m) -> U · W_l as a linear map on h_{l-1}, for conv layer l < L."""
    ext = params.ext
    P, m = ext.positions, params.arch.width
    k = U.shape[0]
    G = np.einsum("njm,jmk->njk", U.reshape(k, P, m), params.W[l - 1]).reshape(k, P, ext.q, m)
    out = np.zeros((k, P, m))
    Q = _patch_index(ext)
    for t in range(ext.q):
        np.add.at(out, (slice(None), Q[:, t]), G[:, :, t, :])
    return out.reshape(k, P * m)


def layer_vjp(params: NetworkParams, l: int, U: np.ndarray) -> np.ndarray:
    """U (k, size_l) -> U · dg_l/dh_{l-1} for hidden layer l in 1..L."""
    kind = params.arch.kind
    if l == params.L or kind is Kind.FC:
        return U @ params.W[l - 1]
    if kind is Kind.RESIDUAL:
        out = U @ params.W[l - 1]
        out *= params.ext.tau
        out += U
        return out
    return _conv_vjp(params, l, U)


def backward_structured(params: NetworkParams, trace: ForwardTrace, V: np.ndarray, joint: bool) -> GradientSet:
    L = params.L
    kind = params.arch.kind
    u = V @ params.B
    factors = [None] * L
    dense = [None] * L
    for l in range(L, 0, -1):
        delta = u * trace.D[l]
        if l == L:
            factors[l - 1] = (delta, trace.h[l - 1])
        elif kind is Kind.RESIDUAL:
            factors[l - 1] = (params.ext.tau * delta, trace.h[l - 1])
        else:
            dense[l - 1] = _conv_weight_grad(params, delta, trace.h[l - 1])
        u = layer_vjp(params, l, delta)
    dA = dB = None
    if joint:
        delta0 = u * trace.D[0]
        if kind is Kind.RESIDUAL:
            dA = delta0.T @ trace.x
        else:
            ext = params.ext
            n, P, m = delta0.shape[0], ext.positions, params.arch.width
            dA = np.einsum("njm,njq->jmq", delta0.reshape(n, P, m), trace.x[:, _patch_index(ext)])
        dB = V.T @ trace.h[L]
    return GradientSet(factors, dense, dA, dB)


def _conv_weight_grad(params, delta, h_prev):
    ext = params.ext
    n, P, m = delta.shape[0], ext.positions, params.arch.width
    patches = h_prev.reshape(n, P, m)[:, _patch_index(ext), :].reshape(n, P, -1)
    return np.einsum("njm,njk->jmk", delta.reshape(n, P, m), patches)


def back_matrix_structured(params: NetworkParams, trace: ForwardTrace, l: int, sample: int = 0) -> np.ndarray:
    rows = params.B.copy()
    for k in range(params.L, l - 1, -1):
        rows = layer_vjp(params, k, rows * trace.D[k][sample])
    return rows


def _residual_product_ops(params, D, a, b, tau):
    """matvec / rmatvec of (I + tau W_b) D_{b-1} (I + tau W_{b-1}) ... D_a (I + tau W_a)."""
    Ws = params.W

    def matvec(v):
        for l in range(a, b + 1):
            if l > a:
                v = v * D[l - 1]
            v = v + tau * (Ws[l - 1] @ v)
        return v

    def rmatvec(w):
        for l in range(b, a - 1, -1):
            w = w + tau * (w @ Ws[l - 1])
            if l > a:
                w = w * D[l - 1]
        return w

    return matvec, rmatvec


@dataclass
class ResidualProductReport:
    a: int
    b: int
    tau: float
    estimate: float
    estimates: tuple
    converged: bool
    cap: float
    passed: bool


def spectral_product_probe_resnet(
    spec: ResidualSpec, params: NetworkParams, a: int = 1, b: int | None = None, *, x=None, cap=SPECTRAL_CAP, seed=0
) -> ResidualProductReport:
    """Spectral norm of the interlaced residual product for the sign pattern of input x.

    ``spec.tau`` overrides the scale stored in ``params`` so one draw of
    weights can be swept over tau.
    """
    if params.arch.kind is not Kind.RESIDUAL:
        raise ValueError("spectral product probe needs a residual network")
    b = params.L - 1 if b is None else b
    if not 1 <= a <= b <= params.L - 1:
        raise ValueError(f"need 1 <= a <= b <= L-1, got a={a}, b={b}")
    if x is None:
        x = np.zeros(params.arch.input_dim)
        x[0] = x[-1] = 1.0 / math.sqrt(2.0)
    from .netcore import forward

    params = replace(params, ext=spec)
    trace = forward(params, x)
    D = [d[0].astype(np.float64) for d in trace.D]
    mv, rmv = _residual_product_ops(params, D, a, b, spec.tau)
    est = power_iteration(mv, rmv, params.arch.width, seed=seed)
    return ResidualProductReport(a, b, spec.tau, est.value, est.estimates, est.converged, cap, est.value <= cap)
