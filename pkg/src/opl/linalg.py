"""Small numerical helpers: spectral norms and log-log fits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, svds

POWER_ITERS = 200
POWER_TOL = 1e-9
EXACT_SVD_MAX = 1024


@dataclass
class SpectralEstimate:
    value: float
    estimates: tuple[float, float]
    iterations: int
    converged: bool


def power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    rmatvec: Callable[[np.ndarray], np.ndarray],
    dim: int,
    *,
    iters: int = POWER_ITERS,
    tol: float = POWER_TOL,
    seed: int = 0,
    restarts: int = 1,
) -> SpectralEstimate:
    """Largest singular value of an implicit operator via power iteration on M^T M.

    Runs once from a random start and ``restarts`` more times from fresh
    random vectors; the reported value is the largest estimate.
    """
    rng = np.random.default_rng(seed)
    estimates = []
    total_iters = 0
    converged = True
    for _ in range(1 + restarts):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        sigma = 0.0
        ok = False
        for k in range(iters):
            w = matvec(v)
            new_sigma = float(np.linalg.norm(w))
            total_iters += 1
            if new_sigma == 0.0:
                ok = True
                sigma = 0.0
                break
            z = rmatvec(w)
            nz = float(np.linalg.norm(z))
            if nz == 0.0:
                sigma = new_sigma
                ok = True
                break
            v = z / nz
            if k > 0 and abs(new_sigma - sigma) <= tol * new_sigma:
                sigma = new_sigma
                ok = True
                break
            sigma = new_sigma
        estimates.append(sigma)
        converged = converged and ok
    if len(estimates) == 1:
        estimates.append(estimates[0])
    return SpectralEstimate(max(estimates), (estimates[0], estimates[1]), total_iters, converged)


def spectral_norm(M: np.ndarray, *, seed: int = 0, iters: int = POWER_ITERS) -> SpectralEstimate:
    M = np.asarray(M, dtype=np.float64)
    return power_iteration(lambda v: M @ v, lambda w: M.T @ w, M.shape[1], seed=seed, iters=iters)


def accurate_spectral_norm(M: np.ndarray) -> float:
    """Spectral norm to near machine precision.

    Dense SVD for small matrices, ARPACK Lanczos otherwise.  Power iteration
    under-estimates badly on Gaussian matrices whose top singular values are
    clustered, so rescaling to an exact spectral budget goes through here.
    """
    M = np.asarray(M, dtype=np.float64)
    if min(M.shape) <= EXACT_SVD_MAX:
        return float(np.linalg.norm(M, 2))
    op = LinearOperator(M.shape, matvec=lambda v: M @ v, rmatvec=lambda v: M.T @ v, dtype=np.float64)
    v0 = np.random.default_rng(0).standard_normal(min(M.shape))
    s = svds(op, k=1, tol=1e-13, return_singular_vectors=False, v0=v0, maxiter=20000)
    return float(s[0])


def lowrank_spectral_norm(U: np.ndarray, H: np.ndarray) -> float:
    """Exact ||U^T H||_2 for thin factors U (r x p), H (r x q) without forming the product."""
    U = np.atleast_2d(U)
    H = np.atleast_2d(H)
    _, Ru = np.linalg.qr(U.T)
    _, Rh = np.linalg.qr(H.T)
    return float(np.linalg.norm(Ru @ Rh.T, 2))


def lowrank_fro_sq(U: np.ndarray, H: np.ndarray) -> float:
    """||U^T H||_F^2 from the two r x r Gram matrices."""
    val = float(np.sum((U @ U.T) * (H @ H.T)))
    return max(val, 0.0)


@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float


def linear_fit(x, y) -> LineFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two points for a fit")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LineFit(float(slope), float(intercept), r2)


def loglog_fit(x, y) -> LineFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive data")
    return linear_fit(np.log(x), np.log(y))
