"""
Euclidean projection onto the probability simplex and onto the state-action
polyhedron ``{theta >= 0, sum(theta) = 1, flow balance}``.

The polyhedron projection runs Dykstra's alternating projections between the
affine hull ``{A x = b}`` and the nonnegative orthant. Whenever the set of
clipped coordinates settles, the candidate support is polished exactly by an
equality-constrained least-squares solve and accepted once its KKT conditions
certify. A support from the previous call can be passed as a warm start, which
is the common case inside the online controller where consecutive targets move
by ``O(1/sqrt(T))``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .errors import ConvergenceError, DimensionError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10**5


def project_simplex(y):
    """Euclidean projection of ``y`` onto the probability simplex (sort-and-threshold)."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise DimensionError("project_simplex expects a non-empty 1-D vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("entries must be finite")
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    shift = css[rho] / (rho + 1)
    return np.maximum(y - shift, 0.0)


@dataclass(frozen=True)
class PolyhedronSpec:
    """Equality system ``A theta = b`` (with ``theta >= 0`` implied).

    Row 0 is the normalization ``sum(theta) = 1``; rows ``1..S-1`` are the flow
    balance equations for states ``0..S-2`` (the last balance row is linearly
    dependent on the others and is dropped).
    """

    A: np.ndarray
    b: np.ndarray
    num_states: int
    num_actions: int
    rank: int
    _gram_pinv: np.ndarray = field(repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self):
        return self.A.shape[1]


@dataclass
class ProjectionReport:
    point: np.ndarray
    iterations: int
    kkt_residual: float
    active_set_size: int
    zero_mask: np.ndarray = field(repr=False, default=None)


def build_polyhedron(m):
    """Equality description of the state-action polyhedron of model ``m``."""
    S, A = m.num_states, m.num_actions
    # balance[s', (s, a)] = P_a(s, s') - 1{s == s'}
    inflow = np.transpose(m.kernel, (1, 0, 2)).reshape(S * A, S).T
    outflow = np.repeat(np.eye(S), A, axis=1)
    balance = inflow - outflow
    Amat = np.vstack([np.ones((1, S * A)), balance[: S - 1]])
    b = np.zeros(Amat.shape[0])
    b[0] = 1.0
    Amat.setflags(write=False)
    b.setflags(write=False)
    rank = int(np.linalg.matrix_rank(Amat))
    gram_pinv = np.linalg.pinv(Amat @ Amat.T)
    return PolyhedronSpec(
        A=Amat, b=b, num_states=S, num_actions=A, rank=rank, _gram_pinv=gram_pinv
    )


def _affine_projection(spec, z):
    return z - spec.A.T @ (spec._gram_pinv @ (spec.A @ z - spec.b))


def _support_solver(spec, zero_mask):
    key = zero_mask.tobytes()
    hit = spec._cache.get(key)
    if hit is None:
        free = ~zero_mask
        AF = spec.A[:, free]
        G = np.linalg.pinv(AF @ AF.T)
        rank_deficient = np.linalg.matrix_rank(AF) < spec.A.shape[0]
        hit = (free, AF, G, spec.A[:, zero_mask], rank_deficient)
        if len(spec._cache) < 4096:
            spec._cache[key] = hit
    return hit


def _polish(spec, y, zero_mask, tol):
    """Exact minimizer of ``||x - y||`` on ``{A x = b, x_Z = 0}`` plus KKT check.

    Returns ``(x, residual)`` when the candidate certifies, else ``None``.
    """
    free, AF, G, AZ, rank_deficient = _support_solver(spec, zero_mask)
    if not free.any():
        return None
    yF = y[free]
    nu = G @ (spec.b - AF @ yF)
    xF = yF + AF.T @ nu
    lam = -y[zero_mask] - AZ.T @ nu
    primal = float(np.abs(AF @ xF - spec.b).max())
    if primal > tol or (xF.size and xF.min() < -tol):
        return None
    if lam.size and lam.min() < -tol:
        if not rank_deficient:
            return None
        # multipliers are not unique; search the admissible family for lam >= 0
        x = np.zeros_like(y)
        x[free] = np.maximum(xF, 0.0)
        res = kkt_residual(spec, y, x)
        if res > tol:
            return None
        return x, res
    x = np.zeros_like(y)
    x[free] = np.maximum(xF, 0.0)
    dual = float(-lam.min()) if lam.size else 0.0
    return x, max(primal, dual, 0.0)


def kkt_residual(spec, y, x, active_tol=1e-10):
    """Certificate residual for ``x`` as the projection of ``y``.

    Combines primal infeasibility with the best stationarity residual
    ``min ||x - y - A^T nu - lam||`` over free ``nu`` and ``lam >= 0``
    supported on the (numerically) zero coordinates of ``x``.
    """
    x = np.asarray(x, dtype=float)
    primal = max(float(np.abs(spec.A @ x - spec.b).max()), float(max(-x.min(), 0.0)))
    zero = x <= active_tol
    n, r = spec.dim, spec.A.shape[0]
    basis = np.hstack([spec.A.T, np.eye(n)[:, zero]])
    lb = np.concatenate([np.full(r, -np.inf), np.zeros(zero.sum())])
    ub = np.full(r + zero.sum(), np.inf)
    sol = lsq_linear(basis, x - y, bounds=(lb, ub), method="bvls", tol=1e-14)
    station = float(np.abs(basis @ sol.x - (x - y)).max())
    comp = float(np.abs(sol.x[r:] * x[zero]).max()) if zero.any() else 0.0
    return max(primal, station, comp)


def project_theta(spec, y, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, warm_zero_mask=None):
    """Euclidean projection of ``y`` onto ``{x >= 0, A x = b}``.

    Parameters
    ----------
    spec : PolyhedronSpec
    y : array_like
        Point to project, length ``spec.dim``.
    tol : float
        Bound on the KKT residual of the returned point.
    max_iter : int
        Cap on Dykstra sweeps.
    warm_zero_mask : ndarray of bool, optional
        Guess for the set of zero coordinates of the answer.

    Returns
    -------
    ProjectionReport

    Raises
    ------
    ConvergenceError
        If no certified point is found within ``max_iter`` sweeps; ``best``
        holds the last iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.dim,):
        raise DimensionError(f"expected vector of length {spec.dim}, got shape {y.shape}")

    if warm_zero_mask is not None:
        hit = _polish(spec, y, np.asarray(warm_zero_mask, dtype=bool), tol)
        if hit is not None:
            return _report(hit, 0)

    x = y.copy()
    p = np.zeros_like(y)
    q = np.zeros_like(y)
    last_mask = None
    for it in range(1, max_iter + 1):
        u = _affine_projection(spec, x + p)
        p = x + p - u
        z = u + q
        x_new = np.maximum(z, 0.0)
        q = z - x_new
        mask = x_new <= 0.0
        if last_mask is None or (mask != last_mask).any() or it % 64 == 0:
            hit = _polish(spec, y, mask, tol)
            if hit is not None:
                return _report(hit, it)
            last_mask = mask
        step = float(np.abs(x_new - x).max())
        x = x_new
        if step <= 1e-3 * tol:
            res = kkt_residual(spec, y, x)
            if res <= tol:
                return ProjectionReport(x, it, res, int((x <= 0).sum()), x <= 0)
    raise ConvergenceError(f"projection did not certify within {max_iter} iterations", best=x)


def _report(hit, iterations):
    x, res = hit
    zero = x <= 0.0
    return ProjectionReport(x, iterations, res, int(zero.sum()), zero)


def project_theta_bruteforce(spec, y):
    """Exhaustive active-set oracle for small polyhedra.

    Enumerates every subset of coordinates forced to zero, solves the
    equality-constrained least-squares problem on the rest, and keeps the
    closest feasible candidate. Exponential in ``spec.dim``; intended for
    ``dim <= 12``.
    """
    y = np.asarray(y, dtype=float)
    n = spec.dim
    best, best_dist = None, np.inf
    for zeros in itertools.product((False, True), repeat=n):
        Z = np.array(zeros)
        F = ~Z
        if not F.any():
            continue
        AF = spec.A[:, F]
        # min ||xF - yF|| s.t. AF xF = b, via the least-norm correction
        rhs = spec.b - AF @ y[F]
        corr, *_ = np.linalg.lstsq(AF, rhs, rcond=None)
        xF = y[F] + corr
        if np.abs(AF @ xF - spec.b).max() > 1e-9 or xF.min() < -1e-12:
            continue
        x = np.zeros(n)
        x[F] = np.maximum(xF, 0.0)
        dist = float(np.sum((x - y) ** 2))
        if dist < best_dist:
            best, best_dist = x, dist
    return best
