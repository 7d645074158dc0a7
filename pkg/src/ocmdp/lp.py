"""
Linear programming baselines.

:func:`solve_lp` is a dense two-phase tableau simplex for problems of the form

    min c.x   s.t.   A x = b,   G x <= h,   x >= 0

It pivots with Dantzig's rule and falls back to Bland's rule after a run of
degenerate pivots. On top of it sit the best-in-hindsight stationary benchmark
over the product of state-action polyhedra, its relaxed variant, the
perturbation-gap check and the closed-form theory constants.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, LpNumericalError, ScenarioError
from .projection import build_polyhedron

PIVOT_EPS = 1e-11
OPT_EPS = 1e-11
FEAS_EPS = 1e-9
DEGENERATE_STREAK = 30


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, float))
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, float).ravel()
        self.G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, float))
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, float).ravel()
        if self.A.size == 0:
            self.A = self.A.reshape(0, n)
        if self.G.size == 0:
            self.G = self.G.reshape(0, n)
        if self.A.shape != (self.b.size, n) or self.G.shape != (self.h.size, n):
            raise ValueError("inconsistent LP dimensions")
        for arr in (self.c, self.A, self.b, self.G, self.h):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP data must be finite")

    @property
    def num_vars(self):
        return self.c.size


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float = math.nan
    point: np.ndarray = None
    duals: np.ndarray = None  # multipliers >= 0 for the G rows
    eq_duals: np.ndarray = None
    iterations: int = 0
    primal_residual: float = math.nan
    cs_residual: float = math.nan
    basis: tuple = ()
    snapshots: list = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == "optimal"


class _Tableau:
    def __init__(self, M, rhs, basis):
        self.M = M
        self.rhs = rhs
        self.basis = list(basis)

    def pivot(self, row, col):
        piv = self.M[row, col]
        self.M[row] /= piv
        self.rhs[row] /= piv
        col_vals = self.M[:, col].copy()
        col_vals[row] = 0.0
        nz = np.nonzero(np.abs(col_vals) > 0.0)[0]
        if nz.size:
            self.M[nz] -= np.outer(col_vals[nz], self.M[row])
            self.rhs[nz] -= col_vals[nz] * self.rhs[row]
        self.M[:, col] = 0.0
        self.M[row, col] = 1.0
        self.basis[row] = col

    def reduced_costs(self, cost):
        cb = cost[self.basis]
        return cost - cb @ self.M, float(cb @ self.rhs)


def _simplex(tab, cost, allowed, max_iter, snapshots=None):
    """Run primal simplex on ``tab`` over columns where ``allowed`` is True."""
    bland = False
    streak = 0
    for it in range(max_iter):
        red, obj = tab.reduced_costs(cost)
        if snapshots is not None:
            snapshots.append(obj)
        cand = np.nonzero(allowed & (red < -OPT_EPS))[0]
        if cand.size == 0:
            return "optimal", it
        col = int(cand[0]) if bland else int(cand[np.argmin(red[cand])])
        colv = tab.M[:, col]
        rows = np.nonzero(colv > PIVOT_EPS)[0]
        if rows.size == 0:
            return "unbounded", it
        ratios = tab.rhs[rows] / colv[rows]
        rmin = ratios.min()
        ties = rows[ratios <= rmin + 1e-13 * max(1.0, abs(rmin))]
        row = int(min(ties, key=lambda r: tab.basis[r]))
        if rmin <= 1e-13:
            streak += 1
            if streak >= DEGENERATE_STREAK:
                bland = True
        else:
            streak = 0
        tab.pivot(row, col)
    raise LpNumericalError(f"simplex exceeded {max_iter} iterations")


def solve_lp(lp, max_iter=None):
    """Solve ``lp`` with a two-phase dense simplex.

    Returns an :class:`LpSolution` whose ``status`` is ``"optimal"``,
    ``"infeasible"`` or ``"unbounded"``. Optimal solutions carry inequality
    multipliers ``duals >= 0`` and residual diagnostics.

    Raises
    ------
    LpNumericalError
        If the iteration cap is hit (after the anti-cycling rule engaged).
    """
    n = lp.num_vars
    p, q = lp.b.size, lp.h.size
    rows = p + q
    # standard form: [A 0; G I] [x; s] = [b; h], then artificials on every row
    std = np.zeros((rows, n + q))
    std[:p, :n] = lp.A
    std[p:, :n] = lp.G
    std[p:, n:] = np.eye(q)
    rhs = np.concatenate([lp.b, lp.h])
    sign = np.where(rhs < 0, -1.0, 1.0)
    std *= sign[:, None]
    rhs = rhs * sign
    nstd = n + q
    M = np.hstack([std, np.eye(rows)])
    tab = _Tableau(M.copy(), rhs.copy(), range(nstd, nstd + rows))
    if max_iter is None:
        max_iter = 50 * (nstd + rows) + 1000

    cost1 = np.concatenate([np.zeros(nstd), np.ones(rows)])
    allowed = np.ones(nstd + rows, dtype=bool)
    _, it1 = _simplex(tab, cost1, allowed, max_iter)
    phase1 = float(tab.rhs[[i for i, bv in enumerate(tab.basis) if bv >= nstd]].sum()) if rows else 0.0
    if phase1 > FEAS_EPS * max(1.0, np.abs(rhs).max(initial=0.0)):
        return LpSolution(status="infeasible", iterations=it1)

    # drive zero-level artificials out; drop rows that are redundant
    keep = np.ones(rows, dtype=bool)
    for r in range(rows):
        if tab.basis[r] >= nstd:
            cols = np.nonzero(np.abs(tab.M[r, :nstd]) > 1e-9)[0]
            if cols.size:
                tab.pivot(r, int(cols[0]))
            else:
                keep[r] = False
    tab = _Tableau(tab.M[keep][:, :nstd].copy(), tab.rhs[keep].copy(),
                   [bv for bv, k in zip(tab.basis, keep) if k])
    cost2 = np.concatenate([lp.c, np.zeros(q)])
    snaps = []
    status, it2 = _simplex(tab, cost2, np.ones(nstd, dtype=bool), max_iter, snapshots=snaps)
    if status == "unbounded":
        return LpSolution(status="unbounded", iterations=it1 + it2)

    z = np.zeros(nstd)
    z[tab.basis] = np.clip(tab.rhs, 0.0, None)
    x = z[:n]
    # duals y of the (sign-adjusted) standard rows from B^T y = c_B
    B = std[keep][:, tab.basis]
    y_kept = np.linalg.lstsq(B.T, cost2[tab.basis], rcond=None)[0]
    y = np.zeros(rows)
    y[keep] = y_kept
    y *= sign
    eq_duals = y[:p]
    ineq_duals = np.clip(-y[p:], 0.0, None)

    value = float(lp.c @ x)
    primal_res = 0.0
    if p:
        primal_res = max(primal_res, float(np.abs(lp.A @ x - lp.b).max()))
    if q:
        primal_res = max(primal_res, float(np.clip(lp.G @ x - lp.h, 0.0, None).max()))
    reduced = lp.c - lp.A.T @ eq_duals + lp.G.T @ ineq_duals
    cs = float(np.abs(reduced * x).max()) if n else 0.0
    if q:
        cs = max(cs, float(np.abs(ineq_duals * (lp.G @ x - lp.h)).max()))
    return LpSolution(
        status="optimal",
        value=value,
        point=x,
        duals=ineq_duals,
        eq_duals=eq_duals,
        iterations=it1 + it2,
        primal_residual=primal_res,
        cs_residual=cs,
        basis=tuple(int(bv) for bv in tab.basis),
        snapshots=snaps,
    )


def dual_objective(lp, sol):
    """``b.y_eq - h.mu`` -- equals the optimal value at an optimum."""
    return float(lp.b @ sol.eq_duals - lp.h @ sol.duals)


def stationary_lp(models, mean_f, mean_g, slack=0.0):
    """Benchmark LP over ``Theta^(1) x ... x Theta^(K)`` with coupled constraints.

    ``mean_f[k]`` has length ``S_k * A_k``; ``mean_g[k]`` has shape
    ``(m, S_k * A_k)``. Each coupled row reads
    ``sum_k <mean_g[k][i], theta_k> <= slack``.
    """
    specs = [build_polyhedron(md) for md in models]
    sizes = [sp.dim for sp in specs]
    n = sum(sizes)
    c = np.concatenate([np.asarray(f, float).ravel() for f in mean_f])
    A = np.zeros((sum(sp.A.shape[0] for sp in specs), n))
    b = np.concatenate([sp.b for sp in specs])
    r0 = c0 = 0
    for sp in specs:
        A[r0:r0 + sp.A.shape[0], c0:c0 + sp.dim] = sp.A
        r0 += sp.A.shape[0]
        c0 += sp.dim
    m = np.asarray(mean_g[0]).reshape(-1, sizes[0]).shape[0] if len(mean_g) else 0
    if m:
        G = np.hstack([np.asarray(g, float).reshape(m, -1) for g in mean_g])
        h = np.full(m, float(slack))
    else:
        G = h = None
    return LinearProgram(c=c, A=A, b=b, G=G, h=h), sizes


def split_point(x, sizes):
    out, i = [], 0
    for s in sizes:
        out.append(np.asarray(x[i:i + s]))
        i += s
    return out


def best_stationary(models, mean_f, mean_g, m=None, slack=0.0):
    """Best separable stationary occupancy for the averaged functions.

    Returns an optimal :class:`LpSolution`; ``meta["thetas"]`` lists the
    per-MDP occupancy vectors.

    Raises
    ------
    ScenarioError
        If the constraint set is empty.
    """
    if m == 0:
        mean_g = []
    lp, sizes = stationary_lp(models, mean_f, mean_g, slack)
    sol = solve_lp(lp)
    if sol.status != "optimal":
        raise ScenarioError(f"benchmark LP is {sol.status}")
    sol.meta["thetas"] = split_point(sol.point, sizes)
    sol.meta["slack"] = float(slack)
    sol.meta["lp"] = lp
    return sol


def relaxed_stationary(models, mean_f, mean_g, m=None, slack=0.0):
    """Benchmark LP with every coupled constraint loosened to ``<= slack``."""
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    return best_stationary(models, mean_f, mean_g, m, slack)


@dataclass
class GapReport:
    original: float
    relaxed: float
    gap: float
    bound: float
    slack: float
    multipliers: np.ndarray

    @property
    def ok(self):
        return -1e-9 <= self.gap <= self.bound + 1e-6


def perturbation_gap_check(models, mean_f, mean_g, eta, slack, psi=None):
    """Compare the benchmark LP with its relaxation by ``slack``.

    Slater's margin ``eta`` bounds the multipliers by
    ``sum(mu) <= 2 sqrt(m) psi K / eta``, hence
    ``original - relaxed <= slack * 2 sqrt(m) psi K / eta``. ``psi`` defaults
    to ``max |mean_f|``.

    Raises
    ------
    InvariantViolation
        If the gap is negative or exceeds the bound beyond ``1e-6``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    K = len(models)
    m = np.asarray(mean_g[0]).reshape(-1, np.asarray(mean_f[0]).size).shape[0] if len(mean_g) else 0
    if psi is None:
        psi = max(float(np.abs(f).max()) for f in mean_f)
    orig = best_stationary(models, mean_f, mean_g, m)
    relax = relaxed_stationary(models, mean_f, mean_g, m, slack)
    gap = orig.value - relax.value
    bound = slack * 2.0 * math.sqrt(m) * psi * K / eta
    rep = GapReport(orig.value, relax.value, gap, bound, float(slack), orig.duals)
    if not rep.ok:
        raise InvariantViolation(
            f"perturbation gap {gap!r} outside [0, {bound!r}]",
            name="perturbation-gap",
            witness=rep,
        )
    return rep


@dataclass(frozen=True)
class TheoryConstants:
    C: float
    regret_constant: float
    violation_constant: float
    T: int

    @property
    def queue_bound(self):
        return self.C * math.sqrt(self.T)

    @property
    def regret_bound(self):
        return self.regret_constant * math.sqrt(self.T)

    @property
    def violation_bound(self):
        return self.violation_constant * math.sqrt(self.T)

    def to_dict(self):
        return {
            "C": self.C,
            "regret_constant": self.regret_constant,
            "violation_constant": self.violation_constant,
            "T": self.T,
            "queue_bound": self.queue_bound,
            "regret_bound": self.regret_bound,
            "violation_bound": self.violation_bound,
        }


def queue_constant(m, K, psi, eta):
    """Constant ``C`` with ``E||Q(t)|| <= C sqrt(T)`` when ``V = sqrt(T)``, ``alpha = T``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return (
        8 * K * psi / eta
        + 3 * m * K**2 * psi**2 / eta**2
        + (4 * K + m * psi) / eta
        + 2 * m * K * psi
        + eta
        + 4 * math.sqrt(m) * K * psi * math.log(1 + 8 * math.exp(0.25))
    )


def theory_constants(m, K, psi, eta, T, sizes):
    """Regret / violation / queue constants for horizon ``T``.

    ``sizes`` is a list of ``(num_states, num_actions)`` per MDP.
    """
    C = queue_constant(m, K, psi, eta)
    sa = [S * A for S, A in sizes]
    regret = 2 * K + psi**2 / 2 * sum(sa) + 2.5 * m * K**2 * psi**2
    violation = C + sum(math.sqrt(m * x) * psi * C for x in sa) + sum(x * psi**2 for x in sa)
    return TheoryConstants(C=C, regret_constant=regret, violation_constant=violation, T=int(T))
