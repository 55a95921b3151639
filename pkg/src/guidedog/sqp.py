"""Dense SQP solver for the NLPs produced by transcription.

The solver handles problems of the form

    min f(z)   s.t.   lower <= c(z) <= upper,

where rows with ``lower == upper`` are equalities.  Search directions
come from a quadratic subproblem with a damped quasi-Newton Hessian
(active-set treatment for inequality rows), globalized by a
backtracking line search on the l1 exact-penalty merit function.
Multiplier convention: L = f + lambda' c, so ``min x^2 s.t. x = 3``
has multiplier -6.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sensitivity import AugmentedOcp
from .transcription import Mesh, NlpProblem, map_tau_to_time
from .lgr import basis

__all__ = [
    "LineSearchOptions",
    "SolverOptions",
    "IterationRecord",
    "NlpSolution",
    "constraint_jacobian",
    "objective_gradient",
    "kkt_residual",
    "constraint_violation",
    "estimate_multipliers",
    "initial_guess",
    "solve",
]


@dataclass(frozen=True)
class LineSearchOptions:
    """Backtracking parameters for the merit line search."""

    sufficient_decrease: float = 1e-4
    contraction: float = 0.5
    max_backtracks: int = 30

    def __post_init__(self):
        if not 0.0 < self.sufficient_decrease < 1.0:
            raise ValueError("sufficient_decrease must lie in (0, 1)")
        if not 0.0 < self.contraction < 1.0:
            raise ValueError("contraction must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and strategy switches for :func:`solve`."""

    kkt_tolerance: float = 1e-8
    max_iterations: int = 200
    hessian_mode: str = "quasi-newton"   # or "gauss-newton"
    line_search: LineSearchOptions = field(default_factory=LineSearchOptions)

    def __post_init__(self):
        if not self.kkt_tolerance > 0.0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.hessian_mode not in ("quasi-newton", "gauss-newton"):
            raise ValueError(
                f"unknown hessian_mode {self.hessian_mode!r}; "
                "expected 'quasi-newton' or 'gauss-newton'"
            )


@dataclass(frozen=True)
class IterationRecord:
    """One accepted SQP step, for diagnostics and merit-trace tests."""

    iteration: int
    objective: float
    violation: float
    penalty: float
    step_length: float
    kkt: float


@dataclass
class NlpSolution:
    """Result of an SQP solve.

    ``status`` is one of ``converged``, ``max-iterations`` or
    ``line-search-failure``; non-converged statuses still carry the
    best iterate found.  ``hessian`` is the final quasi-Newton matrix,
    reusable to warm-start a closely related solve.
    """

    z: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    status: str
    objective: float
    constraint_violation: float
    hessian: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def constraint_violation(nlp: NlpProblem, c: np.ndarray) -> float:
    """Max-norm bound violation of a constraint vector."""
    if c.size == 0:
        return 0.0
    over = np.maximum(c - nlp.upper, 0.0)
    under = np.maximum(nlp.lower - c, 0.0)
    return float(np.max(np.maximum(over, under)))


def constraint_jacobian(nlp: NlpProblem, z: np.ndarray,
                        c0: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense constraint Jacobian.

    Uses the problem's analytic hook when present, otherwise forward
    differences with step 1e-7 (1 + |z_i|), sharing constraint
    evaluations across variables whose row footprints are disjoint.
    """
    if nlp.jacobian is not None:
        return np.asarray(nlp.jacobian(z), dtype=float)
    if c0 is None:
        c0 = nlp.constraints(z)
    m = c0.size
    J = np.zeros((m, nlp.n_vars))
    steps = 1e-7 * (1.0 + np.abs(z))
    if nlp.fd_groups is not None and nlp.var_footprints is not None:
        for group in nlp.fd_groups:
            zp = z.copy()
            zp[group] += steps[group]
            diff = nlp.constraints(zp) - c0
            for i in group:
                rows = nlp.var_footprints[i]
                J[rows, i] = diff[rows] / steps[i]
    else:
        for i in range(nlp.n_vars):
            zp = z.copy()
            zp[i] += steps[i]
            J[:, i] = (nlp.constraints(zp) - c0) / steps[i]
    return J


def objective_gradient(nlp: NlpProblem, z: np.ndarray) -> np.ndarray:
    """Objective gradient: analytic hook or central differences."""
    if nlp.gradient is not None:
        return np.asarray(nlp.gradient(z), dtype=float)
    g = np.empty(nlp.n_vars)
    for i in range(nlp.n_vars):
        h = 1e-6 * (1.0 + abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (nlp.objective(zp) - nlp.objective(zm)) / (2.0 * h)
    return g


def kkt_residual(nlp: NlpProblem, point: np.ndarray,
                 multipliers: np.ndarray) -> float:
    """Max-norm of stationarity and feasibility residuals at a point."""
    z = np.asarray(point, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    g = objective_gradient(nlp, z)
    c = nlp.constraints(z)
    if lam.size != c.size:
        raise ValueError(
            f"got {lam.size} multipliers for {c.size} constraints"
        )
    stat = g + constraint_jacobian(nlp, z, c).T @ lam if c.size else g
    return max(float(np.max(np.abs(stat))), constraint_violation(nlp, c))


def estimate_multipliers(nlp: NlpProblem, point: np.ndarray,
                         active_tolerance: float = 1e-7) -> np.ndarray:
    """Least-squares multiplier estimate at an arbitrary point.

    Minimizes the stationarity residual over the equality rows and any
    inequality rows within ``active_tolerance`` of a bound (others get
    zero).  Near a solution this reproduces the optimal multipliers and
    makes a good warm-start companion to a Hessian seed.
    """
    z = np.asarray(point, dtype=float)
    c = np.asarray(nlp.constraints(z), dtype=float)
    J = constraint_jacobian(nlp, z, c)
    g = objective_gradient(nlp, z)
    return _least_squares_multipliers(g, J, nlp.lower == nlp.upper,
                                      nlp.lower, nlp.upper, c,
                                      active_tolerance)


def _least_squares_multipliers(g, J, is_equality, lower, upper, c, act_tol):
    """Multiplier estimate minimizing the stationarity residual.

    Only equality rows and inequality rows near an active bound carry
    nonzero multipliers; inequality multipliers are clamped to the
    sign their side admits (lower active <= 0, upper active >= 0).
    """
    m = c.size
    lam = np.zeros(m)
    if m == 0:
        return lam
    at_lower = ~is_equality & (c <= lower + act_tol)
    at_upper = ~is_equality & (c >= upper - act_tol)
    active = np.nonzero(is_equality | at_lower | at_upper)[0]
    if active.size == 0:
        return lam
    sol, *_ = np.linalg.lstsq(J[active].T, -g, rcond=None)
    for val, row in zip(sol, active):
        if not is_equality[row]:
            if at_lower[row] and not at_upper[row]:
                val = min(val, 0.0)
            elif at_upper[row] and not at_lower[row]:
                val = max(val, 0.0)
        lam[row] = val
    return lam


def _solve_kkt(B, A, g, b):
    """Solve the equality-constrained QP KKT system."""
    n = B.shape[0]
    ma = A.shape[0]
    M = np.zeros((n + ma, n + ma))
    M[:n, :n] = B
    if ma:
        M[:n, n:] = A.T
        M[n:, :n] = A
    rhs = np.concatenate([-g, b])
    # fall back to least squares when the system is (numerically)
    # singular, e.g. consistent-but-redundant constraint rows
    try:
        sol = np.linalg.solve(M, rhs)
        resid = np.linalg.norm(M @ sol - rhs)
        if not np.all(np.isfinite(sol)) or \
                resid > 1e-8 * (1.0 + np.linalg.norm(rhs)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return sol[:n], sol[n:]


def _solve_qp(B, g, J, c, lower, upper, is_equality):
    """Active-set solution of the SQP quadratic subproblem.

    Minimizes 0.5 d'Bd + g'd subject to the linearized constraints
    lower - c <= J d <= upper - c (rows with equal bounds exactly).
    Returns the step, a full-length multiplier vector, and the final
    working set as a {row: side} mapping (side 0 equality, -1 lower,
    +1 upper).
    """
    m = c.size
    if m == 0:
        try:
            d = np.linalg.solve(B, -g)
        except np.linalg.LinAlgError:
            d, *_ = np.linalg.lstsq(B, -g, rcond=None)
        return d, np.zeros(0), {}

    lo_gap = lower - c
    up_gap = upper - c
    # working set: row -> side (0 equality, -1 lower, +1 upper)
    working = {int(i): 0 for i in np.nonzero(is_equality)[0]}
    for i in np.nonzero(~is_equality)[0]:
        if lo_gap[i] > 0.0:
            working[int(i)] = -1
        elif up_gap[i] < 0.0:
            working[int(i)] = +1

    max_rounds = 3 * (m + 5)
    d = np.zeros(B.shape[0])
    lam_w = np.zeros(0)
    rows = []
    for _ in range(max_rounds):
        rows = sorted(working)
        A = J[rows]
        b = np.array([
            lo_gap[i] if working[i] <= 0 else up_gap[i] for i in rows
        ])
        d, lam_w = _solve_kkt(B, A, g, b)

        # most violated inactive side, if any
        resid = J @ d
        worst, worst_row, worst_side = 0.0, -1, 0
        for i in np.nonzero(~is_equality)[0]:
            i = int(i)
            if i in working:
                continue
            v_lo = lo_gap[i] - resid[i]
            v_up = resid[i] - up_gap[i]
            if v_lo > worst:
                worst, worst_row, worst_side = v_lo, i, -1
            if v_up > worst:
                worst, worst_row, worst_side = v_up, i, +1
        if worst > 1e-10:
            working[worst_row] = worst_side
            continue

        # wrong-signed multiplier on a working inequality side
        worst_mag, drop_row = 0.0, -1
        for val, i in zip(lam_w, rows):
            side = working[i]
            if side == -1 and val > worst_mag:
                worst_mag, drop_row = val, i
            elif side == +1 and -val > worst_mag:
                worst_mag, drop_row = -val, i
        if worst_mag > 1e-12:
            del working[drop_row]
            continue
        break

    lam = np.zeros(m)
    for val, i in zip(lam_w, rows):
        lam[i] = val
    return d, lam, working


def _damped_bfgs_update(B, s, y):
    """Powell-damped BFGS update keeping B positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-16:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(s @ y)
    if sy <= 1e-16:
        return B
    return B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy


def _merit(f, viol, nu):
    return f + nu * viol


def _l1_violation(nlp, c):
    if c.size == 0:
        return 0.0
    over = np.maximum(c - nlp.upper, 0.0)
    under = np.maximum(nlp.lower - c, 0.0)
    return float(np.sum(over + under))


def solve(nlp: NlpProblem, guess: np.ndarray,
          opts: Optional[SolverOptions] = None,
          hessian0: Optional[np.ndarray] = None,
          multipliers0: Optional[np.ndarray] = None) -> NlpSolution:
    """Run SQP from ``guess``; deterministic for identical inputs.

    ``hessian0``/``multipliers0`` seed the quasi-Newton matrix and the
    merit penalty from an earlier, closely related solve.
    """
    opts = opts or SolverOptions()
    z = np.asarray(guess, dtype=float).copy()
    if z.size != nlp.n_vars:
        raise ValueError(f"guess has {z.size} entries, expected {nlp.n_vars}")
    n = nlp.n_vars
    m = nlp.n_constraints
    is_equality = nlp.lower == nlp.upper

    if hessian0 is not None and opts.hessian_mode == "quasi-newton":
        B = np.asarray(hessian0, dtype=float).copy()
        if B.shape != (n, n):
            raise ValueError(f"hessian0 has shape {B.shape}, expected {(n, n)}")
    else:
        B = np.eye(n)

    nu = 1.0
    if multipliers0 is not None and multipliers0.size == m and m:
        nu = max(nu, 2.0 * float(np.max(np.abs(multipliers0))))

    ls = opts.line_search
    act_tol = max(10.0 * opts.kkt_tolerance, 1e-7)
    eps = np.finfo(float).eps

    f = float(nlp.objective(z))
    g = objective_gradient(nlp, z)
    c = nlp.constraints(z)
    J = constraint_jacobian(nlp, z, c)

    lam = np.zeros(m)
    status = "max-iterations"
    iterations = 0
    kkt = np.inf
    trace: list = []

    # Multipliers for the loop-top optimality check.  Any vector gives an
    # upper bound on the minimal stationarity residual (so passing the
    # check is always a valid certificate); the QP multipliers from the
    # previous accepted step are essentially free and tight near the
    # solution, so a fresh least-squares estimate is only computed when
    # neither they nor a caller-provided seed are available.
    lam_check = (np.asarray(multipliers0, dtype=float)
                 if multipliers0 is not None and multipliers0.size == m
                 else None)

    for it in range(opts.max_iterations + 1):
        if lam_check is None:
            lam_check = _least_squares_multipliers(
                g, J, is_equality, nlp.lower, nlp.upper, c, act_tol)
        stat = g + J.T @ lam_check if m else g
        viol_inf = constraint_violation(nlp, c)
        kkt = max(float(np.max(np.abs(stat))) if n else 0.0, viol_inf)
        if kkt <= opts.kkt_tolerance:
            status = "converged"
            lam = lam_check
            iterations = it
            break
        if it == opts.max_iterations:
            status = "max-iterations"
            lam = lam_check
            iterations = it
            break

        if opts.hessian_mode == "gauss-newton":
            B = 1e-2 * np.eye(n) + (J.T @ J if m else np.zeros((n, n)))

        d, lam_qp, working = _solve_qp(B, g, J, c, nlp.lower, nlp.upper,
                                       is_equality)
        step_scale = float(np.max(np.abs(d))) if n else 0.0
        if not np.all(np.isfinite(d)) or step_scale > 1e12:
            status = "line-search-failure"
            lam = lam_check
            iterations = it
            break
        # exact-penalty weight: raised when multipliers demand it,
        # relaxed slowly once they shrink again
        nu_req = 2.0 * float(np.max(np.abs(lam_qp))) + 1e-3 if lam_qp.size else 1e-3
        if nu_req > nu:
            nu = nu_req
        elif nu > 10.0 * nu_req:
            nu = max(nu_req, 0.1 * nu)

        viol_l1 = _l1_violation(nlp, c)
        phi0 = _merit(f, viol_l1, nu)
        dphi = float(g @ d) - nu * viol_l1
        tiny = -dphi <= 1e3 * eps * (1.0 + abs(phi0))

        alpha = 1.0
        accepted = False
        f_new = f
        for backtrack in range(ls.max_backtracks):
            z_new = z + alpha * d
            f_new = float(nlp.objective(z_new))
            c_new = nlp.constraints(z_new)
            phi_new = _merit(f_new, _l1_violation(nlp, c_new), nu)
            if tiny or phi_new <= phi0 + ls.sufficient_decrease * alpha * dphi:
                accepted = True
                break
            if backtrack == 0 and working:
                # second-order correction: retry the full step with the
                # curvature-induced violation of the working rows removed
                rows_w = sorted(working)
                target = np.array([
                    nlp.lower[i] if working[i] <= 0 else nlp.upper[i]
                    for i in rows_w
                ])
                resid = c_new[rows_w] - target
                Jw = J[rows_w]
                try:
                    # minimum-norm correction via the normal equations;
                    # ill-conditioned working sets fall back to lstsq
                    corr = Jw.T @ np.linalg.solve(Jw @ Jw.T, -resid)
                    ok = np.all(np.isfinite(corr)) and (
                        np.linalg.norm(Jw @ corr + resid)
                        <= 1e-8 * (1.0 + np.linalg.norm(resid)))
                except np.linalg.LinAlgError:
                    ok = False
                if not ok:
                    corr, *_ = np.linalg.lstsq(Jw, -resid, rcond=None)
                z_soc = z + d + corr
                f_soc = float(nlp.objective(z_soc))
                c_soc = nlp.constraints(z_soc)
                phi_soc = _merit(f_soc, _l1_violation(nlp, c_soc), nu)
                if phi_soc <= phi0 + ls.sufficient_decrease * dphi:
                    z_new, f_new, c_new = z_soc, f_soc, c_soc
                    accepted = True
                    break
            alpha *= ls.contraction
        if not accepted:
            status = "line-search-failure"
            lam = lam_check
            iterations = it
            break

        g_new = objective_gradient(nlp, z_new)
        J_new = constraint_jacobian(nlp, z_new, c_new)
        if opts.hessian_mode == "quasi-newton":
            s = z_new - z
            if m:
                y = (g_new + J_new.T @ lam_qp) - (g + J.T @ lam_qp)
            else:
                y = g_new - g
            B = _damped_bfgs_update(B, s, y)

        z, f, g, c, J = z_new, f_new, g_new, c_new, J_new
        lam = lam_qp
        lam_check = lam_qp
        trace.append(IterationRecord(
            iteration=it + 1, objective=f,
            violation=_l1_violation(nlp, c), penalty=nu,
            step_length=alpha, kkt=kkt,
        ))

    return NlpSolution(
        z=z, multipliers=lam, kkt_residual=kkt,
        iterations=iterations,
        status=status,
        objective=f, constraint_violation=constraint_violation(nlp, c),
        hessian=B, trace=trace,
    )


def initial_guess(problem, mesh: Mesh) -> np.ndarray:
    """Cold-start decision vector for a transcribed problem.

    Each state dimension is interpolated linearly in time between its
    pinned boundary values; with only one pin it is held constant, and
    unpinned dimensions start at zero.  Controls start at zero.
    """
    ocp = problem.ocp if isinstance(problem, AugmentedOcp) else problem
    na, nu = ocp.n_states, ocp.n_controls
    orders = mesh.orders
    C = int(np.sum(orders))
    P = C + 1

    tb = mesh.tau_boundaries
    taus = [tb[k] + (basis(nk).support + 1.0) * 0.5 * (tb[k + 1] - tb[k])
            for k, nk in enumerate(orders)]
    tau_support = np.concatenate([t if k == 0 else t[1:]
                                  for k, t in enumerate(taus)])
    t_support = map_tau_to_time(tau_support, mesh.t0, mesh.tf)

    init = ocp.initial_state
    term = ocp.terminal_state
    states = np.zeros((P, na))
    span = mesh.tf - mesh.t0
    frac = (t_support - mesh.t0) / span
    for d in range(na):
        a = None if init is None or np.isnan(init[d]) else float(init[d])
        b = None if term is None or np.isnan(term[d]) else float(term[d])
        if a is not None and b is not None:
            states[:, d] = a + (b - a) * frac
        elif a is not None:
            states[:, d] = a
        elif b is not None:
            states[:, d] = b
    return np.concatenate([states.ravel(), np.zeros(C * nu)])
