"""Bolza optimal control problem definitions.

An :class:`OcpDefinition` bundles dynamics, Jacobian callbacks, cost
terms, boundary conditions and nominal parameters.  The module also
ships the built-in cubic example problem

    min J = 1/2 integral (x^2 + u^2) dt
    s.t. dx/dt = -a^2 x^3 + a u,  x(0) = 1.5,  x(50) = 1.0,

whose single parameter a (nominal 2.0) is the uncertain quantity the
desensitization machinery targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "OcpDefinition",
    "DesensitizationSpec",
    "JacobianMismatch",
    "JacobianReport",
    "validate_jacobians",
    "example_problem",
    "fd_jacobian_callbacks",
]


def _as_float_array(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a one-dimensional vector")
    return arr


@dataclass(frozen=True)
class OcpDefinition:
    """A Bolza problem in Mayer + Lagrange form.

    Callbacks must be pure.  ``dynamics(x, u, p, t)`` returns the state
    derivative; ``jac_x`` and ``jac_p`` return A = df/dx (n x n) and
    B = df/dp (n x m).  ``initial_state`` / ``terminal_state`` pin state
    components at the endpoints (NaN entries are free); an additional
    general boundary function b(x0, t0, xf, tf) with lower/upper bounds
    is supported for coupled conditions.  With ``vectorized`` set, the
    dynamics/cost callbacks also accept stacked (P, n) inputs.
    """

    n_states: int
    n_controls: int
    n_params: int
    dynamics: Callable
    jac_x: Optional[Callable]
    jac_p: Optional[Callable]
    running_cost: Optional[Callable]
    terminal_cost: Optional[Callable]
    nominal_params: np.ndarray
    time_domain: tuple[float, float]
    initial_state: Optional[np.ndarray] = None
    terminal_state: Optional[np.ndarray] = None
    boundary: Optional[Callable] = None
    boundary_lower: Optional[np.ndarray] = None
    boundary_upper: Optional[np.ndarray] = None
    path_constraint: Optional[Callable] = None
    path_lower: Optional[np.ndarray] = None
    path_upper: Optional[np.ndarray] = None
    vectorized: bool = False

    def __post_init__(self):
        if self.n_states < 1 or self.n_controls < 0 or self.n_params < 0:
            raise ValueError("state/control/parameter counts out of range")
        t0, tf = self.time_domain
        if not t0 < tf:
            raise ValueError(f"time domain must satisfy t0 < tf, got ({t0}, {tf})")
        object.__setattr__(self, "time_domain", (float(t0), float(tf)))
        p = _as_float_array(self.nominal_params, "nominal_params")
        if p.size != self.n_params:
            raise ValueError(
                f"nominal_params has {p.size} entries, expected {self.n_params}"
            )
        object.__setattr__(self, "nominal_params", p)
        for name in ("initial_state", "terminal_state"):
            val = getattr(self, name)
            if val is not None:
                arr = _as_float_array(val, name)
                if arr.size != self.n_states:
                    raise ValueError(f"{name} has {arr.size} entries, expected {self.n_states}")
                object.__setattr__(self, name, arr)
        if (self.boundary is None) != (self.boundary_lower is None):
            raise ValueError("boundary callback and bounds must be given together")
        if self.boundary is not None:
            lo = _as_float_array(self.boundary_lower, "boundary_lower")
            hi = _as_float_array(self.boundary_upper, "boundary_upper")
            if lo.size != hi.size:
                raise ValueError("boundary bound vectors differ in length")
            if np.any(lo > hi):
                raise ValueError("boundary lower bounds exceed upper bounds")
            object.__setattr__(self, "boundary_lower", lo)
            object.__setattr__(self, "boundary_upper", hi)
        if self.path_constraint is not None:
            lo = _as_float_array(self.path_lower, "path_lower")
            hi = _as_float_array(self.path_upper, "path_upper")
            if lo.size != hi.size or np.any(lo > hi):
                raise ValueError("invalid path-constraint bounds")
            object.__setattr__(self, "path_lower", lo)
            object.__setattr__(self, "path_upper", hi)

    def with_initial_state(self, x0, time_domain=None) -> "OcpDefinition":
        """Copy of this problem restarted from ``x0`` (used by guidance)."""
        return replace(
            self,
            initial_state=np.asarray(x0, dtype=float),
            time_domain=self.time_domain if time_domain is None else time_domain,
        )


@dataclass(frozen=True)
class DesensitizationSpec:
    """Weights of the sensitivity trace penalty tr(W . G S P S' G').

    ``penalty_jacobian`` is G = dh/dx (r x n) for the penalty function
    h(x); ``terminal_weight`` is the r x r terminal weight, and
    ``running_weight`` an optional t -> (r x r) weight under the time
    integral (None means no running penalty).  ``param_covariance`` is
    the m x m parameter covariance P.
    """

    penalty_jacobian: Callable
    terminal_weight: np.ndarray
    param_covariance: np.ndarray
    running_weight: Optional[Callable] = None

    def __post_init__(self):
        for name in ("terminal_weight", "param_covariance"):
            w = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if w.shape[0] != w.shape[1]:
                raise ValueError(f"{name} must be square, got {w.shape}")
            if np.max(np.abs(w - w.T)) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(w)) < -1e-12:
                raise ValueError(f"{name} must be positive semi-definite")
            object.__setattr__(self, name, w)


class JacobianMismatch(ValueError):
    """Analytic Jacobian disagrees with finite differences."""


@dataclass
class JacobianReport:
    max_rel_discrepancy: float
    worst_entry: str = ""
    n_points: int = 0


def _central_jacobian(func, base, scale=1e-6):
    base = np.asarray(base, dtype=float)
    cols = []
    for j in range(base.size):
        h = scale * (1.0 + abs(base[j]))
        hi = base.copy()
        lo = base.copy()
        hi[j] += h
        lo[j] -= h
        cols.append((func(hi) - func(lo)) / (2.0 * h))
    return np.stack(cols, axis=1)


def validate_jacobians(ocp: OcpDefinition, sample_points: Sequence, p=None,
                       tol: float = 1e-4) -> JacobianReport:
    """Check jac_x / jac_p against central finite differences of the dynamics.

    ``sample_points`` is a sequence of (x, u, t) tuples.  Raises
    :class:`JacobianMismatch` naming the worst entry if the relative
    discrepancy exceeds ``tol`` anywhere (default 1e-4); otherwise
    returns a report with the largest discrepancy seen.
    """
    if ocp.jac_x is None or ocp.jac_p is None:
        raise ValueError("problem has no analytic Jacobian callbacks to validate")
    p = ocp.nominal_params if p is None else np.asarray(p, dtype=float)
    worst = 0.0
    worst_name = ""
    for x, u, t in sample_points:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        pairs = (
            ("jac_x", np.atleast_2d(ocp.jac_x(x, u, p, t)),
             _central_jacobian(lambda xx: ocp.dynamics(xx, u, p, t), x)),
            ("jac_p", np.atleast_2d(ocp.jac_p(x, u, p, t)),
             _central_jacobian(lambda pp: ocp.dynamics(x, u, pp, t), p)),
        )
        for name, analytic, fd in pairs:
            if analytic.shape != fd.shape:
                raise ValueError(f"{name} returned shape {analytic.shape}, expected {fd.shape}")
            denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
            rel = np.abs(analytic - fd) / denom
            idx = np.unravel_index(np.argmax(rel), rel.shape)
            if rel[idx] > worst:
                worst = float(rel[idx])
                worst_name = f"{name}[{idx[0]},{idx[1]}] at (x={x}, u={u}, t={t})"
    if worst > tol:
        raise JacobianMismatch(
            f"Jacobian check failed: {worst_name} differs from finite "
            f"differences by relative {worst:.3e} (tolerance {tol:.1e})"
        )
    return JacobianReport(worst, worst_name, len(sample_points))


def fd_jacobian_callbacks(dynamics, n_states: int, n_params: int,
                          scale: float = 1e-7):
    """Forward-difference fallback (jac_x, jac_p) for problems without analytic ones."""

    def jac_x(x, u, p, t):
        f0 = np.asarray(dynamics(x, u, p, t), dtype=float)
        cols = []
        for j in range(n_states):
            h = scale * (1.0 + abs(x[j]))
            xp = np.array(x, dtype=float)
            xp[j] += h
            cols.append((np.asarray(dynamics(xp, u, p, t)) - f0) / h)
        return np.stack(cols, axis=1)

    def jac_p(x, u, p, t):
        f0 = np.asarray(dynamics(x, u, p, t), dtype=float)
        cols = []
        for j in range(n_params):
            h = scale * (1.0 + abs(p[j]))
            pp = np.array(p, dtype=float)
            pp[j] += h
            cols.append((np.asarray(dynamics(x, u, pp, t)) - f0) / h)
        return np.stack(cols, axis=1)

    return jac_x, jac_p


# --- built-in example problem ---------------------------------------------
#
# All callbacks are module-level (picklable for worker pools) and accept
# either single points (n,) or stacked batches (P, n).

def _example_dynamics(x, u, p, t):
    return -p[0] ** 2 * x**3 + p[0] * u


def _example_jac_x(x, u, p, t):
    a = -3.0 * p[0] ** 2 * np.asarray(x)[..., 0] ** 2
    return a[..., None, None]


def _example_jac_p(x, u, p, t):
    b = -2.0 * p[0] * np.asarray(x)[..., 0] ** 3 + np.asarray(u)[..., 0]
    return b[..., None, None]


def _example_running_cost(x, u, t):
    return 0.5 * (np.asarray(x)[..., 0] ** 2 + np.asarray(u)[..., 0] ** 2)


def _unit_penalty_jacobian(x):
    # penalty h(x) = x itself: G = dh/dx = 1 (single state)
    return np.array([[1.0]])


@dataclass(frozen=True)
class _ExampleSpecTemplate:
    """Builds the example's DesensitizationSpec for given (beta, q).

    sigma = q * alpha and P = sigma^2; the terminal weight is beta and
    there is no running penalty.
    """

    alpha: float

    def __call__(self, beta: float, q: float) -> DesensitizationSpec:
        if beta < 0.0 or q < 0.0:
            raise ValueError("beta and q must be nonnegative")
        sigma = q * self.alpha
        return DesensitizationSpec(
            penalty_jacobian=_unit_penalty_jacobian,
            terminal_weight=np.array([[beta]]),
            param_covariance=np.array([[sigma**2]]),
        )


def example_problem(alpha: float = 2.0):
    """The built-in cubic problem and its desensitization-spec template.

    Returns ``(ocp, make_spec)`` where ``make_spec(beta, q)`` produces
    the matching :class:`DesensitizationSpec`.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    ocp = OcpDefinition(
        n_states=1,
        n_controls=1,
        n_params=1,
        dynamics=_example_dynamics,
        jac_x=_example_jac_x,
        jac_p=_example_jac_p,
        running_cost=_example_running_cost,
        terminal_cost=None,
        nominal_params=np.array([alpha]),
        time_domain=(0.0, 50.0),
        initial_state=np.array([1.5]),
        terminal_state=np.array([1.0]),
        vectorized=True,
    )
    return ocp, _ExampleSpecTemplate(alpha)
