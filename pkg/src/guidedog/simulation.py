"""Truth-plant propagation under an interpolated reference control.

Integrates the physical dynamics with (possibly perturbed) parameters
while the control is read from a solved trajectory.  Integration is
split at the trajectory's mesh-interval boundaries so that adaptive
steps never straddle a point where the control interpolant switches
polynomials.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .ocp import OcpDefinition
from .trajectory import Trajectory, control_at

__all__ = ["SimResult", "control_at", "integrate"]


@dataclass
class SimResult:
    """Integrated state history over one span.

    ``times`` are the integrator's accepted step times (strictly
    monotone, first = t_start, last = t_end); ``states`` and
    ``controls`` are row-aligned with them.  Dense in-between values
    come from :meth:`state_at`.
    """

    t_start: float
    t_end: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    _segments: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        d = np.diff(self.times)
        forward = self.t_end >= self.t_start
        if (forward and np.any(d <= 0.0)) or (not forward and np.any(d >= 0.0)):
            raise ValueError("simulation time grid must be strictly monotone")
        for got, want in ((self.times[0], self.t_start),
                          (self.times[-1], self.t_end)):
            if abs(got - want) > 1e-9 * (1.0 + abs(want)):
                raise ValueError(
                    f"time grid spans [{self.times[0]}, {self.times[-1]}], "
                    f"expected [{self.t_start}, {self.t_end}]"
                )

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        lo, hi = sorted((self.t_start, self.t_end))
        if t < lo - 1e-9 * (1.0 + abs(lo)) or t > hi + 1e-9 * (1.0 + abs(hi)):
            raise ValueError(f"t = {t} outside simulated span [{lo}, {hi}]")
        for a, b, dense in self._segments:
            if min(a, b) - 1e-12 <= t <= max(a, b) + 1e-12:
                return np.atleast_1d(dense(t))
        # only reachable through rounding at the outer edges
        return self.states[0] if abs(t - self.t_start) < abs(t - self.t_end) \
            else self.states[-1]

    def sample(self, times) -> np.ndarray:
        return np.stack([self.state_at(t) for t in np.asarray(times, float)])


def integrate(ocp: OcpDefinition, traj: Trajectory, x0, span, p_tilde=None,
              abs_tol: float = 1e-10, rel_tol: float = 1e-10) -> SimResult:
    """Propagate ``xdot = f(x, control_at(traj, t), p_tilde, t)`` over span.

    ``span = (t_start, t_end)`` must lie within the trajectory's time
    domain; a reversed span integrates backward.  Raises RuntimeError
    when the integrator cannot reach the end of a segment.
    """
    t_start, t_end = float(span[0]), float(span[1])
    ocp = getattr(ocp, "ocp", ocp)   # accept an augmented wrapper as-is
    if abs_tol <= 0.0 or rel_tol <= 0.0:
        raise ValueError("integration tolerances must be positive")
    lo, hi = sorted((t_start, t_end))
    slack = 1e-9 * (1.0 + max(abs(traj.t0), abs(traj.tf)))
    if lo < traj.t0 - slack or hi > traj.tf + slack:
        raise ValueError(
            f"span [{t_start}, {t_end}] outside trajectory domain "
            f"[{traj.t0}, {traj.tf}]"
        )
    params = np.asarray(
        ocp.nominal_params if p_tilde is None else p_tilde, dtype=float)
    if params.shape != (ocp.n_params,):
        raise ValueError(
            f"p_tilde has shape {params.shape}, expected ({ocp.n_params},)"
        )

    def rhs(t, x):
        u = control_at(traj, t)
        return np.atleast_1d(np.asarray(
            ocp.dynamics(x, u, params, t), dtype=float))

    # split at interior mesh boundaries so steps stay inside one
    # control polynomial
    bounds = np.asarray(traj.interval_times, dtype=float)
    interior = bounds[(bounds > lo + 1e-12) & (bounds < hi - 1e-12)]
    cuts = np.concatenate(([t_start], interior if t_end >= t_start
                           else interior[::-1], [t_end]))

    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    times = [np.array([t_start])]
    states = [x[None, :].copy()]
    segments = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if a == b:
            continue
        sol = solve_ivp(rhs, (a, b), x, method="DOP853",
                        rtol=rel_tol, atol=abs_tol, dense_output=True)
        if not sol.success:
            raise RuntimeError(
                f"integration failed on [{a}, {b}]: {sol.message}"
            )
        segments.append((a, b, sol.sol))
        times.append(sol.t[1:])
        states.append(sol.y.T[1:])
        x = sol.y[:, -1].copy()

    t_grid = np.concatenate(times)
    x_grid = np.vstack(states)
    u_grid = np.stack([control_at(traj, t) for t in t_grid])
    return SimResult(t_start=t_start, t_end=t_end, times=t_grid,
                     states=x_grid, controls=u_grid, _segments=segments)
