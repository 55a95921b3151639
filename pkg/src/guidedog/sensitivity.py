"""Sensitivity augmentation of optimal control problems.

The sensitivity function S(t) = dx/dp (n x m) of a system
dx/dt = f(x, u, p, t) obeys the variational equation

    dS/dt = A(t) S + B(t),    A = df/dx,  B = df/dp,  S(t0) = 0,

so stacking vec(S) onto the state vector turns sensitivity shaping
into an ordinary optimal control problem: the cost gains the trace
penalty tr(W . (G S) P (G S)') at the final time (and optionally under
the integral), where G is the Jacobian of a user-chosen penalty
function of the state and P the parameter covariance.

vec(S) is column-major throughout: transcription, interpolation and
guidance restarts all rely on that ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .ocp import DesensitizationSpec, OcpDefinition

__all__ = ["AugmentedOcp", "augment", "penalty_value", "vec_sensitivity", "unvec_sensitivity"]


def vec_sensitivity(s: np.ndarray) -> np.ndarray:
    """Column-major vectorization of an n x m sensitivity matrix."""
    return np.asarray(s, dtype=float).ravel(order="F")


def unvec_sensitivity(v: np.ndarray, n: int, m: int) -> np.ndarray:
    """Inverse of :func:`vec_sensitivity`."""
    return np.asarray(v, dtype=float).reshape((n, m), order="F")


def _unvec_batch(v: np.ndarray, n: int, m: int) -> np.ndarray:
    # rows of v are column-stacked matrices; (P, n*m) -> (P, n, m)
    return v.reshape(v.shape[0], m, n).transpose(0, 2, 1)


def _vec_batch(s: np.ndarray) -> np.ndarray:
    return s.transpose(0, 2, 1).reshape(s.shape[0], -1)


def penalty_value(S, G, W, P) -> float:
    """Trace penalty tr(W . (G S) P (G S)') — always >= 0 for PSD W, P."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    gs = G @ S
    return float(np.trace(W @ gs @ P @ gs.T))


@dataclass(frozen=True)
class _AugmentedDynamics:
    base: OcpDefinition

    def __call__(self, xa, u, p, t):
        n, m = self.base.n_states, self.base.n_params
        xa = np.asarray(xa, dtype=float)
        if xa.ndim == 1:
            x = xa[:n]
            S = unvec_sensitivity(xa[n:], n, m)
            dx = np.asarray(self.base.dynamics(x, u, p, t), dtype=float)
            dS = self.base.jac_x(x, u, p, t) @ S + self.base.jac_p(x, u, p, t)
            return np.concatenate((dx, vec_sensitivity(dS)))
        x = xa[:, :n]
        S = _unvec_batch(xa[:, n:], n, m)
        dx = np.asarray(self.base.dynamics(x, u, p, t), dtype=float)
        A = np.asarray(self.base.jac_x(x, u, p, t), dtype=float)
        B = np.asarray(self.base.jac_p(x, u, p, t), dtype=float)
        dS = np.einsum("pij,pjk->pik", A, S) + B
        return np.concatenate((dx, _vec_batch(dS)), axis=1)


@dataclass(frozen=True)
class _AugmentedRunningCost:
    base: OcpDefinition
    spec: DesensitizationSpec

    def __call__(self, xa, u, t):
        n, m = self.base.n_states, self.base.n_params
        xa = np.asarray(xa, dtype=float)
        batched = xa.ndim == 2
        x = xa[:, :n] if batched else xa[:n]
        out = 0.0
        if self.base.running_cost is not None:
            out = np.asarray(self.base.running_cost(x, u, t), dtype=float)
        if self.spec.running_weight is not None:
            P = self.spec.param_covariance
            if batched:
                pen = np.empty(xa.shape[0])
                ts = np.broadcast_to(np.asarray(t, dtype=float), (xa.shape[0],))
                for i in range(xa.shape[0]):
                    S = unvec_sensitivity(xa[i, n:], n, m)
                    pen[i] = penalty_value(S, self.spec.penalty_jacobian(x[i]),
                                           self.spec.running_weight(ts[i]), P)
            else:
                S = unvec_sensitivity(xa[n:], n, m)
                pen = penalty_value(S, self.spec.penalty_jacobian(x),
                                    self.spec.running_weight(float(t)), P)
            out = out + pen
        if batched and np.ndim(out) == 0:
            out = np.full(xa.shape[0], float(out))
        return out


@dataclass(frozen=True)
class _AugmentedTerminalCost:
    base: OcpDefinition
    spec: DesensitizationSpec

    def __call__(self, xa0, t0, xaf, tf):
        n, m = self.base.n_states, self.base.n_params
        xf = xaf[:n]
        out = 0.0
        if self.base.terminal_cost is not None:
            out = float(self.base.terminal_cost(xa0[:n], t0, xf, tf))
        Sf = unvec_sensitivity(xaf[n:], n, m)
        return out + penalty_value(Sf, self.spec.penalty_jacobian(xf),
                                   self.spec.terminal_weight,
                                   self.spec.param_covariance)


@dataclass(frozen=True)
class _ProjectedBoundary:
    base_boundary: object
    n: int

    def __call__(self, xa0, t0, xaf, tf):
        return self.base_boundary(xa0[: self.n], t0, xaf[: self.n], tf)


@dataclass(frozen=True)
class _ProjectedPathConstraint:
    base_path: object
    n: int

    def __call__(self, xa, u, t):
        xa = np.asarray(xa)
        x = xa[:, : self.n] if xa.ndim == 2 else xa[: self.n]
        return self.base_path(x, u, t)


@dataclass(frozen=True)
class AugmentedOcp:
    """An OCP whose state carries the n x m sensitivity function.

    ``ocp`` is the transcribable augmented problem; ``base`` the
    original.  The augmented boundary pins S(t0) = s0 and leaves S(tf)
    free.
    """

    base: OcpDefinition
    ocp: OcpDefinition
    spec: DesensitizationSpec
    s0: np.ndarray          # (n, m)
    n_x: int
    n_param: int
    n_aug: int


def augment(ocp: OcpDefinition, spec: DesensitizationSpec,
            s0: Optional[np.ndarray] = None) -> AugmentedOcp:
    """Stack vec(S) onto the state and add the trace penalty to the cost.

    With zero weights the augmented cost equals the base cost at every
    feasible point, so beta = 0 degenerates exactly to the original
    problem (up to the extra, cost-free sensitivity states).
    """
    if isinstance(ocp, AugmentedOcp):
        raise TypeError("problem is already augmented")
    if ocp.jac_x is None or ocp.jac_p is None:
        raise ValueError("augmentation requires jac_x and jac_p callbacks")
    n, m = ocp.n_states, ocp.n_params
    if m < 1:
        raise ValueError("augmentation needs at least one uncertain parameter")
    if s0 is None:
        s0 = np.zeros((n, m))
    s0 = np.asarray(s0, dtype=float)
    if s0.shape != (n, m):
        raise ValueError(f"s0 has shape {s0.shape}, expected ({n}, {m})")
    probe = ocp.initial_state if ocp.initial_state is not None else np.zeros(n)
    G = np.atleast_2d(np.asarray(spec.penalty_jacobian(probe), dtype=float))
    if G.shape[1] != n:
        raise ValueError(f"penalty_jacobian returned shape {G.shape}, expected (r, {n})")
    r = G.shape[0]
    if spec.terminal_weight.shape != (r, r):
        raise ValueError(
            f"terminal_weight is {spec.terminal_weight.shape}, expected ({r}, {r})"
        )
    if spec.param_covariance.shape != (m, m):
        raise ValueError(
            f"param_covariance is {spec.param_covariance.shape}, expected ({m}, {m})"
        )

    nan = np.full(n, np.nan)
    init = ocp.initial_state if ocp.initial_state is not None else nan
    term = ocp.terminal_state if ocp.terminal_state is not None else nan
    aug = replace(
        ocp,
        n_states=n + n * m,
        dynamics=_AugmentedDynamics(ocp),
        jac_x=None,
        jac_p=None,
        running_cost=_AugmentedRunningCost(ocp, spec),
        terminal_cost=_AugmentedTerminalCost(ocp, spec),
        initial_state=np.concatenate((init, vec_sensitivity(s0))),
        terminal_state=np.concatenate((term, np.full(n * m, np.nan))),
        boundary=None if ocp.boundary is None else _ProjectedBoundary(ocp.boundary, n),
        path_constraint=(None if ocp.path_constraint is None
                         else _ProjectedPathConstraint(ocp.path_constraint, n)),
    )
    return AugmentedOcp(base=ocp, ocp=aug, spec=spec, s0=s0,
                        n_x=n, n_param=m, n_aug=n + n * m)
