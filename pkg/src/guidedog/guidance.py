"""Receding-horizon guidance: fly a cycle, trim the horizon, re-solve.

Four mission methods share one engine.  OC and DOC solve once on the
full horizon and fly it open loop; OG and DOG re-solve on the remaining
horizon after every guidance cycle, pinning the re-solve's initial
state to the simulated truth state and — for the desensitized variant —
the initial sensitivity to the reference solution's value at the
handoff time.  Desensitized methods (DOC/DOG) carry sensitivity states
and the terminal penalty; plain methods (OC/OG) solve the unaugmented
problem.

Re-solves keep the reference mesh's interval fractions and orders,
compressed onto the remaining horizon, and are warm-started from the
previous solution interpolated onto that mesh.  Seeding the solver
with the Lagrangian Hessian evaluated at the warm point makes each
re-solve a Newton polish: at the nominal parameter every cycle
converges in one or two iterations.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .lgr import basis
from .ocp import OcpDefinition
from .sensitivity import augment
from .simulation import integrate
from .sqp import SolverOptions, estimate_multipliers, initial_guess, solve
from .trajectory import Trajectory
from .transcription import (
    Mesh,
    example_mesh,
    extract_solution,
    pack_values,
    transcribe,
)

__all__ = [
    "METHODS",
    "GuidanceConfig",
    "MissionResult",
    "cycle_bounds",
    "restart_conditions",
    "remap_and_resolve",
    "solve_reference",
    "run_mission",
]

METHODS = ("OC", "DOC", "OG", "DOG")


@dataclass(frozen=True)
class GuidanceConfig:
    """Mission setup: method, cycle timing, mesh, and solver knobs."""

    method: str = "DOG"
    cycle_duration: float = 4.0
    cycle_count: int = 12
    reset_sensitivity: bool = False
    mesh: Optional[Mesh] = None          # None -> example_mesh on the problem domain
    solver: SolverOptions = field(default_factory=SolverOptions)
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10

    def __post_init__(self):
        method = str(self.method).upper()
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        object.__setattr__(self, "method", method)
        if self.cycle_duration <= 0.0:
            raise ValueError("cycle_duration must be positive")
        if self.cycle_count < 1:
            raise ValueError("cycle_count must be at least 1")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("integration tolerances must be positive")

    @property
    def desensitized(self) -> bool:
        return self.method in ("DOC", "DOG")

    @property
    def guided(self) -> bool:
        return self.method in ("OG", "DOG")


@dataclass
class MissionResult:
    """One flown mission: solves, stitched truth history, and ε.

    ``trajectories`` holds the reference solve first, then one entry
    per guidance re-solve; ``statuses``/``iterations`` line up with it.
    ``epsilon`` is the signed terminal deviation of the first state
    component against the reference solve's terminal state (NaN when
    the mission failed).  ``failure_cycle`` is None on success, -1 when
    the reference solve itself failed, else the 0-based cycle index.
    """

    method: str
    trajectories: list
    statuses: list
    iterations: list
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    terminal_state: Optional[np.ndarray]
    epsilon: float
    reference_objective: Optional[float]
    failed: bool = False
    failure_cycle: Optional[int] = None
    message: str = ""

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))


def cycle_bounds(s: int, t0: float, cycle_duration: float,
                 tf: Optional[float] = None) -> tuple[float, float]:
    """Time span covered by guidance cycle ``s`` (cycles index from 0)."""
    if s < 0:
        raise ValueError(f"cycle index must be nonnegative, got {s}")
    if cycle_duration <= 0.0:
        raise ValueError("cycle_duration must be positive")
    t_start = t0 + s * cycle_duration
    t_end = t0 + (s + 1) * cycle_duration
    if tf is not None and t_end > tf + 1e-9 * max(1.0, abs(tf)):
        raise ValueError(
            f"cycle {s} ends at {t_end}, beyond the horizon end {tf}"
        )
    return t_start, t_end


def restart_conditions(prev_solution: Trajectory, sim, t_handoff: float):
    """Initial conditions for the re-solve at a handoff time.

    The state restarts from the simulated truth; the sensitivity (when
    the previous solution carries one) restarts from the previous
    solved trajectory — the truth plant never propagates S.  At the
    simulation's end time the exact terminal vector is handed off, not
    a re-interpolated copy.
    """
    t_handoff = float(t_handoff)
    if abs(t_handoff - sim.t_end) <= 1e-9 * max(1.0, abs(sim.t_end)):
        x0 = np.array(sim.terminal_state, copy=True)
    else:
        x0 = sim.state_at(t_handoff)
    s0 = None
    if prev_solution.sens_shape is not None:
        s0 = prev_solution.sensitivity_at(t_handoff)
    return x0, s0


def _support_times(mesh: Mesh) -> np.ndarray:
    bounds = mesh.interval_times()
    parts = []
    for k, nk in enumerate(mesh.orders):
        t = bounds[k] + (basis(nk).support + 1.0) * 0.5 * (bounds[k + 1] - bounds[k])
        parts.append(t if k == 0 else t[1:])
    return np.concatenate(parts)


def _colloc_times(mesh: Mesh) -> np.ndarray:
    bounds = mesh.interval_times()
    return np.concatenate([
        bounds[k] + (basis(nk).nodes + 1.0) * 0.5 * (bounds[k + 1] - bounds[k])
        for k, nk in enumerate(mesh.orders)
    ])


def _warm_vector(traj: Trajectory, nlp, first_row: np.ndarray) -> np.ndarray:
    """Previous solution interpolated onto the new mesh, first row pinned."""
    sup = np.minimum(_support_times(nlp.mesh), traj.tf)
    col = np.minimum(_colloc_times(nlp.mesh), traj.tf)
    states = np.vstack([traj.full_state_at(t) for t in sup])
    states[0] = first_row
    controls = np.vstack([traj.control_at(t) for t in col])
    return pack_values(nlp.layout, states, controls)


def _seed_and_solve(nlp, z: np.ndarray, solver_opts: SolverOptions,
                    retry_default: bool = True):
    """Solve from z with multipliers and Hessian estimated at z.

    Near an optimum the estimated Lagrangian Hessian turns the solve
    into a Newton polish (one or two iterations).  Far from one it can
    be indefinite and stall the line search, so a failed seeded solve
    falls back to the same warm start under the solver's default
    quasi-Newton initialization unless the caller has a better
    recovery of its own (``retry_default=False``).
    """
    multipliers = estimate_multipliers(nlp, z)
    hessian = None
    if nlp.lagrangian_hessian is not None:
        hessian = nlp.lagrangian_hessian(z, multipliers)
    sol = solve(nlp, z, solver_opts, hessian0=hessian, multipliers0=multipliers)
    if sol.status != "converged" and hessian is not None and retry_default:
        fallback = solve(nlp, z, solver_opts)
        if fallback.status == "converged":
            return fallback
    return sol


def _bary_rows(nodes, weights, values, taus: np.ndarray) -> np.ndarray:
    """Barycentric evaluation of stacked polynomials at many points."""
    nodes = np.asarray(nodes)
    values = np.asarray(values)
    delta = taus[:, None] - nodes[None, :]
    hit_rows, hit_cols = np.nonzero(delta == 0.0)
    delta[hit_rows, :] = 1.0
    # rows with an exact node hit divide by the weight sum, which is
    # identically zero; their quotient is discarded just below, so the
    # intermediate overflow is harmless noise
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.asarray(weights)[None, :] / delta
        out = (coef @ values) / np.sum(coef, axis=1)[:, None]
    out[hit_rows] = values[hit_cols]
    return out


def _interval_samples(traj: Trajectory, k: int, times: np.ndarray):
    """Physical state and control rows of one mesh interval at many times."""
    bas = basis(traj.orders[k])
    a, b = traj.interval_times[k], traj.interval_times[k + 1]
    tau = np.clip(2.0 * (times - a) / (b - a) - 1.0, -1.0, 1.0)
    x = _bary_rows(bas.support, bas.support_bary,
                   traj.state_values[k][:, : traj.n_states], tau)
    u = _bary_rows(bas.nodes, bas.node_bary, traj.control_values[k], tau)
    return x, u


def _jac_profiles(ocp: OcpDefinition, x: np.ndarray, u: np.ndarray,
                  times: np.ndarray):
    """Stacked dynamics Jacobians A(t), B(t) along a sampled trajectory."""
    count = x.shape[0]
    n, m = ocp.n_states, ocp.n_params
    p = ocp.nominal_params
    if ocp.vectorized:
        A = np.asarray(ocp.jac_x(x, u, p, times), dtype=float).reshape(count, n, n)
        B = np.asarray(ocp.jac_p(x, u, p, times), dtype=float).reshape(count, n, m)
        return A, B
    A = np.empty((count, n, n))
    B = np.empty((count, n, m))
    for i in range(count):
        A[i] = np.asarray(ocp.jac_x(x[i], u[i], p, times[i]),
                          dtype=float).reshape(n, n)
        B[i] = np.asarray(ocp.jac_p(x[i], u[i], p, times[i]),
                          dtype=float).reshape(n, m)
    return A, B


def _collocated_sensitivity(ocp: OcpDefinition, traj: Trajectory, mesh: Mesh,
                            s0: np.ndarray) -> np.ndarray:
    """S at the support points solving the discrete sensitivity defects.

    dS/dt = A S + B is linear, so on each interval the collocation
    conditions reduce to one linear solve; the result satisfies the
    transcribed sensitivity rows exactly on this mesh.
    """
    n, m = ocp.n_states, ocp.n_params
    bounds = mesh.interval_times()
    s_here = s0
    out = [s_here]
    eye = np.eye(n)
    for k in range(mesh.n_intervals):
        nk = mesh.orders[k]
        bas = basis(nk)
        h = 0.5 * (bounds[k + 1] - bounds[k])
        tc = bounds[k] + (bas.nodes + 1.0) * h
        D = bas.diff_matrix
        x, u = _interval_samples(traj, k, tc)
        A, B = _jac_profiles(ocp, x, u, tc)
        # unknowns: S at the nk support points past the interval start
        M = np.kron(D[:, 1:], eye)
        rhs = np.empty((nk * n, m))
        for r in range(nk):
            rhs[r * n:(r + 1) * n] = h * B[r] - D[r, 0] * s_here
            if r == 0:
                rhs[:n] += h * (A[0] @ s_here)
            else:
                M[r * n:(r + 1) * n, (r - 1) * n:r * n] -= h * A[r]
        try:
            sol = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"sensitivity staging failed: {exc}") from exc
        out.extend(sol[(j - 1) * n: j * n] for j in range(1, nk + 1))
        s_here = sol[(nk - 1) * n:]
    return np.stack(out)


def _propagated_sensitivity(ocp: OcpDefinition, traj: Trajectory, mesh: Mesh,
                            s0: np.ndarray) -> np.ndarray:
    """S at the support points by A-stable stepping of dS/dt = A S + B.

    Each interval is subdivided until trapezoidal steps resolve the
    local decay rate, so the profile tracks the true sensitivity even
    on meshes far too coarse to collocate it.
    """
    n, m = ocp.n_states, ocp.n_params
    bounds = mesh.interval_times()
    s_here = s0
    out = [s_here]
    eye = np.eye(n)
    for k in range(mesh.n_intervals):
        nk = mesh.orders[k]
        bas = basis(nk)
        a, b = bounds[k], bounds[k + 1]
        sup_times = a + (bas.support + 1.0) * 0.5 * (b - a)
        x_s, u_s = _interval_samples(traj, k, sup_times)
        A_s, _ = _jac_profiles(ocp, x_s, u_s, sup_times)
        rate = float(np.max(np.sum(np.abs(A_s), axis=2)))
        steps = min(int(np.ceil(2.0 * (b - a) * max(rate, 1e-12))), 10_000)
        grid = np.union1d(sup_times, np.linspace(a, b, max(steps, nk) + 1))
        x_g, u_g = _interval_samples(traj, k, grid)
        A_g, B_g = _jac_profiles(ocp, x_g, u_g, grid)
        values = [s_here]
        for i in range(grid.size - 1):
            h = grid[i + 1] - grid[i]
            rhs = ((eye + 0.5 * h * A_g[i]) @ values[-1]
                   + 0.5 * h * (B_g[i] + B_g[i + 1]))
            try:
                values.append(np.linalg.solve(eye - 0.5 * h * A_g[i + 1], rhs))
            except np.linalg.LinAlgError as exc:
                raise RuntimeError(
                    f"sensitivity staging failed: {exc}") from exc
        values = np.stack(values)
        keep = np.searchsorted(grid, sup_times[1:])
        out.extend(values[keep])
        s_here = values[-1]
    return np.stack(out)


def _staged_sensitivity_guess(ocp: OcpDefinition, aug_prob, nlp_aug,
                              traj: Trajectory) -> np.ndarray:
    """Augmented warm start: reference (x, u) plus S propagated along it.

    Two sensitivity profiles are computed: one solving the transcribed
    collocation conditions exactly (ideal when the mesh resolves S --
    the seeded solve becomes a one-step Newton polish) and one by
    stable time stepping of the true linear dynamics.  When they
    disagree the mesh is too coarse for the collocated profile to mean
    anything, and the stable one makes the far better seed.
    """
    mesh = nlp_aug.mesh
    sup = _support_times(mesh)
    n, m = ocp.n_states, ocp.n_params
    s0 = np.asarray(aug_prob.s0, dtype=float).reshape(n, m)
    s_colloc = _collocated_sensitivity(ocp, traj, mesh, s0)
    s_stable = _propagated_sensitivity(ocp, traj, mesh, s0)
    gap = float(np.max(np.abs(s_colloc - s_stable)))
    scale = 1.0 + float(np.max(np.abs(s_stable)))
    s_rows = (s_colloc if gap <= 0.1 * scale else s_stable)
    s_rows = s_rows.transpose(0, 2, 1).reshape(len(sup), n * m)
    states = np.vstack([traj.full_state_at(t) for t in sup])
    controls = np.vstack([traj.control_at(t) for t in _colloc_times(mesh)])
    return pack_values(nlp_aug.layout, np.hstack([states, s_rows]), controls)


def solve_reference(ocp: OcpDefinition, spec, cfg: GuidanceConfig):
    """Solve the mission's reference problem on the full horizon.

    Plain methods cold-start from the built-in linear guess.  The
    desensitized reference is staged: the plain problem is solved cold,
    the sensitivity ODE is integrated along that solution to seed the
    augmented problem, and a Hessian evaluated at the seed turns the
    augmented solve into a short Newton polish.

    Returns ``(trajectory, solution)``; raises RuntimeError when any
    stage fails to converge.
    """
    mesh = cfg.mesh if cfg.mesh is not None else example_mesh(*ocp.time_domain)
    nlp = transcribe(ocp, mesh)
    sol = solve(nlp, initial_guess(ocp, mesh), cfg.solver)
    if sol.status != "converged":
        raise RuntimeError(f"reference solve did not converge: {sol.status}")
    traj = extract_solution(nlp, sol.z, objective_value=sol.objective)
    if not cfg.desensitized:
        return traj, sol
    if spec is None:
        raise ValueError(f"method {cfg.method} requires a desensitization spec")
    aug_prob = augment(ocp, spec)
    nlp_aug = transcribe(aug_prob, mesh)
    z0 = _staged_sensitivity_guess(ocp, aug_prob, nlp_aug, traj)
    sol_aug = _seed_and_solve(nlp_aug, z0, cfg.solver)
    if sol_aug.status != "converged":
        raise RuntimeError(
            f"desensitized reference solve did not converge: {sol_aug.status}"
        )
    traj_aug = extract_solution(nlp_aug, sol_aug.z,
                                objective_value=sol_aug.objective)
    return traj_aug, sol_aug


def _resolve_cycle(ocp: OcpDefinition, spec, cfg: GuidanceConfig,
                   base_mesh: Mesh, x0, s0, t_start: float, tf: float,
                   warm_start: Trajectory):
    """Re-solve on [t_start, tf] warm-started from the previous solution."""
    mesh = base_mesh.with_time_domain(float(t_start), float(tf))
    x0 = np.asarray(x0, dtype=float)
    shrunk = ocp.with_initial_state(x0, time_domain=(float(t_start), float(tf)))
    if cfg.desensitized:
        s_mat = (np.zeros((ocp.n_states, ocp.n_params)) if s0 is None
                 else np.atleast_2d(np.asarray(s0, dtype=float)))
        problem = augment(shrunk, spec, s0=s_mat)
        first_row = np.concatenate([x0, s_mat.ravel(order="F")])
    else:
        problem, first_row = shrunk, x0
    nlp = transcribe(problem, mesh)
    z_warm = _warm_vector(warm_start, nlp, first_row)
    if cfg.desensitized:
        # A consistent warm start polishes in a handful of iterations;
        # one that crawls is inconsistent and the staged recovery below
        # is both faster and surer, so the direct attempt gets a short
        # budget rather than the full one.
        quick = replace(cfg.solver,
                        max_iterations=min(25, cfg.solver.max_iterations))
        sol = _seed_and_solve(nlp, z_warm, quick, retry_default=False)
    else:
        sol = _seed_and_solve(nlp, z_warm, cfg.solver)
    if sol.status != "converged" and cfg.desensitized:
        # Staged recovery, mirroring the reference pipeline: when the
        # carried augmented warm start is too inconsistent (large truth
        # mismatch on a coarse mesh), solve the plain shrunken problem
        # first and integrate S along it for a consistent restart.
        nlp_plain = transcribe(shrunk, mesh)
        sup = np.minimum(_support_times(mesh), warm_start.tf)
        col = np.minimum(_colloc_times(mesh), warm_start.tf)
        states = np.vstack([warm_start.state_at(t) for t in sup])
        states[0] = x0
        controls = np.vstack([warm_start.control_at(t) for t in col])
        z_plain = pack_values(nlp_plain.layout, states, controls)
        sol_plain = _seed_and_solve(nlp_plain, z_plain, cfg.solver)
        if sol_plain.status == "converged":
            traj_plain = extract_solution(nlp_plain, sol_plain.z,
                                          objective_value=sol_plain.objective)
            try:
                z_staged = _staged_sensitivity_guess(shrunk, problem, nlp,
                                                     traj_plain)
            except RuntimeError:
                z_staged = None
            if z_staged is not None:
                sol = _seed_and_solve(nlp, z_staged, cfg.solver)
    if sol.status != "converged":
        raise RuntimeError(
            f"guidance re-solve on [{t_start}, {tf}] did not converge: "
            f"{sol.status}"
        )
    return extract_solution(nlp, sol.z, objective_value=sol.objective), sol


def remap_and_resolve(ocp: OcpDefinition, spec, x0, s0, t_start: float,
                      tf: float, guidance_cfg: GuidanceConfig,
                      warm_start: Trajectory) -> Trajectory:
    """Delete the expired horizon and re-solve on [t_start, tf].

    The fresh mesh keeps the reference mesh's fractions and orders,
    mapped onto the remaining horizon; x(t_start) is pinned to ``x0``
    (and S(t_start) to ``s0`` for desensitized methods) while the
    original terminal condition stays in force.
    """
    if not t_start < tf:
        raise ValueError(f"need t_start < tf, got [{t_start}, {tf}]")
    base_mesh = (guidance_cfg.mesh if guidance_cfg.mesh is not None
                 else example_mesh(*ocp.time_domain))
    traj, _ = _resolve_cycle(ocp, spec, guidance_cfg, base_mesh, x0, s0,
                             t_start, tf, warm_start)
    return traj


def run_mission(ocp: OcpDefinition, spec, cfg: GuidanceConfig,
                p_tilde=None, reference=None) -> MissionResult:
    """Fly one mission with the configured method.

    OC/DOC: one reference solve, then one truth integration across the
    whole horizon with ``p_tilde``.  OG/DOG: after each cycle the truth
    state is handed off exactly, the expired horizon is deleted, and
    the problem is re-solved on the remainder; any horizon left after
    the last cycle is flown open loop on the final solution.  Solver or
    integrator failures are recorded on the result, never raised.

    ``reference`` may carry a precomputed ``(trajectory, solution)``
    pair from :func:`solve_reference` on the same mesh and method
    family, letting batch drivers solve the reference once and fly many
    perturbed missions against it.
    """
    t0, tf = ocp.time_domain
    horizon = tf - t0
    if cfg.guided:
        flown = cfg.cycle_count * cfg.cycle_duration
        if flown > horizon + 1e-9 * max(1.0, horizon):
            raise ValueError(
                f"{cfg.cycle_count} cycles x {cfg.cycle_duration} s "
                f"exceed the {horizon} s horizon"
            )
    base_mesh = cfg.mesh if cfg.mesh is not None else example_mesh(t0, tf)
    cfg = replace(cfg, mesh=base_mesh)

    def failed(message, trajectories, statuses, iterations,
               seg_times, seg_states, seg_controls, reference_objective):
        stitched = _stitch(seg_times, seg_states, seg_controls)
        return MissionResult(
            method=cfg.method, trajectories=trajectories, statuses=statuses,
            iterations=iterations, times=stitched[0], states=stitched[1],
            controls=stitched[2], terminal_state=None, epsilon=float("nan"),
            reference_objective=reference_objective, failed=True,
            failure_cycle=len(trajectories) - 1, message=message,
        )

    if reference is None:
        try:
            ref_traj, ref_sol = solve_reference(ocp, spec, cfg)
        except RuntimeError as exc:
            return failed(str(exc), [], [], [], [], [], [], None)
    else:
        ref_traj, ref_sol = reference

    trajectories = [ref_traj]
    statuses = [ref_sol.status]
    iterations = [ref_sol.iterations]
    x_ref_end = ref_traj.state_at(tf)
    x = ref_traj.state_at(t0).copy()
    seg_times, seg_states, seg_controls = [], [], []
    current = ref_traj

    def fly(span_start, span_end):
        nonlocal x
        sim = integrate(ocp, current, x, (span_start, span_end),
                        p_tilde=p_tilde, abs_tol=cfg.abs_tol,
                        rel_tol=cfg.rel_tol)
        skip = 1 if seg_times else 0     # joint sample already recorded
        seg_times.append(sim.times[skip:])
        seg_states.append(sim.states[skip:])
        seg_controls.append(sim.controls[skip:])
        x = np.array(sim.terminal_state, copy=True)
        return sim

    try:
        if not cfg.guided:
            fly(t0, tf)
        else:
            for s in range(cfg.cycle_count):
                t_start, t_end = cycle_bounds(s, t0, cfg.cycle_duration, tf=tf)
                sim = fly(t_start, t_end)
                x_next, s0 = restart_conditions(current, sim, t_end)
                if cfg.desensitized and cfg.reset_sensitivity:
                    s0 = np.zeros((ocp.n_states, ocp.n_params))
                current, sol = _resolve_cycle(ocp, spec, cfg, base_mesh,
                                              x_next, s0, t_end, tf, current)
                trajectories.append(current)
                statuses.append(sol.status)
                iterations.append(sol.iterations)
            t_covered = t0 + cfg.cycle_count * cfg.cycle_duration
            if t_covered < tf - 1e-9 * max(1.0, abs(tf)):
                fly(t_covered, tf)
    except RuntimeError as exc:
        return failed(str(exc), trajectories, statuses, iterations,
                      seg_times, seg_states, seg_controls, ref_sol.objective)

    times, states, controls = _stitch(seg_times, seg_states, seg_controls)
    return MissionResult(
        method=cfg.method, trajectories=trajectories, statuses=statuses,
        iterations=iterations, times=times, states=states, controls=controls,
        terminal_state=x.copy(), epsilon=float(x[0] - x_ref_end[0]),
        reference_objective=ref_sol.objective,
    )


def _stitch(seg_times, seg_states, seg_controls):
    if not seg_times:
        return np.array([]), np.empty((0, 0)), np.empty((0, 0))
    return (np.concatenate(seg_times), np.vstack(seg_states),
            np.vstack(seg_controls))
