"""Acceptance gate: one test per advertised capability.

Each test prints a single ``criterion NN [PASS|FAIL]`` line (visible
with ``pytest -s`` or on failure) and asserts the same condition, so
the module doubles as a human-readable acceptance report:

    pytest tests/test_acceptance.py -v -s
"""
import math
import time

import numpy as np
import pytest

from guidedog.cli import main
from guidedog.guidance import GuidanceConfig, run_mission, solve_reference
from guidedog.lgr import basis
from guidedog.montecarlo import (MonteCarloConfig, run_campaign, study_mesh,
                                 summarize)
from guidedog.ocp import OcpDefinition, example_problem
from guidedog.simulation import integrate
from guidedog.sqp import NlpProblem, SolverOptions, initial_guess, solve
from guidedog.transcription import (build_mesh, example_mesh,
                                    extract_solution, transcribe)

X_INITIAL, X_TARGET = 1.5, 1.0


def _report(number, description, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number:02d} [{status}] {description}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def example():
    return example_problem()


# ---------------------------------------------------------------------------
# 1: quadrature and differentiation exactness


def test_criterion_01_basis_exactness():
    started = time.perf_counter()
    worst_quad, worst_diff = 0.0, 0.0
    for n in range(1, 21):
        b = basis(n)
        for degree in range(2 * n - 1):
            integral = float(b.weights @ b.nodes ** degree)
            exact = 2.0 / (degree + 1) if degree % 2 == 0 else 0.0
            worst_quad = max(worst_quad, abs(integral - exact))
        for degree in range(n + 1):
            values = b.support ** degree
            deriv = b.diff_matrix @ values
            exact = (degree * b.nodes ** (degree - 1) if degree > 0
                     else np.zeros(n))
            worst_diff = max(worst_diff, float(np.max(np.abs(deriv - exact))))
    elapsed = time.perf_counter() - started
    _report(1, "basis integrates deg<=2n-2 and differentiates deg<=n exactly",
            worst_quad < 1e-12 and worst_diff < 1e-10 and elapsed < 1.0,
            f"quad err {worst_quad:.2e}, diff err {worst_diff:.2e}, "
            f"{elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2: transcription + solver oracles


def _growth(x, u, p, t):
    return x


def test_criterion_02_exponential_and_hand_kkt():
    started = time.perf_counter()
    ocp = OcpDefinition(
        n_states=1, n_controls=0, n_params=0,
        dynamics=_growth, jac_x=None, jac_p=None,
        running_cost=None, terminal_cost=None,
        nominal_params=np.zeros(0), time_domain=(0.0, 1.0),
        initial_state=np.array([1.0]), vectorized=True)
    mesh = build_mesh(0.0, 1.0, 1, 10)
    nlp = transcribe(ocp, mesh)
    sol = solve(nlp, initial_guess(ocp, mesh))
    err_e = abs(extract_solution(nlp, sol.z).state_at(1.0)[0] - math.e)

    # min z1^2 + 2 z2^2 - 2 z1 - 4 z2  s.t. z1 + z2 = 1; stationarity
    # 2 z1 - 2 + lam = 0, 4 z2 - 4 + lam = 0 gives lam = 4/3,
    # z = (1/3, 2/3)
    qp = NlpProblem(
        n_vars=2,
        objective=lambda z: float(z[0] ** 2 + 2 * z[1] ** 2
                                  - 2 * z[0] - 4 * z[1]),
        gradient=lambda z: np.array([2 * z[0] - 2, 4 * z[1] - 4]),
        constraints=lambda z: np.array([z[0] + z[1]]),
        jacobian=lambda z: np.array([[1.0, 1.0]]),
        lower=np.array([1.0]), upper=np.array([1.0]))
    qp_sol = solve(qp, np.zeros(2), SolverOptions(kkt_tolerance=1e-12))
    err_qp = max(float(np.max(np.abs(qp_sol.z - [1 / 3, 2 / 3]))),
                 abs(qp_sol.multipliers[0] - 4 / 3))
    elapsed = time.perf_counter() - started
    _report(2, "exp growth reproduces e and QP matches the hand KKT point",
            sol.status == "converged" and err_e <= 1e-8
            and qp_sol.status == "converged" and err_qp <= 1e-9
            and elapsed < 1.0,
            f"|x(1)-e| {err_e:.2e}, KKT err {err_qp:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3: sensitivity against finite differences


def test_criterion_03_terminal_sensitivity_matches_fd(example):
    ocp, make_spec = example
    started = time.perf_counter()
    # beta = 0 keeps the control identical to the plain solve while the
    # augmented channel carries S along it; the default boundaries at a
    # higher order resolve S(tf) well past the comparison tolerance
    mesh = build_mesh(0.0, 50.0, 12, 11,
                      fractions=example_mesh().tau_boundaries)
    traj = solve_reference(ocp, make_spec(beta=0.0, q=0.01),
                           GuidanceConfig(method="DOC", mesh=mesh))[0]
    s_solved = traj.full_state_at(50.0)[1]

    delta = 1e-5
    x0 = traj.state_at(0.0)
    ends = []
    for alpha in (2.0 + delta, 2.0 - delta):
        sim = integrate(ocp, traj, x0, (0.0, 50.0),
                        p_tilde=np.array([alpha]),
                        abs_tol=1e-12, rel_tol=1e-12)
        ends.append(sim.terminal_state[0])
    s_fd = (ends[0] - ends[1]) / (2.0 * delta)
    rel = abs(s_solved - s_fd) / abs(s_fd)
    elapsed = time.perf_counter() - started
    _report(3, "solved S(tf) matches central FD of x(tf) over the parameter",
            rel <= 1e-4 and elapsed < 30.0,
            f"S {s_solved:.6e} vs FD {s_fd:.6e}, rel {rel:.2e}, "
            f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4: zero-weight degeneration


def test_criterion_04_zero_beta_degenerates(example):
    ocp, make_spec = example
    plain = solve_reference(ocp, None, GuidanceConfig(method="OC"))[0]
    zeroed = solve_reference(ocp, make_spec(beta=0.0, q=0.01),
                             GuidanceConfig(method="DOC"))[0]
    grid = np.linspace(0.0, 50.0, 201)
    xs_p, us_p = plain.sample(grid)
    xs_z, us_z = zeroed.sample(grid)
    open_gap = max(float(np.max(np.abs(xs_p[:, 0] - xs_z[:, 0]))),
                   float(np.max(np.abs(us_p - us_z))))

    p_tilde = np.array([2.01])
    guided = run_mission(ocp, None, GuidanceConfig(method="OG"),
                         p_tilde=p_tilde)
    dog0 = run_mission(ocp, make_spec(beta=0.0, q=0.01),
                       GuidanceConfig(method="DOG"), p_tilde=p_tilde)
    assert not guided.failed and not dog0.failed
    x_g = np.interp(grid, guided.times, guided.states[:, 0])
    x_d = np.interp(grid, dog0.times, dog0.states[:, 0])
    mission_gap = max(float(np.max(np.abs(x_g - x_d))),
                      abs(guided.epsilon - dog0.epsilon))
    _report(4, "beta=0 reproduces the unpenalized solve and mission",
            open_gap <= 1e-8 and mission_gap <= 1e-6,
            f"open-loop gap {open_gap:.2e}, mission gap {mission_gap:.2e}")


# ---------------------------------------------------------------------------
# 5 & 6: nominal fixed point, warm starts, boundary satisfaction


@pytest.fixture(scope="module")
def nominal_missions(example):
    ocp, make_spec = example
    spec = make_spec(beta=10.0, q=0.01)
    missions = {}
    for method in ("OC", "DOC", "OG", "DOG"):
        missions[method] = run_mission(
            ocp, spec if method in ("DOC", "DOG") else None,
            GuidanceConfig(method=method), p_tilde=np.array([2.0]))
    return missions


def test_criterion_05_nominal_fixed_point_and_warm_starts(nominal_missions):
    eps_worst = max(abs(m.epsilon) for m in nominal_missions.values())
    resolve_iters = []
    for method in ("OG", "DOG"):
        resolve_iters.extend(nominal_missions[method].iterations[1:])
    ok = (all(not m.failed for m in nominal_missions.values())
          and eps_worst <= 1e-5
          and all(its <= 2 for its in resolve_iters))
    _report(5, "nominal missions hit the target and re-solves stay warm",
            ok, f"max |eps| {eps_worst:.2e}, re-solve iterations "
                f"max {max(resolve_iters)}")


def test_criterion_06_boundary_satisfaction(nominal_missions):
    worst = 0.0
    checked = 0
    for mission in nominal_missions.values():
        reference = mission.trajectories[0]
        worst = max(worst,
                    abs(reference.state_at(0.0)[0] - X_INITIAL),
                    abs(reference.state_at(50.0)[0] - X_TARGET))
        checked += 1
        for resolve in mission.trajectories[1:]:
            worst = max(worst, abs(resolve.state_at(50.0)[0] - X_TARGET))
            checked += 1
    _report(6, "every converged solve meets x(0)=1.5 and x(50)=1.0",
            worst <= 1e-8, f"{checked} solves, worst violation {worst:.2e}")


# ---------------------------------------------------------------------------
# 7: dispersion-study median ordering


def test_criterion_07_guided_median_ordering(example):
    ocp, make_spec = example
    started = time.perf_counter()
    spec = make_spec(beta=5.0, q=0.01)     # the fig3a preset weights
    passes, details = 0, []
    for seed in (1234, 7, 42, 2024):
        cfg = MonteCarloConfig(run_count=100, q=0.01, beta=5.0, seed=seed)
        records = run_campaign(ocp, spec, cfg,
                               guidance=GuidanceConfig(mesh=study_mesh()))
        stats = summarize(records)
        med = {m: stats[m].median for m in stats}
        ok = (abs(med["DOG"]) <= abs(med["OG"])
              and abs(med["DOG"]) <= abs(med["DOC"]))
        passes += ok
        details.append(f"seed {seed}: "
                       f"|DOG| {abs(med['DOG']):.3e} "
                       f"|OG| {abs(med['OG']):.3e} "
                       f"|DOC| {abs(med['DOC']):.3e} -> "
                       + ("ok" if ok else "violated"))
    elapsed = time.perf_counter() - started
    _report(7, "guided desensitized medians sit nearest zero (>=3/4 seeds)",
            passes >= 3 and elapsed < 1200.0,
            f"{passes}/4 seeds in {elapsed:.0f}s; " + "; ".join(details))


# ---------------------------------------------------------------------------
# 8: closed-loop comparison at a specific perturbed parameter


def test_criterion_08_perturbed_mission_comparison(example):
    ocp, make_spec = example
    started = time.perf_counter()
    spec = make_spec(beta=10.0, q=0.01)    # the fig4 preset weights
    p_tilde = np.array([2.0178])
    misses = {}
    for method in ("DOC", "DOG"):
        mission = run_mission(ocp, spec,
                              GuidanceConfig(method=method,
                                             mesh=study_mesh()),
                              p_tilde=p_tilde)
        assert not mission.failed
        misses[method] = abs(mission.terminal_state[0] - X_TARGET)
    elapsed = time.perf_counter() - started
    _report(8, "guided desensitized mission lands nearer the target",
            misses["DOG"] < misses["DOC"] and elapsed < 60.0,
            f"DOG miss {misses['DOG']:.3e} < DOC miss {misses['DOC']:.3e}, "
            f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 9: the price and payoff of desensitization


def test_criterion_09_tradeoff_on_default_mesh(example):
    ocp, make_spec = example
    ref0 = solve_reference(ocp, make_spec(beta=0.0, q=0.02),
                           GuidanceConfig(method="DOC"))[0]
    ref10 = solve_reference(ocp, make_spec(beta=10.0, q=0.02),
                            GuidanceConfig(method="DOC"))[0]
    j0, j10 = ref0.base_objective, ref10.base_objective

    cfg = MonteCarloConfig(run_count=100, q=0.02, beta=10.0, seed=1234,
                           methods=("OC", "DOC"))
    stats = summarize(run_campaign(ocp, make_spec(beta=10.0, q=0.02), cfg))
    _report(9, "penalty raises base cost but narrows terminal spread",
            j10 >= j0 and stats["DOC"].std <= stats["OC"].std,
            f"J {j10:.9f} >= {j0:.9f}; "
            f"std DOC {stats['DOC'].std:.4e} <= OC {stats['OC'].std:.4e}")


# ---------------------------------------------------------------------------
# 10: byte determinism of campaign artifacts


def test_criterion_10_campaign_bytes_reproducible(tmp_path):
    blobs = []
    for sub in ("first", "second"):
        out = tmp_path / sub
        rc = main(["campaign", "--preset", "fig3a", "--runs", "3",
                   "--seed", "5", "--output", str(out)])
        assert rc == 0
        blobs.append({name: (out / name).read_bytes()
                      for name in ("records.csv", "summary.csv",
                                   "scatter.svg")})
    _report(10, "re-running a campaign reproduces every artifact byte",
            blobs[0] == blobs[1],
            "records.csv, summary.csv, scatter.svg identical")
