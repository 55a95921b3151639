"""Command-line front end for solves, missions, and campaigns.

Configuration is INI-style key/value text with sections; every key has
a default, unknown sections or keys are rejected so typos surface
immediately, and command-line flags override file values.  Exit codes:
0 success, 1 validation or usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .guidance import METHODS, GuidanceConfig, run_mission, solve_reference
from .montecarlo import (PRESETS, MonteCarloConfig, run_campaign, study_mesh,
                         summarize)
from .ocp import example_problem
from .reporting import (emit_scatter_svg, format_float, write_mission_csv,
                        write_records_csv, write_summary_csv,
                        write_trajectory_csv)
from .sqp import SolverOptions
from .transcription import build_mesh, example_mesh

__all__ = ["CampaignConfig", "ValidationError", "NumericalError",
           "parse_config", "main"]

# the closed-loop comparison case pins its flown parameter value
_PRESET_ALPHA_TILDE: Dict[str, float] = {"fig4": 2.0178}

_CONFIG_KEYS = {
    "problem": ("name", "alpha"),
    "mesh": ("intervals", "order"),
    "solver": ("max_iterations", "kkt_tolerance"),
    "guidance": ("period", "cycles", "method"),
    "mc": ("preset", "runs", "q", "beta", "seed", "methods", "workers"),
    "output": ("directory",),
}


class ValidationError(Exception):
    """Bad configuration or usage; maps to exit code 1."""


class NumericalError(Exception):
    """A solve or mission failed to converge; maps to exit code 2."""


@dataclass(frozen=True)
class CampaignConfig:
    """Fully resolved run description with defaults applied."""

    problem: str = "example"
    alpha: float = 2.0
    mesh_intervals: Optional[int] = None   # None -> shipped graded mesh
    mesh_order: int = 4
    max_iterations: int = 200
    kkt_tolerance: float = 1e-8
    cycle_duration: float = 4.0
    cycle_count: int = 12
    method: str = "DOG"
    preset: Optional[str] = None
    runs: int = 100
    q: float = 0.01
    beta: float = 5.0
    seed: int = 1234
    methods: Tuple[str, ...] = METHODS
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.problem != "example":
            raise ValidationError(
                f"unknown problem {self.problem!r}; only 'example' ships")
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise ValidationError("problem.alpha must be positive")
        if self.mesh_intervals is not None and self.mesh_intervals < 1:
            raise ValidationError("mesh.intervals must be at least 1")
        if self.mesh_order < 1:
            raise ValidationError("mesh.order must be at least 1")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValidationError(
                f"unknown preset {self.preset!r}; "
                f"choose from {', '.join(sorted(PRESETS))}")
        try:
            SolverOptions(max_iterations=self.max_iterations,
                          kkt_tolerance=self.kkt_tolerance)
            GuidanceConfig(method=self.method,
                           cycle_duration=self.cycle_duration,
                           cycle_count=self.cycle_count)
            MonteCarloConfig(run_count=self.runs, q=self.q, beta=self.beta,
                             seed=self.seed, methods=self.methods,
                             workers=self.workers)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        normalized = tuple(str(m).upper() for m in self.methods)
        object.__setattr__(self, "methods", normalized)
        object.__setattr__(self, "method", str(self.method).upper())


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            raise TypeError("bool keys are not used")
        return kind(raw)
    except ValueError as exc:
        raise ValidationError(
            f"key {section}.{key}: cannot parse {raw!r} as {kind.__name__}"
        ) from exc


def parse_config(path: str) -> CampaignConfig:
    """Read and validate an INI config, applying preset then overrides."""
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        with open(path) as handle:
            parser.read_file(handle, source=path)
    except (configparser.Error, OSError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc

    values = {}
    for section in parser.sections():
        if section not in _CONFIG_KEYS:
            raise ValidationError(
                f"unknown config section [{section}] in {path}")
        for key in parser[section]:
            if key not in _CONFIG_KEYS[section]:
                raise ValidationError(
                    f"unknown key {key!r} in section [{section}] of {path}")
            values[(section, key)] = parser[section][key]

    def take(section, key, kind, default):
        raw = values.get((section, key))
        if raw is None:
            return default
        return _convert(section, key, raw.strip(), kind)

    preset = values.get(("mc", "preset"))
    preset = preset.strip() if preset is not None else None
    if preset is not None and preset not in PRESETS:
        raise ValidationError(
            f"unknown preset {preset!r}; choose from "
            f"{', '.join(sorted(PRESETS))}")
    q_default, beta_default = PRESETS[preset] if preset else (0.01, 5.0)

    methods_raw = values.get(("mc", "methods"))
    if methods_raw is None:
        methods = METHODS
    else:
        methods = tuple(part.strip().upper()
                        for part in methods_raw.split(",") if part.strip())

    return CampaignConfig(
        problem=take("problem", "name", str, "example"),
        alpha=take("problem", "alpha", float, 2.0),
        mesh_intervals=take("mesh", "intervals", int, None),
        mesh_order=take("mesh", "order", int, 4),
        max_iterations=take("solver", "max_iterations", int, 200),
        kkt_tolerance=take("solver", "kkt_tolerance", float, 1e-8),
        cycle_duration=take("guidance", "period", float, 4.0),
        cycle_count=take("guidance", "cycles", int, 12),
        method=take("guidance", "method", str, "DOG"),
        preset=preset,
        runs=take("mc", "runs", int, 100),
        q=take("mc", "q", float, q_default),
        beta=take("mc", "beta", float, beta_default),
        seed=take("mc", "seed", int, 1234),
        methods=methods,
        workers=take("mc", "workers", int, 1),
        output_dir=take("output", "directory", str, "."),
    )


# ---------------------------------------------------------------------------
# plumbing shared by the subcommands


def _resolve_mesh(cfg: CampaignConfig, t0: float, tf: float):
    """Explicit mesh keys win, then the preset's study mesh, then the
    shipped graded default."""
    if cfg.mesh_intervals is not None:
        return build_mesh(t0, tf, cfg.mesh_intervals, cfg.mesh_order)
    if cfg.preset is not None:
        return study_mesh(t0, tf)
    return example_mesh(t0, tf)


def _guidance(cfg: CampaignConfig, ocp, method: str) -> GuidanceConfig:
    return GuidanceConfig(
        method=method,
        cycle_duration=cfg.cycle_duration,
        cycle_count=cfg.cycle_count,
        mesh=_resolve_mesh(cfg, *ocp.time_domain),
        solver=SolverOptions(max_iterations=cfg.max_iterations,
                             kkt_tolerance=cfg.kkt_tolerance),
    )


def _prepare_output(cfg: CampaignConfig) -> str:
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
    except OSError as exc:
        raise ValidationError(
            f"cannot create output directory {cfg.output_dir}: {exc}"
        ) from exc
    return cfg.output_dir


def _load(args) -> CampaignConfig:
    cfg = parse_config(args.config) if args.config else CampaignConfig()
    overrides = {}
    for flag, field in (("preset", "preset"), ("beta", "beta"), ("q", "q"),
                        ("runs", "runs"), ("seed", "seed"),
                        ("workers", "workers"), ("method", "method"),
                        ("output", "output_dir"),
                        ("mesh_intervals", "mesh_intervals"),
                        ("mesh_order", "mesh_order")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if "preset" in overrides:
        name = overrides["preset"]
        if name not in PRESETS:
            raise ValidationError(
                f"unknown preset {name!r}; choose from "
                f"{', '.join(sorted(PRESETS))}")
        # a preset pins q and beta unless the flags override them too
        preset_q, preset_beta = PRESETS[name]
        if getattr(args, "q", None) is None:
            overrides["q"] = preset_q
        if getattr(args, "beta", None) is None:
            overrides["beta"] = preset_beta
    try:
        return replace(cfg, **overrides)
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def _cmd_solve(args) -> int:
    cfg = _load(args)
    ocp, make_spec = example_problem(cfg.alpha)
    desensitized = cfg.beta > 0.0
    method = "DOC" if desensitized else "OC"
    spec = make_spec(cfg.beta, cfg.q) if desensitized else None
    try:
        traj, sol = solve_reference(ocp, spec, _guidance(cfg, ocp, method))
    except RuntimeError as exc:
        raise NumericalError(str(exc)) from exc
    out = _prepare_output(cfg)
    path = os.path.join(out, "trajectory.csv")
    write_trajectory_csv(traj, path)
    base = traj.objective if traj.base_objective is None \
        else traj.base_objective
    print(f"solve {method} beta={format_float(cfg.beta)} "
          f"converged in {sol.iterations} iterations")
    print(f"objective = {format_float(traj.objective)}")
    print(f"base objective J = {format_float(base)}")
    print(f"wrote {path}")
    return 0


def _cmd_mission(args) -> int:
    cfg = _load(args)
    ocp, make_spec = example_problem(cfg.alpha)
    method = cfg.method
    desensitized = method in ("DOC", "DOG")
    spec = make_spec(cfg.beta, cfg.q) if desensitized else None
    alpha_tilde = args.alpha_tilde
    if alpha_tilde is None and cfg.preset is not None:
        alpha_tilde = _PRESET_ALPHA_TILDE.get(cfg.preset)
    if alpha_tilde is None:
        alpha_tilde = cfg.alpha
    p_tilde = np.asarray(ocp.nominal_params, dtype=float).copy()
    p_tilde[0] = alpha_tilde
    mission = run_mission(ocp, spec, _guidance(cfg, ocp, method),
                          p_tilde=p_tilde)
    if mission.failed:
        raise NumericalError(
            f"{method} mission failed at cycle {mission.failure_cycle}: "
            f"{mission.message}")
    out = _prepare_output(cfg)
    path = os.path.join(out, f"mission_{method}.csv")
    write_mission_csv(mission, path)
    print(f"mission {method} alpha_tilde={format_float(alpha_tilde)} "
          f"flew {len(mission.statuses) - 1} guidance cycles")
    print(f"epsilon = {format_float(mission.epsilon)}")
    print(f"terminal state = {format_float(mission.terminal_state[0])}")
    print(f"wrote {path}")
    return 0


def _cmd_campaign(args) -> int:
    cfg = _load(args)
    workers = cfg.workers
    env_workers = os.environ.get("GUIDEDOG_WORKERS")
    if env_workers is not None:
        try:
            workers = int(env_workers)
        except ValueError as exc:
            raise ValidationError(
                f"GUIDEDOG_WORKERS must be an integer, got {env_workers!r}"
            ) from exc
    ocp, make_spec = example_problem(cfg.alpha)
    needs_spec = any(m in ("DOC", "DOG") for m in cfg.methods)
    spec = make_spec(cfg.beta, cfg.q) if needs_spec else None
    try:
        mc = MonteCarloConfig(run_count=cfg.runs, q=cfg.q, beta=cfg.beta,
                              seed=cfg.seed, methods=cfg.methods,
                              workers=workers)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    records = run_campaign(ocp, spec, mc,
                           guidance=_guidance(cfg, ocp, cfg.methods[0]))
    stats = summarize(records)
    out = _prepare_output(cfg)
    paths = {
        "records": os.path.join(out, "records.csv"),
        "summary": os.path.join(out, "summary.csv"),
        "scatter": os.path.join(out, "scatter.svg"),
    }
    write_records_csv(records, paths["records"])
    write_summary_csv(stats, paths["summary"])
    emit_scatter_svg(records, paths["scatter"])
    for method, s in stats.items():
        if s.all_failed:
            print(f"{method}: all {s.total} runs failed")
        else:
            print(f"{method}: n={s.total} failures={s.failures} "
                  f"mean={s.mean:+.6e} median={s.median:+.6e} "
                  f"std={s.std:.6e} max|eps|={s.max_abs:.6e}")
    print(f"wrote {paths['records']} {paths['summary']} {paths['scatter']}")
    if all(s.all_failed for s in stats.values()):
        raise NumericalError("every run in the campaign failed")
    return 0


def _cmd_presets(_args) -> int:
    for name in ("fig3a", "fig3b", "fig3c", "fig3d"):
        q, beta = PRESETS[name]
        print(f"{name}  q={q}  beta={beta}  (dispersion campaign)")
    q, beta = PRESETS["fig4"]
    alpha_tilde = _PRESET_ALPHA_TILDE["fig4"]
    print(f"fig4   q={q}  beta={beta}  "
          f"(single mission, alpha_tilde={alpha_tilde})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _add_common(sub):
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--output", help="output directory (default '.')")
    sub.add_argument("--preset", help="named case, see the presets command")
    sub.add_argument("--beta", type=float, help="desensitization weight")
    sub.add_argument("--q", type=float, help="parameter spread fraction")
    sub.add_argument("--mesh-intervals", dest="mesh_intervals", type=int,
                     help="uniform mesh interval count (overrides default)")
    sub.add_argument("--mesh-order", dest="mesh_order", type=int,
                     help="collocation points per interval")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="guidedog",
                     description="Desensitized trajectory optimization "
                                 "and closed-loop guidance studies")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="one reference solve")
    _add_common(solve)
    solve.set_defaults(handler=_cmd_solve)

    mission = commands.add_parser("mission", help="one closed-loop mission")
    _add_common(mission)
    mission.add_argument("--method", choices=METHODS, help="mission method")
    mission.add_argument("--alpha-tilde", dest="alpha_tilde", type=float,
                         help="true plant parameter flown")
    mission.set_defaults(handler=_cmd_mission)

    campaign = commands.add_parser("campaign", help="Monte Carlo campaign")
    _add_common(campaign)
    campaign.add_argument("--runs", type=int, help="number of draws")
    campaign.add_argument("--seed", type=int, help="campaign seed")
    campaign.add_argument("--workers", type=int, help="worker threads")
    campaign.set_defaults(handler=_cmd_campaign)

    presets = commands.add_parser("presets", help="list named cases")
    presets.set_defaults(handler=_cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
