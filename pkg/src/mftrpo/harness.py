"""Config-driven experiment runs, assumption checks and one-off evaluation."""

from __future__ import annotations

import csv
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .config import ExperimentConfig
from .core import (MfMdp, as_dist, as_policy, induced_kernel, soft_value_iteration,
                   uniform_policy)
from .envs import (GridSpec, IslandsSpec, build_grid_crowd, build_two_islands, default_nu,
                   four_rooms, grid_to_image, make_oracle, walled_grid5)
from .errors import ConfigError, InvalidArgumentError, MfgError
from .evaluation import (exploitability, fit_geometric_rate, mfne_residual, mixing_profile,
                         monotonicity_probe, record_metrics)
from .exact import ExactTrpoConfig, MftrpoConfig, exact_fixed_point, exact_mftrpo
from .plotting import bar_svg, curve_svg, heatmap_svg
from .sampled import SampledMftrpoConfig, SampledTrpoConfig, sample_based_mftrpo
from .schedules import ConstantSchedule, HarmonicSchedule
from .trace import METRIC_COLUMNS, RunTrace, evaluation_cadence, should_record

MIXING_HORIZON = 200
MIXING_R2_MIN = 0.9


@dataclass
class Environment:
    mdp: MfMdp
    mu0: np.ndarray
    nu: np.ndarray


@dataclass
class RunResult:
    out_dir: Path
    traces: dict = field(default_factory=dict)


def build_environment(cfg: ExperimentConfig) -> Environment:
    env = cfg.env
    if env.family == "grid":
        if env.layout == "walled5":
            base = walled_grid5(target=False)
        elif env.layout == "four-rooms":
            base = four_rooms(11)
        else:
            base = GridSpec(env.width, env.height, frozenset(env.walls))
        spec = GridSpec(base.width, base.height, base.walls, kappa=env.kappa,
                        slipperiness=env.slipperiness, target=env.target,
                        mu_floor=env.mu_floor, initial_cell=env.initial_cell)
        mdp = build_grid_crowd(spec, env.gamma)
    else:
        spec = IslandsSpec(crowd_kappa=env.kappa, seed=env.islands_seed,
                           mu_floor=env.mu_floor, initial_state=env.initial_state)
        mdp = build_two_islands(spec, env.gamma)
    mu0 = default_nu(mdp)
    nu = mu0 if env.reset == "start" else np.full(mdp.n_states, 1.0 / mdp.n_states)
    return Environment(mdp, mu0, nu)


def _schedule(solver):
    if solver.beta_schedule == "harmonic":
        return HarmonicSchedule(solver.beta) if solver.beta > 0 else ConstantSchedule(0.0)
    return ConstantSchedule(solver.beta)


def run_solver(cfg: ExperimentConfig, environment: Environment, seed: int) -> RunTrace:
    s, out = cfg.solver, cfg.output
    mdp = environment.mdp
    snaps = frozenset(out.snapshots)
    beta = _schedule(s)
    if s.algorithm == "exact-mftrpo":
        return exact_mftrpo(mdp, MftrpoConfig(
            ExactTrpoConfig(s.eta, s.inner_iters), s.outer_iters, beta, s.kernel_power,
            environment.mu0, warm_start=s.warm_start, snapshot_steps=snaps,
            eval_every=out.eval_every, record_wall_time=out.wall_time))
    if s.algorithm == "sampled-mftrpo":
        trpo = SampledTrpoConfig(eta=s.eta, big_l=s.inner_iters, epsilon=s.epsilon,
                                 delta=s.delta, i_per_iter=s.samples_per_iter,
                                 t_rollout=s.rollout_horizon, seed=seed,
                                 i_growth=s.sample_growth, q_estimator=s.q_estimator)
        oracle = make_oracle(mdp, environment.nu, seed)
        return sample_based_mftrpo(oracle, SampledMftrpoConfig(
            trpo, s.outer_iters, beta, s.kernel_power, s.trajectories, seed=seed,
            mu0=environment.mu0, warm_start=s.warm_start, snapshot_steps=snaps,
            eval_every=out.eval_every, record_wall_time=out.wall_time))
    if s.algorithm == "exact-fixed-point":
        return fixed_point_trace(mdp, environment.mu0, beta, s.kernel_power, s.outer_iters,
                                 s.eta, snaps, out.eval_every)
    return run_baseline(mdp, BaselineConfig(
        s.algorithm, s.outer_iters, s.eta, environment.mu0, learning_rate=s.learning_rate,
        beta=beta, big_m=s.kernel_power, population=s.population, snapshot_steps=snaps,
        eval_every=out.eval_every, record_wall_time=out.wall_time))


def fixed_point_trace(mdp, mu0, beta, big_m, big_k, eta, snaps=frozenset(), every=None):
    """Exact best-response fixed-point iteration recorded like the other solvers."""
    _, path = exact_fixed_point(mdp, mu0, beta, big_m, big_k, eta, return_path=True)
    every = every or evaluation_cadence(big_k)
    trace = RunTrace("exact-fixed-point", metadata={"eta": eta, "K": big_k, "M": big_m})
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    for k, mu in enumerate(path):
        if k > 0:
            pi = soft_value_iteration(mdp, path[k - 1], eta, 1e-10)[1]
        if should_record(k, big_k, every):
            trace.records.append(record_metrics(mdp, pi, mu, path[max(k - 1, 0)], eta, k))
        if k in snaps:
            trace.mu_snapshots[k] = mu.copy()
            trace.policy_snapshots[k] = pi.copy()
    final_pi = soft_value_iteration(mdp, path[-1], eta, 1e-10)[1]
    trace.final_mu, trace.final_policy = path[-1], final_pi
    trace.final_exploitability = exploitability(mdp, final_pi, path[-1], eta).phi
    trace.final_exploitability_unreg = exploitability(mdp, final_pi, path[-1], 0.0).phi
    return trace


# --- writers ---------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return repr(value) if math.isfinite(value) else ""


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_metrics(trace: RunTrace, path) -> None:
    _write_csv(Path(path), METRIC_COLUMNS, (r.row() for r in trace.records))


def write_distribution(mdp: MfMdp, mu, path) -> None:
    info = mdp.info or {}
    if info.get("family") == "grid":
        rows = [(s, x, y, m) for s, ((x, y), m) in enumerate(zip(info["cells"], mu))]
        _write_csv(Path(path), ("state", "x", "y", "mass"), rows)
    else:
        _write_csv(Path(path), ("state", "mass"), enumerate(mu))


def write_policy(pi, path) -> None:
    pi = np.asarray(pi)
    header = ["state"] + [f"a{a}" for a in range(pi.shape[1])]
    _write_csv(Path(path), header, ([s, *row] for s, row in enumerate(pi)))


def read_distribution(path, n_states: int) -> np.ndarray:
    rows = _read_rows(path)
    if not rows or "mass" not in rows[0]:
        raise InvalidArgumentError(f"{path}: expected a 'mass' column")
    mu = np.zeros(n_states)
    for row in rows:
        mu[_state(row, n_states, path)] = float(row["mass"])
    return as_dist(mu, n_states, str(path))


def read_policy(path, n_states: int, n_actions: int) -> np.ndarray:
    rows = _read_rows(path)
    cols = [f"a{a}" for a in range(n_actions)]
    if not rows or any(c not in rows[0] for c in cols):
        raise InvalidArgumentError(f"{path}: expected columns state,{','.join(cols)}")
    pi = np.zeros((n_states, n_actions))
    for row in rows:
        pi[_state(row, n_states, path)] = [float(row[c]) for c in cols]
    return as_policy(pi, n_states, n_actions)


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise InvalidArgumentError(f"{path}: file not found") from None


def _state(row, n_states, path):
    s = int(row["state"])
    if not 0 <= s < n_states:
        raise InvalidArgumentError(f"{path}: state {s} out of range")
    return s


def _summary_rows(traces: dict):
    by_seed = [{r.k: r for r in t.records} for t in traces.values()]
    common = sorted(set.intersection(*(set(d) for d in by_seed))) if by_seed else []
    for k in common:
        recs = [d[k] for d in by_seed]
        row = [k]
        for col in range(1, len(METRIC_COLUMNS)):
            vals = [r.row()[col] for r in recs]
            row.append(None if any(v is None for v in vals) else float(np.mean(vals)))
        yield row


def _write_distribution_figure(mdp, mu, path, title):
    if (mdp.info or {}).get("family") == "grid":
        heatmap_svg(grid_to_image(mdp, mu), path, title, values=mu)
    else:
        bar_svg(mu, path, title)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Run every seed and write all artifacts; nothing is left behind on failure.

    Files are produced in a staging directory next to the target and moved
    into place only after every seed finished.
    """
    target = Path(out_dir if out_dir is not None else cfg.output.directory)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}-staging-", dir=target.parent))
    try:
        environment = build_environment(cfg)
        mdp = environment.mdp
        traces = {}
        for seed in cfg.seeds:
            trace = run_solver(cfg, environment, seed)
            traces[seed] = trace
            write_metrics(trace, staging / f"metrics_{seed}.csv")
            for k, mu in sorted(trace.mu_snapshots.items()):
                write_distribution(mdp, mu, staging / f"mu_{seed}_{k}.csv")
                if cfg.output.heatmaps:
                    _write_distribution_figure(mdp, mu, staging / f"mu_{seed}_{k}.svg",
                                               f"seed {seed}, step {k}")
            if trace.final_policy is not None:
                write_policy(trace.final_policy, staging / f"policy_{seed}.csv")
            if trace.final_mu is not None:
                write_distribution(mdp, trace.final_mu, staging / f"mu_{seed}_final.csv")
        summary = list(_summary_rows(traces))
        _write_csv(staging / "summary.csv", METRIC_COLUMNS, summary)
        _write_csv(staging / "final.csv",
                   ("seed", "final_exploitability_reg", "final_exploitability_unreg"),
                   ((s, t.final_exploitability, t.final_exploitability_unreg)
                    for s, t in traces.items()))
        if cfg.output.heatmaps and summary:
            ks = [row[0] for row in summary]
            curve_svg({"regularized": (ks, [row[1] for row in summary]),
                       "unregularized": (ks, [row[2] for row in summary])},
                      staging / "exploitability.svg",
                      f"{cfg.solver.algorithm}, mean over {len(traces)} seed(s)")
        target.mkdir(parents=True, exist_ok=True)
        for item in sorted(staging.iterdir()):
            item.replace(target / item.name)
        return RunResult(target, traces)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def check_assumptions(cfg: ExperimentConfig, out_dir=None, samples: int = 50, seed=None):
    """Monotonicity probe plus geometric-mixing fit; writes ``assumptions.csv``.

    Returns the rows ``(check, quantity, value, verdict)``.
    """
    environment = build_environment(cfg)
    mdp = environment.mdp
    eta, big_m = cfg.solver.eta, max(cfg.solver.kernel_power, 1)
    rng = np.random.default_rng(cfg.seeds[0] if seed is None else seed)
    rows = []
    probe = monotonicity_probe(mdp, eta, big_m, samples, rng)
    if probe.degenerate:
        rows.append(("monotonicity", "max_ratio", None, "degenerate (single state)"))
    else:
        rows.append(("monotonicity", "max_ratio", probe.max_ratio,
                     "pass" if probe.max_ratio < 1.0 else "warn"))
    rows.append(("monotonicity", "pairs", probe.samples, ""))
    rows.append(("monotonicity", "M", big_m, ""))
    uniform_mu = np.full(mdp.n_states, 1.0 / mdp.n_states)
    policies = {"uniform_policy": uniform_policy(mdp.n_states, mdp.n_actions),
                "best_response_to_uniform": soft_value_iteration(mdp, uniform_mu, eta)[1]}
    for name, pi in policies.items():
        tv = mixing_profile(induced_kernel(mdp, pi, uniform_mu), environment.mu0,
                            MIXING_HORIZON)
        rho, r2, n = fit_geometric_rate(tv)
        verdict = "pass" if rho < 1.0 and r2 >= MIXING_R2_MIN else "warn"
        if n < 3:
            verdict = "pass (mixes immediately)"
        rows.append((f"mixing[{name}]", "rho", rho, verdict))
        rows.append((f"mixing[{name}]", "r_squared", r2, ""))
        rows.append((f"mixing[{name}]", "tv_at_horizon", float(tv[-1]), ""))
    target = Path(out_dir if out_dir is not None else cfg.output.directory)
    target.mkdir(parents=True, exist_ok=True)
    _write_csv(target / "assumptions.csv", ("check", "quantity", "value", "verdict"), rows)
    return rows


def evaluate_pair(cfg: ExperimentConfig, policy_path, mu_path):
    """Diagnostics for a stored ``(policy, mu)`` pair under the configured game."""
    environment = build_environment(cfg)
    mdp, eta = environment.mdp, cfg.solver.eta
    pi = read_policy(policy_path, mdp.n_states, mdp.n_actions)
    mu = read_distribution(mu_path, mdp.n_states)
    reg = exploitability(mdp, pi, mu, eta)
    unreg = exploitability(mdp, pi, mu, 0.0)
    value_gap, fp_gap = mfne_residual(mdp, pi, mu, eta)
    return [("exploitability_reg", reg.phi), ("exploitability_unreg", unreg.phi),
            ("best_response_value", reg.best_response_value),
            ("policy_value", reg.policy_value),
            ("mfne_value_gap", value_gap), ("mfne_fixed_point_gap", fp_gap)]


def apply_overrides(cfg: ExperimentConfig, seed_override: Optional[int] = None):
    if seed_override is not None:
        if seed_override < 0:
            raise ConfigError("--seed-override must be non-negative")
        cfg.seeds = (seed_override,)
    return cfg
