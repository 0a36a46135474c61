"""Experiment runner: config files, seeded runs, CSV traces and summaries."""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import environments as envs
from .features import RBFGridFeatures, rbf_grid_features
from .oracle import (
    DiagnosticsRecord,
    count_active,
    diagnostics_from_iterates,
    exact_system,
    reference_solve,
    regularized_objective,
)
from .solvers import Algorithm, PrimalDualState, SolverConfig, StepSchedule, run_solver

EXPERIMENTS = ("star", "random-walk", "mountain-car", "synthetic", "prop1-check")
OUTPUT_ENV = "ROTD_OUTPUT_DIR"

MOUNTAIN_CAR_GRIDS = (2, 4, 8, 16, 32)


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 1)."""


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_norm_pair(v: str) -> tuple:
    parts = [p.strip().lower() for p in v.split(",")]
    if len(parts) != 2:
        raise ValueError("norm_pair takes two comma-separated exponents")
    return tuple(math.inf if p in ("inf", "infinity") else float(p) for p in parts)


def _parse_list(v: str) -> tuple:
    return tuple(p.strip() for p in v.split(",") if p.strip())


# key -> (parser, default, help); default None with required=True means mandatory
CONFIG_KEYS = {
    "experiment": (str, None, "one of " + ", ".join(EXPERIMENTS)),
    "algorithms": (_parse_list, None, "comma list of TD, TDC, RO-TD, GQ, RO-GQ, RO-TD-EXT"),
    "alpha": (float, None, "stepsize constant c"),
    "n_samples": (int, None, "samples per run N"),
    "alpha_schedule": (str, "constant", "constant (alpha_t = c) or inv-sqrt (alpha_t = c / sqrt(t))"),
    "eta": (float, 1.0, "two-timescale ratio, beta_t = eta * alpha_t"),
    "rho1": (float, 0.0, "l1 weight on theta"),
    "rho2": (float, 0.0, "l1 weight on w"),
    "norm_pair": (_parse_norm_pair, (2.0, 2.0), "conjugate exponents m,n: 2,2 | 1,inf | inf,1"),
    "gamma": (float, None, "discount (default: experiment-specific)"),
    "lambda": (float, 0.0, "eligibility-trace factor for GQ / RO-GQ"),
    "n_runs": (int, 1, "number of seeds"),
    "seed_base": (int, 0, "run i uses seed seed_base + i"),
    "output_dir": (str, "results", "output directory (overridden by $" + OUTPUT_ENV + ")"),
    "plot": (_parse_bool, False, "write SVG plots"),
    "record_every": (int, 0, "record stride; 0 means max(1, N // 500)"),
    "bases": (_parse_list, ("tabular", "inverted", "dependent"), "random-walk bases"),
    "n_episodes": (int, 15, "mountain-car episodes"),
    "max_steps": (int, 200, "mountain-car steps per episode"),
    "control_rollouts": (int, 0, "mountain-car greedy lookahead rollouts per run (0 = skip)"),
    "rollout_max_steps": (int, 1000, "step cap of each evaluation rollout"),
    "init": (str, "zero", "zero | baird (star only)"),
    "workers": (int, 1, "parallel runs (output is independent of this)"),
}
REQUIRED = tuple(k for k, (_, default, _h) in CONFIG_KEYS.items() if default is None and k != "gamma")

DEFAULT_GAMMA = {"star": 0.99, "random-walk": 0.9, "mountain-car": 0.99, "synthetic": 0.9, "prop1-check": 0.9}


@dataclass
class ExperimentConfig:
    experiment: str
    algorithms: tuple
    solver: dict
    n_samples: int
    n_runs: int = 1
    seed_base: int = 0
    output_dir: Path = Path("results")
    plot: bool = False
    record_every: int = 0
    bases: tuple = ("tabular", "inverted", "dependent")
    n_episodes: int = 15
    max_steps: int = 200
    control_rollouts: int = 0
    rollout_max_steps: int = 1000
    init: str = "zero"
    workers: int = 1
    source: str = ""

    def solver_config(self, algorithm) -> SolverConfig:
        return SolverConfig(algorithm=algorithm, **self.solver)

    @property
    def stride(self) -> int:
        return self.record_every if self.record_every > 0 else max(1, self.n_samples // 500)


def config_help() -> str:
    lines = ["Config keys (section [experiment]; required keys marked *):"]
    for key, (_, default, text) in CONFIG_KEYS.items():
        mark = "*" if key in REQUIRED else " "
        shown = "" if default is None else f" [default: {_fmt_default(default)}]"
        lines.append(f"  {mark} {key:<18} {text}{shown}")
    return "\n".join(lines)


def _fmt_default(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse ``key = value`` lines under a required ``[experiment]`` header."""
    values, lines_of = {}, {}
    in_section = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[experiment]":
                raise ConfigError(f"{source}:{lineno}: unknown section {line!r}")
            in_section = True
            continue
        if not in_section:
            raise ConfigError(f"{source}:{lineno}: expected [experiment] header before settings")
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: syntax error, expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = CONFIG_KEYS[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        lines_of[key] = lineno

    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")

    def fail(key, msg):
        where = f"{source}:{lines_of[key]}" if key in lines_of else source
        raise ConfigError(f"{where}: {msg}")

    get = lambda k: values.get(k, CONFIG_KEYS[k][1])
    exp = values["experiment"]
    if exp not in EXPERIMENTS:
        fail("experiment", f"unknown experiment {exp!r}")
    try:
        algorithms = tuple(Algorithm(a) for a in values["algorithms"])
    except ValueError as exc:
        fail("algorithms", str(exc))
    if not algorithms:
        fail("algorithms", "at least one algorithm is required")
    for key in ("n_samples", "n_runs", "workers", "n_episodes", "max_steps"):
        if get(key) < 1:
            fail(key, f"{key} must be >= 1")
    gamma = get("gamma")
    if gamma is None:
        gamma = DEFAULT_GAMMA[exp]
    if exp == "mountain-car" and get("n_episodes") * get("max_steps") != values["n_samples"]:
        fail("n_samples", "mountain-car needs n_samples = n_episodes * max_steps")
    if get("init") not in ("zero", "baird") or (get("init") == "baird" and exp != "star"):
        fail("init", "init must be 'zero', or 'baird' for the star experiment")
    if exp == "random-walk":
        for basis in get("bases"):
            if basis not in ("tabular", "inverted", "dependent"):
                fail("bases", f"unknown basis {basis!r}")

    solver = dict(
        alpha=None,
        gamma=gamma,
        eta=get("eta"),
        rho1=get("rho1"),
        rho2=get("rho2"),
        norm_pair=get("norm_pair"),
        lam=get("lambda"),
    )
    try:
        solver["alpha"] = StepSchedule(values["alpha"], get("alpha_schedule"))
        for algo in algorithms:
            SolverConfig(algorithm=algo, **solver)
    except ValueError as exc:
        key = next((k for k in ("alpha", "alpha_schedule", "norm_pair", "eta", "rho1", "rho2", "lambda", "gamma")
                    if k in str(exc).replace("norm pair", "norm_pair")), "algorithms")
        fail(key if key in lines_of else "algorithms", str(exc))

    out = os.environ.get(OUTPUT_ENV) or get("output_dir")
    return ExperimentConfig(
        experiment=exp,
        algorithms=algorithms,
        solver=solver,
        n_samples=values["n_samples"],
        n_runs=get("n_runs"),
        seed_base=get("seed_base"),
        output_dir=Path(out),
        plot=get("plot"),
        record_every=get("record_every"),
        bases=get("bases"),
        n_episodes=get("n_episodes"),
        max_steps=get("max_steps"),
        control_rollouts=get("control_rollouts"),
        rollout_max_steps=get("rollout_max_steps"),
        init=get("init"),
        workers=get("workers"),
        source=source,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, str(path))


# --------------------------------------------------------------------------
# running

@dataclass
class RunResult:
    label: str
    algorithm: Algorithm
    run: int
    seed: int
    records: list
    x_bar: np.ndarray
    y_bar: np.ndarray
    duration: float
    diverged_at: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


def _records(run, system, config: SolverConfig) -> tuple[list[DiagnosticsRecord], int | None]:
    """Diagnostics per recorded iteration, cut at the first non-finite exact quantity.

    Iterates can stay finite while their MSPBE already overflows; such a run
    is reported as diverged at that record's iteration.
    """
    records = []
    with np.errstate(over="ignore", invalid="ignore"):
        for k, it in enumerate(run.iterations):
            rec = diagnostics_from_iterates(int(it), run.x[k], run.y[k], run.estimate(k), system, config,
                                            run.delta[k])
            if system is not None and not np.isfinite([rec.mspbe, rec.l2_residual, rec.objective]).all():
                return records, int(it)
            records.append(rec)
    return records, None


def _result(label, run_index, seed, run, system, solver_cfg, started) -> RunResult:
    records, overflow_at = _records(run, system, solver_cfg)
    diverged_at = run.diverged_at
    if overflow_at is not None:
        diverged_at = overflow_at if diverged_at is None else min(diverged_at, overflow_at)
    k = len(records) - 1 if records else 0
    return RunResult(
        label=label,
        algorithm=solver_cfg.algorithm,
        run=run_index,
        seed=seed,
        records=records,
        x_bar=run.xbar[k].copy(),
        y_bar=run.ybar[k].copy(),
        duration=time.perf_counter() - started,
        diverged_at=diverged_at,
    )


def _star_runs(cfg: ExperimentConfig, run_index: int, seed: int) -> list[RunResult]:
    model, feats = envs.star_mdp(cfg.solver["gamma"])
    batch = envs.collect_iid_samples(model, feats, cfg.n_samples, seed)
    out = []
    for algo in cfg.algorithms:
        scfg = cfg.solver_config(algo)
        system = exact_system(model, feats, scfg.eta, scfg.gamma, allow_rank_deficient=True)
        init = PrimalDualState.zeros(feats.d, envs.BAIRD_THETA0 if cfg.init == "baird" else None)
        started = time.perf_counter()
        run = run_solver(batch, scfg, init=init, record_every=cfg.stride)
        out.append(_result(algo.value, run_index, seed, run, system, scfg, started))
    return out


def _random_walk_runs(cfg: ExperimentConfig, run_index: int, seed: int) -> list[RunResult]:
    model = envs.random_walk(gamma=cfg.solver["gamma"])
    out = []
    for basis in cfg.bases:
        feats = envs.random_walk_features(basis)
        batch = envs.collect_iid_samples(model, feats, cfg.n_samples, seed)
        for algo in cfg.algorithms:
            scfg = cfg.solver_config(algo)
            system = exact_system(model, feats, scfg.eta, scfg.gamma)
            started = time.perf_counter()
            run = run_solver(batch, scfg, record_every=cfg.stride)
            out.append(_result(f"{algo.value}-{basis}", run_index, seed, run, system, scfg, started))
    return out


def _synthetic_runs(cfg: ExperimentConfig, run_index: int, seed: int) -> list[RunResult]:
    model, feats = envs.random_mdp(seed, gamma=cfg.solver["gamma"])
    batch = envs.collect_iid_samples(model, feats, cfg.n_samples, seed + 1_000_003)
    out = []
    for algo in cfg.algorithms:
        scfg = cfg.solver_config(algo)
        system = exact_system(model, feats, scfg.eta, scfg.gamma)
        started = time.perf_counter()
        run = run_solver(batch, scfg, record_every=cfg.stride)
        res = _result(algo.value, run_index, seed, run, system, scfg, started)
        if cfg.experiment == "prop1-check":
            m = scfg.norm_pair[0]
            x_ref = reference_solve(system.A, system.b, scfg.rho1, scfg.rho2, m)
            f_ref = regularized_objective(system.A, system.b, x_ref, scfg.rho1, scfg.rho2, m)
            f_bar = regularized_objective(system.A, system.b, res.x_bar, scfg.rho1, scfg.rho2, m)
            res.extra.update(reference_objective=f_ref, averaged_objective=f_bar, gap=f_bar - f_ref)
        out.append(res)
    return out


def mountain_car_features() -> RBFGridFeatures:
    return rbf_grid_features(envs.MOUNTAIN_CAR_BOUNDS, MOUNTAIN_CAR_GRIDS, include_constant=True)


def mountain_car_batch(n_episodes: int, max_steps: int, seed: int, features=None) -> envs.EpisodeBatch:
    features = features or mountain_car_features()
    return envs.collect_episodes(envs.MountainCar(), envs.energy_pumping_policy, features,
                                 n_episodes, max_steps, seed, restart_on_done=True)


def _mountain_car_runs(cfg: ExperimentConfig, run_index: int, seed: int) -> list[RunResult]:
    feats = mountain_car_features()
    batch = mountain_car_batch(cfg.n_episodes, cfg.max_steps, seed, feats)
    out = []
    for algo in cfg.algorithms:
        scfg = cfg.solver_config(algo)
        started = time.perf_counter()
        run = run_solver(batch, scfg, record_every=cfg.stride)
        res = _result(algo.value, run_index, seed, run, None, scfg, started)
        if not res.diverged:
            res.extra["feature_selection"] = feature_selection_report(
                res, feats, rollouts=cfg.control_rollouts, gamma=scfg.gamma, seed=seed,
                max_steps=cfg.rollout_max_steps,
            )
        out.append(res)
    return out


_RUNNERS = {
    "star": _star_runs,
    "random-walk": _random_walk_runs,
    "mountain-car": _mountain_car_runs,
    "synthetic": _synthetic_runs,
    "prop1-check": _synthetic_runs,
}


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    """Execute every run of ``cfg``; results are ordered by run index, then label."""
    runner = _RUNNERS[cfg.experiment]
    jobs = [(i, cfg.seed_base + i) for i in range(cfg.n_runs)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(lambda job: runner(cfg, *job), jobs))
    else:
        chunks = [runner(cfg, *job) for job in jobs]
    return [r for chunk in chunks for r in chunk]


# --------------------------------------------------------------------------
# control evaluation and feature selection

def greedy_lookahead_action(state, theta, features, gamma: float) -> int:
    """``argmax_a r + gamma V(s'_a)`` through the simulator (terminal value 0)."""
    best, best_a = -math.inf, 0
    for a in range(envs.MountainCar.n_actions):
        s2, r, done = envs.mountain_car_step(state, a)
        q = r + (0.0 if done else gamma * float(features(s2) @ theta))
        if q > best:
            best, best_a = q, a
    return best_a


def evaluate_control(theta, features, gamma: float, n_rollouts: int = 20, seed: int = 0,
                     max_steps: int = 1000, start_range=(-0.6, -0.4)) -> dict:
    """Greedy-lookahead rollouts from zero-velocity starts in ``start_range``."""
    rng = np.random.default_rng(seed)
    steps, successes = [], 0
    for _ in range(n_rollouts):
        s = (float(rng.uniform(*start_range)), 0.0)
        for t in range(1, max_steps + 1):
            s, _r, done = envs.mountain_car_step(s, greedy_lookahead_action(s, theta, features, gamma))
            if done:
                successes += 1
                steps.append(t)
                break
    return {
        "rollouts": n_rollouts,
        "successes": successes,
        "success_rate": successes / n_rollouts if n_rollouts else math.nan,
        "steps_mean": float(np.mean(steps)) if steps else math.nan,
        "steps_std": float(np.std(steps, ddof=1)) if len(steps) > 1 else math.nan,
    }


def feature_selection_report(run: RunResult, features, rollouts: int = 0, gamma: float = 0.99,
                             seed: int = 0, max_steps: int = 1000) -> dict:
    """Sparsity of the averaged theta, per grid resolution, plus optional control evaluation."""
    d = features.d
    theta = run.x_bar[d:]
    report = {"d": d, "theta_nnz": count_active(theta), "w_nnz": count_active(run.x_bar[:d])}
    report["nonzero_fraction"] = report["theta_nnz"] / d
    if isinstance(features, RBFGridFeatures):
        per_grid = {}
        for g, sl in zip(features.grid_sizes, features.blocks):
            per_grid[f"{g}x{g}"] = count_active(theta[sl])
        if features.include_constant:
            per_grid["constant"] = count_active(theta[-1:])
        report["per_grid_nnz"] = per_grid
    if rollouts > 0:
        report["control"] = evaluate_control(theta, features, gamma, rollouts, seed, max_steps)
    return report


# --------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


TRACE_COLUMNS = ("run", "seed") + DiagnosticsRecord.COLUMNS


def emit_csv(results, path) -> Path:
    """Write one row per record per run, ``run`` and ``seed`` prepended."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for res in results:
                for rec in res.records:
                    w.writerow([_fmt(res.run), _fmt(res.seed)] + [_fmt(v) for v in rec.as_row()])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_trace_csv(path) -> dict:
    """Parse a trace file into ``{column: array}``."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        if name in ("run", "seed", "iteration", "theta_nnz", "w_nnz"):
            cols[name] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            cols[name] = np.array([float(v) for v in vals])
    return cols


AGG_METRICS = ("mspbe", "l2_residual", "dual_value", "theta_nnz", "w_nnz", "objective")


def aggregate(results) -> dict:
    """Mean and sample std per recorded iteration over non-diverged runs."""
    ok = [r for r in results if not r.diverged]
    out = {"n_runs": len(results), "n_diverged": len(results) - len(ok)}
    if not ok:
        return out
    its = [rec.iteration for rec in ok[0].records]
    out["iteration"] = np.array(its)
    for metric in AGG_METRICS:
        vals = np.array([[getattr(rec, metric) for rec in r.records] for r in ok], dtype=float)
        out[f"{metric}_mean"] = vals.mean(axis=0)
        out[f"{metric}_std"] = vals.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(vals.shape[1])
    return out


def emit_aggregate_csv(results, path) -> Path:
    agg = aggregate(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["iteration", "n_ok"] + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "std")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        if "iteration" in agg:
            n_ok = agg["n_runs"] - agg["n_diverged"]
            for k, it in enumerate(agg["iteration"]):
                w.writerow([_fmt(int(it)), _fmt(n_ok)] + [_fmt(agg[c][k]) for c in cols[2:]])
    return path


def group_by_label(results) -> dict:
    groups = {}
    for r in results:
        groups.setdefault(r.label, []).append(r)
    return groups


def summarize(cfg: ExperimentConfig, results) -> dict:
    summary = {"experiment": cfg.experiment, "n_runs": cfg.n_runs, "n_samples": cfg.n_samples, "labels": {}}
    for label, group in group_by_label(results).items():
        agg = aggregate(group)
        entry = {"n_diverged": agg["n_diverged"], "diverged_at": [r.diverged_at for r in group if r.diverged]}
        if "iteration" in agg:
            first, last = agg["mspbe_mean"][0], agg["mspbe_mean"][-1]
            entry.update(initial_mspbe=_json_num(first), final_mspbe=_json_num(last),
                         final_objective=_json_num(agg["objective_mean"][-1]),
                         final_theta_nnz=_json_num(agg["theta_nnz_mean"][-1]))
            if np.isfinite(first) and first > 0:
                entry["mspbe_ratio"] = _json_num(last / first)
        extras = [r.extra for r in group if r.extra]
        if extras:
            entry["runs"] = [_jsonable(e) for e in extras]
        summary["labels"][label] = entry
    return summary


def _json_num(v):
    v = float(v)
    return None if not math.isfinite(v) else v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_num(obj)
    return obj


def write_outputs(cfg: ExperimentConfig, results) -> dict:
    """Traces, aggregates, summary (and plots when enabled) under ``output_dir``."""
    from .plotting import emit_plot

    out = Path(cfg.output_dir) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    groups = group_by_label(results)
    for label, group in groups.items():
        written[f"trace_{label}"] = emit_csv(group, out / f"trace_{label}.csv")
        written[f"aggregate_{label}"] = emit_aggregate_csv(group, out / f"aggregate_{label}.csv")
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summarize(cfg, results), indent=2, sort_keys=True) + "\n")
    written["summary"] = summary_path
    if cfg.plot:
        has_exact = any(math.isfinite(rec.mspbe) for r in results for rec in r.records)
        if has_exact:
            written["plot_mspbe"] = emit_plot(results, "mspbe", out / "mspbe.svg", log_scale=True)
            pd = [r for r in results if r.algorithm.primal_dual and not r.diverged]
            if pd:
                first_label = pd[0].label
                written["plot_duality"] = emit_plot(
                    [r for r in pd if r.label == first_label], ("dual_value", "l2_residual"),
                    out / "duality.svg",
                )
        written["plot_theta_nnz"] = emit_plot(results, "theta_nnz", out / "theta_nnz.svg")
    return written
