"""Run experiments from configs and persist curves, metrics and policy snapshots."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .baseline_predictor import fit_on_pool
from .config import ExperimentConfig
from .envs import make_env
from .metrics import ambiguity_score, build_ambiguous_situations, evaluate, teacher_test_set
from .policy import policy_from_dict, policy_to_dict
from .training import AgentRole, phase1_pretrain, phase2_train

log = logging.getLogger(__name__)

CURVES_SCHEMA = "# schema: bgiteach.curves/1"
TABLE_SCHEMA = "# schema: bgiteach.table/1"
CURVE_FIELDS = ("epoch", "seed", "variant", "phase", "GIA", "OGIA", "GRA", "GIAxGRA")
OUTPUT_ROOT_ENV = "BGITEACH_OUTPUT_ROOT"
AMBIGUITY_SAMPLES = 500


class ResultsExistError(RuntimeError):
    pass


@dataclass
class SeedOutcome:
    seed: int
    curve: list[dict]
    metrics: dict
    teacher: dict
    learner: dict
    wall_clock: float
    extras: dict = field(default_factory=dict)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "results"))


def result_dir(config: ExperimentConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return output_root() / f"{config.name}-{config.config_hash()[:12]}"


def train_teacher(config: ExperimentConfig, seed: int) -> tuple[dict, list[dict], dict]:
    """Phase 1 for one seed; returns (snapshot, curve rows, extras)."""
    env = make_env(config.env, config.hyper.horizon)
    params = replace(config.hyper.train_params(), eval_every=config.hyper.teacher_eval_every)
    role = AgentRole.teacher(config.teacher, config.hyper.bonus)
    res = phase1_pretrain(env, role, params, config.teacher_epochs, seed, config.variant)
    extras = {"teacher_bonuses": res.bonuses, "teacher_goals": len(res.goals)}
    if config.env == "blockrel":
        amb = ambiguity_score(res.policy, env, build_ambiguous_situations(env), AMBIGUITY_SAMPLES,
                              np.random.default_rng([seed, 6]), params.demo_attempts)
        extras["ambiguity"] = amb.value
    return policy_to_dict(res.policy, env.name), res.curve, extras


def run_seed(config: ExperimentConfig, seed: int, teacher: Optional[tuple] = None) -> SeedOutcome:
    start = time.perf_counter()
    if teacher is None:
        teacher = train_teacher(config, seed)
    snapshot, teacher_curve, extras = teacher
    env = make_env(config.env, config.hyper.horizon)
    teacher_policy, _ = policy_from_dict(snapshot)
    params = config.hyper.train_params()
    role = AgentRole.learner(config.learner, config.hyper.bonus)
    res = phase2_train(env, teacher_policy, role, config.demo_budget, params, config.epochs, seed, config.variant)
    rng = np.random.default_rng([seed, 4])
    test = teacher_test_set(env, teacher_policy, env.goal_space(), params.eval_demos, rng, params.demo_attempts)
    report = evaluate(res.policy, teacher_policy, env, seed, params.eval_demos, params.eval_rollouts, rng, test)
    extras = dict(extras, accepted_demos=res.accepted_demos, offered_demos=res.offered_demos,
                  learner_bonuses=res.bonuses, learner_goals=len(res.goals))
    if config.demo_budget > 0 and all(res.demo_pool.get(g) for g in env.goal_space()):
        extras["classifier_gia"] = fit_on_pool(res.demo_pool, env.goal_space()).accuracy(test)
    return SeedOutcome(seed, teacher_curve + res.curve, report.to_dict(), snapshot,
                       policy_to_dict(res.policy, env.name), time.perf_counter() - start, extras)


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def curves_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    buf.write(CURVES_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for r in rows:
        w.writerow([_format_value(r[k]) for k in CURVE_FIELDS])
    return buf.getvalue()


def read_curves(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CURVES_SCHEMA:
        raise ValueError(f"{path}: missing or unknown schema header")
    return [{k: _CURVE_TYPES[k](r[k]) for k in CURVE_FIELDS} for r in csv.DictReader(lines[1:])]


_CURVE_TYPES = dict(epoch=int, seed=int, variant=str, phase=int, GIA=float, OGIA=float, GRA=float, GIAxGRA=float)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def aggregate(metrics: Sequence[dict]) -> dict:
    out = {}
    for key in ("gia", "ogia", "gra", "gia_x_gra"):
        m, s = _mean_std([d[key] for d in metrics])
        out[key] = {"mean": m, "std": s}
    return out


def write_results(config: ExperimentConfig, outcomes: Sequence[SeedOutcome], out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    outcomes = sorted(outcomes, key=lambda o: o.seed)
    (out / "curves.csv").write_text(curves_csv(r for o in outcomes for r in o.curve))
    seeds = []
    for o in outcomes:
        seed_dir = out / f"seed_{o.seed}"
        seed_dir.mkdir(exist_ok=True)
        (seed_dir / "teacher.snapshot").write_text(json.dumps(o.teacher))
        (seed_dir / "learner.snapshot").write_text(json.dumps(o.learner))
        seeds.append({
            "seed": o.seed,
            "metrics": o.metrics,
            "extras": o.extras,
            "wall_clock": o.wall_clock,
            "artifacts": [f"seed_{o.seed}/teacher.snapshot", f"seed_{o.seed}/learner.snapshot"],
        })
    summary = {
        "config_hash": config.config_hash(),
        "config": config.model_dump(),
        "seeds": seeds,
        "aggregate": aggregate([s["metrics"] for s in seeds]),
    }
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _prepare(out: Path, force: bool) -> None:
    if (out / "metrics.json").exists() or (out / "curves.csv").exists():
        if not force:
            raise ResultsExistError(f"{out} already holds results; pass --force to overwrite")
        shutil.rmtree(out)


def _pool(workers: int):
    return ProcessPoolExecutor(max_workers=workers) if workers > 1 else None


def _map(pool, fn, *iterables):
    return list(pool.map(fn, *iterables)) if pool else list(map(fn, *iterables))


def run_experiment(config: ExperimentConfig, force: bool = False, workers: int = 1,
                   out: Optional[Path] = None) -> dict:
    out = Path(out) if out else result_dir(config)
    _prepare(out, force)
    pool = _pool(min(workers, len(config.seeds)))
    try:
        outcomes = _map(pool, run_seed, itertools.repeat(config), config.seeds)
    finally:
        if pool:
            pool.shutdown()
    summary = write_results(config, outcomes, out)
    summary["output_dir"] = str(out)
    return summary


# --------------------------------------------------------------------------
# Matrix
# --------------------------------------------------------------------------

MATRIX_AXES = ("teacher", "learner", "demo_budget", "variant")


def expand_axes(template: ExperimentConfig, axes: dict) -> list[ExperimentConfig]:
    unknown = set(axes) - set(MATRIX_AXES)
    if unknown:
        raise ValueError(f"unknown matrix axes {sorted(unknown)}")
    names = [a for a in MATRIX_AXES if a in axes]
    cells = []
    for values in itertools.product(*(axes[a] for a in names)):
        changes = dict(zip(names, values))
        label = "_".join(f"{v}" for v in values) or "cell"
        cells.append(template.with_updates(name=f"{template.name}-{label}", output_dir=None, **changes))
    return cells


def _teacher_key(config: ExperimentConfig) -> str:
    keep = config.model_dump(include={"env", "teacher", "teacher_epochs", "variant", "hyper"})
    return json.dumps(keep, sort_keys=True)


def _safe_run_seed(config, seed, teacher):
    try:
        return run_seed(config, seed, teacher)
    except Exception as exc:  # recorded per cell, the matrix keeps going
        return f"{type(exc).__name__}: {exc}"


def _safe_train_teacher(config, seed):
    try:
        return train_teacher(config, seed)
    except Exception as exc:
        return f"{type(exc).__name__}: {exc}"


def run_matrix(template: ExperimentConfig, axes: dict, root: Path, force: bool = False, workers: int = 1) -> list[dict]:
    """Run every cell of the grid; phase-1 teachers are shared between cells that agree on them."""
    cells = expand_axes(template, axes)
    teacher_jobs = {}
    for cell in cells:
        for seed in cell.seeds:
            teacher_jobs.setdefault((_teacher_key(cell), seed), cell)
    pool = _pool(workers)
    try:
        keys = list(teacher_jobs)
        teachers = dict(zip(keys, _map(pool, _safe_train_teacher, [teacher_jobs[k] for k in keys],
                                       [k[1] for k in keys])))
        jobs = [(cell, seed) for cell in cells for seed in cell.seeds]
        results = _map(pool, _safe_run_seed, [c for c, _ in jobs], [s for _, s in jobs],
                       [teachers[(_teacher_key(c), s)] for c, s in jobs])
    finally:
        if pool:
            pool.shutdown()
    rows = []
    by_cell: dict[int, list] = {}
    for (cell, seed), res in zip(jobs, results):
        by_cell.setdefault(id(cell), []).append((seed, res))
    for cell in cells:
        got = by_cell[id(cell)]
        failures = {s: r for s, r in got if isinstance(r, str)}
        ok = [r for _, r in got if not isinstance(r, str)]
        out = root / cell.name
        row = {a: getattr(cell, a) for a in MATRIX_AXES}
        row.update(env=cell.env, output_dir=str(out), failures=failures)
        if ok:
            _prepare(out, force)
            summary = write_results(cell, ok, out)
            row.update(summary["aggregate"])
            clf = [o.extras["classifier_gia"] for o in ok if "classifier_gia" in o.extras]
            if clf:
                row["classifier_gia"] = dict(zip(("mean", "std"), _mean_std(clf)))
        rows.append(row)
    write_table(rows, root)
    write_comparison(rows, root)
    return rows


def _cell(stat: Optional[dict], pct: bool = True) -> str:
    if not stat:
        return "FAILED"
    scale = 100 if pct else 1
    fmt = "{:.1f} ± {:.1f}" if pct else "{:.2f} ± {:.2f}"
    return fmt.format(stat["mean"] * scale, stat["std"] * scale)


def format_table(rows: Sequence[dict]) -> str:
    head = f"{'env':9s} {'teacher':12s} {'learner':10s} {'budget':>6s} {'variant':8s} {'GIA %':>13s} {'GRA %':>13s} {'GIAxGRA':>13s}"
    lines = [head, "-" * len(head)]
    for r in rows:
        flag = " (partial)" if r.get("failures") and r.get("gia") else ""
        lines.append(f"{r['env']:9s} {r['teacher']:12s} {r['learner']:10s} {r['demo_budget']:>6d} {r['variant']:8s} "
                     f"{_cell(r.get('gia')):>13s} {_cell(r.get('gra')):>13s} {_cell(r.get('gia_x_gra'), False):>13s}{flag}")
    return "\n".join(lines)


def write_table(rows: Sequence[dict], root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / "table.txt").write_text(format_table(rows) + "\n")
    buf = io.StringIO()
    buf.write(TABLE_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["env", "teacher", "learner", "demo_budget", "variant", "metric", "mean", "std", "status"])
    for r in rows:
        for key in ("gia", "ogia", "gra", "gia_x_gra"):
            stat = r.get(key)
            status = "failed" if not stat else ("partial" if r.get("failures") else "ok")
            w.writerow([r["env"], r["teacher"], r["learner"], r["demo_budget"], r["variant"], key,
                        repr(stat["mean"]) if stat else "", repr(stat["std"]) if stat else "", status])
    (root / "table.csv").write_text(buf.getvalue())


COMPARISON_SCHEMA = "# schema: bgiteach.comparison/1"


def write_comparison(rows: Sequence[dict], root: Path) -> None:
    """BGI versus classifier GIA per (demo_budget, teacher), learner and variant as in the cell."""
    buf = io.StringIO()
    buf.write(COMPARISON_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["demo_budget", "method", "teacher", "learner", "variant", "GIA", "GIA_std"])
    for r in rows:
        for method, key in (("BGI", "gia"), ("classifier", "classifier_gia")):
            if r.get(key):
                w.writerow([r["demo_budget"], method, r["teacher"], r["learner"], r["variant"],
                            repr(r[key]["mean"]), repr(r[key]["std"])])
    (root / "comparison.csv").write_text(buf.getvalue())


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------

@dataclass
class Report:
    text: str
    problems: list[str]
    n_results: int


def build_report(root: Path, tolerance: float = 1e-9) -> Report:
    root = Path(root)
    paths = sorted(root.rglob("metrics.json")) if root.exists() else []
    if not paths:
        return Report("no results", [], 0)
    groups: dict[str, list[dict]] = {}
    problems = []
    for path in paths:
        try:
            data = json.loads(path.read_text())
            cfg = data["config"]
            seeds = data["seeds"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            problems.append(f"{path}: unreadable results ({exc})")
            continue
        for s in seeds:
            m = s["metrics"]
            if not math.isclose(m["gia"] * m["gra"], m["gia_x_gra"], rel_tol=0, abs_tol=tolerance):
                problems.append(f"{path}: seed {s['seed']} GIAxGRA {m['gia_x_gra']} != GIA*GRA {m['gia'] * m['gra']}")
        curves = path.parent / "curves.csv"
        if not curves.exists():
            problems.append(f"{curves}: missing")
        else:
            try:
                read_curves(curves)
            except (ValueError, KeyError) as exc:
                problems.append(f"{curves}: corrupt ({exc})")
        metrics = [s["metrics"] for s in seeds]
        row = {a: cfg[a] for a in MATRIX_AXES}
        row.update(env=cfg["env"], **aggregate(metrics))
        row["gia_x_gra"] = {"mean": float(np.mean([m["gia"] * m["gra"] for m in metrics])),
                            "std": float(np.std([m["gia"] * m["gra"] for m in metrics]))}
        groups.setdefault(cfg["env"], []).append(row)
    parts = []
    for env in sorted(groups):
        parts.append(f"[{env}]")
        parts.append(format_table(sorted(groups[env], key=lambda r: tuple(str(r[a]) for a in MATRIX_AXES))))
        parts.append("")
    if problems:
        parts.append("problems:")
        parts.extend(f"  {p}" for p in problems)
    return Report("\n".join(parts).rstrip(), problems, len(paths))
