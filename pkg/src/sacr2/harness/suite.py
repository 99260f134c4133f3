"""Multi-seed execution, per-seed CSVs and the aggregate learning curves."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..sac import METRIC_COLUMNS, run_training
from . import config as cfgio
from .config import ExperimentConfig

log = logging.getLogger(__name__)

# appended after the required columns: share of demo transitions in the store
EXTRA_COLUMNS = ("buffer_demo_ratio",)
CSV_COLUMNS = METRIC_COLUMNS + EXTRA_COLUMNS
SUCCESS_LEVEL = 0.90
COLLAPSE_LEVEL = 0.50
STEP_GRID = 1000
DONE_MARKER = "complete.json"


@dataclass
class CurveSummary:
    name: str
    episodes: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_seeds: int
    seeds: list
    episodes_to_90: list  # None where the seed never got there
    final_rolling: list
    collapsed: list
    step_grid: np.ndarray = field(default=None)
    step_mean: np.ndarray = field(default=None)
    step_stderr: np.ndarray = field(default=None)
    demo_batch_fraction: list = field(default_factory=list)

    @property
    def mean_episodes_to_90(self) -> float:
        """Seed mean; infinite if any seed never reached the level."""
        vals = [math.inf if e is None else e for e in self.episodes_to_90]
        return float(np.mean(vals))

    @property
    def n_reached(self) -> int:
        return sum(e is not None for e in self.episodes_to_90)


@dataclass
class SuiteResult:
    summary: CurveSummary | None
    directory: str
    completed: list
    failed: dict

    @property
    def complete(self) -> bool:
        return not self.failed and self.summary is not None and len(self.completed) == self.summary.n_seeds


# -- per-seed runs ------------------------------------------------------------

def write_metrics_csv(rows, path) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in CSV_COLUMNS])
    os.replace(tmp, path)


def read_metrics_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {c: np.array([]) for c in CSV_COLUMNS}
    return {c: np.array([float(r[c]) for r in rows]) for c in rows[0].keys()}


def seed_dir(suite_dir: str, seed: int) -> str:
    return os.path.join(suite_dir, f"seed_{seed}")


def run_seed(config: ExperimentConfig, seed: int, suite_dir: str) -> dict:
    """Run one seed to completion and write its CSV, checkpoint and marker."""
    out = seed_dir(suite_dir, seed)
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    latest = {}

    def on_episode(row, nets, store):
        row["buffer_demo_ratio"] = store.demo_ratio
        latest["nets"] = nets

    metrics = run_training(config.env, config.expert, config.sac, seed, config.max_env_steps, on_episode)
    rows = metrics.rows
    write_metrics_csv(rows, os.path.join(out, "metrics.csv"))
    if "nets" in latest:
        nn.save_checkpoint(os.path.join(out, "final.ckpt"), latest["nets"].named_params())
    info = {"seed": seed, "episodes": len(rows), "seconds": round(time.time() - t0, 1)}
    with open(os.path.join(out, DONE_MARKER), "w") as fh:
        json.dump(info, fh, sort_keys=True)
    return info


def _run_seed_safe(args):
    config, seed, suite_dir = args
    try:
        return seed, run_seed(config, seed, suite_dir), None
    except Exception:  # a crashed seed must not take the suite down
        err = traceback.format_exc()
        with open(os.path.join(seed_dir(suite_dir, seed), "error.txt"), "w") as fh:
            fh.write(err)
        return seed, None, err.strip().splitlines()[-1]


def seed_complete(suite_dir: str, seed: int) -> bool:
    d = seed_dir(suite_dir, seed)
    return os.path.exists(os.path.join(d, DONE_MARKER)) and os.path.exists(os.path.join(d, "metrics.csv"))


def run_suite(config: ExperimentConfig, parallelism: int = 1, suite_dir: str | None = None) -> SuiteResult:
    """Run every seed not already completed, then aggregate.

    Seeds are ``base_seed + i``. A seed counts as done once its marker file
    exists, so an interrupted suite resumes at seed granularity.
    """
    suite_dir = suite_dir or config.suite_dir()
    os.makedirs(suite_dir, exist_ok=True)
    cfgio.save(config, os.path.join(suite_dir, "config.ini"))
    todo = [s for s in config.seeds() if not seed_complete(suite_dir, s)]
    for s in config.seeds():
        if s not in todo:
            log.info("%s: seed %d already complete, skipping", config.name, s)
    failed = {}
    jobs = [(config, s, suite_dir) for s in todo]
    for s in todo:
        os.makedirs(seed_dir(suite_dir, s), exist_ok=True)
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_seed_safe, jobs))
    else:
        results = [_run_seed_safe(j) for j in jobs]
    for seed, _, err in results:
        if err is not None:
            failed[seed] = err
            log.error("%s: seed %d failed: %s", config.name, seed, err)
    completed = [s for s in config.seeds() if seed_complete(suite_dir, s)]
    summary = None
    if completed:
        per_seed = {s: read_metrics_csv(os.path.join(seed_dir(suite_dir, s), "metrics.csv")) for s in completed}
        summary = aggregate(config.name, per_seed, window=config.sac.rolling_window)
        write_aggregate(summary, per_seed, suite_dir)
    status = {
        "name": config.name,
        "complete": not failed and len(completed) == config.n_seeds,
        "completed_seeds": completed,
        "failed_seeds": {str(k): v for k, v in failed.items()},
    }
    if summary is not None:
        status.update(summary_dict(summary))
    with open(os.path.join(suite_dir, "summary.json"), "w") as fh:
        json.dump(status, fh, indent=2, sort_keys=True)
    return SuiteResult(summary, suite_dir, completed, failed)


# -- aggregation --------------------------------------------------------------

def rolling_success(success, window: int = 100) -> np.ndarray:
    """Mean of the last min(k, window) flags at each episode k (1-based count)."""
    s = np.asarray(success, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(s)])
    k = np.arange(1, len(s) + 1)
    lo = np.maximum(k - window, 0)
    return (c[k] - c[lo]) / (k - lo)


def episodes_to_level(rolling, level=SUCCESS_LEVEL, window: int = 100):
    """First episode index with a full window whose rolling success is >= level."""
    r = np.asarray(rolling)
    hits = np.flatnonzero(r[window - 1 :] >= level - 1e-12)
    return None if hits.size == 0 else int(hits[0] + window - 1)


def collapsed_after_convergence(rolling, window: int = 100) -> bool:
    first = episodes_to_level(rolling, SUCCESS_LEVEL, window)
    if first is None:
        return False
    return bool(np.any(np.asarray(rolling)[first:] < COLLAPSE_LEVEL))


def _stderr(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    if n < 2:
        return np.zeros(values.shape[1:])
    return values.std(axis=0, ddof=1) / math.sqrt(n)


def _on_step_grid(env_steps, rolling, grid):
    # rolling success of the last episode finished at or before each grid point
    idx = np.searchsorted(env_steps, grid, side="right") - 1
    return np.where(idx >= 0, rolling[np.maximum(idx, 0)], 0.0)


def aggregate(name: str, per_seed: dict, window: int = 100) -> CurveSummary:
    seeds = sorted(per_seed)
    rolls = {s: rolling_success(per_seed[s]["success"], window) for s in seeds}
    n_ep = min(len(r) for r in rolls.values())
    mat = np.stack([rolls[s][:n_ep] for s in seeds])
    max_steps = min(per_seed[s]["env_steps"][-1] for s in seeds) if n_ep else 0
    grid = np.arange(STEP_GRID, int(max_steps) + 1, STEP_GRID)
    step_mat = np.stack([_on_step_grid(per_seed[s]["env_steps"], rolls[s], grid) for s in seeds]) if n_ep else None
    dbf = []
    for s in seeds:
        d = per_seed[s]
        ratio = d.get("buffer_demo_ratio")
        frac = d["demo_batch_fraction"]
        if ratio is not None and len(ratio):
            # steady state: once the buffer has come down to the 10% demo share
            steady = np.flatnonzero(ratio <= 0.10 + 1e-3)
            frac = frac[steady[0]:] if steady.size else frac[:0]
        dbf.append(float(np.mean(frac)) if len(frac) else float("nan"))
    return CurveSummary(
        name=name,
        episodes=np.arange(n_ep),
        mean=mat.mean(axis=0),
        stderr=_stderr(mat),
        n_seeds=len(seeds),
        seeds=seeds,
        episodes_to_90=[episodes_to_level(rolls[s], SUCCESS_LEVEL, window) for s in seeds],
        final_rolling=[float(rolls[s][-1]) if len(rolls[s]) else 0.0 for s in seeds],
        collapsed=[collapsed_after_convergence(rolls[s], window) for s in seeds],
        step_grid=grid,
        step_mean=step_mat.mean(axis=0) if step_mat is not None else np.array([]),
        step_stderr=_stderr(step_mat) if step_mat is not None else np.array([]),
        demo_batch_fraction=dbf,
    )


def summary_dict(s: CurveSummary) -> dict:
    return {
        "n_seeds": s.n_seeds,
        "seeds": s.seeds,
        "episodes_to_90": s.episodes_to_90,
        "mean_episodes_to_90": None if math.isinf(s.mean_episodes_to_90) else s.mean_episodes_to_90,
        "n_reached_90": s.n_reached,
        "final_rolling": s.final_rolling,
        "collapsed": s.collapsed,
        "steady_demo_batch_fraction": s.demo_batch_fraction,
    }


def write_aggregate(summary: CurveSummary, per_seed: dict, suite_dir: str) -> None:
    seeds = summary.seeds
    rolls = {s: rolling_success(per_seed[s]["success"]) for s in seeds}
    with open(os.path.join(suite_dir, "aggregate.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean_rolling_success", "stderr"] + [f"seed_{s}" for s in seeds])
        for i in summary.episodes:
            w.writerow([int(i), repr(float(summary.mean[i])), repr(float(summary.stderr[i]))]
                       + [repr(float(rolls[s][i])) for s in seeds])
    with open(os.path.join(suite_dir, "aggregate_steps.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env_steps", "mean_rolling_success", "stderr"])
        for g, m, e in zip(summary.step_grid, summary.step_mean, summary.step_stderr):
            w.writerow([int(g), repr(float(m)), repr(float(e))])


def load_summary(suite_dir: str, window: int = 100) -> CurveSummary:
    """Rebuild a suite's summary purely from its per-seed CSVs."""
    per_seed = {}
    for entry in sorted(os.listdir(suite_dir)):
        if entry.startswith("seed_") and seed_complete(suite_dir, int(entry[5:])):
            per_seed[int(entry[5:])] = read_metrics_csv(os.path.join(suite_dir, entry, "metrics.csv"))
    if not per_seed:
        raise FileNotFoundError(f"no completed seeds under {suite_dir}")
    return aggregate(os.path.basename(os.path.normpath(suite_dir)), per_seed, window)
