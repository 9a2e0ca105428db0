"""Experiment grid execution with crash-safe incremental results.

Each (method, samples, fakes, seed) cell runs independently; completed rows
are appended to results.csv as they finish, so an interrupted grid resumes by
skipping the (config hash, cell) pairs already on disk. Timings go to a
companion timings.csv so the scientific rows stay byte-identical across
reruns.
"""

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from ..nets import TrainConfig, save_dense
from ..problems import BudgetConfig, InventoryConfig, PortfolioConfig, make_problem
from ..sampling import cache_key, load_triples, save_triples
from ..train import (default_hidden_width, evaluate, train_dfl_portfolio, train_pfl,
                     train_with_surrogate)
from .config import ExperimentConfig

RESULTS_FILE = "results.csv"
TIMINGS_FILE = "timings.csv"

RESULT_COLUMNS = ["config_hash", "problem", "method", "samples", "fakes", "seed",
                  "status", "normalized_regret", "raw_regret", "prediction_loss", "error"]
TIMING_COLUMNS = ["config_hash", "problem", "method", "samples", "fakes", "seed",
                  "wall_time", "t_generate", "t_train", "t_eval"]


@dataclass
class RunResult:
    config_hash: str
    problem: str
    method: str
    samples: int
    fakes: int
    seed: int
    status: str = "ok"
    normalized_regret: float = float("nan")
    raw_regret: float = float("nan")
    prediction_loss: float = float("nan")
    error: str = ""
    wall_time: float = 0.0
    stage_times: dict = field(default_factory=dict)

    def key(self):
        return (self.config_hash, self.method, self.samples, self.fakes, self.seed)

    def result_row(self):
        return [self.config_hash, self.problem, self.method, str(self.samples),
                str(self.fakes), str(self.seed), self.status,
                repr(self.normalized_regret), repr(self.raw_regret),
                repr(self.prediction_loss), self.error.replace("\n", " ")]

    def timing_row(self):
        return [self.config_hash, self.problem, self.method, str(self.samples),
                str(self.fakes), str(self.seed), f"{self.wall_time:.3f}",
                f"{self.stage_times.get('generate', 0.0):.3f}",
                f"{self.stage_times.get('train', 0.0):.3f}",
                f"{self.stage_times.get('eval', 0.0):.3f}"]


def grid_cells(cfg: ExperimentConfig):
    """Full cross product; methods that ignore the sample count still run per cell."""
    fakes_list = cfg.fakes if (cfg.problem == "budget" and cfg.fakes is not None) else [0]
    cells = []
    for method in cfg.methods:
        for k in cfg.samples:
            for fakes in fakes_list:
                for i in range(cfg.seeds):
                    cells.append((method, k, fakes, cfg.base_seed + i))
    return cells


def build_problem(cfg: ExperimentConfig, fakes: int):
    name = cfg.problem
    if name == "inventory":
        kwargs = {}
        if cfg.n_train:
            kwargs.update(n_train=cfg.n_train)
        if cfg.n_val:
            kwargs.update(n_val=cfg.n_val)
        if cfg.n_test:
            kwargs.update(n_test=cfg.n_test)
        return make_problem(name, InventoryConfig(**kwargs))
    if name == "budget":
        kwargs = {"fakes": fakes}
        if cfg.n_train:
            kwargs.update(n_train=cfg.n_train)
        if cfg.n_val:
            kwargs.update(n_val=cfg.n_val)
        if cfg.n_test:
            kwargs.update(n_test=cfg.n_test)
        return make_problem(name, BudgetConfig(**kwargs))
    return make_problem(name, PortfolioConfig())


DEFAULT_SAMPLER_LR = {"inventory": 0.5, "budget": 0.5, "portfolio": 0.1}


def run_single(cfg: ExperimentConfig, method: str, k: int, fakes: int, seed: int) -> RunResult:
    """One (method, samples, fakes, seed) cell; failures are captured, not raised."""
    result = RunResult(config_hash=cfg.config_hash(), problem=cfg.problem, method=method,
                       samples=k, fakes=fakes, seed=seed)
    t_start = time.time()
    try:
        data_seed = cfg.base_seed if cfg.reseed == "model-only" else seed
        problem = build_problem(cfg, fakes)
        t0 = time.time()
        dataset = problem.generate(data_seed)
        result.stage_times["generate"] = time.time() - t0
        rng = np.random.default_rng(seed)
        hidden = cfg.hidden_width or None
        train_cfg = TrainConfig(learning_rate=cfg.predictive_lr, epochs=cfg.predictive_epochs,
                                optimizer=cfg.predictive_optimizer, seed=seed)
        t0 = time.time()
        if method == "pfl":
            net, _ = train_pfl(problem, dataset, train_cfg, hidden_width=hidden,
                               patience=cfg.patience, rng=rng)
        elif method == "dfl":
            net, _ = train_dfl_portfolio(problem, dataset, train_cfg, hidden_width=hidden,
                                         patience=cfg.patience, eval_every=cfg.eval_every,
                                         rng=rng)
        else:
            sampler = "gaussian" if method == "surrogate_gaussian" else "mbs"
            sampler_lr = cfg.sampler_lr or DEFAULT_SAMPLER_LR[cfg.problem]
            triples = _cached_triples(cfg, problem, dataset, method, k, fakes, seed, sampler,
                                      sampler_lr, rng)
            net, _ = train_with_surrogate(
                problem, dataset, k, sampler=sampler, sampler_lr=sampler_lr,
                sampler_optimizer=cfg.sampler_optimizer, sampler_width=hidden,
                gaussian_sigma=cfg.gaussian_sigma,
                surrogate_widths=(cfg.surrogate_width,) * cfg.surrogate_layers,
                fit_config=TrainConfig(learning_rate=cfg.surrogate_lr, epochs=cfg.surrogate_epochs),
                config=train_cfg, triples=triples, hidden_width=hidden,
                patience=cfg.patience, eval_every=cfg.eval_every, rng=rng)
        result.stage_times["train"] = time.time() - t0
        t0 = time.time()
        res = evaluate(net, problem, dataset.test)
        result.stage_times["eval"] = time.time() - t0
        result.normalized_regret = res.normalized_regret
        result.raw_regret = res.raw_regret
        result.prediction_loss = res.prediction_loss
        if not np.isfinite(res.normalized_regret):
            raise FloatingPointError(f"non-finite normalized regret {res.normalized_regret}")
        if cfg.save_models:
            model_dir = os.path.join(cfg.out, "models")
            os.makedirs(model_dir, exist_ok=True)
            save_dense(net, os.path.join(
                model_dir, f"{cfg.problem}_{method}_k{k}_f{fakes}_s{seed}.txt"))
    except Exception as exc:  # per-run failures never abort the grid
        result.status = "error"
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_time = time.time() - t_start
    return result


def _cached_triples(cfg, problem, dataset, method, k, fakes, seed, sampler, sampler_lr, rng):
    """Load triples from the sample cache when enabled; None means generate fresh."""
    if not cfg.cache_samples:
        return None
    key = cache_key(cfg.problem, method, k, fakes, seed, sampler, sampler_lr,
                    cfg.sampler_optimizer, cfg.gaussian_sigma, cfg.hidden_width,
                    cfg.n_train, cfg.reseed)
    path = os.path.join(cfg.out, "sample_cache", f"{key}.csv")
    if os.path.exists(path):
        return load_triples(path)
    from ..sampling import gaussian_generate, mbs_generate
    if sampler == "mbs":
        triples = mbs_generate(problem, dataset.train, k,
                               hidden_width=cfg.hidden_width or default_hidden_width(problem),
                               learning_rate=sampler_lr, optimizer=cfg.sampler_optimizer, rng=rng)
    else:
        triples = gaussian_generate(problem, dataset.train, k, sigma=cfg.gaussian_sigma, rng=rng)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_triples(path, triples)
    return triples


def _read_rows(path, columns):
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != columns:
            raise ValueError(f"{path}: unexpected header {header}")
        return [row for row in reader]


def _row_key(row):
    return (row[0], row[2], int(row[3]), int(row[4]), int(row[5]))


def _result_from_row(row):
    return RunResult(config_hash=row[0], problem=row[1], method=row[2], samples=int(row[3]),
                     fakes=int(row[4]), seed=int(row[5]), status=row[6],
                     normalized_regret=float(row[7]), raw_regret=float(row[8]),
                     prediction_loss=float(row[9]), error=row[10])


class _Appender:
    """Single-writer append channel so concurrent workers never interleave rows."""

    def __init__(self, path, columns):
        self.path = path
        new = not os.path.exists(path)
        self.fh = open(path, "a", newline="")
        self.writer = csv.writer(self.fh)
        if new:
            self.writer.writerow(columns)
            self.fh.flush()

    def append(self, row):
        self.writer.writerow(row)
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def close(self):
        self.fh.close()


def run_experiment(cfg: ExperimentConfig, echo=print):
    """Execute the grid; returns (all RunResults for this config, n_failures).

    Completed cells found in the results file are skipped, so re-invoking the
    same configuration after a crash finishes the remainder and yields a
    results file identical to an uninterrupted run.
    """
    echo(cfg.echo())
    os.makedirs(cfg.out, exist_ok=True)
    results_path = os.path.join(cfg.out, RESULTS_FILE)
    done_rows = [r for r in _read_rows(results_path, RESULT_COLUMNS)
                 if r[0] == cfg.config_hash()]
    done = {_row_key(r): _result_from_row(r) for r in done_rows}
    cells = grid_cells(cfg)
    pending = [c for c in cells
               if (cfg.config_hash(), c[0], c[1], c[2], c[3]) not in done]
    echo(f"grid: {len(cells)} cells, {len(done)} already complete, {len(pending)} to run")

    results_out = _Appender(results_path, RESULT_COLUMNS)
    timings_out = _Appender(os.path.join(cfg.out, TIMINGS_FILE), TIMING_COLUMNS)
    fresh = {}
    try:
        workers = cfg.workers or os.cpu_count() or 1
        if workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(run_single, cfg, *cell): cell for cell in pending}
                for fut in as_completed(futures):
                    result = fut.result()
                    fresh[result.key()] = result
                    results_out.append(result.result_row())
                    timings_out.append(result.timing_row())
                    echo(_progress_line(result))
        else:
            for cell in pending:
                result = run_single(cfg, *cell)
                fresh[result.key()] = result
                results_out.append(result.result_row())
                timings_out.append(result.timing_row())
                echo(_progress_line(result))
    finally:
        results_out.close()
        timings_out.close()

    ordered = []
    for cell in cells:
        key = (cfg.config_hash(), cell[0], cell[1], cell[2], cell[3])
        ordered.append(done.get(key) or fresh[key])
    failures = sum(1 for r in ordered if r.status != "ok")
    return ordered, failures


def _progress_line(result: RunResult):
    if result.status == "ok":
        return (f"  done {result.method} k={result.samples} fakes={result.fakes} "
                f"seed={result.seed}: regret={result.normalized_regret:.4f} "
                f"({result.wall_time:.1f}s)")
    return (f"  FAIL {result.method} k={result.samples} fakes={result.fakes} "
            f"seed={result.seed}: {result.error}")


@dataclass
class Summary:
    problem: str
    method: str
    samples: int
    fakes: int
    n: int
    mean: float
    sem: float


def summarize(results) -> list:
    """Per-setting mean and standard error (sample stddev over sqrt(n); 0 for n=1)."""
    groups = {}
    for r in results:
        if r.status != "ok":
            continue
        groups.setdefault((r.problem, r.method, r.samples, r.fakes), []).append(
            r.normalized_regret)
    if not groups:
        raise ValueError("no successful results to summarize")
    out = []
    for (problem, method, samples, fakes), vals in sorted(groups.items()):
        arr = np.asarray(vals)
        sem = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        out.append(Summary(problem=problem, method=method, samples=samples, fakes=fakes,
                           n=len(arr), mean=float(arr.mean()), sem=sem))
    return out
