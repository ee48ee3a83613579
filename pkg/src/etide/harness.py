"""Experiment runner: cells of (algorithm, function, run), records and tables.

Per-cell seeds come from a BLAKE2b hash of ``master_seed|algorithm|function|run``
so adding algorithms or functions never reshuffles existing cells, and the
results do not depend on how many worker processes execute them.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import benchfn
from .de import Budget, evolve_generation, initialize
from .eti import EtiState, EventLog, eti_generation_hook
from .stats import floor_error, summarize, wilcoxon_ranksum, win_tie_lose
from .variants import AlgorithmConfig, base_name, named_config, split_name

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    suite_seed: int = 1
    dim: int = 10
    algorithms: list[str] = field(default_factory=lambda: ["de-rand-1/plain", "de-rand-1/eti"])
    runs: int = 51
    max_fes: Optional[int] = None  # default dim * 10000
    record_stride: Optional[int] = None  # default max_fes // 200
    master_seed: int = 0
    functions: Optional[list[str]] = None  # default: whole suite
    alpha: float = 0.05
    log_events: bool = False
    out: Optional[str] = None

    def __post_init__(self):
        if self.max_fes is None:
            self.max_fes = self.dim * 10000
        if self.record_stride is None:
            self.record_stride = max(1, self.max_fes // 200)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        suite = d.pop("suite", {}) or {}
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "seed" in suite:
            d["suite_seed"] = suite["seed"]
        if "dim" in suite:
            d["dim"] = suite["dim"]
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["suite"] = {"seed": d.pop("suite_seed"), "dim": d.pop("dim")}
        return d

    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.dim < 2:
            raise ConfigError("suite dim must be >= 2")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        if not self.algorithms:
            raise ConfigError("no algorithms given")
        for name in self.algorithms:
            try:
                cfg = named_config(name)
            except KeyError as exc:
                raise ConfigError(str(exc)) from exc
            if self.max_fes < cfg.NP:
                raise ConfigError(f"max_fes={self.max_fes} is below NP={cfg.NP} of {name}")
        ids = [fn.id for fn in suite_for(self.suite_seed, self.dim)]
        for fid in self.functions or []:
            if fid not in ids:
                raise ConfigError(f"unknown function {fid!r}")

    def selected_functions(self) -> list[benchfn.ObjectiveFunction]:
        suite = suite_for(self.suite_seed, self.dim)
        if self.functions is None:
            return list(suite)
        by_id = {fn.id: fn for fn in suite}
        return [by_id[fid] for fid in self.functions]


@lru_cache(maxsize=8)
def suite_for(seed: int, dim: int) -> tuple[benchfn.ObjectiveFunction, ...]:
    return tuple(benchfn.make_suite(seed, dim))


def cell_seed(master_seed: int, algorithm: str, function_id: str, run: int) -> int:
    key = f"{master_seed}|{algorithm}|{function_id}|{run}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass
class RunRecord:
    algorithm: str
    function: str
    run: int
    seed: int
    curve: list  # [(fes, best error so far)]
    final_error: float
    fes_used: int
    max_fes: int
    generations: int
    fes_breakdown: dict  # init / generations / impulses
    events: dict  # impulse counts

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        d = json.loads(line)
        d["curve"] = [tuple(p) for p in d["curve"]]
        return cls(**d)


class BestSoFar:
    """Budget listener tracking the best error over every evaluation.

    Sampling starts at the first ``mark`` (end of initialisation); after
    that a curve point is taken whenever the evaluation count hits a
    multiple of ``stride``. ``mark`` also adds the final point.
    """

    def __init__(self, optimum: float, stride: int):
        self.optimum = optimum
        self.stride = stride
        self.best = np.inf
        self.best_x: Optional[np.ndarray] = None
        self.count = 0
        self.curve: list[tuple[int, float]] = []
        self.sampling = False

    def __call__(self, points: np.ndarray, values: np.ndarray) -> None:
        errors = np.maximum(values - self.optimum, 0.0)  # tiny negatives are rounding noise
        running = np.minimum.accumulate(np.concatenate([[self.best], errors]))[1:]
        start = self.count
        if self.sampling:
            # batch position k is evaluation number start + k + 1
            for k in range((-(start + 1)) % self.stride, len(errors), self.stride):
                self.curve.append((start + k + 1, float(running[k])))
        j = int(np.argmin(errors))
        if errors[j] < self.best:
            self.best = float(errors[j])
            self.best_x = points[j].copy()
        self.count += len(errors)

    def mark(self) -> None:
        self.sampling = True
        if not self.curve or self.curve[-1][0] != self.count:
            self.curve.append((self.count, float(self.best)))


def resolve_algorithm(algorithm) -> AlgorithmConfig:
    return algorithm if isinstance(algorithm, AlgorithmConfig) else named_config(algorithm)


def run_cell(algorithm, fn: benchfn.ObjectiveFunction, seed: int, max_fes: int,
             record_stride: Optional[int] = None, run: int = 0,
             event_stream=None) -> RunRecord:
    """One seeded optimisation run, initialisation to budget exhaustion."""
    cfg = resolve_algorithm(algorithm)
    if max_fes < cfg.NP:
        raise ConfigError(f"max_fes={max_fes} is below NP={cfg.NP}")
    stride = record_stride or max(1, max_fes // 200)
    rng = np.random.default_rng(seed)
    archive = BestSoFar(fn.optimum_value, stride)
    budget = Budget(max_fes, listeners=[archive])

    pop = initialize(fn, cfg.NP, rng, budget, cfg.strategy)
    archive.mark()
    init_fes = budget.used_fes
    params = cfg.params
    control = cfg.make_control()
    eti_on = cfg.ablation.enabled
    state = EtiState.start(pop, cfg.LN, cfg.UN, cfg.pr_base) if eti_on else None
    events = EventLog(keep=False, stream=event_stream)

    while not budget.exhausted:
        sel = evolve_generation(pop, fn, params, budget, rng, control)
        if eti_on:
            eti_generation_hook(pop, sel.up, state, fn, budget, rng, cfg.ablation, events,
                                cfg.destab_dm_mode)
    archive.mark()

    impulse_fes = state.impulse_fes if state else 0
    return RunRecord(
        algorithm=cfg.name,
        function=fn.id,
        run=run,
        seed=seed,
        curve=archive.curve,
        final_error=floor_error(archive.best),
        fes_used=budget.used_fes,
        max_fes=max_fes,
        generations=pop.generation,
        fes_breakdown={
            "init": init_fes,
            "generations": budget.used_fes - init_fes - impulse_fes,
            "impulses": impulse_fes,
        },
        events=dict(events.counts),
    )


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def _cell_task(task: tuple) -> tuple:
    suite_seed, dim, alg, fid, run, seed, max_fes, stride, event_path = task
    try:
        fn = next(f for f in suite_for(suite_seed, dim) if f.id == fid)
        if event_path:
            with open(event_path, "w") as stream:
                rec = run_cell(alg, fn, seed, max_fes, stride, run, stream)
        else:
            rec = run_cell(alg, fn, seed, max_fes, stride, run)
        return rec, None
    except Exception:  # recorded per cell, the experiment keeps going
        return None, {"algorithm": alg, "function": fid, "run": run, "seed": seed,
                      "error": traceback.format_exc()}


def _safe(name: str) -> str:
    return name.replace("/", "__")


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    failures: list[dict]
    summary_csv: str
    marks_csv: str
    wtl_csv: str


def iter_cells(config: ExperimentConfig, event_dir: Optional[Path] = None) -> Iterable[tuple]:
    for alg in config.algorithms:
        for fn in config.selected_functions():
            for run in range(config.runs):
                seed = cell_seed(config.master_seed, alg, fn.id, run)
                path = None
                if event_dir is not None:
                    path = str(event_dir / f"{_safe(alg)}__{fn.id}__{run}.jsonl")
                yield (config.suite_seed, config.dim, alg, fn.id, run, seed,
                       config.max_fes, config.record_stride, path)


def run_experiment(config: ExperimentConfig, jobs: int = 1, out: Optional[str] = None) -> ExperimentResult:
    config.validate()
    out = out or config.out
    out_dir = Path(out) if out else None
    event_dir = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if config.log_events:
            event_dir = out_dir / "events"
            event_dir.mkdir(exist_ok=True)
    tasks = list(iter_cells(config, event_dir))
    log.info("running %d cells on %d worker(s)", len(tasks), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_task, tasks, chunksize=1))
    else:
        results = [_cell_task(t) for t in tasks]

    records = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    result = build_tables(records, config.algorithms, [fn.id for fn in config.selected_functions()],
                          config.alpha)
    result.failures = failures
    if out_dir is not None:
        write_records(out_dir / "records", records, config.algorithms)
        write_tables(out_dir, result)
        with open(out_dir / "config.json", "w") as fh:
            resolved = config.to_dict()
            resolved["resolved_algorithms"] = [named_config(a).to_dict() for a in config.algorithms]
            json.dump(resolved, fh, indent=2)
        if failures:
            with open(out_dir / "failures.jsonl", "w") as fh:
                for f in failures:
                    fh.write(json.dumps(f) + "\n")
    return result


def write_records(record_dir: Path, records: Sequence[RunRecord], algorithms: Sequence[str]) -> None:
    record_dir.mkdir(parents=True, exist_ok=True)
    for alg in algorithms:
        with open(record_dir / f"{_safe(alg)}.jsonl", "w") as fh:
            for rec in records:
                if rec.algorithm == alg:
                    fh.write(rec.to_json() + "\n")


def load_records(record_dir) -> list[RunRecord]:
    records = []
    for path in sorted(Path(record_dir).glob("*.jsonl")):
        with open(path) as fh:
            records.extend(RunRecord.from_json(line) for line in fh if line.strip())
    return records


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def _errors_by_cell(records: Sequence[RunRecord]) -> dict:
    cells: dict = {}
    for rec in sorted(records, key=lambda r: (r.algorithm, r.function, r.run)):
        cells.setdefault((rec.algorithm, rec.function), []).append(rec.final_error)
    return cells


def build_tables(records: Sequence[RunRecord], algorithms: Sequence[str],
                 functions: Sequence[str], alpha: float = 0.05) -> ExperimentResult:
    """Summary, +/=/- marks of each variant against its plain base, and totals."""
    cells = _errors_by_cell(records)
    summary_rows = []
    for alg in algorithms:
        for fid in functions:
            errs = cells.get((alg, fid))
            if not errs:
                continue
            s = summarize(errs)
            summary_rows.append([alg, fid, _fmt(s.mean), _fmt(s.stddev), s.n])

    mark_rows, wtl_rows = [], []
    for variant in algorithms:
        base = base_name(variant)
        if variant == base or base not in algorithms:
            continue
        marks = []
        for fid in functions:
            a, b = cells.get((variant, fid)), cells.get((base, fid))
            if not a or not b or len(a) < 3 or len(b) < 3:
                continue
            m = wilcoxon_ranksum(a, b, alpha)
            marks.append(m)
            mark_rows.append([base, variant, fid, m.mark.value, _fmt(m.p_value)])
        w, t, l = win_tie_lose(marks)
        wtl_rows.append([base, variant, w, t, l])

    return ExperimentResult(
        records=list(records),
        failures=[],
        summary_csv=_csv(summary_rows, ["algorithm", "function", "mean_error", "std_error", "n"]),
        marks_csv=_csv(mark_rows, ["base", "variant", "function", "mark", "p_value"]),
        wtl_csv=_csv(wtl_rows, ["base", "variant", "win", "tie", "lose"]),
    )


def write_tables(out_dir: Path, result: ExperimentResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in (("summary.csv", result.summary_csv), ("marks.csv", result.marks_csv),
                       ("wtl.csv", result.wtl_csv)):
        with open(out_dir / name, "w", newline="") as fh:
            fh.write(text)


def compare_records(out_dir, dest=None, alpha: float = 0.05) -> ExperimentResult:
    """Rebuild the tables of a finished experiment from its stored records."""
    out_dir = Path(out_dir)
    records = load_records(out_dir / "records")
    if not records:
        raise FileNotFoundError(f"no records under {out_dir / 'records'}")
    algorithms, functions = _order_from(out_dir, records)
    cfg_path = out_dir / "config.json"
    if cfg_path.exists():
        with open(cfg_path) as fh:
            alpha = json.load(fh).get("alpha", alpha)
    result = build_tables(records, algorithms, functions, alpha)
    write_tables(Path(dest) if dest else out_dir, result)
    return result


def _order_from(out_dir: Path, records: Sequence[RunRecord]) -> tuple[list[str], list[str]]:
    cfg_path = out_dir / "config.json"
    if cfg_path.exists():
        with open(cfg_path) as fh:
            cfg = ExperimentConfig.from_dict(
                {k: v for k, v in json.load(fh).items() if k != "resolved_algorithms"}
            )
        return list(cfg.algorithms), [fn.id for fn in cfg.selected_functions()]
    algorithms = list(dict.fromkeys(r.algorithm for r in records))
    functions = list(dict.fromkeys(r.function for r in records))
    return algorithms, functions
