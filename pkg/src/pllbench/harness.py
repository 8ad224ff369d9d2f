"""Random-search experiment protocol: config sampling, training runs, sweeps, aggregation and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .algorithms import ALGORITHMS, AlgorithmSpec, loss_and_grad, make_initial_state, update_state
from .core import PartialDataset, SplitSpec, fingerprint, load_dataset, split
from .nn import AdamState, NonFiniteError, adam_step, backward, forward, init_params, softmax, HIDDEN
from .selection import (CheckpointRecord, Criterion, SelectionError, approximated_accuracy,
                        covering_rate, oracle_accuracy, select_config)

log = logging.getLogger(__name__)

EVAL_PERIOD = 1000
LR_RANGE = (-4.5, -2.5)
BATCH_EXP_RANGE = (5, 8)
WD_RANGE = (-6.0, -3.0)


def default_iterations(n_examples: int) -> int:
    """10k iterations up to 5,000 examples, 20k beyond."""
    return 10_000 if n_examples <= 5000 else 20_000


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    algorithm: AlgorithmSpec
    split: SplitSpec = field(default_factory=SplitSpec)
    lr: float = 1e-3
    batch_size: int = 128
    weight_decay: float = 1e-5
    total_iterations: int = 10_000
    eval_period: int = EVAL_PERIOD
    seed: int = 0
    hidden: int = HIDDEN

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.weight_decay < 0:
            raise ValueError("lr and batch_size must be positive, weight_decay non-negative")
        if self.eval_period < 1 or self.total_iterations < self.eval_period:
            raise ValueError("total_iterations must cover at least one evaluation period")
        if self.total_iterations % self.eval_period:
            raise ValueError("total_iterations must be a multiple of eval_period")

    def to_json(self) -> dict:
        sp = self.split
        return {
            "dataset": self.dataset,
            "algorithm": self.algorithm.to_json(),
            "split": {"train": sp.train_fraction, "val": sp.val_fraction, "test": sp.test_fraction,
                      "seed": sp.seed},
            "lr": self.lr, "batch_size": self.batch_size, "weight_decay": self.weight_decay,
            "total_iterations": self.total_iterations, "eval_period": self.eval_period,
            "seed": self.seed, "hidden": self.hidden,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        sp = obj["split"]
        alg = obj["algorithm"]
        return cls(
            dataset=obj["dataset"],
            algorithm=AlgorithmSpec(alg["id"], dict(alg.get("hparams", {}))),
            split=SplitSpec(sp["train"], sp["val"], sp["test"], int(sp["seed"])),
            lr=float(obj["lr"]), batch_size=int(obj["batch_size"]),
            weight_decay=float(obj["weight_decay"]), total_iterations=int(obj["total_iterations"]),
            eval_period=int(obj["eval_period"]), seed=int(obj["seed"]),
            hidden=int(obj.get("hidden", HIDDEN)),
        )


@dataclass
class ExperimentRecord:
    config: RunConfig
    checkpoints: list
    wall_clock: float = 0.0
    engine_version: str = __version__
    fingerprint: str = ""
    status: str = "ok"
    error: Optional[str] = None
    split_index: int = 0
    config_index: int = 0

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def to_json(self, timing: bool = True) -> dict:
        out = {
            "config": self.config.to_json(),
            "checkpoints": [c.to_json() for c in self.checkpoints],
            "engine_version": self.engine_version,
            "fingerprint": self.fingerprint,
            "status": self.status,
            "error": self.error,
            "split_index": self.split_index,
            "config_index": self.config_index,
        }
        if timing:
            out["wall_clock"] = self.wall_clock
        return out

    def dumps(self, timing: bool = True) -> str:
        return json.dumps(self.to_json(timing), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentRecord":
        return cls(
            config=RunConfig.from_json(obj["config"]),
            checkpoints=[CheckpointRecord.from_json(c) for c in obj["checkpoints"]],
            wall_clock=float(obj.get("wall_clock", 0.0)),
            engine_version=obj.get("engine_version", ""),
            fingerprint=obj.get("fingerprint", ""),
            status=obj.get("status", "ok"),
            error=obj.get("error"),
            split_index=int(obj.get("split_index", 0)),
            config_index=int(obj.get("config_index", 0)),
        )


# -- hyperparameter sampling ---------------------------------------------------

def sample_hparams(algorithm: str, rng: np.random.Generator) -> dict:
    """One random-search draw: optimiser settings plus the algorithm's own knobs."""
    alg = AlgorithmSpec(algorithm).id
    out = {
        "lr": float(10 ** rng.uniform(*LR_RANGE)),
        "batch_size": int(2 ** int(np.rint(rng.uniform(*BATCH_EXP_RANGE)))),
        "weight_decay": float(10 ** rng.uniform(*WD_RANGE)),
    }
    hp = {}
    if alg in ("abs_gce", "mcl_gce"):
        hp["rho"] = 0.7
    elif alg == "lws":
        hp["leverage"] = int(rng.choice([1, 2]))
    elif alg == "pop":
        hp["window"] = int(rng.choice([3, 4, 5, 6, 7]))
        hp["warmup"] = int(rng.choice([10, 15, 20]))
        hp["theta"] = float(10 ** rng.uniform(*LR_RANGE))
        hp["inc"] = float(10 ** rng.uniform(*LR_RANGE))
    out["hparams"] = hp
    return out


# -- training ------------------------------------------------------------------

def _predict_probs(params, x, chunk=4096):
    out = []
    for start in range(0, x.shape[0], chunk):
        logits, _ = forward(params, x[start:start + chunk])
        out.append(softmax(logits))
    return np.concatenate(out) if out else np.zeros((0, params.q))


def evaluate(params, val: PartialDataset, test: PartialDataset, iteration: int) -> CheckpointRecord:
    pv = _predict_probs(params, val.features)
    pred_v = np.argmax(pv, axis=1)
    oa = oracle_accuracy(pred_v, val.true_labels) if val.has_labels else None
    pt = _predict_probs(params, test.features)
    return CheckpointRecord(
        iteration=iteration,
        cr=covering_rate(pred_v, val.candidates),
        aa=approximated_accuracy(pv, val.candidates),
        oa=oa,
        test_accuracy=oracle_accuracy(np.argmax(pt, axis=1), test.true_labels),
    )


def _batches(n, batch_size, rng):
    """Endless stream of index batches; reshuffled every epoch, short tail batch kept."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def run(config: RunConfig, dataset: Optional[PartialDataset] = None, *,
        split_index: int = 0, config_index: int = 0) -> ExperimentRecord:
    """Train one model for ``total_iterations`` steps, evaluating every ``eval_period`` steps."""
    t0 = time.perf_counter()
    data = dataset if dataset is not None else load_dataset(config.dataset)
    train, val, test = split(data, config.split)
    if not test.has_labels:
        raise SelectionError("test split needs true labels")
    ss = np.random.SeedSequence(config.seed)
    init_seed, order_seed = (int(s) for s in ss.generate_state(2))
    params = init_params(train.d, train.q, init_seed, config.hidden)
    opt = AdamState.for_params(params, lr=config.lr, weight_decay=config.weight_decay)
    spec = config.algorithm
    state = make_initial_state(spec, train.candidates, config.batch_size)
    stateful = state.confidence is not None
    batches = _batches(train.n, config.batch_size, np.random.default_rng(order_seed))
    x_all, s_all = train.features, train.candidates

    checkpoints, status, error = [], "ok", None
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, config.total_iterations + 1):
            idx = next(batches)
            x, s = x_all[idx], s_all[idx]
            try:
                logits, cache = forward(params, x)
                loss, dlogits = loss_and_grad(spec, softmax(logits), logits, s, state, idx)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"non-finite loss at step {step}")
                adam_step(params, backward(params, cache, dlogits), opt)
                if stateful:
                    logits, _ = forward(params, x)
                    update_state(spec, softmax(logits), s, state, idx)
            except NonFiniteError as err:
                status, error = "failed", str(err)
                log.warning("run diverged: %s", err)
                break
            if step % config.eval_period == 0:
                checkpoints.append(evaluate(params, val, test, step))
    return ExperimentRecord(
        config=config, checkpoints=checkpoints, wall_clock=time.perf_counter() - t0,
        fingerprint=fingerprint(data), status=status, error=error,
        split_index=split_index, config_index=config_index,
    )


# -- sweeps --------------------------------------------------------------------

def _derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def sweep_configs(dataset: PartialDataset, algorithm: str, n_configs: int = 20, n_splits: int = 5,
                  base_seed: int = 0, total_iterations: Optional[int] = None,
                  eval_period: int = EVAL_PERIOD, fractions=(0.7, 0.1, 0.2),
                  dataset_ref: Optional[str] = None) -> list[tuple[int, int, RunConfig]]:
    """The ``(split, config index, RunConfig)`` jobs of a sweep; configs are redrawn per split and algorithm."""
    spec = AlgorithmSpec(algorithm)
    alg_key = ALGORITHMS.index(spec.id)
    iters = total_iterations or default_iterations(dataset.n)
    jobs = []
    for s in range(n_splits):
        split_spec = SplitSpec(*fractions, seed=_derive_seed(base_seed, 1, s))
        rng = np.random.default_rng([base_seed, 2, s, alg_key])
        for c in range(n_configs):
            draw = sample_hparams(spec.id, rng)
            cfg = RunConfig(
                dataset=dataset_ref or dataset.name,
                algorithm=AlgorithmSpec(spec.id, {**spec.hparams, **draw["hparams"]}),
                split=split_spec, lr=draw["lr"], batch_size=draw["batch_size"],
                weight_decay=draw["weight_decay"], total_iterations=iters,
                eval_period=eval_period, seed=_derive_seed(base_seed, 3, s, c, alg_key),
            )
            jobs.append((s, c, cfg))
    return jobs


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def _run_job(args):
    s, c, cfg, dataset = args
    return run(cfg, dataset, split_index=s, config_index=c)


def record_filename(record: ExperimentRecord) -> str:
    return (f"{record.config.algorithm.id}_split{record.split_index}"
            f"_config{record.config_index:02d}.json")


def worker_count(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get("PLLBENCH_WORKERS", "1"))
    return max(1, workers)


def sweep(dataset: PartialDataset, algorithm: str, n_configs: int = 20, n_splits: int = 5,
          base_seed: int = 0, *, out_dir=None, workers: Optional[int] = None,
          total_iterations: Optional[int] = None, eval_period: int = EVAL_PERIOD,
          fractions=(0.7, 0.1, 0.2), dataset_ref: Optional[str] = None) -> list[ExperimentRecord]:
    """Run every sampled configuration on every split.

    Jobs run on a process pool of ``workers`` (default ``$PLLBENCH_WORKERS``
    or 1). Records come back ordered by (split, config) whatever the
    completion order; a diverged run is kept as a failed record.
    """
    jobs = sweep_configs(dataset, algorithm, n_configs, n_splits, base_seed, total_iterations,
                         eval_period, fractions, dataset_ref)
    n_workers = worker_count(workers)
    payload = [(s, c, cfg, dataset) for s, c, cfg in jobs]
    if n_workers == 1:
        records = [_run_job(p) for p in payload]
    else:
        with ProcessPoolExecutor(n_workers, initializer=_limit_threads) as pool:
            records = list(pool.map(_run_job, payload))
    records.sort(key=lambda r: (r.split_index, r.config_index))
    if out_dir is not None:
        save_records(records, out_dir)
    return records


def save_records(records: Sequence[ExperimentRecord], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (out / record_filename(rec)).write_text(rec.dumps() + "\n", encoding="utf-8")


def load_records(in_dir) -> list[ExperimentRecord]:
    paths = sorted(Path(in_dir).glob("*.json"))
    records = [ExperimentRecord.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in paths]
    records.sort(key=lambda r: (r.config.algorithm.id, r.split_index, r.config_index))
    return records


# -- aggregation -----------------------------------------------------------------

class CheckpointAudit:
    """Counts how many checkpoint records aggregation reads."""

    def __init__(self):
        self.reads = 0


class _AuditedHistory(Sequence):
    def __init__(self, items, audit):
        self._items = items
        self._audit = audit

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return _AuditedHistory(self._items[i], self._audit)
        self._audit.reads += 1
        return self._items[i]

    def __iter__(self):
        for item in self._items:
            self._audit.reads += 1
            yield item


@dataclass(frozen=True)
class Aggregate:
    algorithm: str
    criterion: str
    mean: float
    std: float
    n_splits: int
    n_configs: int
    per_split: tuple = ()


def aggregate(records: Sequence[ExperimentRecord], criterion, *, audit: Optional[CheckpointAudit] = None,
              final_only: bool = False) -> Aggregate:
    """Select a config per split, then mean and population std of the selected test accuracies.

    Failed runs enter selection with an empty history, so they score -inf.
    """
    crit = Criterion.parse(criterion)
    if not records:
        raise SelectionError("no records to aggregate")
    algs = {r.config.algorithm.id for r in records}
    if len(algs) != 1:
        raise SelectionError(f"records mix algorithms {sorted(algs)}; aggregate them separately")
    by_split: dict[int, list] = {}
    for r in sorted(records, key=lambda r: (r.split_index, r.config_index)):
        history = [] if r.failed else r.checkpoints
        if audit is not None:
            history = _AuditedHistory(history, audit)
        by_split.setdefault(r.split_index, []).append((r.config_index, history))
    accs = []
    n_configs = 0
    for s in sorted(by_split):
        runs = by_split[s]
        n_configs = max(n_configs, len(runs))
        try:
            _, acc = select_config(crit, runs, final_only)
        except SelectionError as err:
            raise SelectionError(f"split {s}: {err}") from None
        accs.append(acc)
    accs = np.array(accs)
    return Aggregate(algs.pop(), crit.value, float(accs.mean()), float(accs.std()),
                     len(accs), n_configs, tuple(accs.tolist()))


def aggregate_table(records: Sequence[ExperimentRecord], criteria=None, *,
                    audit: Optional[CheckpointAudit] = None) -> list[Aggregate]:
    """One row per (algorithm, criterion); OA-based rows are skipped when validation labels are missing."""
    criteria = [Criterion.parse(c) for c in (criteria or list(Criterion))]
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.config.algorithm.id, []).append(r)
    rows = []
    for alg in sorted(groups, key=ALGORITHMS.index):
        for crit in criteria:
            try:
                rows.append(aggregate(groups[alg], crit, audit=audit))
            except SelectionError as err:
                if crit.needs_labels and "true labels" in str(err):
                    continue
                raise
    return rows


# -- reports -------------------------------------------------------------------

COLUMNS = ("algorithm", "criterion", "mean", "std", "n_splits", "n_configs")
_MD_HEADERS = {"cr": "w/ CR", "aa": "w/ AA", "oa": "w/ OA", "oa-es": "w/ OA & ES"}
_MD_NAMES = {"proden": "PRODEN", "cavl": "CAVL", "pop": "POP", "abs_mae": "ABS-MAE",
             "abs_gce": "ABS-GCE", "exp": "EXP", "mcl_gce": "MCL-GCE", "mcl_mse": "MCL-MSE",
             "cc": "CC", "lws": "LWS", "pc": "PC", "forward": "Forward", "nn": "NN", "ga": "GA",
             "scl_exp": "SCL-EXP", "scl_nl": "SCL-NL", "l_w": "L-W", "op_w": "OP-W"}


def emit_report(aggregates: Sequence[Aggregate], format: str = "csv", path=None) -> str:
    """Render aggregates as csv, json or a markdown table shaped like the benchmark tables.

    std is the population standard deviation across splits. Markdown shows
    percentages rounded to two decimals; csv and json keep full precision.
    """
    if not aggregates:
        raise ValueError("nothing to report")
    fmt = format.lower()
    rows = [{k: getattr(a, k) for k in COLUMNS} for a in aggregates]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "mean": repr(row["mean"]), "std": repr(row["std"])})
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps({"std": "population", "columns": list(COLUMNS), "rows": rows},
                          indent=2) + "\n"
    elif fmt in ("md", "markdown"):
        crits = [c for c in _MD_HEADERS if any(a.criterion == c for a in aggregates)]
        algs = list(dict.fromkeys(a.algorithm for a in aggregates))
        cell = {(a.algorithm, a.criterion): a for a in aggregates}
        n_splits = max(a.n_splits for a in aggregates)
        lines = [f"Accuracy (%), mean ± population std over {n_splits} split(s).", "",
                 "| Algorithm | " + " | ".join(_MD_HEADERS[c] for c in crits) + " |",
                 "|---|" + "---|" * len(crits)]
        for alg in algs:
            vals = []
            for c in crits:
                a = cell.get((alg, c))
                vals.append("-" if a is None else f"{100 * a.mean:.2f}±{100 * a.std:.2f}")
            lines.append(f"| {_MD_NAMES.get(alg, alg)} | " + " | ".join(vals) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
