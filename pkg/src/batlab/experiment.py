"""Training loop, evaluation and the epochs x dropout x epsilon sweep."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .adversarial import AdvConfig, combined_step, input_gradient
from .checkpoint import save_checkpoint
from .data import TaskData
from .errors import ConfigError, UsageError
from .metrics import MetricsReport, ae_report, asc_report
from .model import Model, ModelConfig, collate, init_params
from .params import Adam, ParamSet
from .rng import make_streams

log = logging.getLogger(__name__)

DEFAULT_EPSILONS = (0.01, 0.1, 1.0, 2.0, 5.0)
DEFAULT_EPOCHS = tuple(range(3, 11))
CSV_COLUMNS = ("run_id", "task", "dataset", "epochs", "dropout", "epsilon", "seed", "split", "metric", "value")
SPLIT_TEST = "test"
SPLIT_BEST = "test_best_val"


@dataclass(frozen=True)
class TrainConfig:
    task: str = "ae"
    lr: float = 3e-5
    batch_size: int = 16
    epochs: int = 4
    dropout: float = 0.1
    epsilon: float = 0.0
    seeds: tuple[int, ...] = (0,)
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ff: int = 256
    max_len: int = 64
    dataset: str = "synthetic"

    def __post_init__(self):
        if self.task not in ("ae", "asc"):
            raise ConfigError(f"task must be 'ae' or 'asc', got {self.task!r}")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")

    @property
    def adv(self) -> AdvConfig:
        return AdvConfig.for_task(self.task, self.epsilon)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, hidden=self.hidden, layers=self.layers, heads=self.heads,
            ff=self.ff, max_len=self.max_len, dropout=self.dropout, task=self.task,
        )

    def fingerprint(self) -> str:
        d = asdict(self)
        d.pop("seeds")
        return ";".join(f"{k}={v}" for k, v in d.items())


@dataclass
class EpochRecord:
    epoch: int
    clean_loss: float
    adv_loss: float
    degenerate: int
    validation: MetricsReport | None = None
    test: MetricsReport | None = None


@dataclass
class TrainResult:
    config: TrainConfig
    seed: int
    model_config: ModelConfig
    params: ParamSet
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_params: ParamSet | None = None

    def best_epoch_within(self, epochs: int) -> int:
        """1-based epoch with the highest validation score among the first ``epochs``."""
        best, score = 0, -math.inf
        for rec in self.history[:epochs]:
            if rec.validation is not None and rec.validation.primary > score:
                best, score = rec.epoch, rec.validation.primary
        return best or epochs

    def rows(self, epochs: int | None = None, dataset: str | None = None) -> list[tuple]:
        """CSV rows describing the run as if it had stopped after ``epochs``."""
        cfg = self.config
        epochs = epochs or len(self.history)
        dataset = dataset or cfg.dataset
        rid = run_id(cfg.task, dataset, epochs, cfg.dropout, cfg.epsilon, self.seed)
        head = (rid, cfg.task, dataset, epochs, cfg.dropout, cfg.epsilon, self.seed)
        out = []
        for rec in self.history[:epochs]:
            out.append(head + ("train", f"clean_loss_epoch{rec.epoch}", rec.clean_loss))
            out.append(head + ("train", f"adv_loss_epoch{rec.epoch}", rec.adv_loss))
            out.append(head + ("train", f"degenerate_epoch{rec.epoch}", float(rec.degenerate)))
        last = self.history[epochs - 1]
        if last.validation is not None:
            out.extend(head + ("validation", k, v) for k, v in last.validation.values().items())
        if last.test is not None:
            out.extend(head + (SPLIT_TEST, k, v) for k, v in last.test.values().items())
        best = self.best_epoch_within(epochs)
        best_test = self.history[best - 1].test
        out.append(head + (SPLIT_BEST, "best_epoch", float(best)))
        if best_test is not None:
            out.extend(head + (SPLIT_BEST, k, v) for k, v in best_test.values().items())
        return out

    @property
    def final_test(self) -> MetricsReport | None:
        return self.history[-1].test if self.history else None

    @property
    def best_test(self) -> MetricsReport | None:
        return self.history[self.best_epoch - 1].test if self.best_epoch else None


def run_id(task, dataset, epochs, dropout, epsilon, seed) -> str:
    return f"{task}-{dataset}-ep{epochs}-do{dropout}-eps{epsilon}-s{seed}"


def batches(examples: Sequence, batch_size: int, order: Iterable[int] | None = None):
    idx = list(range(len(examples))) if order is None else list(order)
    for i in range(0, len(idx), batch_size):
        yield collate([examples[j] for j in idx[i : i + batch_size]])


def evaluate(model: Model, params, examples: Sequence, batch_size: int = 64, split: str = "test", seed=None, config: str = "") -> MetricsReport:
    if not examples:
        raise UsageError("cannot evaluate on an empty example list")
    if model.cfg.task == "ae":
        pred_tags, gold_tags = [], []
        for batch in batches(examples, batch_size):
            pred = model.predict(batch, params)
            for row, labels, mask in zip(pred, batch.labels, batch.score_mask):
                pred_tags.append([int(p) for p, m in zip(row, mask) if m])
                gold_tags.append([int(g) for g, m in zip(labels, mask) if m])
        return ae_report(pred_tags, gold_tags, split=split, seed=seed, config=config)
    pred, gold = [], []
    for batch in batches(examples, batch_size):
        pred.extend(int(p) for p in model.predict(batch, params))
        gold.extend(int(g) for g in batch.labels)
    return asc_report(pred, gold, split=split, seed=seed, config=config)


def mean_input_gradient_norm(model: Model, params, examples: Sequence, batch_size: int = 64) -> float:
    """Average per-example norm of the log-likelihood gradient w.r.t. embeddings."""
    norms = []
    for batch in batches(examples, batch_size):
        g = input_gradient(model, batch, params)
        # undo the batch-mean so the value does not depend on batch size
        norms.extend(np.sqrt((g.astype(np.float64) ** 2).sum(axis=(1, 2))) * batch.size)
    return float(np.mean(norms))


def train(
    cfg: TrainConfig,
    data: TaskData,
    seed: int | None = None,
    checkpoint_path=None,
    eval_splits: Sequence[str] = ("validation", "test"),
) -> TrainResult:
    """Fine-tune from scratch with optional adversarial examples.

    Validation and test metrics are computed after every epoch; the
    parameters of the best validation epoch are kept and, when
    ``checkpoint_path`` is given, written out.
    """
    if data.task != cfg.task:
        raise ConfigError(f"data is for task {data.task!r} but config says {cfg.task!r}")
    if not data.train:
        raise ConfigError("no training examples")
    seed = cfg.seeds[0] if seed is None else seed
    mcfg = cfg.model_config(data.vocab_size)
    longest = max(e.example.length for e in (*data.train, *data.validation, *data.test))
    if longest > mcfg.max_len:
        raise ConfigError(f"examples have length {longest} > max_len {mcfg.max_len}")
    streams = make_streams(seed)
    model = Model(mcfg)
    params = init_params(mcfg, streams.init)
    optimizer = Adam(params, cfg.lr)
    adv = cfg.adv
    result = TrainResult(cfg, seed, mcfg, params)
    best_score = -math.inf
    fp = cfg.fingerprint()
    for epoch in range(1, cfg.epochs + 1):
        order = streams.shuffle.permutation(len(data.train))
        clean = adv_sum = 0.0
        degenerate = steps = 0
        for batch in batches(data.train, cfg.batch_size, order):
            rep = combined_step(model, batch, params, adv, optimizer, streams.dropout, streams.adversarial)
            clean += rep.clean
            adv_sum += rep.adversarial
            degenerate += rep.degenerate
            steps += 1
        val = test = None
        if "validation" in eval_splits and data.validation:
            val = evaluate(model, params, data.validation, split="validation", seed=seed, config=fp)
        if "test" in eval_splits and data.test:
            test = evaluate(model, params, data.test, split="test", seed=seed, config=fp)
        result.history.append(EpochRecord(epoch, clean / steps, adv_sum / steps, degenerate, val, test))
        log.debug("epoch %d clean=%.4f adv=%.4f", epoch, clean / steps, adv_sum / steps)
        if val is not None and val.primary > best_score:
            best_score = val.primary
            result.best_epoch = epoch
            result.best_params = params.copy()
    if not result.best_epoch:
        result.best_epoch = cfg.epochs
        result.best_params = params.copy()
    if checkpoint_path is not None:
        manifest = {"model": mcfg.to_dict(), "train": {**asdict(cfg), "seeds": list(cfg.seeds)},
                    "seed": seed, "best_epoch": result.best_epoch}
        save_checkpoint(checkpoint_path, result.best_params, manifest)
    return result


def load_model(path) -> tuple[Model, ParamSet, dict]:
    from .checkpoint import load_checkpoint

    arrays, manifest = load_checkpoint(path)
    mcfg = ModelConfig.from_dict(manifest["model"])
    expected = init_params(mcfg, np.random.default_rng(0))
    for name, t in expected.items():
        if name not in arrays:
            raise ConfigError(f"checkpoint lacks tensor {name!r}")
        if arrays[name].shape != t.shape:
            raise ConfigError(f"tensor {name!r} has shape {arrays[name].shape}, config expects {t.shape}")
    extra = set(arrays) - set(expected)
    if extra:
        raise ConfigError(f"checkpoint has unexpected tensors {sorted(extra)}")
    params = ParamSet({k: T.Tensor(arrays[k]) for k in expected})
    return Model(mcfg), params, manifest


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    epochs: tuple[int, ...] = DEFAULT_EPOCHS
    dropouts: tuple[float, ...] = (0.1,)
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    seeds_per_cell: int = 3
    baseline: bool = True
    base_seed: int = 0

    def __post_init__(self):
        if not self.epochs or not self.dropouts or not self.epsilon_axis:
            raise ConfigError("every sweep axis needs at least one value")
        if min(self.epochs) < 1 or self.seeds_per_cell < 1:
            raise ConfigError("epochs and seeds_per_cell must be positive")

    @property
    def epsilon_axis(self) -> tuple[float, ...]:
        axis = ((0.0,) if self.baseline else ()) + tuple(self.epsilons)
        return tuple(dict.fromkeys(float(e) for e in axis))

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.base_seed + i for i in range(self.seeds_per_cell))

    def cells(self) -> list[tuple[int, float, float]]:
        return list(product(sorted(self.epochs), self.dropouts, self.epsilon_axis))

    @property
    def n_runs(self) -> int:
        return len(self.cells()) * self.seeds_per_cell


@dataclass
class Cell:
    task: str
    dataset: str
    epochs: int
    dropout: float
    epsilon: float
    split: str
    metric: str
    scores: tuple[float, ...]

    @property
    def mean(self) -> float:
        return sum(self.scores) / len(self.scores)


@dataclass
class SweepResult:
    rows: list[tuple]
    cells: list[Cell]
    failures: list[tuple[tuple, str]] = field(default_factory=list)

    @property
    def run_ids(self) -> list[str]:
        return sorted({r[0] for r in self.rows})


def _unit_rows(cfg: TrainConfig, data: TaskData, dropout: float, epsilon: float, seed: int, epochs: tuple[int, ...]):
    # One trajectory covers every epoch count: a run stopped after e epochs is
    # identical to the first e epochs of a longer run with the same seed.
    unit_cfg = replace(cfg, dropout=dropout, epsilon=epsilon, epochs=max(epochs), seeds=(seed,))
    res = train(unit_cfg, data, seed)
    rows = []
    for e in sorted(epochs):
        rows.extend(res.rows(e, data.name))
    return rows


def _run_unit(args):
    cfg, data, unit, epochs = args
    try:
        return unit, _unit_rows(cfg, data, *unit, epochs), None
    except Exception as exc:  # recorded per cell; the rest of the sweep continues
        return unit, [], f"{type(exc).__name__}: {exc}"


def _row_key(row):
    return (row[1], row[2], float(row[4]), float(row[5]), int(row[6]), int(row[3]), row[7], row[8])


def format_rows(rows: Iterable[tuple]) -> list[list[str]]:
    out = []
    for r in sorted(rows, key=_row_key):
        out.append([r[0], r[1], r[2], str(int(r[3])), repr(float(r[4])), repr(float(r[5])), str(int(r[6])), r[7], r[8], repr(float(r[9]))])
    return out


def write_rows(path, rows: Iterable[tuple]) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(format_rows(rows))
    tmp.replace(path)
    return path


def read_rows(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != CSV_COLUMNS:
            raise UsageError(f"{path}: unexpected CSV header {header}")
        return [
            (r[0], r[1], r[2], int(r[3]), float(r[4]), float(r[5]), int(r[6]), r[7], r[8], float(r[9]))
            for r in reader
            if r
        ]


def _append_partial(path: Path, rows) -> None:
    new = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(CSV_COLUMNS)
        w.writerows(format_rows(rows))


def aggregate(rows: Iterable[tuple], splits=(SPLIT_TEST, SPLIT_BEST)) -> list[Cell]:
    groups: dict[tuple, list[tuple[int, float]]] = {}
    for r in rows:
        if r[7] not in splits or r[8] == "best_epoch":
            continue
        key = (r[1], r[2], int(r[3]), float(r[4]), float(r[5]), r[7], r[8])
        groups.setdefault(key, []).append((int(r[6]), float(r[9])))
    cells = []
    for key in sorted(groups):
        scores = tuple(v for _, v in sorted(groups[key]))
        cells.append(Cell(*key, scores))
    return cells


def sweep(
    grid: SweepGrid,
    base: TrainConfig,
    data: TaskData,
    out_csv=None,
    jobs: int = 1,
) -> SweepResult:
    """Run every (epochs, dropout, epsilon) cell for each seed.

    With ``out_csv`` the raw rows are also written there; completed units
    found in it (or in its ``.partial`` companion from an interrupted run)
    are reused, so re-running a sweep reproduces the same file.
    """
    epochs = tuple(sorted(set(grid.epochs)))
    units = [(d, e, s) for d, e in product(grid.dropouts, grid.epsilon_axis) for s in grid.seeds]
    expected = {
        u: {run_id(base.task, data.name, n, u[0], u[1], u[2]) for n in epochs} for u in units
    }
    done: dict[tuple, list[tuple]] = {}
    partial = None
    if out_csv is not None:
        out_csv = Path(out_csv)
        partial = out_csv.with_name(out_csv.name + ".partial")
        previous = []
        for p in (out_csv, partial):
            if p.exists():
                previous.extend(read_rows(p))
        by_id: dict[str, list[tuple]] = {}
        for r in previous:
            by_id.setdefault(r[0], []).append(r)
        for u, ids in expected.items():
            if ids <= set(by_id):
                done[u] = [r for i in sorted(ids) for r in by_id[i]]
        if done:
            log.info("reusing %d completed units from %s", len(done), out_csv)

    todo = [(base, data, u, epochs) for u in units if u not in done]
    failures = []
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_unit, todo))
    else:
        outcomes = []
        for args in todo:
            outcomes.append(_run_unit(args))
            if partial is not None and outcomes[-1][1]:
                _append_partial(partial, outcomes[-1][1])
    for unit, rows, err in outcomes:
        if err is not None:
            failures.append((unit, err))
            log.warning("unit %s failed: %s", unit, err)
        else:
            done[unit] = rows
    all_rows = [r for u in units if u in done for r in done[u]]
    if out_csv is not None:
        write_rows(out_csv, all_rows)
        if partial is not None and partial.exists():
            os.remove(partial)
    return SweepResult(all_rows, aggregate(all_rows), failures)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

TABLE_METRICS = {"ae": ("f1",), "asc": ("accuracy", "macro_f1")}
METRIC_TITLES = {"f1": "F1", "accuracy": "Acc", "macro_f1": "MF1"}
TABLE_COLUMNS = ("task", "dataset", "epochs", "dropout", "row", "epsilon", "metric", "value", "baseline", "delta")


def epsilon_table(cells: Sequence[Cell], split: str = SPLIT_TEST) -> list[tuple]:
    """Rows ``baseline, eps=...`` per (task, dataset, epochs, dropout) with deltas.

    ``delta`` is ``value - baseline`` computed on the raw means.
    """
    index = {(c.task, c.dataset, c.epochs, c.dropout, c.epsilon, c.metric): c.mean for c in cells if c.split == split}
    groups = sorted({(c.task, c.dataset, c.epochs, c.dropout) for c in cells if c.split == split})
    out = []
    for task, dataset, epochs, dropout in groups:
        eps_values = sorted({k[4] for k in index if k[:4] == (task, dataset, epochs, dropout)})
        for metric in TABLE_METRICS[task]:
            base = index.get((task, dataset, epochs, dropout, 0.0, metric))
            for eps in eps_values:
                value = index.get((task, dataset, epochs, dropout, eps, metric))
                if value is None:
                    continue
                label = "baseline" if eps == 0.0 else f"eps={eps:g}"
                delta = value - base if base is not None and eps != 0.0 else None
                out.append((task, dataset, epochs, dropout, label, eps, metric, value, base, delta))
    return out


def write_table(path, table: Sequence[tuple]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in table:
            w.writerow([*r[:3], repr(r[3]), r[4], repr(r[5]), r[6], repr(r[7]),
                        "" if r[8] is None else repr(r[8]), "" if r[9] is None else repr(r[9])])
    return path


def _fmt_score(value: float, delta: float | None) -> str:
    text = f"{100 * value:.2f}"
    if delta is not None:
        text += f" ({100 * delta:+.2f})"
    return text


def format_table(table: Sequence[tuple]) -> str:
    """Plain-text rendering: one block per configuration, scores in percent."""
    blocks = []
    groups: dict[tuple, list[tuple]] = {}
    for r in table:
        groups.setdefault(r[:4], []).append(r)
    for (task, dataset, epochs, dropout), rows in groups.items():
        metrics = [m for m in TABLE_METRICS[task] if any(r[6] == m for r in rows)]
        labels = list(dict.fromkeys(r[4] for r in rows))
        cell = {(r[4], r[6]): _fmt_score(r[7], r[9]) for r in rows}
        width = max(len(l) for l in labels + ["Method"]) + 2
        lines = [f"{task.upper()} {dataset}  epochs={epochs} dropout={dropout:g}"]
        lines.append("Method".ljust(width) + "".join(METRIC_TITLES[m].ljust(18) for m in metrics).rstrip())
        for label in labels:
            lines.append(label.ljust(width) + "".join(cell.get((label, m), "-").ljust(18) for m in metrics).rstrip())
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def best_over_grid(cells: Sequence[Cell], split: str = SPLIT_TEST) -> list[Cell]:
    """Highest-mean cell per (task, dataset, epsilon, metric) across epochs and dropout."""
    best: dict[tuple, Cell] = {}
    for c in cells:
        if c.split != split:
            continue
        key = (c.task, c.dataset, c.epsilon, c.metric)
        if key not in best or c.mean > best[key].mean:
            best[key] = c
    return [best[k] for k in sorted(best)]


CELL_COLUMNS = ("task", "dataset", "epochs", "dropout", "epsilon", "split", "metric", "mean", "n_seeds", "scores")


def write_cells(path, cells: Sequence[Cell]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_COLUMNS)
        for c in cells:
            w.writerow([c.task, c.dataset, c.epochs, repr(c.dropout), repr(c.epsilon), c.split, c.metric,
                        repr(c.mean), len(c.scores), " ".join(repr(s) for s in c.scores)])
    return path


def read_cells(path) -> list[Cell]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            Cell(r["task"], r["dataset"], int(r["epochs"]), float(r["dropout"]), float(r["epsilon"]),
                 r["split"], r["metric"], tuple(float(s) for s in r["scores"].split()))
            for r in reader
        ]
