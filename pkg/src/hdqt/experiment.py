"""Seeded experiment runner: configs, bit-width sweeps, result and plot-data emission."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .cil.stream import single_task, split_tasks
from .cil.trainers import (
    Hyperparams,
    make_estimator,
    precision_label,
    run_stream,
)
from .data import DATASET_KINDS, Schema, apply_dataset_filters, load_csv, normalize, split_train_test, synth_blobs
from .numerics import Rng
from .quantizer import QuantConfig
from .record import RunRecord, per_class_delta

log = logging.getLogger(__name__)

METHODS = ("nocl", "finetune", "lwf", "icarl", "icarl_nme", "bic")
FIGURES = ("step_acc", "forgetting", "per_class_delta", "bin_occupancy")
WORKERS_ENV = "HDQT_WORKERS"


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


def _strict(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


@dataclass
class DatasetSpec:
    """Where samples come from: synthetic blobs or a feature CSV."""

    source: str = "blobs"
    path: str | None = None
    label_col: str = "label"
    user_col: str | None = None
    dataset_kind: str = "generic"
    apply_filters: bool = True
    normalize: bool = True
    test_size: float = 0.2
    classes: int = 10
    samples_per_class: int = 100
    dim: int = 32
    separation: float = 3.0

    def validate(self):
        if self.source not in ("blobs", "csv"):
            raise ConfigError(f"dataset source must be 'blobs' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("csv dataset needs a path")
        if self.dataset_kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.dataset_kind!r}")
        if not 0 < self.test_size < 1:
            raise ConfigError(f"test_size must lie in (0, 1), got {self.test_size}")

    def build(self, rng: Rng):
        """Load or synthesize, filter, split and normalize. Same ``rng`` gives the same dataset."""
        if self.source == "blobs":
            ds = synth_blobs(self.classes, self.samples_per_class, self.dim, self.separation,
                             rng.split("blobs"), self.test_size)
        else:
            ds = load_csv(self.path, Schema(self.label_col, self.user_col, self.dataset_kind))
            if self.apply_filters:
                ds = apply_dataset_filters(ds, self.dataset_kind)
            ds = split_train_test(ds, rng.split("split"), self.test_size)
        return normalize(ds) if self.normalize else ds


@dataclass
class ExperimentConfig:
    """One method at one precision over a list of seeds.

    ``quant`` is ``"fp"`` for the unquantized baseline or a mapping of
    :class:`~hdqt.quantizer.QuantConfig` fields (missing ones take defaults).
    """

    method: str = "icarl"
    quant: object = field(default_factory=dict)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    hp: Hyperparams = field(default_factory=Hyperparams)
    seeds: list = field(default_factory=lambda: [0])
    classes_per_task: int = 2
    remainder: str = "last"

    def quant_config(self):
        return None if self.quant == "fp" else QuantConfig.from_dict(dict(self.quant))

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.quant != "fp":
            if not isinstance(self.quant, dict):
                raise ConfigError("quant must be 'fp' or a mapping of quantizer settings")
            try:
                self.quant_config()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"quant: {exc}") from None
        self.dataset.validate()
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.classes_per_task < 1:
            raise ConfigError("classes_per_task must be >= 1")
        if self.remainder not in ("last", "merge"):
            raise ConfigError(f"remainder must be 'last' or 'merge', got {self.remainder!r}")
        if self.hp.epochs < 1 or self.hp.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.method == "bic" and not 0 < self.hp.bic_split < 1:
            raise ConfigError(f"bic_split must lie in (0, 1), got {self.hp.bic_split}")
        if self.method in ("icarl", "icarl_nme", "bic") and self.hp.memory_size < 1:
            raise ConfigError("replay methods need memory_size >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = [int(s) for s in self.seeds]
        return d

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = dict(raw)
        ds = _strict(DatasetSpec, raw.pop("dataset", {}), "dataset")
        hp = _strict(Hyperparams, raw.pop("hp", {}), "hp")
        cfg = _strict(cls, raw, "config")
        cfg.dataset, cfg.hp = ds, hp
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def run_seed(config: ExperimentConfig, seed: int) -> RunRecord:
    """Train and evaluate one seed. Data, split and class order depend only on the seed."""
    rng = Rng(seed)
    ds = config.dataset.build(rng.split("data"))
    if config.method == "nocl":
        stream = single_task(ds)
    else:
        stream = split_tasks(ds, config.classes_per_task, rng.split("stream"), config.remainder)
    cfg = config.quant_config()
    method = {"nocl": "finetune", "icarl_nme": "icarl"}.get(config.method, config.method)
    est = make_estimator(method, config.hp, cfg, seed, nme=config.method == "icarl_nme")
    return run_stream(est, ds, stream, seed=seed, config=config.to_dict(), method=config.method,
                      label=f"{config.method}/{precision_label(cfg)}")


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_jobs(jobs):
    """Run ``(config, seed)`` pairs, in worker processes when the env var asks for it."""
    n = min(_workers(), len(jobs))
    if n <= 1:
        return [run_seed(c, s) for c, s in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(run_seed, c, s) for c, s in jobs]
        return [f.result() for f in futures]


def run_experiment(config: ExperimentConfig) -> list:
    """One :class:`RunRecord` per seed, in seed order."""
    config.validate()
    return _run_jobs([(config, int(s)) for s in config.seeds])


def sweep_configs(config: ExperimentConfig, axis, values):
    """Expand a bit-width axis into per-point configs.

    The input axis doubles the accumulator width at every point. The
    accumulator axis keeps the base input width and drops points narrower
    than it, with a warning naming them.
    """
    if axis not in ("input", "accum"):
        raise ConfigError(f"sweep axis must be 'input' or 'accum', got {axis!r}")
    values = [int(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = {} if config.quant == "fp" else dict(config.quant)
    base_input = QuantConfig.from_dict(base).input_bits
    out, rejected = [], []
    for v in values:
        q = dict(base)
        if axis == "input":
            q.update(input_bits=v, accum_bits=2 * v)
        else:
            if v < base_input:
                rejected.append((base_input, v))
                continue
            q.update(accum_bits=v)
        out.append(replace(config, quant=q).validate())
    if rejected:
        log.warning("skipping (input, accum) pairs with accum < input: %s", rejected)
    if not out:
        raise ConfigError(f"no valid sweep points; rejected (input, accum) pairs {rejected}")
    return out


def sweep(config: ExperimentConfig, axis, values) -> list:
    """Run every sweep point with the same seeds, so points are paired per seed."""
    config.validate()
    points = sweep_configs(config, axis, values)
    return _run_jobs([(c, int(s)) for c in points for s in c.seeds])


# -- emission -------------------------------------------------------------

RESULT_FIELDS = ("label", "method", "seed", "task", "metric", "value")


def result_rows(records):
    """Long-form rows: one per (record, task, metric)."""
    rows = []
    for r in records:
        last = len(r.task_accuracy) - 1
        for t, v in enumerate(r.task_accuracy):
            rows.append((r.label, r.method, r.seed, t, "accuracy", v))
        for t, v in enumerate(r.forgetting, start=1):
            rows.append((r.label, r.method, r.seed, t, "forgetting", v))
        rows.append((r.label, r.method, r.seed, last, "final_accuracy", r.final_accuracy))
    return rows


def emit_results(records, out_dir, fmt="json"):
    """Write ``results.json`` (full records) or ``results.csv`` (long-form rows)."""
    if not records:
        raise ValueError("no records to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / "results.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in records], fh, indent=1)
    elif fmt == "csv":
        path = out_dir / "results.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_FIELDS)
            for row in result_rows(records):
                w.writerow([*row[:5], repr(float(row[5]))])
    else:
        raise ValueError(f"format must be 'json' or 'csv', got {fmt!r}")
    return path


def load_records(path):
    """Records from a ``results.json`` file, or from every ``*.json`` in a directory."""
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    records = []
    for f in files:
        with open(f, encoding="utf-8") as fh:
            raw = json.load(fh)
        records += [RunRecord.from_dict(d) for d in (raw if isinstance(raw, list) else [raw])]
    if not records:
        raise ValueError(f"no run records found in {path}")
    return records


def _group(records):
    groups = {}
    for r in records:
        groups.setdefault(r.label, []).append(r)
    return groups


def _check_compatible(records):
    shapes = {(len(r.task_accuracy), len(r.class_order)) for r in records}
    if len(shapes) > 1:
        raise ValueError(f"records mix incompatible streams (tasks, classes): {sorted(shapes)}")
    for label, rs in _group(records).items():
        seeds = [r.seed for r in rs]
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"{label}: duplicate seeds {seeds}")


def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean(axis=0)), float(a.std(axis=0))


def plot_rows(records, figure):
    """Aggregate rows (mean and population std over seeds) for one figure."""
    if not records:
        raise ValueError("no records to plot")
    if figure not in FIGURES:
        raise ValueError(f"figure must be one of {FIGURES}, got {figure!r}")
    _check_compatible(records)
    groups = _group(records)
    rows = []
    if figure in ("step_acc", "forgetting"):
        attr, offset = ("task_accuracy", 0) if figure == "step_acc" else ("forgetting", 1)
        for label, rs in groups.items():
            series = np.array([getattr(r, attr) for r in rs], dtype=np.float64)
            for j in range(series.shape[1]):
                m, s = _mean_std(series[:, j])
                rows.append({"label": label, "task": j + offset, "mean": m, "std": s, "n": len(rs)})
    elif figure == "per_class_delta":
        if len(groups) != 2:
            raise ValueError(f"per_class_delta needs exactly two labels, got {sorted(groups)}")
        (la, ra), (lb, rb) = groups.items()
        by_seed = {r.seed: r for r in rb}
        if {r.seed for r in ra} != set(by_seed):
            raise ValueError("per_class_delta needs the same seeds in both runs")
        deltas = np.array([per_class_delta(a, by_seed[a.seed]) for a in ra])
        for k in range(deltas.shape[1]):
            m, s = _mean_std(deltas[:, k])
            rows.append({"label": f"{lb} - {la}", "arrival": k, "mean": m, "std": s, "n": len(ra)})
    else:
        for label, rs in groups.items():
            occ = [{k: int(np.count_nonzero(v)) for k, v in r.gemm_stats.get("bins_used", {}).items()}
                   for r in rs]
            roles = sorted(set().union(*occ))
            for role in roles:
                m, s = _mean_std([o.get(role, 0) for o in occ])
                rows.append({"label": label, "role": role, "mean": m, "std": s, "n": len(rs)})
        if not rows:
            raise ValueError("bin_occupancy needs quantized runs with histograms")
    return rows


def emit_plotdata(records, figure, out_path, svg_path=None):
    """Write the figure's CSV plot data and, optionally, an SVG rendering."""
    rows = plot_rows(records, figure)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    if svg_path is not None:
        _render_svg(rows, figure, svg_path)
    return out_path


def _render_svg(rows, figure, path):
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("SVG output needs matplotlib (pip install hdqt[plot])") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x_key = {"step_acc": "task", "forgetting": "task", "per_class_delta": "arrival",
             "bin_occupancy": "role"}[figure]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label in dict.fromkeys(r["label"] for r in rows):
        sel = [r for r in rows if r["label"] == label]
        xs = [r[x_key] for r in sel]
        ms = np.array([r["mean"] for r in sel])
        ss = np.array([r["std"] for r in sel])
        if figure in ("per_class_delta", "bin_occupancy"):
            ax.bar([str(x) for x in xs], ms, yerr=ss, label=label, alpha=0.7)
        else:
            ax.plot(xs, ms, marker="o", label=label)
            ax.fill_between(xs, ms - ss, ms + ss, alpha=0.2)
    ax.set_xlabel(x_key)
    ax.set_ylabel(figure)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
