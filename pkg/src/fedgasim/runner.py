"""Experiment orchestration: multi-seed runs, persistence, and comparison.

Layout under the output directory, one subtree per method:

    <output_dir>/<method>/config.json          resolved config
    <output_dir>/<method>/summary.json         cross-seed summary
    <output_dir>/<method>/figures/*.png        rendered curves
    <output_dir>/<method>/seed<k>/rounds.csv   per-round metrics
    <output_dir>/<method>/seed<k>/summary.json per-seed summary
    <output_dir>/<method>/seed<k>/final_model.bin
    <output_dir>/<method>/seed<k>/final_predictions.csv
    <output_dir>/<method>/seed<k>/pre_post.json  (when instrumented)

rounds.csv columns are exactly round,accuracy,macro_f1,mean_ea_ratio,
acc_class_0..C-1; mean_ea_ratio is empty on rounds without EA
instrumentation, class columns are empty for unsupported classes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine, metrics, nn, report
from .config import (
    DATA_DIR_ENV,
    ExperimentConfig,
    config_to_json,
    method_to_string,
)
from .data import (
    BinarySubsetSpec,
    Dataset,
    DirichletSpec,
    PartitionPlan,
    binary_imbalanced_subset,
    dirichlet_partition,
    gen_synthetic,
    load_mnist,
)
from .errors import ComparisonError, ConfigError
from .metrics import RoundRecord

SPEEDUP_TARGET_FRACTION = 0.9


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def rounds_csv_text(records: list[RoundRecord], num_classes: int) -> str:
    header = "round,accuracy,macro_f1,mean_ea_ratio," + ",".join(
        f"acc_class_{i}" for i in range(num_classes)
    )
    lines = [header]
    for r in records:
        cells = [str(r.round), _fmt(r.accuracy), _fmt(r.macro_f1), _fmt(r.mean_ea_ratio)]
        cells += [_fmt(v) for v in r.class_accuracy]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def read_rounds_csv(path) -> dict[str, list]:
    """Parse a rounds.csv back into columns (floats, None for empty cells)."""
    lines = Path(path).read_text().splitlines()
    names = lines[0].split(",")
    cols: dict[str, list] = {n: [] for n in names}
    for line in lines[1:]:
        for name, cell in zip(names, line.split(",")):
            if name == "round":
                cols[name].append(int(cell))
            else:
                cols[name].append(float(cell) if cell else None)
    return cols


def resolve_data_dir(cfg: ExperimentConfig) -> str:
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return env
    if cfg.data_dir:
        return cfg.data_dir
    raise ConfigError(
        f"config.data_dir: required for dataset {cfg.dataset!r} "
        f"(or set ${DATA_DIR_ENV})"
    )


def load_datasets(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Build the (train, test) pair for one seed.

    mnist and synthetic are seed-independent; the binary subset is drawn with
    the run seed, with a balanced (ratio 1) test subset from the test split.
    """
    if cfg.dataset == "synthetic":
        s = cfg.synthetic
        train = gen_synthetic(s.per_class_counts, s.dim, s.spread, seed=s.seed)
        test = gen_synthetic(
            [s.test_per_class] * len(s.per_class_counts), s.dim, s.spread, seed=s.seed + 1
        )
        return train, test
    data_dir = resolve_data_dir(cfg)
    train = load_mnist(data_dir, train=True)
    test = load_mnist(data_dir, train=False)
    if cfg.dataset == "mnist":
        return train, test
    b = cfg.binary_subset
    sub_train = binary_imbalanced_subset(
        train,
        BinarySubsetSpec(b.positive_class, b.negative_class, b.n_pos, b.ratio, seed=seed),
    )
    test_counts = test.class_counts()
    n_test = int(min(test_counts[b.positive_class], test_counts[b.negative_class]))
    sub_test = binary_imbalanced_subset(
        test,
        BinarySubsetSpec(b.positive_class, b.negative_class, n_test, 1.0, seed=seed),
    )
    return sub_train, sub_test


def build_partition(cfg: ExperimentConfig, train: Dataset, seed: int) -> PartitionPlan:
    if cfg.num_clients == 1:
        return PartitionPlan(client_indices=[np.arange(len(train))])
    return dirichlet_partition(
        train, DirichletSpec(alpha=cfg.alpha, num_clients=cfg.num_clients, seed=seed)
    )


def round_config(cfg: ExperimentConfig) -> engine.RoundConfig:
    return engine.RoundConfig(
        num_clients=cfg.num_clients,
        active_per_round=cfg.active_per_round,
        rounds=cfg.rounds,
        lr=cfg.lr,
        method=cfg.method,
        local_epochs=cfg.local_epochs,
        batch_size=cfg.batch_size,
        momentum=cfg.momentum,
        optimizer=cfg.optimizer,
        hidden_dims=tuple(cfg.hidden_dims),
        grad_clip=cfg.grad_clip,
        eval_every=cfg.eval_every,
        ea_every=cfg.ea_every,
        instrument_pre_post=cfg.instrument_pre_post,
    )


def task_fingerprint(cfg: ExperimentConfig) -> dict:
    """Everything two runs must share to be comparable (method excluded)."""
    fp = {
        "dataset": cfg.dataset,
        "alpha": cfg.alpha,
        "num_clients": cfg.num_clients,
        "active_per_round": cfg.active_per_round,
        "rounds": cfg.rounds,
        "local_epochs": cfg.local_epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "optimizer": cfg.optimizer,
        "hidden_dims": list(cfg.hidden_dims),
        "grad_clip": cfg.grad_clip,
    }
    if cfg.synthetic is not None:
        fp["synthetic"] = {
            "per_class_counts": list(cfg.synthetic.per_class_counts),
            "dim": cfg.synthetic.dim,
            "spread": cfg.synthetic.spread,
            "test_per_class": cfg.synthetic.test_per_class,
            "seed": cfg.synthetic.seed,
        }
    if cfg.binary_subset is not None:
        fp["binary_subset"] = {
            "positive_class": cfg.binary_subset.positive_class,
            "negative_class": cfg.binary_subset.negative_class,
            "n_pos": cfg.binary_subset.n_pos,
            "ratio": cfg.binary_subset.ratio,
        }
    return fp


def seed_summary(result: engine.ExperimentResult, seed: int) -> dict:
    last = result.records[-1]
    return {
        "seed": seed,
        "final_round": last.round,
        "final_accuracy": last.accuracy,
        "final_macro_f1": last.macro_f1,
        "best_accuracy": max(r.accuracy for r in result.records),
        "total_seconds": last.wall_time,
        "empty_clients": result.empty_clients,
        "rounds": [r.round for r in result.records],
        "accuracy_curve": [r.accuracy for r in result.records],
        "macro_f1_curve": [r.macro_f1 for r in result.records],
        "ea_rounds": [r.round for r in result.records if r.mean_ea_ratio is not None],
        "ea_curve": [r.mean_ea_ratio for r in result.records if r.mean_ea_ratio is not None],
    }


def method_summary(cfg: ExperimentConfig, per_seed: list[dict]) -> dict:
    finals = np.array([s["final_accuracy"] for s in per_seed])
    f1s = np.array([s["final_macro_f1"] for s in per_seed])
    curves = [s["accuracy_curve"] for s in per_seed]
    rounds = per_seed[0]["rounds"]
    mean_curve = np.mean(np.array(curves), axis=0)
    best = float(np.max(mean_curve))
    to90 = metrics.iterations_to_fraction(mean_curve, SPEEDUP_TARGET_FRACTION * best)
    return {
        "method": method_to_string(cfg.method),
        "task": task_fingerprint(cfg),
        "seeds": list(cfg.seeds),
        "final_accuracy_per_seed": [float(v) for v in finals],
        "final_macro_f1_per_seed": [float(v) for v in f1s],
        "accuracy_mean": float(np.mean(finals)),
        "accuracy_std": float(np.std(finals)),
        "macro_f1_mean": float(np.mean(f1s)),
        "macro_f1_std": float(np.std(f1s)),
        "rounds": rounds,
        "accuracy_curves": curves,
        "accuracy_curve_mean": [float(v) for v in mean_curve],
        "best_mean_accuracy": best,
        "rounds_to_90pct_of_best": None if to90 is None else rounds[to90],
        "ea": {
            "rounds": per_seed[0]["ea_rounds"],
            "curves": [s["ea_curve"] for s in per_seed],
        },
    }


def predictions_csv_text(predictions: np.ndarray, labels: np.ndarray) -> str:
    lines = ["index,label,prediction"]
    for i, (y, p) in enumerate(zip(labels, predictions)):
        lines.append(f"{i},{y},{p}")
    return "\n".join(lines) + "\n"


def write_seed_outputs(seed_dir: Path, result: engine.ExperimentResult, test: Dataset, seed: int) -> dict:
    seed_dir.mkdir(parents=True, exist_ok=True)
    (seed_dir / "rounds.csv").write_text(
        rounds_csv_text(result.records, test.num_classes)
    )
    summary = seed_summary(result, seed)
    (seed_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    nn.save_model(result.final_model, seed_dir / "final_model.bin")
    (seed_dir / "final_predictions.csv").write_text(
        predictions_csv_text(result.final_predictions, test.labels)
    )
    if result.pre_post:
        rows = [
            {
                "client_id": r.client_id,
                "pre": [None if math.isnan(v) else v for v in r.pre],
                "post": [None if math.isnan(v) else v for v in r.post],
                "counts": [int(c) for c in r.counts],
            }
            for r in result.pre_post
        ]
        (seed_dir / "pre_post.json").write_text(json.dumps(rows, indent=2) + "\n")
    return summary


def run(cfg: ExperimentConfig, render_figures: bool = True) -> dict:
    """Execute every seed of the config and persist all artifacts.

    Returns the cross-seed method summary (also written to summary.json).
    """
    if not cfg.output_dir:
        raise ConfigError("config.output_dir: required (or pass --output)")
    method_dir = Path(cfg.output_dir) / method_to_string(cfg.method).replace(":", "_")
    method_dir.mkdir(parents=True, exist_ok=True)
    (method_dir / "config.json").write_text(config_to_json(cfg))

    per_seed = []
    results = []
    for seed in cfg.seeds:
        train, test = load_datasets(cfg, seed)
        partition = build_partition(cfg, train, seed)
        result = engine.run_experiment(round_config(cfg), train, test, partition, seed)
        per_seed.append(write_seed_outputs(method_dir / f"seed{seed}", result, test, seed))
        results.append(result)

    summary = method_summary(cfg, per_seed)
    (method_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if render_figures:
        report.render_method_figures(method_dir / "figures", summary, results)
    return summary


@dataclass
class CompareReport:
    """Margins of b over a, plus convergence speedup vs a's target."""

    method_a: str
    method_b: str
    accuracy_margin: float
    macro_f1_margin: float
    target_accuracy: float
    rounds_a: int | None
    rounds_b: int | None
    speedup: float | None

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "accuracy_margin": self.accuracy_margin,
            "macro_f1_margin": self.macro_f1_margin,
            "target_accuracy": self.target_accuracy,
            "rounds_to_target_a": self.rounds_a,
            "rounds_to_target_b": self.rounds_b,
            "speedup": self.speedup,
        }


def load_summary(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    with open(path) as f:
        return json.load(f)


def compare(summary_a: dict, summary_b: dict) -> CompareReport:
    """Accuracy/F1 margins and the convergence speedup of b relative to a.

    The target is 90% of the reference's (a's) best mean accuracy; speedup is
    rounds_a / rounds_b on the mean curves, None when b never reaches it.
    """
    if summary_a["task"] != summary_b["task"]:
        raise ComparisonError(
            "summaries describe different tasks; refusing to compare "
            f"({summary_a['method']} vs {summary_b['method']})"
        )

    target = SPEEDUP_TARGET_FRACTION * summary_a["best_mean_accuracy"]

    def rounds_to(summary) -> int | None:
        idx = metrics.iterations_to_fraction(summary["accuracy_curve_mean"], target)
        return None if idx is None else summary["rounds"][idx]

    ra, rb = rounds_to(summary_a), rounds_to(summary_b)
    speedup = None
    if ra is not None and rb is not None and rb > 0:
        speedup = ra / rb
    return CompareReport(
        method_a=summary_a["method"],
        method_b=summary_b["method"],
        accuracy_margin=summary_b["accuracy_mean"] - summary_a["accuracy_mean"],
        macro_f1_margin=summary_b["macro_f1_mean"] - summary_a["macro_f1_mean"],
        target_accuracy=target,
        rounds_a=ra,
        rounds_b=rb,
        speedup=speedup,
    )
