"""Per-class accuracy reports and multi-run mean/std aggregation.

The primary number is the unweighted class-mean accuracy (the usual
convention for synthetic-to-real benchmarks with per-class tables);
sample-weighted overall accuracy is reported alongside it. Aggregation
across runs uses the population standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .classifier import classify
from .data import DomainDataset, iter_batches


@dataclass(frozen=True)
class MetricsReport:
    """Single-run evaluation: per-class accuracy percentages and means."""

    per_class_accuracy: dict
    mean_accuracy: float
    overall_accuracy: float
    n_samples: int
    run_seed: int

    @property
    def class_names(self) -> tuple:
        return tuple(self.per_class_accuracy.keys())

    def to_dict(self) -> dict:
        return {
            "per_class_accuracy": dict(self.per_class_accuracy),
            "mean_accuracy": self.mean_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "n_samples": self.n_samples,
            "run_seed": self.run_seed,
        }


@dataclass(frozen=True)
class AggregateReport:
    """(mean, population std) per class and for the class-mean, over >= 2 runs."""

    per_class: dict  # class_name -> (mean, std)
    mean: tuple
    n_runs: int

    @property
    def class_names(self) -> tuple:
        return tuple(self.per_class.keys())


def evaluate(
    cm: torch.nn.Module,
    dataset: DomainDataset,
    batch_size: int = 32,
    input_size: int = 224,
    run_seed: int = 0,
) -> MetricsReport:
    """Argmax predictions over the dataset; per-class and mean accuracies.

    Deterministic and invariant to batch_size (counts are accumulated).
    """
    if getattr(cm, "num_classes", dataset.num_classes) != dataset.num_classes:
        raise ValueError(
            f"classifier has {cm.num_classes} classes but dataset has {dataset.num_classes}"
        )
    was_training = cm.training
    cm.eval()
    correct = np.zeros(dataset.num_classes, dtype=np.int64)
    total = np.zeros(dataset.num_classes, dtype=np.int64)
    with torch.no_grad():
        for batch in iter_batches(dataset, batch_size, size=input_size):
            preds = classify(cm, batch).argmax(dim=1)
            for pred, label in zip(preds.tolist(), batch.labels.tolist()):
                total[label] += 1
                if pred == label:
                    correct[label] += 1
    if was_training:
        cm.train()
    per_class = {
        name: 100.0 * correct[i] / total[i] if total[i] else 0.0
        for i, name in enumerate(dataset.class_names)
    }
    values = np.array(list(per_class.values()), dtype=np.float64)
    return MetricsReport(
        per_class_accuracy=per_class,
        mean_accuracy=float(values.mean()),
        overall_accuracy=float(100.0 * correct.sum() / max(1, total.sum())),
        n_samples=int(total.sum()),
        run_seed=run_seed,
    )


def aggregate_runs(reports: list[MetricsReport]) -> AggregateReport:
    """Combine per-run reports into (mean, population std) pairs."""
    if len(reports) < 2:
        raise ValueError(f"need at least 2 reports to aggregate, got {len(reports)}")
    names = reports[0].class_names
    for r in reports[1:]:
        if r.class_names != names:
            raise ValueError("reports have mismatched class sets")
    per_class = {}
    for name in names:
        vals = np.array([r.per_class_accuracy[name] for r in reports], dtype=np.float64)
        per_class[name] = (float(vals.mean()), float(vals.std()))
    means = np.array([r.mean_accuracy for r in reports], dtype=np.float64)
    return AggregateReport(
        per_class=per_class,
        mean=(float(means.mean()), float(means.std())),
        n_runs=len(reports),
    )


def _cell(pair: tuple) -> str:
    return f"{pair[0]:.2f} ± {pair[1]:.2f}"


def render_table(agg: AggregateReport, fmt: str = "csv", label: str = "") -> str:
    """One row of 'mean ± std' cells in class order, then Mean and n_runs."""
    headers = list(agg.class_names) + ["Mean", "n_runs"]
    cells = [_cell(agg.per_class[n]) for n in agg.class_names] + [_cell(agg.mean), str(agg.n_runs)]
    if label:
        headers = ["method"] + headers
        cells = [label] + cells
    if fmt == "csv":
        return ",".join(headers) + "\n" + ",".join(cells) + "\n"
    if fmt == "markdown":
        return (
            "| " + " | ".join(headers) + " |\n"
            + "|" + "|".join(["---"] * len(headers)) + "|\n"
            + "| " + " | ".join(cells) + " |\n"
        )
    raise ValueError(f"unknown table format: {fmt!r}")


def render_report(report: MetricsReport, fmt: str = "csv") -> str:
    """Single-run table: per-class percentages, class-mean, overall."""
    headers = list(report.class_names) + ["Mean", "Overall", "n_samples"]
    cells = [f"{report.per_class_accuracy[n]:.2f}" for n in report.class_names]
    cells += [f"{report.mean_accuracy:.2f}", f"{report.overall_accuracy:.2f}", str(report.n_samples)]
    if fmt == "csv":
        return ",".join(headers) + "\n" + ",".join(cells) + "\n"
    if fmt == "markdown":
        return (
            "| " + " | ".join(headers) + " |\n"
            + "|" + "|".join(["---"] * len(headers)) + "|\n"
            + "| " + " | ".join(cells) + " |\n"
        )
    raise ValueError(f"unknown table format: {fmt!r}")
