"""Challenge-style ranking: per-metric ranks, averaged within categories, then across categories."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

CATEGORIES = ("nonintrusive", "intrusive", "downstream_independent", "downstream_dependent")
DIRECTIONS = ("higher_better", "lower_better")
CSV_HEADER = ["model", "metric", "category", "direction", "value"]


class MetricTableError(ValueError):
    """Invalid metric table; ``line`` is the 1-based CSV line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class MetricTable:
    models: list
    metrics: list
    values: np.ndarray  # models x metrics
    directions: dict
    categories: dict

    def __post_init__(self):
        self.models = list(self.models)
        self.metrics = list(self.metrics)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.models), len(self.metrics)):
            raise MetricTableError(
                f"values shape {self.values.shape} does not match {len(self.models)} models x {len(self.metrics)} metrics")
        if len(set(self.models)) != len(self.models) or len(set(self.metrics)) != len(self.metrics):
            raise MetricTableError("model and metric names must be unique")
        for m in self.metrics:
            if self.directions.get(m) not in DIRECTIONS:
                raise MetricTableError(f"metric {m!r} needs a direction in {DIRECTIONS}")
            if self.categories.get(m) not in CATEGORIES:
                raise MetricTableError(f"metric {m!r} needs a category in {CATEGORIES}")
        bad = np.argwhere(~np.isfinite(self.values))
        if len(bad):
            i, j = bad[0]
            raise MetricTableError(f"missing or non-finite value for model {self.models[i]!r}, metric {self.metrics[j]!r}")

    def category_members(self) -> dict:
        out: dict[str, list[int]] = {}
        for j, m in enumerate(self.metrics):
            out.setdefault(self.categories[m], []).append(j)
        return out


@dataclass
class RankingResult:
    models: list
    metrics: list
    metric_ranks: np.ndarray  # models x metrics
    categories: list
    category_ranks: np.ndarray  # models x categories
    overall: np.ndarray

    def order(self) -> list[int]:
        """Model indices sorted by overall score (ascending), ties by name."""
        return sorted(range(len(self.models)), key=lambda i: (self.overall[i], self.models[i]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank_position", "model", "overall"] + [f"cat:{c}" for c in self.categories]
                   + [f"rank:{m}" for m in self.metrics])
        for pos, i in enumerate(self.order(), 1):
            w.writerow([pos, self.models[i], _fmt(self.overall[i])]
                       + [_fmt(v) for v in self.category_ranks[i]] + [_fmt(v) for v in self.metric_ranks[i]])
        return buf.getvalue()

    def pretty(self) -> str:
        head = ["model", "overall"] + list(self.categories)
        rows = [[self.models[i], _fmt(self.overall[i])] + [_fmt(v) for v in self.category_ranks[i]]
                for i in self.order()]
        widths = [max(len(str(r[k])) for r in [head] + rows) for k in range(len(head))]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in rows]
        return "\n".join(lines)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def rank_column(values, direction: str) -> np.ndarray:
    """Ranks 1..n with rank 1 for the best value; ties share their average rank."""
    v = np.asarray(values, dtype=np.float64)
    if direction not in DIRECTIONS:
        raise MetricTableError(f"direction must be one of {DIRECTIONS}")
    return rankdata(-v if direction == "higher_better" else v, method="average")


def rank_models(table: MetricTable, category_order=None) -> RankingResult:
    if len(table.models) < 2:
        raise MetricTableError("ranking needs at least two models")
    members = table.category_members()
    cats = list(category_order) if category_order is not None else [c for c in CATEGORIES if c in members]
    for c in cats:
        if not members.get(c):
            raise MetricTableError(f"category {c!r} has no metrics")
    ranks = np.column_stack([rank_column(table.values[:, j], table.directions[m])
                             for j, m in enumerate(table.metrics)])
    # ranks are half-integers, so the means are rationals; compute them exactly and round once
    exact = [[Fraction(sum(Fraction(r) for r in ranks[i, members[c]]), len(members[c])) for c in cats]
             for i in range(len(table.models))]
    cat_ranks = np.array([[float(v) for v in row] for row in exact])
    overall = np.array([float(sum(row) / len(row)) for row in exact])
    return RankingResult(table.models, table.metrics, ranks, cats, cat_ranks, overall)


# -- CSV I/O ----------------------------------------------------------------------


def parse_metric_table(text: str) -> MetricTable:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise MetricTableError("empty table", 1)
    header = [h.strip() for h in rows[0]]
    if header != CSV_HEADER:
        raise MetricTableError(f"header must be {','.join(CSV_HEADER)}", 1)
    cells: dict[tuple[str, str], float] = {}
    models: list[str] = []
    metrics: list[str] = []
    directions: dict[str, str] = {}
    categories: dict[str, str] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise MetricTableError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno)
        model, metric, cat, direction, raw = (c.strip() for c in row)
        if not model or not metric:
            raise MetricTableError("model and metric must be non-empty", lineno)
        if cat not in CATEGORIES:
            raise MetricTableError(f"unknown category {cat!r}", lineno)
        if direction not in DIRECTIONS:
            raise MetricTableError(f"unknown direction {direction!r}", lineno)
        if raw == "":
            raise MetricTableError(f"missing value for model {model!r}, metric {metric!r}", lineno)
        try:
            value = float(raw)
        except ValueError:
            raise MetricTableError(f"value {raw!r} is not a number", lineno) from None
        if not np.isfinite(value):
            raise MetricTableError(f"non-finite value for model {model!r}, metric {metric!r}", lineno)
        if metric in directions and (directions[metric], categories[metric]) != (direction, cat):
            raise MetricTableError(f"metric {metric!r} redeclared with a different category/direction", lineno)
        if (model, metric) in cells:
            raise MetricTableError(f"duplicate cell for model {model!r}, metric {metric!r}", lineno)
        directions[metric], categories[metric] = direction, cat
        if model not in models:
            models.append(model)
        if metric not in metrics:
            metrics.append(metric)
        cells[(model, metric)] = value
    values = np.empty((len(models), len(metrics)))
    for i, mo in enumerate(models):
        for j, me in enumerate(metrics):
            if (mo, me) not in cells:
                raise MetricTableError(f"missing value for model {mo!r}, metric {me!r}")
            values[i, j] = cells[(mo, me)]
    return MetricTable(models, metrics, values, directions, categories)


def read_metric_table(path: str | Path) -> MetricTable:
    return parse_metric_table(Path(path).read_text(encoding="utf-8"))


def table_to_csv(table: MetricTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, mo in enumerate(table.models):
        for j, me in enumerate(table.metrics):
            w.writerow([mo, me, table.categories[me], table.directions[me], repr(float(table.values[i, j]))])
    return buf.getvalue()
