"""Correlation between perception quality and language misalignment.

One point per condition by default (clean plus the nine degraded variants);
a per-image mode exists at the harness level. Coefficients are reported with
their sample size and without p-values: n is tiny by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence


class CorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class PairedSeries:
    labels: tuple[str, ...]
    q: tuple[float, ...]
    l: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.labels) == len(self.q) == len(self.l)):
            raise ValueError(
                f"length mismatch: {len(self.labels)} labels, {len(self.q)} q, {len(self.l)} l"
            )
        for name, values in (("q", self.q), ("l", self.l)):
            bad = [v for v in values if not math.isfinite(v)]
            if bad:
                raise ValueError(f"non-finite values in {name}: {bad}")

    def __len__(self) -> int:
        return len(self.labels)


def _pearson_values(q: Sequence[float], l: Sequence[float]) -> float:
    n = len(q)
    mq = sum(q) / n
    ml = sum(l) / n
    dq = [x - mq for x in q]
    dl = [y - ml for y in l]
    vq = sum(x * x for x in dq)
    vl = sum(y * y for y in dl)
    if vq == 0.0:
        raise CorrelationError("undefined correlation: q series is constant")
    if vl == 0.0:
        raise CorrelationError("undefined correlation: l series is constant")
    r = sum(x * y for x, y in zip(dq, dl)) / math.sqrt(vq * vl)
    return max(-1.0, min(1.0, r))


def pearson(series: PairedSeries) -> float:
    """Sample Pearson coefficient, clamped into [-1, 1]."""
    if len(series) < 3:
        raise CorrelationError(f"need at least 3 points, got {len(series)}")
    return _pearson_values(series.q, series.l)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their rank positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = mean_rank
        i = j + 1
    return ranks


def spearman(series: PairedSeries) -> float:
    """Pearson coefficient of the average-ranked data."""
    if len(series) < 3:
        raise CorrelationError(f"need at least 3 points, got {len(series)}")
    return _pearson_values(average_ranks(series.q), average_ranks(series.l))


@dataclass(frozen=True)
class CorrelationCell:
    q_metric: str
    l_metric: str
    pearson: float | None
    spearman: float | None
    n: int

    @property
    def defined(self) -> bool:
        return self.pearson is not None


@dataclass(frozen=True)
class ScatterPoint:
    q_metric: str
    l_metric: str
    label: str
    q: float
    l: float


def correlate_conditions(
    table: Mapping[str, Mapping[str, float]],
    q_metrics: Sequence[str] = ("miou",),
    l_metrics: Sequence[str] = ("hr", "cor", "smr"),
) -> tuple[list[CorrelationCell], list[ScatterPoint]]:
    """Both coefficients for every (Q, L) metric pair plus scatter points.

    ``table`` maps a condition label to its metric values; conditions missing
    either metric of a pair are dropped from that pair. Fewer than 3 usable
    conditions for a pair is an error naming what is missing; a constant
    series yields an undefined cell without affecting the others.
    """
    cells: list[CorrelationCell] = []
    points: list[ScatterPoint] = []
    for qm in q_metrics:
        for lm in l_metrics:
            usable = [
                (label, row[qm], row[lm])
                for label, row in table.items()
                if row.get(qm) is not None and row.get(lm) is not None
            ]
            if len(usable) < 3:
                missing = sorted(
                    label for label, row in table.items()
                    if row.get(qm) is None or row.get(lm) is None
                )
                raise CorrelationError(
                    f"({qm}, {lm}): only {len(usable)} conditions have both values; "
                    f"missing data for {missing}"
                )
            series = PairedSeries(
                labels=tuple(label for label, _, _ in usable),
                q=tuple(q for _, q, _ in usable),
                l=tuple(l for _, _, l in usable),
            )
            try:
                cell = CorrelationCell(qm, lm, pearson(series), spearman(series), len(series))
            except CorrelationError:
                cell = CorrelationCell(qm, lm, None, None, len(series))
            cells.append(cell)
            points.extend(
                ScatterPoint(qm, lm, label, q, l) for label, q, l in usable
            )
    return cells, points
