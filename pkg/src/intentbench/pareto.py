"""Pareto frontier analysis over model variants (accuracy / speed / memory).

Dominance is the standard weak form: p dominates q when p is at least as good
on every objective and strictly better on at least one. Points with identical
objective vectors never dominate each other, so exact ties all stay on the
frontier.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path


class EmptyInput(ValueError):
    pass


class BadObjective(ValueError):
    pass


class UnsupportedFormat(ValueError):
    pass


_METRICS = ("accuracy", "speed", "memory")
_DEFAULT_DIRECTIONS = {"accuracy": "maximize", "speed": "maximize", "memory": "minimize"}


@dataclass(frozen=True)
class VariantPoint:
    """One model variant's position in objective space."""

    name: str
    accuracy: float
    speed: float    # tokens/second
    memory: float   # bytes

    def __post_init__(self) -> None:
        for metric in _METRICS:
            value = getattr(self, metric)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{self.name}: {metric} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class Objective:
    metric: str
    direction: str

    def __post_init__(self) -> None:
        if self.metric not in _METRICS:
            raise BadObjective(f"unknown metric {self.metric!r}")
        if self.direction not in ("maximize", "minimize"):
            raise BadObjective(f"unknown direction {self.direction!r}")

    @classmethod
    def default(cls, metric: str) -> Objective:
        if metric not in _DEFAULT_DIRECTIONS:
            raise BadObjective(f"unknown metric {metric!r}")
        return cls(metric, _DEFAULT_DIRECTIONS[metric])


DEFAULT_OBJECTIVES = (Objective.default("accuracy"), Objective.default("speed"))


@dataclass(frozen=True)
class FrontierResult:
    """Input points partitioned into frontier members and dominated points."""

    points: tuple[VariantPoint, ...]
    objectives: tuple[Objective, ...]
    on_frontier: tuple[bool, ...]
    dominated_by: tuple[VariantPoint | None, ...]  # one witness per dominated point

    @property
    def frontier(self) -> tuple[VariantPoint, ...]:
        return tuple(p for p, keep in zip(self.points, self.on_frontier) if keep)

    @property
    def dominated(self) -> tuple[VariantPoint, ...]:
        return tuple(p for p, keep in zip(self.points, self.on_frontier) if not keep)


def _score_vector(point: VariantPoint, objectives: tuple[Objective, ...]) -> tuple[float, ...]:
    # Flip minimized metrics so "greater is better" holds uniformly.
    return tuple(
        getattr(point, obj.metric) if obj.direction == "maximize" else -getattr(point, obj.metric)
        for obj in objectives
    )


def dominates(p: tuple[float, ...], q: tuple[float, ...]) -> bool:
    """Weak Pareto dominance on already-oriented score vectors."""
    return all(a >= b for a, b in zip(p, q)) and any(a > b for a, b in zip(p, q))


def compute_frontier(
    points: list[VariantPoint],
    objectives: tuple[Objective, ...] = DEFAULT_OBJECTIVES,
) -> FrontierResult:
    """Partition points into the non-dominated frontier and a witnessed dominated set."""
    if not points:
        raise EmptyInput("no variant points given")
    if len(objectives) < 2:
        raise BadObjective("need at least 2 objectives")
    seen = set()
    for obj in objectives:
        if obj.metric in seen:
            raise BadObjective(f"duplicate objective metric {obj.metric!r}")
        seen.add(obj.metric)

    scores = [_score_vector(p, tuple(objectives)) for p in points]
    ranges = [
        max(s[k] for s in scores) - min(s[k] for s in scores)
        for k in range(len(objectives))
    ]

    def margin(winner: tuple[float, ...], loser: tuple[float, ...]) -> float:
        # worst-case normalized advantage; the witness with the widest margin
        # is the clearest counterexample to picking the dominated point
        return min(
            (w - l) / r if r > 0 else 0.0
            for w, l, r in zip(winner, loser, ranges)
        )

    on_frontier: list[bool] = []
    witnesses: list[VariantPoint | None] = []
    for i, score_i in enumerate(scores):
        best_j = None
        best_margin = -math.inf
        for j, score_j in enumerate(scores):
            if i != j and dominates(score_j, score_i):
                candidate = margin(score_j, score_i)
                if candidate > best_margin:
                    best_margin, best_j = candidate, j
        on_frontier.append(best_j is None)
        witnesses.append(points[best_j] if best_j is not None else None)
    return FrontierResult(tuple(points), tuple(objectives), tuple(on_frontier), tuple(witnesses))


# --------------------------------------------------------------------------
# loading and reporting
# --------------------------------------------------------------------------

_CSV_COLUMNS = ["name", "accuracy", "speed_tps", "memory_bytes", "on_frontier", "dominated_by"]


def load_points(path: str | Path) -> list[VariantPoint]:
    """Read variant points from JSON (list of objects) or CSV (emitted columns)."""
    path = Path(path)
    if path.suffix.lower() not in (".json", ".csv"):
        raise UnsupportedFormat(f"cannot load points from {path.suffix!r} (use .json or .csv)")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        raw = json.loads(text)
        return [
            VariantPoint(r["name"], float(r["accuracy"]), float(r["speed_tps"]), float(r["memory_bytes"]))
            for r in raw
        ]
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        VariantPoint(r["name"], float(r["accuracy"]), float(r["speed_tps"]), float(r["memory_bytes"]))
        for r in rows
    ]


def recommendations(result: FrontierResult) -> dict:
    """Name the max-accuracy and max-speed points of the frontier."""
    frontier = result.frontier
    best_accuracy = max(frontier, key=lambda p: (p.accuracy, p.speed))
    best_speed = max(frontier, key=lambda p: (p.speed, p.accuracy))
    return {"max_accuracy": best_accuracy.name, "max_speed": best_speed.name}


def emit_tradeoff_report(result: FrontierResult, fmt: str = "text") -> str:
    """Render the frontier as a ranked table ("text"), plot-ready "csv", or "json"."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for point, keep, witness in zip(result.points, result.on_frontier, result.dominated_by):
            writer.writerow([
                point.name,
                repr(point.accuracy),
                repr(point.speed),
                repr(point.memory),
                keep,
                witness.name if witness else "",
            ])
        return buf.getvalue()

    if fmt == "json":
        recs = recommendations(result)
        return json.dumps(
            {
                "objectives": [{"metric": o.metric, "direction": o.direction} for o in result.objectives],
                "points": [
                    {
                        "name": p.name,
                        "accuracy": p.accuracy,
                        "speed_tps": p.speed,
                        "memory_bytes": p.memory,
                        "on_frontier": keep,
                        "dominated_by": witness.name if witness else None,
                    }
                    for p, keep, witness in zip(result.points, result.on_frontier, result.dominated_by)
                ],
                "recommendations": recs,
            },
            indent=2,
        )

    if fmt == "text":
        # frontier first (by accuracy, then speed), dominated points below
        order = sorted(
            range(len(result.points)),
            key=lambda i: (
                not result.on_frontier[i],
                -result.points[i].accuracy,
                -result.points[i].speed,
            ),
        )
        lines = [
            f"{'variant':<14} {'accuracy':>8} {'tok/s':>8} {'mem (GiB)':>10}  {'frontier':<8} dominated by",
        ]
        for i in order:
            point = result.points[i]
            witness = result.dominated_by[i]
            lines.append(
                f"{point.name:<14} {point.accuracy:>8.2f} {point.speed:>8.1f} "
                f"{point.memory / 2**30:>10.2f}  {'yes' if result.on_frontier[i] else 'no':<8} "
                f"{witness.name if witness else '-'}"
            )
        recs = recommendations(result)
        lines.append(f"recommendation (max accuracy): {recs['max_accuracy']}")
        lines.append(f"recommendation (max speed)   : {recs['max_speed']}")
        return "\n".join(lines)

    raise UnsupportedFormat(f"unknown report format {fmt!r}")
