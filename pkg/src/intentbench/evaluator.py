"""Dataset evaluation: prompt, score with exact match, aggregate breakdowns.

Backend calls run on a bounded thread pool; outcomes are merged back in
dataset order, so the report is identical at any request parallelism for a
deterministic backend. Transport failures score as BackendError mismatches
rather than being excluded (exclusion would inflate accuracy); the report
also carries the failure-free accuracy alongside.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import (
    PROMPT_INSTRUCTION,
    BackendConfig,
    BackendFailure,
    build_fewshot_prompt,
    complete,
)
from .datagen import Dataset, Example
from .records import ErrorClass, MatchOutcome, backend_error_outcome, canonical_serialize, exact_match


class EmptyDataset(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DomainError(ValueError):
    pass


# Scoring policy note echoed into reports: model output may wrap the JSON in
# prose; the first balanced JSON object found is the one scored.
EXTRACTION_POLICY = "first-balanced-json-object"


@dataclass(frozen=True)
class EvalConfig:
    """Prompting and scoring options for one evaluation run."""

    fewshot_k: int = 0
    shots: tuple[Example, ...] = ()   # demonstration pool (required when fewshot_k > 0)
    prompt_mode: str = "instruction"  # "instruction" (+ demos) | "bare" (utterance only)
    seed: int = 0
    parallelism: int = 4
    normalize_product: bool = False

    def validate(self) -> None:
        if self.prompt_mode not in ("instruction", "bare"):
            raise ConfigError(f"unknown prompt_mode {self.prompt_mode!r}")
        if self.fewshot_k < 0:
            raise ConfigError("fewshot_k must be >= 0")
        if self.fewshot_k > 0 and len(self.shots) < self.fewshot_k:
            raise ConfigError("not enough shots for the requested fewshot_k")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    def fingerprint_payload(self) -> dict:
        # parallelism deliberately excluded: it cannot affect results
        return {
            "fewshot_k": self.fewshot_k,
            "n_shots": len(self.shots),
            "prompt_mode": self.prompt_mode,
            "seed": self.seed,
            "normalize_product": self.normalize_product,
            "instruction": PROMPT_INSTRUCTION,
            "extraction_policy": EXTRACTION_POLICY,
        }


@dataclass(frozen=True)
class EvalReport:
    """Aggregated exact-match results with per-language and error breakdowns."""

    n_total: int
    n_matched: int
    accuracy: float
    ci95: tuple[float, float]
    per_language: dict
    error_counts: dict  # ErrorClass value -> count, non-matching classes only
    per_item: tuple     # ordered (example id, MatchOutcome) pairs
    config_fingerprint: str
    name: str = ""

    @property
    def n_backend_failures(self) -> int:
        return self.error_counts.get(ErrorClass.BACKEND_ERROR.value, 0)

    @property
    def accuracy_excluding_failures(self) -> float:
        scored = self.n_total - self.n_backend_failures
        return self.n_matched / scored if scored else 0.0

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "n_total": self.n_total,
            "n_matched": self.n_matched,
            "accuracy": self.accuracy,
            "accuracy_excluding_failures": self.accuracy_excluding_failures,
            "n_backend_failures": self.n_backend_failures,
            "ci95": {"low": self.ci95[0], "high": self.ci95[1]},
            "per_language": self.per_language,
            "error_counts": self.error_counts,
            "config_fingerprint": self.config_fingerprint,
            "extraction_policy": EXTRACTION_POLICY,
            "instruction": PROMPT_INSTRUCTION,
            "per_item": [
                {
                    "id": item_id,
                    "matched": outcome.matched,
                    "error_class": outcome.error_class.value,
                    "predicted": canonical_serialize(outcome.predicted) if outcome.predicted else None,
                }
                for item_id, outcome in self.per_item
            ],
        }


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion k/n at critical value z."""
    if n < 1 or not 0 <= k <= n or z <= 0:
        raise DomainError(f"invalid arguments k={k}, n={n}, z={z}")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    low = 0.0 if k == 0 else max(0.0, center - half)
    high = 1.0 if k == n else min(1.0, center + half)
    return (low, high)


def aggregate_report(
    items: list[tuple[int, Example, MatchOutcome]],
    config_fingerprint: str = "",
    name: str = "",
) -> EvalReport:
    """Build the report from (id, example, outcome) triples; order-insensitive."""
    if not items:
        raise EmptyDataset("nothing to aggregate")
    ordered = sorted(items, key=lambda item: item[0])

    n_total = len(ordered)
    n_matched = sum(1 for _, _, outcome in ordered if outcome.matched)
    error_counts: dict[str, int] = {}
    lang_totals: dict[str, list[int]] = {}
    for _, example, outcome in ordered:
        totals = lang_totals.setdefault(example.language, [0, 0])
        totals[0] += 1
        totals[1] += int(outcome.matched)
        if not outcome.matched:
            key = outcome.error_class.value
            error_counts[key] = error_counts.get(key, 0) + 1

    return EvalReport(
        n_total=n_total,
        n_matched=n_matched,
        accuracy=n_matched / n_total,
        ci95=wilson_interval(n_matched, n_total),
        per_language={lang: matched / total for lang, (total, matched) in sorted(lang_totals.items())},
        error_counts=dict(sorted(error_counts.items())),
        per_item=tuple((item_id, outcome) for item_id, _, outcome in ordered),
        config_fingerprint=config_fingerprint,
        name=name,
    )


def _config_fingerprint(backend: BackendConfig, config: EvalConfig) -> str:
    payload = {
        "backend": {
            "kind": backend.kind,
            "endpoint_url": backend.endpoint_url,
            "model_name": backend.model_name,
            "command_template": backend.command_template,
            "temperature": backend.temperature,
            "max_tokens": backend.max_tokens,
            "catalog_path": backend.catalog_path,
        },
        "eval": config.fingerprint_payload(),
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def evaluate_dataset(
    ds: Dataset,
    backend: BackendConfig,
    config: EvalConfig | None = None,
    name: str = "",
) -> EvalReport:
    """Prompt every example, score with exact match, aggregate in dataset order."""
    if len(ds) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    config = config or EvalConfig()
    config.validate()
    backend.validate()

    def prompt_for(example: Example) -> str:
        if config.prompt_mode == "bare":
            return example.input
        return build_fewshot_prompt(
            list(config.shots), example.input, config.fewshot_k, seed=config.seed
        )

    def score_one(indexed: tuple[int, Example]) -> tuple[int, Example, MatchOutcome]:
        idx, example = indexed
        try:
            result = complete(backend, prompt_for(example))
        except BackendFailure:
            return idx, example, backend_error_outcome()
        outcome = exact_match(
            result.text, example.output, normalize_product=config.normalize_product
        )
        return idx, example, outcome

    indexed = list(enumerate(ds))
    if config.parallelism == 1:
        items = [score_one(pair) for pair in indexed]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            items = list(pool.map(score_one, indexed))

    return aggregate_report(items, _config_fingerprint(backend, config), name=name)


def report_table(report: EvalReport) -> str:
    """Human-readable summary table."""
    lines = [
        f"exact-match accuracy : {report.accuracy:.3f}  ({report.n_matched}/{report.n_total})",
        f"95% Wilson interval  : [{report.ci95[0]:.3f}, {report.ci95[1]:.3f}]",
    ]
    if report.n_backend_failures:
        lines.append(
            f"excluding failures   : {report.accuracy_excluding_failures:.3f}"
            f"  ({report.n_backend_failures} backend failures counted as misses)"
        )
    if report.per_language:
        lines.append("per language:")
        for language, accuracy in report.per_language.items():
            lines.append(f"  {language:<8} {accuracy:.3f}")
    if report.error_counts:
        lines.append("error classes:")
        for error_class, count in report.error_counts.items():
            lines.append(f"  {error_class:<18} {count}")
    return "\n".join(lines)


def per_item_csv(report: EvalReport, ds: Dataset) -> str:
    """CSV of per-item rows: id, language, matched, error_class, gold, predicted."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "language", "matched", "error_class", "gold", "predicted"])
    for item_id, outcome in report.per_item:
        example = ds[item_id]
        writer.writerow([
            item_id,
            example.language,
            outcome.matched,
            outcome.error_class.value,
            canonical_serialize(example.output),
            canonical_serialize(outcome.predicted) if outcome.predicted else "",
        ])
    return buf.getvalue()
