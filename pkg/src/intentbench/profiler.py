"""Operational profiling of model variants: load time, throughput, memory, energy.

Measurements wrap any backend reachable through `backends.complete`. Memory is
the resident set size of the backend's subprocess tree, sampled from a
background thread; power comes from a pluggable external probe command (one
"watts[,mebibytes]" line per invocation, which is what an nvidia-smi query
prints) or an OS energy counter file. When no source is configured the energy
fields stay absent - never zero.
"""

from __future__ import annotations

import math
import statistics
import subprocess
import threading
import time
from dataclasses import dataclass, replace

import psutil

from .backends import BackendConfig, BackendFailure, Timeout, complete


class InsufficientSamples(ValueError):
    pass


class NonMonotonicTimestamps(ValueError):
    pass


class MissingField(ValueError):
    """A comparison asked for a field one of the reports does not carry."""


@dataclass(frozen=True)
class PowerSample:
    timestamp: float  # seconds, monotonic clock
    power: float      # Watts

    def __post_init__(self) -> None:
        if self.power < 0:
            raise ValueError("power must be >= 0")


def integrate_power(trace: list[PowerSample]) -> float:
    """Trapezoidal integral of power over time, in Joules."""
    if len(trace) < 2:
        raise InsufficientSamples("need at least 2 samples to integrate")
    for earlier, later in zip(trace, trace[1:]):
        if later.timestamp <= earlier.timestamp:
            raise NonMonotonicTimestamps(
                f"timestamps must strictly increase ({earlier.timestamp} -> {later.timestamp})"
            )
    return 0.5 * math.fsum(
        (earlier.power + later.power) * (later.timestamp - earlier.timestamp)
        for earlier, later in zip(trace, trace[1:])
    )


def peak_memory_bytes(samples: list[int]) -> int | None:
    """Max fold over memory samples; None when nothing useful was observed."""
    positive = [s for s in samples if s > 0]
    return max(positive) if positive else None


@dataclass(frozen=True)
class PerfReport:
    """Aggregated operational profile of one model variant.

    Throughput and energy-per-token are derived properties of the stored
    totals, so the rational identities (tps * elapsed = tokens) hold exactly.
    """

    variant_name: str
    tokens_generated: int
    elapsed: float  # seconds across measured passes
    load_time: float = 0.0
    peak_memory: int | None = None  # bytes; None when unobservable (e.g. http backend)
    energy: float | None = None     # Joules; None when no power source configured
    token_count_exact: bool = False
    run_count: int = 1
    per_run_throughputs: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.elapsed <= 0:
            raise ValueError("elapsed must be positive")
        if self.tokens_generated < 0 or self.load_time < 0:
            raise ValueError("tokens_generated and load_time must be >= 0")
        if self.peak_memory is not None and self.peak_memory < 0:
            raise ValueError("peak_memory must be >= 0")

    @property
    def tokens_per_second(self) -> float:
        return self.tokens_generated / self.elapsed

    @property
    def energy_per_token(self) -> float | None:
        if self.energy is None or self.tokens_generated == 0:
            return None
        return self.energy / self.tokens_generated

    @property
    def mean_throughput(self) -> float:
        return statistics.fmean(self.per_run_throughputs) if self.per_run_throughputs else self.tokens_per_second

    @property
    def median_throughput(self) -> float:
        return statistics.median(self.per_run_throughputs) if self.per_run_throughputs else self.tokens_per_second

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant_name,
            "load_s": self.load_time,
            "tokens_generated": self.tokens_generated,
            "elapsed_s": self.elapsed,
            "tok_s": self.tokens_per_second,
            "tok_s_mean": self.mean_throughput,
            "tok_s_median": self.median_throughput,
            "peak_mem_bytes": self.peak_memory,
            "energy_j": self.energy,
            "j_per_token": self.energy_per_token,
            "exact_tokens": self.token_count_exact,
            "run_count": self.run_count,
            "per_run_tok_s": list(self.per_run_throughputs),
            "throughput_convention": "generation-only (prompt processing excluded)",
        }


PERF_CSV_COLUMNS = ["variant", "load_s", "tok_s", "peak_mem_bytes", "energy_j", "j_per_token", "exact_tokens"]


def perf_csv_row(report: PerfReport) -> list[str]:
    return [
        report.variant_name,
        repr(report.load_time),
        repr(report.tokens_per_second),
        "" if report.peak_memory is None else str(report.peak_memory),
        "" if report.energy is None else repr(report.energy),
        "" if report.energy_per_token is None else repr(report.energy_per_token),
        str(report.token_count_exact),
    ]


# --------------------------------------------------------------------------
# background sampling
# --------------------------------------------------------------------------

class ResourceSampler:
    """Samples child-process RSS and (optionally) an external power probe.

    One tick per `interval`: probe first (synchronously, so its own process
    never pollutes the RSS sample), then the RSS of all child processes.
    """

    def __init__(
        self,
        interval: float = 0.1,
        power_cmd: str | None = None,
        sample_rss: bool = True,
    ):
        self.interval = interval
        self.power_cmd = power_cmd
        self.sample_rss = sample_rss
        self.power_trace: list[PowerSample] = []
        self.rss_samples: list[int] = []
        self.probe_memory_samples: list[int] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self, timeout: float = 2.0) -> None:
        self._stop.set()
        self._thread.join(timeout=timeout)

    def _run(self) -> None:
        while True:
            self._tick()
            if self._stop.wait(self.interval):
                return

    def _tick(self) -> None:
        if self.power_cmd:
            self._run_probe()
        if self.sample_rss:
            self.rss_samples.append(_children_rss())

    def _run_probe(self) -> None:
        try:
            proc = subprocess.run(
                self.power_cmd, shell=True, capture_output=True, timeout=self.interval * 10
            )
        except (OSError, subprocess.TimeoutExpired):
            return
        if proc.returncode != 0:
            return
        line = proc.stdout.decode("utf-8", errors="replace").strip().splitlines()
        if not line:
            return
        parts = [p.strip() for p in line[0].split(",")]
        try:
            watts = float(parts[0])
        except ValueError:
            return
        self.power_trace.append(PowerSample(time.monotonic(), max(watts, 0.0)))
        if len(parts) > 1:
            try:
                mebibytes = float(parts[1])
            except ValueError:
                return
            self.probe_memory_samples.append(int(mebibytes * 1024 * 1024))


def _children_rss() -> int:
    total = 0
    try:
        children = psutil.Process().children(recursive=True)
    except psutil.Error:
        return 0
    for child in children:
        try:
            total += child.memory_info().rss
        except psutil.Error:
            continue
    return total


def _read_energy_counter(path: str) -> float | None:
    """Read a RAPL-style cumulative counter in microjoules."""
    try:
        with open(path, encoding="ascii") as fh:
            return float(fh.read().strip())
    except (OSError, ValueError):
        return None


# --------------------------------------------------------------------------
# measurements
# --------------------------------------------------------------------------

def measure_load(
    backend: BackendConfig,
    probe_prompt: str = "ping",
    deadline: float = 60.0,
    poll_interval: float = 0.01,
) -> float:
    """Wall-clock seconds from start until the first successful probe completion."""
    start = time.perf_counter()
    while True:
        try:
            complete(backend, probe_prompt)
            return time.perf_counter() - start
        except BackendFailure as exc:
            if time.perf_counter() - start >= deadline:
                raise Timeout(f"backend not ready within {deadline}s") from exc
            time.sleep(poll_interval)


@dataclass(frozen=True)
class BenchConfig:
    """Knobs for run_generation_benchmark."""

    warmup: int = 1
    runs: int = 3
    sample_interval: float = 0.1
    power_cmd: str | None = None          # external probe printing "watts[,mebibytes]"
    energy_counter_path: str | None = None  # cumulative microjoule counter file

    def validate(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")


def run_generation_benchmark(
    backend: BackendConfig,
    prompts: list[str],
    config: BenchConfig | None = None,
    variant_name: str = "",
) -> PerfReport:
    """Warm up, then time `runs` measured passes over the prompt list.

    Token counts come from the backend when it reports usage, otherwise from
    the whitespace fallback (and the report is flagged inexact). Backend
    failures abort the benchmark; partial measurements are discarded.
    """
    config = config or BenchConfig()
    config.validate()
    if not prompts:
        raise ValueError("prompts must be non-empty")
    backend.validate()

    for _ in range(config.warmup):
        for prompt in prompts:
            complete(backend, prompt)

    sampler = ResourceSampler(
        interval=config.sample_interval,
        power_cmd=config.power_cmd,
        sample_rss=(backend.kind != "http"),
    )
    counter_start = (
        _read_energy_counter(config.energy_counter_path)
        if config.energy_counter_path else None
    )
    resolution = time.get_clock_info("perf_counter").resolution

    total_tokens = 0
    total_elapsed = 0.0
    all_exact = True
    per_run: list[float] = []
    sampler.start()
    try:
        for _ in range(config.runs):
            run_tokens = 0
            run_start = time.perf_counter()
            for prompt in prompts:
                result = complete(backend, prompt)
                run_tokens += result.completion_tokens or 0
                all_exact = all_exact and result.token_count_exact
            run_elapsed = max(time.perf_counter() - run_start, resolution)
            total_tokens += run_tokens
            total_elapsed += run_elapsed
            per_run.append(run_tokens / run_elapsed)
    finally:
        sampler.stop()

    energy: float | None = None
    if len(sampler.power_trace) >= 2:
        energy = integrate_power(sampler.power_trace)
    elif counter_start is not None and config.energy_counter_path:
        counter_end = _read_energy_counter(config.energy_counter_path)
        if counter_end is not None and counter_end >= counter_start:
            energy = (counter_end - counter_start) / 1e6

    peak = peak_memory_bytes(sampler.rss_samples + sampler.probe_memory_samples)
    return PerfReport(
        variant_name=variant_name,
        tokens_generated=total_tokens,
        elapsed=max(total_elapsed, resolution),
        peak_memory=peak,
        energy=energy,
        token_count_exact=all_exact,
        run_count=config.runs,
        per_run_throughputs=tuple(per_run),
    )


def with_load_time(report: PerfReport, load_time: float) -> PerfReport:
    return replace(report, load_time=load_time)


# --------------------------------------------------------------------------
# comparison arithmetic
# --------------------------------------------------------------------------

COMPARISON_FIELDS = ("memory", "speed", "load", "energy")


@dataclass(frozen=True)
class ComparisonRow:
    """Relative deltas of variant `b` against baseline `a`."""

    baseline: str
    variant: str
    memory_reduction_pct: float | None = None
    slowdown_pct: float | None = None
    speedup_x: float | None = None
    load_time_reduction_pct: float | None = None
    energy_per_token_increase_pct: float | None = None

    def formatted(self) -> dict:
        """One-decimal presentation of every populated delta."""
        out = {"baseline": self.baseline, "variant": self.variant}
        for name, suffix in [
            ("memory_reduction_pct", "%"),
            ("slowdown_pct", "%"),
            ("speedup_x", "x"),
            ("load_time_reduction_pct", "%"),
            ("energy_per_token_increase_pct", "%"),
        ]:
            value = getattr(self, name)
            if value is not None:
                out[name] = f"{value:.1f}{suffix}"
        return out


def derive_comparison(
    a: PerfReport,
    b: PerfReport,
    fields: tuple[str, ...] = COMPARISON_FIELDS,
) -> ComparisonRow:
    """Relative deltas between a baseline report and a variant report.

    Raises MissingField when a requested field is absent from either side.
    """
    unknown = set(fields) - set(COMPARISON_FIELDS)
    if unknown:
        raise ValueError(f"unknown comparison fields: {sorted(unknown)}")
    row: dict = {}

    if "memory" in fields:
        if a.peak_memory is None or b.peak_memory is None:
            raise MissingField("peak_memory is absent from one of the reports")
        if a.peak_memory == 0:
            raise ValueError("baseline peak_memory is zero")
        row["memory_reduction_pct"] = (a.peak_memory - b.peak_memory) / a.peak_memory * 100.0
    if "speed" in fields:
        if a.tokens_per_second == 0:
            raise ValueError("baseline throughput is zero")
        row["slowdown_pct"] = (a.tokens_per_second - b.tokens_per_second) / a.tokens_per_second * 100.0
        row["speedup_x"] = b.tokens_per_second / a.tokens_per_second
    if "load" in fields:
        if a.load_time == 0:
            raise MissingField("baseline load_time was not measured")
        row["load_time_reduction_pct"] = (a.load_time - b.load_time) / a.load_time * 100.0
    if "energy" in fields:
        ept_a, ept_b = a.energy_per_token, b.energy_per_token
        if ept_a is None or ept_b is None:
            raise MissingField("energy_per_token is absent from one of the reports")
        row["energy_per_token_increase_pct"] = (ept_b - ept_a) / ept_a * 100.0

    return ComparisonRow(baseline=a.variant_name, variant=b.variant_name, **row)
