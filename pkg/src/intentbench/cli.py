"""Command-line entry point: gen / eval / bench / inspect / pareto / report.

Flags override config-file values, which override defaults; the effective
configuration is echoed into every JSON artifact for provenance. All artifacts
are written atomically (temp file in the same directory, then rename), so a
failing run never leaves partial output at the destination path.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .backends import BackendConfig, BackendFailure
from .datagen import (
    Dataset,
    GenerationSpec,
    NoiseProfile,
    generate_dataset,
    load_catalog,
    load_jsonl,
    save_jsonl,
    split_dataset,
)
from .evaluator import EvalConfig, evaluate_dataset, per_item_csv, report_table
from .gguf import FootprintReport, GgufError, footprint_report, parse_gguf
from .pareto import (
    DEFAULT_OBJECTIVES,
    Objective,
    UnsupportedFormat,
    compute_frontier,
    emit_tradeoff_report,
    load_points,
)
from .profiler import (
    BenchConfig,
    MissingField,
    PERF_CSV_COLUMNS,
    PerfReport,
    derive_comparison,
    measure_load,
    perf_csv_row,
    run_generation_benchmark,
    with_load_time,
)


class UsageError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class IoError(OSError):
    pass


# Keys accepted per config-file section (mirroring the long flag names).
_KNOWN_CONFIG_KEYS = {
    "gen": {"n", "seed", "out", "clean", "catalog", "languages", "quantity_style",
            "train_out", "val_out", "train_fraction", "split_seed"},
    "backend": {"backend", "endpoint", "model", "command", "timeout", "retries",
                "max_tokens", "temperature", "api_key_env", "catalog"},
    "eval": {"dataset", "k", "shots", "prompt_mode", "parallelism", "seed",
             "normalize_product", "name", "out", "csv"},
    "bench": {"prompts", "runs", "warmup", "power_cmd", "sample_interval",
              "energy_counter", "variant", "measure_load", "load_deadline", "out", "csv"},
    "pareto": {"points", "objectives", "format", "out"},
    "report": {"out", "baseline"},
}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    if not Path(path).is_file():
        raise IoError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _KNOWN_CONFIG_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - _KNOWN_CONFIG_KEYS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        out[section] = dict(parser[section])
    return out


class _Resolver:
    """Flag > config value > default, remembering the effective configuration."""

    def __init__(self, args: argparse.Namespace, config: dict, section: str):
        self.args = args
        self.config = config
        self.section = section
        self.effective: dict[str, object] = {}

    def get(self, name: str, default=None, cast=str, section: str | None = None):
        value = getattr(self.args, name, None)
        if value is None:
            raw = self.config.get(section or self.section, {}).get(name)
            if raw is not None:
                try:
                    value = _cast_config_value(raw, cast)
                except ValueError as exc:
                    raise ConfigError(f"bad config value for {name!r}: {raw!r} ({exc})") from exc
        if value is None:
            value = default
        self.effective[name] = value
        return value


def _cast_config_value(raw: str, cast):
    if cast is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    return cast(raw)


def _atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"{what} not found: {path}")
    return path


def _write_json_artifact(path: str | Path, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")


# --------------------------------------------------------------------------
# backend flags shared by eval and bench
# --------------------------------------------------------------------------

def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("backend")
    group.add_argument("--backend", choices=["oracle", "http", "subprocess"], default=None)
    group.add_argument("--endpoint", default=None, help="http: base URL of the chat API")
    group.add_argument("--model", default=None, help="http: model name to request")
    group.add_argument("--command", default=None, help="subprocess: shell template with {prompt}")
    group.add_argument("--timeout", type=float, default=None)
    group.add_argument("--retries", type=int, default=None)
    group.add_argument("--max-tokens", dest="max_tokens", type=int, default=None)
    group.add_argument("--temperature", type=float, default=None)
    group.add_argument("--api-key-env", dest="api_key_env", default=None)
    group.add_argument("--catalog", default=None, help="oracle: catalog JSON override")


def _backend_from(resolver: _Resolver) -> BackendConfig:
    kind = resolver.get("backend", default="oracle", section="backend")
    catalog = resolver.get("catalog", section="backend")
    if catalog:
        _require_file(catalog, "catalog file")
    config = BackendConfig(
        kind=kind,
        endpoint_url=resolver.get("endpoint", section="backend"),
        model_name=resolver.get("model", section="backend"),
        command_template=resolver.get("command", section="backend"),
        temperature=resolver.get("temperature", default=0.0, cast=float, section="backend"),
        max_tokens=resolver.get("max_tokens", default=64, cast=int, section="backend"),
        timeout=resolver.get("timeout", default=30.0, cast=float, section="backend"),
        retries=resolver.get("retries", default=0, cast=int, section="backend"),
        api_key_env=resolver.get("api_key_env", default="OPENAI_API_KEY", section="backend"),
        catalog_path=catalog,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_gen(args: argparse.Namespace, config: dict) -> int:
    r = _Resolver(args, config, "gen")
    n = r.get("n", default=3000, cast=int)
    seed = r.get("seed", default=0, cast=int)
    out = r.get("out", default="dataset.jsonl")
    clean = r.get("clean", default=False, cast=bool)
    catalog_path = r.get("catalog")
    languages = r.get("languages", default="en,hr,es")
    quantity_style = r.get("quantity_style", default="digits")
    train_out = r.get("train_out")
    val_out = r.get("val_out")
    train_fraction = r.get("train_fraction", default=0.9, cast=float)
    split_seed = r.get("split_seed", default=seed, cast=int)

    if catalog_path:
        catalog = load_catalog(_require_file(catalog_path, "catalog file"))
    else:
        catalog = GenerationSpec(0).catalog

    spec = GenerationSpec(
        n_examples=n,
        seed=seed,
        languages=tuple(code.strip() for code in languages.split(",") if code.strip()),
        catalog=catalog,
        noise_profile=NoiseProfile.none() if clean else NoiseProfile.default(),
        quantity_style=quantity_style,
    )
    ds = generate_dataset(spec)

    lines = "".join(_dataset_lines(ds))
    _atomic_write_text(out, lines)
    counts: dict[str, int] = {}
    for ex in ds:
        counts[ex.language] = counts.get(ex.language, 0) + 1
    print(f"wrote {len(ds)} examples to {out}")
    for language in spec.languages:
        print(f"  {language}: {counts.get(language, 0)}")

    if train_out and val_out:
        train, val = split_dataset(ds, train_fraction, split_seed)
        _atomic_write_text(train_out, "".join(_dataset_lines(train)))
        _atomic_write_text(val_out, "".join(_dataset_lines(val)))
        print(f"split {len(train)}/{len(val)} into {train_out} / {val_out}")
    return 0


def _dataset_lines(ds: Dataset):
    from .datagen import example_to_json_line

    for ex in ds:
        yield example_to_json_line(ex) + "\n"


def _cmd_eval(args: argparse.Namespace, config: dict) -> int:
    r = _Resolver(args, config, "eval")
    dataset_path = r.get("dataset")
    if not dataset_path:
        raise UsageError("--dataset is required")
    shots_path = r.get("shots")
    out = r.get("out")
    csv_out = r.get("csv")
    _require_file(dataset_path, "dataset")
    if shots_path:
        _require_file(shots_path, "shots dataset")

    backend = _backend_from(r)
    shots = tuple(load_jsonl(shots_path).examples) if shots_path else ()
    eval_config = EvalConfig(
        fewshot_k=r.get("k", default=0, cast=int),
        shots=shots,
        prompt_mode=r.get("prompt_mode", default="instruction"),
        seed=r.get("seed", default=0, cast=int),
        parallelism=r.get("parallelism", default=4, cast=int),
        normalize_product=r.get("normalize_product", default=False, cast=bool),
    )
    ds = load_jsonl(dataset_path)
    report = evaluate_dataset(ds, backend, eval_config, name=r.get("name", default=""))

    print(report_table(report))
    if out:
        payload = report.to_json_dict()
        payload["effective_config"] = {k: v for k, v in r.effective.items() if v is not None}
        _write_json_artifact(out, payload)
        print(f"report written to {out}")
    if csv_out:
        _atomic_write_text(csv_out, per_item_csv(report, ds))
        print(f"per-item CSV written to {csv_out}")
    return 0


def _cmd_bench(args: argparse.Namespace, config: dict) -> int:
    r = _Resolver(args, config, "bench")
    prompts_path = r.get("prompts")
    if not prompts_path:
        raise UsageError("--prompts is required")
    _require_file(prompts_path, "prompts file")
    out = r.get("out")
    csv_out = r.get("csv")

    backend = _backend_from(r)
    bench_config = BenchConfig(
        warmup=r.get("warmup", default=1, cast=int),
        runs=r.get("runs", default=3, cast=int),
        sample_interval=r.get("sample_interval", default=0.1, cast=float),
        power_cmd=r.get("power_cmd"),
        energy_counter_path=r.get("energy_counter"),
    )
    prompts = _load_prompts(prompts_path)
    variant = r.get("variant", default=backend.kind)

    report = run_generation_benchmark(backend, prompts, bench_config, variant_name=variant)
    if r.get("measure_load", default=False, cast=bool):
        load_s = measure_load(
            backend, deadline=r.get("load_deadline", default=60.0, cast=float)
        )
        report = with_load_time(report, load_s)

    for key, value in report.to_json_dict().items():
        print(f"{key:<24} {value}")
    if out:
        payload = report.to_json_dict()
        payload["effective_config"] = {k: v for k, v in r.effective.items() if v is not None}
        _write_json_artifact(out, payload)
    if csv_out:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PERF_CSV_COLUMNS)
        writer.writerow(perf_csv_row(report))
        _atomic_write_text(csv_out, buf.getvalue())
    return 0


def _load_prompts(path: str | Path) -> list[str]:
    path = Path(path)
    if path.suffix == ".jsonl":
        return [ex.input for ex in load_jsonl(path)]
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise UsageError(f"no prompts in {path}")
    return lines


def _cmd_inspect(args: argparse.Namespace, config: dict) -> int:
    del config
    path = _require_file(args.file, "GGUF file")
    header, kvs, tensors = parse_gguf(path)
    footprint = footprint_report(tensors)

    print(f"file      : {path}")
    print(f"version   : {header.version}")
    print(f"tensors   : {header.tensor_count}")
    print(f"metadata  : {header.kv_count} keys")
    for kv in kvs[:20]:
        print(f"  {kv.key} = {_preview_kv(kv.value)}")
    if len(kvs) > 20:
        print(f"  ... {len(kvs) - 20} more")
    print(_footprint_table(footprint))

    if args.json:
        payload = {
            "file": str(path),
            "version": header.version,
            "tensor_count": header.tensor_count,
            "kv_count": header.kv_count,
            "footprint": footprint.to_json_dict(),
        }
        _write_json_artifact(args.json, payload)
    return 0


def _preview_kv(value) -> str:
    from .gguf import GgufArray

    if isinstance(value, GgufArray):
        shown = ", ".join(repr(v) for v in value.values[:4])
        suffix = ", ..." if len(value.values) > 4 else ""
        return f"[{shown}{suffix}] ({len(value.values)} x {value.elem_type.name})"
    return repr(value)


def _footprint_table(footprint: FootprintReport) -> str:
    lines = [f"{'type':<8} {'tensors':>8} {'bytes':>16} {'GiB':>8}"]
    for name, (count, nbytes) in footprint.per_type.items():
        lines.append(f"{name:<8} {count:>8} {nbytes:>16} {nbytes / 2**30:>8.2f}")
    lines.append(
        f"{'total':<8} {sum(c for c, _ in footprint.per_type.values()):>8} "
        f"{footprint.total_bytes:>16} {footprint.total_gib:>8.2f}"
    )
    lines.append(f"bits per weight: {footprint.bits_per_weight:.2f}")
    return "\n".join(lines)


def _parse_objectives(spec: str) -> tuple[Objective, ...]:
    out = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" in chunk:
            metric, _, direction = chunk.partition(":")
            direction = {"max": "maximize", "min": "minimize"}.get(direction, direction)
            out.append(Objective(metric.strip(), direction.strip()))
        else:
            out.append(Objective.default(chunk))
    if not out:
        raise UsageError("no objectives given")
    return tuple(out)


def _cmd_pareto(args: argparse.Namespace, config: dict) -> int:
    r = _Resolver(args, config, "pareto")
    points_path = r.get("points")
    if not points_path:
        raise UsageError("--points is required")
    _require_file(points_path, "points file")
    objectives = r.get("objectives")
    fmt = r.get("format", default="text")
    out = r.get("out")

    points = load_points(points_path)
    result = compute_frontier(
        points, _parse_objectives(objectives) if objectives else DEFAULT_OBJECTIVES
    )
    rendered = emit_tradeoff_report(result, fmt)
    if out:
        _atomic_write_text(out, rendered if rendered.endswith("\n") else rendered + "\n")
        print(f"report written to {out}")
    else:
        print(rendered)
    return 0


def _cmd_report(args: argparse.Namespace, config: dict) -> int:
    r = _Resolver(args, config, "report")
    out = r.get("out")
    baseline_name = r.get("baseline")
    for path in (args.eval or []) + (args.perf or []) + ([args.pareto] if args.pareto else []):
        _require_file(path, "report input")

    combined: dict = {"accuracy": [], "performance": [], "comparisons": [], "tradeoff": None}

    print("== accuracy ==")
    for path in args.eval or []:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        row = {
            "name": data.get("name") or Path(path).stem,
            "accuracy": data["accuracy"],
            "ci95": data.get("ci95"),
            "n_total": data.get("n_total"),
        }
        combined["accuracy"].append(row)
        ci = row["ci95"] or {}
        print(f"  {row['name']:<24} {row['accuracy']:.2f}  "
              f"[{ci.get('low', 0):.3f}, {ci.get('high', 1):.3f}]  n={row['n_total']}")

    perf_reports: list[PerfReport] = []
    print("== performance ==")
    for path in args.perf or []:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        report = PerfReport(
            variant_name=data.get("variant", Path(path).stem),
            tokens_generated=data["tokens_generated"],
            elapsed=data["elapsed_s"],
            load_time=data.get("load_s", 0.0),
            peak_memory=data.get("peak_mem_bytes"),
            energy=data.get("energy_j"),
            token_count_exact=data.get("exact_tokens", False),
            run_count=data.get("run_count", 1),
            per_run_throughputs=tuple(data.get("per_run_tok_s", [])),
        )
        perf_reports.append(report)
        combined["performance"].append(report.to_json_dict())
        mem = f"{report.peak_memory / 2**30:.2f} GiB" if report.peak_memory else "n/a"
        ept = f"{report.energy_per_token:.3f} J/tok" if report.energy_per_token else "n/a"
        print(f"  {report.variant_name:<24} {report.tokens_per_second:>8.2f} tok/s  "
              f"load {report.load_time:.2f}s  mem {mem}  energy {ept}")

    if baseline_name and perf_reports:
        baseline = next((p for p in perf_reports if p.variant_name == baseline_name), None)
        if baseline is None:
            raise UsageError(f"baseline variant {baseline_name!r} not among perf reports")
        print(f"== deltas vs {baseline_name} ==")
        for report in perf_reports:
            if report is baseline:
                continue
            fields = ["speed"]
            if baseline.peak_memory is not None and report.peak_memory is not None:
                fields.append("memory")
            if baseline.load_time and report.load_time:
                fields.append("load")
            if baseline.energy_per_token is not None and report.energy_per_token is not None:
                fields.append("energy")
            row = derive_comparison(baseline, report, tuple(fields))
            combined["comparisons"].append(row.formatted())
            print(f"  {report.variant_name:<24} {row.formatted()}")

    if args.pareto:
        combined["tradeoff"] = json.loads(Path(args.pareto).read_text(encoding="utf-8"))
        recs = combined["tradeoff"].get("recommendations")
        if recs:
            print("== trade-off recommendations ==")
            print(f"  max accuracy: {recs['max_accuracy']}")
            print(f"  max speed   : {recs['max_speed']}")

    if out:
        combined["effective_config"] = {k: v for k, v in r.effective.items() if v is not None}
        _write_json_artifact(out, combined)
        print(f"combined report written to {out}")
    return 0


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentbench",
        description="Synthetic cart-intent datasets, strict evaluation, profiling, "
                    "GGUF inspection, and Pareto trade-off reports.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--clean", action="store_const", const=True, default=None,
                   help="disable noise injection")
    p.add_argument("--catalog", default=None)
    p.add_argument("--languages", default=None)
    p.add_argument("--quantity-style", dest="quantity_style", choices=["digits", "words"], default=None)
    p.add_argument("--train-out", dest="train_out", default=None)
    p.add_argument("--val-out", dest="val_out", default=None)
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("eval", help="evaluate a dataset against a backend")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--k", type=int, default=None, help="few-shot demonstrations per prompt")
    p.add_argument("--shots", default=None, help="JSONL pool for few-shot demonstrations")
    p.add_argument("--prompt-mode", dest="prompt_mode", choices=["instruction", "bare"], default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--normalize-product", dest="normalize_product",
                   action="store_const", const=True, default=None)
    p.add_argument("--name", default=None, help="variant label recorded in the report")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--csv", default=None, help="write per-item CSV here")
    _add_backend_flags(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("bench", help="profile throughput/memory/energy of a backend")
    p.add_argument("--config", default=None)
    p.add_argument("--prompts", default=None, help="text file (one prompt per line) or JSONL dataset")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--power-cmd", dest="power_cmd", default=None,
                   help='probe command printing "watts[,mebibytes]"')
    p.add_argument("--sample-interval", dest="sample_interval", type=float, default=None)
    p.add_argument("--energy-counter", dest="energy_counter", default=None,
                   help="cumulative microjoule counter file (RAPL-style)")
    p.add_argument("--variant", default=None)
    p.add_argument("--measure-load", dest="measure_load",
                   action="store_const", const=True, default=None)
    p.add_argument("--load-deadline", dest="load_deadline", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    _add_backend_flags(p)
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("inspect", help="inspect a GGUF model file")
    p.add_argument("file")
    p.add_argument("--json", default=None, help="write the JSON summary here")
    p.set_defaults(handler=_cmd_inspect)

    p = sub.add_parser("pareto", help="compute the Pareto frontier over variant points")
    p.add_argument("--config", default=None)
    p.add_argument("--points", default=None, help="CSV or JSON list of variant points")
    p.add_argument("--objectives", default=None,
                   help='e.g. "accuracy:max,speed:max" or "accuracy,memory"')
    p.add_argument("--format", default=None, choices=["text", "csv", "json"])
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_pareto)

    p = sub.add_parser("report", help="join eval/perf/pareto artifacts into one document")
    p.add_argument("--config", default=None)
    p.add_argument("--eval", action="append", default=None, help="eval report JSON (repeatable)")
    p.add_argument("--perf", action="append", default=None, help="perf report JSON (repeatable)")
    p.add_argument("--pareto", default=None, help="pareto report JSON")
    p.add_argument("--baseline", default=None, help="perf variant to compare the others against")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    """Run one subcommand; 0 = success, 1 = runtime failure, 2 = usage error."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(getattr(args, "config", None))
        return args.handler(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GgufError, BackendFailure, MissingField, UnsupportedFormat,
            IoError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
