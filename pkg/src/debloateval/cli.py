"""Command-line driver: campaigns, metric matrices, and report rendering.

Subcommands: ``validate``, ``differ``, ``metrics``, ``gadgets compare``,
``tool-wrap``, ``report``. Artifacts land under ``--out``: verdicts.jsonl,
summary.json, metrics.json, and report.md. Exit codes: 0 all pass,
1 anomalies found, 2 usage or I/O error.
"""

from __future__ import annotations

import datetime
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import __version__, binary_metrics, gadget_analyzer
from .elf import ElfParseError
from .exec_harness import (
    ExecRequest,
    NotComparableError,
    SpawnError,
    TerminationKind,
    run_once,
    run_trials,
)
from .fuzz_engine import MutationPlan, derive_commands
from .spec_model import (
    BenchmarkSpec,
    BinaryRef,
    Disposition,
    SpecError,
    parse_spec,
    validate_spec_against_binaries,
    winnow_to_aggressive,
)
from .verdict_engine import (
    Budget,
    CampaignAborted,
    report_to_jsonl,
    run_campaign,
    summary_to_json,
)

EXIT_OK = 0
EXIT_ANOMALIES = 1
EXIT_ERROR = 2


def _load_spec(spec_path: Path) -> BenchmarkSpec:
    return parse_spec(spec_path.read_bytes())


def _fmt_pct(value: float | None) -> str:
    return "N/A" if value is None else f"{value:.1f}%"


def _fmt_num(value: float | None, digits: int = 1) -> str:
    return "N/A" if value is None else f"{value:.{digits}f}"


# --- differ ------------------------------------------------------------

def cmd_differ(
    spec_path: Path,
    seed: int,
    budget: Budget,
    jobs: int,
    out_dir: Path,
    aggressive: bool = False,
) -> int:
    try:
        spec = _load_spec(spec_path)
    except (OSError, SpecError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR
    if aggressive:
        spec = winnow_to_aggressive(spec)
    plan = MutationPlan(seed=seed, count=0)
    try:
        report = run_campaign(spec, plan, budget, jobs=jobs)
    except CampaignAborted as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "verdicts.jsonl").write_bytes(report_to_jsonl(report))
    summary = summary_to_json(report)
    summary["seed"] = seed
    summary["toolkit_version"] = __version__
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    render_report(out_dir)

    all_passed = all(report.variant_passed(label) for label in report.per_variant)
    return EXIT_OK if all_passed else EXIT_ANOMALIES


# --- metrics -----------------------------------------------------------

@dataclass
class _VariantMetrics:
    size_pct: float | None = None
    size_aggregate: bool = False
    libs_introduced: list[str] | None = None
    libs_eliminated: list[str] | None = None
    runtime_pct: float | None = None
    memory_pct: float | None = None
    expressivity_delta: int | None = None
    quality_delta: float | None = None
    quality_significant: bool | None = None
    sp_types_delta: int | None = None
    syscall_event: str | None = None
    locality_pct: float | None = None


def _seed_requests(spec: BenchmarkSpec, exe_path: Path, seed: int) -> list[ExecRequest]:
    requests = []
    plan = MutationPlan(seed=seed, count=0)
    for feature in spec.features:
        if feature.disposition is not Disposition.RETAIN:
            continue
        for ci, cmd in enumerate(feature.commands):
            inp = derive_commands(cmd, plan, feature.name, ci)[0]
            requests.append(
                ExecRequest(
                    exe_path=exe_path,
                    argv=list(inp.argv),
                    stdin=inp.stdin,
                    env=dict(spec.env),
                    timeout_seconds=spec.timeout_seconds,
                    capture_files=list(cmd.expected_output_files),
                )
            )
    return requests


def _perf_totals(spec: BenchmarkSpec, exe_path: Path, seed: int) -> tuple[float, float] | None:
    """(total mean CPU seconds, max mean peak RSS) over retained seed commands."""
    total_cpu = 0.0
    max_rss = 0.0
    requests = _seed_requests(spec, exe_path, seed)
    if not requests:
        return None
    try:
        for req in requests:
            summary = run_trials(req, spec.trials)
            if not any(o.termination.kind is TerminationKind.EXITED for o in summary.outcomes):
                return None
            total_cpu += summary.mean_cpu_seconds
            max_rss = max(max_rss, summary.mean_peak_rss_bytes)
    except SpawnError:
        return None
    return total_cpu, max_rss


def _gadget_report(ref: BinaryRef, aggregate_libs: bool):
    regions = gadget_analyzer.extract_code_regions(ref, aggregate_libs)
    gadgets = gadget_analyzer.scan_regions(regions)
    return gadget_analyzer.build_report(gadgets), gadgets


def cmd_metrics(
    spec_path: Path,
    seed: int,
    out_dir: Path,
    aggregate_libs: bool = False,
    with_perf: bool = True,
) -> int:
    try:
        spec = _load_spec(spec_path)
    except (OSError, SpecError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR

    original_perf = _perf_totals(spec, spec.original.exe_path, seed) if with_perf else None
    try:
        original_gadget_report, original_gadgets = _gadget_report(spec.original, aggregate_libs)
    except (ElfParseError, OSError):
        original_gadget_report, original_gadgets = None, None

    rows: dict[str, _VariantMetrics] = {}
    for variant in sorted(spec.variants, key=lambda v: v.label):
        row = _VariantMetrics()
        try:
            size = binary_metrics.size_change(spec.original, variant)
            row.size_pct = size.pct
            row.size_aggregate = size.aggregate_mode
        except (OSError, NotComparableError):
            pass
        try:
            libs = binary_metrics.lib_delta(spec.original, variant)
            row.libs_introduced = sorted(libs.introduced)
            row.libs_eliminated = sorted(libs.eliminated)
        except ElfParseError:
            pass
        if original_perf is not None:
            variant_perf = _perf_totals(spec, variant.exe_path, seed)
            if variant_perf is not None and original_perf[0] > 0 and original_perf[1] > 0:
                row.runtime_pct = 100.0 * variant_perf[0] / original_perf[0]
                row.memory_pct = 100.0 * variant_perf[1] / original_perf[1]
        if original_gadget_report is not None:
            try:
                variant_report, variant_gadgets = _gadget_report(variant, aggregate_libs)
                delta = gadget_analyzer.compare_sets(original_gadget_report, variant_report)
                row.expressivity_delta = delta.expressivity_delta
                row.quality_delta = delta.quality_delta
                row.quality_significant = delta.quality_significant
                row.sp_types_delta = delta.sp_types_delta
                row.syscall_event = delta.syscall_event.value
                row.locality_pct = gadget_analyzer.locality(original_gadgets, variant_gadgets)
            except (ElfParseError, OSError):
                pass
        rows[variant.label] = row

    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "spec_id": spec.id,
        "toolkit_version": __version__,
        "seed": seed,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "variants": {
            label: {
                "size_pct": row.size_pct,
                "size_aggregate": row.size_aggregate,
                "libs_introduced": row.libs_introduced,
                "libs_eliminated": row.libs_eliminated,
                "runtime_pct": row.runtime_pct,
                "memory_pct": row.memory_pct,
                "expressivity_delta": row.expressivity_delta,
                "quality_delta": row.quality_delta,
                "quality_significant": row.quality_significant,
                "sp_types_delta": row.sp_types_delta,
                "syscall_event": row.syscall_event,
                "locality_pct": row.locality_pct,
            }
            for label, row in rows.items()
        },
    }
    (out_dir / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    render_report(out_dir)
    return EXIT_OK


# --- tool-wrap ---------------------------------------------------------

@dataclass(frozen=True)
class ToolPerfRecord:
    cpu_minutes: float
    peak_mb: float
    succeeded: bool
    termination: str


def cmd_tool_wrap(
    tool_cmdline: list[str],
    spec_path: Path,
    output_path: Path,
    out_dir: Path,
    max_seconds: float = 48 * 3600.0,
) -> tuple[int, ToolPerfRecord | None]:
    """Run an external debloater under resource accounting.

    Failures are still timed and recorded; a produced output binary is
    registered as a new variant in an updated copy of the spec.
    """
    try:
        spec = _load_spec(spec_path)
    except (OSError, SpecError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR, None
    # The tool runs in an empty sandbox directory, so it must address the
    # target program and its output via absolute paths.
    req = ExecRequest(
        exe_path=Path(tool_cmdline[0]),
        argv=tool_cmdline[1:],
        timeout_seconds=max_seconds,
    )
    try:
        outcome = run_once(req)
    except SpawnError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR, None

    exited_ok = (
        outcome.termination.kind is TerminationKind.EXITED and outcome.termination.code == 0
    )
    produced = output_path.is_file()
    record = ToolPerfRecord(
        cpu_minutes=outcome.cpu_seconds / 60.0,
        peak_mb=outcome.peak_rss_bytes / (1024.0 * 1024.0),
        succeeded=exited_ok and produced,
        termination=outcome.termination.describe(),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tool_perf.json").write_text(
        json.dumps(
            {
                "cpu_minutes": record.cpu_minutes,
                "peak_mb": record.peak_mb,
                "succeeded": record.succeeded,
                "termination": record.termination,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    if produced:
        from .spec_model import serialize_spec
        from dataclasses import replace

        label = f"tool-wrap-{output_path.name}"
        updated = replace(
            spec, variants=spec.variants + (BinaryRef(label, output_path),)
        )
        (out_dir / "spec.updated.json").write_bytes(serialize_spec(updated))
    return EXIT_OK, record


# --- report rendering --------------------------------------------------

def render_report(out_dir: Path) -> Path:
    """Assemble report.md from whichever JSON artifacts exist in out_dir."""
    sections = ["# Variant evaluation report", ""]

    metrics_path = out_dir / "metrics.json"
    if metrics_path.is_file():
        doc = json.loads(metrics_path.read_text())
        sections += [
            f"Spec: `{doc['spec_id']}` — toolkit {doc['toolkit_version']}, seed {doc['seed']}",
            "",
            "## Performance metrics",
            "",
            "| Variant | Binary Size | Run Time | Peak Memory | Libs Introduced | Libs Eliminated |",
            "|---|---|---|---|---|---|",
        ]
        for label in sorted(doc["variants"]):
            row = doc["variants"][label]
            intro = "N/A" if row["libs_introduced"] is None else ", ".join(row["libs_introduced"]) or "-"
            elim = "N/A" if row["libs_eliminated"] is None else ", ".join(row["libs_eliminated"]) or "-"
            sections.append(
                f"| {label} | {_fmt_pct(row['size_pct'])} | {_fmt_pct(row['runtime_pct'])} "
                f"| {_fmt_pct(row['memory_pct'])} | {intro} | {elim} |"
            )
        sections += [
            "",
            "## Security metrics",
            "",
            "| Variant | Expressivity Δ | Quality Δ | S.P. Types Δ | Syscall Gadgets | Locality |",
            "|---|---|---|---|---|---|",
        ]
        for label in sorted(doc["variants"]):
            row = doc["variants"][label]
            quality = _fmt_num(row["quality_delta"])
            if row["quality_delta"] is not None and not row["quality_significant"]:
                quality += " (not significant)"
            expr = "N/A" if row["expressivity_delta"] is None else str(row["expressivity_delta"])
            sp = "N/A" if row["sp_types_delta"] is None else str(row["sp_types_delta"])
            event = row["syscall_event"] or "N/A"
            sections.append(
                f"| {label} | {expr} | {quality} | {sp} | {event} | {_fmt_pct(row['locality_pct'])} |"
            )
        sections.append("")

    summary_path = out_dir / "summary.json"
    if summary_path.is_file():
        doc = json.loads(summary_path.read_text())
        sections += [
            "## Differential testing",
            "",
            "| Variant | Result | Verdicts |",
            "|---|---|---|",
        ]
        for label in sorted(doc["variants"]):
            entry = doc["variants"][label]
            result = "pass" if entry["passed"] else "FAIL"
            counts = ", ".join(f"{k}={v}" for k, v in entry["verdict_counts"].items()) or "-"
            sections.append(f"| {label} | {result} | {counts} |")
        ec = doc["variants_with_error_or_crash"]
        un = doc["variants_with_unremoved_feature"]
        sections += [
            "",
            f"Variants with errors or crashes: {ec['count']} ({100.0 * ec['fraction']:.1f}%). "
            f"Variants with unremoved features: {un['count']} ({100.0 * un['fraction']:.1f}%). "
            f"Passed: {doc['passed']}.",
            "",
        ]

    path = out_dir / "report.md"
    path.write_text("\n".join(sections))
    return path


# --- click wiring ------------------------------------------------------

@click.group()
@click.version_option(version=__version__)
def main():
    """Validate and measure debloated program variants."""


_spec_opt = click.option(
    "--spec", "spec_path", type=click.Path(path_type=Path), required=True, help="Spec JSON file."
)
_seed_opt = click.option("--seed", type=int, default=0, show_default=True, help="Global fuzz seed.")
_out_opt = click.option(
    "--out", "out_dir", type=click.Path(path_type=Path), default=Path("dv-out"), show_default=True
)


@main.command()
@_spec_opt
def validate(spec_path: Path):
    """Parse a spec and check its binaries on disk."""
    try:
        spec = _load_spec(spec_path)
    except (OSError, SpecError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    warnings = validate_spec_against_binaries(spec)
    for w in warnings:
        click.echo(f"warning: {w}")
    click.echo(f"spec {spec.id!r}: {len(spec.variants)} variant(s), {len(spec.features)} feature(s)")
    sys.exit(EXIT_OK)


@main.command()
@_spec_opt
@_seed_opt
@_out_opt
@click.option("--jobs", type=int, default=None, help="Worker threads (default: CPU count).")
@click.option("--max-seconds", type=float, default=None, help="Fuzzing wall-clock budget.")
@click.option("--max-mutants", type=int, default=None, help="Total fuzzed-input budget.")
@click.option("--aggressive", is_flag=True, help="Winnow the spec to its aggressive form first.")
def differ(spec_path, seed, out_dir, jobs, max_seconds, max_mutants, aggressive):
    """Run the differential campaign for every variant."""
    import os

    jobs = jobs or os.cpu_count() or 1
    budget = Budget(max_seconds=max_seconds, max_mutants=max_mutants)
    sys.exit(cmd_differ(spec_path, seed, budget, jobs, out_dir, aggressive))


@main.command()
@_spec_opt
@_seed_opt
@_out_opt
@click.option("--aggregate-libs", is_flag=True, help="Include libraries in gadget comparisons.")
@click.option("--no-perf", is_flag=True, help="Skip run-time/memory trials.")
def metrics(spec_path, seed, out_dir, aggregate_libs, no_perf):
    """Compute size, library, performance, and security metrics."""
    sys.exit(cmd_metrics(spec_path, seed, out_dir, aggregate_libs, with_perf=not no_perf))


@main.group()
def gadgets():
    """Gadget-set analysis commands."""


@gadgets.command("compare")
@click.option("--original", "original_path", type=click.Path(path_type=Path), required=True)
@click.option("--variant", "variant_path", type=click.Path(path_type=Path), required=True)
@click.option("--aggregate-libs", is_flag=True)
def gadgets_compare(original_path: Path, variant_path: Path, aggregate_libs: bool):
    """Compare the gadget sets of two binaries."""
    try:
        orig_report, orig_gadgets = _gadget_report(BinaryRef("original", original_path), aggregate_libs)
        var_report, var_gadgets = _gadget_report(BinaryRef("variant", variant_path), aggregate_libs)
    except (ElfParseError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    delta = gadget_analyzer.compare_sets(orig_report, var_report)
    click.echo(
        json.dumps(
            {
                "original": {
                    "gadgets": len(orig_gadgets),
                    "expressivity": orig_report.expressivity.count,
                    "mean_quality": orig_report.mean_quality,
                    "special_types": sorted(orig_report.special_types),
                    "syscall_gadgets": orig_report.syscall_gadget_count,
                },
                "variant": {
                    "gadgets": len(var_gadgets),
                    "expressivity": var_report.expressivity.count,
                    "mean_quality": var_report.mean_quality,
                    "special_types": sorted(var_report.special_types),
                    "syscall_gadgets": var_report.syscall_gadget_count,
                },
                "delta": {
                    "expressivity": delta.expressivity_delta,
                    "quality": delta.quality_delta,
                    "quality_significant": delta.quality_significant,
                    "sp_types": delta.sp_types_delta,
                    "syscall_event": delta.syscall_event.value,
                    "locality_pct": gadget_analyzer.locality(orig_gadgets, var_gadgets),
                },
            },
            indent=2,
            sort_keys=True,
        )
    )
    sys.exit(EXIT_OK)


@main.command("tool-wrap")
@_spec_opt
@_out_opt
@click.option("--output", "output_path", type=click.Path(path_type=Path), required=True,
              help="Path where the tool is expected to produce the variant.")
@click.option("--max-seconds", type=float, default=48 * 3600.0, show_default=True)
@click.argument("tool_cmdline", nargs=-1, required=True)
def tool_wrap(spec_path, out_dir, output_path, max_seconds, tool_cmdline):
    """Run a debloating tool under CPU/memory accounting."""
    code, record = cmd_tool_wrap(list(tool_cmdline), spec_path, output_path, out_dir, max_seconds)
    if record is not None:
        click.echo(
            f"succeeded={record.succeeded} cpu_minutes={record.cpu_minutes:.3f} "
            f"peak_mb={record.peak_mb:.1f} termination={record.termination}"
        )
    sys.exit(code)


@main.command()
@_out_opt
def report(out_dir: Path):
    """Re-render report.md from artifacts already in the output directory."""
    if not out_dir.is_dir():
        click.echo(f"error: {out_dir} is not a directory", err=True)
        sys.exit(EXIT_ERROR)
    path = render_report(out_dir)
    click.echo(str(path))
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
