"""Differential-testing decision rule and campaign driver.

Retained features must behave identically in original and variant;
debloated features must behave differently. Crashes, timeouts, and
violations of those expectations become reportable verdicts. A campaign
runs every derived input (seed plus fuzzed mutants) against the original
and each variant, classifies each comparison, and aggregates a pass/fail
summary per variant.
"""

from __future__ import annotations

import base64
import enum
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .comparator import CompareReport, compare
from .exec_harness import ExecOutcome, ExecRequest, SpawnError, Termination, TerminationKind, run_once
from .fuzz_engine import DerivedInput, MutationPlan, derive_commands
from .spec_model import BenchmarkSpec, Disposition, Feature


class CampaignAborted(Exception):
    """The original binary could not run any seed input."""


class Verdict(enum.Enum):
    EXPECTED_MATCH = "expected_match"
    EXPECTED_DIFFERENCE = "expected_difference"
    UNEXPECTED_DIFFERENCE = "unexpected_difference"
    UNEXPECTED_MATCH = "unexpected_match"
    VARIANT_CRASH = "variant_crash"
    ORIGINAL_CRASH = "original_crash"
    VARIANT_TIMEOUT = "variant_timeout"
    CRASH_ON_REMOVED = "crash_on_removed"


# Verdicts that make a variant fail. OriginalCrash indicts the baseline and
# never counts against the variant; CrashOnRemoved is a legal (if noteworthy)
# way to lose a feature.
FAILING_VERDICTS = frozenset(
    {Verdict.UNEXPECTED_DIFFERENCE, Verdict.UNEXPECTED_MATCH, Verdict.VARIANT_CRASH, Verdict.VARIANT_TIMEOUT}
)


@dataclass(frozen=True)
class TestVerdict:
    value: Verdict
    evidence: CompareReport
    input_used: DerivedInput
    is_fuzzed: bool
    variant_label: str
    feature_name: str
    disposition: Disposition
    command_index: int


@dataclass(frozen=True)
class CampaignSummary:
    variants_with_error_or_crash: tuple[int, float]
    variants_with_unremoved_feature: tuple[int, float]
    passed: int


@dataclass(frozen=True)
class CampaignReport:
    spec_id: str
    per_variant: dict[str, list[TestVerdict]]
    summary: CampaignSummary

    def variant_passed(self, label: str) -> bool:
        return all(v.value not in FAILING_VERDICTS for v in self.per_variant[label])


@dataclass(frozen=True)
class Budget:
    max_seconds: float | None = None
    max_mutants: int | None = None


def classify(
    disposition: Disposition,
    original: ExecOutcome,
    variant: ExecOutcome,
    report: CompareReport,
) -> Verdict:
    """The differential decision table; total over all outcome pairs."""
    orig_kind = original.termination.kind
    var_kind = variant.termination.kind
    if var_kind is TerminationKind.SIGNALED and orig_kind is not TerminationKind.SIGNALED:
        if disposition is Disposition.RETAIN:
            return Verdict.VARIANT_CRASH
        return Verdict.CRASH_ON_REMOVED
    if orig_kind is TerminationKind.SIGNALED:
        return Verdict.ORIGINAL_CRASH
    if var_kind is TerminationKind.TIMED_OUT and orig_kind is not TerminationKind.TIMED_OUT:
        return Verdict.VARIANT_TIMEOUT
    if disposition is Disposition.RETAIN:
        return Verdict.EXPECTED_MATCH if report.all_matched else Verdict.UNEXPECTED_DIFFERENCE
    return Verdict.UNEXPECTED_MATCH if report.all_matched else Verdict.EXPECTED_DIFFERENCE


class _BudgetState:
    """Shared fuzzing budget; seed inputs are never charged against it."""

    def __init__(self, budget: Budget):
        self._lock = threading.Lock()
        self._remaining = budget.max_mutants
        self._deadline = (
            time.monotonic() + budget.max_seconds if budget.max_seconds is not None else None
        )

    def allow_fuzzed(self) -> bool:
        with self._lock:
            if self._deadline is not None and time.monotonic() >= self._deadline:
                return False
            if self._remaining is not None:
                if self._remaining <= 0:
                    return False
                self._remaining -= 1
            return True


def _synthetic_exit(message: str, code: int = 127) -> ExecOutcome:
    return ExecOutcome(
        termination=Termination.exited(code),
        stdout=b"",
        stderr=message.encode(),
        file_digests={},
        cpu_seconds=0.0,
        wall_seconds=0.0,
        peak_rss_bytes=0,
        spawn_error=message,
    )


def run_campaign(
    spec: BenchmarkSpec,
    plan: MutationPlan,
    budget: Budget = Budget(),
    jobs: int = 1,
) -> CampaignReport:
    """Execute the full differential campaign for every variant.

    Tasks fan out per (variant, feature, command) to a bounded thread pool;
    verdicts are collected and sorted on a single thread so reports are
    deterministic for deterministic programs and a fixed plan seed.
    """
    # Preflight: the original must run at least one seed input.
    first_feature = spec.features[0]
    first_cmd = first_feature.commands[0]
    seed_input = derive_commands(first_cmd, plan, first_feature.name, 0)[0]
    try:
        run_once(_request(spec, spec.original.exe_path, seed_input, first_cmd))
    except SpawnError as exc:
        raise CampaignAborted(f"original binary cannot run seed input: {exc}") from exc

    state = _BudgetState(budget)
    tasks = []
    for vi, variant in enumerate(spec.variants):
        for fi, feature in enumerate(spec.features):
            for ci, cmd in enumerate(feature.commands):
                tasks.append((vi, fi, ci, variant, feature, cmd))

    results: dict[tuple[int, int, int], list[TestVerdict]] = {}
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {
            pool.submit(_run_task, spec, variant, feature, cmd, ci, plan, state): (vi, fi, ci)
            for vi, fi, ci, variant, feature, cmd in tasks
        }
        for future, key in futures.items():
            results[key] = future.result()

    per_variant: dict[str, list[TestVerdict]] = {v.label: [] for v in spec.variants}
    for vi, variant in enumerate(spec.variants):
        for fi in range(len(spec.features)):
            for ci in range(len(spec.features[fi].commands)):
                per_variant[variant.label].extend(results.get((vi, fi, ci), []))

    return CampaignReport(spec.id, per_variant, _summarize(spec, per_variant))


def _request(
    spec: BenchmarkSpec, exe_path, inp: DerivedInput, cmd
) -> ExecRequest:
    return ExecRequest(
        exe_path=exe_path,
        argv=list(inp.argv),
        stdin=inp.stdin,
        env=dict(spec.env),
        workdir=None,
        timeout_seconds=spec.timeout_seconds,
        capture_files=list(cmd.expected_output_files),
    )


def _run_task(
    spec: BenchmarkSpec,
    variant,
    feature: Feature,
    cmd,
    command_index: int,
    plan: MutationPlan,
    state: _BudgetState,
) -> list[TestVerdict]:
    pipeline = spec.pipeline_for(feature)
    verdicts = []
    for inp in derive_commands(cmd, plan, feature.name, command_index):
        if inp.is_fuzzed and not state.allow_fuzzed():
            break
        try:
            original_out = run_once(_request(spec, spec.original.exe_path, inp, cmd))
        except SpawnError:
            # Baseline failed to launch for this input: inconclusive.
            verdicts.append(
                TestVerdict(
                    Verdict.ORIGINAL_CRASH,
                    CompareReport((), False),
                    inp,
                    inp.is_fuzzed,
                    variant.label,
                    feature.name,
                    feature.disposition,
                    command_index,
                )
            )
            continue
        try:
            variant_out = run_once(_request(spec, variant.exe_path, inp, cmd))
        except SpawnError as exc:
            variant_out = _synthetic_exit(f"variant failed to launch: {exc}")
        report = compare(original_out, variant_out, pipeline)
        verdicts.append(
            TestVerdict(
                classify(feature.disposition, original_out, variant_out, report),
                report,
                inp,
                inp.is_fuzzed,
                variant.label,
                feature.name,
                feature.disposition,
                command_index,
            )
        )
    return verdicts


def _summarize(spec: BenchmarkSpec, per_variant: dict[str, list[TestVerdict]]) -> CampaignSummary:
    n = len(spec.variants)
    error_or_crash = 0
    unremoved = 0
    passed = 0
    for label in per_variant:
        values = {v.value for v in per_variant[label]}
        if values & {Verdict.VARIANT_CRASH, Verdict.VARIANT_TIMEOUT, Verdict.UNEXPECTED_DIFFERENCE}:
            error_or_crash += 1
        if Verdict.UNEXPECTED_MATCH in values:
            unremoved += 1
        if not values & FAILING_VERDICTS:
            passed += 1
    return CampaignSummary(
        variants_with_error_or_crash=(error_or_crash, error_or_crash / n),
        variants_with_unremoved_feature=(unremoved, unremoved / n),
        passed=passed,
    )


# --- Report serialization ----------------------------------------------

def verdict_to_json(v: TestVerdict) -> dict:
    return {
        "variant": v.variant_label,
        "feature": v.feature_name,
        "disposition": v.disposition.value,
        "command_index": v.command_index,
        "mutant_index": v.input_used.mutant_index,
        "is_fuzzed": v.is_fuzzed,
        "verdict": v.value.value,
        "argv": list(v.input_used.argv),
        "stdin_b64": base64.b64encode(v.input_used.stdin).decode("ascii"),
        "comparators": [
            {"comparator": r.config.describe(), "matched": r.matched, "evidence": r.evidence}
            for r in v.evidence.per_comparator
        ],
        "all_matched": v.evidence.all_matched,
    }


def report_to_jsonl(report: CampaignReport) -> bytes:
    """One verdict per line, canonically ordered; byte-stable across runs."""
    lines = []
    for label in sorted(report.per_variant):
        for v in report.per_variant[label]:
            lines.append(json.dumps(verdict_to_json(v), sort_keys=True))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def summary_to_json(report: CampaignReport) -> dict:
    count_ec, frac_ec = report.summary.variants_with_error_or_crash
    count_un, frac_un = report.summary.variants_with_unremoved_feature
    return {
        "spec_id": report.spec_id,
        "variants": {
            label: {
                "passed": report.variant_passed(label),
                "verdict_counts": _verdict_counts(report.per_variant[label]),
            }
            for label in sorted(report.per_variant)
        },
        "variants_with_error_or_crash": {"count": count_ec, "fraction": frac_ec},
        "variants_with_unremoved_feature": {"count": count_un, "fraction": frac_un},
        "passed": report.summary.passed,
    }


def _verdict_counts(verdicts: list[TestVerdict]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for v in verdicts:
        counts[v.value.value] = counts.get(v.value.value, 0) + 1
    return dict(sorted(counts.items()))
