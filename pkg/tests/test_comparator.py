from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from debloateval.comparator import (
    ComparatorConfig,
    ComparatorKind,
    ComparatorPipeline,
    EVIDENCE_LIMIT,
    Normalizer,
    compare,
    default_pipeline,
)
from debloateval.exec_harness import ExecOutcome, Termination


def outcome(stdout=b"", stderr=b"", termination=None, files=None) -> ExecOutcome:
    return ExecOutcome(
        termination or Termination.exited(0),
        stdout,
        stderr,
        files or {},
        0.0,
        0.0,
        0,
    )


def pipeline(*kinds_or_cfgs) -> ComparatorPipeline:
    cfgs = tuple(
        c if isinstance(c, ComparatorConfig) else ComparatorConfig(c)
        for c in kinds_or_cfgs
    )
    return ComparatorPipeline(cfgs)


def test_default_pipeline_composition():
    kinds = [c.kind for c in default_pipeline().comparators]
    assert kinds == [
        ComparatorKind.EXIT_STATUS,
        ComparatorKind.STDOUT_EXACT,
        ComparatorKind.STDERR_EXACT,
        ComparatorKind.FILE_SET,
    ]


def test_identical_outcomes_match_everywhere():
    a = outcome(b"out", b"err", files={"f": (True, b"\x01" * 32)})
    report = compare(a, a, default_pipeline())
    assert report.all_matched
    assert all(r.matched and r.evidence == "" for r in report.per_comparator)


def test_exit_status_mismatch_names_both_sides():
    report = compare(
        outcome(termination=Termination.exited(0)),
        outcome(termination=Termination.exited(1)),
        pipeline(ComparatorKind.EXIT_STATUS),
    )
    assert not report.all_matched
    assert "vs" in report.per_comparator[0].evidence


def test_signal_vs_exit_differ():
    report = compare(
        outcome(termination=Termination.exited(0)),
        outcome(termination=Termination.signaled(11)),
        pipeline(ComparatorKind.EXIT_STATUS),
    )
    assert not report.all_matched


def test_no_short_circuit_evaluates_every_comparator():
    report = compare(
        outcome(b"x", b"y", termination=Termination.exited(1)),
        outcome(b"a", b"b", termination=Termination.exited(2)),
        default_pipeline(),
    )
    assert [r.matched for r in report.per_comparator] == [False, False, False, True]


def test_stdout_evidence_locates_first_difference():
    prefix = b"A" * 100
    report = compare(
        outcome(prefix + b"left"),
        outcome(prefix + b"right"),
        pipeline(ComparatorKind.STDOUT_EXACT),
    )
    evidence = report.per_comparator[0].evidence
    assert "first difference at byte 100" in evidence
    assert len(evidence) <= EVIDENCE_LIMIT


def test_evidence_escapes_nonprintable_bytes():
    report = compare(
        outcome(b"\x00\xff"),
        outcome(b"\x00\xfe"),
        pipeline(ComparatorKind.STDOUT_EXACT),
    )
    assert "\\xff" in report.per_comparator[0].evidence


def test_prefix_difference_points_past_shorter_side():
    report = compare(
        outcome(b"abc"),
        outcome(b"abcdef"),
        pipeline(ComparatorKind.STDOUT_EXACT),
    )
    assert "at byte 3" in report.per_comparator[0].evidence


def test_normalizer_absorbs_expected_difference():
    cfg = ComparatorConfig(
        ComparatorKind.STDOUT_NORMALIZED,
        normalizers=(Normalizer(r"pid \d+", "pid N"),),
    )
    report = compare(outcome(b"pid 41 ok"), outcome(b"pid 7 ok"), pipeline(cfg))
    assert report.all_matched


def test_normalizers_apply_in_order():
    cfg = ComparatorConfig(
        ComparatorKind.STDOUT_NORMALIZED,
        normalizers=(Normalizer(r"\d+", "N"), Normalizer(r"N", "M")),
    )
    report = compare(outcome(b"v1"), outcome(b"v2"), pipeline(cfg))
    assert report.all_matched


def test_normalized_kind_requires_normalizers():
    with pytest.raises(ValueError):
        ComparatorConfig(ComparatorKind.STDOUT_NORMALIZED)
    with pytest.raises(ValueError):
        ComparatorConfig(ComparatorKind.STDOUT_EXACT, normalizers=(Normalizer("a", "b"),))


def test_bad_normalizer_pattern_rejected_eagerly():
    with pytest.raises(Exception):
        Normalizer("(unclosed", "x")


def test_file_digest_requires_path():
    with pytest.raises(ValueError):
        ComparatorConfig(ComparatorKind.FILE_DIGEST)
    cfg = ComparatorConfig(ComparatorKind.FILE_DIGEST, path="out.bin")
    assert cfg.describe() == "file_digest(out.bin)"


def test_file_digest_compares_content():
    cfg = ComparatorConfig(ComparatorKind.FILE_DIGEST, path="out.bin")
    a = outcome(files={"out.bin": (True, b"\xaa" * 32)})
    b = outcome(files={"out.bin": (True, b"\xbb" * 32)})
    report = compare(a, b, pipeline(cfg))
    assert not report.all_matched
    assert "out.bin" in report.per_comparator[0].evidence


def test_file_digest_existence_mismatch():
    cfg = ComparatorConfig(ComparatorKind.FILE_DIGEST, path="out.bin")
    a = outcome(files={"out.bin": (True, b"\xaa" * 32)})
    b = outcome(files={"out.bin": (False, b"")})
    assert not compare(a, b, pipeline(cfg)).all_matched


def test_file_set_ignores_content_and_absent_entries():
    a = outcome(files={"x": (True, b"1" * 32), "y": (False, b"")})
    b = outcome(files={"x": (True, b"2" * 32)})
    assert compare(a, b, pipeline(ComparatorKind.FILE_SET)).all_matched


def test_file_set_reports_sets_on_mismatch():
    a = outcome(files={"x": (True, b"1" * 32)})
    b = outcome(files={})
    report = compare(a, b, pipeline(ComparatorKind.FILE_SET))
    assert not report.all_matched
    assert "'x'" in report.per_comparator[0].evidence


def test_empty_pipeline_rejected():
    with pytest.raises(ValueError):
        ComparatorPipeline(())


@given(st.binary(max_size=200), st.binary(max_size=200))
def test_compare_is_symmetric_in_match(a_bytes, b_bytes):
    a = outcome(a_bytes, b_bytes)
    b = outcome(b_bytes, a_bytes)
    forward = compare(a, b, default_pipeline())
    backward = compare(b, a, default_pipeline())
    assert forward.all_matched == backward.all_matched


@given(st.binary(max_size=200))
def test_compare_is_reflexive(data):
    a = outcome(data, data, files={"f": (True, data[:32].ljust(32, b"\x00"))})
    assert compare(a, a, default_pipeline()).all_matched


@given(st.binary(max_size=400), st.binary(max_size=400))
def test_evidence_is_bounded(a_bytes, b_bytes):
    report = compare(
        outcome(a_bytes), outcome(b_bytes), pipeline(ComparatorKind.STDOUT_EXACT)
    )
    for result in report.per_comparator:
        assert len(result.evidence) <= EVIDENCE_LIMIT
