import numpy as np
import pytest

import metric_oracle as oracle
from limbchan.errors import EmptyInput, LengthMismatch
from limbchan.metrics import Metrics, f1_score, format_table, generalization_report, report_lines
from limbchan.wfdb import HEALTHY, DiagnosisLabel


def test_known_values():
    m = f1_score([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 1)
    assert m.precision == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3)


def test_degenerate_cases_are_zero():
    m = f1_score([0, 0, 0], [0, 0, 0])
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert f1_score([0, 0], [1, 1]).f1 == 0.0
    assert f1_score([1, 1], [1, 1]).f1 == 1.0


def test_errors():
    with pytest.raises(LengthMismatch):
        f1_score([1, 0], [1])
    with pytest.raises(EmptyInput):
        f1_score([], [])
    with pytest.raises(EmptyInput):
        generalization_report([], [])


@pytest.mark.parametrize("seed", range(5))
def test_against_oracle(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        pred, names = oracle.random_case(rng)
        truth = [n != HEALTHY for n in names]
        m = f1_score(pred, truth)
        assert (m.tp, m.fp, m.fn, m.tn) == oracle.counts(pred, truth)
        assert m.f1 == oracle.f1(pred, truth)
        rep = generalization_report(pred, names)
        expect = oracle.class_rows(list(pred), names)
        assert {r.class_name for r in rep.rows} == set(expect)
        for r in rep.rows:
            assert (r.n, r.rate, r.f1) == pytest.approx(expect[r.class_name], abs=0)


def test_record_level_majority():
    names = [HEALTHY] * 3 + ["Cardiomyopathy"] * 4
    rids = ["a", "a", "a", "b", "b", "c", "c"]
    pred = [1, 0, 0, 1, 1, 1, 0]
    rep = generalization_report(pred, names, rids)
    rec = rep.record_level
    assert rec.row(HEALTHY).n == 1 and rec.row(HEALTHY).rate == 1.0
    # tie in record c counts as abnormal
    assert rec.row("Cardiomyopathy").rate == 1.0


def test_labels_accepted_as_objects_and_rows_ordered():
    labels = [DiagnosisLabel.from_class_name(n) for n in
              ("Healthy Control", "Dysrhythmia", "Myocardial Infarction: inferior")]
    rep = generalization_report([0, 1, 1], labels)
    assert [r.class_name for r in rep.rows] == ["Myocardial Infarction: inferior", "Dysrhythmia", HEALTHY]
    lines = report_lines(rep, "m")
    assert lines[0].split("\t")[:6] == ["model", "scope", "class", "n", "rate", "f1"]
    assert len(lines) == 2 + 3
    assert "overall" in format_table(rep)


def test_metrics_from_counts():
    assert Metrics.from_counts(0, 0, 0, 5).f1 == 0.0
