"""Precision/recall/F1 and per-disease generalization reports.

The positive class is "abnormal". Precision, recall and F1 are 0 whenever
their denominators vanish.
"""
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .wfdb import CLASS_NAMES, HEALTHY


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp, fp, fn, tn):
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(int(tp), int(fp), int(fn), int(tn), p, r, f1)


def f1_score(predictions, labels):
    pred = np.asarray(predictions).astype(bool)
    lab = np.asarray(labels).astype(bool)
    if pred.shape != lab.shape:
        raise LengthMismatch(f"{pred.size} predictions for {lab.size} labels")
    if pred.size == 0:
        raise EmptyInput("no samples to score")
    tp = int(np.sum(pred & lab))
    fp = int(np.sum(pred & ~lab))
    fn = int(np.sum(~pred & lab))
    tn = int(np.sum(~pred & ~lab))
    return Metrics.from_counts(tp, fp, fn, tn)


@dataclass(frozen=True)
class ClassRow:
    class_name: str
    n: int
    rate: float  # recall-as-abnormal, or specificity for the healthy class
    f1: float  # binary F1 on this class plus all healthy frames


@dataclass
class GeneralizationReport:
    overall: Metrics
    rows: list
    record_level: "GeneralizationReport | None" = field(default=None)

    def row(self, class_name):
        for r in self.rows:
            if r.class_name == class_name:
                return r
        raise KeyError(class_name)


def _class_order(names):
    present = set(names)
    ordered = [c for c in CLASS_NAMES if c in present]
    return ordered + sorted(present - set(ordered))


def _report(pred, names):
    pred = np.asarray(pred).astype(bool)
    names = np.asarray(names, dtype=object)
    healthy = names == HEALTHY
    overall = f1_score(pred, ~healthy)
    rows = []
    for cls in _class_order(list(names)):
        mask = names == cls
        n = int(mask.sum())
        if cls == HEALTHY:
            rate = float(np.mean(~pred[mask]))
            f1 = f1_score(pred[mask], np.zeros(n, dtype=bool)).f1
        else:
            rate = float(np.mean(pred[mask]))
            sel = mask | healthy
            f1 = f1_score(pred[sel], ~healthy[sel]).f1
        rows.append(ClassRow(cls, n, rate, f1))
    return GeneralizationReport(overall, rows)


def generalization_report(predictions, labels, record_ids=None):
    """Frame-level report; with ``record_ids`` a record-level majority-vote
    report is attached as ``record_level`` (ties count as abnormal)."""
    pred = np.asarray(predictions)
    if pred.size != len(labels):
        raise LengthMismatch(f"{pred.size} predictions for {len(labels)} labels")
    if pred.size == 0:
        raise EmptyInput("no samples to report on")
    names = [lab.class_name if hasattr(lab, "class_name") else str(lab) for lab in labels]
    rep = _report(pred, names)
    if record_ids is not None:
        votes = defaultdict(list)
        rec_class = {}
        for p, name, rid in zip(pred, names, record_ids):
            votes[rid].append(bool(p))
            rec_class[rid] = name
        rids = sorted(votes)
        rec_pred = [2 * sum(votes[r]) >= len(votes[r]) for r in rids]
        rep.record_level = _report(rec_pred, [rec_class[r] for r in rids])
    return rep


REPORT_COLUMNS = ("class", "n", "rate", "f1")


def report_lines(report, model="model"):
    """Machine-readable tab-separated lines with a fixed column order."""
    o = report.overall
    lines = ["\t".join(("model", "scope") + REPORT_COLUMNS + ("tp", "fp", "fn", "tn", "precision", "recall"))]
    lines.append("\t".join([model, "overall", "ALL", str(o.tp + o.fp + o.fn + o.tn), "",
                            f"{o.f1:.6f}", str(o.tp), str(o.fp), str(o.fn), str(o.tn),
                            f"{o.precision:.6f}", f"{o.recall:.6f}"]))
    for r in report.rows:
        lines.append("\t".join([model, "class", r.class_name, str(r.n), f"{r.rate:.6f}",
                                f"{r.f1:.6f}", "", "", "", "", "", ""]))
    return lines


def format_table(report, title=None):
    """Human-readable fixed-width table."""
    w = max([len(r.class_name) for r in report.rows] + [len("overall")])
    out = []
    if title:
        out.append(title)
    out.append(f"{'class':<{w}}  {'n':>6}  {'rate':>7}  {'f1':>7}")
    for r in report.rows:
        out.append(f"{r.class_name:<{w}}  {r.n:>6d}  {r.rate:>7.4f}  {r.f1:>7.4f}")
    o = report.overall
    out.append(f"{'overall':<{w}}  {o.tp + o.fp + o.fn + o.tn:>6d}  {'':>7}  {o.f1:>7.4f}"
               f"  (P={o.precision:.4f} R={o.recall:.4f})")
    return "\n".join(out)


def class_counts(labels):
    return Counter(lab.class_name for lab in labels)
