"""Confusion matrices, overall accuracy and kappa.

Leaf is the positive class:

* TP: leaf predicted leaf
* TN: wood predicted wood
* FP: wood predicted leaf
* FN: leaf predicted wood

Two chance-agreement terms are supported. ``standard`` is Cohen's
``((TP+FP)(TP+FN) + (FN+TN)(FP+TN)) / N^2``. ``paper`` is the variant
``((TP+FP)(TP+TN) + (TN+FN)(FP+FN)) / N^2``, which pairs the predicted-leaf
marginal with the correct total instead of the true-leaf marginal. Both
agree whenever TP = TN and FP = FN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .io import LEAF, as_labels

KAPPA_VARIANTS = ("paper", "standard")
REPORT_COLUMNS = ("tree", "method", "p_o", "kappa_paper", "kappa_standard",
                  "TP", "TN", "FP", "FN")


@dataclass(frozen=True)
class ConfusionMatrix:
    TP: int
    TN: int
    FP: int
    FN: int

    def __post_init__(self):
        if min(self.TP, self.TN, self.FP, self.FN) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.N < 1:
            raise ValueError("confusion matrix is empty")

    @property
    def N(self):
        return self.TP + self.TN + self.FP + self.FN

    def __add__(self, other):
        return ConfusionMatrix(self.TP + other.TP, self.TN + other.TN,
                               self.FP + other.FP, self.FN + other.FN)

    def swapped(self):
        """The same matrix with leaf and wood roles exchanged."""
        return ConfusionMatrix(self.TN, self.TP, self.FN, self.FP)


@dataclass(frozen=True)
class Metrics:
    p_o: float
    kappa_paper: float
    kappa_standard: float


def confusion(pred, truth) -> ConfusionMatrix:
    pred = as_labels(pred)
    truth = as_labels(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions, {truth.shape[0]} truths")
    if pred.size == 0:
        raise ValueError("cannot evaluate empty label vectors")
    p_leaf = pred == LEAF
    t_leaf = truth == LEAF
    return ConfusionMatrix(
        TP=int(np.count_nonzero(p_leaf & t_leaf)),
        TN=int(np.count_nonzero(~p_leaf & ~t_leaf)),
        FP=int(np.count_nonzero(p_leaf & ~t_leaf)),
        FN=int(np.count_nonzero(~p_leaf & t_leaf)),
    )


def overall_accuracy(cm: ConfusionMatrix) -> float:
    return (cm.TP + cm.TN) / cm.N


def _chance(cm, variant):
    tp, tn, fp, fn = cm.TP, cm.TN, cm.FP, cm.FN
    if variant == "paper":
        num = (tp + fp) * (tp + tn) + (tn + fn) * (fp + fn)
    elif variant == "standard":
        num = (tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)
    else:
        raise ValueError(f"unknown kappa variant {variant!r}; expected one of {KAPPA_VARIANTS}")
    return Fraction(num, cm.N * cm.N)


def kappa(cm: ConfusionMatrix, variant: str = "paper") -> float:
    """Kappa coefficient ``(p_o - p_e) / (1 - p_e)``.

    Computed in exact rational arithmetic and rounded once. If the chance
    term equals 1 the result is 1 for perfect agreement and 0 otherwise.
    """
    p_e = _chance(cm, variant)
    p_o = Fraction(cm.TP + cm.TN, cm.N)
    if p_e == 1:
        return 1.0 if p_o == 1 else 0.0
    return float((p_o - p_e) / (1 - p_e))


def metrics(cm: ConfusionMatrix) -> Metrics:
    return Metrics(overall_accuracy(cm), kappa(cm, "paper"), kappa(cm, "standard"))


@dataclass(frozen=True)
class ReportRow:
    tree: str
    method: str
    cm: ConfusionMatrix

    @property
    def metrics(self):
        return metrics(self.cm)

    def as_dict(self):
        m = self.metrics
        return {"tree": self.tree, "method": self.method, "p_o": m.p_o,
                "kappa_paper": m.kappa_paper, "kappa_standard": m.kappa_standard,
                "TP": self.cm.TP, "TN": self.cm.TN, "FP": self.cm.FP, "FN": self.cm.FN}


def mean_row(rows, method):
    """Per-method means of p_o and both kappas (counts summed)."""
    sel = [r for r in rows if r.method == method]
    if not sel:
        return None
    ms = [r.metrics for r in sel]
    total = sel[0].cm
    for r in sel[1:]:
        total = total + r.cm
    return {"tree": "mean", "method": method,
            "p_o": float(np.mean([m.p_o for m in ms])),
            "kappa_paper": float(np.mean([m.kappa_paper for m in ms])),
            "kappa_standard": float(np.mean([m.kappa_standard for m in ms])),
            "TP": total.TP, "TN": total.TN, "FP": total.FP, "FN": total.FN}


def improvement(rows, method, baseline):
    """Per-tree metric differences ``method - baseline`` (an improvement column)."""
    base = {r.tree: r.metrics for r in rows if r.method == baseline}
    out = []
    for r in rows:
        if r.method != method or r.tree not in base:
            continue
        m, b = r.metrics, base[r.tree]
        out.append({"tree": r.tree, "method": f"{method}-minus-{baseline}",
                    "p_o": m.p_o - b.p_o, "kappa_paper": m.kappa_paper - b.kappa_paper,
                    "kappa_standard": m.kappa_standard - b.kappa_standard})
    return out


def report_table(rows, compare=None):
    """Rows for a report: per tree/method, per-method means, optional differences."""
    table = [r.as_dict() for r in rows]
    methods = list(dict.fromkeys(r.method for r in rows))
    for m in methods:
        table.append(mean_row(rows, m))
    if compare:
        method, baseline = compare
        diffs = improvement(rows, method, baseline)
        table.extend(diffs)
        if diffs:
            table.append({"tree": "mean", "method": f"{method}-minus-{baseline}",
                          **{k: float(np.mean([d[k] for d in diffs]))
                             for k in ("p_o", "kappa_paper", "kappa_standard")}})
    return table


def _cell(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_report_csv(table, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in table:
            writer.writerow([repr(row[c]) if isinstance(row.get(c), float) else row.get(c, "")
                             for c in REPORT_COLUMNS])


def format_report(table) -> str:
    """Aligned plain-text rendering of a report table."""
    cells = [list(REPORT_COLUMNS)] + [[_cell(row.get(c)) for c in REPORT_COLUMNS]
                                      for row in table]
    widths = [max(len(r[i]) for r in cells) for i in range(len(REPORT_COLUMNS))]
    lines = []
    for n, r in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if i >= 2 else c.ljust(w)
                               for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
