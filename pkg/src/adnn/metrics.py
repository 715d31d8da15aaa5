"""Recall / precision / F-measure with CDnet-style Ignore handling."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .histio import Label


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt) -> Confusion:
    """Count outcomes with Foreground as the positive class.

    Pixels whose ground truth is Ignore are skipped.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    if np.any(pred == Label.IGNORE):
        raise ValueError("prediction contains Ignore labels")
    valid = gt != Label.IGNORE
    p = (pred == Label.FOREGROUND) & valid
    g = (gt == Label.FOREGROUND) & valid
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(valid)) - tp - fp - fn
    return Confusion(tp, fp, fn, tn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def re_pr_fm(c) -> tuple[float, float, float]:
    """Recall, precision and their harmonic mean; 0/0 counts as 0."""
    if isinstance(c, Confusion):
        re = _ratio(c.tp, c.tp + c.fn)
        pr = _ratio(c.tp, c.tp + c.fp)
    else:
        re, pr = c
    return re, pr, _ratio(2 * pr * re, pr + re)


@dataclass
class EvalReport:
    names: list[str]
    confusions: list[Confusion]
    rows: list[tuple[float, float, float]] = field(init=False)
    overall: tuple[float, float, float] = field(init=False)

    def __post_init__(self):
        self.rows = [re_pr_fm(c) for c in self.confusions]
        # unweighted mean of per-video metrics, not pooled counts
        self.overall = tuple(float(np.mean([r[k] for r in self.rows])) for k in range(3))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("video,Re,Pr,Fm\n")
        for name, (re, pr, fm) in zip(self.names, self.rows):
            out.write(f"{name},{re:.6f},{pr:.6f},{fm:.6f}\n")
        re, pr, fm = self.overall
        out.write(f"Overall,{re:.6f},{pr:.6f},{fm:.6f}\n")
        return out.getvalue()


def aggregate(reports, names=None) -> EvalReport:
    """Per-video metrics plus their unweighted mean.

    ``reports`` is a list of per-video ``Confusion`` (frames already pooled)
    or a ``{name: Confusion}`` mapping.
    """
    if isinstance(reports, dict):
        names, reports = list(reports), list(reports.values())
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    if names is None:
        names = [f"video{i + 1}" for i in range(len(reports))]
    return EvalReport(list(names), reports)
