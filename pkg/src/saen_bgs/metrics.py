"""Confusion tallies and the seven CDnet change-detection metrics."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

METRIC_NAMES = ("Rec", "Spe", "FPR", "FNR", "PWC", "Fm", "Pre")


@dataclass(frozen=True)
class Confusion:
    TP: int = 0
    FP: int = 0
    FN: int = 0
    TN: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.TP + other.TP, self.FP + other.FP, self.FN + other.FN, self.TN + other.TN)

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


def _as_binary(a, what):
    a = np.asarray(a)
    if a.dtype != bool:
        if not np.isin(a, (0, 1)).all():
            raise ValueError(f"{what} mask must be binary")
        a = a.astype(bool)
    return a


def accumulate(pred, gt, ignore=None) -> Confusion:
    """Tally a prediction against ground truth; ``ignore`` marks pixels to skip."""
    pred, gt = _as_binary(pred, "predicted"), _as_binary(gt, "ground-truth")
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: pred {pred.shape}, gt {gt.shape}")
    keep = np.ones(gt.shape, dtype=bool)
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != gt.shape:
            raise ValueError(f"ignore mask shape {ignore.shape} != {gt.shape}")
        keep = ~ignore
    p, g = pred[keep], gt[keep]
    return Confusion(
        TP=int(np.count_nonzero(p & g)),
        FP=int(np.count_nonzero(p & ~g)),
        FN=int(np.count_nonzero(~p & g)),
        TN=int(np.count_nonzero(~p & ~g)),
    )


def _ratio(num, den):
    return None if den == 0 else Fraction(num, den)


def metrics(conf: Confusion, exact: bool = False) -> dict:
    """All seven metrics in percent. Undefined ones (zero denominator) are ``None``.

    With ``exact`` the values are :class:`fractions.Fraction`, otherwise floats.
    """
    tp, fp, fn, tn = conf.TP, conf.FP, conf.FN, conf.TN
    rec = _ratio(tp, tp + fn)
    pre = _ratio(tp, tp + fp)
    if rec is None or pre is None or pre + rec == 0:
        fm = None
    else:
        fm = 2 * pre * rec / (pre + rec)
    out = {
        "Rec": rec,
        "Spe": _ratio(tn, tn + fp),
        "FPR": _ratio(fp, fp + tn),
        "FNR": _ratio(fn, tp + fn),
        "PWC": _ratio(fn + fp, conf.total),
        "Fm": fm,
        "Pre": pre,
    }
    out = {k: (None if v is None else v * 100) for k, v in out.items()}
    if not exact:
        out = {k: (None if v is None else float(v)) for k, v in out.items()}
    return out


def f_measure(pred, gt, ignore=None) -> float:
    """Fm in [0, 1] (0 when undefined) for quick monitoring."""
    fm = metrics(accumulate(pred, gt, ignore))["Fm"]
    return 0.0 if fm is None else fm / 100.0
