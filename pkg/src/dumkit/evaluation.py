"""Rank AUROC, Welch's t-test, and the metrics report built from them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

P_UNDERFLOW = 1e-300


class DegenerateVarianceError(ValueError):
    """Both samples have zero variance, so the t statistic is undefined."""


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank of their block."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    # block boundaries of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(x)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg); label 1 is the positive class, ties count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative examples")
    r = midranks(scores)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _betacf(a: float, b: float, x: float, max_iter: int = 100_000, tol: float = 1e-16) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, x_complement: float | None = None) -> float:
    """Regularized incomplete beta ``I_x(a, b)``.

    ``x_complement`` may carry an accurately computed ``1 - x`` when ``x`` is
    close to 1.
    """
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs 0 <= x <= 1")
    y = 1.0 - x if x_complement is None else x_complement
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, y) / b


def student_t_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if t == 0.0:
        return 1.0
    t2 = t * t
    x = df / (df + t2)
    return min(1.0, betainc(df / 2.0, 0.5, x, t2 / (df + t2)))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float
    p_underflow: bool


def welch_ttest(a, b) -> TTestResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of freedom.

    The statistic is ``(mean(a) - mean(b)) / se``. Two-sided p-values below
    1e-300 are reported as 0 with ``p_underflow`` set.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("welch_ttest needs at least two values per sample")
    va, vb = a.var(ddof=1) / na, b.var(ddof=1) / nb
    se2 = va + vb
    if se2 == 0.0:
        same = a.mean() == b.mean()
        raise DegenerateVarianceError(
            "both samples are constant"
            + (" and equal; report exact equality instead of a test" if same else "; means differ exactly")
        )
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = se2**2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    p = student_t_two_sided(t, df)
    if p < P_UNDERFLOW:
        return TTestResult(t, 0.0, float(df), True)
    return TTestResult(t, p, float(df), False)


@dataclass(frozen=True)
class MetricsReport:
    auroc: float
    t_statistic: float
    p_value: float
    p_underflow: bool
    df: float
    n_pos: int
    n_neg: int
    mean_pos: float
    sd_pos: float
    mean_neg: float
    sd_neg: float

    def to_text(self) -> str:
        lines = [f"{k}: {_fmt(v)}" for k, v in asdict(self).items()]
        lines.append("record: " + json.dumps(asdict(self), sort_keys=True))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def evaluate(scores, labels) -> MetricsReport:
    """AUROC (label 1 positive) and Welch t-test of positive vs negative scores."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    tt = welch_ttest(pos, neg)
    return MetricsReport(
        auroc=auroc(scores, labels),
        t_statistic=tt.t,
        p_value=tt.p,
        p_underflow=tt.p_underflow,
        df=tt.df,
        n_pos=len(pos),
        n_neg=len(neg),
        mean_pos=float(pos.mean()),
        sd_pos=float(pos.std(ddof=1)),
        mean_neg=float(neg.mean()),
        sd_neg=float(neg.std(ddof=1)),
    )
