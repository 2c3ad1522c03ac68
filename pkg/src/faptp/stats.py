"""Post-processing across multi-seed result files: paired two-tailed t-test.

Reads two results CSVs produced by the evaluation driver (e.g. one per
method over the same grid of (scene, beta) cells, or one per seed) and
tests whether a metric's paired differences are significant. The Student-t
tail probability uses the regularized incomplete beta function evaluated
by its standard continued fraction, so the module stays dependency-free.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import metrics


def _betacf(a, b, x, max_iter=200, eps=3e-12):
    """Continued fraction for the incomplete beta function."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1e-300:
        d = 1e-300
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def _betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t, df):
    """Two-tailed Student-t tail probability P(|T| >= |t|)."""
    if df <= 0:
        return float("nan")
    x = df / (df + t * t)
    return _betainc(df / 2.0, 0.5, x)


@dataclass
class PairedTest:
    metric: str
    n: int
    mean_diff: float
    t_stat: float
    df: int
    p_value: float

    def significant(self, alpha=0.05):
        return self.p_value < alpha


def paired_ttest(values_a, values_b, metric="min_ade"):
    """Paired two-tailed t-test on aligned value sequences."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired test needs two equally long 1-D sequences")
    d = a - b
    n = len(d)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        t = float("inf") if mean != 0 else 0.0
    else:
        t = mean / (sd / math.sqrt(n))
    p = 0.0 if math.isinf(t) else t_sf(t, n - 1)
    return PairedTest(metric=metric, n=n, mean_diff=mean, t_stat=t, df=n - 1, p_value=p)


def compare_results(csv_a, csv_b, metric="min_ade"):
    """Pair two results CSVs on (scene, beta) and test the metric difference."""
    rows_a = {(r.scene, r.beta): r for r in metrics.read_results_csv(csv_a)}
    rows_b = {(r.scene, r.beta): r for r in metrics.read_results_csv(csv_b)}
    keys = sorted(set(rows_a) & set(rows_b))
    if not keys:
        raise ValueError("no overlapping (scene, beta) cells between the files")
    va = [getattr(rows_a[k], metric) for k in keys]
    vb = [getattr(rows_b[k], metric) for k in keys]
    return paired_ttest(va, vb, metric=metric)
