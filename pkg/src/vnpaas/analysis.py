"""Response-time statistics: Grubbs outlier removal, ECDFs, candlesticks and
first-order stochastic dominance."""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass
class ResponseSample:
    message_id: int
    interface: str
    command: str
    response_time: float
    run_id: str = ""
    setup: str = ""
    R: float = 0.0
    instance_id: str = ""
    created_at: int = 0
    completed_at: int = 0
    zone: str = ""

    def __post_init__(self):
        if not self.response_time > 0:
            raise ValueError(f"response time must be positive, got {self.response_time}")


# Student t via the regularized incomplete beta ----------------------------

def _betacf(a, b, x, eps=1e-16, max_iter=500):
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
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t, df):
    """Upper tail P(T > t) for Student t with ``df`` degrees of freedom."""
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_pdf(t, df):
    ln = (math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0) - 0.5 * math.log(df * math.pi)
          - (df + 1) / 2.0 * math.log1p(t * t / df))
    return math.exp(ln)


@lru_cache(maxsize=4096)
def t_isf(p, df):
    """t with P(T > t) = p, by safeguarded Newton steps on the incomplete beta."""
    if not 0 < p < 1:
        raise ValueError(f"tail probability must lie in (0, 1), got {p}")
    if p > 0.5:
        return -t_isf(1.0 - p, df)
    lo, hi = 0.0, 1.0
    while t_sf(hi, df) > p:
        lo, hi = hi, hi * 2.0
    t = 0.5 * (lo + hi)
    for _ in range(200):
        f = t_sf(t, df) - p
        if f > 0:
            lo = t
        else:
            hi = t
        step = f / t_pdf(t, df)
        nxt = t + step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - t) <= 1e-12 * max(1.0, abs(t)):
            return nxt
        t = nxt
    return t


def grubbs_critical(n, alpha=0.05):
    """Two-sided Grubbs critical value for sample size ``n``."""
    if n < 3:
        raise ValueError("Grubbs test needs at least 3 samples")
    t = t_isf(alpha / (2 * n), n - 2)
    return (n - 1) / math.sqrt(n) * math.sqrt(t * t / (n - 2 + t * t))


@dataclass
class GrubbsResult:
    values: list
    removed: list = field(default_factory=list)
    warning: bool = False

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def grubbs_filter(samples, alpha=0.05):
    """Iterated two-sided Grubbs test, one removal per round.

    ``removed`` lists original indices in removal order. When two points
    deviate equally, the one with the lower index goes first. Fewer than
    three samples, or zero spread, stop the test.
    """
    if not 0 < alpha <= 0.2:
        raise ValueError(f"alpha must lie in (0, 0.2], got {alpha}")
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 3:
        return GrubbsResult(list(samples), [], warning=True)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    lo, hi = 0, n
    removed = []
    while hi - lo >= 3:
        window = xs[lo:hi]
        mean = window.mean()
        sd = window.std(ddof=1)
        if sd == 0.0:
            break
        dev_lo = mean - xs[lo]
        dev_hi = xs[hi - 1] - mean
        # the lowest original index among tied extremes sits at the block start
        j = hi - 1
        while j > lo and xs[j - 1] == xs[hi - 1]:
            j -= 1
        hi_idx = order[j]
        if dev_hi > dev_lo or (dev_hi == dev_lo and hi_idx < order[lo]):
            g = dev_hi / sd
            if g <= grubbs_critical(hi - lo, alpha):
                break
            if j != hi - 1:
                order[j], order[hi - 1] = order[hi - 1], order[j]
                # keep the block sorted by index for later rounds
                tail = order[j:hi - 1]
                order[j:hi - 1] = np.sort(tail)
            removed.append(int(order[hi - 1]))
            hi -= 1
        else:
            g = dev_lo / sd
            if g <= grubbs_critical(hi - lo, alpha):
                break
            removed.append(int(order[lo]))
            lo += 1
    keep = np.ones(n, dtype=bool)
    keep[removed] = False
    return GrubbsResult([samples[i] for i in np.flatnonzero(keep)], removed)


# distribution summaries ---------------------------------------------------

def ecdf(samples):
    """[(value, F(value))] at each distinct value, ascending."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("ecdf of an empty sample")
    values, idx = np.unique(x, return_index=True)
    counts = np.append(idx[1:], x.size)
    return list(zip(values.tolist(), (counts / x.size).tolist()))


def ecdf_at(samples, points):
    x = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(x, np.asarray(points, dtype=float), side="right") / x.size


@dataclass(frozen=True)
class CandlestickSummary:
    min: float
    q1: float
    mean: float
    q3: float
    max: float
    n: int


def candlestick(samples):
    """Min, quartiles (inclusive linear interpolation), mean and max."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("candlestick of an empty sample")
    q1, q3 = np.quantile(x, [0.25, 0.75], method="linear")
    return CandlestickSummary(float(x.min()), float(q1), float(x.mean()), float(q3),
                              float(x.max()), int(x.size))


def median(samples):
    return float(np.median(np.asarray(samples, dtype=float)))


@dataclass(frozen=True)
class DominanceReport:
    verdict: str
    median_ratio: float
    max_gap: float


def dominance_report(a, b):
    """First-order dominance between samples ``a`` and ``b``.

    ``a_dominates`` means a's ECDF is nowhere below b's and somewhere above
    it (a is stochastically smaller). ``median_ratio`` is median(b) /
    median(a); ``max_gap`` is the largest F_a - F_b violation for the losing
    side, zero when one side dominates.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("dominance needs two non-empty samples")
    support = np.union1d(a, b)
    fa = np.searchsorted(a, support, side="right") / a.size
    fb = np.searchsorted(b, support, side="right") / b.size
    diff = fa - fb
    ma, mb = float(np.median(a)), float(np.median(b))
    ratio = mb / ma if ma else math.inf
    if diff.min() >= 0 and diff.max() > 0:
        return DominanceReport("a_dominates", ratio, 0.0)
    if diff.max() <= 0 and diff.min() < 0:
        return DominanceReport("b_dominates", ratio, 0.0)
    return DominanceReport("crossing", ratio, float(min(diff.max(), -diff.min())))
