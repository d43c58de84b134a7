"""
Estimators and hypothesis tests for the CHSH value.

The null hypothesis is local realism: every test returns an upper bound
on the probability of seeing the estimate (or a larger one) if the data
came from a local realist model.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from bell_lab import DomainError, TableError, warn
from bell_lab.correlation_table import EXCLUDE, OUTCOME_SIGNS, outcome_index
from bell_lab.event_model import Site

CHSH_CELLS = ((1, 1), (1, 2), (2, 1), (2, 2))
LOCAL_BOUND = 2.0
# Smallest cell size for which the normal approximation is trusted
NORMAL_MIN_N = 35

IID_FLAG = "assumes IID"
MARTINGALE_FLAG = "martingale method - closes memory loophole"
MIN_N_FLAG = "unequal N: min N used"
CLIPPED_FLAG = "normal bound clipped at 1"
SMALL_N_FLAG = f"N below {NORMAL_MIN_N}: normal approximation doubtful"
DEGENERATE_FLAG = "zero spread: t test degenerate"


def estimate_correlation(products):
    """Sample mean E* of a sequence of products and its size N."""
    products = np.asarray(products, dtype=np.float64)
    if products.size == 0:
        raise DomainError("no products to average")
    return float(products.mean()), int(products.size)


def sample_variance(e_star, n):
    """Unbiased variance N/(N-1) * (1 - E*^2) of +-1 products."""
    if n < 2:
        raise DomainError(f"sample variance needs N >= 2, got {n}")
    return n / (n - 1) * (1.0 - e_star**2)


def sample_variance_from_moments(n, first, second):
    """Unbiased variance from N, the sum and the sum of squares."""
    if n < 2:
        raise DomainError(f"sample variance needs N >= 2, got {n}")
    return max(0.0, (second - first * first / n) / (n - 1))


def cell_statistics(table, nodetect_value=EXCLUDE):
    """{(i, j): (N, E*, s^2)} over the four CHSH cells."""
    cells = {}
    for i, j in CHSH_CELLS:
        n, first, second = table.moments(i, j, nodetect_value)
        if n <= 0:
            raise TableError(f"missing cell ({i}, {j})")
        if n < 2:
            raise DomainError(f"cell ({i}, {j}) has N = {int(n)} < 2")
        cells[(i, j)] = (n, first / n, sample_variance_from_moments(n, first, second))
    return cells


def beta_star(table, nodetect_value=EXCLUDE):
    """(beta*, s_beta*) with s^2 = sum of s_ij^2 / N_ij."""
    cells = cell_statistics(table, nodetect_value)
    e = {cell: values[1] for cell, values in cells.items()}
    beta = abs(e[(1, 1)] + e[(1, 2)]) + abs(e[(2, 1)] - e[(2, 2)])
    variance = sum(s2 / n for n, _, s2 in cells.values())
    return beta, math.sqrt(variance)


def equal_n_spread(table, nodetect_value=EXCLUDE):
    """s / sqrt(N) shortcut when all cells share N; None otherwise."""
    cells = cell_statistics(table, nodetect_value)
    sizes = {n for n, _, _ in cells.values()}
    if len(sizes) != 1:
        return None
    n = sizes.pop()
    s = math.sqrt(sum(s2 for _, _, s2 in cells.values()))
    return s / math.sqrt(n)


def k_sigma(beta, s_beta, bound=LOCAL_BOUND):
    """Standard deviations of violation, (beta* - bound) / s."""
    if s_beta <= 0:
        raise DomainError("standard deviation must be positive")
    return (beta - bound) / s_beta


@dataclass(frozen=True)
class NormalTail:
    tail: float
    bound: float
    clipped: bool = False


def normal_tail_bound(k):
    """phi(k) / k, the closed-form upper bound on 1 - Phi(k)."""
    return stats.norm.pdf(k) / k


def p_value_normal(k):
    """1 - Phi(k) and its closed-form bound; both 1 for k <= 0."""
    if k <= 0:
        return NormalTail(1.0, 1.0, clipped=True)
    bound = normal_tail_bound(k)
    clipped = bound > 1.0
    return NormalTail(float(stats.norm.sf(k)), min(1.0, float(bound)), clipped)


def p_value_hoeffding(beta, n_cells):
    """exp(-N (beta* - 2)^2 / 32), N the smallest cell size."""
    if np.ndim(n_cells) == 0:
        n = float(n_cells)
    else:
        n = float(min(n_cells))
    if n <= 0:
        raise DomainError("Hoeffding bound needs N > 0")
    if beta <= LOCAL_BOUND:
        return 1.0
    return math.exp(-n * (beta - LOCAL_BOUND) ** 2 / 32.0)


def hoeffding_tail(k):
    """Hoeffding bound for a deviation of k * 4 / sqrt(N)."""
    if k <= 0:
        return 1.0
    return math.exp(-k * k / 2.0)


@dataclass(frozen=True)
class CoarseGrainedTest:
    beta: float
    s_beta: float
    p: float
    subsamples: int
    flags: Tuple[str, ...] = ()


def coarse_grained_t(values):
    """Mean and standard error of subsample betas, p from Student t with n - 1 dof."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise DomainError(f"coarse graining needs at least 2 subsamples, got {n}")
    mean = float(values.mean())
    s_beta = float(values.std(ddof=1) / math.sqrt(n))
    if s_beta == 0:
        p = 0.0 if mean > LOCAL_BOUND else 1.0
        return CoarseGrainedTest(mean, 0.0, p, n, (DEGENERATE_FLAG,))
    t_value = (mean - LOCAL_BOUND) / s_beta
    return CoarseGrainedTest(mean, s_beta, float(stats.t.sf(t_value, df=n - 1)), n)


def _subsample_beta(settings_a, settings_b, products):
    e = {}
    for i, j in CHSH_CELLS:
        mask = (settings_a == i) & (settings_b == j)
        if not mask.any():
            raise TableError(f"missing cell ({i}, {j}) in a subsample")
        e[(i, j)] = float(products[mask].mean())
    return abs(e[(1, 1)] + e[(1, 2)]) + abs(e[(2, 1)] - e[(2, 2)])


def coarse_grain(log, pairing, n_subsamples):
    """Betas of n_subsamples contiguous, time-ordered blocks of coincidences."""
    if n_subsamples < 2:
        raise DomainError("coarse graining needs at least 2 subsamples")
    stream_a = log.stream(Site.A)
    stream_b = log.stream(Site.B)
    order = np.argsort(stream_a.time[pairing.idx_a], kind="mergesort")
    idx_a = pairing.idx_a[order]
    idx_b = pairing.idx_b[order]
    settings_a = stream_a.setting[idx_a]
    settings_b = stream_b.setting[idx_b]
    products = OUTCOME_SIGNS[outcome_index(stream_a.channel[idx_a])] * OUTCOME_SIGNS[outcome_index(stream_b.channel[idx_b])]
    blocks = np.array_split(np.arange(len(idx_a)), n_subsamples)
    return [_subsample_beta(settings_a[b], settings_b[b], products[b]) for b in blocks]


@dataclass(frozen=True)
class TestReport:
    beta: float
    s_beta: float
    k: float
    p_normal: float
    p_normal_bound: float
    p_hoeffding: float
    n_cells: Dict[Tuple[int, int], float]
    s_cells: Dict[Tuple[int, int], float]
    equal_n_s: Optional[float] = None
    coarse: Optional[CoarseGrainedTest] = None
    flags: Tuple[str, ...] = field(default_factory=tuple)

    # pytest collects classes named Test*
    __test__ = False


def chsh_test_report(table, nodetect_value=EXCLUDE, subsample_betas: Optional[Sequence[float]] = None):
    """All tests of the local-realist bound 2 for the CHSH cells of a table."""
    cells = cell_statistics(table, nodetect_value)
    beta, s_beta = beta_star(table, nodetect_value)
    flags = [IID_FLAG, MARTINGALE_FLAG]
    n_cells = {cell: values[0] for cell, values in cells.items()}

    if s_beta > 0:
        k = k_sigma(beta, s_beta)
    else:
        k = math.inf if beta > LOCAL_BOUND else 0.0
    normal = p_value_normal(k) if math.isfinite(k) else NormalTail(0.0, 0.0)
    if normal.clipped and k > 0:
        flags.append(CLIPPED_FLAG)

    if len(set(n_cells.values())) > 1:
        flags.append(MIN_N_FLAG)
    if min(n_cells.values()) < NORMAL_MIN_N:
        warn(f"smallest cell has N = {int(min(n_cells.values()))}; normal approximation needs about {NORMAL_MIN_N}")
        flags.append(SMALL_N_FLAG)

    coarse = coarse_grained_t(subsample_betas) if subsample_betas is not None else None
    return TestReport(
        beta=beta,
        s_beta=s_beta,
        k=k,
        p_normal=normal.tail,
        p_normal_bound=normal.bound,
        p_hoeffding=p_value_hoeffding(beta, list(n_cells.values())),
        n_cells=n_cells,
        s_cells={cell: math.sqrt(values[2]) for cell, values in cells.items()},
        equal_n_s=equal_n_spread(table, nodetect_value),
        coarse=coarse,
        flags=tuple(flags),
    )
