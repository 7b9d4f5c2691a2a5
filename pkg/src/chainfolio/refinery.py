"""Metric refinement: correlation-ranked selection and rolling transforms.

The pipeline turns a raw pool of per-asset metric series into a compact
feature matrix:

1. compute k-bar returns of the close price for three horizons,
2. rank every metric by Pearson correlation against those returns and
   keep the strongest positive/negative performers per horizon,
3. rank the union by how many horizons picked each metric,
4. rolling-normalize the surviving columns, then
5. rolling PCA keeping the fewest components that explain at least the
   target fraction (default 80%) of trailing-window variance.

Every transform is trailing-window only; no output row ever depends on
data after its own timestamp.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .datastore import AlignedFrame
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

DEFAULT_NORM_WINDOW = 50
DEFAULT_PCA_WINDOW = 200
DEFAULT_VARIANCE_TARGET = 0.80
DEFAULT_EPSILON = 1e-8

# eigenvalues below max_eig * RANK_TOL are treated as numerically zero
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class HorizonConfig:
    """Return horizons and selection sizes for the correlation ranking."""

    horizons: tuple[int, int, int] = (12, 24, 48)
    top_per_group: int = 5
    final_count: int = 10
    #: pair metric value at t with the forward k-bar return starting at t;
    #: False pairs it with the trailing return ending at t.
    forward_returns: bool = True

    def __post_init__(self):
        hs = self.horizons
        if len(hs) != 3 or any(h <= 0 for h in hs) or list(hs) != sorted(set(hs)):
            raise ConfigError(f"horizons must be 3 distinct ascending positive ints, got {hs}")
        if self.top_per_group <= 0 or self.final_count <= 0:
            raise ConfigError("top_per_group and final_count must be positive")
        if self.final_count > 3 * 2 * self.top_per_group:
            raise ConfigError("final_count exceeds the largest possible candidate pool")


def k_period_returns(close: np.ndarray, k: int) -> np.ndarray:
    """Simple k-bar returns: out[i] = close[i+k]/close[i] - 1, length T-k."""
    close = np.asarray(close, dtype=np.float64)
    if k <= 0:
        raise ConfigError("k must be positive")
    if k >= len(close):
        raise DataError(f"series of length {len(close)} too short for k={k}")
    if np.any(close <= 0):
        raise DataError("prices must be positive")
    return close[k:] / close[:-k] - 1.0


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Sample Pearson correlation; None when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise DataError("need at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sum(dx * dx))
    sy = float(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.sum(dx * dy) / math.sqrt(sx * sy))


@dataclass
class CorrelationTable:
    """Pearson coefficient per (metric, horizon); None marks undefined."""

    horizons: tuple[int, ...]
    names: list[str]
    coefficients: dict[tuple[str, int], float | None]

    def r(self, name: str, horizon: int) -> float | None:
        return self.coefficients[(name, horizon)]

    def rows(self) -> list[tuple[str, int, float | None, int | None]]:
        """(metric, horizon, r, rank) rows; rank is the 1-based position in
        the horizon's descending-r order, None for undefined r."""
        out = []
        for h in self.horizons:
            ranked = _ranked_names(self, h)
            rank_of = {name: i + 1 for i, name in enumerate(ranked)}
            for name in self.names:
                out.append((name, h, self.coefficients[(name, h)], rank_of.get(name)))
        return out


@dataclass
class SelectedMetricSet:
    """Outcome of the correlation-ranked selection."""

    names: list[str]
    frequency: dict[str, int]
    #: per-name list of (horizon, rank within the horizon's descending-r
    #: order, sign of r) for each horizon group that picked the name
    provenance: dict[str, list[tuple[int, int, int]]]
    shortfall: bool
    table: CorrelationTable = field(repr=False)


def correlation_table(frame: AlignedFrame, cfg: HorizonConfig) -> CorrelationTable:
    """Correlate every metric column against each horizon's returns."""
    t = len(frame)
    max_h = max(cfg.horizons)
    if t < max_h + 3:
        raise DataError(f"frame has {t} rows; need at least {max_h + 3} for horizon {max_h}")
    if not frame.metric_names:
        raise DataError("frame has no metric columns")
    coefficients: dict[tuple[str, int], float | None] = {}
    for h in cfg.horizons:
        rets = k_period_returns(frame.close, h)
        for j, name in enumerate(frame.metric_names):
            col = frame.metrics[:, j]
            if cfg.forward_returns:
                # metric value at t against the return over (t, t+h]
                coefficients[(name, h)] = pearson(col[: t - h], rets)
            else:
                # metric value at t against the return over (t-h, t]
                coefficients[(name, h)] = pearson(col[h:], rets)
    return CorrelationTable(tuple(cfg.horizons), list(frame.metric_names), coefficients)


def _ranked_names(table: CorrelationTable, horizon: int) -> list[str]:
    defined = [(n, table.coefficients[(n, horizon)]) for n in table.names]
    defined = [(n, r) for n, r in defined if r is not None]
    defined.sort(key=lambda item: (-item[1], item[0]))
    return [n for n, _ in defined]


def select_from_table(table: CorrelationTable, cfg: HorizonConfig) -> SelectedMetricSet:
    """Rank horizon groups by appearance frequency and keep the strongest.

    Per horizon, the ``top_per_group`` highest and lowest defined
    coefficients form the group.  Candidates are ordered by (appearance
    frequency desc, max |r| over defined horizons desc, name asc) and the
    first ``final_count`` survive.
    """
    groups: dict[int, list[str]] = {}
    any_defined = False
    for h in table.horizons:
        ranked = _ranked_names(table, h)
        any_defined = any_defined or bool(ranked)
        picked = ranked[: cfg.top_per_group] + ranked[-cfg.top_per_group:]
        groups[h] = sorted(set(picked), key=ranked.index)
    if not any_defined:
        raise DataError("all correlations undefined; metric pool is degenerate")

    frequency: dict[str, int] = {}
    provenance: dict[str, list[tuple[int, int, int]]] = {}
    for h in table.horizons:
        ranked = _ranked_names(table, h)
        for name in groups[h]:
            r = table.coefficients[(name, h)]
            frequency[name] = frequency.get(name, 0) + 1
            sign = 0 if r == 0 else (1 if r > 0 else -1)
            provenance.setdefault(name, []).append((h, ranked.index(name) + 1, sign))

    def strength(name: str) -> float:
        vals = [table.coefficients[(name, h)] for h in table.horizons]
        return max(abs(v) for v in vals if v is not None)

    candidates = sorted(frequency, key=lambda n: (-frequency[n], -strength(n), n))
    shortfall = len(candidates) < cfg.final_count
    if shortfall:
        log.warning("only %d candidate metrics for final_count=%d", len(candidates), cfg.final_count)
    names = candidates[: cfg.final_count]
    return SelectedMetricSet(
        names=names,
        frequency={n: frequency[n] for n in names},
        provenance={n: provenance[n] for n in names},
        shortfall=shortfall,
        table=table,
    )


def select_valid_metrics(frame: AlignedFrame, cfg: HorizonConfig) -> SelectedMetricSet:
    return select_from_table(correlation_table(frame, cfg), cfg)


# ---------------------------------------------------------------------------
# Rolling transforms


def rolling_normalize(
    series: np.ndarray, window: int, epsilon: float = DEFAULT_EPSILON
) -> np.ndarray:
    """Trailing z-score per column: (x[t] - mean) / (std + epsilon).

    Mean and population std are taken over rows [t-window+1, t].  The
    first ``window - 1`` warm-up rows are returned as NaN and must be
    excluded downstream.
    """
    if window < 2:
        raise ConfigError("window must be >= 2")
    x = np.asarray(series, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    t, k = x.shape
    out = np.full((t, k), np.nan)
    if t >= window:
        sw = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)  # (t-w+1, k, w)
        mean = sw.mean(axis=2)
        std = sw.std(axis=2)
        out[window - 1:] = (x[window - 1:] - mean) / (std + epsilon)
    return out[:, 0] if squeeze else out


@dataclass
class RefinedFeatureFrame:
    """Per-timestamp principal-component features with a validity mask.

    Component counts vary per refit window, so ``components`` is padded
    with zeros to ``c_max`` columns; ``n_components[t]`` says how many
    are real.  ``explained[t]`` is the cumulative variance fraction of
    the retained set.  ``rank_flagged`` marks windows where the variance
    target was unreachable (rank deficiency or a zero-variance window).
    """

    timestamps: np.ndarray
    components: np.ndarray
    valid: np.ndarray
    n_components: np.ndarray
    explained: np.ndarray
    rank_flagged: np.ndarray
    c_max: int

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def first_valid_index(self) -> int:
        idx = np.flatnonzero(self.valid)
        if len(idx) == 0:
            raise DataError("no valid rows in refined feature frame")
        return int(idx[0])


def rolling_pca(
    normalized: np.ndarray,
    window: int,
    variance_target: float = DEFAULT_VARIANCE_TARGET,
    timestamps: np.ndarray | None = None,
) -> RefinedFeatureFrame:
    """Refit PCA on a trailing window at every row and project that row.

    At each t the window is rows [t-window+1, t]; the smallest component
    count whose cumulative explained variance reaches ``variance_target``
    is retained and row t (centered on the window mean) is projected onto
    those components.  Component signs are fixed so each eigenvector's
    largest-magnitude loading is positive.  Rows whose window touches
    NaN warm-up rows of the input are invalid.
    """
    x = np.asarray(normalized, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("normalized input must be 2-D")
    t, k = x.shape
    if window < k + 1:
        raise ConfigError(f"window ({window}) must be >= K+1 ({k + 1})")
    if not 0.0 < variance_target <= 1.0:
        raise ConfigError("variance_target must be in (0, 1]")
    if timestamps is None:
        timestamps = np.arange(t, dtype=np.int64)

    components = np.zeros((t, k))
    valid = np.zeros(t, dtype=bool)
    n_components = np.zeros(t, dtype=np.int32)
    explained = np.zeros(t)
    rank_flagged = np.zeros(t, dtype=bool)

    row_ok = np.isfinite(x).all(axis=1)
    for i in range(window - 1, t):
        lo = i - window + 1
        if not row_ok[lo : i + 1].all():
            continue
        win = x[lo : i + 1]
        mean = win.mean(axis=0)
        centered = win - mean
        cov = centered.T @ centered / (window - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals = np.clip(eigvals[order], 0.0, None)
        eigvecs = eigvecs[:, order]
        total = float(eigvals.sum())

        valid[i] = True
        if total <= 0.0:
            # zero-variance window: nothing to represent
            rank_flagged[i] = True
            explained[i] = 1.0
            continue
        rank = int(np.sum(eigvals > total * _RANK_TOL))
        cum = np.cumsum(eigvals) / total
        needed = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
        c = min(needed, rank)
        if cum[c - 1] < variance_target - 1e-12:
            rank_flagged[i] = True
        basis = eigvecs[:, :c]
        # sign convention: dominant loading positive
        flip = basis[np.argmax(np.abs(basis), axis=0), np.arange(c)] < 0
        basis = basis * np.where(flip, -1.0, 1.0)
        components[i, :c] = (x[i] - mean) @ basis
        n_components[i] = c
        explained[i] = float(cum[c - 1])

    return RefinedFeatureFrame(
        timestamps=np.asarray(timestamps),
        components=components,
        valid=valid,
        n_components=n_components,
        explained=explained,
        rank_flagged=rank_flagged,
        c_max=k,
    )


def refine_features(
    frame: AlignedFrame,
    selected_names: list[str],
    norm_window: int = DEFAULT_NORM_WINDOW,
    pca_window: int = DEFAULT_PCA_WINDOW,
    variance_target: float = DEFAULT_VARIANCE_TARGET,
    epsilon: float = DEFAULT_EPSILON,
) -> RefinedFeatureFrame:
    """Normalize then PCA-project the selected metric columns of a frame."""
    missing = [n for n in selected_names if n not in frame.metric_names]
    if missing:
        raise DataError(f"{frame.asset.key}: frame lacks selected metrics {missing}")
    cols = [frame.metric_names.index(n) for n in selected_names]
    pool = frame.metrics[:, cols]
    normalized = rolling_normalize(pool, norm_window, epsilon)
    return rolling_pca(normalized, pca_window, variance_target, frame.timestamps)
