"""Tests for correlation-ranked metric selection and rolling transforms."""

import math

import numpy as np
import pytest
from hypothesis import given, assume, strategies as st

from chainfolio.datastore import AlignedFrame, AssetId
from chainfolio.errors import ConfigError, DataError
from chainfolio.refinery import (
    CorrelationTable,
    HorizonConfig,
    correlation_table,
    k_period_returns,
    pearson,
    refine_features,
    rolling_normalize,
    rolling_pca,
    select_from_table,
    select_valid_metrics,
)

INTERVAL = 21600
T0 = 1_599_998_400


def make_frame(closes, metrics: dict[str, np.ndarray]) -> AlignedFrame:
    closes = np.asarray(closes, dtype=np.float64)
    t = len(closes)
    ohlcv = np.column_stack([closes, closes * 1.01, closes * 0.99, closes, np.full(t, 7.0)])
    names = sorted(metrics)
    mat = np.column_stack([np.asarray(metrics[n], dtype=np.float64) for n in names]) if names else np.zeros((t, 0))
    return AlignedFrame(
        asset=AssetId("AAA"),
        timestamps=T0 + INTERVAL * np.arange(t, dtype=np.int64),
        ohlcv=ohlcv,
        metrics=mat,
        metric_names=names,
        interval=INTERVAL,
    )


# ---------------------------------------------------------------------------
# k-period returns


def test_k_period_returns_examples():
    out = k_period_returns(np.array([100.0, 110.0, 121.0]), 1)
    assert np.allclose(out, [0.10, 0.10], atol=1e-12)
    out = k_period_returns(np.array([1.0, 2.0, 4.0, 8.0]), 1)
    assert np.allclose(out, [1.0, 1.0, 1.0], atol=1e-12)
    out = k_period_returns(np.array([100.0, 90.0, 99.0, 108.9]), 2)
    assert np.allclose(out, [-0.01, 0.21], atol=1e-12)


def test_k_period_returns_errors():
    with pytest.raises(ConfigError):
        k_period_returns(np.array([1.0, 2.0]), 0)
    with pytest.raises(DataError):
        k_period_returns(np.array([1.0, 2.0]), 2)
    with pytest.raises(DataError):
        k_period_returns(np.array([1.0, -2.0, 3.0]), 1)


# ---------------------------------------------------------------------------
# Pearson correlation


def test_pearson_examples():
    x = np.arange(10.0)
    assert pearson(x, 2.0 * x + 1.0) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)
    # hand-computed: sum dx*dy = 4, both sum-of-squares = 5
    r = pearson(np.array([1.0, 2.0, 3.0, 4.0]), np.array([1.0, 3.0, 2.0, 4.0]))
    assert r == pytest.approx(0.8, abs=1e-12)


def test_pearson_undefined_and_errors():
    x = np.arange(5.0)
    assert pearson(x, np.full(5, 3.0)) is None
    assert pearson(np.zeros(5), x) is None
    with pytest.raises(DataError):
        pearson(x, np.arange(4.0))
    with pytest.raises(DataError):
        pearson(np.array([1.0, 2.0]), np.array([3.0, 4.0]))


finite_pair = st.integers(3, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-100.0, 100.0), min_size=n, max_size=n),
        st.lists(st.floats(-100.0, 100.0), min_size=n, max_size=n),
    )
)


@given(finite_pair)
def test_pearson_symmetric_and_bounded(pair):
    x, y = np.asarray(pair[0]), np.asarray(pair[1])
    assume(x.std() > 1e-3 and y.std() > 1e-3)
    r = pearson(x, y)
    assert abs(r) <= 1.0 + 1e-12
    assert r == pytest.approx(pearson(y, x), abs=1e-12)


@given(finite_pair, st.floats(0.1, 10.0), st.floats(-10.0, 10.0))
def test_pearson_affine_invariant_and_matches_corrcoef(pair, a, b):
    x, y = np.asarray(pair[0]), np.asarray(pair[1])
    assume(x.std() > 1e-3 and y.std() > 1e-3)
    r = pearson(x, y)
    assert r == pytest.approx(pearson(a * x + b, y), abs=1e-9)
    assert r == pytest.approx(float(np.corrcoef(x, y)[0, 1]), abs=1e-10)


# ---------------------------------------------------------------------------
# Correlation table and selection


def test_horizon_config_validation():
    with pytest.raises(ConfigError):
        HorizonConfig(horizons=(12, 12, 48))
    with pytest.raises(ConfigError):
        HorizonConfig(horizons=(48, 24, 12))
    with pytest.raises(ConfigError):
        HorizonConfig(horizons=(0, 1, 2))
    with pytest.raises(ConfigError):
        HorizonConfig(top_per_group=0)
    with pytest.raises(ConfigError):
        HorizonConfig(top_per_group=1, final_count=7)


def test_forward_pairing_recovers_perfect_metric(rng):
    t = 60
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    fwd = np.zeros(t)
    fwd[: t - 2] = closes[2:] / closes[: t - 2] - 1.0
    frame = make_frame(closes, {"fwd2": fwd, "noise": rng.normal(size=t)})
    cfg = HorizonConfig(horizons=(1, 2, 4), top_per_group=1, final_count=2)
    table = correlation_table(frame, cfg)
    assert table.r("fwd2", 2) == pytest.approx(1.0, abs=1e-12)
    sel = select_from_table(table, cfg)
    assert "fwd2" in sel.names


def test_trailing_pairing_mode(rng):
    t = 60
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    trail = np.zeros(t)
    trail[2:] = closes[2:] / closes[:-2] - 1.0
    frame = make_frame(closes, {"tr2": trail})
    cfg = HorizonConfig(horizons=(1, 2, 4), top_per_group=1, final_count=1, forward_returns=False)
    table = correlation_table(frame, cfg)
    assert table.r("tr2", 2) == pytest.approx(1.0, abs=1e-12)


def test_table_rows_rank_descending(rng):
    t = 80
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    metrics = {f"m{i}": rng.normal(size=t) for i in range(4)}
    frame = make_frame(closes, metrics)
    cfg = HorizonConfig(horizons=(2, 4, 8))
    rows = correlation_table(frame, cfg).rows()
    assert len(rows) == 3 * 4
    for h in (2, 4, 8):
        sub = sorted((r for r in rows if r[1] == h and r[3] is not None), key=lambda r: r[3])
        rs = [r[2] for r in sub]
        assert rs == sorted(rs, reverse=True)
        assert [r[3] for r in sub] == list(range(1, len(sub) + 1))


def test_select_shortfall_returns_everything(rng):
    t = 80
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    metrics = {f"m{i}": rng.normal(size=t) for i in range(6)}
    frame = make_frame(closes, metrics)
    sel = select_valid_metrics(frame, HorizonConfig(horizons=(2, 4, 8), final_count=10))
    assert sel.shortfall
    assert sorted(sel.names) == sorted(metrics)


def test_select_tie_break_is_name_order(rng):
    t = 80
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    shared = rng.normal(size=t)
    frame = make_frame(closes, {"bb": shared, "aa": shared, "zz": rng.normal(size=t)})
    sel = select_valid_metrics(frame, HorizonConfig(horizons=(2, 4, 8), final_count=3))
    ia, ib = sel.names.index("aa"), sel.names.index("bb")
    assert ib == ia + 1
    assert sel.frequency["aa"] == sel.frequency["bb"]


def test_select_degenerate_pool_raises(rng):
    t = 80
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    frame = make_frame(closes, {"c1": np.full(t, 5.0), "c2": np.zeros(t)})
    with pytest.raises(DataError):
        select_valid_metrics(frame, HorizonConfig(horizons=(2, 4, 8)))


def test_selection_provenance_records_groups(rng):
    t = 100
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    fwd = np.zeros(t)
    fwd[: t - 4] = closes[4:] / closes[: t - 4] - 1.0
    metrics = {"fwd4": fwd}
    metrics.update({f"n{i}": rng.normal(size=t) for i in range(5)})
    frame = make_frame(closes, metrics)
    sel = select_valid_metrics(frame, HorizonConfig(horizons=(2, 4, 8), top_per_group=2, final_count=4))
    assert "fwd4" in sel.names
    entries = sel.provenance["fwd4"]
    picked_h4 = [e for e in entries if e[0] == 4]
    assert picked_h4 and picked_h4[0][1] == 1 and picked_h4[0][2] == 1


def test_correlation_table_too_short():
    frame = make_frame(np.linspace(100, 110, 10), {"m": np.arange(10.0)})
    with pytest.raises(DataError):
        correlation_table(frame, HorizonConfig(horizons=(2, 4, 8)))


# ---------------------------------------------------------------------------
# Rolling normalization


def test_rolling_normalize_constant_is_zero():
    out = rolling_normalize(np.full(10, 4.2), 3)
    assert np.isnan(out[:2]).all()
    assert np.allclose(out[2:], 0.0, atol=1e-12)


def test_rolling_normalize_two_point_window():
    eps = 1e-8
    out = rolling_normalize(np.array([0.0, 1.0]), 2, epsilon=eps)
    assert math.isnan(out[0])
    assert out[1] == pytest.approx(0.5 / (0.5 + eps), abs=1e-15)


def test_rolling_normalize_matches_direct_loop(rng):
    x = rng.normal(size=(40, 3)) * 10.0
    w, eps = 7, 1e-8
    out = rolling_normalize(x, w, eps)
    for t in range(40):
        if t < w - 1:
            assert np.isnan(out[t]).all()
            continue
        win = x[t - w + 1 : t + 1]
        expect = (x[t] - win.mean(axis=0)) / (win.std(axis=0) + eps)
        assert np.allclose(out[t], expect, atol=1e-12)


def test_rolling_normalize_no_lookahead(rng):
    x = rng.normal(size=30)
    base = rolling_normalize(x, 5)
    x2 = x.copy()
    x2[20] += 100.0
    pert = rolling_normalize(x2, 5)
    assert np.array_equal(base[:20], pert[:20], equal_nan=True)


def test_rolling_normalize_window_validation():
    with pytest.raises(ConfigError):
        rolling_normalize(np.arange(5.0), 1)


# ---------------------------------------------------------------------------
# Rolling PCA


def test_pca_duplicate_columns_need_one_component(rng):
    z = rng.normal(size=40)
    x = np.column_stack([z, z])
    out = rolling_pca(x, window=10, variance_target=0.8)
    v = out.valid
    assert v[9:].all() and not v[:9].any()
    assert (out.n_components[v] == 1).all()
    assert np.allclose(out.explained[v], 1.0, atol=1e-12)
    assert np.allclose(out.components[v, 1], 0.0, atol=1e-12)
    assert not out.rank_flagged[v].any()


def test_pca_known_eigenvalues_nine_one():
    a = math.sqrt(27.0) / 2.0
    b = math.sqrt(3.0) / 2.0
    x = np.array([[a, b], [-a, b], [a, -b], [-a, -b]])
    out = rolling_pca(x, window=4, variance_target=0.8)
    # eigenvalues are exactly 9 and 1, so one component explains 0.9
    assert out.n_components[3] == 1
    assert out.explained[3] == pytest.approx(0.9, abs=1e-12)
    assert out.components[3, 0] == pytest.approx(-a, abs=1e-9)
    assert out.components[3, 1] == 0.0
    out2 = rolling_pca(x, window=4, variance_target=0.95)
    assert out2.n_components[3] == 2
    assert out2.explained[3] == pytest.approx(1.0, abs=1e-12)


def _hadamard8():
    h2 = np.array([[1.0, 1.0], [1.0, -1.0]])
    return np.kron(h2, np.kron(h2, h2))


def test_pca_equal_variance_needs_ceiling_count():
    # five zero-mean orthogonal columns of equal variance: each explains 20%
    x = _hadamard8()[:, 1:6]
    out = rolling_pca(x, window=8, variance_target=0.8)
    assert out.valid[7]
    assert out.n_components[7] == 4
    assert out.explained[7] == pytest.approx(0.8, abs=1e-9)
    assert not out.rank_flagged[7]


def test_pca_minimal_count_matches_independent_eigh(rng):
    x = rng.normal(size=(60, 4))
    w, target = 12, 0.8
    out = rolling_pca(x, window=w, variance_target=target)
    for i in range(w - 1, 60):
        win = x[i - w + 1 : i + 1]
        cov = np.cov(win.T, ddof=1)
        eig = np.sort(np.clip(np.linalg.eigvalsh(cov), 0.0, None))[::-1]
        total = eig.sum()
        cum = np.cumsum(eig) / total
        needed = int(np.searchsorted(cum, target - 1e-12) + 1)
        rank = int(np.sum(eig > total * 1e-10))
        assert out.n_components[i] == min(needed, rank)
        assert out.explained[i] == pytest.approx(cum[out.n_components[i] - 1], abs=1e-9)
        assert out.valid[i]


def test_pca_zero_variance_window_is_flagged():
    out = rolling_pca(np.zeros((12, 3)), window=5, variance_target=0.8)
    v = out.valid
    assert v[4:].all()
    assert out.rank_flagged[v].all()
    assert (out.n_components[v] == 0).all()
    assert np.allclose(out.explained[v], 1.0)


def test_pca_no_lookahead(rng):
    x = rng.normal(size=(30, 3))
    base = rolling_pca(x, window=8)
    x2 = x.copy()
    x2[20] += 50.0
    pert = rolling_pca(x2, window=8)
    assert np.array_equal(base.components[:20], pert.components[:20])
    assert np.array_equal(base.n_components[:20], pert.n_components[:20])
    assert np.array_equal(base.valid[:20], pert.valid[:20])


def test_pca_validation_errors(rng):
    with pytest.raises(ConfigError):
        rolling_pca(rng.normal(size=(20, 4)), window=4)
    with pytest.raises(ConfigError):
        rolling_pca(rng.normal(size=(20, 2)), window=5, variance_target=1.5)
    with pytest.raises(DataError):
        rolling_pca(rng.normal(size=20), window=5)


# ---------------------------------------------------------------------------
# End-to-end refinement


def test_refine_features_warmup_and_shape(rng):
    t = 40
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, t)))
    metrics = {f"m{i}": rng.normal(size=t) for i in range(3)}
    frame = make_frame(closes, metrics)
    refined = refine_features(frame, sorted(metrics), norm_window=5, pca_window=6)
    assert len(refined) == t
    assert refined.c_max == 3
    assert refined.first_valid_index == (5 - 1) + (6 - 1)
    assert not refined.valid[: refined.first_valid_index].any()
    assert refined.valid[refined.first_valid_index :].all()
    assert np.array_equal(refined.timestamps, frame.timestamps)


def test_refine_features_missing_metric(rng):
    frame = make_frame(np.linspace(100, 120, 30), {"m0": rng.normal(size=30)})
    with pytest.raises(DataError, match="absent"):
        refine_features(frame, ["m0", "absent"], norm_window=4, pca_window=5)
