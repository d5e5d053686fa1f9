"""Graph construction: correlation oracles, the three dynamic edge rules with
an exact boundary case, and the refresh schedule."""

import numpy as np
import pytest

from folionet import graphs
from folionet.errors import ValidationError

TICKERS = ["A", "B", "C"]
SECTORS = {"A": "Energy", "B": "Energy", "C": "Health Care"}


# ---------------------------------------------------------------------------
# static graph
# ---------------------------------------------------------------------------

def test_static_graph_self_and_identical_and_anticorrelated():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(60)
    returns = np.stack([x, x.copy(), -x], axis=1)
    g = graphs.static_graph(returns, TICKERS)
    assert g.adjacency[0, 0] == 1.0
    assert g.adjacency[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert g.adjacency[0, 2] == pytest.approx(-1.0, abs=1e-12)
    assert g.kind == "static" and g.mask.all()


def test_static_graph_matches_bruteforce_oracle():
    rng = np.random.default_rng(1)
    returns = rng.standard_normal((200, 4)) * 0.02
    g = graphs.static_graph(returns, ["A", "B", "C", "D"])
    for i in range(4):
        for j in range(4):
            a, b = returns[:, i], returns[:, j]
            da, db = a - a.mean(), b - b.mean()
            oracle = (da * db).sum() / np.sqrt((da ** 2).sum() * (db ** 2).sum())
            assert g.adjacency[i, j] == pytest.approx(oracle, abs=1e-12)


def test_static_graph_zero_variance_ticker():
    returns = np.zeros((60, 3))
    returns[:, 0] = np.random.default_rng(2).standard_normal(60)
    returns[:, 2] = np.random.default_rng(3).standard_normal(60)
    with pytest.raises(ValidationError, match="B"):
        graphs.static_graph(returns, TICKERS)


def test_static_graph_needs_30_observations():
    with pytest.raises(ValidationError, match="30"):
        graphs.static_graph(np.random.default_rng(4).standard_normal((20, 3)), TICKERS)


def test_static_graph_ignores_nan_warmup_rows():
    rng = np.random.default_rng(5)
    returns = rng.standard_normal((61, 3))
    returns[0] = np.nan
    g = graphs.static_graph(returns, TICKERS)
    oracle = graphs.static_graph(returns[1:], TICKERS)
    np.testing.assert_allclose(g.adjacency, oracle.adjacency, atol=0)


# ---------------------------------------------------------------------------
# rolling correlation
# ---------------------------------------------------------------------------

def test_rolling_correlation_cases():
    a = np.array([1.0, 2.0, 1.5, 3.0, 2.5])
    assert graphs.rolling_correlation(a, a) == pytest.approx(1.0, abs=1e-12)
    assert graphs.rolling_correlation(a, 2 * a + 3) == pytest.approx(1.0, abs=1e-12)
    assert graphs.rolling_correlation(np.full(5, 2.0), a) == 0.0


def test_rolling_correlation_trailing_window():
    a = np.concatenate([np.zeros(5), [1.0, 2.0, 1.5, 3.0, 2.5]])
    b = np.concatenate([np.zeros(5), [2.0, 4.0, 3.0, 6.0, 5.0]])
    assert graphs.rolling_correlation(a, b, window=5, end=9) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        graphs.rolling_correlation(a[:3], b[:3], window=5)


# ---------------------------------------------------------------------------
# dynamic graph edge rules
# ---------------------------------------------------------------------------

def deviations_to_series(dev, mean=0.0):
    return np.asarray(dev, dtype=np.float64) + mean


def test_dynamic_same_sector_edge():
    rng = np.random.default_rng(6)
    returns = rng.standard_normal((10, 3)) * 0.01
    sentiment = rng.standard_normal((10, 3)) * 0.01
    g = graphs.dynamic_graph(9, TICKERS, SECTORS, returns, sentiment)
    assert g.adjacency[0, 1] == 1.0  # both Energy
    assert g.kind == "dynamic" and g.as_of == 9


def test_dynamic_return_correlation_edge():
    # orthogonal deviation design: corr(A,C) via returns is exactly 0.6
    da = np.array([3.0, -3.0, 0.0, 0.0, 0.0])
    dc = np.array([3.0, 3.0, -6.0, 0.0, 0.0])
    dev = 0.6 * da + np.sqrt(1 - 0.36) * dc * (np.linalg.norm(da) / np.linalg.norm(dc))
    returns = np.zeros((5, 3))
    returns[:, 0] = da
    returns[:, 2] = dev
    returns[:, 1] = np.array([1.0, -1.0, 1.0, -1.0, 0.0]) * 7.0  # uncorrelated-ish filler
    sentiment = np.zeros((5, 3))
    sentiment[:, 0] = np.array([1.0, 0, -1, 0, 0])
    sentiment[:, 1] = np.array([0.0, 1, 0, -1, 0])
    sentiment[:, 2] = np.array([0.0, 0, 1, 0, -1])
    corr = graphs.rolling_correlation(returns[:, 0], returns[:, 2])
    assert corr == pytest.approx(0.6, abs=1e-12)
    g = graphs.dynamic_graph(4, TICKERS, SECTORS, returns, sentiment)
    assert g.adjacency[0, 2] == 1.0  # different sectors, return corr 0.6 > 0.5


def test_dynamic_sentiment_correlation_edge():
    returns = np.zeros((5, 3))
    returns[:, 0] = [1.0, -1, 0, 1, -1]
    returns[:, 1] = [0.0, 1, -1, 0, 1]
    returns[:, 2] = [1.0, 1, -1, -1, 0]
    sentiment = np.zeros((5, 3))
    sentiment[:, 0] = [0.5, -0.5, 0.2, -0.2, 0.0]
    sentiment[:, 2] = sentiment[:, 0] * 0.8  # perfectly correlated
    sentiment[:, 1] = [0.1, 0.1, -0.1, -0.1, 0.0]
    assert abs(graphs.rolling_correlation(returns[:, 0], returns[:, 2])) <= 0.5
    g = graphs.dynamic_graph(4, TICKERS, SECTORS, returns, sentiment)
    assert g.adjacency[0, 2] == 1.0


def test_dynamic_boundary_exactly_half_is_no_edge():
    # integer deviations chosen so the float correlation is exactly 0.5:
    # da=(1,-1,0,0,0), db=(1,0,-1,0,0) -> corr = 1/sqrt(4) = 0.5 exactly
    returns = np.zeros((5, 3))
    returns[:, 0] = deviations_to_series([1.0, -1.0, 0.0, 0.0, 0.0])
    returns[:, 2] = deviations_to_series([1.0, 0.0, -1.0, 0.0, 0.0])
    returns[:, 1] = deviations_to_series([0.0, 0.0, 0.0, 1.0, -1.0])
    sentiment = np.zeros((5, 3))
    sentiment[:, 0] = [1.0, 0, -1, 0, 0]
    sentiment[:, 2] = [0.0, 1, 0, -1, 0]  # orthogonal: corr 0
    corr = graphs.rolling_correlation(returns[:, 0], returns[:, 2])
    assert corr == 0.5  # exact in IEEE arithmetic
    g = graphs.dynamic_graph(4, TICKERS, SECTORS, returns, sentiment)
    assert g.adjacency[0, 2] == 0.0  # strict > 0.5 required


def test_dynamic_short_window_falls_back_to_sectors(caplog):
    returns = np.full((3, 3), np.nan)
    sentiment = np.zeros((3, 3))
    with caplog.at_level("WARNING"):
        g = graphs.dynamic_graph(2, TICKERS, SECTORS, returns, sentiment)
    assert "sector edges only" in caplog.text
    assert g.adjacency[0, 1] == 1.0 and g.adjacency[0, 2] == 0.0


def test_dynamic_affine_invariance():
    rng = np.random.default_rng(9)
    returns = rng.standard_normal((12, 3))
    sentiment = rng.standard_normal((12, 3)) * 0.2
    g1 = graphs.dynamic_graph(11, TICKERS, SECTORS, returns, sentiment)
    scaled = returns * np.array([3.0, 0.5, 10.0]) + np.array([0.1, -0.4, 2.0])
    g2 = graphs.dynamic_graph(11, TICKERS, SECTORS, scaled, sentiment)
    np.testing.assert_allclose(g1.adjacency, g2.adjacency, atol=0)


def test_sector_pairs_connected_under_every_threshold():
    rng = np.random.default_rng(10)
    returns = rng.standard_normal((8, 3))
    sentiment = rng.standard_normal((8, 3))
    for threshold in (0.0, 0.3, 0.5, 0.9, 1.0):
        g = graphs.dynamic_graph(7, TICKERS, SECTORS, returns, sentiment, threshold=threshold)
        assert g.adjacency[0, 1] == 1.0


# ---------------------------------------------------------------------------
# refresh schedule
# ---------------------------------------------------------------------------

def test_refresh_schedule_builds_every_five_days():
    sched = graphs.refresh_schedule(range(100, 110))
    assert sched[100] == 100 and sched[104] == 100
    assert sched[105] == 105 and sched[107] == 105 and sched[109] == 105
    assert set(sched.values()) == {100, 105}


def test_refresh_schedule_single_day():
    assert graphs.refresh_schedule([42]) == {42: 42}


def test_refresh_schedule_causal():
    sched = graphs.refresh_schedule(range(50, 80))
    assert all(build <= day for day, build in sched.items())


def test_graph_invariants_enforced():
    bad = np.array([[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(ValidationError, match="symmetric"):
        graphs.AssetGraph(("A", "B"), bad, "dynamic")
    bad2 = np.array([[0.9, 0.5], [0.5, 1.0]])
    with pytest.raises(ValidationError, match="diagonal"):
        graphs.AssetGraph(("A", "B"), bad2, "static")


def test_graph_csv_dump(tmp_path):
    g = graphs.AssetGraph(("A", "B"), np.array([[1.0, 0.25], [0.25, 1.0]]), "static")
    path = tmp_path / "g.csv"
    graphs.write_graph_csv(g, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "ticker,A,B"
    assert lines[1].startswith("A,1,0.25")
