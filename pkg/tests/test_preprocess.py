import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import ndtri

from rectflow.data import CATEGORICAL, NUMERICAL, Column, TableData, TableSchema
from rectflow.errors import DecodeError, DimensionError, EncodeError, FitError
from rectflow.preprocess import (
    QuantileMap, fit_preprocess, fit_quantile, inverse_normal_cdf,
    quantile_forward, quantile_inverse,
)


def mp_ndtri(p):
    mpmath.mp.dps = 340
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


@pytest.mark.parametrize("p", [1e-300, 1e-20, 1e-7, 0.01, 0.025, 0.25, 0.5, 0.6, 0.975 , 1 - 1e-7, 1 - 1e-15])
def test_inverse_normal_against_high_precision(p):
    assert abs(inverse_normal_cdf(p) - mp_ndtri(p)) < 1e-9


def test_inverse_normal_dense_grid_against_scipy():
    p = np.concatenate([np.logspace(-300, -1, 500), np.linspace(0.01, 0.99, 999)])
    assert np.max(np.abs(inverse_normal_cdf(p) - ndtri(p))) < 1e-9


def test_inverse_normal_domain():
    with pytest.raises(ValueError):
        inverse_normal_cdf(0.0)


def test_fit_full_sample():
    v = np.arange(1, 1001, dtype=float)
    q = fit_quantile(v, 1000)
    assert np.allclose(q.quantiles, v, rtol=0, atol=1e-9)
    assert len(fit_quantile(v, 5000).quantiles) == 1000


def test_constant_column():
    q = fit_quantile([5, 5, 5])
    assert q.constant
    assert quantile_forward(q, 5.0) == 0.0 and quantile_forward(q, 100.0) == 0.0
    assert quantile_inverse(q, 1.3) == 5.0


def test_fit_errors():
    with pytest.raises(FitError):
        fit_quantile([])
    with pytest.raises(FitError):
        fit_quantile([1.0, np.nan])


def test_forward_examples():
    rng = np.random.default_rng(0)
    sym = np.concatenate([rng.normal(size=500), -rng.normal(size=500)])
    q = fit_quantile(np.concatenate([sym, -sym, [0.0]]))
    assert abs(quantile_forward(q, 0.0)) < 1e-12
    below = quantile_forward(q, -1e9)
    assert below == pytest.approx(mp_ndtri(1e-7), abs=1e-12)
    assert below == pytest.approx(-5.199, abs=1e-3)
    q5 = fit_quantile([1, 2, 3, 4, 5])
    assert quantile_forward(q5, 2.0) == pytest.approx(mp_ndtri(0.25), abs=1e-12)


def test_inverse_examples():
    q = fit_quantile([1, 2, 3, 4, 5, 6, 7])
    assert quantile_inverse(q, 0.0) == pytest.approx(4.0, abs=1e-12)
    assert quantile_inverse(q, 10.0) == 7.0
    assert quantile_inverse(q, -10.0) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200), st.data())
def test_forward_is_monotone_and_roundtrips(values, data):
    q = fit_quantile(values)
    x = np.sort(np.array(data.draw(st.lists(st.floats(-2e6, 2e6), min_size=2, max_size=50))))
    f = q.forward(x)
    assert np.all(np.diff(f) >= 0)
    lo, hi = min(values), max(values)
    if not q.constant:
        inv = q.inverse(f)
        assert np.all((inv >= lo) & (inv <= hi))


def test_roundtrip_interior_values():
    rng = np.random.default_rng(1)
    v = rng.lognormal(size=3000)
    q = fit_quantile(v)
    x = rng.uniform(v.min(), v.max(), 500)
    x = x[(x > np.sort(v)[1]) & (x < np.sort(v)[-2])]
    back = q.inverse(q.forward(x))
    assert np.max(np.abs(back - x) / np.abs(x)) < 1e-6


def test_transformed_column_is_standard_normal():
    rng = np.random.default_rng(2)
    v = rng.exponential(size=2000) ** 3
    z = fit_quantile(v).forward(v)
    assert stats.kstest(z, "norm").statistic < 0.05


MIXED = TableSchema((
    Column("a", NUMERICAL), Column("b", NUMERICAL),
    Column("color", CATEGORICAL), Column("y", CATEGORICAL, target=True),
))


def mixed_table(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return TableData(MIXED, {
        "a": rng.normal(size=n), "b": rng.gamma(2.0, size=n),
        "color": rng.choice(["red", "green", "blue"], n), "y": rng.choice(["0", "1"], n),
    })


def test_layout_and_one_hot():
    t = mixed_table()
    st_ = fit_preprocess(t)
    assert st_.width == 2 + 3 + 2
    widths = [s.width for s in st_.layout]
    offsets = [s.offset for s in st_.layout]
    assert sum(widths) == st_.width and offsets == list(np.cumsum([0] + widths[:-1]))
    x = st_.encode(t)
    for slot in st_.layout[2:]:
        block = x[:, slot.offset : slot.offset + slot.width]
        assert set(np.unique(block)) == {0.0, 1.0}
        assert np.all(block.sum(axis=1) == 1.0)


def test_one_hot_block_values():
    schema = TableSchema((Column("n", NUMERICAL, True), Column("c", CATEGORICAL)))
    t = TableData(schema, {"n": [0.0, 1.0, 2.0], "c": ["red", "green", "blue"]})
    st_ = fit_preprocess(t)
    st_ = type(st_)(st_.columns, st_.quantile_maps, {"c": type(st_.vocabs["c"])(("red", "green", "blue"))})
    x = st_.encode(TableData(schema, {"n": [1.0], "c": ["green"]}))
    assert x[0, 1:].tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(EncodeError, match="purple"):
        st_.encode(TableData(schema, {"n": [1.0], "c": ["purple"]}))
    # argmax decoding, ties to the lowest index
    dec = st_.decode(np.array([[0.0, 0.1, 0.7, 0.2], [0.0, 0.5, 0.5, 0.0]]), schema)
    assert dec["c"].tolist() == ["green", "red"]


def test_decode_errors():
    t = mixed_table()
    st_ = fit_preprocess(t)
    with pytest.raises(DimensionError):
        st_.decode(np.zeros((1, 3)), MIXED)
    bad = np.zeros((2, st_.width))
    bad[1, 0] = np.inf
    with pytest.raises(DecodeError, match="row 1"):
        st_.decode(bad, MIXED)


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 300), st.integers(0, 10_000))
def test_decode_encode_identity(n, seed):
    t = mixed_table(n, seed)
    st_ = fit_preprocess(t)
    back = st_.decode(st_.encode(t), MIXED)
    for c in ("color", "y"):
        assert np.array_equal(back[c], t[c])
    for c in ("a", "b"):
        v = t[c]
        inner = (v > v.min()) & (v < v.max())
        assert np.all(np.abs(back[c][inner] - v[inner]) <= 1e-6 * np.maximum(np.abs(v[inner]), 1e-12) + 1e-12)


def test_state_json_roundtrip():
    t = mixed_table()
    st_ = fit_preprocess(t)
    again = type(st_).from_json(st_.to_json(), st_.tensors())
    assert np.array_equal(again.encode(t), st_.encode(t))
