import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from narfcs import imputers
from narfcs.data import Dataset, VariableMeta
from narfcs.errors import ImputationError
from narfcs.imputers import UnivariateContext, initial_fill
from narfcs.ums import parse_ums

from conftest import bitwise_equal


def _problem(n=150, seed=0, binary=False):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=n), rng.normal(size=n)
    if binary:
        y = (rng.random(n) < expit(0.2 + x1 - 0.5 * x2)).astype(float)
    else:
        y = 1 + 2 * x1 - x2 + rng.normal(size=n)
    miss = np.flatnonzero(rng.random(n) < 0.3)
    return {"x1": x1, "x2": x2, "y": y}, miss


def _ctx(cols, miss, seed, ums=None):
    return UnivariateContext("y", ["x1", "x2"], cols, miss, np.random.default_rng(seed),
                             parse_ums(ums, ["x1", "x2"]) if ums else None)


def test_norm_step_by_step_oracle():
    cols, miss = _problem()
    out = imputers.impute_norm(_ctx(cols, miss, 5))
    # replay the documented draw sequence with an independent dense solve
    rng = np.random.default_rng(5)
    obs = np.setdiff1d(np.arange(150), miss)
    X = np.column_stack([np.ones(150), cols["x1"], cols["x2"]])
    inv = np.linalg.inv(X[obs].T @ X[obs])
    bhat = inv @ X[obs].T @ cols["y"][obs]
    rss = float(((cols["y"][obs] - X[obs] @ bhat) ** 2).sum())
    g = rng.chisquare(len(obs) - 3)
    sigma = np.sqrt(rss / g)
    beta = bhat + sigma * np.linalg.cholesky(inv) @ rng.standard_normal(3)
    expected = X[miss] @ beta + sigma * rng.standard_normal(len(miss))
    np.testing.assert_allclose(out, expected, rtol=1e-9, atol=1e-9)


def test_logreg_step_by_step_oracle():
    cols, miss = _problem(400, 1, binary=True)
    out = imputers.impute_logreg(_ctx(cols, miss, 6))
    rng = np.random.default_rng(6)
    obs = np.setdiff1d(np.arange(400), miss)
    X = np.column_stack([np.ones(400), cols["x1"], cols["x2"]])
    fit = imputers.kernel.logistic_fit(X[obs], cols["y"][obs])
    beta = fit.beta_hat + fit.cov_factor @ rng.standard_normal(3)
    expected = (rng.random(len(miss)) < expit(X[miss] @ beta)).astype(float)
    assert out.tolist() == expected.tolist()


@pytest.mark.parametrize("c", [-1.0, 0.78, 2.5])
def test_norm_offset_additivity(c):
    cols, miss = _problem()
    mar = imputers.impute_norm(_ctx(cols, miss, 3))
    mnar = imputers.impute_mnar_norm(_ctx(cols, miss, 3, repr(c)))
    assert bitwise_equal(mnar, mar + c)


def test_norm_offset_with_term():
    cols, miss = _problem()
    mar = imputers.impute_norm(_ctx(cols, miss, 3))
    mnar = imputers.impute_mnar_norm(_ctx(cols, miss, 3, "0.5 + 0.2*x1"))
    np.testing.assert_allclose(mnar - mar, 0.5 + 0.2 * cols["x1"][miss], atol=1e-12)


def test_zero_ums_equivalence():
    for binary, mar_fn, mnar_fn in ((False, imputers.impute_norm, imputers.impute_mnar_norm),
                                    (True, imputers.impute_logreg, imputers.impute_mnar_logreg)):
        cols, miss = _problem(binary=binary)
        assert bitwise_equal(mar_fn(_ctx(cols, miss, 9)), mnar_fn(_ctx(cols, miss, 9, "0")))
        assert bitwise_equal(mar_fn(_ctx(cols, miss, 9)), mnar_fn(_ctx(cols, miss, 9)))


def test_logreg_offset_enters_linear_predictor(monkeypatch):
    cols, miss = _problem(300, 2, binary=True)
    seen = []
    real = imputers._draw_bernoulli

    def spy(eta, rng):
        seen.append(eta.copy())
        return real(eta, rng)

    monkeypatch.setattr(imputers, "_draw_bernoulli", spy)
    imputers.impute_logreg(_ctx(cols, miss, 4))
    imputers.impute_mnar_logreg(_ctx(cols, miss, 4, "0.7 - 0.5*x2"))
    np.testing.assert_allclose(seen[1] - seen[0], 0.7 - 0.5 * cols["x2"][miss], atol=1e-12)


def test_logreg_saturation():
    cols, miss = _problem(300, 3, binary=True)
    assert imputers.impute_mnar_logreg(_ctx(cols, miss, 1, "20")).tolist() == [1.0] * len(miss)
    assert imputers.impute_mnar_logreg(_ctx(cols, miss, 1, "-20")).tolist() == [0.0] * len(miss)


def test_nothing_to_impute_leaves_stream_untouched():
    cols, _ = _problem()
    for method, fn in imputers.IMPUTERS.items():
        ctx = _ctx(cols, np.array([], dtype=int), 0)
        assert fn(ctx).size == 0
        assert ctx.rng.random() == np.random.default_rng(0).random()


def test_same_stream_consumption_mar_and_mnar():
    cols, miss = _problem(binary=True)
    a, b = _ctx(cols, miss, 8), _ctx(cols, miss, 8, "1.5")
    imputers.impute_logreg(a)
    imputers.impute_mnar_logreg(b)
    assert a.rng.random() == b.rng.random()


def test_collinear_predictors_fall_back_to_ridge():
    cols, miss = _problem()
    cols = dict(cols, x2=2 * cols["x1"])
    ctx = _ctx(cols, miss, 0)
    out = imputers.impute_norm(ctx)
    assert np.all(np.isfinite(out))
    assert any("ridge" in n for n in ctx.notes)


def test_separable_binary_still_imputes():
    n = 100
    x = np.linspace(-1, 1, n)
    y = (x > 0).astype(float)
    miss = np.arange(0, n, 7)
    ctx = UnivariateContext("y", ["x"], {"x": x, "y": y}, miss, np.random.default_rng(0))
    out = imputers.impute_logreg(ctx)
    assert set(out.tolist()) <= {0.0, 1.0}
    assert any("separation" in n for n in ctx.notes)


def test_no_observed_rows_raises():
    cols, _ = _problem(10)
    with pytest.raises(ImputationError):
        imputers.impute_norm(_ctx(cols, np.arange(10), 0))


def test_initial_fill_resamples_observed_distribution():
    n_obs, n_miss = 100, 30000
    obs_vals = np.repeat([1.0, 2.0, 3.0], [50, 30, 20])
    col = np.concatenate([obs_vals, np.full(n_miss, np.nan)])
    ds = Dataset([VariableMeta("v"), VariableMeta("w")], {"v": col, "w": np.zeros(n_obs + n_miss)})
    filled = initial_fill(ds, np.random.default_rng(0))
    assert filled["v"][:n_obs].tolist() == obs_vals.tolist()
    counts = np.array([(filled["v"][n_obs:] == k).sum() for k in (1.0, 2.0, 3.0)])
    assert counts.sum() == n_miss
    assert stats.chisquare(counts, n_miss * np.array([0.5, 0.3, 0.2])).pvalue > 1e-3


def test_initial_fill_column_order_contract():
    ds = Dataset([VariableMeta("a"), VariableMeta("b")],
                 {"a": [1.0, np.nan, 3.0], "b": [np.nan, 5.0, 6.0]})
    rng = np.random.default_rng(4)
    filled = initial_fill(ds, rng)
    ref = np.random.default_rng(4)
    ia = ref.integers(0, 2, size=1)
    ib = ref.integers(0, 2, size=1)
    assert filled["a"][1] == [1.0, 3.0][ia[0]]
    assert filled["b"][0] == [5.0, 6.0][ib[0]]


def test_initial_fill_all_missing_raises():
    ds = Dataset([VariableMeta("a")], {"a": [np.nan, np.nan]})
    with pytest.raises(ImputationError):
        initial_fill(ds, np.random.default_rng(0))
