import numpy as np
import pytest
import scipy.linalg
from sklearn.linear_model import LogisticRegression

from cffair.errors import ConfigError, DimensionError
from cffair.predictors import (PredictorSpec, feature_sets, fit_predict, least_squares,
                               logistic_newton, suite)

from toys import classification_toy, law_like, synthetic


def test_names_and_suite():
    assert [s.name for s in suite("regression")] == ["LR_R", "SGD_R", "MLP_R"]
    assert [s.name for s in suite("classification")] == ["LR_C", "SGD_C", "MLP_C"]
    with pytest.raises(ConfigError):
        PredictorSpec("ranking", "mlp")


def test_least_squares_matches_normal_equations():
    g = np.random.default_rng(0)
    for _ in range(10):
        X = g.normal(size=(50, 4))
        y = X @ g.normal(size=4) + 0.3 + g.normal(scale=0.1, size=50)
        Xi = np.column_stack([np.ones(50), X])
        oracle = scipy.linalg.solve(Xi.T @ Xi, Xi.T @ y, assume_a="pos")
        np.testing.assert_allclose(least_squares(X, y), oracle, atol=1e-6)


def test_perfect_linear_data_exact():
    X = np.arange(10, dtype=float)[:, None]
    y = 2 * X[:, 0] + 1
    np.testing.assert_allclose(least_squares(X, y), [1, 2], atol=1e-12)
    run = fit_predict(PredictorSpec("regression", "closed-form-linear", 1), X, y, {"t": X})
    np.testing.assert_allclose(run.predictions["t"][0], y, atol=1e-10)


def test_collinear_features_warn():
    x = np.arange(8, dtype=float)
    X = np.column_stack([x, 2 * x])
    with pytest.warns(RuntimeWarning, match="ridge"):
        coef = least_squares(X, x)
    assert np.all(np.isfinite(coef))


def test_logistic_newton_matches_sklearn():
    g = np.random.default_rng(1)
    X = g.normal(size=(300, 3))
    y = (X @ [1.0, -2.0, 0.5] + g.logistic(size=300) > 0).astype(float)
    ref = LogisticRegression(C=1.0, tol=1e-12, max_iter=10_000).fit(X, y)
    coef = logistic_newton(X, y)
    np.testing.assert_allclose(coef[1:], ref.coef_[0], atol=1e-5)
    assert coef[0] == pytest.approx(ref.intercept_[0], abs=1e-5)


def test_single_class_target():
    X = np.random.default_rng(2).normal(size=(20, 2))
    run = fit_predict(PredictorSpec("classification", "closed-form-linear", 1), X, np.ones(20), {"t": X})
    assert np.all(run.predictions["t"] == 1)


def test_classification_outputs_are_labels():
    ds = classification_toy()
    F = feature_sets(ds.train(), names=["FULL"])["FULL"]
    y = ds.train().target_vector()
    for spec in suite("classification", repeats=2, max_iter=50):
        run = fit_predict(spec, F, y, {"t": F})
        assert set(np.unique(run.predictions["t"])) <= {0.0, 1.0}
        assert run.predictions["t"].shape == (2, len(F))


def test_repeats_seeded_and_reproducible():
    ds = synthetic(300)
    F = feature_sets(ds.train(), names=["FULL"])["FULL"]
    y = ds.train().target_vector()
    spec = PredictorSpec("regression", "mlp", repeats=3, max_iter=50)
    r1 = fit_predict(spec, F, y, {"t": F})
    r2 = fit_predict(spec, F, y, {"t": F})
    np.testing.assert_array_equal(r1.predictions["t"], r2.predictions["t"])
    assert not np.array_equal(r1.predictions["t"][0], r1.predictions["t"][1])


def test_width_mismatch():
    with pytest.raises(DimensionError):
        fit_predict(PredictorSpec("regression", "closed-form-linear", 1),
                    np.zeros((5, 2)), np.zeros(5), {"t": np.zeros((3, 3))})


def test_feature_sets():
    ds = synthetic(200)
    sets = feature_sets(ds, names=["FULL", "X", "XNON"])
    assert sets["FULL"].shape[1] == sets["X"].shape[1] + 1
    assert sets["XNON"].shape[1] == len(ds.meta["non_descendant"])
    with pytest.raises(ConfigError):
        feature_sets(ds, names=["ZXP"])
    with pytest.raises(ConfigError):
        feature_sets(law_like(100), names=["XNON"])


def test_prediction_csv(tmp_path):
    X = np.arange(6, dtype=float)[:, None]
    run = fit_predict(PredictorSpec("regression", "closed-form-linear", 2), X, X[:, 0], {"t": X[:2]})
    path = run.write_csv(tmp_path / "p.csv", {"t": np.array([10, 11])})
    lines = path.read_text().splitlines()
    assert lines[0] == "row_id,repeat,eval_set,prediction"
    assert len(lines) == 1 + 2 * 2
    assert lines[1].startswith("10,0,t,")
