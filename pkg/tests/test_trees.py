import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgtt.errors import ConfigError, ContractError, ShapeError
from fgtt.trees import (BoosterConfig, ForestConfig, fit_boosting_tree, fit_classification_tree, grid_search_cv,
                        leaf_weight, predict_forest, split_gain, train_booster, train_random_forest)

from oracles import walk_tree


def xor(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 2))
    return X, ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)


def brute_boost_stump(X, g, h, lam, gamma):
    """Every midpoint of every column, scored by the gain formula."""
    best = (0.0, None, None)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, j] <= thr
            gain = 0.5 * (g[left].sum() ** 2 / (h[left].sum() + lam) + g[~left].sum() ** 2 / (h[~left].sum() + lam)
                          - g.sum() ** 2 / (h.sum() + lam)) - gamma
            if gain > best[0]:
                best = (gain, j, thr)
    return best


class TestClassificationTree:
    def test_four_point_stump(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        tree = fit_classification_tree(X, y, 2, max_depth=1)
        assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
        assert (walk_tree(tree, X) == y).all()

    def test_unbounded_tree_memorises(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((150, 4))
        y = rng.integers(0, 3, 150)
        tree = fit_classification_tree(X, y, 3)
        assert (walk_tree(tree, X) == y).all()

    def test_depth_limit(self):
        X, y = xor()
        assert fit_classification_tree(X, y, 2, max_depth=2).max_depth <= 2

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_apply_matches_walk(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 4, (60, 3)).astype(float)
        y = rng.integers(0, 3, 60)
        tree = fit_classification_tree(X, y, 3, max_depth=4, max_features=2, rng=rng)
        Xt = rng.integers(-1, 5, (30, 3)).astype(float)
        assert (tree.predict_value(Xt).argmax(axis=1) == walk_tree(tree, Xt)).all()
        assert np.allclose(tree.value.sum(axis=1), 1.0)

    def test_width_checked(self):
        tree = fit_classification_tree(np.zeros((4, 2)) + np.arange(4)[:, None], [0, 0, 1, 1], 2)
        with pytest.raises(ShapeError):
            tree.apply(np.zeros((2, 3)))


class TestForest:
    def test_xor_fit(self):
        X, y = xor()
        forest = train_random_forest(X, y, ForestConfig(n_estimators=20, seed=0))
        assert (forest.predict(X) == y).mean() == 1.0

    def test_tie_goes_to_lowest_class(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([1, 0, 2, 2])
        forest = train_random_forest(X, y, ForestConfig(n_estimators=1, bootstrap=False), n_classes=3)
        ids, proba = predict_forest(forest, np.array([[0.0]]))
        assert np.allclose(proba, [[0.5, 0.5, 0.0]]) and ids[0] == 0

    def test_seeded(self):
        X, y = xor(200)
        a = train_random_forest(X, y, ForestConfig(n_estimators=5, seed=3))
        b = train_random_forest(X, y, ForestConfig(n_estimators=5, seed=3))
        assert all(np.array_equal(s.threshold, t.threshold) for s, t in zip(a.trees, b.trees))

    def test_probabilities_average_trees(self):
        X, y = xor(200)
        forest = train_random_forest(X, y, ForestConfig(n_estimators=4, max_depth=2, seed=1))
        manual = np.mean([t.predict_value(X) for t in forest.trees], axis=0)
        assert np.allclose(forest.predict_proba(X), manual)

    def test_single_class_rejected(self):
        with pytest.raises(ContractError, match="degenerate"):
            train_random_forest(np.zeros((5, 2)), np.zeros(5, dtype=int), ForestConfig())

    @pytest.mark.parametrize("kw", [dict(n_estimators=0), dict(min_samples_split=1), dict(features_per_split=0.0)])
    def test_config(self, kw):
        with pytest.raises(ConfigError):
            ForestConfig(**kw)


class TestBooster:
    def test_leaf_weight_and_gain(self):
        assert leaf_weight(4.0, 1.0, 1.0) == -2.0
        # gain 0.5 * (1/2 + 1/2 - 0/3) - 0.1
        assert np.isclose(split_gain(1.0, 1.0, -1.0, 1.0, 1.0, 0.1), 0.4)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 0.5))
    def test_stump_matches_brute_force(self, seed, lam, gamma):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 6, (40, 3)).astype(float)
        g = rng.standard_normal(40)
        h = rng.uniform(0.1, 1.0, 40)
        cfg = BoosterConfig(max_depth=1, reg_lambda=lam, gamma_complexity=gamma, min_child_weight=0.0)
        tree = fit_boosting_tree(X, g, h, cfg)
        gain, j, thr = brute_boost_stump(X, g, h, lam, gamma)
        if j is None:
            assert tree.n_nodes == 1
        else:
            assert tree.n_nodes == 3
            left = X[:, tree.feature[0]] <= tree.threshold[0]
            got = split_gain(g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum(), lam, gamma)
            assert np.isclose(got, gain)

    def test_leaf_values_by_hand(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        g = np.array([1.0, 1.0, -1.0, -2.0])
        h = np.ones(4)
        tree = fit_boosting_tree(X, g, h, BoosterConfig(max_depth=1, reg_lambda=1.0, min_child_weight=0.0))
        assert np.allclose(tree.predict_value(np.array([[0.0], [1.0]])), [-2 / 3, 3 / 3])

    def test_large_gamma_gives_stumps(self):
        X, y = xor(200)
        booster = train_booster(X, y, BoosterConfig(n_estimators=3, gamma_complexity=1e6))
        assert all(t.n_nodes == 1 for trees in booster.rounds for t in trees)

    def test_prior_base_score(self):
        X, y = xor(300)
        booster = train_booster(X, y, BoosterConfig(n_estimators=1, eta=1.0, max_depth=0, reg_lambda=0.0))
        prior = np.bincount(y) / len(y)
        # at the prior the summed gradient is zero, so a root-only tree adds nothing
        assert np.allclose(booster.decision_function(X[:1])[0], np.log(prior))

    def test_depth_zero_one_round_shift(self):
        # from a zero score each class sees p = 1/2, g = 1/2 - y_c, h = 1/4
        X, y = xor(300)
        y[:40] = 1
        booster = train_booster(X, y, BoosterConfig(n_estimators=1, eta=1.0, max_depth=0, reg_lambda=0.0,
                                                    base_score="zero"))
        freq = np.bincount(y) / len(y)
        assert np.allclose(booster.decision_function(X[:1])[0], 4 * (freq - 0.5))

    def test_loss_non_increasing_small_eta(self):
        X, y = xor(300, seed=2)
        y = y + (X[:, 0] > 0.7)
        booster = train_booster(X, y, BoosterConfig(n_estimators=50, eta=0.05, max_depth=3))
        assert (np.diff(booster.train_loss) <= 1e-12).all()

    def test_xor_depth_two(self):
        X, y = xor()
        booster = train_booster(X, y, BoosterConfig(n_estimators=30, max_depth=2))
        assert (booster.predict(X) == y).mean() > 0.95

    def test_min_child_weight_blocks_small_leaves(self):
        X = np.arange(10.0)[:, None]
        g = np.r_[np.ones(2), -np.ones(8)]
        tree = fit_boosting_tree(X, g, np.ones(10) * 0.25, BoosterConfig(max_depth=1, min_child_weight=1.0))
        if tree.n_nodes == 3:
            left = X[:, 0] <= tree.threshold[0]
            assert min(left.sum(), (~left).sum()) * 0.25 >= 1.0

    def test_width_checked(self):
        X, y = xor(50)
        with pytest.raises(ShapeError):
            train_booster(X, y, BoosterConfig(n_estimators=1)).predict(np.zeros((2, 3)))


class TestGridSearch:
    def test_single_combination(self):
        X, y = xor(150)
        res = grid_search_cv("booster", {"max_depth": [2]}, X, y, k=3, base={"n_estimators": 5})
        assert res.best_params == {"max_depth": 2} and len(res.table) == 1

    def test_depth_matters_on_xor(self):
        X, y = xor(300)
        res = grid_search_cv("forest", {"max_depth": [1, 3], "n_estimators": [10]}, X, y, k=3)
        assert res.best_params["max_depth"] == 3

    def test_forest_ignores_eta(self):
        X, y = xor(120)
        res = grid_search_cv("forest", {"eta": [0.1, 0.3], "n_estimators": [3]}, X, y, k=3)
        assert "eta" not in res.best_params and len(res.table) == 1

    def test_ties_keep_first(self):
        X, y = xor(120)
        res = grid_search_cv("booster", {"gamma_complexity": [1e6, 2e6]}, X, y, k=3, base={"n_estimators": 2})
        assert res.best_params == {"gamma_complexity": 1e6}

    def test_deterministic_text(self):
        X, y = xor(120)
        grid = {"max_depth": [1, 2], "eta": [0.3]}
        a = grid_search_cv("booster", grid, X, y, k=3, base={"n_estimators": 3}).to_text()
        b = grid_search_cv("booster", grid, X, y, k=3, base={"n_estimators": 3}).to_text()
        assert a == b and a.startswith("max_depth,eta,fold1_f1")

    def test_bad_family(self):
        with pytest.raises(ConfigError):
            grid_search_cv("svm", {"a": [1]}, np.zeros((10, 1)), np.zeros(10, dtype=int))
