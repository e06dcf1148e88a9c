import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sersml.augment import AugmentationConfig
from sersml.errors import ConfigError, DomainError, FoldError, LengthMismatch
from sersml.evaluation import (
    ModelSpec,
    SearchEntry,
    accuracy,
    confusion_matrix,
    cross_validate,
    cross_validate_dataset,
    expand_grid,
    make_config,
    rank_entries,
    regression_error,
    regression_error_mean,
    search_hyperparameters,
    stratified_kfold,
    write_report,
)
from sersml.models import ForestConfig, KnnConfig, model_to_dict
from sersml.models.presets import get_preset
from sersml.transform import transform_dataset


# --- folds ------------------------------------------------------------

def test_ten_per_class_five_folds():
    y = np.repeat(np.arange(5), 10)
    folds = stratified_kfold(y, 5, seed=0)
    for c in range(5):
        assert np.bincount(folds[y == c], minlength=5).tolist() == [2] * 5


def test_class_of_five_gives_one_per_fold():
    y = np.array([0] * 5 + [1] * 7)
    folds = stratified_kfold(y, 5, seed=3)
    assert sorted(folds[y == 0].tolist()) == [0, 1, 2, 3, 4]


def test_fold_error_names_smaller_k():
    y = np.repeat(np.arange(7), [6, 6, 6, 5, 5, 5, 4])
    with pytest.raises(FoldError, match="k <= 4"):
        stratified_kfold(y, 5)
    assert set(stratified_kfold(y, 3).tolist()) == {0, 1, 2}


def test_triclosan_shaped_sizes():
    y = np.repeat(np.arange(7), [6, 6, 6, 5, 5, 5, 5])
    with pytest.raises(FoldError):
        stratified_kfold(y, 6)
    folds = stratified_kfold(y, 3)
    for c in range(7):
        counts = np.bincount(folds[y == c], minlength=3)
        assert counts.max() - counts.min() <= 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(3, 9), min_size=2, max_size=5), st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_folds_deterministic_and_relabel_invariant(sizes, k, seed):
    r = np.random.default_rng(seed)
    y = r.permutation(np.repeat(np.arange(len(sizes)), sizes))
    folds = stratified_kfold(y, k, seed)
    assert np.array_equal(folds, stratified_kfold(y, k, seed))
    relabel = r.permutation(len(sizes)) + 10
    assert np.array_equal(folds, stratified_kfold(relabel[y], k, seed))
    assert set(folds.tolist()) == set(range(k))
    for c in range(len(sizes)):
        counts = np.bincount(folds[y == c], minlength=k)
        assert counts.max() - counts.min() <= 1


# --- metrics ----------------------------------------------------------

def test_regression_error_examples():
    assert regression_error([0, 1, 2], [0, 1, 2], 8) == 0.0
    assert regression_error([3, 5], [3, 3], 8) == 0.0625
    assert regression_error([1, 2, 7, 0], [0, 3, 4, 0], 8) == 0.171875
    assert regression_error_mean([1, 2, 7, 0], [0, 3, 4, 0], 8) == 0.171875 / 4


def test_metric_errors():
    with pytest.raises(LengthMismatch):
        regression_error([0, 1], [0], 3)
    with pytest.raises(LengthMismatch):
        accuracy([0, 1], [0])
    with pytest.raises(DomainError):
        regression_error([0, 3], [0, 1], 3)


def test_confusion_rows():
    true = np.array([0, 0, 1, 2, 2, 2])
    pred = np.array([0, 1, 1, 2, 0, 2])
    cm = confusion_matrix(pred, true, 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 2]]
    assert cm.sum(axis=1).tolist() == np.bincount(true).tolist()


# --- cross-validation -------------------------------------------------

def _perfect_data(n_per=6, n_classes=3):
    y = np.repeat(np.arange(n_classes), n_per)
    X = 10.0 * np.eye(n_classes)[y] + np.random.default_rng(0).normal(0, 0.01, size=(y.size, n_classes))
    return X, y


def test_perfect_classifier_report():
    X, y = _perfect_data()
    rep = cross_validate(ModelSpec("knn", KnnConfig(n_neighbors=1)), X, y, k=3, seed=1)
    assert rep.mean == 1.0 and rep.std == 0.0 and rep.e_reg == 0.0
    assert rep.confusion.sum(axis=1).tolist() == [6, 6, 6]
    assert sorted(np.bincount(rep.folds).tolist()) == [6, 6, 6]


def test_report_statistics(small_synthetic):
    fm = transform_dataset(small_synthetic, "hadamard")
    rep = cross_validate(ModelSpec("knn", KnnConfig(n_neighbors=3)), fm, k=3, seed=2)
    accs = np.array(rep.fold_accuracies)
    assert abs(rep.mean - accs.mean()) < 1e-12
    assert abs(rep.std - accs.std(ddof=1)) < 1e-12
    assert 0.0 <= rep.mean <= 1.0
    assert rep.confusion.sum(axis=1).tolist() == small_synthetic.class_counts().tolist()
    assert rep.e_reg == pytest.approx(sum(rep.e_reg_folds))


def test_cross_validate_rejects_augmentation():
    X, y = _perfect_data()
    with pytest.raises(ConfigError):
        cross_validate(ModelSpec("knn", KnnConfig(1), AugmentationConfig()), X, y, k=3)


def test_fold_errors_name_the_fold():
    X, y = _perfect_data(n_per=3)
    with pytest.raises(ConfigError) as info:
        cross_validate(ModelSpec("knn", KnnConfig(n_neighbors=50)), X, y, k=3)
    assert info.value.fold == 0
    assert str(info.value).startswith("fold 1/3")


@pytest.mark.parametrize("kind,config", [
    ("rfc", ForestConfig(n_estimators=5)),
    ("knn", KnnConfig(n_neighbors=2)),
])
def test_validation_rows_never_reach_the_model(kind, config, small_synthetic):
    spec = ModelSpec(kind, config, AugmentationConfig(multiplier=3))
    base = cross_validate_dataset(spec, small_synthetic, "scaled", k=3, seed=4, keep_models=True)
    X = small_synthetic.intensities.copy()
    val = np.flatnonzero(base.folds == 0)
    X[val] = X[val] * 3.0 + 100.0
    canary = small_synthetic.with_rows(X, small_synthetic.labels, small_synthetic.meta)
    moved = cross_validate_dataset(spec, canary, "scaled", k=3, seed=4, keep_models=True)
    assert json.dumps(model_to_dict(base.models[0])) == json.dumps(model_to_dict(moved.models[0]))
    assert json.dumps(model_to_dict(base.models[1])) != json.dumps(model_to_dict(moved.models[1]))


def test_pipeline_thread_independent(small_synthetic):
    spec = ModelSpec("rfc", ForestConfig(n_estimators=4), AugmentationConfig(multiplier=2))
    a = cross_validate_dataset(spec, small_synthetic, "fourier", k=3, seed=9, threads=1)
    b = cross_validate_dataset(spec, small_synthetic, "fourier", k=3, seed=9, threads=3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_write_report_files(tmp_path, small_synthetic):
    rep = cross_validate_dataset(ModelSpec("knn", KnnConfig(2)), small_synthetic, "hadamard", k=3)
    paths = write_report(rep, tmp_path)
    table = paths["table"].read_text().splitlines()
    assert table[0] == "dataset,transform,model,mean,std"
    assert table[1].startswith("synthetic,hadamard,knn,")
    doc = json.loads(paths["json"].read_text())
    assert "fit_times" not in doc and doc["k"] == 3
    assert paths["confusion"].read_text().splitlines()[0].startswith("true\\predicted,1.0e-5")


# --- search -----------------------------------------------------------

def test_expand_grid():
    pts = expand_grid({"b": [1, 2], "a": ["x"]})
    assert pts == [{"a": "x", "b": 1}, {"a": "x", "b": 2}]
    assert expand_grid([{"a": 1}]) == [{"a": 1}]


def test_single_point_grid():
    X, y = _perfect_data()
    res = search_hyperparameters("knn", {"n_neighbors": [1]}, X, y, k=3)
    assert res.best_params == {"n_neighbors": 1}
    assert res.best_config == KnnConfig(n_neighbors=1)
    assert len(res.leaderboard) == 1


def test_tie_prefers_lower_std():
    entries = [SearchEntry({"a": 0}, 0.9, 0.05, 0.1, 0), SearchEntry({"a": 1}, 0.9, 0.01, 5.0, 1),
               SearchEntry({"a": 2}, 0.8, 0.0, 0.0, 2)]
    assert [e.params["a"] for e in rank_entries(entries)] == [1, 0, 2]


def test_random_budget_is_seeded():
    X, y = _perfect_data()
    grid = {"n_neighbors": [1, 2, 3, 4, 5], "weights": ["uniform", "distance"]}
    a = search_hyperparameters("knn", grid, X, y, k=3, budget=4, seed=7)
    b = search_hyperparameters("knn", grid, X, y, k=3, budget=4, seed=7)
    assert len(a.leaderboard) == 4
    # exact ties fall through to wall-clock fit time, so compare the sampled set
    assert sorted(e.index for e in a.leaderboard) == sorted(e.index for e in b.leaderboard)


def test_tuned_forest_among_weaker(small_synthetic):
    tuned = get_preset("r6g").forest
    grid = [{"n_estimators": tuned.n_estimators, "max_features": tuned.max_features,
             "criterion": tuned.criterion},
            {"n_estimators": 1, "max_features": 1, "criterion": "gini"}]
    res = search_hyperparameters("rfc", grid, small_synthetic, k=3, seed=0, transform="hadamard")
    tuned_score = next(e.mean for e in res.leaderboard if e.params == grid[0])
    assert res.leaderboard[0].mean >= tuned_score


def test_make_config_errors():
    with pytest.raises(ConfigError):
        make_config("rfc", {"depth": 3})
    with pytest.raises(ConfigError):
        make_config("mlp")
