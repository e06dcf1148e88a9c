import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from sersml.dataset import (
    ConcentrationClass,
    LabeledDataset,
    PeakShape,
    Spectrum,
    SyntheticSpec,
    generate_synthetic_dataset,
)
from sersml.peaks import (
    detect_peaks,
    local_maxima,
    peak_distribution,
    single_occurrence_fraction,
    smooth3,
    spearman_matrix,
    total_variation,
)

from oracles import brute_spearman


def _bump(x, c, h, w=4.0):
    return h * np.exp(-0.5 * ((x - c) / w) ** 2)


def _ds(rows, labels, grid=None):
    rows = np.asarray(rows, dtype=float)
    grid = np.arange(rows.shape[1], dtype=float) if grid is None else grid
    n = max(labels) + 1
    classes = tuple(ConcentrationClass(10.0 ** -(5 + k), f"1.0e-{5 + k}") for k in range(n))
    return LabeledDataset(grid, rows, labels, classes)


def test_smooth3_ends():
    assert smooth3([3.0, 0.0, 0.0, 6.0]).tolist() == [1.5, 1.0, 2.0, 3.0]


def test_plateau_reports_leftmost():
    assert local_maxima([0, 1, 2, 2, 2, 1, 0]).tolist() == [2]
    assert local_maxima([0, 1, 1]).tolist() == []


def test_triangular_peak():
    y = np.array([0, 1, 2, 3, 4, 3, 2, 1, 0], dtype=float)
    p = detect_peaks(Spectrum(np.arange(9.0), y))
    assert p.indices.tolist() == [4]
    assert p.significant.tolist() == [True]
    assert p.intensities.tolist() == [4.0]


def test_ramp_has_no_peaks():
    assert len(detect_peaks(Spectrum(np.arange(20.0), np.arange(20.0) ** 1.5))) == 0


def test_three_lorentzians_recovered():
    peaks = (PeakShape(650.0, 16.0, 1.0, 0.1), PeakShape(1000.0, 16.0, 0.9, 0.1),
             PeakShape(1600.0, 16.0, 0.85, 0.1))
    spec = SyntheticSpec(peaks=peaks, concentrations=(1e-7,), n_per_class=1, spacing=3.0)
    ds = generate_synthetic_dataset(spec, seed=9)
    p = detect_peaks(ds.spectrum(0))
    assert len(p) == 3
    assert np.all(np.abs(np.sort(p.wavenumbers) - [650, 1000, 1600]) <= 3.0)


def test_significance_and_flip_flags():
    x = np.arange(200.0)
    y = _bump(x, 40, 10) + _bump(x, 100, 8.5) + _bump(x, 160, 1.5)
    p = detect_peaks(Spectrum(x, y))
    assert p.significant.tolist() == [True, True, False]
    assert p.flip_eligible.tolist() == [False, False, True]


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2**32 - 1))
def test_affine_invariance(a, b, seed):
    r = np.random.default_rng(seed)
    x = np.arange(120.0)
    y = sum(_bump(x, c, h) for c, h in zip(r.uniform(5, 115, 5), r.uniform(0.5, 5, 5)))
    p = detect_peaks(Spectrum(x, y))
    q = detect_peaks(Spectrum(x, a * y + b))
    assert np.array_equal(p.indices, q.indices)
    assert np.array_equal(p.significant, q.significant)


def test_identical_class_has_no_single_peaks():
    x = np.arange(100.0)
    y = _bump(x, 30, 5) + _bump(x, 70, 4.5)
    res = single_occurrence_fraction(_ds([y, y, y, y], [0, 0, 1, 1], x))
    assert res.overall == 0.0
    assert res.per_class == {0: 0.0, 1: 0.0}


def test_one_extra_peak_gives_one_third():
    x = np.arange(100.0)
    common = _bump(x, 30, 5)
    res = single_occurrence_fraction(_ds([common + _bump(x, 70, 5), common], [0, 0], x))
    assert res.n_significant == 3 and res.n_single == 1
    assert res.overall == pytest.approx(1 / 3)


def test_singleton_class_excluded():
    x = np.arange(50.0)
    y = _bump(x, 25, 3)
    res = single_occurrence_fraction(_ds([y, y, y], [0, 0, 1], x))
    assert res.excluded == (1,)
    assert 1 not in res.per_class


def test_injected_one_off_rate():
    spec = SyntheticSpec(peaks=(PeakShape(1000.0, 12.0, 1.0, 0.1),), n_per_class=40,
                         spacing=2.0, spurious_rate=0.3)
    ds = generate_synthetic_dataset(spec, seed=21)
    res = single_occurrence_fraction(ds)
    # oracle from generator metadata: an injected band is a one-off unless it
    # lands near the genuine band or near another injected band of its class
    spur = [(int(y), m["spurious_peak"]) for y, m in zip(ds.labels, ds.meta) if "spurious_peak" in m]
    lone = 0
    for a, (c, pos) in enumerate(spur):
        near = [p for b, (d, p) in enumerate(spur) if b != a and d == c and abs(p - pos) <= 5.0]
        if not near and abs(pos - 1000.0) > 5.0:
            lone += 1
    expected = lone / (ds.n_samples + len(spur))
    assert abs(res.overall - expected) < 0.05
    assert 0.0 <= res.overall <= 1.0


def test_histogram_single_peak():
    x = np.arange(0.0, 100.0)
    h = peak_distribution(_ds([_bump(x, 42, 3)], [0], x), bin_width=5.0)
    assert np.count_nonzero(h.normalized) == 1
    assert h.normalized.max() == 1.0


def test_histogram_two_positions():
    x = np.arange(600.0, 1500.0, 2.0)
    y = _bump(x, 700, 5, 6) + _bump(x, 1400, 4, 6)
    h = peak_distribution(_ds([y, 2 * y + 1, y], [0, 0, 0], x))
    assert np.count_nonzero(h.counts) == 2
    assert total_variation(h, h) == 0.0


def test_spearman_self_and_negation(rng):
    col = rng.normal(size=9)
    X = np.column_stack([col, -col, rng.normal(size=9)])
    C = spearman_matrix(X).matrix
    assert C[0, 0] == 1.0
    assert C[0, 1] == pytest.approx(-1.0, abs=1e-12)


def test_spearman_against_brute_force(rng):
    X = rng.normal(size=(5, 8))
    X[2, 3] = X[4, 3]  # one tie
    C = spearman_matrix(X).matrix
    assert np.max(np.abs(C - brute_spearman(X))) < 1e-12


def test_spearman_matches_rankdata_pearson(rng):
    X = rng.integers(0, 4, size=(12, 6)).astype(float)
    R = rankdata(X, axis=0)
    expected = np.corrcoef(R.T)
    C = spearman_matrix(X).matrix
    assert np.max(np.abs(C - expected)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spearman_monotone_invariance(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(7, 5))
    C = spearman_matrix(X)
    D = spearman_matrix(np.exp(2 * X) + np.arctan(X))
    assert np.max(np.abs(C.matrix - D.matrix)) < 1e-12
    M = C.matrix
    assert np.array_equal(M, M.T)
    assert np.all(np.diag(M) == 1.0)
    assert np.all(np.abs(M) <= 1.0)


def test_spearman_average(rng):
    X = rng.normal(size=(6, 4))
    cm = spearman_matrix(X)
    iu = np.triu_indices(4, 1)
    assert cm.average == pytest.approx(cm.matrix[iu].mean())
