import numpy as np
import pytest
from scipy.stats import kstest

from sersml.augment import (
    AugmentationConfig,
    DatasetDiagnostics,
    augment_dataset,
    augment_spectrum,
    diagnose,
    estimate_offset_std,
    estimate_stretch_std,
)
from sersml.dataset import (
    ConcentrationClass,
    LabeledDataset,
    Spectrum,
    SyntheticSpec,
    generate_synthetic_dataset,
)
from sersml.errors import InvalidPartition
from sersml.peaks import peak_distribution, total_variation


def _flat_dataset(mins, corrected=False):
    grid = np.arange(5.0)
    X = np.array([[m, m + 1, m + 3, m + 1, m] for m in mins], dtype=float)
    classes = (ConcentrationClass(1e-5, "1.0e-5"),)
    meta = tuple({"baseline_corrected": corrected} for _ in mins)
    return LabeledDataset(grid, X, [0] * len(mins), classes, meta)


def test_offset_std_example():
    assert estimate_offset_std(_flat_dataset([0.0, 10.0, 20.0])) == pytest.approx(8.16496580927726)


def test_offset_absent_when_corrected():
    assert estimate_offset_std(_flat_dataset([0.0, 10.0, 20.0], corrected=True)) is None


def test_offset_std_tracks_injected_spread():
    spec = SyntheticSpec(concentrations=(1e-6,), n_per_class=100, baseline=True,
                         offset_std=2.0, spacing=4.0)
    ds = generate_synthetic_dataset(spec, seed=17)
    est = estimate_offset_std(ds)
    assert abs(est - 2.0) <= 0.15 * 2.0


def test_stretch_std_oracle():
    ds = _flat_dataset([1.0, 2.0, 4.0])
    ratios = [3.0 / 1.0, 3.0 / 2.0, 3.0 / 4.0]
    assert estimate_stretch_std(ds) == pytest.approx(np.std(ratios))


def test_corrected_low_noise_gets_stretch_only(rng):
    x = np.linspace(0, 100, 101)
    zeta = Spectrum(x, 2.0 + np.exp(-0.5 * ((x - 50) / 3) ** 2))
    diag = DatasetDiagnostics(offset_std=None, stretch_std=0.5, single_fraction=0.0, flip_enabled=False)
    out = augment_spectrum(zeta, diag, AugmentationConfig(), rng)
    ratio = out.intensities / zeta.intensities
    assert np.allclose(ratio, ratio[0], rtol=0, atol=1e-12)
    assert abs(ratio[0] - 1.0) <= 0.05 + 1e-12


def test_stretch_magnitude_is_uniform():
    x = np.linspace(0, 100, 51)
    zeta = Spectrum(x, 1.0 + x / 100)
    diag = DatasetDiagnostics(offset_std=None, stretch_std=0.4, single_fraction=0.0, flip_enabled=False)
    cfg = AugmentationConfig()
    bound = 0.1 * 0.4
    rng = np.random.default_rng(2024)
    mags = np.array([
        abs(augment_spectrum(zeta, diag, cfg, rng).intensities[0] / zeta.intensities[0] - 1.0)
        for _ in range(10_000)
    ])
    assert mags.max() <= bound + 1e-12
    assert kstest(mags / bound, "uniform").pvalue > 0.01


def test_flipped_peaks_never_shrink():
    x = np.arange(300.0)
    y = 1.0 + 10 * np.exp(-0.5 * ((x - 150) / 4) ** 2)
    for c in (40, 80, 220, 260):
        y = y + 0.8 * np.exp(-0.5 * ((x - c) / 3) ** 2)
    zeta = Spectrum(x, y)
    diag = DatasetDiagnostics(offset_std=None, stretch_std=None, single_fraction=1.0, flip_enabled=True)
    cfg = AugmentationConfig(flip_count_range=(5, 5))
    for seed in range(20):
        out = augment_spectrum(zeta, diag, cfg, np.random.default_rng(seed)).intensities
        assert np.all(out >= y - 1e-12)
        # the main band is never flip-eligible
        assert out[150] == y[150]


def test_lognormal_factor_above_one():
    draws = np.random.default_rng(0).lognormal(0.0, 2.0, 10_000) + 1.0
    assert draws.min() > 1.0


def test_validation_rows_rejected(rng):
    zeta = Spectrum(np.arange(5.0), np.arange(5.0) + 1)
    diag = DatasetDiagnostics(None, None, 0.0, False)
    with pytest.raises(InvalidPartition):
        augment_spectrum(zeta, diag, AugmentationConfig(), rng, partition="validation")
    ds = _flat_dataset([1.0, 2.0])
    bad = ds.with_rows(ds.intensities, ds.labels, [{"partition": "test"}, {}])
    with pytest.raises(InvalidPartition):
        augment_dataset(bad)


def test_multiplier_one_is_identity(small_synthetic):
    out = augment_dataset(small_synthetic, AugmentationConfig(multiplier=1))
    assert np.array_equal(out.intensities, small_synthetic.intensities)


def test_counts_scale_with_multiplier():
    spec = SyntheticSpec(n_per_class=20, spacing=10.0)
    ds = generate_synthetic_dataset(spec, seed=0)
    out = augment_dataset(ds, AugmentationConfig(multiplier=10, seed=5))
    assert out.n_samples == 1000
    assert out.class_counts().tolist() == (ds.class_counts() * 10).tolist()
    assert np.array_equal(out.grid, ds.grid)
    assert np.array_equal(out.intensities[:100], ds.intensities)
    assert np.isfinite(out.intensities).all()


def test_all_steps_disabled_duplicates(small_synthetic):
    cfg = AugmentationConfig(multiplier=3, enable_offset=False, enable_stretch=False, enable_flip=False)
    out = augment_dataset(small_synthetic, cfg)
    n = small_synthetic.n_samples
    assert np.array_equal(out.intensities[n:2 * n], small_synthetic.intensities)
    assert np.array_equal(out.intensities[2 * n:], small_synthetic.intensities)
    assert np.array_equal(out.labels[n:2 * n], small_synthetic.labels)


def test_deterministic_across_threads(small_synthetic):
    cfg = AugmentationConfig(multiplier=4, seed=99)
    a = augment_dataset(small_synthetic, cfg, threads=1)
    b = augment_dataset(small_synthetic, cfg, threads=6)
    assert np.array_equal(a.intensities, b.intensities)
    assert a.meta == b.meta


def test_flip_gate_direction():
    x = np.arange(200.0)
    rows = []
    for k in range(4):
        rows.append(1.0 + np.exp(-0.5 * ((x - (30 + 40 * k)) / 3) ** 2))
    classes = (ConcentrationClass(1e-5, "1.0e-5"),)
    ds = LabeledDataset(x, np.array(rows), [0] * 4, classes)
    assert diagnose(ds).single_fraction == 1.0
    assert diagnose(ds).flip_enabled
    assert not diagnose(ds, AugmentationConfig(flip_gate="at_most")).flip_enabled


def test_peak_distribution_preserved():
    spec = SyntheticSpec(n_per_class=20, spacing=2.0, baseline=True, noise=0.002)
    ds = generate_synthetic_dataset(spec, seed=8)
    out = augment_dataset(ds, AugmentationConfig(multiplier=10, seed=1))
    tv = total_variation(peak_distribution(ds), peak_distribution(out))
    assert tv < 0.15
