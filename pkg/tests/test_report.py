import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sersml.errors import DomainError
from sersml.report import (
    ImportanceProfile,
    PeakStatus,
    ReferencePeak,
    match_peaks,
    modified_importance,
    read_reference_table,
    rolling_average,
    write_reference_table,
)


def _naive_window_mean(v, h):
    out = []
    for i in range(len(v)):
        win = [v[j] for j in range(len(v)) if abs(i - j) <= h]
        out.append(sum(win) / len(win))
    return np.array(out)


def _spiked_profile(center=1641.0, lo=400.0, hi=1800.0):
    grid = np.arange(lo, hi + 1.0)
    raw = np.zeros(grid.size)
    j = int(center - lo)
    raw[j - 2:j + 3] = [0.1, 0.2, 0.4, 0.2, 0.1]
    return ImportanceProfile.from_importances(grid, raw)


# --- modified importance ----------------------------------------------

def test_modified_importance_values():
    assert modified_importance(math.exp(-1)) == 1.0
    assert modified_importance(0.04) == pytest.approx(0.31066746727980593, abs=1e-15)
    assert modified_importance(0.0) == 0.0
    assert modified_importance(1e-300) < 0.0015
    assert np.isfinite(modified_importance(1.0))


def test_modified_importance_domain():
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(DomainError):
            modified_importance(bad)
    np.testing.assert_array_equal(modified_importance([0.0, math.exp(-1)]), [0.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-12, 1 - 1e-9), st.floats(1e-12, 1 - 1e-9))
def test_modified_importance_monotone(a, b):
    assume(a < b)
    assert modified_importance(a) <= modified_importance(b)
    assert modified_importance(a) >= 0.0


# --- rolling average --------------------------------------------------

def test_rolling_average_examples():
    np.testing.assert_allclose(rolling_average([0, 0, 5, 0, 0]), [5 / 3, 5 / 4, 1, 5 / 4, 5 / 3], rtol=0, atol=1e-15)
    assert rolling_average([2.5] * 7).tolist() == [2.5] * 7
    assert rolling_average([4.0]).tolist() == [4.0]


def test_rolling_average_matches_oracle(rng):
    for n, h in [(1, 2), (3, 2), (50, 2), (17, 0), (9, 5)]:
        v = rng.normal(size=n)
        assert np.max(np.abs(rolling_average(v, h) - _naive_window_mean(list(v), h))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(12, 60), st.data())
def test_isolated_spike_keeps_argmax(n, data):
    # far enough from the ends that every window holding the spike is full width
    pos = data.draw(st.integers(4, n - 5))
    v = np.zeros(n)
    v[pos] = data.draw(st.floats(0.1, 10.0))
    s = rolling_average(v)
    top = np.flatnonzero(s == s.max())
    # full windows give a flat top of width 2 * half_window + 1 centred on the spike
    assert top.tolist() == list(range(pos - 2, pos + 3))


# --- profile ----------------------------------------------------------

def test_profile_requires_unit_sum():
    grid = np.arange(4.0)
    with pytest.raises(DomainError):
        ImportanceProfile.from_importances(grid, [0.2, 0.2, 0.2, 0.2])
    prof = ImportanceProfile.from_importances(grid, [0.25] * 4)
    assert np.all(prof.modified >= 0)
    assert prof.smoothed.shape == grid.shape


def test_important_peaks_of_spike():
    prof = _spiked_profile()
    assert prof.important_peaks().tolist() == [1641.0]
    assert prof.important_peaks(threshold=5.0).size == 0


def test_profile_csv(tmp_path):
    prof = _spiked_profile()
    lines = prof.to_csv(tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "wavenumber,raw_importance,modified_importance,smoothed_modified_importance"
    assert len(lines) == prof.grid.size + 1


# --- matching ---------------------------------------------------------

def test_matched_and_ignored_rows():
    prof = _spiked_profile()
    refs = [ReferencePeak(1650.0, "C-C stretching"), ReferencePeak(614.0, "C-C-C ring in-plane bend")]
    rep = match_peaks(prof, [604.0, 1641.0], refs)
    matched = rep.by_status(PeakStatus.MATCHED_IMPORTANT)
    assert len(matched) == 1
    assert matched[0].label() == "1641/1650(9)"
    assert matched[0].shift == 9.0
    ignored = rep.by_status(PeakStatus.PRESENT_IGNORED)
    assert [r.label() for r in ignored] == ["604/614(10)"]
    assert ignored[0].smoothed_importance < rep.threshold
    assert rep.model_peaks == {1641.0: PeakStatus.MATCHED_IMPORTANT}


def test_reference_without_data_peak_is_absent():
    rep = match_peaks(_spiked_profile(), [1641.0], [ReferencePeak(1000.0, "x")])
    assert [r.status for r in rep.rows] == [PeakStatus.ABSENT_IN_DATA, PeakStatus.MODEL_ONLY_UNIDENTIFIED]


def test_empty_reference_marks_model_only():
    rep = match_peaks(_spiked_profile(), [1641.0], [])
    assert [r.status for r in rep.rows] == [PeakStatus.MODEL_ONLY_UNIDENTIFIED]
    assert rep.rows[0].model_wavenumber == 1641.0


def test_shift_beyond_tolerance_is_not_matched():
    rep = match_peaks(_spiked_profile(), [1641.0], [ReferencePeak(1665.0)], tolerance=20.0)
    assert rep.by_status(PeakStatus.MATCHED_IMPORTANT) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 6), st.integers(0, 8))
def test_every_peak_gets_one_status(seed, n_ref, n_data):
    r = np.random.default_rng(seed)
    grid = np.arange(0.0, 400.0, 2.0)
    raw = r.random(grid.size) ** 12
    raw /= raw.sum()
    prof = ImportanceProfile.from_importances(grid, raw)
    refs = [ReferencePeak(float(w)) for w in np.unique(r.integers(0, 400, n_ref))]
    data = r.uniform(0, 400, n_data)
    rep = match_peaks(prof, data, refs)
    ref_rows = [row for row in rep.rows if row.reference_wavenumber is not None]
    assert sorted(row.reference_wavenumber for row in ref_rows) == sorted(p.wavenumber for p in refs)
    for row in rep.rows:
        if row.status in (PeakStatus.MATCHED_IMPORTANT, PeakStatus.PRESENT_IGNORED):
            assert abs(row.shift) <= rep.tolerance
    model_only = [row.model_wavenumber for row in rep.by_status(PeakStatus.MODEL_ONLY_UNIDENTIFIED)]
    assert len(model_only) == len(set(model_only))
    for w, s in rep.model_peaks.items():
        assert s in (PeakStatus.MATCHED_IMPORTANT, PeakStatus.MODEL_ONLY_UNIDENTIFIED)
        assert (w in model_only) == (s is PeakStatus.MODEL_ONLY_UNIDENTIFIED)


def test_report_outputs(tmp_path):
    refs = [ReferencePeak(1650.0, "C-C stretching"), ReferencePeak(614.0, "ring bend")]
    rep = match_peaks(_spiked_profile(), [604.0, 1641.0], refs)
    doc = json.loads(rep.to_json(tmp_path / "m.json").read_text())
    assert doc["tolerance"] == 20.0 and doc["threshold"] == 0.13
    assert {r["status"] for r in doc["rows"]} == {"MatchedImportant", "PresentIgnored"}
    lines = rep.to_table_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "status,wavenumber,assignment,raw_importance,smoothed_importance"
    assert lines[1].startswith("MatchedImportant,1641/1650(9),C-C stretching,0.400,")
    assert lines[2] == "PresentIgnored,604/614(10),ring bend,-,-"


def test_reference_table_round_trip(tmp_path):
    refs = [ReferencePeak(1650.0, "C-C, stretching"), ReferencePeak(614.5, "")]
    back = read_reference_table(write_reference_table(refs, tmp_path / "r.csv"))
    assert back == refs
