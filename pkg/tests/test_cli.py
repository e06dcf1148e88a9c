import json

import numpy as np
import pytest

from sersml.cli import main
from sersml.dataset import read_dataset


def _report_bytes(run):
    # wall-clock fit times are kept out of the report files proper
    return {p.name: p.read_bytes() for p in run.iterdir() if p.name != "timings.csv"}


def _only(path, pattern):
    found = sorted(path.glob(pattern))
    assert len(found) == 1, found
    return found[0]


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(["synth", "--n-per-class", "6", "--spacing", "14", "--baseline", "--tilt", "0.05",
                 "--seed", "1", "--output-dir", str(out)])
    assert code == 0
    return _only(out, "synth-*/dataset.csv")


def test_synth_writes_dataset(synth_csv):
    ds = read_dataset(synth_csv)
    assert ds.n_classes == 5 and ds.n_samples == 30


def test_unknown_flag_is_usage_error(capsys, tmp_path):
    assert main(["cv", "x.csv", "--bogus", "--output-dir", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err
    assert main([]) == 1


def test_missing_input_is_usage_error(tmp_path):
    assert main(["transform", str(tmp_path / "nope.csv"), "--output-dir", str(tmp_path)]) == 1


def test_fold_error_is_data_error(synth_csv, tmp_path, capsys):
    assert main(["cv", str(synth_csv), "--model", "knn", "--k", "7", "--output-dir", str(tmp_path)]) == 2
    assert "k <= 6" in capsys.readouterr().err


def test_empty_manifest_is_data_error(tmp_path, capsys):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"chemical": "none", "spacing": 2.0, "window": [600, 1700], "files": []}))
    assert main(["ingest", str(manifest), "--output-dir", str(tmp_path / "o")]) == 2
    assert "no files" in capsys.readouterr().err


def test_env_var_sets_output_dir(synth_csv, tmp_path, monkeypatch):
    monkeypatch.setenv("SERSML_OUTPUT_DIR", str(tmp_path))
    assert main(["transform", str(synth_csv), "--transform", "fourier"]) == 0
    header = _only(tmp_path, "transform-*/features.csv").read_text().splitlines()[0]
    assert header.startswith("label,")


def test_cv_is_repeatable(synth_csv, tmp_path):
    args = ["cv", str(synth_csv), "--model", "rfc", "--param", "n_estimators=5", "--k", "3", "--seed", "7",
            "--output-dir", str(tmp_path)]
    assert main(args) == 0
    run = _only(tmp_path, "cv-*")
    first = _report_bytes(run)
    assert main(args + ["--threads", "4"]) == 0
    assert _only(tmp_path, "cv-*") == run
    assert _report_bytes(run) == first
    assert set(first) >= {"cv_report.json", "cv_table.csv", "confusion.csv", "config.json"}
    table = (run / "cv_table.csv").read_text().splitlines()
    assert table[0] == "dataset,transform,model,mean,std"


def test_preset_cv_row(synth_csv, tmp_path):
    assert main(["cv", str(synth_csv), "--model", "knn", "--preset", "r6g", "--k", "3",
                 "--output-dir", str(tmp_path)]) == 0
    row = _only(tmp_path, "cv-*/cv_table.csv").read_text().splitlines()[1]
    assert row.startswith("synthetic,hadamard,knn,")


def test_augment_counts(synth_csv, tmp_path):
    assert main(["augment", str(synth_csv), "--multiplier", "3", "--seed", "2", "--output-dir", str(tmp_path)]) == 0
    assert read_dataset(_only(tmp_path, "augment-*/augmented.csv")).n_samples == 90


def test_search_writes_leaderboard(synth_csv, tmp_path):
    assert main(["search", str(synth_csv), "--model", "knn", "--grid", '{"n_neighbors": [1, 3]}', "--k", "3",
                 "--output-dir", str(tmp_path)]) == 0
    doc = json.loads(_only(tmp_path, "search-*/search.json").read_text())
    assert len(doc["leaderboard"]) == 2


def test_report_rejects_knn(synth_csv, tmp_path):
    assert main(["train", str(synth_csv), "--model", "knn", "--transform", "scaled",
                 "--output-dir", str(tmp_path)]) == 0
    model = _only(tmp_path, "train-*/model.json")
    assert main(["report", str(model), str(synth_csv), "--output-dir", str(tmp_path)]) == 1


def test_forest_report(synth_csv, tmp_path):
    assert main(["train", str(synth_csv), "--model", "rfc", "--param", "n_estimators=50", "--transform", "scaled",
                 "--seed", "3", "--output-dir", str(tmp_path)]) == 0
    model = _only(tmp_path, "train-*/model.json")
    assert main(["report", str(model), str(synth_csv), "--output-dir", str(tmp_path)]) == 0
    run = _only(tmp_path, "report-*")
    match = json.loads((run / "peak_match.json").read_text())
    important = [p["wavenumber"] for p in match["model_peaks"]]
    assert important, "no important model peak"
    # a one-row reference at an important detected peak yields a single matched row
    ref = tmp_path / "ref.csv"
    ref.write_text(f"wavenumber_cm-1,assignment\n{important[0] + 4},test band\n")
    assert main(["report", str(model), str(synth_csv), "--reference", str(ref), "--output-dir",
                 str(tmp_path / "withref")]) == 0
    rows = json.loads(_only(tmp_path / "withref", "report-*/peak_match.json").read_text())["rows"]
    matched = [r for r in rows if r["status"] == "MatchedImportant"]
    assert len(matched) == 1 and matched[0]["reference_wavenumber"] == important[0] + 4
    for name in ("importance_profile.csv", "peak_table.csv", "plot.csv"):
        assert (run / name).exists()


def test_ingest_summary_and_repeatability(tmp_path, capsys):
    wn = np.arange(580.0, 1720.0, 1.5)
    r = np.random.default_rng(4)
    files = []
    for conc, method in ((1e-5, "evaporating_ouzo"), (1e-7, "silver_nanoparticles")):
        for i in range(4):
            name = f"{method}_{conc:g}_{i}.csv"
            iy = 1.0 + r.random(wn.size)
            (tmp_path / name).write_text("\n".join(f"{a!r},{b!r}" for a, b in zip(wn.tolist(), iy.tolist())) + "\n")
            files.append({"path": name, "concentration": conc, "source_method": method})
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"chemical": "r6g", "spacing": 2.0, "window": [600, 1700], "files": files}))
    outs = []
    for _ in range(2):
        assert main(["ingest", str(manifest), "--output-dir", str(tmp_path / "o")]) == 0
        run = _only(tmp_path / "o", "ingest-*")
        outs.append({p.name: p.read_bytes() for p in run.iterdir()})
    assert outs[0] == outs[1]
    assert "r6g: 2 classes, 8 spectra" in capsys.readouterr().out
