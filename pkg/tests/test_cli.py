import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from chipqa import cli, niqe, pipeline, videoio
from conftest import natural_clip


def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def video(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "clip.y4m"
    videoio.write_y4m(p, natural_clip("chelsea", n_frames=7, size=(64, 80)))
    return p


@pytest.fixture(scope="module")
def pristine_file(tmp_path_factory, small_pristine):
    p = tmp_path_factory.mktemp("cli") / "m.niqm"
    niqe.save_pristine(small_pristine, p)
    return p


@pytest.fixture
def feature_files(tmp_path):
    rng = np.random.default_rng(3)
    videos, rows = [], []
    for i in range(24):
        x = rng.normal(size=109)
        vid = f"v{i}"
        videos.append(pipeline.VideoFeatures([pipeline.FeatureVector(x, 4)], vid, f"c{i // 3}"))
        rows.append((vid, 50 + 10 * x[0] + 3 * x[1]))
    feats = tmp_path / "feats.csv"
    pipeline.write_features_csv(feats, videos)
    mos = tmp_path / "mos.csv"
    with mos.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "mos"])
        w.writerows(rows)
    return feats, mos


GRID = ["--C", "10", "100", "--gamma", "0.01", "--epsilon", "0.5", "--folds", "3"]


def test_extract_writes_109_columns(tmp_path, video, pristine_file):
    out = tmp_path / "f.csv"
    assert cli.main(["extract", "--in", str(video), "--pristine", str(pristine_file), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][:109] == [f"f{i}" for i in range(1, 110)]
    assert rows[0][109:] == ["video_id", "content_id"]
    assert len(rows) == 2 and len(rows[1]) == 111
    side = json.loads((tmp_path / "f.csv.json").read_text())
    assert side["layout_version"] == pipeline.LAYOUT_VERSION
    assert side["options"]["pristine"] == str(pristine_file)


def test_extract_per_instant_and_stride(tmp_path, video):
    out = tmp_path / "f.csv"
    assert cli.main(["extract", "--in", str(video), "--out", str(out), "--per-instant"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 3
    assert cli.main(["extract", "--in", str(video), "--out", str(out), "--per-instant", "--stride", "2"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 2


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["extract", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_unequal_geometry_is_usage_error(tmp_path, video, capsys):
    assert cli.main(["extract", "--in", str(video), "--out", str(tmp_path / "f.csv"), "--R", "7"]) == 1
    assert "--allow-unequal" in capsys.readouterr().err


def test_missing_input_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.y4m"
    assert cli.main(["extract", "--in", str(missing), "--out", str(tmp_path / "f.csv")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_corrupt_model_is_data_error(tmp_path, feature_files, capsys):
    bad = tmp_path / "bad.cqam"
    bad.write_bytes(b"CQAM" + bytes(10))
    assert cli.main(["predict", "--model", str(bad), "--features", str(feature_files[0]),
                     "--out", str(tmp_path / "p.csv")]) == 2
    assert "CorruptModel" in capsys.readouterr().err


def test_extract_reproducible_and_jobs_identical(tmp_path, video, pristine_file):
    out = tmp_path / "f.csv"
    base = ["extract", "--in", str(video), "--pristine", str(pristine_file), "--out", str(out)]
    hashes = []
    for extra in ([], [], ["--jobs", "2"]):
        assert cli.main(base + extra) == 0
        hashes.append((_sha(out), _sha(str(out) + ".json")))
    assert hashes[0] == hashes[1]
    # worker count is not an output-affecting option, so the sidecar matches too
    assert hashes[2] == hashes[0]


def test_config_precedence(tmp_path, video):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"stride": 3, "extract": {"per_instant": True}}))
    out = tmp_path / "f.csv"
    assert cli.main(["extract", "--in", str(video), "--out", str(out), "--config", str(cfg)]) == 0
    # 7 frames: instants 4 and (stride 3) nothing else
    assert len(out.read_text().splitlines()) == 1 + 1
    assert cli.main(["extract", "--in", str(video), "--out", str(out), "--config", str(cfg), "--stride", "1"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 3
    opts = json.loads((tmp_path / "f.csv.json").read_text())["options"]
    assert opts["stride"] == 1 and opts["per_instant"] is True and opts["t_prime"] == 5


def test_bad_config_is_usage_error(tmp_path, video):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert cli.main(["extract", "--in", str(video), "--out", str(tmp_path / "f.csv"), "--config", str(cfg)]) == 1


def test_jobs_env_var(monkeypatch):
    args = cli.build_parser().parse_args(["predict", "--model", "m", "--features", "f", "--out", "o"])
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._jobs(cli._Opts(args, {})) == 3
    args.jobs = 2
    assert cli._jobs(cli._Opts(args, {})) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    args.jobs = None
    with pytest.raises(cli.UsageError):
        cli._jobs(cli._Opts(args, {}))


def test_train_predict_evaluate(tmp_path, feature_files):
    feats, mos = feature_files
    model_path = tmp_path / "m.cqam"
    assert cli.main(["train", "--features", str(feats), "--mos", str(mos), "--out", str(model_path)] + GRID) == 0
    prov = json.loads((tmp_path / "m.cqam.json").read_text())
    assert prov["command"] == "train" and prov["options"]["C"] == [10.0, 100.0]
    pred = tmp_path / "p.csv"
    assert cli.main(["predict", "--model", str(model_path), "--features", str(feats), "--out", str(pred)]) == 0
    rows = list(csv.DictReader(pred.open()))
    assert [r["video_id"] for r in rows] == [f"v{i}" for i in range(24)]
    rep = tmp_path / "r.json"
    args = ["evaluate", "--features", str(feats), "--mos", str(mos), "--splits", "3", "--seed", "7",
            "--out", str(rep)] + GRID
    assert cli.main(args) == 0
    first = _sha(rep)
    doc = json.loads(rep.read_text())
    assert doc["n_splits"] == 3 and doc["options"]["seed"] == 7
    assert (tmp_path / "r.csv").exists()
    assert cli.main(args) == 0 and _sha(rep) == first


def test_missing_mos_rows_is_data_error(tmp_path, feature_files):
    feats, _ = feature_files
    mos = tmp_path / "short.csv"
    mos.write_text("video_id,mos\nv0,50\n")
    assert cli.main(["train", "--features", str(feats), "--mos", str(mos), "--out", str(tmp_path / "m")]) == 2


def test_distort_and_histdump(tmp_path, video):
    out = tmp_path / "d.y4m"
    assert cli.main(["distort", "--in", str(video), "--kind", "blur", "--severity", "3",
                     "--seed", "1", "--out", str(out)]) == 0
    first = _sha(out)
    assert cli.main(["distort", "--in", str(video), "--kind", "blur", "--severity", "3",
                     "--seed", "1", "--out", str(out)]) == 0
    assert _sha(out) == first
    assert videoio.open_source(out).frame_count == 7
    assert cli.main(["distort", "--in", str(video), "--kind", "blur", "--severity", "0", "--out", str(out)]) == 1

    dumps = {}
    for label, src in (("pristine", video), ("blur", out)):
        dumps[label] = tmp_path / f"{label}.cqfd"
        assert cli.main(["extract", "--in", str(src), "--out", str(tmp_path / f"{label}.csv"),
                         "--dump-chips", str(dumps[label])]) == 0
    hist = tmp_path / "h.csv"
    assert cli.main(["histdump", "--dump", f"pristine={dumps['pristine']}", f"blur={dumps['blur']}",
                     "--bins", "41", "--out", str(hist)]) == 0
    rows = list(csv.reader(hist.open()))
    assert rows[0] == ["bin_centre", "pristine", "blur"] and len(rows) == 42
    dens = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.allclose(dens.sum(axis=0) * 8 / 41, 1.0, atol=1e-6)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "chipqa", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "0.1.0"
    r = subprocess.run([sys.executable, "-m", "chipqa"], capture_output=True, text=True)
    assert r.returncode == 1
