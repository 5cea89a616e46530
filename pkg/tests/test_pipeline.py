import json

import numpy as np
import pytest

from chipqa import nvs, pipeline, spatialops, videoio
from chipqa.errors import InsufficientHistory, VideoTooShort
from chipqa.videoio import Frame
from conftest import natural_clip


@pytest.fixture(scope="module")
def clip():
    return natural_clip("astronaut", n_frames=10, size=(96, 128))


@pytest.fixture(scope="module")
def clip_file(tmp_path_factory, clip):
    p = tmp_path_factory.mktemp("v") / "astro.y4m"
    videoio.write_y4m(p, clip)
    return p


def test_layout_constants():
    assert pipeline.N_FEATURES == 36 + 36 + 37
    assert len(pipeline.feature_names()) == 109 and len(pipeline.descriptive_names()) == 109
    assert len(set(pipeline.descriptive_names())) == 109
    assert pipeline.SPATIAL_BLOCK.stop - pipeline.SPATIAL_BLOCK.start == 37


def test_extract_instant_needs_history(clip):
    with pytest.raises(InsufficientHistory):
        pipeline.extract_instant(clip[:4])
    fv = pipeline.extract_instant(clip[:5])
    assert fv.values.shape == (109,) and np.all(np.isfinite(fv.values))
    assert fv.index == 4


def test_push_instant_without_history(clip):
    ex = pipeline.InstantExtractor()
    with pytest.raises(InsufficientHistory):
        ex.push(Frame(clip[0].luma, 4, 8))


def test_non_instant_frames_emit_nothing(clip):
    ex = pipeline.InstantExtractor()
    assert [ex.push(f) for f in clip[:4]] == [None] * 4
    assert ex.push(clip[4]) is not None


def test_instant_counts(clip):
    one = pipeline.extract_frames(clip[:5])
    assert len(one.per_instant) == 1
    assert np.array_equal(one.pooled, one.per_instant[0].values)
    assert len(pipeline.extract_frames(clip).per_instant) == 6
    strided = pipeline.extract_frames(clip, pipeline.ExtractConfig(temporal_stride=2))
    assert [fv.index for fv in strided.per_instant] == [4, 6, 8]
    with pytest.raises(VideoTooShort):
        pipeline.extract_frames(clip[:4])


def test_pooled_is_mean(clip):
    vf = pipeline.extract_frames(clip)
    X = np.stack([fv.values for fv in vf.per_instant])
    assert np.allclose(vf.pooled, X.mean(axis=0), rtol=1e-13, atol=1e-13)


def test_pooled_identical_instants_exact(rng):
    vals = rng.normal(size=109) * 1e3
    vf = pipeline.VideoFeatures([pipeline.FeatureVector(vals.copy(), i) for i in range(7)])
    assert np.array_equal(vf.pooled, vals)


def test_static_noise_pixel_chip_shape(rng):
    # zero flow: chips are horizontal slices of one MSCN field, so the chip GGD
    # follows the locally normalised noise, compared here against the whole field
    f = np.clip(rng.normal(128, 30, (200, 240)), 0, 255)
    fv = pipeline.extract_frames([f] * 5, pipeline.ExtractConfig(flow="zero")).per_instant[0]
    ref = nvs.fit_ggd(spatialops.mscn(f)).alpha
    assert abs(fv.values[0] - ref) <= 0.1 * ref
    assert ref > 2.5


def test_streaming_equals_in_memory(clip, clip_file):
    a = pipeline.extract_video(videoio.open_source(clip_file))
    b = pipeline.extract_frames(clip)
    assert len(a.per_instant) == len(b.per_instant)
    for x, y in zip(a.per_instant, b.per_instant):
        assert np.array_equal(x.values, y.values) and x.index == y.index


def test_memory_bound(clip):
    ex = pipeline.InstantExtractor()
    for f in clip:
        ex.push(f)
        assert all(len(h) <= 5 for h in ex.history.values())
    assert ex.max_history == {1: 5, 2: 5}


def test_jobs_bit_identical(clip_file):
    src = videoio.open_source(clip_file)
    cfg = pipeline.ExtractConfig(niqe_every=2)
    a = pipeline.extract_video(src, cfg, jobs=1)
    b = pipeline.extract_video(src, cfg, jobs=3)
    assert [fv.index for fv in a.per_instant] == [fv.index for fv in b.per_instant]
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.per_instant, b.per_instant))


def test_niqe_every_reuses_block(clip, small_pristine):
    vf = pipeline.extract_frames(clip, pipeline.ExtractConfig(niqe_every=3), small_pristine)
    sp = [fv.values[pipeline.SPATIAL_BLOCK] for fv in vf.per_instant]
    assert np.array_equal(sp[0], sp[1]) and np.array_equal(sp[0], sp[2])
    assert not np.array_equal(sp[0], sp[3])


def test_chip_frame_hook(clip):
    seen = []
    pipeline.extract_frames(clip[:6], on_chip_frame=lambda t, s, d, S: seen.append((t, s, d, S.shape)))
    assert (4, 1, "pixel", (95, 125)) in seen
    assert (5, 2, "gradient", (45, 60)) in seen
    assert len(seen) == 2 * 2 * 2


def test_unequal_geometry_guard():
    with pytest.raises(ValueError):
        pipeline.ExtractConfig(R=7)
    assert pipeline.ExtractConfig(R=7, allow_unequal=True).R == 7


def test_degeneracy_flags_on_black_video():
    vf = pipeline.extract_frames([np.zeros((60, 80))] * 5)
    flags = vf.per_instant[0].flags
    for f in (pipeline.Degeneracy.PIXEL_CHIPS, pipeline.Degeneracy.GRADIENT_CHIPS,
              pipeline.Degeneracy.SPATIAL, pipeline.Degeneracy.NO_PRISTINE):
        assert f in flags
    assert np.all(np.isfinite(vf.pooled))


def test_model_clears_no_pristine_flag(clip, small_pristine):
    fv = pipeline.extract_frames(clip[:5], model=small_pristine).per_instant[0]
    assert pipeline.Degeneracy.NO_PRISTINE not in fv.flags
    assert fv.values[108] > 0


def test_csv_and_sidecar(tmp_path, clip):
    vf = pipeline.extract_frames(clip[:6], video_id="astro", content_id="c1")
    p = tmp_path / "f.csv"
    pipeline.write_features_csv(p, [vf])
    X, vids, cids = pipeline.read_features_csv(p)
    assert X.shape == (1, 109) and vids == ["astro"] and cids == ["c1"]
    assert np.array_equal(X[0], vf.pooled)
    pipeline.write_features_csv(tmp_path / "i.csv", [vf], per_instant=True)
    assert len((tmp_path / "i.csv").read_text().splitlines()) == 1 + 2
    pipeline.write_sidecar(tmp_path / "f.json", [vf], pipeline.ExtractConfig())
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["layout_version"] == pipeline.LAYOUT_VERSION and doc["n_features"] == 109
    assert doc["videos"][0]["n_instants"] == 2
