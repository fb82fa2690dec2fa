import json
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difpath import data
from difpath.errors import ExtractionError, FormatError, MissingFileError, ParameterError


@pytest.mark.parametrize("size,fov", [(64, 112), (96, 168), (128, 224), (160, 280), (192, 336),
                                      (224, 392)])
def test_fov_table(size, fov):
    assert data.fov_of(size, 1.75) == fov


def test_fov_identity_and_errors():
    assert data.fov_of(77, 1) == 77
    for bad in [(0, 1.0), (10, -1.0), (float("nan"), 1.0)]:
        with pytest.raises(ParameterError):
            data.fov_of(*bad)


def test_pixel_extent():
    assert data.pixel_extent_of(224, 0.875) == (256, 0.0)
    n, rem = data.pixel_extent_of(100, 0.875)
    assert n == 114 and rem == pytest.approx(100 / 0.875 - 114)


@given(st.integers(1, 1024), st.floats(0.1, 10))
@settings(max_examples=50, deadline=None)
def test_patchspec_identity(size, mpp):
    for spec in (data.PatchSpec.from_size_mpp(size, mpp), data.PatchSpec.from_fov(size * mpp, size)):
        assert abs(spec.fov_microns - spec.patch_size_px * spec.resolution_mpp) <= 1e-9 * spec.fov_microns


def test_patchspec_rejects_inconsistent():
    with pytest.raises(ParameterError):
        data.PatchSpec(100.0, 64, 1.75)


@pytest.fixture(scope="module")
def small_slides():
    return [data.generate_slide(k, 7, extent=256) for k in range(5)]


def test_slide_determinism(small_slides):
    again = data.generate_slide(2, 7, extent=256)
    assert np.array_equal(again.raster, small_slides[2].raster)
    assert again.raster.dtype == np.uint8 and again.raster.shape == (256, 256, 3)


def test_classes_differ(small_slides):
    tex = [s.texture for s in small_slides]
    assert len({(t.density, t.background) for t in tex}) == 5
    assert not np.array_equal(small_slides[0].raster, small_slides[1].raster)


def test_invalid_class():
    with pytest.raises(ParameterError):
        data.generate_slide(5, 0)


@pytest.mark.parametrize("k", range(5))
def test_mean_color_oracle(k):
    s = data.generate_slide(k, 11, extent=1024)
    got = s.raster.reshape(-1, 3).mean(axis=0) / 255
    assert np.abs(got - data.expected_mean_color(s.texture)).max() < 0.02


def test_resize_matrix_rows_sum_to_one():
    for a, b in [(256, 32), (32, 48), (10, 10), (7, 3)]:
        m = data.resize_matrix(a, b)
        assert m.shape == (b, a) and np.allclose(m.sum(axis=1), 1)


def test_resize_constant_and_identity():
    x = np.full((2, 20, 20, 3), 0.3)
    assert np.allclose(data.resize(x, 7), 0.3)
    y = np.random.default_rng(0).uniform(-1, 1, (5, 5, 3))
    assert np.array_equal(data.resize(y, 5), y)


def test_extract_counts_and_crop(small_slides):
    s = small_slides[3]
    spec = data.PatchSpec.from_fov(56.0, 16)   # 56 / 0.875 = 64 px crop
    b = data.extract_patches(s, spec)
    assert b.crop_px == 64
    assert len(b.images) + b.dropped == (256 // 64) ** 2
    assert b.images.shape[1:] == (16, 16, 3)
    half = data.extract_patches(s, spec, stride=32)
    assert len(half.images) + half.dropped == ((256 - 64) // 32 + 1) ** 2


def test_fov_224_and_336_crops():
    s = data.generate_slide(0, 1, extent=400)
    c224 = data.extract_patches(s, data.PatchSpec.from_fov(224, 128)).crop_px
    c336 = data.extract_patches(s, data.PatchSpec.from_fov(336, 128)).crop_px
    assert c224 == 256 and c336 == 384 and c336 == 1.5 * c224


def test_extract_errors(small_slides):
    with pytest.raises(ExtractionError):
        data.extract_patches(small_slides[0], data.PatchSpec.from_fov(336, 32))
    fine = data.SyntheticSlide(0, 0, 2.0, small_slides[0].raster)
    with pytest.raises(ExtractionError):
        data.extract_patches(fine, data.PatchSpec.from_fov(32, 32))


def test_background_patches_dropped():
    flat = data.SyntheticSlide(0, 0, 0.875, np.full((128, 128, 3), 200, np.uint8))
    b = data.extract_patches(flat, data.PatchSpec.from_fov(56, 16))
    assert len(b.images) == 0 and b.dropped == 4


# -- PPM ---------------------------------------------------------------------

@pytest.mark.parametrize("v", [-1.0, 1.0])
def test_ppm_black_white(tmp_path, v):
    x = np.full((3, 5, 3), v)
    data.save_ppm(tmp_path / "a.ppm", x)
    assert np.array_equal(data.load_ppm(tmp_path / "a.ppm"), x)


def test_ppm_random_error_bound(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, (17, 9, 3))
    data.save_ppm(tmp_path / "r.ppm", x)
    y = data.load_ppm(tmp_path / "r.ppm")
    # half an 8-bit step, in [0, 1] units
    assert np.abs((y - x) / 2).max() <= 0.5 / 255 + 1e-12


def test_ppm_header_with_comment():
    buf = b"P6\n# hello\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255])
    img = data.decode_ppm(buf, raw=True)
    assert img.shape == (1, 2, 3) and img[0, 1, 0] == 255


@pytest.mark.parametrize("buf,offset", [(b"P5\n1 1\n255\n\x00", 0),
                                        (b"P6\n1 1\n255\n\x00", 12),
                                        (b"P6\nx 1\n255\n", 3)])
def test_ppm_malformed(buf, offset):
    with pytest.raises(FormatError) as e:
        data.decode_ppm(buf)
    assert e.value.offset == offset
    assert e.value.exit_code == 20


def test_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        data.load_ppm(tmp_path / "nope.ppm")


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_bitwise(tmp_path):
    g = np.random.default_rng(2)
    t = {"a": g.standard_normal((3, 4)), "b": g.standard_normal(5).astype(np.float32),
         "c": np.arange(7, dtype=np.int64), "nan": np.array([np.nan, -0.0, np.inf]),
         "u8": np.arange(6, dtype=np.uint8).reshape(2, 3), "scalar": np.array(2.5)}
    ck = data.Checkpoint(t, {"component": "test", "T": 1000})
    data.save_checkpoint(tmp_path / "c.difc", ck)
    back = data.load_checkpoint(tmp_path / "c.difc")
    assert back.metadata == ck.metadata
    for k, v in t.items():
        assert back.tensors[k].dtype == v.dtype and back.tensors[k].tobytes() == v.tobytes()
        assert back.tensors[k].shape == v.shape


def test_checkpoint_empty():
    back = data.decode_checkpoint(data.encode_checkpoint(data.Checkpoint({}, {})))
    assert back.tensors == {} and back.metadata == {}


def test_checkpoint_errors():
    good = data.encode_checkpoint(data.Checkpoint({"w": np.ones(4)}, {"k": 1}))
    with pytest.raises(FormatError) as e:
        data.decode_checkpoint(b"XXXX" + good[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        data.decode_checkpoint(good[:-3])
    assert "payload" in str(e.value) and e.value.offset is not None
    with pytest.raises(FormatError):
        data.decode_checkpoint(good + b"\x00")
    bad_version = good[:4] + b"\x09\x00" + good[6:]
    with pytest.raises(FormatError) as e:
        data.decode_checkpoint(bad_version)
    assert e.value.offset == 4


# -- dataset directories -------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    g = np.random.default_rng(3)
    x = g.uniform(-1, 1, (7, 8, 8, 3))
    y = np.array([0, 2, 2, 1, 0, 2, 1])
    man = data.dataset_manifest(3, 0.875, 224, 8, 7, 0)
    data.save_dataset(tmp_path, x, y, man)
    assert (tmp_path / "class_2" / "patch_2.ppm").exists()
    back = data.load_dataset(tmp_path)
    order = np.argsort(y, kind="stable")
    assert np.array_equal(back.labels, y[order])
    assert np.abs(back.images - x[order]).max() <= 1 / 255 + 1e-12
    assert json.loads((tmp_path / "manifest.json").read_text())["count"] == 7


def test_split_by_slide():
    assert data.split_slides(5) == ([0, 1, 2, 3], [4])
    assert data.split_slides(2) == ([0], [1])
    assert data.split_slides(1) == ([0], [])


def test_build_dataset_small():
    preset = data.DatasetPreset("tiny", 56.0, patch_px=8, slides_per_class=2, extent=128)
    ds = data.build_dataset(preset, classes=2)
    assert set(ds["train"].labels.tolist()) == {0, 1}
    assert ds["train"].manifest["split"] == "train"
    again = data.build_dataset(preset, classes=2)
    assert np.array_equal(again["test"].images, ds["test"].images)
