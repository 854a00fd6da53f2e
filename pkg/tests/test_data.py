import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from udgan.data import (DatasetManifest, Entry, ManifestDataset, denormalize, load_manifest,
                        normalize, parse_entry, read_image, summarize_dataset)
from udgan.errors import ConfigError, DataError
from udgan.synthetic import SyntheticSpec, make_synthetic


@pytest.mark.parametrize("name, expected", [
    ("0007_c3s1_000151_00.jpg", (7, 3)),
    ("-1_c1s1_000000_00.jpg", (-1, 1)),
    ("1041_c15s3_123_00.png", (1041, 15)),
])
def test_parse_entry_default_pattern(name, expected):
    assert parse_entry(name) == expected


def test_parse_entry_mismatch_names_file():
    with pytest.raises(DataError, match="img_42.png"):
        parse_entry("img_42.png")


def test_parse_entry_custom_pattern_and_group_check():
    assert parse_entry("dir/p12-cam4.jpg", r"p(\d+)-cam(\d+)") == (12, 4)
    with pytest.raises(ValueError):
        parse_entry("p12.jpg", r"p(\d+)")


def test_synthetic_counts_and_round_trip(tmp_path):
    ds = make_synthetic(SyntheticSpec(16, 8, seed=7), tmp_path)
    assert len(ds.images) == 128
    for r in ds.images:
        assert parse_entry(r.filename) == (r.identity, r.camera)
    m = load_manifest(tmp_path)
    assert len(m.entries) == 128
    assert m.num_classes == 16
    assert summarize_dataset(m)["images"] == 128


def test_synthetic_small_spec():
    ds = make_synthetic(SyntheticSpec(2, 2))
    assert len(ds.images) == 4
    assert ds.manifest.num_classes == 2


def test_synthetic_is_byte_identical(tmp_path):
    make_synthetic(SyntheticSpec(16, 8, seed=7), tmp_path / "a")
    make_synthetic(SyntheticSpec(16, 8, seed=7), tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.*"))
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.*"))
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synthetic_identity_pixels_shared_content_varies():
    ds = make_synthetic(SyntheticSpec(3, 6, seed=3))
    same = [r for r in ds.images if r.identity == 1]
    bodies = []
    for r in same:
        y0, y1, x0, x1 = r.body_box
        bodies.append(r.pixels[y0:y1, x0:x1])
    for b in bodies[1:]:
        np.testing.assert_array_equal(b, bodies[0])
    assert len({(r.offset, r.background) for r in same}) > 1
    other = next(r for r in ds.images if r.identity == 2)
    assert other.top_color != same[0].top_color or other.bottom_color != same[0].bottom_color


def test_synthetic_rejects_bad_specs():
    with pytest.raises(ConfigError):
        make_synthetic(SyntheticSpec(1, 4))
    with pytest.raises(ConfigError):
        make_synthetic(SyntheticSpec(2, 4, image_size=(40, 16)), generator_blocks=4)


def test_manifest_invariants(tmp_path):
    make_synthetic(SyntheticSpec(5, 6, seed=0, num_cameras=3), tmp_path)
    m = load_manifest(tmp_path)
    train_ids = sorted({e.identity for e in m.split("train")})
    assert sorted(m.id_index) == train_ids
    assert sorted(m.id_index.values()) == list(range(len(train_ids)))
    assert all(1 <= e.camera <= m.num_cameras for e in m.entries)


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "missing")
    for split in ("train", "query", "gallery"):
        (tmp_path / split).mkdir()
    with pytest.raises(DataError, match="no images"):
        load_manifest(tmp_path)
    with pytest.raises(DataError, match="duplicate"):
        DatasetManifest.from_entries([Entry("a_c1.png", 1, 1, "train"),
                                      Entry("a_c1.png", 1, 1, "train")])


def test_manifest_csv_round_trip(tmp_path):
    ds = make_synthetic(SyntheticSpec(4, 5, seed=2), tmp_path)
    again = DatasetManifest.from_csv(tmp_path / "manifest.csv")
    assert again.entries == ds.manifest.entries
    assert (tmp_path / "manifest.csv").read_text().splitlines()[0] == "path,identity,camera,split"


def test_distractors_kept_in_gallery_dropped_from_query(tmp_path):
    make_synthetic(SyntheticSpec(3, 4, seed=0), tmp_path)
    img = next((tmp_path / "gallery").iterdir())
    (tmp_path / "gallery" / "-1_c2s1_999999_00.png").write_bytes(img.read_bytes())
    (tmp_path / "query" / "-1_c1s1_999998_00.png").write_bytes(img.read_bytes())
    m = load_manifest(tmp_path)
    assert any(e.identity == -1 for e in m.split("gallery"))
    assert all(e.identity >= 0 for e in m.split("query"))
    assert -1 not in m.id_index
    assert summarize_dataset(m)["distractors"] == 1


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, (5, 4, 3)),
       st.tuples(*[st.floats(0.1, 0.9)] * 3), st.tuples(*[st.floats(0.1, 2.0)] * 3))
def test_normalize_is_invertible(pixels, mean, std):
    back = denormalize(normalize(pixels, mean, std), mean, std)
    assert np.abs(back.astype(int) - pixels.astype(int)).max() <= 1


def test_read_image_resizes_bilinear(tmp_path):
    ds = make_synthetic(SyntheticSpec(2, 2, image_size=(32, 16)), tmp_path)
    path = tmp_path / ds.manifest.entries[0].path
    assert read_image(path, (32, 16)).shape == (32, 16, 3)
    assert read_image(path, (16, 8)).shape == (16, 8, 3)


def test_manifest_dataset_items(tmp_path):
    ds = make_synthetic(SyntheticSpec(3, 4, seed=0), tmp_path)
    train = ManifestDataset(ds.manifest, "train", (48, 16))
    x, label, cam, idx = train[0]
    assert x.shape == (3, 48, 16) and x.dtype == torch.float32
    assert 0 <= label < 3 and cam >= 1 and idx == 0
    images, labels, ids, cams = train.tensors()
    assert images.shape == (6, 3, 48, 16)
    assert torch.isfinite(images).all()
    assert images.min() >= -1 and images.max() <= 1
