import numpy as np
import pytest

from misalign_bench.dataset import (
    CLASS_NAMES,
    ClassTaxonomy,
    ManifestError,
    SafetyLabel,
    critical_present,
    gt_class_set,
    load_manifest,
)
from misalign_bench.pngio import IGNORE, save_label_map, save_rgb


def write_manifest(path, rows, header="image_id,image_path,gt_path,safety_label"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


@pytest.fixture
def dataset_dir(tmp_path):
    img = np.zeros((8, 8, 3), np.uint8)
    gt = np.zeros((8, 8), np.uint8)
    for name in ("a", "b"):
        save_rgb(img, tmp_path / f"{name}.png")
        save_label_map(gt, tmp_path / f"{name}_gt.png")
    return tmp_path


def test_taxonomy_defaults(taxonomy):
    assert taxonomy.names == CLASS_NAMES
    assert {taxonomy.name(c) for c in taxonomy.critical} == {
        "person", "rider", "traffic light", "traffic sign", "bicycle"
    }
    assert taxonomy.class_id("car") == 13


def test_taxonomy_validation():
    with pytest.raises(ValueError, match="19 unique"):
        ClassTaxonomy(names=("road",) * 19)
    with pytest.raises(ValueError, match="critical ids"):
        ClassTaxonomy(critical=frozenset({40}))


def test_taxonomy_from_file(tmp_path):
    p = tmp_path / "tax.json"
    p.write_text('{"critical": ["car", 11]}', encoding="utf-8")
    tax = ClassTaxonomy.from_file(p)
    assert tax.critical == frozenset({13, 11})


def test_gt_class_set_basic():
    m = np.full((4, 4), 13, np.uint8)
    assert gt_class_set(m) == frozenset({13})


def test_gt_class_set_threshold():
    m = np.full((1, 13), 11, np.uint8)
    m[0, :3] = 7
    assert gt_class_set(m, min_pixels=5) == frozenset({11})
    assert gt_class_set(m, min_pixels=1) == frozenset({11, 7})


def test_gt_class_set_all_ignore():
    m = np.full((4, 4), IGNORE, np.uint8)
    assert gt_class_set(m) == frozenset()


def test_gt_class_set_monotone_in_threshold():
    rng = np.random.default_rng(5)
    m = rng.integers(0, 19, (32, 32)).astype(np.uint8)
    previous = gt_class_set(m, 1)
    for t in (2, 5, 20, 60):
        current = gt_class_set(m, t)
        assert current <= previous
        previous = current


def test_gt_class_set_rejects_bad_threshold():
    with pytest.raises(ValueError):
        gt_class_set(np.zeros((2, 2), np.uint8), min_pixels=0)


def test_critical_present(taxonomy):
    gt = frozenset({taxonomy.class_id("road"), taxonomy.class_id("person"),
                    taxonomy.class_id("car")})
    assert critical_present(gt, taxonomy) == frozenset({taxonomy.class_id("person")})
    assert critical_present(frozenset({0, 2}), taxonomy) == frozenset()
    everything = frozenset(range(19))
    assert critical_present(everything, taxonomy) == taxonomy.critical


def test_load_manifest_happy_path(dataset_dir):
    write_manifest(dataset_dir / "m.csv", [
        "a,a.png,a_gt.png,safe",
        "b,b.png,b_gt.png,UNSAFE",
    ])
    entries = load_manifest(dataset_dir / "m.csv")
    assert [e.image_id for e in entries] == ["a", "b"]
    assert entries[0].safety_label is SafetyLabel.SAFE
    assert entries[1].safety_label is SafetyLabel.UNSAFE
    assert entries[0].image_path.is_file()


def test_load_manifest_is_idempotent(dataset_dir):
    write_manifest(dataset_dir / "m.csv", ["a,a.png,a_gt.png,safe", "b,b.png,b_gt.png,unsafe"])
    first = load_manifest(dataset_dir / "m.csv")
    second = load_manifest(dataset_dir / "m.csv")
    assert first == second


def test_load_manifest_bad_label_names_row(dataset_dir):
    write_manifest(dataset_dir / "m.csv", ["a,a.png,a_gt.png,maybe"])
    with pytest.raises(ManifestError, match=r"m\.csv:2.*maybe"):
        load_manifest(dataset_dir / "m.csv")


def test_load_manifest_duplicate_id(dataset_dir):
    write_manifest(dataset_dir / "m.csv", [
        "a,a.png,a_gt.png,safe",
        "a,b.png,b_gt.png,unsafe",
    ])
    with pytest.raises(ManifestError, match="duplicate image_id 'a'"):
        load_manifest(dataset_dir / "m.csv")


def test_load_manifest_missing_file_named(dataset_dir):
    write_manifest(dataset_dir / "m.csv", ["a,missing.png,a_gt.png,safe"])
    with pytest.raises(ManifestError, match="image_path does not exist"):
        load_manifest(dataset_dir / "m.csv")
    entries = load_manifest(dataset_dir / "m.csv", check_files=False)
    assert len(entries) == 1


def test_load_manifest_bad_header(dataset_dir):
    write_manifest(dataset_dir / "m.csv", ["a,a.png,safe"], header="image_id,image_path,safety_label")
    with pytest.raises(ManifestError, match="expected header"):
        load_manifest(dataset_dir / "m.csv")


def test_load_manifest_short_row(dataset_dir):
    write_manifest(dataset_dir / "m.csv", ["a,a.png,a_gt.png"])
    with pytest.raises(ManifestError, match="m.csv:2"):
        load_manifest(dataset_dir / "m.csv")


def test_load_manifest_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "nope.csv")
