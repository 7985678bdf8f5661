from pathlib import Path

import numpy as np
import pytest


@pytest.mark.unit
def test_from_labels_assigns_ids_by_first_appearance() -> None:
    from src.data_processing.dataset import Dataset

    data = Dataset.from_labels(np.arange(8.0).reshape(4, 2), ["cat", "dog", "cat", "eel"])

    assert data.class_names == ("cat", "dog", "eel")
    np.testing.assert_array_equal(data.labels, [0, 1, 0, 2])
    assert data.raw_labels == ["cat", "dog", "cat", "eel"]
    assert (data.n, data.d, data.num_classes) == (4, 2, 3)


@pytest.mark.unit
@pytest.mark.parametrize(
    ("features", "labels", "names", "message"),
    [
        (np.zeros((0, 2)), [], (), "non-empty"),
        (np.zeros((2, 2)), [0], ("a",), "labels for"),
        (np.array([[0.0, np.nan]]), [0], ("a",), "non-finite"),
        (np.zeros((2, 2)), [0, 2], ("a", "b"), "must lie in"),
        (np.zeros((2, 2)), [0, 0], ("a", "b"), "no samples"),
    ],
)
def test_dataset_validation(
    features: np.ndarray, labels: list[int], names: tuple[str, ...], message: str
) -> None:
    from src.common.exceptions import ValidationError
    from src.data_processing.dataset import Dataset

    with pytest.raises(ValidationError, match=message):
        Dataset(features=features, labels=np.asarray(labels, dtype=int), class_names=names)


@pytest.mark.unit
def test_dataset_arrays_are_read_only() -> None:
    from src.data_processing.dataset import Dataset

    data = Dataset.from_labels(np.ones((2, 2)), ["a", "b"])

    with pytest.raises(ValueError):
        data.features[0, 0] = 5.0


@pytest.mark.unit
def test_subset_drops_empty_classes_and_renumbers() -> None:
    from src.data_processing.dataset import Dataset

    data = Dataset.from_labels(np.arange(10.0).reshape(5, 2), ["a", "b", "c", "b", "a"])
    sub = data.subset(np.array([False, True, True, True, False]))

    assert sub.class_names == ("b", "c")
    np.testing.assert_array_equal(sub.labels, [0, 1, 0])


@pytest.mark.unit
def test_select_classes_and_unknown_class() -> None:
    from src.common.exceptions import ValidationError
    from src.data_processing.dataset import Dataset

    data = Dataset.from_labels(np.arange(8.0).reshape(4, 2), ["a", "b", "c", "a"])

    assert data.select_classes(["a"]).n == 2
    with pytest.raises(ValidationError, match="Unknown class"):
        data.class_id("zebra")


@pytest.mark.unit
def test_concat_matches_classes_by_name() -> None:
    from src.data_processing.dataset import Dataset

    left = Dataset.from_labels(np.zeros((2, 2)), ["a", "b"])
    right = Dataset.from_labels(np.ones((3, 2)), ["c", "a", "c"])
    merged = left.concat(right)

    assert merged.class_names == ("a", "b", "c")
    np.testing.assert_array_equal(merged.labels, [0, 1, 2, 0, 2])


@pytest.mark.unit
def test_concat_rejects_width_mismatch() -> None:
    from src.common.exceptions import ValidationError
    from src.data_processing.dataset import Dataset

    left = Dataset.from_labels(np.zeros((2, 2)), ["a", "b"])
    right = Dataset.from_labels(np.zeros((2, 3)), ["a", "b"])

    with pytest.raises(ValidationError, match="width"):
        left.concat(right)


@pytest.mark.unit
def test_preprocessor_centers_and_normalizes() -> None:
    from src.data_processing.dataset import Dataset, apply_preprocessor, fit_preprocessor

    features = np.array([[1.0, 1.0], [3.0, 1.0], [2.0, 4.0], [2.0, 2.0]])
    data = Dataset.from_labels(features, ["a", "a", "b", "b"])
    stats = fit_preprocessor(data)
    out = apply_preprocessor(stats, features)

    np.testing.assert_allclose(stats.mean, [2.0, 2.0])
    np.testing.assert_allclose(np.linalg.norm(out[:3], axis=1), 1.0)
    np.testing.assert_array_equal(out[3], [0.0, 0.0])
    np.testing.assert_allclose(out[0], [-1.0, -1.0] / np.sqrt(2.0))


@pytest.mark.unit
def test_preprocessor_single_vector_and_width_check() -> None:
    from src.common.exceptions import ValidationError
    from src.data_processing.dataset import PreprocessStats, apply_preprocessor

    stats = PreprocessStats(mean=np.array([1.0, 0.0]))

    np.testing.assert_allclose(apply_preprocessor(stats, np.array([1.0, 3.0])), [0.0, 1.0])
    with pytest.raises(ValidationError, match="does not match"):
        apply_preprocessor(stats, np.zeros((2, 3)))


@pytest.mark.unit
def test_generate_blobs_is_deterministic() -> None:
    from src.data_processing.dataset import generate_blobs

    first = generate_blobs(3, 5, 4, 0.1, seed=11)
    second = generate_blobs(3, 5, 4, 0.1, seed=11)

    assert first.n == 15
    assert first.class_names == ("0", "1", "2")
    np.testing.assert_array_equal(first.features, second.features)
    np.testing.assert_array_equal(first.labels, np.repeat([0, 1, 2], 5))


@pytest.mark.unit
def test_generate_blobs_rejects_bad_arguments() -> None:
    from src.common.exceptions import ValidationError
    from src.data_processing.dataset import generate_blobs

    with pytest.raises(ValidationError):
        generate_blobs(0, 5, 2, 0.1, seed=0)
    with pytest.raises(ValidationError, match="spread"):
        generate_blobs(2, 5, 2, 0.0, seed=0)


@pytest.mark.unit
def test_csv_round_trip(tmp_path: Path) -> None:
    from src.data_processing.dataset import generate_blobs, load_dataset, save_csv

    data = generate_blobs(2, 4, 3, 0.2, seed=3)
    path = tmp_path / "blobs.csv"
    save_csv(data, path)
    loaded = load_dataset(path)

    assert loaded.class_names == data.class_names
    np.testing.assert_array_equal(loaded.labels, data.labels)
    np.testing.assert_array_equal(loaded.features, data.features)


@pytest.mark.unit
def test_binary_round_trip(tmp_path: Path) -> None:
    from src.data_processing.dataset import generate_blobs, load_dataset, save_dataset

    data = generate_blobs(3, 4, 2, 0.2, seed=3)
    path = tmp_path / "blobs.bin"
    save_dataset(data, path)
    loaded = load_dataset(path)

    assert loaded.class_names == data.class_names
    np.testing.assert_array_equal(loaded.features, data.features)


@pytest.mark.unit
def test_binary_save_requires_integer_labels(tmp_path: Path) -> None:
    from src.common.exceptions import DatasetError
    from src.data_processing.dataset import Dataset, save_dataset

    data = Dataset.from_labels(np.zeros((2, 2)), ["cat", "dog"])

    with pytest.raises(DatasetError, match="integer"):
        save_dataset(data, tmp_path / "named.bin")


@pytest.mark.unit
@pytest.mark.parametrize(
    ("content", "message"),
    [
        ("a,1.0,2.0\nb,3.0\n", "line 2: expected 2 features"),
        ("a,1.0,x\n", "line 1: non-numeric"),
        ("a,1.0,inf\n", "line 1: non-finite"),
        ("a\n", "line 1: expected label"),
        ("\n\n", "empty"),
    ],
)
def test_csv_errors_name_the_line(tmp_path: Path, content: str, message: str) -> None:
    from src.common.exceptions import DatasetError
    from src.data_processing.dataset import load_dataset

    path = tmp_path / "bad.csv"
    path.write_text(content)

    with pytest.raises(DatasetError, match=message):
        load_dataset(path)


@pytest.mark.unit
def test_binary_errors(tmp_path: Path) -> None:
    from src.common.exceptions import DatasetError
    from src.data_processing.dataset import generate_blobs, load_dataset, save_dataset

    good = tmp_path / "good.bin"
    save_dataset(generate_blobs(2, 3, 2, 0.1, seed=0), good)
    payload = good.read_bytes()

    truncated = tmp_path / "truncated.bin"
    truncated.write_bytes(payload[:-8])
    with pytest.raises(DatasetError, match="does not match header"):
        load_dataset(truncated)

    wrong_magic = tmp_path / "magic.bin"
    wrong_magic.write_bytes(b"NOPE" + payload[4:])
    with pytest.raises(DatasetError, match="not a binary dataset"):
        load_dataset(wrong_magic)

    with pytest.raises(DatasetError, match="not found"):
        load_dataset(tmp_path / "missing.bin")
