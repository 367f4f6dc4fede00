"""Image preprocessing, the synthetic generator, and the tensor container."""

import numpy as np
import pytest
from scipy import stats

from weaklearn.data import (
    DimensionMismatchError,
    MalformedHeaderError,
    MissingIdError,
    SynthConfig,
    class_word,
    generate_synthetic,
    load_dataset,
    nearest_prototype_precision,
    preprocess_image,
    read_captions_jsonl,
    read_tensor_container,
    resize_bilinear,
    stable_fraction,
    standardize_image,
    write_captions_jsonl,
    write_tensor_container,
    zipf_probs,
)
from weaklearn.textpipe import Dictionary


def test_standardize_small_square():
    img = np.array([0.0, 0.0, 2.0, 2.0]).reshape(2, 2, 1)
    out = preprocess_image(img, crop=2)
    assert out.shape == (2, 2, 1)
    np.testing.assert_array_equal(out.ravel(), np.float32([-1, -1, 1, 1]))


def test_constant_image_standardizes_to_zeros():
    img = np.full((5, 7, 3), 4.2)
    out = preprocess_image(img, crop=4)
    assert out.shape == (4, 4, 3)
    assert not out.any()


def test_preprocess_output_statistics():
    rng = np.random.default_rng(0)
    out = preprocess_image(rng.uniform(0, 255, size=(8, 8, 3)), crop=4)
    flat = out.astype(np.float64).ravel()
    assert abs(flat.mean()) < 1e-6
    assert abs(flat.std() - 1.0) < 1e-6


def test_preprocess_rejects_empty_images():
    with pytest.raises(ValueError, match="empty image"):
        preprocess_image(np.zeros((0, 4, 3)), crop=2)
    with pytest.raises(ValueError, match="empty image"):
        standardize_image(np.zeros((0,)))


def reference_resize(image, out_h, out_w):
    """Half-pixel-centered bilinear, one output pixel at a time."""
    h, w, c = image.shape
    out = np.zeros((out_h, out_w, c))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
            bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def test_resize_matches_reference_loop():
    rng = np.random.default_rng(3)
    for in_hw, out_hw in [((5, 7), (9, 4)), ((8, 8), (3, 11)), ((2, 3), (2, 3))]:
        img = rng.uniform(-1, 1, size=(*in_hw, 2))
        got = resize_bilinear(img, *out_hw)
        np.testing.assert_allclose(got, reference_resize(img, *out_hw), rtol=0, atol=1e-12)


def test_resize_preserves_constants_and_identity():
    img = np.full((4, 6, 1), 3.5)
    assert np.allclose(resize_bilinear(img, 9, 5), 3.5)
    same = np.arange(24, dtype=np.float64).reshape(4, 6, 1)
    np.testing.assert_allclose(resize_bilinear(same, 4, 6), same, atol=1e-12)


def test_class_words_sort_like_class_indices():
    for k in (5, 26, 30, 800):
        words = [class_word(i, k) for i in range(k)]
        assert words == sorted(words)
        assert len(set(words)) == k
        assert len({len(w) for w in words}) == 1
        assert all(w[0] == "w" and w[1:].isalpha() and w.islower() for w in words)


def test_zipf_probs_shape():
    p = zipf_probs(10, 1.0)
    assert abs(p.sum() - 1.0) < 1e-12
    assert abs(p[0] / p[1] - 2.0) < 1e-12  # (1/1)^-1 vs (1/2)^-1
    assert np.all(np.diff(p) < 0)
    assert np.allclose(zipf_probs(7, 0.0), 1 / 7)


def test_generator_is_deterministic():
    cfg = SynthConfig(k=8, img_size=4, n_examples=64, seed=123)
    ex_a, dict_a, proto_a = generate_synthetic(cfg)
    ex_b, dict_b, proto_b = generate_synthetic(cfg)
    assert dict_a.words == dict_b.words
    np.testing.assert_array_equal(proto_a, proto_b)
    for a, b in zip(ex_a, ex_b):
        assert a.id == b.id
        assert a.image.tobytes() == b.image.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)


def test_noiseless_examples_equal_their_prototypes():
    cfg = SynthConfig(k=6, img_size=5, noise_sigma=0.0, n_examples=120, seed=9)
    examples, dictionary, protos = generate_synthetic(cfg)
    assert nearest_prototype_precision(examples, protos) == 1.0
    for ex in examples[:20]:
        np.testing.assert_allclose(ex.image, protos[int(ex.labels[0])], atol=1e-5)


def test_labels_and_dictionary_agree():
    cfg = SynthConfig(k=12, img_size=3, words_per_image=3, n_examples=200, seed=4)
    examples, dictionary, protos = generate_synthetic(cfg)
    assert dictionary.k == 12
    assert protos.shape == (12, 3, 3, 1)
    for ex in examples:
        assert len(ex.labels) == 3  # chosen classes are distinct
        assert np.array_equal(ex.labels, np.unique(ex.labels))
        assert ex.labels.min() >= 0 and ex.labels.max() < 12


def test_flat_exponent_gives_uniform_classes():
    cfg = SynthConfig(k=10, img_size=2, zipf_exponent=0.0, n_examples=100_000, seed=2)
    examples, _, _ = generate_synthetic(cfg)
    counts = np.bincount([int(ex.labels[0]) for ex in examples], minlength=10)
    assert stats.chisquare(counts).pvalue > 0.01


def test_rank_frequency_slope_tracks_exponent():
    cfg = SynthConfig(k=100, img_size=2, zipf_exponent=1.0, n_examples=100_000, seed=6)
    examples, _, _ = generate_synthetic(cfg)
    counts = np.bincount([int(ex.labels[0]) for ex in examples], minlength=100)
    counts = np.sort(counts)[::-1]
    counts = counts[counts > 0]
    slope = np.polyfit(np.log(np.arange(1, len(counts) + 1)), np.log(counts), 1)[0]
    assert abs(slope + 1.0) < 0.1


def test_synth_config_validation():
    with pytest.raises(ValueError, match="words_per_image exceeds k"):
        SynthConfig(k=3, words_per_image=4)
    with pytest.raises(ValueError):
        SynthConfig(k=0)
    with pytest.raises(ValueError):
        SynthConfig(noise_sigma=-0.1)


def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    images = {f"img{i}": rng.standard_normal((4, 3, 2)).astype(np.float32) for i in range(5)}
    path = tmp_path / "tensors.bin"
    write_tensor_container(str(path), images)
    loaded, index = read_tensor_container(str(path))
    assert loaded.shape == (5, 4, 3, 2)
    assert sorted(index) == sorted(images)
    for key, img in images.items():
        assert loaded[index[key]].tobytes() == img.tobytes()


def test_container_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTTENS1\nn=1 h=1 w=1 c=1 dtype=f32\n" + b"\x00" * 4)
    with pytest.raises(MalformedHeaderError, match="malformed header"):
        read_tensor_container(str(path))


def test_container_rejects_truncated_payload(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(b"WLTENS1\nn=2 h=2 w=2 c=1 dtype=f32\n" + b"\x00" * 8)
    with pytest.raises(DimensionMismatchError):
        read_tensor_container(str(path))


def test_container_rejects_bad_index(tmp_path):
    img = {"a": np.zeros((1, 1, 1), dtype=np.float32)}
    path = tmp_path / "tensors.bin"
    write_tensor_container(str(path), img)
    raw = path.read_bytes().replace(b"a\t0\n", b"a\t1\n")
    path.write_bytes(raw)
    with pytest.raises(DimensionMismatchError):
        read_tensor_container(str(path))


def _write_tiny_dataset(tmp_path, captions):
    rng = np.random.default_rng(0)
    rows = []
    images = {}
    for i, caption in enumerate(captions):
        ex_id = f"ex{i}"
        rows.append({"id": ex_id, "caption": caption, "image": ex_id})
        images[ex_id] = rng.standard_normal((2, 2, 1)).astype(np.float32)
    cap_path, tensor_path = tmp_path / "captions.jsonl", tmp_path / "tensors.bin"
    write_captions_jsonl(str(cap_path), rows)
    write_tensor_container(str(tensor_path), images)
    return str(cap_path), str(tensor_path), images


def test_load_dataset_drops_examples_without_labels(tmp_path):
    d = Dictionary(words=["red", "sky"], counts=np.array([2, 1]), stop_count=0)
    cap, ten, _ = _write_tiny_dataset(tmp_path, ["red sky", "red", "nothing known"])
    dataset, dropped = load_dataset(cap, ten, d)
    assert [ex.id for ex in dataset] == ["ex0", "ex1"]
    assert dataset[0].labels.tolist() == [0, 1]
    assert dropped == 1


def test_load_dataset_requires_known_ids(tmp_path):
    d = Dictionary(words=["red"], counts=np.array([1]), stop_count=0)
    cap, ten, _ = _write_tiny_dataset(tmp_path, ["red"])
    rows = read_captions_jsonl(cap)
    rows[0]["image"] = "ghost"
    write_captions_jsonl(cap, rows)
    with pytest.raises(MissingIdError, match="id not in container: ghost"):
        load_dataset(cap, ten, d)


def test_generated_dataset_round_trips_through_files(tmp_path):
    cfg = SynthConfig(k=6, img_size=4, n_examples=40, seed=77)
    examples, dictionary, _ = generate_synthetic(cfg)
    rows = [
        {
            "id": ex.id,
            "caption": " ".join(dictionary.words[int(l)] for l in ex.labels),
            "image": ex.id,
        }
        for ex in examples
    ]
    cap, ten = tmp_path / "captions.jsonl", tmp_path / "tensors.bin"
    write_captions_jsonl(str(cap), rows)
    write_tensor_container(str(ten), {ex.id: ex.image for ex in examples})

    loaded, dropped = load_dataset(str(cap), str(ten), dictionary)
    assert dropped == 0
    assert len(loaded) == len(examples)
    for orig, back in zip(examples, loaded):
        assert orig.id == back.id
        assert orig.image.tobytes() == back.image.tobytes()
        np.testing.assert_array_equal(orig.labels, back.labels)


def test_captions_reject_malformed_lines(tmp_path):
    path = tmp_path / "captions.jsonl"
    path.write_text('{"id": "a", "caption": "x"}\n', encoding="utf-8")
    with pytest.raises(MalformedHeaderError, match="missing fields"):
        read_captions_jsonl(str(path))
    path.write_text("not json\n", encoding="utf-8")
    with pytest.raises(MalformedHeaderError, match="malformed caption line"):
        read_captions_jsonl(str(path))


def test_stable_fraction_properties():
    values = np.array([stable_fraction(f"id{i}") for i in range(10_000)])
    assert np.all((values >= 0) & (values < 1))
    assert abs(values.mean() - 0.5) < 0.02
    assert stable_fraction("id7") == stable_fraction("id7")
    assert stable_fraction("id7", salt="a") != stable_fraction("id7", salt="b")
