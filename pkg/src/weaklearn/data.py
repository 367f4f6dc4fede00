"""Dataset ingestion, image standardization, and the synthetic Zipf generator.

Images are plain float32 arrays of shape (H, W, C); no codec dependency.
The tensor container is a small binary format (magic "WLTENS1") holding all
images of a dataset plus an id index, so datasets round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .textpipe import Dictionary, build_dictionary, encode_targets, normalize_text

TENSOR_MAGIC = b"WLTENS1\n"
_TENSOR_HEADER = re.compile(r"^n=(\d+) h=(\d+) w=(\d+) c=(\d+) dtype=f32$")

STD_FLOOR = 1e-8  # below this the divisor is 1, so constant images stay finite


class MalformedHeaderError(ValueError):
    """Container or caption file does not start with the expected header."""


class MissingIdError(ValueError):
    """A caption references an image id that the container does not hold."""


class DimensionMismatchError(ValueError):
    """Container payload or index disagrees with its declared dimensions."""


@dataclass
class Example:
    id: str
    image: np.ndarray  # (H, W, C) float32, standardized
    labels: np.ndarray  # sorted unique dictionary indices, non-empty


@dataclass
class SynthConfig:
    """Synthetic Zipf image-caption generator settings.

    Class k is drawn with probability proportional to (k+1)**(-zipf_exponent).
    Each class owns a fixed random prototype image; an example's image is the
    mean of its chosen prototypes plus Gaussian pixel noise, standardized.
    """

    k: int = 20
    img_size: int = 16
    zipf_exponent: float = 1.0
    words_per_image: int = 1
    noise_sigma: float = 0.5
    seed: int = 7
    n_examples: int = 2000

    def __post_init__(self):
        if self.k < 1 or self.img_size < 1 or self.words_per_image < 1:
            raise ValueError("k, img_size and words_per_image must be positive")
        if self.words_per_image > self.k:
            raise ValueError("words_per_image exceeds k")
        if self.zipf_exponent < 0 or self.noise_sigma < 0:
            raise ValueError("zipf_exponent and noise_sigma must be non-negative")
        if self.n_examples < 1:
            raise ValueError("n_examples must be positive")


def standardize_image(pixels: np.ndarray) -> np.ndarray:
    """Subtract the global per-image mean and divide by the global std.

    If the std is below STD_FLOOR the divisor is 1, so constant images map
    to all zeros instead of NaN.
    """
    x = np.asarray(pixels, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty image")
    std = x.std()
    if std < STD_FLOOR:
        std = 1.0
    return ((x - x.mean()) / std).astype(np.float32)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling; identity when sizes match."""
    h, w = image.shape[0], image.shape[1]
    x = np.asarray(image, dtype=np.float64)

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    r0, r1, rf = axis_coords(h, out_h)
    c0, c1, cf = axis_coords(w, out_w)
    rf = rf[:, None, None]
    cf = cf[None, :, None]
    top = x[r0][:, c0] * (1 - cf) + x[r0][:, c1] * cf
    bot = x[r1][:, c0] * (1 - cf) + x[r1][:, c1] * cf
    return top * (1 - rf) + bot * rf


def preprocess_image(raw: np.ndarray, crop: int) -> np.ndarray:
    """Rescale the short side to crop*(256/224) rounded, center-crop, standardize."""
    if crop < 1:
        raise ValueError("crop must be positive")
    raw = np.asarray(raw)
    if raw.size == 0 or raw.ndim != 3:
        raise ValueError("empty image")
    h, w = raw.shape[0], raw.shape[1]
    target_short = int(round(crop * 256 / 224))
    if h <= w:
        out_h = target_short
        out_w = int(round(w * target_short / h))
    else:
        out_w = target_short
        out_h = int(round(h * target_short / w))
    if out_h < crop or out_w < crop:
        raise ValueError("image smaller than crop after rescale")
    resized = resize_bilinear(raw, out_h, out_w)
    top = (out_h - crop) // 2
    left = (out_w - crop) // 2
    cropped = resized[top : top + crop, left : left + crop, :]
    return standardize_image(cropped)


def class_word(i: int, k: int) -> str:
    """Letters-only synthetic word for class i; lexicographic order == class order."""
    width = 1
    while 26**width < k:
        width += 1
    letters = []
    for _ in range(width):
        letters.append(chr(ord("a") + i % 26))
        i //= 26
    return "w" + "".join(reversed(letters))


def zipf_probs(k: int, exponent: float) -> np.ndarray:
    weights = (np.arange(k, dtype=np.float64) + 1.0) ** (-exponent)
    return weights / weights.sum()


def generate_synthetic(cfg: SynthConfig) -> tuple[list[Example], Dictionary, np.ndarray]:
    """Generate the synthetic dataset; pure function of cfg.

    Returns (examples, dictionary, prototypes). Prototype row i is the
    standardized prototype of dictionary word i, so labels index prototypes
    directly. The dictionary is built from the emitted captions with
    stop_count=0; ties in empirical counts resolve to ascending class order
    because the class words sort lexicographically by class.
    """
    rng = np.random.default_rng(cfg.seed)
    side, k, n = cfg.img_size, cfg.k, cfg.n_examples
    prototypes = rng.standard_normal((k, side, side, 1))
    probs = zipf_probs(k, cfg.zipf_exponent)
    first = rng.choice(k, size=n, p=probs)

    if cfg.words_per_image == 1:
        chosen = first[:, None]
    else:
        extra = cfg.words_per_image - 1
        chosen = np.empty((n, cfg.words_per_image), dtype=np.int64)
        chosen[:, 0] = first
        for i in range(n):
            others = rng.choice(k - 1, size=extra, replace=False)
            others += others >= first[i]
            chosen[i, 1:] = others

    words = [class_word(i, k) for i in range(k)]
    captions = [" ".join(words[c] for c in row) for row in chosen]
    docs = [normalize_text(caption) for caption in captions]
    dictionary = build_dictionary(docs, k=k, stop_count=0)

    mixed = prototypes[chosen].mean(axis=1)
    images = np.empty((n, side, side, 1), dtype=np.float32)
    chunk = 16384
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = mixed[start:stop]
        if cfg.noise_sigma > 0:
            block = block + cfg.noise_sigma * rng.standard_normal(block.shape)
        mean = block.mean(axis=(1, 2, 3), keepdims=True)
        std = block.std(axis=(1, 2, 3), keepdims=True)
        std = np.where(std < STD_FLOOR, 1.0, std)
        images[start:stop] = ((block - mean) / std).astype(np.float32)

    width = len(str(n - 1))
    examples = []
    for i in range(n):
        labels = encode_targets(docs[i], dictionary)
        examples.append(Example(id=f"ex{i:0{width}d}", image=images[i], labels=labels))

    # permute prototypes into dictionary order and standardize like images
    by_word = {w: j for j, w in enumerate(words)}
    proto_out = np.stack(
        [standardize_image(prototypes[by_word[w]]) for w in dictionary.words]
    )
    return examples, dictionary, proto_out


def nearest_prototype_precision(examples: list[Example], prototypes: np.ndarray) -> float:
    """Precision@1 of the nearest-prototype classifier; Bayes-proxy ceiling.

    Assigns each image to the prototype with the smallest Euclidean
    distance (ties to the lowest index) and scores a hit when that class
    is among the example's labels.
    """
    flat_p = prototypes.reshape(len(prototypes), -1).astype(np.float64)
    hits = 0
    for ex in examples:
        x = ex.image.reshape(-1).astype(np.float64)
        d2 = np.square(flat_p - x).sum(axis=1)
        if int(np.argmin(d2)) in set(int(l) for l in ex.labels):
            hits += 1
    return hits / len(examples)


def write_tensor_container(path: str, images_by_id: dict[str, np.ndarray]) -> None:
    """Write all images to the WLTENS1 container, id-sorted, with an id index."""
    if not images_by_id:
        raise ValueError("empty container")
    ids = sorted(images_by_id)
    shapes = {images_by_id[i].shape for i in ids}
    if len(shapes) != 1 or len(next(iter(shapes))) != 3:
        raise DimensionMismatchError("dimension mismatch")
    h, w, c = next(iter(shapes))
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(f"n={len(ids)} h={h} w={w} c={c} dtype=f32\n".encode("ascii"))
        for i in ids:
            fh.write(np.ascontiguousarray(images_by_id[i], dtype="<f4").tobytes())
        for ordinal, i in enumerate(ids):
            fh.write(f"{i}\t{ordinal}\n".encode("utf-8"))


def read_tensor_container(path: str) -> tuple[np.ndarray, dict[str, int]]:
    """Read a WLTENS1 container; returns (images (n,h,w,c) float32, id -> ordinal)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(TENSOR_MAGIC))
        if magic != TENSOR_MAGIC:
            raise MalformedHeaderError("malformed header")
        header = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        m = _TENSOR_HEADER.match(header)
        if m is None:
            raise MalformedHeaderError("malformed header")
        n, h, w, c = (int(g) for g in m.groups())
        payload = fh.read(n * h * w * c * 4)
        if len(payload) != n * h * w * c * 4:
            raise DimensionMismatchError("dimension mismatch")
        images = np.frombuffer(payload, dtype="<f4").reshape(n, h, w, c).copy()
        index = {}
        for line in fh.read().decode("utf-8").splitlines():
            if not line:
                continue
            try:
                ex_id, ordinal = line.split("\t")
                index[ex_id] = int(ordinal)
            except ValueError:
                raise MalformedHeaderError("malformed index line") from None
    if len(index) != n or sorted(index.values()) != list(range(n)):
        raise DimensionMismatchError("dimension mismatch")
    return images, index


def write_captions_jsonl(path: str, examples_or_rows, captions: list[str] | None = None) -> None:
    """Write caption JSON-lines: {"id", "caption", "image"} per line.

    Accepts either (examples, captions) from the generator or an iterable of
    preassembled row dicts.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if captions is not None:
            for ex, caption in zip(examples_or_rows, captions):
                row = {"id": ex.id, "caption": caption, "image": ex.id}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        else:
            for row in examples_or_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_captions_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                raise MalformedHeaderError(f"malformed caption line {lineno}") from None
            if not all(key in row for key in ("id", "caption", "image")):
                raise MalformedHeaderError(f"caption line {lineno} missing fields")
            rows.append(row)
    return rows


def load_dataset(
    captions_path: str, tensor_path: str, dictionary: Dictionary
) -> tuple[list[Example], int]:
    """Join captions with the tensor container by id and encode labels.

    Examples whose caption has no in-dictionary words are dropped; the
    second return value is the drop count.
    """
    images, index = read_tensor_container(tensor_path)
    examples = []
    dropped = 0
    for row in read_captions_jsonl(captions_path):
        key = row["image"]
        if key not in index:
            raise MissingIdError(f"id not in container: {key}")
        labels = encode_targets(normalize_text(row["caption"]), dictionary)
        if labels.size == 0:
            dropped += 1
            continue
        examples.append(Example(id=row["id"], image=images[index[key]], labels=labels))
    return examples, dropped


def stable_fraction(key: str, salt: str = "") -> float:
    """Deterministic hash of a string id to [0, 1); stable across runs and platforms."""
    digest = hashlib.blake2b((salt + key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64
