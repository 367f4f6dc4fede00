"""Shared builders for the test suite."""

import numpy as np

from weaklearn.data import Example
from weaklearn.model import ModelConfig, ModelParams


def scorer_params(k: int, dtype: str = "f32") -> ModelParams:
    """Params whose dense logits equal the input pixels.

    Images of shape (1, 1, k) pass through an identity fc layer and an
    identity output matrix, so each example's score vector is exactly its
    pixel vector as long as pixels are >= 0 (the rectifier never clips).
    """
    cfg = ModelConfig(input_hwc=(1, 1, k), layers=[("fc", k)], embed_dim=k, dtype=dtype)
    np_dtype = cfg.np_dtype
    return ModelParams(
        config=cfg,
        weights=[np.eye(k, dtype=np_dtype)],
        biases=[np.zeros(k, dtype=np_dtype)],
        output_weights=np.eye(k, dtype=np_dtype),
    )


def score_examples(scores, labels_list) -> list[Example]:
    """Examples whose images are raw score vectors for scorer_params."""
    scores = np.asarray(scores, dtype=np.float32)
    out = []
    for i, (row, labels) in enumerate(zip(scores, labels_list)):
        out.append(
            Example(
                id=f"ex{i:04d}",
                image=row.reshape(1, 1, -1).astype(np.float32),
                labels=np.array(sorted(set(int(l) for l in labels)), dtype=np.int64),
            )
        )
    return out


def random_single_label_dataset(n: int, k: int, rng: np.random.Generator) -> list[Example]:
    """n tiny random images, each with one uniform random label."""
    labels = rng.integers(0, k, size=n)
    images = rng.standard_normal((n, 2, 2, 1)).astype(np.float32)
    return [
        Example(id=f"ex{i:04d}", image=images[i], labels=np.array([labels[i]], dtype=np.int64))
        for i in range(n)
    ]
