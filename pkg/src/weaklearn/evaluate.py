"""Evaluation protocols: precision@k, linear probes, and embedding benchmarks.

The output-matrix columns double as word embeddings, so the module also
scores analogy questions, similarity rank correlation, and bilingual word
matching, plus a CSV/JSON dump for external plotting.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import Example, stable_fraction
from .model import ModelParams, forward, score_subset
from .textpipe import Dictionary


@dataclass
class EvalReport:
    metric: str
    value: float
    k: int | None
    n_items: int
    n_skipped: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "metric": self.metric,
                "value": self.value,
                "k": self.k,
                "n_items": self.n_items,
                "n_skipped": self.n_skipped,
            },
            sort_keys=True,
        )


@dataclass
class AnalogyQuestion:
    a: str
    b: str
    c: str
    d: str


@dataclass
class SimilarityPair:
    word1: str
    word2: str
    rating: float


@dataclass
class TranslationPair:
    word1: str
    word2: str


@dataclass
class ProbeModel:
    weights: np.ndarray  # (E, C) over np.unique(labels) in ascending order
    bias: np.ndarray  # (C,)
    lam: float  # selected regularization strength


def _score_batches(params: ModelParams, dataset: list[Example], chunk: int = 512) -> np.ndarray:
    classes = np.arange(params.k, dtype=np.int64)
    out = []
    for start in range(0, len(dataset), chunk):
        images = np.stack([ex.image for ex in dataset[start : start + chunk]])
        e, _ = forward(params, images)
        out.append(score_subset(params, e, classes))
    return np.concatenate(out, axis=0)


def _top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k per row by descending score; ties broken by ascending index."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


def precision_at_k(params: ModelParams, dataset: list[Example], k: int) -> EvalReport:
    """Mean over examples of |top-k predictions ∩ labels| / k."""
    if k < 1:
        raise ValueError("k must be positive")
    if not dataset:
        raise ValueError("empty dataset")
    scores = _score_batches(params, dataset)
    top = _top_k_indices(scores, k)
    total = 0.0
    for i, ex in enumerate(dataset):
        labels = set(int(l) for l in ex.labels)
        total += sum(1 for c in top[i] if int(c) in labels) / k
    return EvalReport(
        metric="precision_at_k",
        value=total / len(dataset),
        k=k,
        n_items=len(dataset),
        n_skipped=0,
    )


def extract_features(params: ModelParams, dataset: list[Example], chunk: int = 512) -> np.ndarray:
    """Penultimate representation f(x; theta) per example, shape (n, E)."""
    out = []
    for start in range(0, len(dataset), chunk):
        images = np.stack([ex.image for ex in dataset[start : start + chunk]])
        e, _ = forward(params, images)
        out.append(e)
    return np.concatenate(out, axis=0)


def _fit_multinomial(x: np.ndarray, labels: np.ndarray, n_classes: int, lam: float):
    """L2-regularized softmax regression by full-batch gradient descent.

    Runs to gradient norm < 1e-6 or 10^4 iterations, whichever first; the
    step size is 1/L for the standard smoothness bound of the objective.
    """
    n, e = x.shape
    y = np.zeros((n, n_classes))
    y[np.arange(n), labels] = 1.0
    w = np.zeros((e, n_classes))
    b = np.zeros(n_classes)
    gram_top = float(np.linalg.eigvalsh((x.T @ x) / n)[-1])
    lipschitz = 0.5 * (gram_top + 1.0) + lam
    step = 1.0 / lipschitz
    for _ in range(10_000):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        diff = (p - y) / n
        g_w = x.T @ diff + lam * w
        g_b = diff.sum(axis=0)
        norm = np.sqrt((g_w * g_w).sum() + (g_b * g_b).sum())
        if norm < 1e-6:
            break
        w -= step * g_w
        b -= step * g_b
    return w, b


def linear_probe(
    features: np.ndarray,
    labels: np.ndarray,
    lambda_grid: np.ndarray | None = None,
    seed: int = 0,
) -> tuple[ProbeModel, EvalReport]:
    """Probe frozen features with a multinomial logistic regressor.

    Rows are split by stable hash into a held-out test fold (20%) and an
    80/20 train/validation split of the remainder; lambda is chosen by
    validation accuracy (ties to the smaller lambda), the model is refit
    on train+validation, and test accuracy is reported. The seed salts
    the hash so different seeds give different folds.
    """
    if lambda_grid is None:
        lambda_grid = np.logspace(-4, 2, 7)
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ValueError("features and labels disagree")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("single-class input")
    dense = np.searchsorted(classes, labels)

    u_test = np.array([stable_fraction(f"row{i}", salt=f"probe-test-{seed}") for i in range(len(x))])
    test_mask = u_test >= 0.8
    rest = np.flatnonzero(~test_mask)
    u_val = np.array([stable_fraction(f"row{i}", salt=f"probe-val-{seed}") for i in rest])
    val_rows = rest[u_val >= 0.8]
    train_rows = rest[u_val < 0.8]
    test_rows = np.flatnonzero(test_mask)
    if not (len(train_rows) and len(val_rows) and len(test_rows)):
        raise ValueError("too few rows to split")
    if np.unique(dense[train_rows]).size < 2:
        raise ValueError("single-class input")

    best_lam, best_acc = None, -1.0
    for lam in lambda_grid:
        w, b = _fit_multinomial(x[train_rows], dense[train_rows], classes.size, float(lam))
        pred = np.argmax(x[val_rows] @ w + b, axis=1)
        acc = float((pred == dense[val_rows]).mean())
        if acc > best_acc:
            best_acc, best_lam = acc, float(lam)

    fit_rows = np.concatenate([train_rows, val_rows])
    w, b = _fit_multinomial(x[fit_rows], dense[fit_rows], classes.size, best_lam)
    pred = np.argmax(x[test_rows] @ w + b, axis=1)
    test_acc = float((pred == dense[test_rows]).mean())
    report = EvalReport(
        metric="probe_accuracy",
        value=test_acc,
        k=None,
        n_items=len(test_rows),
        n_skipped=0,
    )
    return ProbeModel(weights=w, bias=b, lam=best_lam), report


def _unit_columns(w_out: np.ndarray) -> np.ndarray:
    """Columns scaled to unit norm; zero columns stay zero."""
    norms = np.linalg.norm(w_out, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return w_out / safe


def analogy_accuracy(
    w_out: np.ndarray, questions: list[AnalogyQuestion], dictionary: Dictionary
) -> EvalReport:
    """Accuracy of predicting D from unit(w_B) - unit(w_A) + unit(w_C).

    The argmax-cosine search excludes A, B and C; questions with any
    out-of-dictionary word are skipped and counted.
    """
    w2i = dictionary.word_to_index
    unit = _unit_columns(np.asarray(w_out, dtype=np.float64))
    norms = np.linalg.norm(w_out, axis=0)
    scored = 0
    correct = 0
    skipped = 0
    for q in questions:
        idx = [w2i.get(w) for w in (q.a, q.b, q.c, q.d)]
        if any(i is None for i in idx):
            skipped += 1
            continue
        ia, ib, ic, id_ = idx
        if norms[ia] == 0 or norms[ib] == 0 or norms[ic] == 0:
            raise ValueError("zero-norm embedding column")
        target = unit[:, ib] - unit[:, ia] + unit[:, ic]
        sims = target @ unit
        sims[[ia, ib, ic]] = -np.inf
        pred = int(np.argmax(sims))
        scored += 1
        correct += pred == id_
    value = correct / scored if scored else 0.0
    return EvalReport(metric="analogy_accuracy", value=value, k=None, n_items=scored, n_skipped=skipped)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def spearman_similarity(
    w_out: np.ndarray, pairs: list[SimilarityPair], dictionary: Dictionary
) -> EvalReport:
    """Spearman rank correlation of model cosines against human ratings."""
    w2i = dictionary.word_to_index
    w = np.asarray(w_out, dtype=np.float64)
    cosines, ratings = [], []
    skipped = 0
    for pair in pairs:
        i, j = w2i.get(pair.word1), w2i.get(pair.word2)
        if i is None or j is None:
            skipped += 1
            continue
        cosines.append(_cosine(w[:, i], w[:, j]))
        ratings.append(pair.rating)
    if len(cosines) < 2:
        raise ValueError("fewer than 2 scorable pairs")
    rank_c = rankdata(cosines, method="average")
    rank_r = rankdata(ratings, method="average")
    if np.all(rank_c == rank_c[0]) or np.all(rank_r == rank_r[0]):
        rho = 0.0  # a constant sequence carries no ordering signal
    else:
        rho = float(np.corrcoef(rank_c, rank_r)[0, 1])
    return EvalReport(
        metric="spearman_similarity", value=rho, k=None, n_items=len(cosines), n_skipped=skipped
    )


def translation_precision(
    w_out: np.ndarray,
    pairs: list[TranslationPair],
    dictionary: Dictionary,
    direction: str = "forward",
    k: int = 1,
) -> EvalReport:
    """Precision@k of cross-language matching by cosine ranking.

    direction "forward" queries word1 against the set of word2 entries;
    "reverse" swaps the roles. Candidates are exactly the target-side
    words of the scorable pairs; ties rank by ascending dictionary index.
    """
    if direction not in ("forward", "reverse"):
        raise ValueError("direction must be forward or reverse")
    if k < 1:
        raise ValueError("k must be positive")
    w2i = dictionary.word_to_index
    w = np.asarray(w_out, dtype=np.float64)
    scorable = []
    skipped = 0
    for pair in pairs:
        if pair.word1 in w2i and pair.word2 in w2i:
            scorable.append(pair if direction == "forward" else TranslationPair(pair.word2, pair.word1))
        else:
            skipped += 1
    if not scorable:
        raise ValueError("empty candidate set")
    candidates = sorted({w2i[p.word2] for p in scorable})
    cand_cols = _unit_columns(w[:, candidates])
    hits = 0
    for pair in scorable:
        query = w[:, w2i[pair.word1]]
        norm = np.linalg.norm(query)
        sims = (query / norm) @ cand_cols if norm > 0 else np.zeros(len(candidates))
        top = _top_k_indices(sims, min(k, len(candidates)))
        if w2i[pair.word2] in (candidates[t] for t in top):
            hits += 1
    return EvalReport(
        metric=f"translation_precision_{direction}",
        value=hits / len(scorable),
        k=k,
        n_items=len(scorable),
        n_skipped=skipped,
    )


def dump_embeddings(
    w_out: np.ndarray,
    dictionary: Dictionary,
    path: str,
    neighbors_path: str | None = None,
    n_neighbors: int = 10,
) -> str:
    """Write word,value...,value CSV rows in dictionary order plus neighbor JSON.

    Returns the neighbors path (derived from `path` when not given). The
    neighbor lists hold the top cosine neighbors of each word, self
    excluded, ties by ascending index.
    """
    w = np.asarray(w_out, dtype=np.float64)
    if w.shape[1] != dictionary.k:
        raise ValueError("embedding count differs from dictionary size")
    if neighbors_path is None:
        neighbors_path = os.path.splitext(path)[0] + "_neighbors.json"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for j, word in enumerate(dictionary.words):
            writer.writerow([word] + [f"{v:.8e}" for v in w[:, j]])
    unit = _unit_columns(w)
    sims = unit.T @ unit
    np.fill_diagonal(sims, -np.inf)
    n_take = min(n_neighbors, dictionary.k - 1)
    neighbors = {}
    for j, word in enumerate(dictionary.words):
        top = _top_k_indices(sims[j], n_take) if n_take > 0 else []
        neighbors[word] = [dictionary.words[int(t)] for t in top]
    with open(neighbors_path, "w", encoding="utf-8") as fh:
        json.dump(neighbors, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return neighbors_path
