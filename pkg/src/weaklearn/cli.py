"""Command-line entry point: the full pipeline as subcommands.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; machine-readable output is JSON on stdout or files under --out-dir.
Every run logs its fully-resolved configuration to stderr first.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys

import numpy as np

from . import CHECKPOINT_FORMAT, DICT_FORMAT, TENSOR_FORMAT, __version__
from .data import (
    SynthConfig,
    generate_synthetic,
    load_dataset,
    write_captions_jsonl,
    write_tensor_container,
)
from .evaluate import (
    AnalogyQuestion,
    SimilarityPair,
    TranslationPair,
    analogy_accuracy,
    dump_embeddings,
    extract_features,
    linear_probe,
    precision_at_k,
    spearman_similarity,
    translation_precision,
)
from .loss import check_bounds
from .model import ModelConfig, load_checkpoint
from .textpipe import build_dictionary, load_dictionary, normalize_text, save_dictionary
from .trainer import TrainConfig, gradient_check, save_trainlog, train

CAPTIONS_FILE = "captions.jsonl"
TENSORS_FILE = "tensors.bin"
DICT_FILE = "dict.tsv"

_VERSION_TEXT = (
    f"weaklearn {__version__} (formats: {TENSOR_FORMAT}, {CHECKPOINT_FORMAT}, {DICT_FORMAT})"
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _log_resolved(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    print("config " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)


def parse_layers(spec) -> list[tuple]:
    """Layer spec from "conv:3:8,fc:64" strings or JSON-style nested lists."""
    if isinstance(spec, str):
        layers = []
        for chunk in spec.split(","):
            parts = chunk.strip().split(":")
            if parts[0] == "fc" and len(parts) == 2:
                layers.append(("fc", int(parts[1])))
            elif parts[0] == "conv" and len(parts) == 3:
                layers.append(("conv", int(parts[1]), int(parts[2])))
            else:
                raise ValueError(f"bad layer spec: {chunk!r}")
        return layers
    return [(item[0], *map(int, item[1:])) for item in spec]


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value.strip().strip("\"'")


def load_config_file(path: str) -> dict:
    """Read a sectioned config file: JSON, or INI-style key = value sections."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config not found: {path}")
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise ValueError("config root must be an object")
        return obj
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_string(fh.read())
    return {
        section: {key: _coerce(value) for key, value in parser.items(section)}
        for section in parser.sections()
    }


def _cmd_gen_synth(args) -> int:
    cfg = SynthConfig(
        k=args.k,
        img_size=args.img_size,
        zipf_exponent=args.zipf,
        words_per_image=args.words_per_image,
        noise_sigma=args.noise,
        seed=args.seed,
        n_examples=args.n_examples,
    )
    examples, dictionary, prototypes = generate_synthetic(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = [
        {
            "id": ex.id,
            "caption": " ".join(dictionary.words[int(l)] for l in ex.labels),
            "image": ex.id,
        }
        for ex in examples
    ]
    write_captions_jsonl(os.path.join(args.out_dir, CAPTIONS_FILE), rows)
    write_tensor_container(
        os.path.join(args.out_dir, TENSORS_FILE), {ex.id: ex.image for ex in examples}
    )
    np.save(os.path.join(args.out_dir, "prototypes.npy"), prototypes)
    print(
        json.dumps(
            {
                "n_examples": len(examples),
                "k": dictionary.k,
                "img_size": cfg.img_size,
                "files": [CAPTIONS_FILE, TENSORS_FILE, "prototypes.npy"],
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_build_dict(args) -> int:
    rows = []
    with open(args.captions, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    docs = (normalize_text(row.get("caption", "")) for row in rows)
    dictionary = build_dictionary(docs, k=args.k, stop_count=args.stop_count)
    save_dictionary(dictionary, args.out)
    print(json.dumps({"k": dictionary.k, "stop_count": dictionary.stop_count, "out": args.out}, sort_keys=True))
    return 0


_TRAIN_KEYS = {
    "batch_size": int,
    "lr_init": float,
    "lr_floor": float,
    "min_epochs_per_lr": int,
    "epoch_size": int,
    "max_epochs": int,
    "loss_kind": str,
    "seed": int,
    "validation_fraction": float,
    "full_softmax": bool,
    "workers": int,
}


def _cmd_train(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    train_section = dict(file_cfg.get("train", {}))
    model_section = dict(file_cfg.get("model", {}))

    overrides = {
        "batch_size": args.batch_size,
        "lr_init": args.lr_init,
        "epoch_size": args.epoch_size,
        "max_epochs": args.max_epochs,
        "loss_kind": args.loss_kind,
        "seed": args.seed,
        "validation_fraction": args.validation_fraction,
        "workers": args.workers,
    }
    for key, value in overrides.items():
        if value is not None:
            train_section[key] = value
    if args.full_softmax:
        train_section["full_softmax"] = True
    unknown = set(train_section) - set(_TRAIN_KEYS)
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    cfg = TrainConfig(**{k: _TRAIN_KEYS[k](v) for k, v in train_section.items()})

    dict_path = os.path.join(args.data_dir, DICT_FILE)
    captions_path = os.path.join(args.data_dir, CAPTIONS_FILE)
    tensors_path = os.path.join(args.data_dir, TENSORS_FILE)
    for path in (dict_path, captions_path, tensors_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"data file not found: {path}")
    dictionary = load_dictionary(dict_path)
    dataset, dropped = load_dataset(captions_path, tensors_path, dictionary)
    if dropped:
        print(f"dropped {dropped} empty-label examples", file=sys.stderr)
    if not dataset:
        raise ValueError("no usable examples")

    input_hwc = dataset[0].image.shape
    model_cfg = ModelConfig(
        input_hwc=input_hwc,
        layers=parse_layers(model_section.get("layers", "fc:64,fc:64")),
        embed_dim=int(model_section.get("embed_dim", 64)),
        dtype=str(model_section.get("dtype", "f32")),
    )

    merged = {
        "train": dataclasses.asdict(cfg),
        "model": {
            "input_hwc": list(model_cfg.input_hwc),
            "layers": [list(layer) for layer in model_cfg.layers],
            "embed_dim": model_cfg.embed_dim,
            "dtype": model_cfg.dtype,
        },
    }
    print("config " + json.dumps(merged, sort_keys=True), file=sys.stderr)

    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.wlckpt")
    params, log = train(cfg, dataset, model_cfg, k=dictionary.k, checkpoint_path=ckpt_path)
    save_trainlog(log, os.path.join(args.out_dir, "trainlog.jsonl"))
    summary = {
        "checkpoint": "checkpoint.wlckpt",
        "epochs": len(log.records),
        "final_val_error": log.records[-1]["val_error"] if log.records else None,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_check_bounds(args) -> int:
    logits = np.random.default_rng(args.seed).standard_normal(args.k)
    report = check_bounds(logits, subset_size=args.subset, trials=args.trials, seed=args.seed)
    print(json.dumps(dataclasses.asdict(report), sort_keys=True))
    return 0


def _cmd_grad_check(args) -> int:
    model_cfg = ModelConfig(
        input_hwc=(6, 6, 1),
        layers=[("conv", 3, 4), ("fc", 16), ("fc", 8)],
        embed_dim=8,
        dtype="f64",
    )
    err = gradient_check(model_cfg, args.loss_kind, args.seed)
    print(json.dumps({"loss_kind": args.loss_kind, "max_rel_err": err}, sort_keys=True))
    return 0


def _load_ckpt_dataset(args):
    params, _ = load_checkpoint(args.ckpt)
    dictionary = load_dictionary(os.path.join(args.data, DICT_FILE))
    dataset, _ = load_dataset(
        os.path.join(args.data, CAPTIONS_FILE), os.path.join(args.data, TENSORS_FILE), dictionary
    )
    if not dataset:
        raise ValueError("no usable examples")
    return params, dictionary, dataset


def _cmd_eval_words(args) -> int:
    params, _, dataset = _load_ckpt_dataset(args)
    report = precision_at_k(params, dataset, k=args.k)
    print(report.to_json())
    return 0


def _cmd_eval_probe(args) -> int:
    params, _, dataset = _load_ckpt_dataset(args)
    features = extract_features(params, dataset)
    labels = np.array([int(ex.labels[0]) for ex in dataset])  # lowest class index per example
    grid = np.array([float(x) for x in args.lambda_grid.split(",")]) if args.lambda_grid else None
    probe, report = linear_probe(features, labels, lambda_grid=grid, seed=args.seed)
    print(f"selected lambda {probe.lam:g}", file=sys.stderr)
    print(report.to_json())
    return 0


def _read_token_lines(path: str, n_tokens: int) -> list[list[str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != n_tokens:
                raise ValueError(f"line {lineno}: expected {n_tokens} fields, got {len(parts)}")
            out.append(parts)
    return out


def _cmd_eval_analogy(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    dictionary = load_dictionary(args.dict)
    questions = [AnalogyQuestion(*parts) for parts in _read_token_lines(args.questions, 4)]
    report = analogy_accuracy(params.output_weights, questions, dictionary)
    print(report.to_json())
    return 0


def _cmd_eval_sim(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    dictionary = load_dictionary(args.dict)
    pairs = [
        SimilarityPair(parts[0], parts[1], float(parts[2]))
        for parts in _read_token_lines(args.pairs, 3)
    ]
    report = spearman_similarity(params.output_weights, pairs, dictionary)
    print(report.to_json())
    return 0


def _cmd_eval_translate(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    dictionary = load_dictionary(args.dict)
    pairs = [TranslationPair(parts[0], parts[1]) for parts in _read_token_lines(args.pairs, 2)]
    report = translation_precision(
        params.output_weights, pairs, dictionary, direction=args.direction, k=args.k
    )
    print(report.to_json())
    return 0


def _cmd_dump_embeddings(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    dictionary = load_dictionary(args.dict)
    neighbors_path = dump_embeddings(params.output_weights, dictionary, args.out)
    print(json.dumps({"csv": args.out, "neighbors": neighbors_path, "k": dictionary.k}, sort_keys=True))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="weaklearn", description=__doc__)
    parser.add_argument("--version", action="version", version=_VERSION_TEXT)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic Zipf image-caption dataset")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--img-size", type=int, default=16)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--words-per-image", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-examples", type=int, default=2000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("build-dict", help="build the word dictionary from caption JSONL")
    p.add_argument("--captions", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--stop-count", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_dict)

    p = sub.add_parser("train", help="train on a data directory")
    p.add_argument("--config", help="JSON or INI-style sectioned config file")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epoch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr-init", type=float)
    p.add_argument("--loss-kind", choices=["multiclass", "one_vs_all"])
    p.add_argument("--validation-fraction", type=float)
    p.add_argument("--full-softmax", action="store_true")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("check-bounds", help="Monte-Carlo check of the partition bounds")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--subset", type=int, default=4)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check_bounds)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--loss-kind", choices=["multiclass", "one_vs_all"], default="multiclass")
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("eval-words", help="precision@k of word prediction")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=_cmd_eval_words)

    p = sub.add_parser("eval-probe", help="linear probe on penultimate features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lambda-grid", help="comma-separated values, default log-spaced 1e-4..1e2")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval_probe)

    p = sub.add_parser("eval-analogy", help="analogy accuracy over 4-words-per-line questions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--questions", required=True)
    p.set_defaults(func=_cmd_eval_analogy)

    p = sub.add_parser("eval-sim", help="Spearman correlation over word1 word2 rating lines")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--pairs", required=True)
    p.set_defaults(func=_cmd_eval_sim)

    p = sub.add_parser("eval-translate", help="bilingual matching precision over src tgt lines")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--direction", choices=["forward", "reverse"], default="forward")
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(func=_cmd_eval_translate)

    p = sub.add_parser("dump-embeddings", help="write embedding CSV plus neighbor JSON")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    _log_resolved(args)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures map to exit 2 by contract
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
