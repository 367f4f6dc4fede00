"""Embedding network f(x; theta) and the output matrix whose columns are word vectors.

The backbone is a configurable stack of conv and fully-connected layers,
each followed by a rectifier; conv layers additionally max-pool 2x2 with
stride 2 when the spatial extent allows. Forward and backward passes are
written out by hand so gradients can be audited against finite differences.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"WLCKPT1\n"
_ARRAY_LINE = re.compile(r"^array=(\S+) shape=([0-9,]*) dtype=(f32|f64)$")

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    """Backbone layout.

    layers is an ordered list of ("conv", k_size, channels) and
    ("fc", width) entries; conv layers must precede the first fc layer
    (the input is flattened there). The last layer must be an fc of width
    embed_dim. dtype "f64" exists for gradient and bound verification;
    training default is "f32".
    """

    input_hwc: tuple[int, int, int]
    layers: list[tuple]
    embed_dim: int
    dtype: str = "f32"

    def __post_init__(self):
        self.input_hwc = tuple(int(d) for d in self.input_hwc)
        self.layers = [tuple(layer) for layer in self.layers]
        if len(self.input_hwc) != 3 or any(d < 1 for d in self.input_hwc):
            raise ValueError("input_hwc must be three positive integers")
        if self.dtype not in _DTYPES:
            raise ValueError("dtype must be f32 or f64")
        if not self.layers:
            raise ValueError("at least one layer required")
        if self.layers[-1][0] != "fc" or self.layers[-1][1] != self.embed_dim:
            raise ValueError("last layer must be fc with width embed_dim")
        seen_fc = False
        for layer in self.layers:
            if layer[0] == "fc":
                seen_fc = True
                if len(layer) != 2 or layer[1] < 1:
                    raise ValueError(f"bad fc layer: {layer}")
            elif layer[0] == "conv":
                if seen_fc:
                    raise ValueError("conv layer after fc layer")
                if len(layer) != 3 or layer[1] < 1 or layer[2] < 1:
                    raise ValueError(f"bad conv layer: {layer}")
            else:
                raise ValueError(f"unknown layer kind: {layer[0]}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_hwc": list(self.input_hwc),
                "layers": [list(layer) for layer in self.layers],
                "embed_dim": self.embed_dim,
                "dtype": self.dtype,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        obj = json.loads(text)
        return cls(
            input_hwc=tuple(obj["input_hwc"]),
            layers=[tuple(layer) for layer in obj["layers"]],
            embed_dim=int(obj["embed_dim"]),
            dtype=obj["dtype"],
        )


def _layer_shapes(cfg: ModelConfig):
    """Walk the layer spec, yielding weight/bias shapes and fan-in/out per layer."""
    h, w, c = cfg.input_hwc
    flat = None
    out = []
    for layer in cfg.layers:
        if layer[0] == "conv":
            _, ks, ch = layer
            if ks > h or ks > w:
                raise ValueError("conv kernel larger than input")
            out.append((("conv", ks, c, ch), (ks, ks, c, ch), (ch,), ks * ks * c, ks * ks * ch))
            h, w = h - ks + 1, w - ks + 1
            if h >= 2 and w >= 2:
                h, w = h // 2, w // 2
            c = ch
        else:
            _, width = layer
            if flat is None:
                flat = h * w * c
            out.append((("fc", flat, width), (flat, width), (width,), flat, width))
            flat = width
    return out


@dataclass
class ModelParams:
    config: ModelConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_weights: np.ndarray  # (E, K); column k is the embedding of word k

    @property
    def k(self) -> int:
        return self.output_weights.shape[1]

    def n_params(self) -> int:
        total = sum(w.size for w in self.weights) + sum(b.size for b in self.biases)
        return total + self.output_weights.size

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_weights=self.output_weights.copy(),
        )


def init_params(cfg: ModelConfig, k: int, seed) -> ModelParams:
    """Uniform(-a, a) weights with a = sqrt(6/(fan_in+fan_out)); zero biases."""
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    dtype = cfg.np_dtype
    weights, biases = [], []
    for _, w_shape, b_shape, fan_in, fan_out in _layer_shapes(cfg):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=w_shape).astype(dtype))
        biases.append(np.zeros(b_shape, dtype=dtype))
    a = np.sqrt(6.0 / (cfg.embed_dim + k))
    w_out = rng.uniform(-a, a, size=(cfg.embed_dim, k)).astype(dtype)
    return ModelParams(config=cfg, weights=weights, biases=biases, output_weights=w_out)


@dataclass
class ForwardTrace:
    """Per-layer caches needed by backward; tied to one input batch."""

    inputs: list[np.ndarray] = field(default_factory=list)  # layer input (pre-flatten for fc0)
    pre_acts: list[np.ndarray] = field(default_factory=list)  # z before the rectifier
    pooled: list[bool] = field(default_factory=list)  # conv layers: whether 2x2 pool ran
    batch: int = 0


def _im2col(x: np.ndarray, ks: int) -> np.ndarray:
    """(B,H,W,C) -> (B,Ho,Wo,ks*ks*C) sliding windows, row-major window layout."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (ks, ks), axis=(1, 2))
    # sliding_window_view yields (B,Ho,Wo,C,ks,ks); put channels last
    windows = windows.transpose(0, 1, 2, 4, 5, 3)
    b, ho, wo = windows.shape[:3]
    return np.ascontiguousarray(windows).reshape(b, ho, wo, -1)


def _pool_windows(a: np.ndarray) -> np.ndarray:
    """(B,H,W,C) -> (B,Hp,Wp,4,C) full 2x2 windows; odd edges truncated."""
    b, h, w, c = a.shape
    hp, wp = h // 2, w // 2
    trimmed = a[:, : hp * 2, : wp * 2, :]
    return trimmed.reshape(b, hp, 2, wp, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, hp, wp, 4, c)


def forward(params: ModelParams, images: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Compute embeddings (B, E) for an image batch; pure in params and input."""
    cfg = params.config
    x = np.asarray(images)
    if x.ndim != 4 or x.shape[1:] != cfg.input_hwc:
        raise ValueError(f"input shape {x.shape} does not match config {cfg.input_hwc}")
    x = x.astype(cfg.np_dtype, copy=False)
    trace = ForwardTrace(batch=x.shape[0])
    for layer, w, b in zip(cfg.layers, params.weights, params.biases):
        if layer[0] == "conv":
            ks = layer[1]
            trace.inputs.append(x)
            cols = _im2col(x, ks)
            z = cols @ w.reshape(-1, w.shape[-1]) + b
            trace.pre_acts.append(z)
            a = np.maximum(z, 0)
            if a.shape[1] >= 2 and a.shape[2] >= 2:
                a = _pool_windows(a).max(axis=3)
                trace.pooled.append(True)
            else:
                trace.pooled.append(False)
            x = a
        else:
            if x.ndim == 4:
                x = x.reshape(x.shape[0], -1)
            trace.inputs.append(x)
            z = x @ w + b
            trace.pre_acts.append(z)
            trace.pooled.append(False)
            x = np.maximum(z, 0)
    return x, trace


def score_subset(params: ModelParams, embeddings: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """logits[i][j] = dot(w_{classes[j]}, e_i); classes = arange(K) gives dense scores."""
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= params.k):
        raise ValueError("class index out of range")
    return embeddings @ params.output_weights[:, classes]


def score_subset_backward(
    params: ModelParams,
    embeddings: np.ndarray,
    classes: np.ndarray,
    d_logits: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the scored subset: returns (d_embeddings, d_w_columns).

    d_w_columns has shape (E, len(classes)); columns of W outside the subset
    receive no gradient at all.
    """
    classes = np.asarray(classes, dtype=np.int64)
    w_cols = params.output_weights[:, classes]
    d_embeddings = d_logits @ w_cols.T
    d_w_cols = embeddings.T @ d_logits
    return d_embeddings, d_w_cols


def backward(
    params: ModelParams, trace: ForwardTrace, d_embeddings: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backpropagate d_embeddings through the backbone.

    Returns [(d_weight, d_bias)] per layer in declaration order. Exact
    analytic gradient of whatever scalar produced d_embeddings; the
    rectifier passes gradient only where the pre-activation is > 0, and
    max-pool routes gradient to the first maximum of each window.
    """
    cfg = params.config
    if d_embeddings.shape[0] != trace.batch:
        raise ValueError("trace does not match batch")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(cfg.layers)
    d_x = d_embeddings.astype(cfg.np_dtype, copy=False)
    pool_flags = list(trace.pooled)
    for i in range(len(cfg.layers) - 1, -1, -1):
        layer = cfg.layers[i]
        x_in = trace.inputs[i]
        z = trace.pre_acts[i]
        if layer[0] == "fc":
            d_z = d_x * (z > 0)
            d_w = x_in.T @ d_z
            d_b = d_z.sum(axis=0)
            d_x = d_z @ params.weights[i].T
            if i > 0 and cfg.layers[i - 1][0] == "conv":
                # undo the flatten that fed this fc layer
                b = x_in.shape[0]
                prev_z = trace.pre_acts[i - 1]
                hp, wp, c = _post_pool_shape(prev_z.shape, pool_flags[i - 1])
                d_x = d_x.reshape(b, hp, wp, c)
        else:
            ks = layer[1]
            a = np.maximum(z, 0)
            if pool_flags[i]:
                wins = _pool_windows(a)
                b, hp, wp, _, c = wins.shape
                arg = wins.argmax(axis=3)
                d_wins = np.zeros_like(wins)
                np.put_along_axis(d_wins, arg[:, :, :, None, :], d_x[:, :, :, None, :], axis=3)
                d_a = np.zeros_like(a)
                d_a[:, : hp * 2, : wp * 2, :] = (
                    d_wins.reshape(b, hp, wp, 2, 2, c)
                    .transpose(0, 1, 3, 2, 4, 5)
                    .reshape(b, hp * 2, wp * 2, c)
                )
            else:
                d_a = d_x
            d_z = d_a * (z > 0)
            cols = _im2col(x_in, ks)
            flat_cols = cols.reshape(-1, cols.shape[-1])
            flat_dz = d_z.reshape(-1, d_z.shape[-1])
            d_w = (flat_cols.T @ flat_dz).reshape(params.weights[i].shape)
            d_b = flat_dz.sum(axis=0)
            d_cols = (flat_dz @ params.weights[i].reshape(-1, d_z.shape[-1]).T).reshape(
                d_z.shape[0], d_z.shape[1], d_z.shape[2], ks, ks, x_in.shape[3]
            )
            d_x = np.zeros_like(x_in)
            ho, wo = d_z.shape[1], d_z.shape[2]
            for r in range(ks):
                for s in range(ks):
                    d_x[:, r : r + ho, s : s + wo, :] += d_cols[:, :, :, r, s, :]
        grads[i] = (d_w, d_b)
    return grads


def _post_pool_shape(pre_shape, pooled: bool):
    """Spatial shape after the optional 2x2 pool, given the pre-activation shape."""
    _, h, w, c = pre_shape
    if pooled:
        return h // 2, w // 2, c
    return h, w, c


def param_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Named arrays in declaration order; the checkpoint serialization order."""
    out = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out.append((f"layer{i}.weight", w))
        out.append((f"layer{i}.bias", b))
    out.append(("output.weight", params.output_weights))
    return out


def save_checkpoint(
    path: str,
    params: ModelParams,
    rng_algo: str,
    rng_state: dict,
    step: int,
    lr: float,
) -> None:
    """Write the WLCKPT1 checkpoint atomically (temp file, then rename)."""
    cfg = params.config
    lines = [
        CHECKPOINT_MAGIC.decode("ascii").rstrip("\n"),
        f"config={cfg.to_json()}",
        f"k={params.k}",
        f"dtype={cfg.dtype}",
        f"rng_algo={rng_algo}",
        f"rng_state={json.dumps(rng_state, sort_keys=True, separators=(',', ':'))}",
        f"step={int(step)}",
        f"lr={lr!r}",
    ]
    arrays = param_arrays(params)
    lines.append(f"arrays={len(arrays)}")
    le_dtype = "<f4" if cfg.dtype == "f32" else "<f8"
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for name, arr in arrays:
            shape = ",".join(str(d) for d in arr.shape)
            fh.write(f"array={name} shape={shape} dtype={cfg.dtype}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(arr, dtype=le_dtype).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[ModelParams, dict]:
    """Read a WLCKPT1 checkpoint; returns (params, meta).

    meta carries rng_algo, rng_state, step and lr exactly as stored.
    """
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError("malformed checkpoint")
        header: dict[str, str] = {}
        for key in ("config", "k", "dtype", "rng_algo", "rng_state", "step", "lr", "arrays"):
            line = fh.readline().decode("ascii").rstrip("\n")
            if not line.startswith(key + "="):
                raise ValueError(f"malformed checkpoint header near {key!r}")
            header[key] = line[len(key) + 1 :]
        cfg = ModelConfig.from_json(header["config"])
        if cfg.dtype != header["dtype"]:
            raise ValueError("checkpoint dtype mismatch")
        le_dtype = "<f4" if cfg.dtype == "f32" else "<f8"
        itemsize = 4 if cfg.dtype == "f32" else 8
        named: dict[str, np.ndarray] = {}
        for _ in range(int(header["arrays"])):
            line = fh.readline().decode("ascii").rstrip("\n")
            m = _ARRAY_LINE.match(line)
            if m is None:
                raise ValueError(f"malformed array line: {line!r}")
            shape = tuple(int(d) for d in m.group(2).split(",")) if m.group(2) else ()
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * itemsize)
            if len(raw) != count * itemsize:
                raise ValueError("truncated checkpoint array")
            named[m.group(1)] = np.frombuffer(raw, dtype=le_dtype).reshape(shape).copy()
    weights, biases = [], []
    for i in range(len(cfg.layers)):
        weights.append(named[f"layer{i}.weight"])
        biases.append(named[f"layer{i}.bias"])
    params = ModelParams(
        config=cfg, weights=weights, biases=biases, output_weights=named["output.weight"]
    )
    if params.k != int(header["k"]):
        raise ValueError("checkpoint k mismatch")
    meta = {
        "rng_algo": header["rng_algo"],
        "rng_state": json.loads(header["rng_state"]),
        "step": int(header["step"]),
        "lr": float(header["lr"]),
    }
    return params, meta
