"""Small post-norm Transformer encoder that classifies windows of records.

Every window is a ``seq_len x feature_dim`` matrix.  The forward pass is:
input projection, sinusoidal positional encoding, ``num_blocks`` x (multi-head
self-attention, residual, layer norm, FFN, residual, layer norm), mean pooling,
a 2-way linear head and a softmax.  Gradients are derived by hand; parameters
live in a flat ``name -> ndarray`` dict so the optimizer and the gradient
checks can treat them uniformly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import FlopCounter, ShapeError, as_dense, matmul, softmax_rows

log = logging.getLogger(__name__)

LN_EPS = 1e-5


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    if seq_len <= 0 or d_model <= 0:
        raise ValueError("seq_len and d_model must be positive")
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def scaled_dot_attention(q, k, v, counter: FlopCounter | None = None) -> np.ndarray:
    q, k, v = as_dense(q), as_dense(k), as_dense(v)
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} do not chain")
    weights = softmax_rows(matmul(q, k.T, counter) / math.sqrt(q.shape[1]))
    return matmul(weights, v, counter)


def multi_head_attention(x, wq, wk, wv, wo, counter: FlopCounter | None = None) -> np.ndarray:
    """Self-attention with per-head projection lists ``wq``/``wk``/``wv`` and output map ``wo``."""
    x = as_dense(x)
    heads = len(wq)
    if heads == 0 or x.shape[1] % heads:
        raise ValueError(f"{heads} heads do not divide width {x.shape[1]}")
    outs = [
        scaled_dot_attention(matmul(x, q, counter), matmul(x, k, counter), matmul(x, v, counter), counter)
        for q, k, v in zip(wq, wk, wv)
    ]
    return matmul(np.concatenate(outs, axis=1), wo, counter)


def ffn_forward(z, w1, b1, w2, b2, counter: FlopCounter | None = None) -> np.ndarray:
    z = as_dense(z)
    hidden = np.maximum(0.0, matmul(z, w1, counter) + b1)
    return matmul(hidden, w2, counter) + b2


def layer_norm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + LN_EPS)
    return (x - mu) * inv, inv


def layer_norm_backward(dy: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (dy - dy.mean(axis=1, keepdims=True) - y * (dy * y).mean(axis=1, keepdims=True))


@dataclass
class TransformerConfig:
    feature_dim: int
    seq_len: int = 128
    d_model: int = 32
    num_heads: int = 4
    num_blocks: int = 2
    d_ff: int = 64
    use_positional_encoding: bool = True

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"num_heads {self.num_heads} must divide d_model {self.d_model}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sinusoidal encoding")

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads


@dataclass
class TransformerModel:
    config: TransformerConfig
    params: dict[str, np.ndarray]
    epochs_trained: int = 0
    best_val_loss: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._pe = None

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def pe(self) -> np.ndarray:
        if self._pe is None:
            self._pe = positional_encoding(self.config.seq_len, self.config.d_model)
        return self._pe

    def block(self, b: int) -> dict:
        c = self.config
        p = self.params
        return {
            "wq": [p[f"b{b}.h{h}.wq"] for h in range(c.num_heads)],
            "wk": [p[f"b{b}.h{h}.wk"] for h in range(c.num_heads)],
            "wv": [p[f"b{b}.h{h}.wv"] for h in range(c.num_heads)],
            "wo": p[f"b{b}.wo"],
            "w1": p[f"b{b}.w1"],
            "b1": p[f"b{b}.b1"],
            "w2": p[f"b{b}.w2"],
            "b2": p[f"b{b}.b2"],
        }

    def copy(self) -> "TransformerModel":
        return TransformerModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.epochs_trained,
            self.best_val_loss,
            list(self.warnings),
        )

    def to_dict(self) -> dict:
        return {
            "config": dict(self.config.__dict__),
            "params": {k: v.tolist() for k, v in self.params.items()},
            "epochs_trained": self.epochs_trained,
            "best_val_loss": self.best_val_loss,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerModel":
        params = {}
        for k, v in d["params"].items():
            a = np.asarray(v, dtype=np.float64)
            params[k] = a if a.ndim == 2 else a.reshape(len(v), -1)
        return cls(
            TransformerConfig(**d["config"]),
            params,
            int(d["epochs_trained"]),
            d["best_val_loss"],
            list(d.get("warnings", [])),
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_transformer(config: TransformerConfig, seed: int = 0) -> TransformerModel:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    c = config
    p = {"proj": _glorot(rng, c.feature_dim, c.d_model)}
    for b in range(c.num_blocks):
        for h in range(c.num_heads):
            for name in ("wq", "wk", "wv"):
                p[f"b{b}.h{h}.{name}"] = _glorot(rng, c.d_model, c.d_k)
        p[f"b{b}.wo"] = _glorot(rng, c.d_model, c.d_model)
        p[f"b{b}.w1"] = _glorot(rng, c.d_model, c.d_ff)
        p[f"b{b}.b1"] = np.zeros((1, c.d_ff))
        p[f"b{b}.w2"] = _glorot(rng, c.d_ff, c.d_model)
        p[f"b{b}.b2"] = np.zeros((1, c.d_model))
    p["head_w"] = _glorot(rng, c.d_model, 2)
    p["head_b"] = np.zeros((1, 2))
    return TransformerModel(c, p)


def _check_window(model: TransformerModel, window) -> np.ndarray:
    window = as_dense(window)
    c = model.config
    if window.shape != (c.seq_len, c.feature_dim):
        raise ValueError(
            f"window shape {window.shape} != expected ({c.seq_len}, {c.feature_dim})"
        )
    return window


def _forward(model: TransformerModel, window: np.ndarray, counter: FlopCounter | None = None):
    c = model.config
    p = model.params
    cache = {"x": window}
    h = matmul(window, p["proj"], counter)
    if c.use_positional_encoding:
        h = h + model.pe()
    scale = 1.0 / math.sqrt(c.d_k)
    blocks = []
    for b in range(c.num_blocks):
        bp = model.block(b)
        bc = {"h": h, "heads": []}
        outs = []
        for wq, wk, wv in zip(bp["wq"], bp["wk"], bp["wv"]):
            q = matmul(h, wq, counter)
            k = matmul(h, wk, counter)
            v = matmul(h, wv, counter)
            attn = softmax_rows(matmul(q, k.T, counter) * scale)
            outs.append(matmul(attn, v, counter))
            bc["heads"].append((q, k, v, attn))
        concat = np.concatenate(outs, axis=1)
        bc["concat"] = concat
        n1, inv1 = layer_norm(h + matmul(concat, bp["wo"], counter))
        z1 = matmul(n1, bp["w1"], counter) + bp["b1"]
        hidden = np.maximum(z1, 0.0)
        n2, inv2 = layer_norm(n1 + matmul(hidden, bp["w2"], counter) + bp["b2"])
        bc.update(n1=n1, inv1=inv1, z1=z1, hidden=hidden, n2=n2, inv2=inv2)
        blocks.append(bc)
        h = n2
    pooled = h.mean(axis=0, keepdims=True)
    logits = matmul(pooled, p["head_w"], counter) + p["head_b"]
    probs = softmax_rows(logits)
    cache.update(blocks=blocks, pooled=pooled, probs=probs)
    return probs, cache


def encoder_forward(model: TransformerModel, window, counter: FlopCounter | None = None):
    """Class probabilities [normal, anomaly] and the pooled representation."""
    window = _check_window(model, window)
    probs, cache = _forward(model, window, counter)
    return {"probs": probs[0], "pooled": cache["pooled"]}


def anomaly_probability(model: TransformerModel, windows) -> np.ndarray:
    return np.array([encoder_forward(model, w)["probs"][1] for w in windows])


def _backward(model: TransformerModel, cache: dict, label: int, weight: float) -> dict[str, np.ndarray]:
    """Gradient of ``weight * -log p[label]`` w.r.t. every parameter."""
    c = model.config
    p = model.params
    grads: dict[str, np.ndarray] = {}
    dlogits = cache["probs"].copy()
    dlogits[0, label] -= 1.0
    dlogits *= weight
    grads["head_w"] = cache["pooled"].T @ dlogits
    grads["head_b"] = dlogits
    dpooled = dlogits @ p["head_w"].T
    dh = np.repeat(dpooled / c.seq_len, c.seq_len, axis=0)
    scale = 1.0 / math.sqrt(c.d_k)
    for b in range(c.num_blocks - 1, -1, -1):
        bc = cache["blocks"][b]
        bp = model.block(b)
        dr2 = layer_norm_backward(dh, bc["n2"], bc["inv2"])
        grads[f"b{b}.w2"] = bc["hidden"].T @ dr2
        grads[f"b{b}.b2"] = dr2.sum(axis=0, keepdims=True)
        dz1 = (dr2 @ bp["w2"].T) * (bc["z1"] > 0)
        grads[f"b{b}.w1"] = bc["n1"].T @ dz1
        grads[f"b{b}.b1"] = dz1.sum(axis=0, keepdims=True)
        dn1 = dr2 + dz1 @ bp["w1"].T
        dr1 = layer_norm_backward(dn1, bc["n1"], bc["inv1"])
        grads[f"b{b}.wo"] = bc["concat"].T @ dr1
        dconcat = dr1 @ bp["wo"].T
        h_in = bc["h"]
        dh = dr1.copy()
        for hd, (q, k, v, attn) in enumerate(bc["heads"]):
            do = dconcat[:, hd * c.d_k : (hd + 1) * c.d_k]
            dattn = do @ v.T
            dv = attn.T @ do
            ds = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.T @ q
            grads[f"b{b}.h{hd}.wq"] = h_in.T @ dq
            grads[f"b{b}.h{hd}.wk"] = h_in.T @ dk
            grads[f"b{b}.h{hd}.wv"] = h_in.T @ dv
            dh += dq @ bp["wq"][hd].T + dk @ bp["wk"][hd].T + dv @ bp["wv"][hd].T
    grads["proj"] = cache["x"].T @ dh
    return grads


def loss_and_grads(model: TransformerModel, windows, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the windows and its analytic gradient."""
    n = len(windows)
    if n == 0 or n != len(labels):
        raise ValueError("need equally many (>= 1) windows and labels")
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    for w, y in zip(windows, labels):
        probs, cache = _forward(model, _check_window(model, w))
        total -= math.log(max(probs[0, int(y)], 1e-300))
        for k, g in _backward(model, cache, int(y), 1.0 / n).items():
            grads[k] += g
    return total / n, grads


def cross_entropy(model: TransformerModel, windows, labels) -> float:
    total = 0.0
    for w, y in zip(windows, labels):
        probs, _ = _forward(model, _check_window(model, w))
        total -= math.log(max(probs[0, int(y)], 1e-300))
    return total / len(windows)


def forward_flops(model: TransformerModel) -> int:
    """Analytic matmul FLOPs of one window forward pass."""
    counter = FlopCounter()
    _forward(model, np.zeros((model.config.seq_len, model.config.feature_dim)), counter)
    return counter.flops


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.001
    patience: int = 10
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


def train_classifier(
    model: TransformerModel,
    windows,
    labels,
    config: TrainConfig | None = None,
    val_windows=None,
    val_labels=None,
) -> TransformerModel:
    """Minibatch Adam on cross-entropy with early stopping on validation loss.

    Returns a new model holding the parameters with the best validation loss
    (training loss when no validation windows are given).
    """
    config = config or TrainConfig()
    windows = [_check_window(model, w) for w in windows]
    labels = np.asarray(labels, dtype=np.int64)
    if not windows:
        raise ValueError("no training windows")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    model = model.copy()
    if len(np.unique(labels)) < 2:
        msg = "training labels contain a single class"
        log.warning(msg)
        model.warnings.append(msg)
    if config.epochs <= 0:
        return model

    has_val = val_windows is not None and len(val_windows) > 0
    if has_val:
        val_windows = [_check_window(model, w) for w in val_windows]
        val_labels = np.asarray(val_labels, dtype=np.int64)

    def monitored() -> float:
        if has_val:
            return cross_entropy(model, val_windows, val_labels)
        return cross_entropy(model, windows, labels)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(4,)))
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    s = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    best = model.copy()
    best_loss = monitored()
    best.best_val_loss = best_loss
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(windows))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = loss_and_grads(model, [windows[i] for i in idx], labels[idx])
            step += 1
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            for k, g in grads.items():
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g
                s[k] = config.beta2 * s[k] + (1.0 - config.beta2) * g * g
                model.params[k] -= config.lr * (m[k] / c1) / (np.sqrt(s[k] / c2) + config.adam_eps)
        model.epochs_trained = epoch + 1
        loss = monitored()
        if loss < best_loss:
            best_loss = loss
            best = model.copy()
            best.best_val_loss = loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d (best loss %.6f)", epoch + 1, best_loss)
                break
    return best
