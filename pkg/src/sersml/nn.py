"""A small 1-D convolutional classifier with hand-written backpropagation.

Layout (channels last, valid convolutions, stride 1)::

    x (B, L) -> conv k x 64, relu -> conv k x 64, relu -> dropout
      -> maxpool 2 -> flatten -> dense 100, relu -> dense n_c, softmax

Everything runs in float64. Training uses Adam on shuffled mini-batches and
a categorical cross-entropy loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from sersml._parallel import child_rng
from sersml.errors import ConfigError, NumericalDivergence, ShapeMismatch

PROB_FLOOR = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")


@dataclass(frozen=True)
class CnnConfig:
    filters: int = 64
    kernel_size: int = 3
    dropout: float = 0.5
    pool: int = 2
    hidden: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 50
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch size must be >= 1 and epochs >= 0")
        if min(self.filters, self.kernel_size, self.pool, self.hidden) < 1:
            raise ConfigError("layer sizes must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def layer_shapes(input_length: int, config: CnnConfig) -> dict[str, tuple[int, ...]]:
    """Activation shapes (per sample) for an input of ``input_length``."""
    k, F = config.kernel_size, config.filters
    if k >= input_length:
        raise ConfigError(f"kernel width {k} must be smaller than input length {input_length}")
    l1 = input_length - k + 1
    l2 = l1 - k + 1
    pooled = l2 // config.pool
    if pooled < 1:
        raise ConfigError(f"input length {input_length} too short for two convolutions and pooling")
    return {"conv1": (l1, F), "conv2": (l2, F), "pool": (pooled, F),
            "flat": (pooled * F,), "hidden": (config.hidden,)}


@dataclass(eq=False)
class Network:
    input_length: int
    n_classes: int
    config: CnnConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    kind = "cnn"

    def __post_init__(self):
        shapes = layer_shapes(self.input_length, self.config)
        k, F, H = self.config.kernel_size, self.config.filters, self.config.hidden
        expected = {
            "W1": (k, 1, F), "b1": (F,), "W2": (k, F, F), "b2": (F,),
            "W3": (shapes["flat"][0], H), "b3": (H,), "W4": (H, self.n_classes), "b4": (self.n_classes,),
        }
        if not self.params:
            rng = child_rng(self.config.seed, "cnn-init")
            for name in PARAM_NAMES:
                shape = expected[name]
                if name.startswith("b"):
                    self.params[name] = np.zeros(shape)
                else:
                    fan_in = int(np.prod(shape[:-1]))
                    limit = np.sqrt(6.0 / fan_in)
                    self.params[name] = rng.uniform(-limit, limit, size=shape)
        for name in PARAM_NAMES:
            p = np.asarray(self.params[name], dtype=np.float64)
            if p.shape != expected[name]:
                raise ShapeMismatch(f"{name} has shape {p.shape}, expected {expected[name]}")
            self.params[name] = p

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return layer_shapes(self.input_length, self.config)

    def predict(self, X) -> np.ndarray:
        return cnn_predict(self, X)

    def copy(self) -> "Network":
        return Network(self.input_length, self.n_classes, self.config,
                       {k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {"input_length": self.input_length, "n_classes": self.n_classes,
                "config": self.config.to_dict(),
                "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                           for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        params = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in d["params"].items()}
        return cls(int(d["input_length"]), int(d["n_classes"]), CnnConfig(**d["config"]), params)


def _conv_forward(a: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Valid 1-D convolution of ``a`` (B, L, C) with ``W`` (k, C, F)."""
    k, C, F = W.shape
    cols = sliding_window_view(a, k, axis=1)  # (B, L-k+1, C, k)
    B, L_out = cols.shape[:2]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(B * L_out, k * C)
    z = (cols @ W.reshape(k * C, F)).reshape(B, L_out, F) + b
    return z, cols


def _conv_backward(dz: np.ndarray, cols: np.ndarray, W: np.ndarray, in_len: int):
    k, C, F = W.shape
    B, L_out, _ = dz.shape
    dz2d = dz.reshape(B * L_out, F)
    dW = (cols.T @ dz2d).reshape(k, C, F)
    db = dz.sum(axis=(0, 1))
    dcols = (dz2d @ W.reshape(k * C, F).T).reshape(B, L_out, k, C)
    da = np.zeros((B, in_len, C))
    for j in range(k):
        da[:, j:j + L_out, :] += dcols[:, :, j, :]
    return da, dW, db


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(net: Network, X: np.ndarray, train: bool, rng: np.random.Generator | None):
    P = net.params
    cfg = net.config
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_length:
        raise ShapeMismatch(f"batch rows have length {X.shape[-1]}, network expects {net.input_length}")
    c = {"x": X[:, :, None]}
    c["z1"], c["cols1"] = _conv_forward(c["x"], P["W1"], P["b1"])
    c["a1"] = np.maximum(c["z1"], 0.0)
    c["z2"], c["cols2"] = _conv_forward(c["a1"], P["W2"], P["b2"])
    c["a2"] = np.maximum(c["z2"], 0.0)
    if train and cfg.dropout > 0:
        keep = 1.0 - cfg.dropout
        c["mask"] = (rng.random(c["a2"].shape) < keep) / keep
        c["drop"] = c["a2"] * c["mask"]
    else:
        c["drop"] = c["a2"]
    B, l2, F = c["drop"].shape
    pooled = l2 // cfg.pool
    win = c["drop"][:, :pooled * cfg.pool].reshape(B, pooled, cfg.pool, F)
    c["argmax"] = win.argmax(axis=2)
    c["pool"] = np.take_along_axis(win, c["argmax"][:, :, None, :], axis=2)[:, :, 0, :]
    c["flat"] = c["pool"].reshape(B, -1)
    c["z3"] = c["flat"] @ P["W3"] + P["b3"]
    c["a3"] = np.maximum(c["z3"], 0.0)
    c["z4"] = c["a3"] @ P["W4"] + P["b4"]
    c["p"] = _softmax(c["z4"])
    return c


def _backward(net: Network, c: dict, Y: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy with respect to every parameter."""
    P = net.params
    cfg = net.config
    B = Y.shape[0]
    g = {}
    dz4 = (c["p"] - Y) / B
    g["W4"] = c["a3"].T @ dz4
    g["b4"] = dz4.sum(axis=0)
    dz3 = (dz4 @ P["W4"].T) * (c["z3"] > 0)
    g["W3"] = c["flat"].T @ dz3
    g["b3"] = dz3.sum(axis=0)
    dpool = (dz3 @ P["W3"].T).reshape(c["pool"].shape)
    _, l2, F = c["drop"].shape
    pooled = dpool.shape[1]
    dwin = np.zeros((B, pooled, cfg.pool, F))
    np.put_along_axis(dwin, c["argmax"][:, :, None, :], dpool[:, :, None, :], axis=2)
    ddrop = np.zeros_like(c["drop"])
    ddrop[:, :pooled * cfg.pool] = dwin.reshape(B, pooled * cfg.pool, F)
    da2 = ddrop * c["mask"] if "mask" in c else ddrop
    dz2 = da2 * (c["z2"] > 0)
    da1, g["W2"], g["b2"] = _conv_backward(dz2, c["cols2"], P["W2"], c["a1"].shape[1])
    dz1 = da1 * (c["z1"] > 0)
    _, g["W1"], g["b1"] = _conv_backward(dz1, c["cols1"], P["W1"], c["x"].shape[1])
    return g


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ShapeMismatch("label outside the network's class range")
    return np.eye(n_classes)[labels]


def cross_entropy(p: np.ndarray, Y: np.ndarray) -> float:
    return float(-(Y * np.log(np.clip(p, PROB_FLOOR, 1.0))).sum(axis=1).mean())


def cnn_forward(network: Network, batch, mode: str = "infer",
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities for each row; dropout is active only in train mode."""
    if mode not in ("train", "infer"):
        raise ConfigError("mode must be 'train' or 'infer'")
    if mode == "train" and rng is None:
        rng = np.random.default_rng(network.config.seed)
    return _forward(network, batch, mode == "train", rng)["p"]


def cnn_predict(network: Network, X, chunk: int = 256) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = [cnn_forward(network, X[s:s + chunk]).argmax(axis=1) for s in range(0, X.shape[0], chunk)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def _evaluate(network: Network, X: np.ndarray, y: np.ndarray, chunk: int = 256) -> tuple[float, float]:
    Y = one_hot(y, network.n_classes)
    losses, correct = 0.0, 0
    for s in range(0, X.shape[0], chunk):
        p = cnn_forward(network, X[s:s + chunk])
        losses += cross_entropy(p, Y[s:s + chunk]) * p.shape[0]
        correct += int((p.argmax(axis=1) == y[s:s + chunk]).sum())
    return losses / X.shape[0], correct / X.shape[0]


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for e in range(len(self)):
                w.writerow([e + 1, *(format(v, ".17g") for v in
                                     (self.train_loss[e], self.train_acc[e], self.val_loss[e], self.val_acc[e]))])
        return path


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def cnn_train(network: Network, X_train, y_train, X_val, y_val,
              config: CnnConfig | None = None) -> TrainHistory:
    """Train ``network`` in place; history is measured in infer mode after each epoch."""
    cfg = config or network.config
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if X_train.shape[0] == 0 or X_val.shape[0] == 0:
        raise ConfigError("training and validation sets must be non-empty")
    Y_train = one_hot(y_train, network.n_classes)
    opt = Adam(network.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    hist = TrainHistory()
    n = X_train.shape[0]
    for epoch in range(cfg.epochs):
        order = child_rng(cfg.seed, "cnn-shuffle", epoch).permutation(n)
        drop_rng = child_rng(cfg.seed, "cnn-dropout", epoch)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            cache = _forward(network, X_train[idx], True, drop_rng)
            if not np.isfinite(cross_entropy(cache["p"], Y_train[idx])):
                raise NumericalDivergence(f"non-finite loss in epoch {epoch + 1}", epoch + 1)
            opt.step(network.params, _backward(network, cache, Y_train[idx]))
        tl, ta = _evaluate(network, X_train, y_train)
        vl, va = _evaluate(network, X_val, y_val)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise NumericalDivergence(f"non-finite loss in epoch {epoch + 1}", epoch + 1)
        hist.train_loss.append(tl)
        hist.train_acc.append(ta)
        hist.val_loss.append(vl)
        hist.val_acc.append(va)
    return hist


def loss_and_gradients(network: Network, X, y) -> tuple[float, dict[str, np.ndarray]]:
    """Infer-mode loss and analytic gradients for a batch."""
    Y = one_hot(y, network.n_classes)
    cache = _forward(network, X, False, None)
    return cross_entropy(cache["p"], Y), _backward(network, cache, Y)


def numeric_gradients(network: Network, X, y, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of the infer-mode loss for every parameter."""
    Y = one_hot(y, network.n_classes)
    grads = {}
    for name in PARAM_NAMES:
        p = network.params[name]
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = cross_entropy(_forward(network, X, False, None)["p"], Y)
            flat[i] = orig - h
            down = cross_entropy(_forward(network, X, False, None)["p"], Y)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def gradient_check(network: Network, X, y, h: float = 1e-5) -> float:
    """Max over parameters of ``|g_a - g_f| / max(|g_a|, |g_f|, 1e-8)``."""
    _, analytic = loss_and_gradients(network, X, y)
    numeric = numeric_gradients(network, X, y, h)
    worst = 0.0
    for name in PARAM_NAMES:
        a, f = analytic[name], numeric[name]
        rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


def save_network(network: Network, path) -> Path:
    from sersml.models import save_model

    return save_model(network, path)


def load_network(path) -> Network:
    from sersml.models import load_model

    net = load_model(path)
    if not isinstance(net, Network):
        raise ConfigError(f"{path} does not hold a convolutional network")
    return net
