"""Feed-forward scenario-translation network (ReLU hidden layers, softmax output), numpy backprop."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainingConfig:
    batch_size: int = 32
    max_epochs: int = 100
    learning_rate: float = 1e-3
    patience: int = 10
    split: tuple = (0.70, 0.15, 0.15)
    hidden: tuple = (64, 64, 64)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainingTrace:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class RegressorModel:
    def __init__(self, n_h: int, n_c: int, n_s: int, hidden=(64, 64, 64), seed: int = 0):
        self.n_h, self.n_c, self.n_s = n_h, n_c, n_s
        self.layer_dims = [n_h + n_c + n_s, *hidden, n_s]
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            lim = np.sqrt(6.0 / fan_in)  # He-uniform
            self.weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.c_mean = np.zeros(n_c)
        self.c_std = np.ones(n_c)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def features(self, h, c, o) -> np.ndarray:
        h, c, o = np.atleast_2d(h), np.atleast_2d(c), np.atleast_2d(o)
        if h.shape[1] != self.n_h or c.shape[1] != self.n_c or o.shape[1] != self.n_s:
            raise ValueError(
                f"input dims (h={h.shape[1]}, c={c.shape[1]}, o={o.shape[1]}) do not match "
                f"model (h={self.n_h}, c={self.n_c}, o={self.n_s})"
            )
        n = max(len(h), len(c), len(o))
        h, c, o = (np.broadcast_to(a, (n, a.shape[1])) for a in (h, c, o))
        return np.hstack([h, (c - self.c_mean) / self.c_std, o])

    def forward(self, x: np.ndarray, keep: bool = False):
        acts = [x]
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i < len(self.weights) - 1:
                a = np.maximum(z, 0.0)
            else:
                a = softmax(z)
            acts.append(a)
        return (a, acts) if keep else a

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        p = self.forward(x)
        return float(-np.mean(np.sum(y * np.log(np.clip(p, 1e-300, None)), axis=1)))

    def gradients(self, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
        """Gradient of the batch-mean cross-entropy, ordered like ``params``."""
        p, acts = self.forward(x, keep=True)
        delta = (p * y.sum(axis=1, keepdims=True) - y) / len(x)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            gw = acts[i].T @ delta
            gb = delta.sum(axis=0)
            grads = [gw, gb] + grads
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return grads

    def copy(self) -> "RegressorModel":
        m = RegressorModel.__new__(RegressorModel)
        m.n_h, m.n_c, m.n_s = self.n_h, self.n_c, self.n_s
        m.layer_dims = list(self.layer_dims)
        m.weights = [w.copy() for w in self.weights]
        m.biases = [b.copy() for b in self.biases]
        m.c_mean, m.c_std = self.c_mean.copy(), self.c_std.copy()
        return m

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "dims": {"h": self.n_h, "c": self.n_c, "s": self.n_s},
            "layer_dims": self.layer_dims,
            "c_mean": self.c_mean.tolist(),
            "c_std": self.c_std.tolist(),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressorModel":
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported model format version")
        d = doc["dims"]
        dims = doc["layer_dims"]
        m = cls(d["h"], d["c"], d["s"], hidden=tuple(dims[1:-1]))
        m.weights = [np.array(w, dtype=float).reshape(a, b) for w, a, b in zip(doc["weights"], dims[:-1], dims[1:])]
        m.biases = [np.array(b, dtype=float) for b in doc["biases"]]
        m.c_mean = np.array(doc["c_mean"], dtype=float)
        m.c_std = np.array(doc["c_std"], dtype=float)
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "RegressorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: RegressorModel, h, c, o) -> np.ndarray:
    """Translated scenario distribution; a single row in gives a 1-D vector out."""
    single = np.ndim(h) == 1 and np.ndim(c) == 1 and np.ndim(o) == 1
    p = model.forward(model.features(h, c, o))
    return p[0] if single else p


def _arrays(dataset):
    h = np.array([d.h for d in dataset], dtype=float)
    c = np.array([d.c for d in dataset], dtype=float)
    o = np.array([d.o for d in dataset], dtype=float)
    y = np.array([d.label for d in dataset], dtype=float)
    return h, c, o, y


def split_indices(n: int, split, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_tr = int(round(split[0] * n))
    n_va = int(round(split[1] * n))
    return perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]


def train(dataset, config: TrainingConfig | None = None, seed: int = 0, splits=None):
    """Mini-batch Adam on mean cross-entropy with early stopping on validation loss.

    Returns ``(model, trace, (train_idx, val_idx, test_idx))``; the best
    validation-loss weights are restored before returning.
    """
    config = config or TrainingConfig()
    if not dataset:
        raise ValueError("empty dataset")
    h, c, o, y = _arrays(dataset)
    n = len(dataset)
    tr, va, te = splits if splits is not None else split_indices(n, config.split, seed)
    if len(va) == 0:
        va = tr
    model = RegressorModel(h.shape[1], c.shape[1], o.shape[1], hidden=config.hidden, seed=seed)
    model.c_mean = c[tr].mean(axis=0)
    std = c[tr].std(axis=0)
    model.c_std = np.where(std > 1e-12, std, 1.0)
    x = model.features(h, c, o)
    xtr, ytr, xva, yva = x[tr], y[tr], x[va], y[va]

    rng = np.random.default_rng(seed + 1)
    m1 = [np.zeros_like(p) for p in model.params]
    m2 = [np.zeros_like(p) for p in model.params]
    step = 0
    trace = TrainingTrace()
    best, best_val, stale = model.copy(), np.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(xtr))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            grads = model.gradients(xtr[idx], ytr[idx])
            step += 1
            params = model.params
            for k, (p, g) in enumerate(zip(params, grads)):
                m1[k] = config.beta1 * m1[k] + (1 - config.beta1) * g
                m2[k] = config.beta2 * m2[k] + (1 - config.beta2) * g * g
                mhat = m1[k] / (1 - config.beta1**step)
                vhat = m2[k] / (1 - config.beta2**step)
                p -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
        tl, vl = model.loss(xtr, ytr), model.loss(xva, yva)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise TrainingDiverged(epoch)
        trace.train_loss.append(tl)
        trace.val_loss.append(vl)
        if vl < best_val - 1e-12:
            best_val, best, stale = vl, model.copy(), 0
            trace.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                trace.stopped_early = True
                break
    return best, trace, (tr, va, te)


def evaluate(model: RegressorModel, test_set) -> dict:
    """Top-1 accuracy, macro precision/recall and MAE/RMSE over probability vectors.

    A predicted scenario counts as correct when its label mass ties the label
    maximum, since hardening labels can share their top value.
    """
    if not test_set:
        raise ValueError("empty test set")
    h, c, o, y = _arrays(test_set)
    p = predict(model, h, c, o)
    pred = p.argmax(axis=1)
    top = y.max(axis=1)
    hit = y[np.arange(len(y)), pred] >= top - 1e-9
    true = np.where(hit, pred, y.argmax(axis=1))
    classes = np.unique(np.concatenate([true, pred]))
    prec, rec = [], []
    for k in classes:
        tp = np.sum((pred == k) & (true == k))
        fp = np.sum((pred == k) & (true != k))
        fn = np.sum((pred != k) & (true == k))
        prec.append(tp / (tp + fp) if tp + fp else 0.0)
        rec.append(tp / (tp + fn) if tp + fn else 0.0)
    err = p - y
    return {
        "accuracy": float(hit.mean()),
        "precision": float(np.mean(prec)),
        "recall": float(np.mean(rec)),
        "mae": float(np.abs(err).mean()),
        "rmse": float(np.sqrt((err**2).mean())),
    }


def gradient_check(model: RegressorModel, sample, epsilon: float = 1e-5, n_sub: int | None = 500,
                   seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    ``sample`` is a list of TrainingInstance or an ``(x, y)`` pair of feature
    and label arrays. Checks every parameter when ``n_sub`` is None, else a
    random subsample of that many entries.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    if isinstance(sample, tuple):
        x, y = sample
    else:
        h, c, o, y = _arrays(sample)
        x = model.features(h, c, o)
    grads = model.gradients(x, y)
    params = model.params
    slots = [(k, i) for k, p in enumerate(params) for i in range(p.size)]
    if n_sub is not None and n_sub < len(slots):
        rng = np.random.default_rng(seed)
        slots = [slots[j] for j in rng.choice(len(slots), size=n_sub, replace=False)]
    worst = 0.0
    for k, i in slots:
        flat = params[k].reshape(-1)
        old = flat[i]
        flat[i] = old + epsilon
        lp = model.loss(x, y)
        flat[i] = old - epsilon
        lm = model.loss(x, y)
        flat[i] = old
        num = (lp - lm) / (2 * epsilon)
        ana = grads[k].reshape(-1)[i]
        denom = max(abs(num), abs(ana), 1e-6)
        worst = max(worst, abs(num - ana) / denom)
    return worst
