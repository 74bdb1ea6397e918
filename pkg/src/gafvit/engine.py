"""Training machinery: parameter store, cross-entropy, AdamW, dataset
splitting, the fit loop, checkpoints, and finite-difference gradient checks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (LabelOutOfRange, NonFiniteGradient, OutOfRange,
                     SchemaError, ShapeMismatch, TooFewSamples)


class ParamStore:
    """Ordered, uniquely named trainable tensors plus bookkeeping state."""

    def __init__(self, seed=0):
        self._params = {}
        self.seed = int(seed)
        self.step = 0

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def add_named(self, pairs):
        for name, tensor in pairs:
            self.add(name, tensor)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def n_values(self):
        return sum(t.value.size for t in self._params.values())

    def zero_grads(self):
        # parameters never touched by a backward pass keep explicit zeros
        for t in self._params.values():
            t.grad = np.zeros_like(t.value)

    def snapshot(self):
        return {name: t.value.copy() for name, t in self._params.items()}

    def load_values(self, values):
        for name, t in self._params.items():
            if name not in values:
                raise ShapeMismatch(f"missing parameter {name!r} in loaded values")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.value.shape:
                raise ShapeMismatch(
                    f"parameter {name!r} has shape {arr.shape}, expected {t.value.shape}")
            t.value = arr.copy()


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-5
    epochs: int = 50
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    split: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))
        if self.batch_size < 1:
            raise OutOfRange(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise OutOfRange(f"epochs must be non-negative, got {self.epochs}")
        if self.learning_rate <= 0:
            raise OutOfRange(f"learning_rate must be positive, got {self.learning_rate}")
        if len(self.split) != 3 or any(s <= 0 for s in self.split):
            raise OutOfRange(f"split needs three positive fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise OutOfRange(f"split fractions must sum to 1, got {self.split}")


def cross_entropy(logits, labels) -> ad.Tensor:
    """Mean cross-entropy via log-sum-exp; safe for extreme scores."""
    x = logits if isinstance(logits, ad.Tensor) else ad.Tensor(logits)
    if x.value.ndim == 1:
        x = ad.reshape(x, (1,) + x.value.shape)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, k = x.value.shape
    if labels.shape != (batch,):
        raise ShapeMismatch(f"{labels.shape} labels for {batch} rows of scores")
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise LabelOutOfRange(f"label {bad} outside [0, {k})")
    onehot = np.eye(k)[labels]
    picked = ad.mul(ad.log_softmax(x, axis=-1), onehot)
    return ad.div(ad.neg(ad.tsum(picked)), float(batch))


class AdamW:
    """Adam with decoupled weight decay applied straight to the weights."""

    def __init__(self, store: ParamStore, config: TrainConfig):
        self.store = store
        self.config = config
        self._m = {name: np.zeros_like(t.value) for name, t in store.items()}
        self._v = {name: np.zeros_like(t.value) for name, t in store.items()}

    def step(self):
        cfg = self.config
        t = self.store.step + 1
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p in self.store.items():
            if not p.requires_grad:
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.value = p.value - cfg.learning_rate * update - cfg.learning_rate * cfg.weight_decay * p.value
        self.store.step = t


def split_dataset(items, config: TrainConfig):
    """Shuffle once with the config seed, carve off validation and test tails.

    Validation and test sizes are floors of their fractions; training keeps
    the remainder.
    """
    n = len(items)
    if n < 10:
        raise TooFewSamples(f"need at least 10 samples to split, got {n}")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = int(np.floor(n * config.split[1]))
    n_test = int(np.floor(n * config.split[2]))
    n_train = n - n_val - n_test
    idx_train = perm[:n_train]
    idx_val = perm[n_train:n_train + n_val]
    idx_test = perm[n_train + n_val:]

    def take(idx):
        if isinstance(items, np.ndarray):
            return items[idx]
        return [items[i] for i in idx]

    return take(idx_train), take(idx_val), take(idx_test)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    best_params: dict


def predict(model, inputs, batch_size=64):
    """Class scores and argmax labels, batched, no graph construction."""
    outputs = []
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            logits = model.forward_batch(inputs[start:start + batch_size])
            outputs.append(logits.value)
    scores = np.concatenate(outputs, axis=0) if outputs else np.zeros((0, 1))
    return np.argmax(scores, axis=1), scores


def evaluate(model, inputs, labels, batch_size=64):
    """Mean loss and accuracy over a prepared input array."""
    total_loss = 0.0
    hits = 0
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            xb = inputs[start:start + batch_size]
            yb = labels[start:start + batch_size]
            logits = model.forward_batch(xb)
            total_loss += float(cross_entropy(logits, yb).value) * len(yb)
            hits += int(np.sum(np.argmax(logits.value, axis=1) == yb))
    n = len(inputs)
    return total_loss / n, hits / n


def fit(model, inputs, labels, config: TrainConfig, log=None):
    """Minibatch AdamW training with a fixed split and per-epoch validation.

    Epoch statistics for the training part are measured on the pre-update
    scores of each minibatch, so they describe the model as it saw the data.
    The best parameter snapshot minimizes validation loss; earlier epochs win
    ties.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) != len(labels):
        raise ShapeMismatch(f"{len(inputs)} inputs but {len(labels)} labels")
    idx_train, idx_val, idx_test = split_dataset(np.arange(len(inputs)), config)
    x_train, y_train = inputs[idx_train], labels[idx_train]
    x_val, y_val = inputs[idx_val], labels[idx_val]

    optimizer = AdamW(model.params, config)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5E1D]))
    history = []
    best_val = np.inf
    best_epoch = 0
    best_params = model.params.snapshot()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        loss_sum = 0.0
        hits = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            xb, yb = x_train[batch], y_train[batch]
            model.params.zero_grads()
            logits = model.forward_batch(xb)
            loss = cross_entropy(logits, yb)
            ad.backward(loss)
            optimizer.step()
            loss_sum += float(loss.value) * len(batch)
            hits += int(np.sum(np.argmax(logits.value, axis=1) == yb))
        val_loss, val_acc = evaluate(model, x_val, y_val, batch_size=config.batch_size)
        stats = EpochStats(epoch=epoch,
                           train_loss=loss_sum / len(x_train),
                           train_acc=hits / len(x_train),
                           val_loss=val_loss,
                           val_acc=val_acc)
        history.append(stats)
        if log is not None:
            log(f"epoch {epoch:3d}  train_loss {stats.train_loss:.6f}  "
                f"train_acc {stats.train_acc:.4f}  val_loss {val_loss:.6f}  "
                f"val_acc {val_acc:.4f}")
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = model.params.snapshot()

    return TrainResult(history=history, best_epoch=best_epoch,
                       best_val_loss=float(best_val) if np.isfinite(best_val) else float("inf"),
                       best_params=best_params)


# -- checkpoint format ---------------------------------------------------------
# line 1: JSON manifest {format, version, seed, step, config, params:[{name,
# shape, offset}]}; then raw little-endian float64 payloads back to back.

CHECKPOINT_FORMAT = "gvt"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, store: ParamStore, config=None, params=None):
    values = params if params is not None else {n: t.value for n, t in store.items()}
    entries = []
    offset = 0
    payload = []
    for name in store.names():
        arr = np.asarray(values[name], dtype="<f8")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # 0-d arrays are contiguous; never reshaped here
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": store.seed,
        "step": store.step,
        "config": config or {},
        "params": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("ascii"))
        fh.write(b"\n")
        for chunk in payload:
            fh.write(chunk)


@dataclass
class Checkpoint:
    params: dict
    config: dict
    seed: int
    step: int


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode("ascii", errors="replace"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not a checkpoint file: {path}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"not a checkpoint file: {path}")
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return Checkpoint(params=params, config=manifest.get("config", {}),
                      seed=manifest.get("seed", 0), step=manifest.get("step", 0))


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for row in history:
            fh.write(f"{row.epoch},{row.train_loss!r},{row.train_acc!r},"
                     f"{row.val_loss!r},{row.val_acc!r}\n")


def read_history_csv(path):
    history = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "epoch,train_loss,train_acc,val_loss,val_acc":
            raise ShapeMismatch(f"unexpected history header: {header}")
        for line in fh:
            e, tl, ta, vl, va = line.strip().split(",")
            history.append(EpochStats(int(e), float(tl), float(ta), float(vl), float(va)))
    return history


# -- finite-difference gradient checking ----------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float


@dataclass
class GradCheckReport:
    entries: list
    max_rel_err: float

    def within(self, tolerance):
        return self.max_rel_err < tolerance


def grad_check(loss_fn, store: ParamStore, step=1e-5, include=None) -> GradCheckReport:
    """Compare backpropagated gradients against central differences.

    loss_fn must rebuild the forward graph from the store's current values on
    every call. include, when given, restricts the check to parameter names
    with any of those prefixes. Frozen tensors are skipped.
    """
    store.zero_grads()
    loss = loss_fn()
    ad.backward(loss)
    analytic = {name: t.grad.copy() for name, t in store.items()}

    entries = []
    worst = 0.0
    for name, p in store.items():
        if not p.requires_grad:
            continue
        if include is not None and not any(name.startswith(pre) for pre in include):
            continue
        flat = p.value.reshape(-1)
        numeric = np.zeros_like(flat)
        with ad.no_grad():
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + step
                f_plus = float(loss_fn().value)
                flat[i] = saved - step
                f_minus = float(loss_fn().value)
                flat[i] = saved
                numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
        rel = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        entries.append(GradCheckEntry(name=name, max_rel_err=rel))
        worst = max(worst, rel)
    return GradCheckReport(entries=entries, max_rel_err=worst)
