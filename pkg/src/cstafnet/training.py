"""Losses, Adam, and the mini-batch training loop with epoch-level
validation, early stopping with best-weight restoration, and
checkpoint-on-improvement."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, LabelError, ShapeError
from .model import clone_params, forward_tape, backward, named_arrays, save_checkpoint
from .numerics import RngState

_CLAMP = 1e-7


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1024
    epochs: int = 10
    val_fraction: float = 0.2
    patience: int = 5
    shuffle_seed: int = 0
    loss: str = "scce"

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"beta1/beta2 must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val fraction must be in (0, 1), got {self.val_fraction}")
        if self.loss not in ("bce", "scce"):
            raise ConfigError(f"loss must be bce or scce, got {self.loss!r}")

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "learning_rate", "beta1", "beta2", "eps", "batch_size", "epochs",
            "val_fraction", "patience", "shuffle_seed", "loss")}


def bce_loss(y, p):
    """Mean binary cross-entropy and its gradient w.r.t. the predicted
    probabilities. Probabilities are clamped to [1e-7, 1 - 1e-7] so
    boundary predictions stay finite."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64)
    flat = p.reshape(-1)
    clamped = np.clip(flat, _CLAMP, 1.0 - _CLAMP)
    loss = float(np.mean(-(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped))))
    grad = (clamped - y) / (clamped * (1.0 - clamped)) / y.size
    return loss, grad.reshape(p.shape)


def scce_loss(y, probs):
    """Mean sparse categorical cross-entropy -log(p[true]) and its
    gradient w.r.t. the probability rows (-1/p at the true index)."""
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=np.float64)
    n, n_classes = probs.shape
    bad = np.flatnonzero((y < 0) | (y >= n_classes))
    if bad.size:
        raise LabelError(
            f"label {int(y[bad[0]])} out of range [0, {n_classes}) at sample {int(bad[0])}")
    p_true = np.clip(probs[np.arange(n), y], _CLAMP, 1.0)
    loss = float(np.mean(-np.log(p_true)))
    grad = np.zeros_like(probs)
    grad[np.arange(n), y] = -1.0 / p_true / n
    return loss, grad


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def init_optimizer(arrays):
    state = OptimizerState()
    for name, arr in arrays.items():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(arrays, grads, state, cfg):
    """One Adam update, in place. Bias-corrected, with eps added outside
    the square root: theta -= lr * m_hat / (sqrt(v_hat) + eps)."""
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name, arr in arrays.items():
        g = grads[name]
        if g.shape != arr.shape:
            raise ShapeError(
                f"gradient for {name} has shape {g.shape}, parameter is {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        arr -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return arrays, state


class EarlyStopping:
    """Patience-based stopper: strict validation-loss decrease counts as
    improvement; after `patience` consecutive non-improving epochs the
    loop halts and the best snapshot is restored."""

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, loss, epoch):
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""


def _accuracy_counts(outputs, y, loss_kind):
    if loss_kind == "bce":
        pred = (outputs.reshape(-1) >= 0.5).astype(np.int64)
    else:
        pred = np.argmax(outputs, axis=1)
    return int(np.sum(pred == np.asarray(y)))


def _evaluate(params, model_cfg, x, y, loss_fn, loss_kind, batch_size):
    total_loss = 0.0
    correct = 0
    for i in range(0, len(x), batch_size):
        xb, yb = x[i:i + batch_size], y[i:i + batch_size]
        out, _ = forward_tape(params, model_cfg, xb, "infer")
        loss, _ = loss_fn(yb, out)
        total_loss += loss * len(xb)
        correct += _accuracy_counts(out, yb, loss_kind)
    return total_loss / len(x), correct / len(x)


def train(params, cfg, model_cfg, data, checkpoint_path=None, extra_meta=None,
          progress=None):
    """Train on data.x_train/y_train and return (best_params, history).

    Each epoch reshuffles the training rows (the last val_fraction of the
    initial shuffle is held out once for validation), iterates batches of
    cfg.batch_size (final short batch included), and runs Adam on exact
    backprop gradients. The checkpoint is rewritten whenever validation
    loss strictly improves.
    """
    cfg.validate()
    x, y = data.x_train, data.y_train
    if len(x) == 0:
        raise ConfigError("training set is empty")
    n_val = int(round(cfg.val_fraction * len(x)))
    n_val = min(max(n_val, 1), len(x) - 1)
    if len(x) < 2:
        raise ConfigError("need at least 2 training rows to hold out validation data")
    rng = RngState(cfg.shuffle_seed)
    first = rng.permutation(len(x))
    val_idx, tr_idx = first[len(x) - n_val:], first[:len(x) - n_val]
    x_val, y_val = x[val_idx], y[val_idx]

    loss_fn = bce_loss if cfg.loss == "bce" else scce_loss
    arrays = dict(named_arrays(params, trainable_only=True))
    if not model_cfg.t_attn_bias:
        del arrays["t_attn.b"]  # stays at its zero init
    state = init_optimizer(arrays)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best = clone_params(params)

    for epoch in range(1, cfg.epochs + 1):
        order = tr_idx[rng.permutation(len(tr_idx))]
        epoch_loss = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            out, tape = forward_tape(params, model_cfg, xb, "train", rng)
            loss, gout = loss_fn(yb, out)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size + 1}")
            grads = backward(gout, tape)
            adam_step(arrays, grads, state, cfg)
            epoch_loss += loss * len(xb)
            correct += _accuracy_counts(out, yb, cfg.loss)
        train_loss = epoch_loss / len(order)
        train_acc = correct / len(order)
        val_loss, val_acc = _evaluate(params, model_cfg, x_val, y_val,
                                      loss_fn, cfg.loss, cfg.batch_size)
        history.epochs.append({
            "epoch": epoch, "train_loss": train_loss, "train_acc": train_acc,
            "val_loss": val_loss, "val_acc": val_acc,
        })
        if progress:
            progress(history.epochs[-1])
        if stopper.update(val_loss, epoch):
            best = clone_params(params)
            if checkpoint_path:
                save_checkpoint(params, model_cfg, checkpoint_path, extra_meta)
        if stopper.should_stop:
            history.stop_reason = "early_stopping"
            break
    else:
        history.stop_reason = "max_epochs"
    history.best_epoch = stopper.best_epoch
    return best, history


def write_history(history, path):
    """One JSON record per epoch, then a summary line; scrapeable without
    any plotting dependency."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history.epochs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.write(json.dumps({"best_epoch": history.best_epoch,
                             "stop_reason": history.stop_reason},
                            sort_keys=True) + "\n")


def read_history(path):
    history = TrainHistory()
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    for rec in lines:
        if "epoch" in rec:
            history.epochs.append(rec)
        else:
            history.best_epoch = rec["best_epoch"]
            history.stop_reason = rec["stop_reason"]
    return history
