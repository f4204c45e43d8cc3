"""MLP wrench estimator: forward pass, backprop, Adam, training loops.

Plain numpy, double precision.  The net maps one 24-feature frame
(q, dq, ddq, motor current) to a 6-axis wrench.  Inputs and targets are
z-scored with statistics taken from the training split only; the loss
lives in that normalized space so newton and newton-meter axes pull
comparable weight.  Reported errors are always denormalized back to
physical units per axis.

Fine-tuning continues Adam from a trained base at a reduced learning
rate with fresh optimizer moments and the base normalization frozen, so
a fine-tuned model stays directly comparable to its base.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .dyncore import ModelError

N_IN = 24
N_OUT = 6
EVAL_CHUNK = 8192       # rows per forward block when evaluating big sets


class TrainingError(ModelError):
    """Optimization failed (divergence or non-finite loss)."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 256
    epochs: int = 200
    patience: int = 20          # epochs without val improvement before stop
    seed: int = 0               # batch shuffling
    ft_lr_scale: float = 0.1    # learning-rate multiplier used by finetune

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ModelError("Adam betas must sit strictly inside (0, 1)")
        if self.batch < 1:
            raise ModelError("batch size must be at least 1")
        if self.lr <= 0 or self.eps <= 0:
            raise ModelError("lr and eps must be positive")
        if self.epochs < 1:
            raise ModelError("epoch budget must be at least 1")


class MlpEstimator:
    """ReLU MLP with input/output normalization baked into the object.

    weights[i] has shape (fan_out, fan_in); hidden layers are ReLU, the
    output layer is affine.  meta carries provenance (init seed, dataset
    digests, epoch counts) and rides along through serialization.
    """

    def __init__(self, weights, biases, x_mean, x_std, y_mean, y_std,
                 meta=None):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.x_mean = np.asarray(x_mean, dtype=float)
        self.x_std = np.asarray(x_std, dtype=float)
        self.y_mean = np.asarray(y_mean, dtype=float)
        self.y_std = np.asarray(y_std, dtype=float)
        self.meta = dict(meta) if meta else {}
        self.validate()

    @classmethod
    def init(cls, hidden=(1024, 1024), seed=0):
        """Fresh net, He-style uniform weights (bound sqrt(6/fan_in))."""
        if isinstance(hidden, (int, np.integer)):
            hidden = (int(hidden),) * 2
        sizes = [N_IN, *map(int, hidden), N_OUT]
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, np.zeros(N_IN), np.ones(N_IN),
                   np.zeros(N_OUT), np.ones(N_OUT),
                   meta={"hidden": list(sizes[1:-1]), "init_seed": int(seed)})

    def validate(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ModelError("need at least one hidden layer")
        if self.weights[0].shape[1] != N_IN:
            raise ModelError(f"input width must be {N_IN}")
        if self.weights[-1].shape[0] != N_OUT:
            raise ModelError(f"output width must be {N_OUT}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ModelError(f"layer {i} weight/bias shapes disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ModelError(f"layer {i} input width does not chain")
        if self.x_mean.shape != (N_IN,) or self.x_std.shape != (N_IN,):
            raise ModelError("input normalization must have 24 entries")
        if self.y_mean.shape != (N_OUT,) or self.y_std.shape != (N_OUT,):
            raise ModelError("output normalization must have 6 entries")
        if np.any(self.x_std <= 0) or np.any(self.y_std <= 0):
            raise ModelError("normalization std entries must be positive")

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpEstimator":
        return MlpEstimator([w.copy() for w in self.weights],
                            [b.copy() for b in self.biases],
                            self.x_mean.copy(), self.x_std.copy(),
                            self.y_mean.copy(), self.y_std.copy(),
                            dict(self.meta))

    def params(self):
        """Flat parameter list, interleaved (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    # -- normalization ----------------------------------------------------

    def fit_normalization(self, X, Y):
        """Z-score statistics from the given (training) arrays.

        Constant features get std 1 instead of ~0 so they normalize to
        exactly zero rather than exploding."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self.x_mean = X.mean(axis=0)
        xs = X.std(axis=0)
        self.x_std = np.where(xs < 1e-9, 1.0, xs)
        self.y_mean = Y.mean(axis=0)
        ys = Y.std(axis=0)
        self.y_std = np.where(ys < 1e-9, 1.0, ys)

    def norm_x(self, X):
        return (X - self.x_mean) / self.x_std

    def norm_y(self, Y):
        return (Y - self.y_mean) / self.y_std

    # -- inference --------------------------------------------------------

    def _forward_norm(self, Xn):
        a = Xn
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w.T + b, 0.0)
        return a @ self.weights[-1].T + self.biases[-1]

    def forward(self, X) -> np.ndarray:
        """Wrench prediction in physical units; (24,) -> (6,) or batched."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != N_IN:
            raise ModelError(f"features must have {N_IN} columns")
        out = np.empty((X.shape[0], N_OUT))
        for i in range(0, X.shape[0], EVAL_CHUNK):
            blk = slice(i, i + EVAL_CHUNK)
            yn = self._forward_norm(self.norm_x(X[blk]))
            out[blk] = yn * self.y_std + self.y_mean
        return out[0] if single else out


def loss_and_grad(m: MlpEstimator, X, Y):
    """Normalized-space MSE and its gradient for every weight and bias.

    Takes raw physical-unit batches.  Returns (loss, grads) with grads
    ordered like m.params().  A non-finite loss aborts and names the
    first offending batch row.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_IN or Y.shape != (X.shape[0], N_OUT):
        raise ModelError("batch must be (n, 24) features with (n, 6) labels")
    if X.shape[0] == 0:
        raise ModelError("empty batch")
    return _loss_and_grad_norm(m, m.norm_x(X), m.norm_y(Y))


def _loss_and_grad_norm(m, xn, yn):
    # training hot path: inputs are already in normalized space
    n = xn.shape[0]
    acts = [xn]                       # post-activation per layer
    pre = []                          # pre-activation, for the ReLU mask
    a = xn
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    yhat = a @ m.weights[-1].T + m.biases[-1]

    err = yhat - yn
    row_se = np.sum(err * err, axis=1)
    loss = float(row_se.sum() / (n * N_OUT))
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(row_se))
        i = int(bad[0]) if bad.size else 0
        raise TrainingError(f"non-finite loss; first bad batch row {i}")

    grads = [None] * (2 * len(m.weights))
    delta = (2.0 / (n * N_OUT)) * err
    for li in range(len(m.weights) - 1, -1, -1):
        grads[2 * li] = delta.T @ acts[li]
        grads[2 * li + 1] = delta.sum(axis=0)
        if li:
            delta = (delta @ m.weights[li]) * (pre[li - 1] > 0)
    return loss, grads


def eval_mse(m: MlpEstimator, Xn, Yn) -> float:
    """Normalized-space MSE, chunked so big sets stay in memory."""
    n = Xn.shape[0]
    total = 0.0
    for i in range(0, n, EVAL_CHUNK):
        blk = slice(i, i + EVAL_CHUNK)
        err = m._forward_norm(Xn[blk]) - Yn[blk]
        total += float(np.sum(err * err))
    return total / (n * N_OUT)


def rmse_per_axis(m: MlpEstimator, X, Y) -> np.ndarray:
    """(6,) RMSE in physical units (N, N m), the unit used in reports."""
    err = m.forward(np.asarray(X, dtype=float)) - np.asarray(Y, dtype=float)
    return np.sqrt(np.mean(err * err, axis=0))


class _Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, mm, vv in zip(params, grads, self.m, self.v):
            mm *= self.b1
            mm += (1.0 - self.b1) * g
            vv *= self.b2
            vv += (1.0 - self.b2) * (g * g)
            p -= self.lr * (mm / c1) / (np.sqrt(vv / c2) + self.eps)


def _optimize(m, Xn, Yn, Xvn, Yvn, cfg, lr):
    """Shared mini-batch loop: Adam, best-on-val, patience, divergence."""
    rng = np.random.default_rng(cfg.seed)
    params = m.params()
    adam = _Adam(params, lr, cfg.beta1, cfg.beta2, cfg.eps)
    n = Xn.shape[0]

    val0 = eval_mse(m, Xvn, Yvn)
    best_val = val0
    best_w = [w.copy() for w in m.weights]
    best_b = [b.copy() for b in m.biases]
    best_epoch = 0
    stale = 0
    curves = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        run_se = 0.0
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            loss, grads = _loss_and_grad_norm(m, Xn[idx], Yn[idx])
            adam.step(params, grads)
            run_se += loss * idx.size
        train_mse = run_se / n
        val_mse = eval_mse(m, Xvn, Yvn)
        curves.append((epoch, train_mse, val_mse))
        if not np.isfinite(val_mse) or val_mse > 10.0 * val0:
            raise TrainingError(
                f"validation loss diverged at epoch {epoch}: "
                f"{val_mse:.4g} vs initial {val0:.4g} (lr={lr:g})")
        if val_mse < best_val:
            best_val = val_mse
            best_w = [w.copy() for w in m.weights]
            best_b = [b.copy() for b in m.biases]
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    m.weights = best_w
    m.biases = best_b
    return best_epoch, curves


def _norm_x(m, ds):
    return m.norm_x(ds.features())


def _norm_y(m, ds):
    return m.norm_y(ds.labels())


def train(m: MlpEstimator, train_ds, val_ds, cfg: TrainConfig = None):
    """Base training.  Normalization is fit on the training split only;
    returns (best-on-validation model, per-epoch loss curves)."""
    cfg = cfg or TrainConfig()
    m = m.copy()
    m.fit_normalization(train_ds.features(), train_ds.labels())
    best_epoch, curves = _optimize(m, _norm_x(m, train_ds),
                                   _norm_y(m, train_ds),
                                   _norm_x(m, val_ds), _norm_y(m, val_ds),
                                   cfg, cfg.lr)
    m.meta.update(train_digest=train_ds.digest, val_digest=val_ds.digest,
                  train_seed=cfg.seed, epochs=len(curves),
                  best_epoch=best_epoch)
    return m, curves


def finetune(base: MlpEstimator, ft_train, ft_val, cfg: TrainConfig = None):
    """Adapt a trained base to contact data.

    Continues Adam from the base weights at lr * ft_lr_scale with fresh
    moments; normalization stays frozen from the base so predictions
    remain on the same scale.  The base object is not touched.
    """
    cfg = cfg or TrainConfig()
    if "train_digest" not in base.meta:
        raise ModelError("finetune needs a trained base model")
    for ds in (ft_train, ft_val):
        if ds.tag not in ("CSDS", "HGDS", "TEST"):
            raise ModelError(
                f"fine-tuning data tagged {ds.tag!r}; expected contact or "
                "hand-guiding data (or TEST for controls)")
    m = base.copy()
    best_epoch, curves = _optimize(m, _norm_x(m, ft_train),
                                   _norm_y(m, ft_train),
                                   _norm_x(m, ft_val), _norm_y(m, ft_val),
                                   cfg, cfg.lr * cfg.ft_lr_scale)
    m.meta.update(ft_digest=ft_train.digest, ft_val_digest=ft_val.digest,
                  ft_seed=cfg.seed, ft_epochs=len(curves),
                  ft_best_epoch=best_epoch,
                  finetuned_from=base.meta.get("train_digest"))
    return m, curves


# ---------------------------------------------------------------------------
# serialization: plain text, repr() floats, so load(save(m)) == m bitwise.

MAGIC = "wrench-mlp 1"


def _fmt_vec(v):
    return " ".join(repr(float(x)) for x in v)


def save(m: MlpEstimator, path):
    with open(str(path), "w") as fh:
        fh.write(MAGIC + "\n")
        fh.write("sizes " + " ".join(str(s) for s in m.sizes) + "\n")
        fh.write("activation relu\n")
        fh.write("meta " + json.dumps(m.meta, sort_keys=True) + "\n")
        for name, vec in (("x_mean", m.x_mean), ("x_std", m.x_std),
                          ("y_mean", m.y_mean), ("y_std", m.y_std)):
            fh.write(f"{name} {_fmt_vec(vec)}\n")
        for w, b in zip(m.weights, m.biases):
            fh.write(f"layer {w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(_fmt_vec(row) + "\n")
            fh.write(_fmt_vec(b) + "\n")


def load(path) -> MlpEstimator:
    with open(str(path)) as fh:
        lines = fh.read().splitlines()
    it = iter(lines)
    try:
        if next(it) != MAGIC:
            raise ModelError("not a wrench-mlp model file")
        sizes = [int(x) for x in next(it).split()[1:]]
        act = next(it).split()
        if act != ["activation", "relu"]:
            raise ModelError("unsupported activation")
        meta = json.loads(next(it).split(" ", 1)[1])
        stats = {}
        for name in ("x_mean", "x_std", "y_mean", "y_std"):
            parts = next(it).split()
            if parts[0] != name:
                raise ModelError(f"expected {name} line")
            stats[name] = np.array([float(x) for x in parts[1:]])
        weights, biases = [], []
        for _ in range(len(sizes) - 1):
            head = next(it).split()
            if head[0] != "layer":
                raise ModelError("expected layer header")
            rows, cols = int(head[1]), int(head[2])
            w = np.array([[float(x) for x in next(it).split()]
                          for _ in range(rows)])
            if w.shape != (rows, cols):
                raise ModelError("weight block shape disagrees with header")
            weights.append(w)
            biases.append(np.array([float(x) for x in next(it).split()]))
    except StopIteration:
        raise ModelError("model file truncated") from None
    m = MlpEstimator(weights, biases, stats["x_mean"], stats["x_std"],
                     stats["y_mean"], stats["y_std"], meta)
    if m.sizes != sizes:
        raise ModelError("size header disagrees with weight shapes")
    return m


def write_curves(curves, path):
    """Per-epoch loss log as CSV (normalized-space MSE)."""
    with open(str(path), "w") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for epoch, tr, va in curves:
            fh.write(f"{epoch},{repr(float(tr))},{repr(float(va))}\n")


def read_curves(path):
    with open(str(path)) as fh:
        head = fh.readline().rstrip("\n")
        if head != "epoch,train_mse,val_mse":
            raise ModelError("unrecognized loss-curve header")
        out = []
        for line in fh:
            e, tr, va = line.rstrip("\n").split(",")
            out.append((int(e), float(tr), float(va)))
    return out


def benchmark_inference(m: MlpEstimator, repeats: int = 200,
                        blocks: int = 7) -> float:
    """Median single-frame forward latency in seconds."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal(N_IN)
    for _ in range(10):
        m.forward(x)
    per = []
    for _ in range(blocks):
        t0 = time.perf_counter()
        for _ in range(repeats):
            m.forward(x)
        per.append((time.perf_counter() - t0) / repeats)
    return float(np.median(per))
