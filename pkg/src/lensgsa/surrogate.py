"""Dense feed-forward surrogate network written directly in numpy.

ReLU hidden layers, linear output, inverted dropout, MSE loss and Adam. All
arrays live in standardized units; :func:`predict` handles the conversion
from and to micrometres using the normalization stored on the network.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import Dataset, Norm, destandardize, standardize

MODEL_FORMAT_VERSION = 1


class DimensionMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class MissingNormStats(ValueError):
    pass


class EmptySplit(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 4
    output_dim: int = 24
    hidden_layers: int = 10
    hidden_width: int = 200
    dropout: float = 0.1
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 64
    validation_split: float = 0.1
    seed: int = 0
    # "last": dropout only feeds the linear output layer, which keeps the
    # dropout-off output equal to the dropout expectation; "all": every hidden layer
    dropout_layers: str = "last"

    def __post_init__(self):
        if self.dropout_layers not in ("last", "all"):
            raise ValueError("dropout_layers must be 'last' or 'all'")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 < self.validation_split < 1:
            raise ValueError("validation_split must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


@dataclass
class Network:
    weights: list
    biases: list
    config: NetworkConfig
    norm: Norm | None = None

    @property
    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                       self.config, self.norm)


@dataclass
class Metrics:
    r2: float
    r2_per_output: np.ndarray
    avg_pct_err: float
    max_pct_err: float

    def to_dict(self) -> dict:
        return {"r2": self.r2, "avg_pct": self.avg_pct_err, "max_pct": self.max_pct_err,
                "r2_per_output": self.r2_per_output.tolist()}


@dataclass
class AdamState:
    m: list
    v: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def zeros_like(cls, net: Network, **kw) -> "AdamState":
        params = net.weights + net.biases
        return cls([np.zeros_like(a) for a in params], [np.zeros_like(a) for a in params], **kw)


@dataclass
class History:
    loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


def _streams(seed):
    # independent generators for initialization, shuffling and dropout
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def init(config: NetworkConfig) -> Network:
    """He-normal weights, zero biases."""
    rng = _streams(config.seed)[0]
    sizes = config.layer_sizes
    weights = [rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
               for n_in, n_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(n_out) for n_out in sizes[1:]]
    return Network(weights, biases, config)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _forward(net: Network, X: np.ndarray, train_mode: bool, rng):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.weights[0].shape[1]:
        raise DimensionMismatch(f"expected (batch, {net.weights[0].shape[1]}) inputs, got {X.shape}")
    p = net.config.dropout
    drop = train_mode and p > 0
    gen = _rng(rng) if drop else None
    acts, masks = [X], []
    A = X
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        Z = A @ W.T + b
        if l == last:
            A = Z
            break
        A = np.maximum(Z, 0.0)
        if drop and (net.config.dropout_layers == "all" or l == last - 1):
            mask = (gen.random(A.shape) >= p) / (1.0 - p)
            A = A * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(A)
    return A, acts, masks


def forward(net: Network, X, train_mode: bool = False, rng=None) -> np.ndarray:
    """Network output for standardized ``X``; dropout only when ``train_mode``."""
    return _forward(net, X, train_mode, rng)[0]


def mse(Y, Y_hat) -> float:
    """Mean squared error averaged over every entry (samples and outputs)."""
    Y = np.asarray(Y, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    if Y.shape != Y_hat.shape:
        raise DimensionMismatch(f"shape {Y.shape} vs {Y_hat.shape}")
    return float(np.mean((Y - Y_hat) ** 2))


def backward(net: Network, X, Y, rng=None, train_mode: bool | None = None):
    """Loss and exact gradients ``(dW, db)`` under the dropout masks drawn from ``rng``.

    ``train_mode`` defaults to on whenever the network has dropout.
    """
    if train_mode is None:
        train_mode = net.config.dropout > 0
    Y = np.asarray(Y, dtype=float)
    Y_hat, acts, masks = _forward(net, X, train_mode, rng)
    if Y.shape != Y_hat.shape:
        raise DimensionMismatch(f"targets {Y.shape} vs outputs {Y_hat.shape}")

    delta = 2.0 * (Y_hat - Y) / Y.size
    n_layers = len(net.weights)
    dW, db = [None] * n_layers, [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        dW[l] = delta.T @ acts[l]
        db[l] = delta.sum(axis=0)
        if l == 0:
            break
        delta = delta @ net.weights[l]
        # acts[l] is post-ReLU (and post-dropout); zero exactly where the unit was inactive
        if masks[l - 1] is not None:
            delta = delta * masks[l - 1]
        delta = delta * (acts[l] > 0)
    return mse(Y, Y_hat), (dW, db)


def adam_step(net: Network, grads, state: AdamState, lr: float) -> Network:
    """One bias-corrected Adam update, in place."""
    dW, db = grads
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    params = net.weights + net.biases
    for k, (param, g) in enumerate(zip(params, list(dW) + list(db))):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        param -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
    return net


def train(net: Network, ds: Dataset, config: NetworkConfig | None = None, verbose: bool = False):
    """Mini-batch Adam on the training split of a standardized dataset.

    The last ``validation_split`` share of one initial shuffle is held out for
    validation loss and stays fixed across epochs. Returns ``(net, history)``.
    """
    config = net.config if config is None else config
    if not ds.standardized or not ds.has_split:
        raise ValueError("train needs a split, standardized dataset")
    X, Y = ds.subset("train")
    _, shuffle_rng, drop_rng = _streams(config.seed)

    perm = shuffle_rng.permutation(X.shape[0])
    n_val = max(1, int(round(config.validation_split * X.shape[0])))
    fit_idx, val_idx = perm[:-n_val], perm[-n_val:]
    if fit_idx.size == 0:
        raise ValueError("no rows left for fitting after the validation carve-out")

    state = AdamState.zeros_like(net)
    history = History()
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(fit_idx)
        total = 0.0
        for start in range(0, order.size, bs):
            rows = order[start:start + bs]
            loss, grads = backward(net, X[rows], Y[rows], rng=drop_rng)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}; learning rate too high?")
            adam_step(net, grads, state, config.learning_rate)
            total += loss * rows.size
        history.loss.append(total / order.size)
        history.val_loss.append(mse(Y[val_idx], forward(net, X[val_idx])))
        if verbose and (epoch % 50 == 0 or epoch == config.epochs - 1):
            print(f"epoch {epoch:4d}  loss {history.loss[-1]:.3e}  val {history.val_loss[-1]:.3e}")
    net.norm = ds.norm
    return net, history


def predict(net: Network, X_raw, chunk_size: int = 65536) -> np.ndarray:
    """Surrogate deformations (μm) for raw clearances (μm).

    Rows go through the network in chunks so large sampling designs do not
    materialize every hidden activation at once.
    """
    if net.norm is None:
        raise MissingNormStats("network carries no normalization statistics")
    Xs = (np.asarray(X_raw, dtype=float) - net.norm.input_mean) / net.norm.input_std
    if Xs.ndim != 2 or Xs.shape[1] != net.config.input_dim:
        raise DimensionMismatch(f"expected (N, {net.config.input_dim}) inputs, got {Xs.shape}")
    out = np.vstack([forward(net, Xs[i:i + chunk_size]) for i in range(0, Xs.shape[0], chunk_size)]
                    or [np.empty((0, net.config.output_dim))])
    return destandardize(out, net.norm, "outputs")


def regression_metrics(Y, Y_hat) -> Metrics:
    """Pooled and per-output R² plus norm-based percent errors.

    Percent errors use the Euclidean norm of each sample's output vector,
    relative to the largest target norm in the set.
    """
    Y = np.asarray(Y, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    if Y.shape != Y_hat.shape:
        raise DimensionMismatch(f"shape {Y.shape} vs {Y_hat.shape}")
    if Y.shape[0] == 0:
        raise EmptySplit("no samples to evaluate")
    resid = Y - Y_hat
    ss_res = np.sum(resid**2)
    ss_tot = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -np.inf)
    col_tot = np.sum((Y - Y.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2_cols = 1.0 - np.sum(resid**2, axis=0) / col_tot
    err = np.linalg.norm(resid, axis=1)
    scale = np.linalg.norm(Y, axis=1).max()
    if scale == 0:
        scale = 1.0
    return Metrics(
        r2=float(r2),
        r2_per_output=r2_cols,
        avg_pct_err=float(100.0 * err.mean() / scale),
        max_pct_err=float(100.0 * err.max() / scale),
    )


def evaluate(net: Network, ds: Dataset, which: str = "test") -> Metrics:
    """Metrics on one split, computed in the network's standardized units."""
    if net.norm is None:
        raise MissingNormStats("network carries no normalization statistics")
    if not ds.has_split:
        raise ValueError("dataset has no split")
    idx = {"train": ds.train_idx, "test": ds.test_idx}[which]
    if idx.size == 0:
        raise EmptySplit(f"{which} split is empty")
    X, Y = ds.inputs[idx], ds.outputs[idx]
    if ds.standardized:
        X = destandardize(X, ds.norm, "inputs")
        Y = destandardize(Y, ds.norm, "outputs")
    n = net.norm
    Xs = (X - n.input_mean) / n.input_std
    Ys = (Y - n.output_mean) / n.output_std
    return regression_metrics(Ys, forward(net, Xs))


def save_network(net: Network, path) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "config": asdict(net.config),
        "norm": None if net.norm is None else net.norm.to_dict(),
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(net.weights, net.biases)],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc))


def load_network(path) -> Network:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    config = NetworkConfig(**doc["config"])
    weights = [np.asarray(layer["W"], dtype=float) for layer in doc["layers"]]
    biases = [np.asarray(layer["b"], dtype=float) for layer in doc["layers"]]
    for W, b, (n_in, n_out) in zip(weights, biases, zip(config.layer_sizes[:-1], config.layer_sizes[1:])):
        if W.shape != (n_out, n_in) or b.shape != (n_out,):
            raise DimensionMismatch("stored layer shapes do not match the stored config")
    norm = None if doc["norm"] is None else Norm.from_dict(doc["norm"])
    return Network(weights, biases, config, norm)


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper: ``fit`` standardizes, trains, and keeps the statistics.

    Every row passed to ``fit`` is treated as training data; the validation
    share is carved out internally.
    """

    def __init__(self, hidden_layers=10, hidden_width=200, dropout=0.1, learning_rate=0.01,
                 epochs=500, batch_size=64, validation_split=0.1, seed=0, dropout_layers="last",
                 verbose=False):
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.dropout = dropout
        self.dropout_layers = dropout_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_split = validation_split
        self.seed = seed
        self.verbose = verbose

    def _config(self, n_in, n_out) -> NetworkConfig:
        return NetworkConfig(
            input_dim=n_in, output_dim=n_out, hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width, dropout=self.dropout,
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            validation_split=self.validation_split, seed=self.seed,
            dropout_layers=self.dropout_layers,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y2 = y.reshape(len(y), -1)
        config = self._config(X.shape[1], y2.shape[1])
        idx = np.arange(X.shape[0])
        ds = standardize(Dataset(X, y2, train_idx=idx, test_idx=idx[:0]))
        self.network_, self.history_ = train(init(config), ds, config, verbose=self.verbose)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y2.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict(self.network_, X)

    @classmethod
    def from_network(cls, net: Network) -> "SurrogateRegressor":
        c = net.config
        reg = cls(hidden_layers=c.hidden_layers, hidden_width=c.hidden_width, dropout=c.dropout,
                  learning_rate=c.learning_rate, epochs=c.epochs, batch_size=c.batch_size,
                  validation_split=c.validation_split, seed=c.seed, dropout_layers=c.dropout_layers)
        reg.network_ = net
        reg.n_features_in_ = c.input_dim
        reg.n_outputs_ = c.output_dim
        return reg
