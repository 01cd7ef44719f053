"""Windowed regressors for digraph edges, plus feature scaling.

Every edge group maps a sliding window over its (scaled) input series to the
current value of its (scaled) output series.  Two interchangeable families:

  * ridge-window -- exact L2-penalised least squares on the flattened window,
  * mlp-window   -- small tanh MLP trained with Adam, written from scratch so
                    that analytic gradients can be checked against finite
                    differences.

Both are deterministic given (data, hyperparameters, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STD_FLOOR = 1e-12


class RegressionError(ValueError):
    pass


@dataclass
class Scaler:
    """Per-feature standardization with a floored standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(rows: np.ndarray) -> "Scaler":
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2:
            raise RegressionError("Scaler.fit expects a 2-d (rows, features) array")
        mean = rows.mean(axis=0)
        std = np.maximum(rows.std(axis=0), STD_FLOOR)
        return Scaler(mean=mean, std=std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d):
        return Scaler(mean=np.array(d["mean"], float), std=np.array(d["std"], float))


def window_features(series: np.ndarray, window: int) -> np.ndarray:
    """Flatten a sliding history window over a (T, d) series into (T, W*d).

    Row t holds steps t-W+1 .. t, oldest first.  Steps before the start of
    the series are zero-padded; callers pass already-scaled series, so the
    pad value is the scaled-space zero (the feature mean in physical units).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2:
        raise RegressionError("window_features expects a (T, d) series")
    t_len, d = series.shape
    if t_len < 1 or window < 1:
        raise RegressionError("need T >= 1 and window >= 1")
    padded = np.concatenate([np.zeros((window - 1, d)), series], axis=0)
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    # view is (T, d, W); reorder to window-major (oldest step first)
    return np.ascontiguousarray(view.transpose(0, 2, 1)).reshape(t_len, window * d)


def window_features_batch(series: np.ndarray, window: int) -> np.ndarray:
    """window_features over a (n_paths, T, d) stack -> (n_paths, T, W*d).

    Windows never cross path boundaries.
    """
    series = np.asarray(series, dtype=float)
    n, t_len, d = series.shape
    padded = np.concatenate([np.zeros((n, window - 1, d)), series], axis=1)
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=1)
    return np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(n, t_len, window * d)


def _check_xy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or y.ndim != 2:
        raise RegressionError("fit expects 2-d X and Y")
    if x.shape[0] != y.shape[0]:
        raise RegressionError(f"row mismatch: X has {x.shape[0]}, Y has {y.shape[0]}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise RegressionError("non-finite values in training data")
    return x, y


class RidgeWindowRegressor:
    """Exact L2-penalised linear map on windowed features.

    The intercept column is never penalised.  lam=0 falls back to lstsq.
    """

    family = "ridge-window"

    def __init__(self, lam: float = 0.0):
        self.lam = float(lam)
        self.coef = None  # (n_features + 1, n_outputs); last row is intercept

    def fit(self, x, y, seed=None):
        x, y = _check_xy(x, y)
        a = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
        if self.lam == 0.0:
            self.coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        else:
            gram = a.T @ a
            idx = np.arange(x.shape[1])
            gram[idx, idx] += self.lam
            self.coef = np.linalg.solve(gram, a.T @ y)
        resid = a @ self.coef - y
        return float((resid**2).mean())

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.coef[:-1] + self.coef[-1]

    def get_params(self):
        return self.coef.ravel().copy()

    def to_dict(self):
        return {
            "family": self.family,
            "lam": self.lam,
            "coef": self.coef.tolist(),
        }

    @staticmethod
    def from_dict(d):
        reg = RidgeWindowRegressor(lam=d["lam"])
        reg.coef = np.array(d["coef"], float)
        return reg


class MlpWindowRegressor:
    """Tanh MLP with a linear output layer, trained by Adam on seeded
    shuffled minibatches.  Loss is the mean squared error over the batch."""

    family = "mlp-window"

    def __init__(self, hidden=(16, 16), epochs=200, batch=64, lr=1e-3):
        self.hidden = tuple(int(h) for h in hidden)
        self.epochs = int(epochs)
        self.batch = int(batch)
        self.lr = float(lr)
        self.weights = None
        self.biases = None

    # -- parameter handling ---------------------------------------------------

    def init_params(self, n_in, n_out, rng):
        sizes = [n_in, *self.hidden, n_out]
        self.weights = []
        self.biases = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(1.0 / a)
            self.weights.append(rng.normal(0.0, scale, size=(a, b)))
            self.biases.append(np.zeros(b))

    def get_params(self):
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_params(self, flat):
        pos = 0
        for i, w in enumerate(self.weights):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
        for i, b in enumerate(self.biases):
            self.biases[i] = flat[pos : pos + b.size].reshape(b.shape)
            pos += b.size

    # -- forward / backward -----------------------------------------------------

    def predict(self, x):
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h

    def loss_and_grads(self, x, y):
        """MSE loss and its analytic gradients w.r.t. all weights and biases."""
        acts = [np.asarray(x, dtype=float)]
        pre = []
        h = acts[0]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = np.tanh(z) if i < last else z
            acts.append(h)
        diff = acts[-1] - y
        n = y.shape[0] * y.shape[1]
        loss = float((diff**2).sum() / n)
        delta = 2.0 * diff / n
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(last, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - np.tanh(pre[i - 1]) ** 2)
        return loss, grads_w, grads_b

    def fit(self, x, y, seed=0):
        x, y = _check_xy(x, y)
        rng = np.random.default_rng(seed)
        if self.weights is None:
            self.init_params(x.shape[1], y.shape[1], rng)
        opt = AdamOptimizer(self.weights + self.biases, lr=self.lr)
        n = x.shape[0]
        final = None
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch):
                take = order[start : start + self.batch]
                loss, gw, gb = self.loss_and_grads(x[take], y[take])
                opt.step(gw + gb)
                final = loss
        return final

    def to_dict(self):
        return {
            "family": self.family,
            "hidden": list(self.hidden),
            "epochs": self.epochs,
            "batch": self.batch,
            "lr": self.lr,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @staticmethod
    def from_dict(d):
        reg = MlpWindowRegressor(
            hidden=d["hidden"], epochs=d["epochs"], batch=d["batch"], lr=d["lr"]
        )
        reg.weights = [np.array(w, float) for w in d["weights"]]
        reg.biases = [np.array(b, float) for b in d["biases"]]
        return reg


class AdamOptimizer:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g**2
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "m": [m.tolist() for m in self.m],
            "v": [v.tolist() for v in self.v],
        }

    def load_state_dict(self, d):
        self.t = d["t"]
        self.m = [np.array(m, float) for m in d["m"]]
        self.v = [np.array(v, float) for v in d["v"]]


@dataclass
class Hyperparameters:
    """Regressor settings shared by every edge group of a model."""

    family: str = "ridge-window"
    window: int = 20
    ridge_lambda: float = 1e-8
    hidden: tuple = (16, 16)
    epochs: int = 200
    batch: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def make_regressor(self):
        if self.family == "ridge-window":
            return RidgeWindowRegressor(lam=self.ridge_lambda)
        if self.family == "mlp-window":
            return MlpWindowRegressor(
                hidden=self.hidden,
                epochs=self.epochs,
                batch=self.batch,
                lr=self.learning_rate,
            )
        raise RegressionError(f"unknown regressor family {self.family!r}")

    def to_dict(self):
        return {
            "family": self.family,
            "window": self.window,
            "ridge_lambda": self.ridge_lambda,
            "hidden": list(self.hidden),
            "epochs": self.epochs,
            "batch": self.batch,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d):
        hp = Hyperparameters()
        for key, value in d.items():
            if not hasattr(hp, key):
                raise RegressionError(f"unknown hyperparameter {key!r}")
            setattr(hp, key, tuple(value) if key == "hidden" else value)
        return hp

    def fingerprint(self) -> str:
        import hashlib
        import json

        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def regressor_from_dict(d):
    if d["family"] == "ridge-window":
        return RidgeWindowRegressor.from_dict(d)
    if d["family"] == "mlp-window":
        return MlpWindowRegressor.from_dict(d)
    raise RegressionError(f"unknown regressor family {d['family']!r}")
