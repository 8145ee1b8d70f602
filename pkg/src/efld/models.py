"""Small differentiable models with per-example gradients by manual backprop.

Parameters are always a flat float vector ``w``.  An example ``z`` is a pair
``(x, y)`` of a feature vector and an integer label.  Batched routines take a
feature matrix ``X`` (rows are examples) and a label vector ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

__all__ = [
    "LossCaps",
    "Model",
    "QuadraticModel",
    "LogisticModel",
    "MLPModel",
    "per_example_loss",
    "per_example_grad",
    "batch_grad",
    "full_loss",
    "test_error",
    "model_from_config",
]


@dataclass(frozen=True)
class LossCaps:
    """Loss clamp used for bound constants; ``c0 = 2 * loss_clamp``."""

    loss_clamp: float = 4.0

    def __post_init__(self) -> None:
        if not self.loss_clamp > 0:
            raise ConfigError("loss_clamp must be > 0")

    @property
    def c0(self) -> float:
        return 2.0 * self.loss_clamp

    def clamp(self, loss):
        return np.minimum(loss, self.loss_clamp)


class Model:
    """Base class: subclasses implement batched losses, gradients and logits."""

    param_count: int
    is_classifier: bool = True

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def losses(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Raw per-example losses, shape (B,)."""
        raise NotImplementedError

    def grads(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-example gradients, shape (B, param_count)."""
        raise NotImplementedError

    def mean_grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Mean gradient over the rows of ``X``; subclasses may avoid materialising per-example rows."""
        return self.grads(w, X, y).mean(axis=0)

    def predict(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_w(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.param_count,):
            raise ShapeError(f"parameter vector has shape {w.shape}, expected ({self.param_count},)")
        return w

    def _check_X(self, X: np.ndarray, dim: int) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != dim:
            raise ShapeError(f"feature dimension {X.shape[1]} does not match model dimension {dim}")
        return X


class QuadraticModel(Model):
    """Separable quadratic loss ``0.5 * sum_i K_i (w_i - c_i)^2``.

    With ``data_shift`` the center is ``w_star + x`` for example features ``x``,
    so the per-example gradient is ``K * (w - w_star - x)``.  Without it the loss
    ignores the example and the gradient is ``K * (w - w_star)``.
    """

    is_classifier = False

    def __init__(self, w_star, curvature=None, data_shift: bool = True):
        self.w_star = np.atleast_1d(np.asarray(w_star, dtype=float))
        self.dim = self.w_star.size
        self.param_count = self.dim
        k = np.ones(self.dim) if curvature is None else np.broadcast_to(np.asarray(curvature, float), (self.dim,))
        if np.any(k < 0):
            raise ConfigError("curvature entries must be nonnegative")
        self.curvature = np.array(k, dtype=float)
        self.data_shift = data_shift

    def init_params(self, rng):
        return np.zeros(self.dim)

    def _residual(self, w, X):
        w = self._check_w(w)
        X = self._check_X(X, self.dim)
        r = w[None, :] - self.w_star[None, :]
        if self.data_shift:
            r = r - X
        else:
            r = np.broadcast_to(r, X.shape)
        return r

    def losses(self, w, X, y=None):
        r = self._residual(w, X)
        return 0.5 * np.sum(self.curvature * r * r, axis=1)

    def grads(self, w, X, y=None):
        return self.curvature * self._residual(w, X)

    def mean_grad(self, w, X, y=None):
        return self.grads(w, X, y).mean(axis=0)

    def predict(self, w, X):
        raise DomainError("quadratic model is not a classifier")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _labels(y, n: int, classes: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ShapeError("labels must be integers")
        y = y.astype(np.int64)
    if np.any((y < 0) | (y >= classes)):
        raise ShapeError(f"labels must lie in [0, {classes})")
    return y


class LogisticModel(Model):
    """Multinomial logistic regression; parameters are ``W`` (classes x dim) then bias (classes)."""

    def __init__(self, dim: int, classes: int):
        if dim < 1 or classes < 2:
            raise ConfigError("logistic model needs dim >= 1 and classes >= 2")
        self.dim, self.classes = int(dim), int(classes)
        self.param_count = self.classes * (self.dim + 1)

    def init_params(self, rng):
        return np.zeros(self.param_count)

    def _unpack(self, w):
        w = self._check_w(w)
        k, d = self.classes, self.dim
        return w[: k * d].reshape(k, d), w[k * d:]

    def _logits(self, w, X):
        W, b = self._unpack(w)
        return X @ W.T + b

    def losses(self, w, X, y):
        X = self._check_X(X, self.dim)
        y = _labels(y, X.shape[0], self.classes)
        lp = _log_softmax(self._logits(w, X))
        return -lp[np.arange(X.shape[0]), y]

    def _delta(self, w, X, y):
        lp = _log_softmax(self._logits(w, X))
        p = np.exp(lp)
        p[np.arange(X.shape[0]), y] -= 1.0
        return p

    def grads(self, w, X, y):
        X = self._check_X(X, self.dim)
        y = _labels(y, X.shape[0], self.classes)
        d = self._delta(w, X, y)
        gW = d[:, :, None] * X[:, None, :]
        return np.concatenate([gW.reshape(X.shape[0], -1), d], axis=1)

    def mean_grad(self, w, X, y):
        X = self._check_X(X, self.dim)
        y = _labels(y, X.shape[0], self.classes)
        d = self._delta(w, X, y)
        n = X.shape[0]
        return np.concatenate([(d.T @ X).ravel() / n, d.mean(axis=0)])

    def predict(self, w, X):
        X = self._check_X(X, self.dim)
        return np.argmax(self._logits(w, X), axis=1)


class MLPModel(Model):
    """Fully connected ReLU network with a softmax cross-entropy head.

    ``layers`` lists widths from input to output, e.g. ``(20, 64, 10)``.  The
    flat parameter vector stores, per layer, the weight matrix (out x in) in
    row-major order followed by the bias.
    """

    def __init__(self, layers):
        layers = tuple(int(v) for v in layers)
        if len(layers) < 2 or min(layers) < 1 or layers[-1] < 2:
            raise ConfigError("MLP needs at least input and output widths, output >= 2")
        self.layers = layers
        self.dim = layers[0]
        self.classes = layers[-1]
        self._slices = []
        off = 0
        for fan_in, fan_out in zip(layers[:-1], layers[1:]):
            ws = slice(off, off + fan_out * fan_in)
            off += fan_out * fan_in
            bs = slice(off, off + fan_out)
            off += fan_out
            self._slices.append((ws, bs, fan_out, fan_in))
        self.param_count = off

    def init_params(self, rng):
        w = np.zeros(self.param_count)
        for ws, _, fan_out, fan_in in self._slices:
            # He initialisation for ReLU layers.
            w[ws] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=fan_out * fan_in)
        return w

    def _weights(self, w):
        w = self._check_w(w)
        return [(w[ws].reshape(fo, fi), w[bs]) for ws, bs, fo, fi in self._slices]

    def _forward(self, w, X):
        params = self._weights(w)
        acts = [X]
        h = X
        for i, (W, b) in enumerate(params):
            z = h @ W.T + b
            h = z if i == len(params) - 1 else np.maximum(z, 0.0)
            acts.append(h)
        return params, acts

    def losses(self, w, X, y):
        X = self._check_X(X, self.dim)
        y = _labels(y, X.shape[0], self.classes)
        _, acts = self._forward(w, X)
        lp = _log_softmax(acts[-1])
        return -lp[np.arange(X.shape[0]), y]

    def _backward(self, w, X, y, per_example: bool):
        params, acts = self._forward(w, X)
        n = X.shape[0]
        delta = np.exp(_log_softmax(acts[-1]))
        delta[np.arange(n), y] -= 1.0
        pieces = [None] * len(params)
        for i in range(len(params) - 1, -1, -1):
            h_in = acts[i]
            if per_example:
                gW = (delta[:, :, None] * h_in[:, None, :]).reshape(n, -1)
                pieces[i] = np.concatenate([gW, delta], axis=1)
            else:
                pieces[i] = np.concatenate([(delta.T @ h_in).ravel() / n, delta.mean(axis=0)])
            if i > 0:
                W = params[i][0]
                delta = (delta @ W) * (acts[i] > 0)
        return np.concatenate(pieces, axis=-1)

    def grads(self, w, X, y):
        X = self._check_X(X, self.dim)
        y = _labels(y, X.shape[0], self.classes)
        return self._backward(w, X, y, per_example=True)

    def mean_grad(self, w, X, y):
        X = self._check_X(X, self.dim)
        y = _labels(y, X.shape[0], self.classes)
        return self._backward(w, X, y, per_example=False)

    def predict(self, w, X):
        X = self._check_X(X, self.dim)
        _, acts = self._forward(w, X)
        return np.argmax(acts[-1], axis=1)


def _split(z):
    x, y = z
    return np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_1d(y)


def per_example_loss(model: Model, w, z, caps: LossCaps | None = None) -> float:
    """Raw loss of one example, or its clamped value when ``caps`` is given."""
    X, y = _split(z)
    val = float(model.losses(w, X, y)[0])
    return float(caps.clamp(val)) if caps is not None else val


def per_example_grad(model: Model, w, z) -> np.ndarray:
    X, y = _split(z)
    return model.grads(w, X, y)[0]


def batch_grad(model: Model, w, X, y=None) -> np.ndarray:
    """Mean gradient over a batch given as feature rows and labels."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("batch must be a nonempty 2-D feature array")
    return model.mean_grad(w, X, y)


def full_loss(model: Model, w, X, y=None) -> float:
    return float(np.mean(model.losses(w, X, y)))


def test_error(model: Model, w, X, y) -> float:
    """Misclassification rate under argmax prediction."""
    if not model.is_classifier:
        raise DomainError("test_error needs a classifier")
    pred = model.predict(w, X)
    return float(np.mean(pred != np.asarray(y)))


test_error.__test__ = False  # keep pytest from collecting it


def model_from_config(cfg: dict, dim: int, classes: int) -> Model:
    """Build a model from a ``[model]`` table."""
    kind = cfg.get("kind", "logistic")
    if kind == "logistic":
        return LogisticModel(dim, classes)
    if kind == "mlp":
        hidden = cfg.get("hidden", [64])
        if isinstance(hidden, int):
            hidden = [hidden]
        return MLPModel([dim, *hidden, classes])
    if kind == "quadratic":
        w_star = cfg.get("w_star", 0.0)
        w_star = np.broadcast_to(np.asarray(w_star, float), (dim,)).copy()
        return QuadraticModel(w_star, cfg.get("curvature"), bool(cfg.get("data_shift", True)))
    raise ConfigError(f"model.kind: unknown model kind {kind!r}")
