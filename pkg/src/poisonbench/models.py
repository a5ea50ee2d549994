"""Differentiable classifiers (multiclass logistic regression, smoothed-hinge
linear SVM, MLP) and the attacker generator network.

Every model exposes the same flat-parameter contract:

  loss(ds)                mean per-example loss + (lambda/2) ||params||^2
  grad(ds)                analytic gradient of loss
  hvp(ds, v)              (d^2 loss / dw^2) v + lambda v
  cross_data_vjp(...)     grad_x ( grad_w l(point) . u ),  per-point, unregularized
  cross_data_jvp(...)     d/dt grad_w l(x + t dx) |_0
  input_grad(...)         grad_x of the per-example loss
  predict / accuracy

The SVM hinge is smoothed quadratically inside a band of half-width DELTA
around the kink so second derivatives exist; outside the band it equals the
exact multiclass hinge. MLP second-order products use the exact
forward-over-reverse tangent recursion (leaky ReLU has zero curvature almost
everywhere, the softmax head carries the curvature).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, OrderingPlan
from .errors import DimMismatch, IndexOutOfRange, NonFiniteGradient, ProvenanceMismatch

LEAKY_SLOPE = 0.01
DELTA = 0.1  # hinge smoothing half-band
CHECKPOINT_MAGIC = "PBV1"


@dataclass(frozen=True)
class ModelShape:
    """kind in {lr, svm, mlp, gen}; layer_dims runs input -> ... -> output."""

    kind: str
    layer_dims: tuple[int, ...]
    activation: str = "none"
    l2_lambda: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lr", "svm", "mlp", "gen"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("lr", "svm") and len(self.layer_dims) != 2:
            raise ValueError("linear models have exactly one weight matrix")
        if self.kind in ("mlp", "gen") and len(self.layer_dims) < 3:
            raise ValueError("mlp/gen need at least one hidden layer")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class ParamVector:
    """Flat float64 parameter vector with its shape metadata."""

    data: np.ndarray
    shape: ModelShape

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).ravel()
        if self.data.size != self.shape.param_count:
            raise DimMismatch(
                f"{self.data.size} params but shape wants {self.shape.param_count}")


def leaky_relu(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def leaky_relu_deriv(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def softmax(s):
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def smoothed_hinge(z):
    """Quadratic smoothing of max(0, z) on [-DELTA, DELTA]; exact outside."""
    out = np.where(z >= DELTA, z, 0.0)
    band = np.abs(z) < DELTA
    out = np.where(band, (z + DELTA) ** 2 / (4.0 * DELTA), out)
    return out


def smoothed_hinge_d1(z):
    out = np.where(z >= DELTA, 1.0, 0.0)
    band = np.abs(z) < DELTA
    return np.where(band, (z + DELTA) / (2.0 * DELTA), out)


def smoothed_hinge_d2(z):
    return np.where(np.abs(z) < DELTA, 1.0 / (2.0 * DELTA), 0.0)


def _onehot(y, C):
    out = np.zeros((y.size, C))
    out[np.arange(y.size), y] = 1.0
    return out


class Model:
    """Shared surface for the three classifiers."""

    def __init__(self, shape: ModelShape, params: np.ndarray | None = None):
        self.shape = shape
        if params is None:
            params = np.zeros(shape.param_count)
        self.params = np.asarray(params, dtype=np.float64).ravel().copy()
        if self.params.size != shape.param_count:
            raise DimMismatch("parameter vector does not match shape")

    # ---- to be provided by subclasses -------------------------------------
    def scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def per_example_losses(self, X, y) -> np.ndarray:
        raise NotImplementedError

    def _data_grad(self, X, y) -> np.ndarray:
        """Mean gradient of the data term only."""
        raise NotImplementedError

    def _data_hvp(self, X, y, v) -> np.ndarray:
        raise NotImplementedError

    # ---- common surface ----------------------------------------------------
    @property
    def num_classes(self) -> int:
        return self.shape.layer_dims[-1]

    @property
    def lam(self) -> float:
        return self.shape.l2_lambda

    def clone(self) -> "Model":
        return type(self)(self.shape, self.params.copy())

    def param_vector(self) -> ParamVector:
        return ParamVector(self.params.copy(), self.shape)

    def _check_ds(self, ds: LabeledDataset):
        if ds.num_classes != self.num_classes:
            raise DimMismatch(f"dataset has {ds.num_classes} classes, model emits {self.num_classes}")
        if ds.d != self.shape.layer_dims[0]:
            raise DimMismatch(f"dataset is {ds.d}-dimensional, model expects {self.shape.layer_dims[0]}")

    def loss(self, ds: LabeledDataset) -> float:
        self._check_ds(ds)
        data = float(self.per_example_losses(ds.X, ds.y).mean())
        return data + 0.5 * self.lam * float(self.params @ self.params)

    def grad(self, ds: LabeledDataset) -> np.ndarray:
        self._check_ds(ds)
        g = self._data_grad(ds.X, ds.y) + self.lam * self.params
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient has non-finite entries")
        return g

    def hvp(self, ds: LabeledDataset, v) -> np.ndarray:
        self._check_ds(ds)
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.size != self.params.size:
            raise DimMismatch(f"v has length {v.size}, expected {self.params.size}")
        return self._data_hvp(ds.X, ds.y, v) + self.lam * v

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax breaks ties toward the smaller class index
        return np.argmax(self.scores(np.atleast_2d(X)), axis=1)

    def accuracy(self, ds: LabeledDataset) -> float:
        self._check_ds(ds)
        return float(np.mean(self.predict(ds.X) == ds.y))

    def input_grad(self, X, y) -> np.ndarray:
        """Row i is grad_x of the per-example loss at (X[i], y[i])."""
        raise NotImplementedError

    def cross_data_vjp(self, X, y, u) -> np.ndarray:
        """Row i is grad_x ( grad_w l(X[i], y[i]) . u ). Unregularized."""
        raise NotImplementedError

    def cross_data_jvp(self, x, y, dx) -> np.ndarray:
        """d/dt grad_w l(x + t dx, y) at t = 0 (single point)."""
        raise NotImplementedError

    def loss_matrix(self, X) -> np.ndarray:
        """Entry (i, j): per-example loss of X[i] if it carried label j."""
        raise NotImplementedError


class LinearModel(Model):
    """Scores are X W + b with W of shape (d, C) and bias b of shape (C,)."""

    def _unpack(self, vec=None):
        vec = self.params if vec is None else vec
        d, C = self.shape.layer_dims
        return vec[: d * C].reshape(d, C), vec[d * C:]

    @staticmethod
    def _pack(W, b):
        return np.concatenate([W.ravel(), b])

    def scores(self, X):
        W, b = self._unpack()
        return X @ W + b

    def _score_grad(self, X, y):
        """Per-example dl/ds, an (n, C) matrix."""
        raise NotImplementedError

    def _data_grad(self, X, y):
        G = self._score_grad(X, y)
        n = X.shape[0]
        if n == 0:
            return np.zeros_like(self.params)
        return self._pack(X.T @ G / n, G.mean(axis=0))

    def input_grad(self, X, y):
        W, _ = self._unpack()
        return self._score_grad(X, y) @ W.T


class LogisticRegression(LinearModel):
    """Multiclass softmax cross-entropy."""

    def __init__(self, shape=None, params=None, *, d=None, num_classes=None, l2_lambda=1e-3):
        if shape is None:
            shape = ModelShape("lr", (d, num_classes), "none", l2_lambda)
        super().__init__(shape, params)

    def per_example_losses(self, X, y):
        s = self.scores(X)
        z = s - s.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(z).sum(axis=1))
        return logsumexp - z[np.arange(X.shape[0]), y]

    def _score_grad(self, X, y):
        return softmax(self.scores(X)) - _onehot(y, self.num_classes)

    def _data_hvp(self, X, y, v):
        n = X.shape[0]
        if n == 0:
            return np.zeros_like(v)
        V, vb = self._unpack(v)
        P = softmax(self.scores(X))
        A = X @ V + vb
        HA = P * A - P * np.sum(P * A, axis=1, keepdims=True)
        return self._pack(X.T @ HA / n, HA.mean(axis=0))

    def cross_data_vjp(self, X, y, u):
        X = np.atleast_2d(X)
        y = np.atleast_1d(y)
        U, ub = self._unpack(np.asarray(u, dtype=np.float64).ravel())
        W, _ = self._unpack()
        P = softmax(self.scores(X))
        G = P - _onehot(y, self.num_classes)
        R = X @ U + ub
        HR = P * R - P * np.sum(P * R, axis=1, keepdims=True)
        return G @ U.T + HR @ W.T

    def cross_data_jvp(self, x, y, dx):
        x = np.asarray(x, dtype=np.float64).ravel()
        dx = np.asarray(dx, dtype=np.float64).ravel()
        W, _ = self._unpack()
        p = softmax(x @ W + self._unpack()[1])
        dp = p * (W.T @ dx) - p * float(p @ (W.T @ dx))
        g = p - _onehot(np.array([y]), self.num_classes)[0]
        dW = np.outer(dx, g) + np.outer(x, dp)
        return self._pack(dW, dp)

    def loss_matrix(self, X):
        s = self.scores(X)
        z = s - s.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
        return logsumexp - z


class SmoothedHingeSVM(LinearModel):
    """Multiclass hinge max(0, 1 + max_{j != y} s_j - s_y), quadratically
    smoothed inside the DELTA band."""

    def __init__(self, shape=None, params=None, *, d=None, num_classes=None, l2_lambda=1e-3):
        if shape is None:
            shape = ModelShape("svm", (d, num_classes), "none", l2_lambda)
        super().__init__(shape, params)

    def _margins(self, X, y):
        s = self.scores(X)
        idx = np.arange(X.shape[0])
        s_y = s[idx, y]
        masked = s.copy()
        masked[idx, y] = -np.inf
        j = np.argmax(masked, axis=1)
        z = 1.0 + masked[idx, j] - s_y
        return z, j

    def per_example_losses(self, X, y):
        z, _ = self._margins(X, y)
        return smoothed_hinge(z)

    def _score_grad(self, X, y):
        z, j = self._margins(X, y)
        g = smoothed_hinge_d1(z)
        idx = np.arange(X.shape[0])
        G = np.zeros((X.shape[0], self.num_classes))
        G[idx, j] += g
        G[idx, y] -= g
        return G

    def _data_hvp(self, X, y, v):
        n = X.shape[0]
        if n == 0:
            return np.zeros_like(v)
        V, vb = self._unpack(v)
        z, j = self._margins(X, y)
        c = smoothed_hinge_d2(z)
        A = X @ V + vb
        idx = np.arange(n)
        a_diff = A[idx, j] - A[idx, y]
        coeff = c * a_diff
        HA = np.zeros_like(A)
        HA[idx, j] += coeff
        HA[idx, y] -= coeff
        return self._pack(X.T @ HA / n, HA.mean(axis=0))

    def cross_data_vjp(self, X, y, u):
        X = np.atleast_2d(X)
        y = np.atleast_1d(y)
        U, ub = self._unpack(np.asarray(u, dtype=np.float64).ravel())
        W, _ = self._unpack()
        z, j = self._margins(X, y)
        idx = np.arange(X.shape[0])
        g1 = smoothed_hinge_d1(z)
        g2 = smoothed_hinge_d2(z)
        R = X @ U + ub
        r_diff = R[idx, j] - R[idx, y]
        w_diff = W[:, j].T - W[:, y].T
        u_diff = U[:, j].T - U[:, y].T
        return (g2 * r_diff)[:, None] * w_diff + g1[:, None] * u_diff

    def cross_data_jvp(self, x, y, dx):
        x = np.asarray(x, dtype=np.float64).ravel()
        dx = np.asarray(dx, dtype=np.float64).ravel()
        W, b = self._unpack()
        z, j = self._margins(x[None, :], np.array([y]))
        z, j = float(z[0]), int(j[0])
        dz = float((W[:, j] - W[:, y]) @ dx)
        g1 = float(smoothed_hinge_d1(np.array([z]))[0])
        g2 = float(smoothed_hinge_d2(np.array([z]))[0])
        e = np.zeros(self.num_classes)
        e[j] += 1.0
        e[y] -= 1.0
        dW = g2 * dz * np.outer(x, e) + g1 * np.outer(dx, e)
        db = g2 * dz * e
        return self._pack(dW, db)

    def loss_matrix(self, X):
        s = self.scores(X)
        n, C = s.shape
        out = np.empty((n, C))
        for c in range(C):
            masked = s.copy()
            masked[:, c] = -np.inf
            out[:, c] = smoothed_hinge(1.0 + masked.max(axis=1) - s[:, c])
        return out


# ---------------------------------------------------------------------------
# MLP core: shared by the classifier and the generator
# ---------------------------------------------------------------------------

def _unflatten(vec, dims):
    layers, off = [], 0
    for din, dout in zip(dims[:-1], dims[1:]):
        W = vec[off: off + din * dout].reshape(din, dout)
        off += din * dout
        b = vec[off: off + dout]
        off += dout
        layers.append((W, b))
    return layers


def _flatten(layers):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def _mlp_forward(layers, X, hidden_act="leaky_relu", out_act="none"):
    """Returns per-layer pre-activations zs and activations (a_0 = X)."""
    acts = [X]
    zs = []
    a = X
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        zs.append(z)
        last = i == len(layers) - 1
        if last:
            a = _apply_act(z, out_act)
        else:
            a = _apply_act(z, hidden_act)
        acts.append(a)
    return zs, acts


def _apply_act(z, act):
    if act == "none":
        return z
    if act == "leaky_relu":
        return leaky_relu(z)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {act!r}")


def _act_deriv(z, act):
    if act == "none":
        return np.ones_like(z)
    if act == "leaky_relu":
        return leaky_relu_deriv(z)
    if act == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {act!r}")


def _act_second_deriv(z, act):
    if act in ("none", "leaky_relu"):
        return np.zeros_like(z)
    if act == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    raise ValueError(f"unknown activation {act!r}")


def _mlp_backward(layers, zs, acts, dL_dout, hidden_act="leaky_relu", out_act="none"):
    """Backprop a cotangent on the network output; returns (param grads, input grad)."""
    grads = [None] * len(layers)
    delta = dL_dout * _act_deriv(zs[-1], out_act)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * _act_deriv(zs[i - 1], hidden_act)
        else:
            delta = delta @ W.T
    return grads, delta


class Mlp(Model):
    """Fully connected leaky-ReLU classifier with a softmax cross-entropy head."""

    def __init__(self, shape=None, params=None, *, layer_dims=None, l2_lambda=0.0):
        if shape is None:
            shape = ModelShape("mlp", tuple(layer_dims), "leaky_relu", l2_lambda)
        super().__init__(shape, params)

    def _layers(self, vec=None):
        return _unflatten(self.params if vec is None else vec, self.shape.layer_dims)

    def scores(self, X):
        _, acts = _mlp_forward(self._layers(), np.atleast_2d(X))
        return acts[-1]

    def per_example_losses(self, X, y):
        s = self.scores(X)
        z = s - s.max(axis=1, keepdims=True)
        return np.log(np.exp(z).sum(axis=1)) - z[np.arange(X.shape[0]), y]

    def _data_grad(self, X, y):
        n = X.shape[0]
        layers = self._layers()
        zs, acts = _mlp_forward(layers, X)
        G = (softmax(acts[-1]) - _onehot(y, self.num_classes)) / n
        grads, _ = _mlp_backward(layers, zs, acts, G)
        return _flatten(grads)

    def _data_hvp(self, X, y, v):
        """Exact Hessian-vector product via a tangent (forward-over-reverse) pass.

        Leaky ReLU is piecewise linear so its second derivative vanishes a.e.;
        the softmax head supplies the curvature: R{dl/ds} = (diag(p) - p p^T) Rs.
        """
        n = X.shape[0]
        layers = self._layers()
        tangent = _unflatten(np.asarray(v, dtype=np.float64).ravel(), self.shape.layer_dims)
        zs, acts = _mlp_forward(layers, X)
        # tangent forward sweep
        r_acts = [np.zeros_like(X)]
        r_zs = []
        for i, ((W, b), (V, c)) in enumerate(zip(layers, tangent)):
            rz = acts[i] @ V + c + r_acts[i] @ W
            r_zs.append(rz)
            if i == len(layers) - 1:
                r_acts.append(rz)  # linear head
            else:
                r_acts.append(_act_deriv(zs[i], "leaky_relu") * rz)
        P = softmax(acts[-1])
        G = (P - _onehot(y, self.num_classes)) / n
        RG = (P * r_zs[-1] - P * np.sum(P * r_zs[-1], axis=1, keepdims=True)) / n
        # tangent backward sweep: track delta and its tangent together
        hgrads = [None] * len(layers)
        delta, r_delta = G, RG
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            V, _ = tangent[i]
            hgrads[i] = (r_acts[i].T @ delta + acts[i].T @ r_delta, r_delta.sum(axis=0))
            if i > 0:
                d = _act_deriv(zs[i - 1], "leaky_relu")
                r_delta = d * (delta @ V.T + r_delta @ W.T)
                delta = d * (delta @ W.T)
        return _flatten(hgrads)

    def input_grad(self, X, y):
        X = np.atleast_2d(X)
        layers = self._layers()
        zs, acts = _mlp_forward(layers, X)
        G = softmax(acts[-1]) - _onehot(y, self.num_classes)
        _, dx = _mlp_backward(layers, zs, acts, G)
        return dx

    def _point_grad_dot(self, x, y, u):
        """grad_w l(x, y) . u for one example."""
        layers = self._layers()
        zs, acts = _mlp_forward(layers, x[None, :])
        G = softmax(acts[-1]) - _onehot(np.array([y]), self.num_classes)
        grads, _ = _mlp_backward(layers, zs, acts, G)
        return float(_flatten(grads) @ u)

    def cross_data_vjp(self, X, y, u, h: float = 1e-4):
        """Central differences over the data point (the non-convex fallback)."""
        X = np.atleast_2d(X)
        y = np.atleast_1d(y)
        u = np.asarray(u, dtype=np.float64).ravel()
        out = np.zeros_like(X)
        for r in range(X.shape[0]):
            for k in range(X.shape[1]):
                xp, xm = X[r].copy(), X[r].copy()
                xp[k] += h
                xm[k] -= h
                out[r, k] = (self._point_grad_dot(xp, y[r], u)
                             - self._point_grad_dot(xm, y[r], u)) / (2 * h)
        return out

    def cross_data_jvp(self, x, y, dx, h: float = 1e-4):
        x = np.asarray(x, dtype=np.float64).ravel()
        dx = np.asarray(dx, dtype=np.float64).ravel()
        ds_p = LabeledDataset((x + h * dx)[None, :], np.array([y]), self.num_classes)
        ds_m = LabeledDataset((x - h * dx)[None, :], np.array([y]), self.num_classes)
        return (self._data_grad(ds_p.X, ds_p.y) - self._data_grad(ds_m.X, ds_m.y)) / (2 * h)

    def loss_matrix(self, X):
        s = self.scores(X)
        z = s - s.max(axis=1, keepdims=True)
        return np.log(np.exp(z).sum(axis=1, keepdims=True)) - z


class GeneratorNet:
    """Attacker network mapping (x, one-hot y) -> poisoned features.

    Input dim d + C, sigmoid output clamps features into (0, 1); labels pass
    through unchanged (clean-label contract).
    """

    def __init__(self, shape: ModelShape, params=None):
        if shape.kind != "gen":
            raise ValueError("GeneratorNet needs a gen shape")
        self.shape = shape
        if params is None:
            params = np.zeros(shape.param_count)
        self.params = np.asarray(params, dtype=np.float64).ravel().copy()
        if self.params.size != shape.param_count:
            raise DimMismatch("parameter vector does not match shape")

    @classmethod
    def default(cls, d: int, num_classes: int, hidden: int = 256):
        return cls(ModelShape("gen", (d + num_classes, hidden, hidden, d), "leaky_relu"))

    @property
    def out_dim(self) -> int:
        return self.shape.layer_dims[-1]

    @property
    def num_classes(self) -> int:
        return self.shape.layer_dims[0] - self.shape.layer_dims[-1]

    def clone(self) -> "GeneratorNet":
        return GeneratorNet(self.shape, self.params.copy())

    def _layers(self):
        return _unflatten(self.params, self.shape.layer_dims)

    def _inputs(self, X, y):
        return np.hstack([X, _onehot(y, self.num_classes)])

    def forward_features(self, X, y) -> np.ndarray:
        _, acts = _mlp_forward(self._layers(), self._inputs(X, y), out_act="sigmoid")
        return acts[-1]

    def forward(self, ds: LabeledDataset) -> LabeledDataset:
        """Replace features by generator output; labels unchanged."""
        Xp = np.clip(self.forward_features(ds.X, ds.y), 0.0, 1.0)
        return LabeledDataset(Xp, ds.y, ds.num_classes, unit_range=True,
                              poison_mask=np.ones(ds.n, dtype=bool))

    def vjp_params(self, X, y, cotangent) -> np.ndarray:
        """theta-gradient of sum_i cotangent_i . output_i."""
        layers = self._layers()
        zs, acts = _mlp_forward(layers, self._inputs(X, y), out_act="sigmoid")
        grads, _ = _mlp_backward(layers, zs, acts, np.asarray(cotangent), out_act="sigmoid")
        return _flatten(grads)

    def mse(self, ds: LabeledDataset) -> float:
        out = self.forward_features(ds.X, ds.y)
        return float(np.mean((out - ds.X) ** 2))

    def mse_grad(self, X, y) -> np.ndarray:
        layers = self._layers()
        zs, acts = _mlp_forward(layers, self._inputs(X, y), out_act="sigmoid")
        cot = 2.0 * (acts[-1] - X) / X.size
        grads, _ = _mlp_backward(layers, zs, acts, cot, out_act="sigmoid")
        return _flatten(grads)


# ---------------------------------------------------------------------------
# Construction, training, checkpoints
# ---------------------------------------------------------------------------

def make_model(kind: str, d: int, num_classes: int, *, hidden=(300, 100),
               l2_lambda: float | None = None) -> Model:
    if kind == "lr":
        lam = 1e-3 if l2_lambda is None else l2_lambda
        return LogisticRegression(d=d, num_classes=num_classes, l2_lambda=lam)
    if kind == "svm":
        lam = 1e-3 if l2_lambda is None else l2_lambda
        return SmoothedHingeSVM(d=d, num_classes=num_classes, l2_lambda=lam)
    if kind == "mlp":
        lam = 0.0 if l2_lambda is None else l2_lambda
        return Mlp(layer_dims=(d, *hidden, num_classes), l2_lambda=lam)
    raise ValueError(f"unknown victim kind {kind!r}")


def init_params(shape: ModelShape, rng: np.random.Generator) -> np.ndarray:
    """Kaiming-style fan-in scaled normal weights, zero biases.

    Linear classifiers start at zero (their documented init behaviour)."""
    if shape.kind in ("lr", "svm"):
        return np.zeros(shape.param_count)
    layers = []
    dims = shape.layer_dims
    for din, dout in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout))
        layers.append((W, np.zeros(dout)))
    return _flatten(layers)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.1
    batch_size: int | None = 1000
    grad_tol: float = 1e-5   # warm-start refinement stopping rule
    max_refine_steps: int = 500


def train_gd(model: Model, ds: LabeledDataset, cfg: TrainConfig,
             rng: np.random.Generator, plan: OrderingPlan | None = None) -> Model:
    """Plain gradient descent, full batch when cfg.batch_size is None.

    With a plan, batches walk the stored permutation; reshuffle_each_epoch
    redraws it per epoch from rng. Mutates and returns the model.
    """
    n = ds.n
    bs = cfg.batch_size
    if bs is None or bs >= n:
        for _ in range(cfg.epochs):
            model.params -= cfg.lr * model.grad(ds)
        return model
    perm = plan.permutation if plan is not None else rng.permutation(n)
    reshuffle = plan.reshuffle_each_epoch if plan is not None else True
    for _ in range(cfg.epochs):
        if reshuffle:
            perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start: start + bs]
            batch = ds.take(idx)
            model.params -= cfg.lr * model.grad(batch)
    return model


def train_to_tol(model: Model, ds: LabeledDataset, *, lr: float,
                 grad_tol: float = 1e-5, max_steps: int = 500) -> int:
    """Warm-started full-batch GD until the gradient norm falls below tol.

    The step size is halved when a step fails to reduce the loss, which keeps
    the plain-GD contract while staying robust to an over-large lr. Returns
    the number of steps taken.
    """
    cur_loss = model.loss(ds)
    step = lr
    for k in range(max_steps):
        g = model.grad(ds)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            return k
        trial = model.params - step * g
        saved = model.params
        model.params = trial
        new_loss = model.loss(ds)
        if new_loss > cur_loss and step > 1e-6 * lr:
            model.params = saved
            step *= 0.5
            continue
        cur_loss = new_loss
    return max_steps


def save_checkpoint(path, model) -> None:
    """Header line (magic, kind, layer_dims, lambda, activation) then the flat
    float64 little-endian parameter payload."""
    s = model.shape
    header = (f"{CHECKPOINT_MAGIC} kind={s.kind} layer_dims={','.join(map(str, s.layer_dims))} "
              f"l2={s.l2_lambda!r} activation={s.activation}\n")
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(struct.pack(f"<{model.params.size}d", *model.params))


def load_checkpoint(path):
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8").strip().split()
        if not header or header[0] != CHECKPOINT_MAGIC:
            raise ValueError("not a poisonbench checkpoint")
        kv = dict(part.split("=", 1) for part in header[1:])
        shape = ModelShape(kv["kind"], tuple(int(t) for t in kv["layer_dims"].split(",")),
                           kv.get("activation", "none"), float(kv["l2"]))
        payload = f.read()
    params = np.array(struct.unpack(f"<{shape.param_count}d", payload))
    if shape.kind == "lr":
        return LogisticRegression(shape, params)
    if shape.kind == "svm":
        return SmoothedHingeSVM(shape, params)
    if shape.kind == "mlp":
        return Mlp(shape, params)
    return GeneratorNet(shape, params)


# spec-surface free functions -------------------------------------------------

def loss(model, ds):
    return model.loss(ds)


def grad(model, ds):
    return model.grad(ds)


def hvp(model, ds, v):
    return model.hvp(ds, v)


def accuracy(model, ds):
    return model.accuracy(ds)


def cross_hvp_data(model, point_index: int, ds: LabeledDataset, u) -> np.ndarray:
    """grad over the data point of ( grad_w l(point) . u )."""
    if not 0 <= point_index < ds.n:
        raise IndexOutOfRange(f"point {point_index} outside dataset of {ds.n} rows")
    return model.cross_data_vjp(ds.X[point_index], ds.y[point_index], u)[0]


def cross_hvp_theta(gen: GeneratorNet, victim: Model, poisoned_ds: LabeledDataset,
                    source_ds: LabeledDataset, u) -> np.ndarray:
    """grad_theta ( grad_w f(poisoned rows) . u ), f unnormalized over the rows.

    poisoned_ds rows must be the generator's output on source_ds; the scalar
    grad_w f . u is differentiated through the generator's forward pass.
    """
    regenerated = gen.forward_features(source_ds.X, source_ds.y)
    if poisoned_ds.X.shape != regenerated.shape or not np.allclose(
            poisoned_ds.X, np.clip(regenerated, 0.0, 1.0), atol=1e-8):
        raise ProvenanceMismatch("poisoned rows were not generated by this generator")
    cot = victim.cross_data_vjp(poisoned_ds.X, poisoned_ds.y, u)
    return gen.vjp_params(source_ds.X, source_ds.y, cot)


def gen_forward(gen: GeneratorNet, ds_slice: LabeledDataset) -> LabeledDataset:
    return gen.forward(ds_slice)
