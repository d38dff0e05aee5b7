"""Minimal dense-network engine: forward pass, reverse-mode gradients,
Adam training with early stopping, and finite-difference verification.

Networks emit either 24 point outputs (one per hour) or 48 distribution
parameters (a Gaussian mean and standard deviation per hour). Everything
runs in double precision; a fixed seed makes initialization, shuffling
and dropout fully reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonPositiveSigma, ShapeMismatch, WrongHead

OUTPUT_HOURS = 24
SIGMA_FLOOR = 1e-6

ACTIVATIONS = ("relu", "tanh", "sigmoid")
HEADS = ("point", "gaussian")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture and seed; the paper's models use one or two hidden layers."""

    input_dim: int
    hidden: tuple = (64, 64)
    activation: str = "relu"
    head: str = "point"
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def output_dim(self) -> int:
        return 2 * OUTPUT_HOURS if self.head == "gaussian" else OUTPUT_HOURS

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    l2_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.patience < 0 or self.l2_weight < 0:
            raise ValueError("patience and l2_weight must be >= 0")


class Network:
    """Weight matrices and bias vectors chained per the spec."""

    def __init__(self, spec: NetworkSpec, weights: list[np.ndarray],
                 biases: list[np.ndarray]):
        dims = spec.layer_dims
        for l, (W, b) in enumerate(zip(weights, biases)):
            if W.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ShapeMismatch(f"layer {l}: got W{W.shape}, b{b.shape}")
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @property
    def parameter_count(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(self.spec, [W.copy() for W in self.weights],
                       [b.copy() for b in self.biases])

    def to_json(self) -> str:
        payload = {
            "schema": "epfbench-network/1",
            "spec": {
                "input_dim": self.spec.input_dim,
                "hidden": list(self.spec.hidden),
                "activation": self.spec.activation,
                "head": self.spec.head,
                "dropout_rate": self.spec.dropout_rate,
                "seed": self.spec.seed,
            },
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Network":
        payload = json.loads(text)
        if payload.get("schema") != "epfbench-network/1":
            raise ValueError(f"unsupported network schema {payload.get('schema')!r}")
        raw = payload["spec"]
        spec = NetworkSpec(input_dim=int(raw["input_dim"]), hidden=tuple(raw["hidden"]),
                           activation=raw["activation"], head=raw["head"],
                           dropout_rate=float(raw["dropout_rate"]), seed=int(raw["seed"]))
        weights = [np.asarray(W, dtype=float) for W in payload["weights"]]
        biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
        return cls(spec, weights, biases)


def init_network(spec: NetworkSpec) -> Network:
    """Glorot-uniform weights (+/- sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return _sigmoid(z)


def _activate_grad(z, a, name):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def softplus(z):
    return np.logaddexp(0.0, z)


def forward(network: Network, x: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None):
    """Run the network; returns (output, cache).

    A point head emits 24 values; a Gaussian head emits 24 means
    followed by 24 standard deviations (softplus of the raw output plus
    a small floor, so sigma > 0 for any finite input). Dropout (inverted
    scaling) is applied to hidden activations only when ``training``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != network.spec.input_dim:
        raise ShapeMismatch(
            f"input has {X.shape[1]} features, network expects {network.spec.input_dim}")
    spec = network.spec
    drop = spec.dropout_rate if training else 0.0
    if drop > 0.0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    a = X
    zs, acts, masks = [], [X], []
    n_layers = len(network.weights)
    for l in range(n_layers):
        z = a @ network.weights[l] + network.biases[l]
        zs.append(z)
        if l < n_layers - 1:
            a = _activate(z, spec.activation)
            if drop > 0.0:
                mask = (rng.random(a.shape) >= drop) / (1.0 - drop)
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
            acts.append(a)
    raw = zs[-1]
    if spec.head == "gaussian":
        mu = raw[:, :OUTPUT_HOURS]
        sig = softplus(raw[:, OUTPUT_HOURS:]) + SIGMA_FLOOR
        out = np.concatenate([mu, sig], axis=1)
    else:
        out = raw
    cache = {"zs": zs, "acts": acts, "masks": masks, "out": out}
    return (out[0] if single else out), cache


def predict(network: Network, x: np.ndarray) -> np.ndarray:
    """Deterministic inference-mode forward pass."""
    out, _ = forward(network, x, training=False)
    return out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all hours (and batch rows, if any)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def gaussian_nll(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> float:
    """Mean over hours of ln(sigma) + (y-mu)^2/(2 sigma^2) + 0.5 ln(2 pi)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(sigma <= 0):
        raise NonPositiveSigma(f"sigma must be positive, min was {sigma.min()}")
    return float(np.mean(np.log(sigma) + (y - mu) ** 2 / (2 * sigma ** 2)
                         + 0.5 * np.log(2 * np.pi)))


def loss_value(network: Network, x: np.ndarray, target: np.ndarray,
               loss: str | None = None, l2_weight: float = 0.0) -> float:
    """Data loss plus the 0.5 * l2 * ||W||^2 penalty used in training."""
    loss = loss or _default_loss(network.spec.head)
    out = predict(network, x)
    out2 = out[None, :] if out.ndim == 1 else out
    target2 = np.atleast_2d(np.asarray(target, dtype=float))
    if loss == "mse":
        value = mse_loss(out2, target2)
    elif loss == "gaussian_nll":
        value = gaussian_nll(out2[:, :OUTPUT_HOURS], out2[:, OUTPUT_HOURS:], target2)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if l2_weight > 0.0:
        value += 0.5 * l2_weight * sum(float(np.sum(W * W)) for W in network.weights)
    return value


def _default_loss(head: str) -> str:
    return "gaussian_nll" if head == "gaussian" else "mse"


def _loss_and_output_grad(spec: NetworkSpec, cache: dict, target: np.ndarray,
                          loss: str):
    """Gradient of the mean loss w.r.t. the final raw (pre-head) layer."""
    out = cache["out"]
    B = out.shape[0]
    denom = B * OUTPUT_HOURS
    if loss == "mse":
        if spec.head != "point":
            raise WrongHead("mse loss requires a point head")
        return 2.0 * (out - target) / denom
    if loss == "gaussian_nll":
        if spec.head != "gaussian":
            raise WrongHead("gaussian_nll requires a gaussian head")
        mu = out[:, :OUTPUT_HOURS]
        sig = out[:, OUTPUT_HOURS:]
        raw_sig = cache["zs"][-1][:, OUTPUT_HOURS:]
        d_mu = (mu - target) / sig ** 2 / denom
        d_sig = (1.0 / sig - (target - mu) ** 2 / sig ** 3) / denom
        d_raw_sig = d_sig * _sigmoid(raw_sig)  # softplus'(z) = sigmoid(z)
        return np.concatenate([d_mu, d_raw_sig], axis=1)
    raise ValueError(f"unknown loss {loss!r}")


def backward(network: Network, x: np.ndarray, target: np.ndarray,
             loss: str | None = None, l2_weight: float = 0.0,
             cache: dict | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse-mode gradient of the batch-mean loss for every parameter.

    Pass the ``cache`` from a training-mode forward call to differentiate
    through its dropout masks; otherwise an inference-mode forward pass
    is run here.
    """
    x = np.asarray(x, dtype=float)
    X = x[None, :] if x.ndim == 1 else x
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape != (X.shape[0], OUTPUT_HOURS):
        raise ShapeMismatch(
            f"target {target.shape} does not match ({X.shape[0]}, {OUTPUT_HOURS})")
    if cache is None:
        _, cache = forward(network, X, training=False)
    spec = network.spec
    loss = loss or _default_loss(spec.head)
    delta = _loss_and_output_grad(spec, cache, target, loss)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(network.weights)
    for l in range(len(network.weights) - 1, -1, -1):
        a_prev = cache["acts"][l]
        dW = a_prev.T @ delta
        db = delta.sum(axis=0)
        if l2_weight > 0.0:
            dW = dW + l2_weight * network.weights[l]
        grads[l] = (dW, db)
        if l > 0:
            delta = delta @ network.weights[l].T
            mask = cache["masks"][l - 1]
            if mask is not None:
                delta = delta * mask
            delta = delta * _activate_grad(cache["zs"][l - 1], cache["acts"][l], spec.activation)
    return grads


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    epochs_run: int = 0
    diverged: bool = False


def train(network: Network, train_set, val_set, config: TrainConfig):
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) with validation early stopping.

    Stops once the validation loss has not improved for ``patience``
    consecutive epochs (patience 0 therefore trains exactly one epoch)
    and restores the best-validation weights. A non-finite loss ends
    training and is flagged in the history. Fully deterministic for a
    fixed config seed.
    """
    X, Y = (np.asarray(a, dtype=float) for a in train_set)
    Xv, Yv = (np.asarray(a, dtype=float) for a in val_set)
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("train and validation sets must be non-empty")
    loss = _default_loss(network.spec.head)
    rng = np.random.default_rng(config.seed)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = [np.zeros_like(W) for W in network.weights] + [np.zeros_like(b) for b in network.biases]
    v = [np.zeros_like(g) for g in m]
    t = 0
    history = TrainHistory()
    best_weights = [W.copy() for W in network.weights]
    best_biases = [b.copy() for b in network.biases]
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(X))
        batch_losses = []
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            _, cache = forward(network, xb, training=True, rng=rng)
            out = cache["out"]
            if loss == "mse":
                batch_losses.append(mse_loss(out, yb))
            else:
                batch_losses.append(gaussian_nll(out[:, :OUTPUT_HOURS],
                                                 out[:, OUTPUT_HOURS:], yb))
            grads = backward(network, xb, yb, loss=loss,
                             l2_weight=config.l2_weight, cache=cache)
            t += 1
            params = network.weights + network.biases
            flat_grads = [g[0] for g in grads] + [g[1] for g in grads]
            for k, (p, g) in enumerate(zip(params, flat_grads)):
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v[k] = beta2 * v[k] + (1 - beta2) * g * g
                m_hat = m[k] / (1 - beta1 ** t)
                v_hat = v[k] / (1 - beta2 ** t)
                p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        train_loss = float(np.mean(batch_losses))
        val_loss = loss_value(network, Xv, Yv, loss=loss)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.epochs_run = epoch
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            history.diverged = True
            break
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_weights = [W.copy() for W in network.weights]
            best_biases = [b.copy() for b in network.biases]
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    network.weights = best_weights
    network.biases = best_biases
    return network, history


def finite_difference_gradients(network: Network, x, target, loss: str | None = None,
                                l2_weight: float = 0.0, epsilon: float = 1e-5):
    """Central-difference gradient of loss_value for every parameter."""
    grads = []
    for P in network.weights + network.biases:
        g = np.zeros_like(P)
        it = np.nditer(P, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = P[ix]
            P[ix] = orig + epsilon
            up = loss_value(network, x, target, loss, l2_weight)
            P[ix] = orig - epsilon
            down = loss_value(network, x, target, loss, l2_weight)
            P[ix] = orig
            g[ix] = (up - down) / (2 * epsilon)
        grads.append(g)
    return grads


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    max_rel_error: float
    worst_param: str
    n_trials: int


def _min_kink_distance(network: Network, x) -> float:
    """Smallest |pre-activation| among hidden layers (relu kink proximity)."""
    _, cache = forward(network, x, training=False)
    hidden = cache["zs"][:-1]
    if not hidden:
        return np.inf
    return min(float(np.min(np.abs(z))) for z in hidden)


def gradcheck(spec: NetworkSpec, n_trials: int = 5, tolerance: float = 1e-4,
              seed: int = 0, l2_weight: float = 0.0,
              epsilon: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients with central finite differences.

    Each trial draws a fresh network and batch. For relu nets, inputs
    whose hidden pre-activations come within 1e-3 of a kink are
    resampled, since finite differences are invalid there. Relative
    error uses max(1, |a|, |b|) in the denominator.
    """
    rng = np.random.default_rng(seed)
    loss = _default_loss(spec.head)
    worst = 0.0
    worst_param = ""
    for trial in range(n_trials):
        net = init_network(replace(spec, seed=spec.seed + 1000 + trial))
        for _ in range(200):
            x = rng.standard_normal((3, spec.input_dim))
            if spec.activation != "relu" or _min_kink_distance(net, x) > 1e-3:
                break
        else:
            raise RuntimeError("could not sample inputs clear of relu kinks")
        y = rng.standard_normal((3, OUTPUT_HOURS))
        analytic = backward(net, x, y, loss=loss, l2_weight=l2_weight)
        flat_analytic = [g[0] for g in analytic] + [g[1] for g in analytic]
        numeric = finite_difference_gradients(net, x, y, loss, l2_weight, epsilon)
        names = [f"W{l}" for l in range(len(net.weights))] + \
                [f"b{l}" for l in range(len(net.biases))]
        for name, ga, gn in zip(names, flat_analytic, numeric):
            denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gn)))
            rel = np.abs(ga - gn) / denom
            local = float(rel.max())
            if local > worst:
                worst = local
                worst_param = f"trial {trial}, {name}[{np.unravel_index(rel.argmax(), rel.shape)}]"
    return GradCheckReport(passed=worst < tolerance, tolerance=tolerance,
                           max_rel_error=worst, worst_param=worst_param,
                           n_trials=n_trials)
