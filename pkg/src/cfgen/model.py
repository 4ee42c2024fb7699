"""Differentiable binary classifier: an affine map plus sigmoid.

The counterfactual engine only needs two things from a model: the unscaled
logit and its gradient with respect to the input, so deeper architectures can
be swapped in behind the same surface later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schema import DatasetSchema, InstanceSet

__all__ = ["TrainingConfig", "LinearModel", "ModelError", "train"]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 20
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainingConfig":
        return cls(**doc)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # numerically stable for large |z|
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LinearModel:
    """logit(x) = weights . x + bias; probability = sigmoid(logit).

    The predicted label is 1 iff the probability is >= 0.5, i.e. iff the
    logit is >= 0. Because the model is linear, the gradient of the logit
    with respect to the input is the weight vector itself.
    """

    weights: np.ndarray
    bias: float
    config: TrainingConfig = TrainingConfig()
    loss_history: list[float] = field(default_factory=list)

    def _check_width(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.weights.shape[0]:
            raise ModelError(
                f"input width {x.shape[-1]} does not match model width {self.weights.shape[0]}"
            )

    def logit(self, x: np.ndarray) -> float:
        self._check_width(x)
        return float(np.dot(self.weights, x) + self.bias)

    def logits(self, xs: np.ndarray) -> np.ndarray:
        self._check_width(xs)
        return xs @ self.weights + self.bias

    def probability(self, x: np.ndarray) -> float:
        return float(_sigmoid(np.asarray([self.logit(x)]))[0])

    def predict(self, x: np.ndarray) -> int:
        return 1 if self.logit(x) >= 0.0 else 0

    def predict_many(self, xs: np.ndarray) -> np.ndarray:
        return (self.logits(xs) >= 0.0).astype(int)

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the logit w.r.t. the input; constant for a linear map."""
        self._check_width(np.asarray(x))
        return self.weights.copy()

    def accuracy(self, data: InstanceSet) -> float:
        if len(data) == 0:
            raise ModelError("cannot score an empty instance set")
        return float(np.mean(self.predict_many(data.encoded_matrix) == data.labels))

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path, schema: DatasetSchema) -> None:
        doc = {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "schema_fingerprint": schema.fingerprint(),
            "training_config": self.config.to_json_dict(),
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, schema: DatasetSchema) -> "LinearModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        fingerprint = doc.get("schema_fingerprint")
        if fingerprint != schema.fingerprint():
            raise ModelError(
                "model was trained against a different schema "
                f"(fingerprint {fingerprint!r} != {schema.fingerprint()!r})"
            )
        return cls(
            weights=np.asarray(doc["weights"], dtype=float),
            bias=float(doc["bias"]),
            config=TrainingConfig.from_json_dict(doc["training_config"]),
        )


def cross_entropy(model: LinearModel, xs: np.ndarray, ys: np.ndarray) -> float:
    """Mean binary cross entropy of the model on (xs, ys)."""
    z = model.logits(xs)
    # log(1 + exp(-|z|)) form avoids overflow
    return float(np.mean(np.logaddexp(0.0, z) - ys * z))


def train(train_set: InstanceSet, config: TrainingConfig = TrainingConfig(), seed: int = 0) -> LinearModel:
    """Fit the affine+sigmoid model by minimizing cross entropy with Adam.

    Deterministic for a fixed seed: weight initialization and the per-epoch
    shuffle order both come from the same seeded generator. ``epochs == 0``
    returns the initialization untouched.
    """
    if len(train_set) == 0:
        raise ModelError("training set is empty")
    ys = train_set.labels.astype(float)
    if ys.min() == ys.max():
        raise ModelError("degenerate labels: training set contains a single class")
    xs = train_set.encoded_matrix
    n, width = xs.shape

    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.uniform(-0.01, 0.01, size=width)
    b = 0.0

    # Adam state
    m_w = np.zeros(width)
    v_w = np.zeros(width)
    m_b = 0.0
    v_b = 0.0
    t = 0
    beta1, beta2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon

    model = LinearModel(weights=w, bias=b, config=config)
    history: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = xs[batch], ys[batch]
            err = _sigmoid(xb @ w + b) - yb
            g_w = xb.T @ err / len(batch)
            g_b = float(np.mean(err))

            t += 1
            m_w = beta1 * m_w + (1.0 - beta1) * g_w
            v_w = beta2 * v_w + (1.0 - beta2) * g_w * g_w
            m_b = beta1 * m_b + (1.0 - beta1) * g_b
            v_b = beta2 * v_b + (1.0 - beta2) * g_b * g_b
            m_w_hat = m_w / (1.0 - beta1**t)
            v_w_hat = v_w / (1.0 - beta2**t)
            m_b_hat = m_b / (1.0 - beta1**t)
            v_b_hat = v_b / (1.0 - beta2**t)
            w = w - config.learning_rate * m_w_hat / (np.sqrt(v_w_hat) + eps)
            b = b - config.learning_rate * m_b_hat / (np.sqrt(v_b_hat) + eps)
        model = LinearModel(weights=w, bias=b, config=config)
        history.append(cross_entropy(model, xs, ys))

    model = LinearModel(weights=w, bias=b, config=config, loss_history=history)
    return model
