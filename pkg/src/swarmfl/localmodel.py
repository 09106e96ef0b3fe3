"""Multinomial logistic regression used as the per-device surrogate model.

Parameters are a flat vector holding a ``(n_features + 1, num_classes)``
matrix in row-major order; the last row is the bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .domain import Device, ModelParams
from .errors import DimensionMismatch, EmptyTestSet


def param_dim(n_features: int, num_classes: int) -> int:
    return (n_features + 1) * num_classes


def _unpack(params: ModelParams | np.ndarray, data: Dataset) -> np.ndarray:
    vals = params.values if isinstance(params, ModelParams) else np.asarray(params, dtype=np.float64)
    expected = param_dim(data.n_features, data.num_classes)
    if vals.shape[0] != expected:
        raise DimensionMismatch(f"params have dim {vals.shape[0]}, data needs {expected}")
    return vals.reshape(data.n_features + 1, data.num_classes)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _logits(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ w[:-1] + w[-1]


def local_loss(params: ModelParams | np.ndarray, data: Dataset) -> float:
    """Mean cross-entropy over the samples in ``data``."""
    w = _unpack(params, data)
    if data.n == 0:
        raise EmptyTestSet("cannot evaluate loss on an empty slice")
    logp = _log_softmax(_logits(w, data.features))
    return float(-logp[np.arange(data.n), data.labels].mean())


def loss_and_grad(params: ModelParams | np.ndarray, data: Dataset) -> tuple[float, np.ndarray]:
    w = _unpack(params, data)
    x, y = data.features, data.labels
    logp = _log_softmax(_logits(w, x))
    probs = np.exp(logp)
    probs[np.arange(data.n), y] -= 1.0
    probs /= data.n
    grad = np.empty_like(w)
    grad[:-1] = x.T @ probs
    grad[-1] = probs.sum(axis=0)
    return float(-logp[np.arange(data.n), y].mean()), grad.ravel()


def max_stable_lr(data: Dataset) -> float:
    """Step size below which full-batch GD cannot increase the loss.

    The cross-entropy Hessian is bounded by ``0.5 * lambda_max(Xb^T Xb / n)``
    where ``Xb`` is the bias-augmented design matrix, so ``lr < 2 / L``.
    """
    xb = np.hstack([data.features, np.ones((data.n, 1))])
    lam = float(np.linalg.eigvalsh(xb.T @ xb / data.n)[-1])
    return 4.0 / lam


@dataclass(frozen=True)
class TrainReport:
    updated_params: ModelParams
    final_loss: float
    steps: int
    energy_train_j: float
    wall_time_model_s: float
    loss_trace: tuple[float, ...] = ()


def local_train(
    params: ModelParams,
    data: Dataset,
    steps: int,
    lr: float,
    device: Device,
    seed: int = 0,
    cost_per_step: float = 1e6,
) -> TrainReport:
    """Full-batch gradient descent. ``seed`` is accepted for interface symmetry;
    full-batch GD draws no randomness."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    w = params.values.copy()
    _unpack(w, data)
    trace = []
    for _ in range(steps):
        loss, grad = loss_and_grad(w, data)
        trace.append(loss)
        w -= lr * grad
    final = local_loss(w, data)
    trace.append(final)
    return TrainReport(
        updated_params=ModelParams(w),
        final_loss=final,
        steps=steps,
        energy_train_j=steps * device.energy_per_step_j,
        wall_time_model_s=steps * (cost_per_step / device.compute_capacity),
        loss_trace=tuple(trace),
    )


def predict(params: ModelParams | np.ndarray, data: Dataset) -> np.ndarray:
    w = _unpack(params, data)
    return np.argmax(_logits(w, data.features), axis=1)


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, float]:
    """Accuracy plus macro precision/recall/F1 over labels present in either
    array; undefined ratios count as 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise EmptyTestSet("empty test set")
    labels = np.union1d(y_true, y_pred)
    prec, rec, f1 = [], [], []
    for c in labels:
        tp = float(np.sum((y_pred == c) & (y_true == c)))
        pp = float(np.sum(y_pred == c))
        ap = float(np.sum(y_true == c))
        p = tp / pp if pp else 0.0
        r = tp / ap if ap else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return {
        "accuracy": float(np.mean(y_true == y_pred)),
        "precision_macro": float(np.mean(prec)),
        "recall_macro": float(np.mean(rec)),
        "f1_macro": float(np.mean(f1)),
    }


def evaluate(params: ModelParams | np.ndarray, test: Dataset) -> dict[str, float]:
    if test.n == 0:
        raise EmptyTestSet("empty test set")
    return classification_metrics(test.labels, predict(params, test))
