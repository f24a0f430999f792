"""Least squares and logistic regression over named columns, plus MSE / AUROC / AUPRC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .sem import Dataset, SemError, _collinear


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: tuple[float, ...]
    features: tuple[str, ...]

    def __post_init__(self):
        if len(self.coef) != len(self.features):
            raise ModelError("coefficient count does not match feature count")


@dataclass(frozen=True)
class LogisticDiagnostics:
    converged: bool
    iterations: int
    grad_norm: float
    separated: bool = False
    history: tuple[float, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coef: tuple[float, ...]
    features: tuple[str, ...]
    diagnostics: LogisticDiagnostics = LogisticDiagnostics(True, 0, 0.0)

    def __post_init__(self):
        if len(self.coef) != len(self.features):
            raise ModelError("coefficient count does not match feature count")


def _design(data: Dataset, features: Sequence[str]) -> np.ndarray:
    try:
        return data.matrix(list(features)).astype(float)
    except SemError as exc:
        raise ModelError(str(exc)) from None


def fit_least_squares(data: Dataset, features: Sequence[str], target: str) -> LinearModel:
    features = tuple(features)
    x = _design(data, features)
    y = np.asarray(data[target], dtype=float)
    n = len(y)
    if n <= len(features):
        raise ModelError(f"need more than {len(features)} rows")
    design = np.column_stack([np.ones(n), x])
    bad = _collinear(design, ("(intercept)",) + features)
    if bad:
        raise ModelError(f"rank-deficient design; collinear features: {', '.join(bad)}")
    q, r = np.linalg.qr(design)
    beta = np.linalg.solve(r, q.T @ y)
    return LinearModel(float(beta[0]), tuple(float(b) for b in beta[1:]), features)


def logistic_nll(theta: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    """Mean negative Bernoulli log-likelihood; ``theta[0]`` is the intercept."""
    z = theta[0] + x @ theta[1:]
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * theta[1:] @ theta[1:])


def logistic_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> np.ndarray:
    z = theta[0] + x @ theta[1:]
    r = _sigmoid(z) - y
    g = np.concatenate([[r.mean()], x.T @ r / len(y)])
    g[1:] += l2 * theta[1:]
    return g


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def fit_logistic(data: Dataset, features: Sequence[str], target: str, l2: float = 0.0,
                 tol: float = 1e-8, max_iter: int = 100) -> LogisticModel:
    """Newton-Raphson with step halving on standardized features.

    Coefficients are returned on the raw feature scale.  Perfect separation
    shows up as non-convergence with ``diagnostics.separated`` set.
    """
    features = tuple(features)
    x = _design(data, features)
    y = np.asarray(data[target], dtype=float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ModelError(f"{target} must be coded 0/1")
    if y.min() == y.max():
        raise ModelError(f"{target} has a single class")
    if len(y) <= len(features):
        raise ModelError(f"need more than {len(features)} rows")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    full = np.column_stack([np.ones(len(y)), xs])

    theta = np.zeros(len(features) + 1)
    prev = logistic_nll(theta, xs, y, l2)
    history = [prev]
    ridge = np.diag([0.0] + [l2] * len(features))
    converged = False
    it = 0
    grad = logistic_grad(theta, xs, y, l2)
    for it in range(1, max_iter + 1):
        if np.abs(grad).max() < tol:
            converged = True
            it -= 1
            break
        p = _sigmoid(full @ theta)
        w = p * (1 - p)
        hess = (full.T * w) @ full / len(y) + ridge
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        h = 1.0
        for _ in range(50):
            trial = theta - h * step
            value = logistic_nll(trial, xs, y, l2)
            if value <= prev:
                break
            h *= 0.5
        else:
            break
        theta, prev = trial, value
        history.append(prev)
        grad = logistic_grad(theta, xs, y, l2)
    else:
        converged = np.abs(grad).max() < tol

    # with separable classes the gradient still vanishes, but only as the weights run off
    separated = bool(np.abs(theta[1:]).max(initial=0.0) > 30)
    converged = converged and not separated
    coef = theta[1:] / scale
    intercept = theta[0] - float(coef @ mean)
    diag = LogisticDiagnostics(bool(converged), it, float(np.abs(grad).max()), bool(separated), tuple(history))
    return LogisticModel(float(intercept), tuple(float(c) for c in coef), features, diag)


def predict(model: LinearModel | LogisticModel, data: Dataset) -> np.ndarray:
    x = _design(data, model.features)
    z = model.intercept + x @ np.asarray(model.coef, dtype=float)
    return _sigmoid(z) if isinstance(model, LogisticModel) else z


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ModelError("labels must be 0/1")
    return labels.astype(bool)


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    scores = np.asarray(scores, dtype=float)
    pos = _check_labels(labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ModelError("AUROC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision with tied scores sharing one threshold."""
    scores = np.asarray(scores, dtype=float)
    pos = _check_labels(labels)
    total = int(pos.sum())
    if total == 0:
        raise ModelError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    tp = np.cumsum(p)
    seen = np.arange(1, len(s) + 1)
    # last index of each tie group
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_g, seen_g = tp[last], seen[last]
    recall_step = np.diff(np.r_[0, tp_g]) / total
    return float(np.sum(recall_step * tp_g / seen_g))


def mse(predictions, truth) -> float:
    a = np.asarray(predictions, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ModelError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def model_to_text(model: LinearModel | LogisticModel) -> str:
    kind = "logistic" if isinstance(model, LogisticModel) else "linear"
    lines = [f"model {kind}", f"intercept {model.intercept!r}"]
    lines += [f"coef {name} {c!r}" for name, c in zip(model.features, model.coef)]
    if isinstance(model, LogisticModel):
        d = model.diagnostics
        lines += [f"converged {int(d.converged)}", f"iterations {d.iterations}",
                  f"grad_norm {d.grad_norm!r}", f"separated {int(d.separated)}"]
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> LinearModel | LogisticModel:
    fields: dict[str, str] = {}
    names, coefs = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "coef":
            names.append(parts[1])
            coefs.append(float(parts[2]))
        else:
            fields[parts[0]] = parts[1]
    kind = fields.get("model")
    if kind == "linear":
        return LinearModel(float(fields["intercept"]), tuple(coefs), tuple(names))
    if kind == "logistic":
        diag = LogisticDiagnostics(bool(int(fields["converged"])), int(fields["iterations"]),
                                   float(fields["grad_norm"]), bool(int(fields["separated"])))
        return LogisticModel(float(fields["intercept"]), tuple(coefs), tuple(names), diag)
    raise ModelError(f"unknown model kind {kind!r}")
