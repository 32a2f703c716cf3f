"""Dense two-layer GCN with hand-derived gradients.

All gradients (with respect to the weight matrices and to the relaxed
edge-flip vector) are computed analytically, including the chain rule
through the symmetric degree normalization, so the whole pipeline stays
deterministic and autograd-free.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (DomainError, NumericError, ParameterError, TrainingError)
from .graph import DataSplit, Graph
from .perturb import relax_perturbation, triu_pairs


@dataclass(frozen=True)
class LossKind:
    """Per-node loss selector: plain cross-entropy or a CW-style margin.

    cw_margin evaluates max(max_{c != y} z_c - z_y, -kappa).
    """
    tag: str = "cross_entropy"
    kappa: float = 0.0

    def __post_init__(self):
        if self.tag not in ("cross_entropy", "cw_margin"):
            raise ParameterError(f"unknown loss kind {self.tag!r}")
        if self.kappa < 0:
            raise ParameterError("kappa must be nonnegative")


CROSS_ENTROPY = LossKind("cross_entropy")


@dataclass
class GCNParams:
    """Two-layer GCN weights: W1 (d x h) and W2 (h x C)."""
    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise ParameterError("weights must be matrices")
        if self.W1.shape[1] != self.W2.shape[0]:
            raise ParameterError(
                f"hidden dims disagree: W1 {self.W1.shape}, W2 {self.W2.shape}")
        if not (np.isfinite(self.W1).all() and np.isfinite(self.W2).all()):
            raise ParameterError("weights contain non-finite entries")

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[1]

    def copy(self) -> "GCNParams":
        return GCNParams(self.W1.copy(), self.W2.copy())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    weight_decay: float = 5e-4
    hidden_dim: int = 16
    seed: int = 0
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 1:
            raise ParameterError("epochs must be at least 1")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be nonnegative")
        if self.hidden_dim < 1:
            raise ParameterError("hidden_dim must be positive")
        if self.loss_kind != "cross_entropy":
            raise ParameterError("training supports only cross_entropy")


def normalize_adjacency(adjacency_real: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization with self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2} where D is the degree diagonal of
    A + I; accepts real-valued (relaxed) adjacency matrices.
    """
    A = np.asarray(adjacency_real, dtype=np.float64)
    if A.min(initial=0.0) < -1e-12:
        raise DomainError("adjacency entries must be nonnegative")
    n = A.shape[0]
    Atil = A + np.eye(n)
    deg = Atil.sum(axis=1)
    s = deg ** -0.5
    return Atil * np.outer(s, s)


def _propagate(W1, W2, Ahat, X):
    XW1 = X @ W1
    Z1 = Ahat @ XW1
    H1 = np.maximum(Z1, 0.0)
    HW2 = H1 @ W2
    Z2 = Ahat @ HW2
    return XW1, Z1, H1, HW2, Z2


def forward(params: GCNParams, adjacency_real: np.ndarray,
            features: np.ndarray) -> np.ndarray:
    """Logits = Ahat relu(Ahat X W1) W2 for all nodes."""
    Ahat = normalize_adjacency(adjacency_real)
    _, Z1, _, _, Z2 = _propagate(params.W1, params.W2, Ahat,
                                 np.asarray(features, dtype=np.float64))
    if not np.isfinite(Z1).all():
        raise NumericError("non-finite activation in hidden layer")
    if not np.isfinite(Z2).all():
        raise NumericError("non-finite logits in output layer")
    return Z2


def predict_all(params: GCNParams, adjacency: np.ndarray,
                features: np.ndarray) -> np.ndarray:
    """Argmax prediction per node; ties break toward the lowest class."""
    return np.argmax(forward(params, adjacency, features), axis=1)


def node_loss(logits_row: np.ndarray, label: int, kind: LossKind) -> float:
    """Loss of one node given its logit row."""
    z = np.asarray(logits_row, dtype=np.float64)
    if not 0 <= label < z.size:
        raise ParameterError(f"label {label} outside [0, {z.size})")
    if kind.tag == "cross_entropy":
        shifted = z - z.max()
        return float(np.log(np.exp(shifted).sum()) - shifted[label])
    others = np.delete(z, label)
    return float(max(others.max() - z[label], -kind.kappa))


def _loss_rows(logits, labels, kind):
    """Vectorized per-node losses and d(loss)/d(logits) rows.

    Rows whose weight is zero may carry placeholder labels (e.g. -1); the
    caller multiplies by the weights, which kills their contribution.
    """
    n, C = logits.shape
    idx = np.arange(n)
    safe = np.where((labels >= 0) & (labels < C), labels, 0)
    if kind.tag == "cross_entropy":
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        Z = expz.sum(axis=1)
        loss = np.log(Z) - shifted[idx, safe]
        grad = expz / Z[:, None]
        grad[idx, safe] -= 1.0
    else:
        z_true = logits[idx, safe]
        masked = logits.copy()
        masked[idx, safe] = -np.inf
        best_other = np.argmax(masked, axis=1)
        margin = masked[idx, best_other] - z_true
        loss = np.maximum(margin, -kind.kappa)
        grad = np.zeros_like(logits)
        active = margin > -kind.kappa
        grad[idx[active], best_other[active]] = 1.0
        grad[idx[active], safe[active]] = -1.0
    return loss, grad


def _backward(W1, W2, adjacency_real, X, labels, weights, kind,
              want_adjacency_grad: bool):
    """Weighted-sum loss with gradients w.r.t. W1, W2 and (optionally) the
    real adjacency entries, via the normalization chain rule."""
    n = adjacency_real.shape[0]
    Atil = adjacency_real + np.eye(n)
    deg = Atil.sum(axis=1)
    s = deg ** -0.5
    Ahat = Atil * np.outer(s, s)
    XW1, Z1, H1, HW2, Z2 = _propagate(W1, W2, Ahat, X)
    loss_rows, grad_rows = _loss_rows(Z2, labels, kind)
    total = float(weights @ loss_rows)
    G2 = grad_rows * weights[:, None]
    AG2 = Ahat @ G2
    gW2 = H1.T @ AG2
    GZ1 = np.where(Z1 > 0.0, AG2 @ W2.T, 0.0)
    gW1 = X.T @ (Ahat @ GZ1)
    if not want_adjacency_grad:
        return total, gW1, gW2, None
    GA = G2 @ HW2.T + GZ1 @ XW1.T
    GAt = GA * Atil
    row_dot = GAt @ s
    col_dot = GAt.T @ s
    d32 = deg ** -1.5
    Gtil = (GA * np.outer(s, s)
            - 0.5 * np.outer(d32 * row_dot, np.ones(n))
            - 0.5 * np.outer(np.ones(n), d32 * col_dot))
    return total, gW1, gW2, Gtil


def weighted_loss(params: GCNParams, adjacency_real: np.ndarray,
                  features: np.ndarray, labels: np.ndarray,
                  node_weights: np.ndarray, mask: np.ndarray,
                  kind: LossKind = CROSS_ENTROPY) -> float:
    """Sum over masked nodes of weight(u) * loss(u)."""
    logits = forward(params, adjacency_real, features)
    mask = np.asarray(mask, dtype=np.int64)
    loss_rows, _ = _loss_rows(logits, np.asarray(labels), kind)
    return float(np.asarray(node_weights)[mask] @ loss_rows[mask])


def _effective_weights(node_weights, mask, n):
    w = np.zeros(n)
    mask = np.asarray(mask, dtype=np.int64)
    w[mask] = np.asarray(node_weights, dtype=np.float64)[mask]
    if (w < 0).any():
        raise ParameterError("node weights must be nonnegative")
    return w


def param_gradients(params: GCNParams, adjacency_real: np.ndarray,
                    features: np.ndarray, labels: np.ndarray,
                    node_weights: np.ndarray, mask: np.ndarray,
                    kind: LossKind = CROSS_ENTROPY):
    """(loss, dL/dW1, dL/dW2) of the weighted masked loss."""
    X = np.asarray(features, dtype=np.float64)
    A = np.asarray(adjacency_real, dtype=np.float64)
    w = _effective_weights(node_weights, mask, A.shape[0])
    total, gW1, gW2, _ = _backward(params.W1, params.W2, A, X,
                                   np.asarray(labels), w, kind, False)
    if not (np.isfinite(gW1).all() and np.isfinite(gW2).all()):
        raise NumericError("non-finite parameter gradient")
    return total, gW1, gW2


def gradients(params: GCNParams, adjacency: np.ndarray,
              delta_relaxed: np.ndarray, features: np.ndarray,
              labels: np.ndarray, node_weights: np.ndarray,
              mask: np.ndarray, kind: LossKind = CROSS_ENTROPY):
    """Gradients of the weighted masked loss at A' = A + (1-2A) o delta.

    Returns (loss, dL/dW1, dL/dW2, dL/ddelta) where the delta gradient
    lives on the strict upper triangle with the mirrored (s,t)/(t,s)
    contributions summed and the XOR-relaxation factor (1-2A) applied.
    """
    A = np.asarray(adjacency, dtype=np.float64)
    n = A.shape[0]
    A_prime = relax_perturbation(A, delta_relaxed)
    X = np.asarray(features, dtype=np.float64)
    w = _effective_weights(node_weights, mask, n)
    total, gW1, gW2, Gtil = _backward(params.W1, params.W2, A_prime, X,
                                      np.asarray(labels), w, kind, True)
    rows, cols = triu_pairs(n)
    sign = 1.0 - 2.0 * A[rows, cols]
    g_delta = sign * (Gtil[rows, cols] + Gtil[cols, rows])
    if not (np.isfinite(gW1).all() and np.isfinite(gW2).all()
            and np.isfinite(g_delta).all()):
        raise NumericError("non-finite gradient")
    return total, gW1, gW2, g_delta


def init_params(feature_dim: int, hidden_dim: int, num_classes: int,
                seed: int) -> GCNParams:
    """Seeded Glorot-uniform initialization, W1 drawn before W2."""
    rng = np.random.default_rng(seed)
    s1 = np.sqrt(6.0 / (feature_dim + hidden_dim))
    W1 = rng.uniform(-s1, s1, size=(feature_dim, hidden_dim))
    s2 = np.sqrt(6.0 / (hidden_dim + num_classes))
    W2 = rng.uniform(-s2, s2, size=(hidden_dim, num_classes))
    return GCNParams(W1, W2)


def train_arrays(adjacency_real: np.ndarray, features: np.ndarray,
                 labels: np.ndarray, train_idx: np.ndarray,
                 config: TrainConfig, num_classes: int,
                 return_history: bool = False):
    """Full-batch gradient descent on the mean train cross-entropy.

    The objective is mean CE over the train mask plus an L2 penalty of
    0.5 * weight_decay * ||W||^2; only labels at train_idx are read.
    """
    X = np.asarray(features, dtype=np.float64)
    A = np.asarray(adjacency_real, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ParameterError("cannot train on an empty mask")
    params = init_params(X.shape[1], config.hidden_dim, num_classes,
                         config.seed)
    W1, W2 = params.W1, params.W2
    weights = np.zeros(A.shape[0])
    weights[train_idx] = 1.0 / train_idx.size
    wd = config.weight_decay
    kind = CROSS_ENTROPY
    history = []

    def objective(data_loss):
        return data_loss + 0.5 * wd * (float(np.sum(W1 * W1))
                                       + float(np.sum(W2 * W2)))

    for epoch in range(config.epochs):
        data_loss, gW1, gW2, _ = _backward(W1, W2, A, X, labels, weights,
                                           kind, False)
        if not np.isfinite(data_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        history.append(objective(data_loss))
        W1 = W1 - config.learning_rate * (gW1 + wd * W1)
        W2 = W2 - config.learning_rate * (gW2 + wd * W2)
    final_rows, _ = _loss_rows(
        _propagate(W1, W2, normalize_adjacency(A), X)[4], labels, kind)
    final = objective(float(weights @ final_rows))
    if not np.isfinite(final):
        raise TrainingError(f"loss diverged at epoch {config.epochs}")
    history.append(final)
    result = GCNParams(W1, W2)
    if return_history:
        return result, np.asarray(history)
    return result


def train(graph: Graph, split: DataSplit, adjacency_real: np.ndarray,
          config: TrainConfig, return_history: bool = False):
    """Train on the split's train mask over a (possibly perturbed) adjacency."""
    return train_arrays(adjacency_real, graph.features, graph.labels,
                        split.train, config, graph.num_classes,
                        return_history=return_history)


_MAGIC = b"GCNPARAM"
_VERSION = 1


def save_params(params: GCNParams, path) -> None:
    """Binary checkpoint: magic, version, then per-matrix dims and float64
    row-major entries, all little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", _VERSION))
        for mat in (params.W1, params.W2):
            fh.write(struct.pack("<QQ", *mat.shape))
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load_params(path) -> GCNParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ParameterError(f"{path}: not a GCN checkpoint")
        (version,) = struct.unpack("<Q", fh.read(8))
        if version != _VERSION:
            raise ParameterError(f"{path}: unsupported checkpoint version {version}")
        mats = []
        for _ in range(2):
            rows, cols = struct.unpack("<QQ", fh.read(16))
            buf = fh.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise ParameterError(f"{path}: truncated checkpoint")
            mats.append(np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy())
    return GCNParams(*mats)
