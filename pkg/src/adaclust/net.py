"""Toy differentiable models: one-hidden-layer feature extractor and a
linear head over concatenated (feature, pseudo-domain embedding) inputs.

Forward, cross-entropy loss, exact backprop and plain SGD are written out
by hand; the centroid embeddings are constants during backprop (no
gradient path exists through them by construction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import datagen
from .rng import Stream, derive


@dataclass(frozen=True)
class NetConfig:
    d_raw: int = 16
    hidden: int = 64
    feature_dim: int = 32


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid batch_size/epochs")


@dataclass
class ExtractorWeights:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.W2.shape[0]

    @property
    def d_raw(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "ExtractorWeights":
        return ExtractorWeights(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


@dataclass
class HeadWeights:
    W: np.ndarray
    b: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "HeadWeights":
        return HeadWeights(self.W.copy(), self.b.copy())

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


@dataclass
class Grads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "W1": self.W1,
            "b1": self.b1,
            "W2": self.W2,
            "b2": self.b2,
            "W": self.W,
            "b": self.b,
        }


def _uniform_init(stream: Stream, rows: int, cols: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return (stream.uniforms(rows * cols) * 2.0 - 1.0).reshape(rows, cols) * bound


def init_extractor(config: NetConfig, stream: Stream) -> ExtractorWeights:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] init, one substream per tensor."""
    return ExtractorWeights(
        W1=_uniform_init(stream.split("W1"), config.hidden, config.d_raw, config.d_raw),
        b1=_uniform_init(stream.split("b1"), 1, config.hidden, config.d_raw)[0],
        W2=_uniform_init(
            stream.split("W2"), config.feature_dim, config.hidden, config.hidden
        ),
        b2=_uniform_init(stream.split("b2"), 1, config.feature_dim, config.hidden)[0],
    )


def init_head(num_classes: int, in_dim: int, stream: Stream) -> HeadWeights:
    return HeadWeights(
        W=_uniform_init(stream.split("W"), num_classes, in_dim, in_dim),
        b=_uniform_init(stream.split("b"), 1, num_classes, in_dim)[0],
    )


def extract_batch(X: np.ndarray, omega: ExtractorWeights) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != omega.d_raw:
        raise ValueError("input dimension does not match extractor")
    Z1 = X @ omega.W1.T + omega.b1
    A1 = np.maximum(Z1, 0.0)
    out = A1 @ omega.W2.T + omega.b2
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite activation in extractor")
    return out


def extract(x: np.ndarray, omega: ExtractorWeights) -> np.ndarray:
    """relu(W1 x + b1) -> W2 (.) + b2 for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("extract expects a single vector; use extract_batch")
    return extract_batch(x[None, :], omega)[0]


def forward_joint_batch(
    X: np.ndarray, psi: np.ndarray, omega: ExtractorWeights, head: HeadWeights
) -> np.ndarray:
    feats = extract_batch(X, omega)
    joint = np.concatenate([feats, np.asarray(psi, dtype=np.float64)], axis=1)
    if joint.shape[1] != head.in_dim:
        raise ValueError("head width does not match feature + embedding width")
    return joint @ head.W.T + head.b


def forward_joint(
    x: np.ndarray, psi_x: np.ndarray, omega: ExtractorWeights, head: HeadWeights
) -> np.ndarray:
    """Logits for one (input, embedding) pair."""
    x = np.asarray(x, dtype=np.float64)
    psi_x = np.asarray(psi_x, dtype=np.float64)
    return forward_joint_batch(x[None, :], psi_x[None, :], omega, head)[0]


def _softmax_ce(logits: np.ndarray, y: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    losses = log_z - logits[np.arange(len(y)), y]
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return float(losses.mean()), probs


def loss_and_grads(
    batch: tuple[np.ndarray, np.ndarray],
    psi_batch: np.ndarray,
    omega: ExtractorWeights,
    head: HeadWeights,
    weight_decay: float = 0.0,
) -> tuple[float, Grads]:
    """Mean softmax cross-entropy plus (wd/2)*||weight matrices||^2.

    Gradients are exact; bias terms are not decayed, and no gradient is
    produced with respect to ``psi_batch`` (the embeddings are inputs).
    """
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    psi = np.asarray(psi_batch, dtype=np.float64)
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    n_c = head.num_classes
    if y.min() < 0 or y.max() >= n_c:
        raise ValueError("label out of range")

    Z1 = X @ omega.W1.T + omega.b1
    A1 = np.maximum(Z1, 0.0)
    feats = A1 @ omega.W2.T + omega.b2
    d = feats.shape[1]
    joint = np.concatenate([feats, psi], axis=1)
    logits = joint @ head.W.T + head.b

    loss, probs = _softmax_ce(logits, y)
    if weight_decay > 0.0:
        loss += 0.5 * weight_decay * (
            float((omega.W1**2).sum())
            + float((omega.W2**2).sum())
            + float((head.W**2).sum())
        )

    dlogits = probs
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B

    gW = dlogits.T @ joint
    gb = dlogits.sum(axis=0)
    dfeats = dlogits @ head.W[:, :d]
    gW2 = dfeats.T @ A1
    gb2 = dfeats.sum(axis=0)
    dA1 = dfeats @ omega.W2
    dZ1 = dA1 * (Z1 > 0.0)
    gW1 = dZ1.T @ X
    gb1 = dZ1.sum(axis=0)
    if weight_decay > 0.0:
        gW1 = gW1 + weight_decay * omega.W1
        gW2 = gW2 + weight_decay * omega.W2
        gW = gW + weight_decay * head.W
    return loss, Grads(W1=gW1, b1=gb1, W2=gW2, b2=gb2, W=gW, b=gb)


def sgd_step(
    omega: ExtractorWeights,
    head: HeadWeights,
    grads: Grads,
    learning_rate: float,
    weight_decay: float = 0.0,
) -> tuple[ExtractorWeights, HeadWeights]:
    """w <- w - lr * grad, in place. The decay term is already inside the
    gradients (single application); ``weight_decay`` is carried for
    signature parity only."""
    del weight_decay
    for g in grads.tensors().values():
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient in SGD step")
    omega.W1 -= learning_rate * grads.W1
    omega.b1 -= learning_rate * grads.b1
    omega.W2 -= learning_rate * grads.W2
    omega.b2 -= learning_rate * grads.b2
    head.W -= learning_rate * grads.W
    head.b -= learning_rate * grads.b
    return omega, head


def sgd_epoch(
    X: np.ndarray,
    y: np.ndarray,
    psi: np.ndarray,
    omega: ExtractorWeights,
    head: HeadWeights,
    sgd: SgdConfig,
    shuffle_stream: Stream,
) -> float:
    """One pass of mini-batch SGD; returns the mean batch loss."""
    order = shuffle_stream.permutation(X.shape[0])
    losses = []
    for start in range(0, len(order), sgd.batch_size):
        idx = order[start : start + sgd.batch_size]
        loss, grads = loss_and_grads(
            (X[idx], y[idx]), psi[idx], omega, head, sgd.weight_decay
        )
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite training loss")
        sgd_step(omega, head, grads, sgd.learning_rate)
        losses.append(loss)
    return float(np.mean(losses))


@dataclass(frozen=True)
class PretrainConfig:
    """Pooled-sample pretraining; the stand-in for a large pretrained model."""

    num_domains: int = 24
    points_per_domain: int = 80
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(epochs=2))


def pretrain_extractor(
    mother: datagen.MotherDistribution, config: PretrainConfig
) -> ExtractorWeights:
    """Train extractor + temporary head on a pooled draw from the domain
    universe, then discard the head. ``epochs=0`` returns the untouched
    random initialization."""
    net_cfg = NetConfig(d_raw=mother.d_raw)
    root = Stream(derive(config.sgd.seed, "pretrain"))
    omega = init_extractor(net_cfg, root.split("init"))
    if config.sgd.epochs == 0:
        return omega
    xs, ys = [], []
    for j in range(config.num_domains):
        spec = datagen.sample_domain(mother, datagen.PRETRAIN_DRAW_BASE + j)
        Xj, yj = datagen.domain_points(mother, spec, config.points_per_domain)
        xs.append(Xj)
        ys.append(yj)
    X = np.vstack(xs)
    y = np.concatenate(ys)
    head = init_head(mother.num_classes, net_cfg.feature_dim, root.split("head"))
    psi = np.zeros((X.shape[0], 0))
    for epoch in range(config.sgd.epochs):
        sgd_epoch(X, y, psi, omega, head, config.sgd, root.split("shuffle", epoch))
    return omega


def train_linear_probe(
    phi: np.ndarray,
    labels: np.ndarray,
    seed: int,
    steps: int = 300,
    learning_rate: float = 0.5,
) -> HeadWeights:
    """Full-batch softmax regression on fixed features (probe classifier)."""
    phi = np.asarray(phi, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = int(labels.max()) + 1
    head = init_head(classes, phi.shape[1], Stream(derive(seed, "probe")))
    B = phi.shape[0]
    for _ in range(steps):
        logits = phi @ head.W.T + head.b
        _, probs = _softmax_ce(logits, labels)
        dlogits = probs
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B
        head.W -= learning_rate * (dlogits.T @ phi)
        head.b -= learning_rate * dlogits.sum(axis=0)
    return head


def probe_accuracy(phi: np.ndarray, labels: np.ndarray, head: HeadWeights) -> float:
    logits = np.asarray(phi, dtype=np.float64) @ head.W.T + head.b
    return float((np.argmax(logits, axis=1) == labels).mean())
