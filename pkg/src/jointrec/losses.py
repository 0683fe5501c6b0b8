"""Ranking and rating losses with analytic gradients with respect to scores.

Each loss returns its value together with d(loss)/d(score) for every score it
touches, so the trainer can seed backpropagation directly. All functions are
pure; the pairwise family takes the positive item's score and the scores of
the sampled negative items.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import sigmoid

SCORE_EPS = 1e-12  # clamp before logs; negligible bias at double precision
PAIRWISE_KINDS = ("top1", "top1max", "bprmax", "none")
POINTWISE_KINDS = ("log", "squared", "none")


@dataclass
class LossConfig:
    """Selects the point-wise and ranking components and their mixing weight."""

    alpha: float = 0.7
    pairwise: str = "top1"
    pointwise: str = "log"
    listwise_xe: bool = False
    negative_count: int = 1
    lambda_reg: float = 0.0
    instance_weight: float = 1.0

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"loss.alpha must lie in [0, 1], got {self.alpha}")
        if self.pairwise not in PAIRWISE_KINDS:
            raise ConfigError(f"loss.pairwise must be one of {PAIRWISE_KINDS}, got {self.pairwise!r}")
        if self.pointwise not in POINTWISE_KINDS:
            raise ConfigError(f"loss.pointwise must be one of {POINTWISE_KINDS}, got {self.pointwise!r}")
        if self.listwise_xe and self.pairwise != "none":
            raise ConfigError("loss.listwise_xe replaces the pairwise component; set loss.pairwise to 'none'")
        ranking_active = self.listwise_xe or self.pairwise != "none"
        if not ranking_active and self.pointwise == "none":
            raise ConfigError("loss config selects no active component")
        if self.alpha > 0.0 and not ranking_active:
            raise ConfigError("loss.alpha > 0 requires a pairwise or listwise component")
        if self.alpha < 1.0 and self.pointwise == "none":
            raise ConfigError("loss.alpha < 1 requires a pointwise component")
        if self.negative_count < 1:
            raise ConfigError(f"loss.negative_count must be >= 1, got {self.negative_count}")
        if self.lambda_reg < 0.0:
            raise ConfigError(f"loss.lambda_reg must be >= 0, got {self.lambda_reg}")
        return self


@dataclass
class TrainingInstance:
    """One positive interaction with its sampled negatives and current scores.

    ``target`` is the normalized rating in (0, 1]: the raw rating divided by
    the user's largest training rating (1.0 in implicit mode).
    """

    user: int
    pos_item: int
    target: float
    pos_score: float
    neg_items: np.ndarray
    neg_scores: np.ndarray


def _clamp01(y_hat: float) -> float:
    return min(max(y_hat, SCORE_EPS), 1.0 - SCORE_EPS)


def log_loss(y_hat: float, target: float):
    """Binary cross entropy against a (possibly fractional) target in [0, 1]."""
    y = _clamp01(float(y_hat))
    value = -(target * np.log(y) + (1.0 - target) * np.log(1.0 - y))
    grad = -target / y + (1.0 - target) / (1.0 - y)
    return float(value), float(grad)


def squared_loss(y_hat: float, target: float, weight: float = 1.0):
    diff = target - float(y_hat)
    return float(weight * diff * diff), float(-2.0 * weight * diff)


def softmax_scores(scores: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; sums to 1 for any nonempty input."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ConfigError("softmax over an empty score list")
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def _sigmoid_grad(s: np.ndarray) -> np.ndarray:
    return s * (1.0 - s)


def top1_loss(pos_score: float, neg_scores: np.ndarray):
    """Mean over negatives of sigmoid(neg - pos) + sigmoid(neg^2).

    The first term pushes the positive above each negative; the second pulls
    negative scores toward zero.
    """
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ConfigError("top1 loss requires at least one negative sample")
    k = neg.size
    rank_sig = sigmoid(neg - pos_score)
    sq_sig = sigmoid(neg * neg)
    value = float(np.mean(rank_sig + sq_sig))
    grad_pos = float(-np.sum(_sigmoid_grad(rank_sig)) / k)
    grad_neg = (_sigmoid_grad(rank_sig) + _sigmoid_grad(sq_sig) * 2.0 * neg) / k
    return value, grad_pos, grad_neg


def top1max_loss(pos_score: float, neg_scores: np.ndarray):
    """TOP1 terms weighted by the softmax of the negative scores.

    Gradients flow through the softmax weights as well as the terms.
    """
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ConfigError("top1max loss requires at least one negative sample")
    s = softmax_scores(neg)
    rank_sig = sigmoid(neg - pos_score)
    sq_sig = sigmoid(neg * neg)
    terms = rank_sig + sq_sig
    value = float(np.dot(s, terms))
    grad_pos = float(-np.dot(s, _sigmoid_grad(rank_sig)))
    term_grads = _sigmoid_grad(rank_sig) + _sigmoid_grad(sq_sig) * 2.0 * neg
    grad_neg = s * term_grads + s * (terms - value)
    return value, grad_pos, grad_neg


def bprmax_loss(pos_score: float, neg_scores: np.ndarray):
    """-log of the softmax-weighted sum of sigmoid(pos - neg)."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ConfigError("bprmax loss requires at least one negative sample")
    s = softmax_scores(neg)
    q = sigmoid(pos_score - neg)
    inner = max(float(np.dot(s, q)), 1e-300)
    value = -np.log(inner)
    grad_pos = float(-np.dot(s, _sigmoid_grad(q)) / inner)
    # d(inner)/d(neg_k) via both the sigmoid argument and the softmax weight.
    grad_neg = -(-s * _sigmoid_grad(q) + s * (q - inner)) / inner
    return float(value), grad_pos, grad_neg


def xe_loss(pos_score: float, neg_scores: np.ndarray):
    """Softmax cross entropy over the positive and its negatives.

    The positive's own score is part of the normalizer, making the loss a
    proper -log softmax over the candidate list.
    """
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ConfigError("xe loss requires at least one negative sample")
    logits = np.concatenate(([pos_score], neg))
    p = softmax_scores(logits)
    value = float(-np.log(max(p[0], 1e-300)))
    grad_pos = float(p[0] - 1.0)
    grad_neg = p[1:].copy()
    return value, grad_pos, grad_neg


_RANKING = {"top1": top1_loss, "top1max": top1max_loss, "bprmax": bprmax_loss, "xe": xe_loss}


def ranking_loss(config: LossConfig, pos_score: float, neg_scores: np.ndarray):
    kind = "xe" if config.listwise_xe else config.pairwise
    if kind == "none":
        raise ConfigError("no ranking component configured")
    return _RANKING[kind](pos_score, neg_scores)


def pointwise_loss(config: LossConfig, instance: TrainingInstance):
    """Point-wise component: positive against its normalized target, each
    sampled negative against 0."""
    if config.pointwise == "log":
        fn = lambda y_hat, y: log_loss(y_hat, y)
    elif config.pointwise == "squared":
        fn = lambda y_hat, y: squared_loss(y_hat, y, config.instance_weight)
    else:
        raise ConfigError("no pointwise component configured")
    value, grad_pos = fn(instance.pos_score, instance.target)
    grad_neg = np.zeros_like(np.asarray(instance.neg_scores, dtype=np.float64))
    for j, score in enumerate(instance.neg_scores):
        v, g = fn(float(score), 0.0)
        value += v
        grad_neg[j] = g
    return value, grad_pos, grad_neg


def hybrid_loss(config: LossConfig, instance: TrainingInstance):
    """alpha * ranking + (1 - alpha) * pointwise, per training instance.

    Returns (value, d/d pos_score, d/d neg_scores). The optional parameter
    regularizer (lambda_reg) lives in the trainer, not here: it depends on
    the parameters, not the scores.
    """
    alpha = config.alpha
    value = 0.0
    grad_pos = 0.0
    grad_neg = np.zeros(len(instance.neg_scores))
    if alpha > 0.0:
        v, gp, gn = ranking_loss(config, instance.pos_score, instance.neg_scores)
        value += alpha * v
        grad_pos += alpha * gp
        grad_neg += alpha * gn
    if alpha < 1.0:
        v, gp, gn = pointwise_loss(config, instance)
        value += (1.0 - alpha) * v
        grad_pos += (1.0 - alpha) * gp
        grad_neg += (1.0 - alpha) * gn
    return value, grad_pos, grad_neg


# ---- vectorized batch path -------------------------------------------------
# The trainer's hot loop; must agree with the per-instance functions above to
# floating-point roundoff (tested).


def _row_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _log_loss_batch(y_hat: np.ndarray, target):
    y = np.clip(y_hat, SCORE_EPS, 1.0 - SCORE_EPS)
    value = -(target * np.log(y) + (1.0 - target) * np.log(1.0 - y))
    grad = -target / y + (1.0 - target) / (1.0 - y)
    return value, grad

def _squared_loss_batch(y_hat: np.ndarray, target, weight: float):
    diff = target - y_hat
    return weight * diff * diff, -2.0 * weight * diff


def _ranking_loss_batch(config: LossConfig, pos: np.ndarray, neg: np.ndarray):
    kind = "xe" if config.listwise_xe else config.pairwise
    if kind == "top1":
        k = neg.shape[1]
        rank_sig = sigmoid(neg - pos[:, None])
        sq_sig = sigmoid(neg * neg)
        value = np.mean(rank_sig + sq_sig, axis=1)
        grad_pos = -np.sum(_sigmoid_grad(rank_sig), axis=1) / k
        grad_neg = (_sigmoid_grad(rank_sig) + _sigmoid_grad(sq_sig) * 2.0 * neg) / k
        return value, grad_pos, grad_neg
    if kind == "top1max":
        s = _row_softmax(neg)
        rank_sig = sigmoid(neg - pos[:, None])
        sq_sig = sigmoid(neg * neg)
        terms = rank_sig + sq_sig
        value = np.sum(s * terms, axis=1)
        grad_pos = -np.sum(s * _sigmoid_grad(rank_sig), axis=1)
        term_grads = _sigmoid_grad(rank_sig) + _sigmoid_grad(sq_sig) * 2.0 * neg
        grad_neg = s * term_grads + s * (terms - value[:, None])
        return value, grad_pos, grad_neg
    if kind == "bprmax":
        s = _row_softmax(neg)
        q = sigmoid(pos[:, None] - neg)
        inner = np.maximum(np.sum(s * q, axis=1), 1e-300)
        value = -np.log(inner)
        grad_pos = -np.sum(s * _sigmoid_grad(q), axis=1) / inner
        grad_neg = -(-s * _sigmoid_grad(q) + s * (q - inner[:, None])) / inner[:, None]
        return value, grad_pos, grad_neg
    if kind == "xe":
        logits = np.concatenate([pos[:, None], neg], axis=1)
        p = _row_softmax(logits)
        value = -np.log(np.maximum(p[:, 0], 1e-300))
        return value, p[:, 0] - 1.0, p[:, 1:].copy()
    raise ConfigError("no ranking component configured")


def hybrid_loss_batch(config: LossConfig, pos_scores: np.ndarray, neg_scores: np.ndarray, targets: np.ndarray):
    """Vectorized :func:`hybrid_loss` over a batch.

    ``pos_scores`` and ``targets`` are (B,), ``neg_scores`` is (B, K).
    Returns per-instance values (B,), positive-score gradients (B,), and
    negative-score gradients (B, K).
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    alpha = config.alpha
    value = np.zeros(len(pos))
    grad_pos = np.zeros(len(pos))
    grad_neg = np.zeros(neg.shape)
    if alpha > 0.0:
        v, gp, gn = _ranking_loss_batch(config, pos, neg)
        value += alpha * v
        grad_pos += alpha * gp
        grad_neg += alpha * gn
    if alpha < 1.0:
        if config.pointwise == "log":
            fn = lambda y_hat, t: _log_loss_batch(y_hat, t)
        elif config.pointwise == "squared":
            fn = lambda y_hat, t: _squared_loss_batch(y_hat, t, config.instance_weight)
        else:
            raise ConfigError("no pointwise component configured")
        v, gp = fn(pos, targets)
        vn, gn = fn(neg, 0.0)
        value += (1.0 - alpha) * (v + vn.sum(axis=1))
        grad_pos += (1.0 - alpha) * gp
        grad_neg += (1.0 - alpha) * gn
    return value, grad_pos, grad_neg
