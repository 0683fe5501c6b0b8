"""Mini-batch training loop for the joint network.

Each epoch shuffles the observed positives, draws fresh negatives per
positive, runs the batched forward/backward pass, and applies one Adam step
per mini-batch with gradients averaged over the batch. A validation split
(the second-latest interaction per user) drives best-checkpoint selection
and early stopping.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import FEEDBACK_IMPLICIT, RatingMatrix, SplitDataset, leave_one_out_split
from .errors import ConfigError, DataError, NumericError
from .losses import LossConfig, hybrid_loss_batch
from .model import JointModel, fuse, unfuse_grad
from .nn import adam_step, stack_backward
from . import evaluation


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    eval_every: int = 1
    early_stop_patience: int = 5
    validation_negatives: int = 100

    def validate(self):
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        if self.eval_every < 1:
            raise ConfigError(f"train.eval_every must be >= 1, got {self.eval_every}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"train.early_stop_patience must be >= 1, got {self.early_stop_patience}")
        self.loss.validate()
        return self


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    hr10: float | None
    ndcg10: float | None
    seconds: float

    def metric_fields(self):
        """The deterministic fields (everything except wall-clock time)."""
        return (self.epoch, self.loss, self.hr10, self.ndcg10)


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("epoch,loss,hr10,ndcg10,seconds\n")
            for r in self.records:
                hr = "" if r.hr10 is None else f"{r.hr10:.6f}"
                ndcg = "" if r.ndcg10 is None else f"{r.ndcg10:.6f}"
                handle.write(f"{r.epoch},{r.loss:.10g},{hr},{ndcg},{r.seconds:.3f}\n")

    def metric_rows(self):
        return [r.metric_fields() for r in self.records]


def sample_train_negatives(train: RatingMatrix, u: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` items user ``u`` has not interacted with, uniform without replacement."""
    items, _, _ = train.user_row(u)
    free = train.num_items - len(items)
    if free < count:
        raise DataError(f"user {u} has only {free} non-interacted items; cannot sample {count}")
    if count * 4 >= free:
        mask = np.ones(train.num_items, dtype=bool)
        mask[items] = False
        return rng.choice(np.flatnonzero(mask), size=count, replace=False)
    picked: list[int] = []
    seen = set()
    while len(picked) < count:
        draw = int(rng.integers(train.num_items))
        if draw in seen:
            continue
        k = np.searchsorted(items, draw)
        if k < len(items) and items[k] == draw:
            continue
        seen.add(draw)
        picked.append(draw)
    return np.asarray(picked, dtype=np.int64)


def validation_split(train: RatingMatrix) -> SplitDataset:
    """Hold out each user's latest *training* interaction for validation.

    Relative to the original data that is the second-latest event, since the
    outer split already took the latest one.
    """
    return leave_one_out_split(train)


def _sample_negatives_batch(
    matrix: RatingMatrix, keys: set, users: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """(B, count) fresh negatives; the single-negative case is vectorized."""
    if count == 1:
        n = matrix.num_items
        draws = rng.integers(n, size=len(users))
        while True:
            bad = [k for k, (u, j) in enumerate(zip(users, draws)) if int(u) * n + int(j) in keys]
            if not bad:
                return draws[:, None]
            draws[bad] = rng.integers(n, size=len(bad))
    return np.stack([sample_train_negatives(matrix, int(u), count, rng) for u in users])


def train_step(
    model: JointModel,
    user_inputs,
    item_inputs,
    users: np.ndarray,
    pos_items: np.ndarray,
    targets: np.ndarray,
    negatives: np.ndarray,
    loss_config: LossConfig,
    learning_rate: float,
    check_joint_signal: bool = False,
) -> float:
    """One mini-batch update; returns the summed instance loss.

    ``negatives`` is a (B, K) array of negative item ids per instance.
    Gradients are averaged over the batch before the Adam step, so the
    learning rate keeps its meaning across batch sizes.
    """
    B, K = negatives.shape
    d = model.config.feature_width

    z_u = model.user_features(user_inputs[users], record=True)
    all_items = np.concatenate([pos_items, negatives.reshape(-1)])
    z_items = model.item_features(item_inputs[all_items], record=True)
    z_pos = z_items[:B]
    z_negs = z_items[B:].reshape(B, K, d)

    fusion = model.config.fusion
    fused_pos = fuse(z_u, z_pos, fusion)
    z_u_rep = np.broadcast_to(z_u[:, None, :], z_negs.shape)
    fused_negs = fuse(z_u_rep, z_negs, fusion).reshape(B * K, -1)
    scores = model.interaction_forward(np.vstack([fused_pos, fused_negs]), record=True)
    pos_scores = scores[:B]
    neg_scores = scores[B:].reshape(B, K)

    values, g_pos, g_neg = hybrid_loss_batch(loss_config, pos_scores, neg_scores, targets)
    loss_sum = float(values.sum())
    grad_scores = np.concatenate([g_pos, g_neg.reshape(-1)]) / B

    grad_fused = model.interaction_backward(grad_scores)
    gf_pos = grad_fused[:B]
    gf_negs = grad_fused[B:].reshape(B, K, -1)
    dzu_pos, dzi_pos = unfuse_grad(gf_pos, z_u, z_pos, fusion)
    dzu_negs, dzj = unfuse_grad(gf_negs, z_u_rep, z_negs, fusion)
    item_upstream = np.vstack([dzi_pos, dzj.reshape(B * K, d)])
    stack_backward(model.item_tower, item_upstream)
    stack_backward(model.user_tower, dzu_pos + dzu_negs.sum(axis=1))

    if check_joint_signal:
        for group, params in model.parameter_groups().items():
            if not any(np.any(p.grad != 0.0) for p in params):
                raise NumericError(
                    f"no gradient signal reached the {group} parameters after the first batch; "
                    "the network is not training jointly"
                )

    if loss_config.lambda_reg > 0.0:
        for p in model.parameters():
            p.grad += 2.0 * loss_config.lambda_reg * p.value
    for p in model.parameters():
        adam_step(p, learning_rate)
    return loss_sum


def train(
    model: JointModel,
    split: SplitDataset,
    config: TrainConfig,
    verbose: bool = False,
) -> TrainLog:
    """Fit ``model`` on ``split.train``; returns the per-epoch log.

    The model is left holding the parameters of the best validation-HR@10
    epoch (or the final epoch when validation never ran).
    """
    config.validate()
    inner = validation_split(split.train)
    fit_matrix = inner.train
    feedback = model.config.feedback

    users_all, items_all, ratings_all, _ = fit_matrix.triples()
    n_positive = len(users_all)
    if n_positive == 0:
        raise DataError("training matrix has no interactions")
    max_r = fit_matrix.user_max_ratings()
    if feedback == FEEDBACK_IMPLICIT:
        targets_all = np.ones(n_positive)
    else:
        targets_all = ratings_all / max_r[users_all]

    user_inputs = fit_matrix.user_input_matrix(feedback)
    item_inputs = fit_matrix.item_input_matrix(feedback)
    interaction_keys = set((users_all * fit_matrix.num_items + items_all).tolist())
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))

    log = TrainLog()
    best_hr = -1.0
    best_snapshot = None
    patience_left = config.early_stop_patience
    start = time.perf_counter()
    validating = len(inner.test) > 0

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n_positive)
        loss_total = 0.0
        first_batch = epoch == 1
        for lo in range(0, n_positive, config.batch_size):
            batch = perm[lo : lo + config.batch_size]
            users = users_all[batch]
            pos_items = items_all[batch]
            targets = targets_all[batch]
            negatives = _sample_negatives_batch(
                fit_matrix, interaction_keys, users, config.loss.negative_count, rng
            )
            batch_loss = train_step(
                model,
                user_inputs,
                item_inputs,
                users,
                pos_items,
                targets,
                negatives,
                config.loss,
                config.learning_rate,
                check_joint_signal=first_batch,
            )
            first_batch = False
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch starting at index {lo}"
                )
            loss_total += batch_loss

        hr10 = ndcg10 = None
        if validating and epoch % config.eval_every == 0:
            report = evaluation.evaluate(
                model,
                inner,
                negatives=config.validation_negatives,
                cutoffs=(10,),
                seed=config.seed,
            )
            hr10, ndcg10 = report.hr[10], report.ndcg[10]
            if hr10 > best_hr:
                best_hr = hr10
                best_snapshot = model.copy_parameter_values()
                log.best_epoch = epoch
                patience_left = config.early_stop_patience
            else:
                patience_left -= 1
        log.records.append(
            EpochRecord(epoch, loss_total / n_positive, hr10, ndcg10, time.perf_counter() - start)
        )
        if verbose:
            shown = "" if hr10 is None else f" hr10={hr10:.4f} ndcg10={ndcg10:.4f}"
            print(f"epoch {epoch}: loss={loss_total / n_positive:.6f}{shown}", flush=True)
        if validating and patience_left <= 0:
            break

    if best_snapshot is not None:
        model.restore_parameter_values(best_snapshot)
    return log
