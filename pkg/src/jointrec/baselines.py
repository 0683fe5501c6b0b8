"""Reference recommenders: item popularity and pairwise matrix factorization.

Both expose the same ``prepare_scorer`` protocol as the joint model so the
evaluation harness treats them interchangeably.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .data import RatingMatrix
from .errors import ConfigError, FormatError, NumericError
from .nn import sigmoid

BASELINE_MAGIC = b"JRECBASE"
BASELINE_VERSION = 1


class ItemPopModel:
    """Non-personalized: every user sees items ranked by train interaction count."""

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.float64)

    @classmethod
    def fit(cls, train: RatingMatrix) -> "ItemPopModel":
        return cls(train.item_counts())

    def score(self, u: int, i: int) -> float:
        return float(self.counts[i])

    def prepare_scorer(self, train: RatingMatrix):
        counts = self.counts

        def score(u: int, item_ids: np.ndarray) -> np.ndarray:
            return counts[np.asarray(item_ids)]

        return score

    def save(self, path) -> None:
        _save_baseline(path, "itempop", {"counts": self.counts})

    @classmethod
    def load(cls, path) -> "ItemPopModel":
        kind, arrays = _load_baseline(path)
        if kind != "itempop":
            raise FormatError(f"{path}: expected an itempop checkpoint, found {kind!r}")
        return cls(arrays["counts"])


class BprMfModel:
    """Matrix factorization scored by the dot product of latent factors."""

    def __init__(self, user_factors: np.ndarray, item_factors: np.ndarray):
        self.user_factors = np.asarray(user_factors, dtype=np.float64)
        self.item_factors = np.asarray(item_factors, dtype=np.float64)

    def score(self, u: int, i: int) -> float:
        return float(self.user_factors[u] @ self.item_factors[i])

    def prepare_scorer(self, train: RatingMatrix):
        P, Q = self.user_factors, self.item_factors

        def score(u: int, item_ids: np.ndarray) -> np.ndarray:
            return Q[np.asarray(item_ids)] @ P[u]

        return score

    def save(self, path) -> None:
        _save_baseline(path, "bprmf", {"user_factors": self.user_factors, "item_factors": self.item_factors})

    @classmethod
    def load(cls, path) -> "BprMfModel":
        kind, arrays = _load_baseline(path)
        if kind != "bprmf":
            raise FormatError(f"{path}: expected a bprmf checkpoint, found {kind!r}")
        return cls(arrays["user_factors"], arrays["item_factors"])


def bpr_triple_loss(p_u: np.ndarray, q_i: np.ndarray, q_j: np.ndarray, reg: float):
    """-ln sigmoid(p_u . (q_i - q_j)) with L2 penalty (reg/2)|theta|^2.

    Returns the value and the gradients for all three factor vectors.
    """
    x = float(p_u @ (q_i - q_j))
    sig_neg = float(sigmoid(np.array(-x)))
    value = -np.log(max(float(sigmoid(np.array(x))), 1e-300))
    value += 0.5 * reg * (p_u @ p_u + q_i @ q_i + q_j @ q_j)
    g_p = -sig_neg * (q_i - q_j) + reg * p_u
    g_qi = -sig_neg * p_u + reg * q_i
    g_qj = sig_neg * p_u + reg * q_j
    return float(value), g_p, g_qi, g_qj


def bpr_train(
    train: RatingMatrix,
    factors: int = 64,
    epochs: int = 50,
    learning_rate: float = 0.01,
    reg: float = 0.01,
    seed: int = 0,
    batch_size: int = 1024,
) -> BprMfModel:
    """SGD over (user, positive, sampled-negative) triples.

    Each epoch visits every observed interaction once in shuffled order with
    one fresh uniformly sampled negative; updates are applied per mini-batch
    with duplicate indices summed.
    """
    if factors < 1:
        raise ConfigError(f"bpr factors must be >= 1, got {factors}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    M, N = train.num_users, train.num_items
    P = rng.normal(0.0, 0.01, size=(M, factors))
    Q = rng.normal(0.0, 0.01, size=(N, factors))
    users_all, items_all, _, _ = train.triples()
    interaction_keys = set((users_all * N + items_all).tolist())

    for epoch in range(epochs):
        perm = rng.permutation(len(users_all))
        for lo in range(0, len(perm), batch_size):
            batch = perm[lo : lo + batch_size]
            u = users_all[batch]
            i = items_all[batch]
            j = rng.integers(N, size=len(batch))
            while True:
                bad = [k for k in range(len(j)) if int(u[k]) * N + int(j[k]) in interaction_keys]
                if not bad:
                    break
                j[bad] = rng.integers(N, size=len(bad))

            Pu, Qi, Qj = P[u], Q[i], Q[j]
            x = np.einsum("bd,bd->b", Pu, Qi - Qj)
            coef = (sigmoid(-x) * learning_rate)[:, None]
            np.add.at(P, u, coef * (Qi - Qj) - learning_rate * reg * Pu)
            np.add.at(Q, i, coef * Pu - learning_rate * reg * Qi)
            np.add.at(Q, j, -coef * Pu - learning_rate * reg * Qj)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise NumericError(f"bpr training diverged at epoch {epoch + 1}: non-finite factors")
    return BprMfModel(P, Q)


def _save_baseline(path, kind: str, arrays: dict[str, np.ndarray]) -> None:
    meta = json.dumps({"kind": kind, "names": sorted(arrays)}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(BASELINE_MAGIC)
        handle.write(struct.pack("<I", BASELINE_VERSION))
        handle.write(struct.pack("<I", len(meta)))
        handle.write(meta)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            handle.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                handle.write(struct.pack("<I", dim))
            handle.write(arr.tobytes())


def _load_baseline(path):
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise FormatError(f"cannot open checkpoint {path}: {exc}") from exc
    if blob[: len(BASELINE_MAGIC)] != BASELINE_MAGIC:
        raise FormatError(f"{path}: bad baseline checkpoint magic")
    off = len(BASELINE_MAGIC)
    try:
        (version,) = struct.unpack_from("<I", blob, off)
        off += 4
        if version != BASELINE_VERSION:
            raise FormatError(f"{path}: unsupported baseline checkpoint version {version}")
        (meta_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        meta = json.loads(blob[off : off + meta_len].decode("utf-8"))
        off += meta_len
        arrays = {}
        for name in meta["names"]:
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = []
            for _ in range(ndim):
                (dim,) = struct.unpack_from("<I", blob, off)
                off += 4
                shape.append(dim)
            count = int(np.prod(shape)) if shape else 1
            if off + count * 8 > len(blob):
                raise struct.error("unexpected end of file")
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += count * 8
        return meta["kind"], arrays
    except (struct.error, KeyError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or malformed baseline checkpoint ({exc})") from exc
