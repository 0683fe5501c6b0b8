"""Dataset ingestion and preparation.

Covers the whole data path: raw rating files -> filtered dense-id rating
matrix -> leave-one-out split -> model input vectors, plus the sparsity and
activity-cohort study helpers. A :class:`RatingMatrix` is immutable once
built and keeps both orientations (by user and by item) so either side's
rating vector is a contiguous slice away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, FormatError

FORMATS = ("ml100k", "ml1m", "amazon_csv")

FEEDBACK_EXPLICIT = "explicit"
FEEDBACK_IMPLICIT = "implicit"

SPLIT_MAGIC = "JRSPLIT1"


@dataclass(frozen=True)
class Interaction:
    """One observed (user, item, rating, timestamp) event."""

    user: int
    item: int
    rating: float
    timestamp: int


@dataclass
class LoadedDataset:
    """Raw interactions plus, for string-keyed sources, the id labels."""

    interactions: list[Interaction]
    user_labels: list[str] | None = None
    item_labels: list[str] | None = None


def _dedup_latest(interactions):
    """Keep one event per (user, item): the one with the latest timestamp."""
    best: dict[tuple[int, int], Interaction] = {}
    for it in interactions:
        key = (it.user, it.item)
        prev = best.get(key)
        if prev is None or it.timestamp >= prev.timestamp:
            best[key] = it
    return list(best.values())


def _parse_rating_line(line, line_no, path, sep):
    parts = line.rstrip("\n").split(sep)
    if len(parts) != 4:
        raise DataError(f"{path}:{line_no}: expected 4 fields separated by {sep!r}, got {len(parts)}")
    try:
        return Interaction(int(parts[0]), int(parts[1]), float(parts[2]), int(float(parts[3])))
    except ValueError as exc:
        raise DataError(f"{path}:{line_no}: {exc}") from exc


def load_dataset(path, fmt: str) -> LoadedDataset:
    """Parse a raw rating file; duplicates keep the latest timestamp.

    ``ml100k`` is tab separated, ``ml1m`` uses the two-character ``::``
    token, ``amazon_csv`` is ``user,item,rating,timestamp`` with string keys
    (reindexed densely in first-seen order) and an optional header row.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open dataset file {path}: {exc}") from exc

    interactions = []
    user_labels = item_labels = None
    with handle:
        if fmt in ("ml100k", "ml1m"):
            sep = "\t" if fmt == "ml100k" else "::"
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                interactions.append(_parse_rating_line(line, line_no, path, sep))
        else:
            user_index: dict[str, int] = {}
            item_index: dict[str, int] = {}
            user_labels, item_labels = [], []
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split(",")
                if len(parts) != 4:
                    raise DataError(f"{path}:{line_no}: expected 4 comma-separated fields, got {len(parts)}")
                if line_no == 1 and _looks_like_header(parts):
                    continue
                user_key, item_key = parts[0], parts[1]
                try:
                    rating = float(parts[2])
                    ts = int(float(parts[3]))
                except ValueError as exc:
                    raise DataError(f"{path}:{line_no}: {exc}") from exc
                if user_key not in user_index:
                    user_index[user_key] = len(user_labels)
                    user_labels.append(user_key)
                if item_key not in item_index:
                    item_index[item_key] = len(item_labels)
                    item_labels.append(item_key)
                interactions.append(Interaction(user_index[user_key], item_index[item_key], rating, ts))
    return LoadedDataset(_dedup_latest(interactions), user_labels, item_labels)


def _looks_like_header(parts):
    def numeric(s):
        try:
            float(s)
            return True
        except ValueError:
            return False

    return not (numeric(parts[2]) and numeric(parts[3]))


class RatingMatrix:
    """Dual-orientation sparse store of ratings with dense, contiguous ids."""

    def __init__(self, num_users, num_items, users, items, ratings, timestamps,
                 orig_user_ids=None, orig_item_ids=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.float64)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        if not (len(users) == len(items) == len(ratings) == len(timestamps)):
            raise DataError("triple arrays have inconsistent lengths")
        if len(users) and (users.min() < 0 or users.max() >= num_users):
            raise DataError("user id out of range")
        if len(items) and (items.min() < 0 or items.max() >= num_items):
            raise DataError("item id out of range")

        order = np.lexsort((items, users))
        self._users = users[order]
        self._items = items[order]
        self._ratings = ratings[order]
        self._timestamps = timestamps[order]
        if len(self._users) > 1:
            same = (np.diff(self._users) == 0) & (np.diff(self._items) == 0)
            if same.any():
                k = int(np.argmax(same))
                raise DataError(f"duplicate rating for user {self._users[k]}, item {self._items[k]}")

        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.orig_user_ids = orig_user_ids
        self.orig_item_ids = orig_item_ids

        self._user_ptr = np.searchsorted(self._users, np.arange(num_users + 1))
        item_order = np.lexsort((self._users, self._items))
        self._by_item_users = self._users[item_order]
        self._by_item_items = self._items[item_order]
        self._by_item_ratings = self._ratings[item_order]
        self._by_item_ts = self._timestamps[item_order]
        self._item_ptr = np.searchsorted(self._by_item_items, np.arange(num_items + 1))
        self._csr_cache: dict = {}

    @classmethod
    def from_interactions(cls, interactions, num_users, num_items, **kw):
        users = [it.user for it in interactions]
        items = [it.item for it in interactions]
        ratings = [it.rating for it in interactions]
        ts = [it.timestamp for it in interactions]
        return cls(num_users, num_items, users, items, ratings, ts, **kw)

    @property
    def num_ratings(self) -> int:
        return len(self._ratings)

    @property
    def density(self) -> float:
        if self.num_users == 0 or self.num_items == 0:
            return 0.0
        return self.num_ratings / (self.num_users * self.num_items)

    @property
    def rating_scale(self) -> float:
        """Largest rating in the matrix (e.g. 5.0 on a 1-5 star scale)."""
        return float(self._ratings.max()) if self.num_ratings else 0.0

    def triples(self):
        """(users, items, ratings, timestamps) in canonical (user, item) order."""
        return self._users, self._items, self._ratings, self._timestamps

    def user_row(self, u):
        """(items, ratings, timestamps) of user ``u``, sorted by item id."""
        self._check_user(u)
        lo, hi = self._user_ptr[u], self._user_ptr[u + 1]
        return self._items[lo:hi], self._ratings[lo:hi], self._timestamps[lo:hi]

    def item_col(self, i):
        """(users, ratings, timestamps) of item ``i``, sorted by user id."""
        self._check_item(i)
        lo, hi = self._item_ptr[i], self._item_ptr[i + 1]
        return self._by_item_users[lo:hi], self._by_item_ratings[lo:hi], self._by_item_ts[lo:hi]

    def user_count(self, u) -> int:
        self._check_user(u)
        return int(self._user_ptr[u + 1] - self._user_ptr[u])

    def item_count(self, i) -> int:
        self._check_item(i)
        return int(self._item_ptr[i + 1] - self._item_ptr[i])

    def user_counts(self) -> np.ndarray:
        return np.diff(self._user_ptr)

    def item_counts(self) -> np.ndarray:
        return np.diff(self._item_ptr)

    def has_interaction(self, u, i) -> bool:
        items, _, _ = self.user_row(u)
        k = np.searchsorted(items, i)
        return bool(k < len(items) and items[k] == i)

    def user_vector(self, u, feedback: str = FEEDBACK_EXPLICIT) -> np.ndarray:
        """Length-N rating vector of user ``u``: observed ratings, zeros elsewhere."""
        items, ratings, _ = self.user_row(u)
        vec = np.zeros(self.num_items)
        vec[items] = 1.0 if feedback == FEEDBACK_IMPLICIT else ratings
        return vec

    def item_vector(self, i, feedback: str = FEEDBACK_EXPLICIT) -> np.ndarray:
        """Length-M rating vector of item ``i``."""
        users, ratings, _ = self.item_col(i)
        vec = np.zeros(self.num_users)
        vec[users] = 1.0 if feedback == FEEDBACK_IMPLICIT else ratings
        return vec

    def user_input_matrix(self, feedback: str = FEEDBACK_EXPLICIT) -> sp.csr_array:
        """All user vectors stacked as an M x N CSR matrix (cached)."""
        key = ("user", feedback)
        if key not in self._csr_cache:
            vals = np.ones_like(self._ratings) if feedback == FEEDBACK_IMPLICIT else self._ratings
            self._csr_cache[key] = sp.csr_array(
                (vals, (self._users, self._items)), shape=(self.num_users, self.num_items)
            )
        return self._csr_cache[key]

    def item_input_matrix(self, feedback: str = FEEDBACK_EXPLICIT) -> sp.csr_array:
        """All item vectors stacked as an N x M CSR matrix (cached)."""
        key = ("item", feedback)
        if key not in self._csr_cache:
            vals = np.ones_like(self._ratings) if feedback == FEEDBACK_IMPLICIT else self._ratings
            self._csr_cache[key] = sp.csr_array(
                (vals, (self._items, self._users)), shape=(self.num_items, self.num_users)
            )
        return self._csr_cache[key]

    def user_max_ratings(self) -> np.ndarray:
        """Per-user largest rating; 0 for users with no ratings."""
        out = np.zeros(self.num_users)
        np.maximum.at(out, self._users, self._ratings)
        return out

    def _check_user(self, u):
        if not 0 <= u < self.num_users:
            raise IndexError(f"user id {u} out of range [0, {self.num_users})")

    def _check_item(self, i):
        if not 0 <= i < self.num_items:
            raise IndexError(f"item id {i} out of range [0, {self.num_items})")


def filter_dataset(interactions, min_user: int, min_item: int) -> RatingMatrix:
    """Drop under-active users/items until stable, then reindex densely.

    Removal cascades: dropping an item lowers its raters' counts, which can
    push a user under the threshold on the next pass, and so on until a
    fixpoint. Ids are reindexed in ascending original-id order.
    """
    if min_user < 0 or min_item < 0:
        raise ConfigError("filter thresholds must be >= 0")
    current = list(interactions)
    while True:
        user_counts: dict[int, int] = {}
        item_counts: dict[int, int] = {}
        for it in current:
            user_counts[it.user] = user_counts.get(it.user, 0) + 1
            item_counts[it.item] = item_counts.get(it.item, 0) + 1
        bad_users = {u for u, c in user_counts.items() if c < min_user}
        bad_items = {i for i, c in item_counts.items() if c < min_item}
        if not bad_users and not bad_items:
            break
        current = [it for it in current if it.user not in bad_users and it.item not in bad_items]
    if not current:
        raise DataError(
            f"filtering with thresholds (min_user={min_user}, min_item={min_item}) removed all data"
        )

    orig_users = sorted({it.user for it in current})
    orig_items = sorted({it.item for it in current})
    user_map = {orig: new for new, orig in enumerate(orig_users)}
    item_map = {orig: new for new, orig in enumerate(orig_items)}
    remapped = [
        Interaction(user_map[it.user], item_map[it.item], it.rating, it.timestamp) for it in current
    ]
    return RatingMatrix.from_interactions(
        remapped,
        len(orig_users),
        len(orig_items),
        orig_user_ids=np.asarray(orig_users, dtype=np.int64),
        orig_item_ids=np.asarray(orig_items, dtype=np.int64),
    )


@dataclass
class SplitDataset:
    """Leave-one-out split: train matrix plus one held-out event per user."""

    train: RatingMatrix
    test: dict[int, Interaction]
    user_max_rating: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.user_max_rating is None:
            self.user_max_rating = self.train.user_max_ratings()


def leave_one_out_split(matrix: RatingMatrix) -> SplitDataset:
    """Hold out each user's latest interaction (timestamp ties: larger item id).

    Users with a single interaction keep it in train and contribute no test
    item.
    """
    users, items, ratings, ts = matrix.triples()
    keep = np.ones(len(users), dtype=bool)
    test: dict[int, Interaction] = {}
    for u in range(matrix.num_users):
        row_items, row_ratings, row_ts = matrix.user_row(u)
        if len(row_items) < 2:
            continue
        # lexsort: timestamp is the primary key, item id breaks ties upward
        order = np.lexsort((row_items, row_ts))
        pick = order[-1]
        test[u] = Interaction(u, int(row_items[pick]), float(row_ratings[pick]), int(row_ts[pick]))
    for u in sorted(test):
        i = test[u].item
        lo = np.searchsorted(users, u, side="left")
        hi = np.searchsorted(users, u, side="right")
        k = lo + np.searchsorted(items[lo:hi], i)
        keep[k] = False
    train = RatingMatrix(
        matrix.num_users,
        matrix.num_items,
        users[keep],
        items[keep],
        ratings[keep],
        ts[keep],
        orig_user_ids=matrix.orig_user_ids,
        orig_item_ids=matrix.orig_item_ids,
    )
    return SplitDataset(train=train, test=test)


def sparsify(matrix: RatingMatrix, target_ratings: int, seed: int) -> RatingMatrix:
    """Thin the matrix to ``target_ratings`` by uniformly removing records,
    rejecting any removal that would empty a user row or an item column.

    User and item counts are conserved exactly.
    """
    if target_ratings > matrix.num_ratings:
        raise DataError(
            f"sparsify target {target_ratings} exceeds current rating count {matrix.num_ratings}"
        )
    users, items, ratings, ts = (a.copy() for a in matrix.triples())
    alive = np.ones(len(users), dtype=bool)
    user_counts = matrix.user_counts().copy()
    item_counts = matrix.item_counts().copy()
    remaining = len(users)
    rng = np.random.default_rng(seed)
    rejects = 0
    while remaining > target_ratings:
        k = int(rng.integers(len(users)))
        u, i = users[k], items[k]
        if alive[k] and user_counts[u] > 1 and item_counts[i] > 1:
            alive[k] = False
            user_counts[u] -= 1
            item_counts[i] -= 1
            remaining -= 1
            rejects = 0
            continue
        rejects += 1
        if rejects > max(1000, 4 * len(users)):
            removable = alive & (user_counts[users] > 1) & (item_counts[items] > 1)
            if not removable.any():
                raise DataError(
                    f"cannot reach {target_ratings} ratings: only {remaining} remain and every "
                    "further removal would empty a user row or item column"
                )
            rejects = 0
    return RatingMatrix(
        matrix.num_users,
        matrix.num_items,
        users[alive],
        items[alive],
        ratings[alive],
        ts[alive],
        orig_user_ids=matrix.orig_user_ids,
        orig_item_ids=matrix.orig_item_ids,
    )


def activity_cohort(matrix: RatingMatrix, percentile: float) -> np.ndarray:
    """Ids of the ceil(p * M) least-active users, ascending id order."""
    if not 0.0 < percentile <= 1.0:
        raise ConfigError(f"cohort percentile must lie in (0, 1], got {percentile}")
    counts = matrix.user_counts()
    order = np.lexsort((np.arange(matrix.num_users), counts))
    take = math.ceil(percentile * matrix.num_users)
    return np.sort(order[:take])


def sample_eval_negatives(train: RatingMatrix, test_item: int | None, u: int, k: int, seed: int) -> np.ndarray:
    """``k`` distinct items user ``u`` never interacted with (test item excluded).

    Deterministic given ``seed`` and independent of evaluation order: the
    draw uses a per-user stream derived from (seed, u).
    """
    mask = np.ones(train.num_items, dtype=bool)
    items, _, _ = train.user_row(u)
    mask[items] = False
    if test_item is not None:
        mask[test_item] = False
    candidates = np.flatnonzero(mask)
    if len(candidates) < k:
        raise DataError(
            f"user {u} has only {len(candidates)} non-interacted items; cannot sample {k} negatives"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, u]))
    return np.sort(rng.choice(candidates, size=k, replace=False))


def _format_rating(r: float) -> str:
    return repr(int(r)) if float(r).is_integer() else repr(float(r))


def save_split(split: SplitDataset, path) -> None:
    """Persist a split as a line-oriented text file with a stats header."""
    train = split.train
    lines = [
        f"{SPLIT_MAGIC} users={train.num_users} items={train.num_items} "
        f"scale={_format_rating(train.rating_scale)} "
        f"train={train.num_ratings} test={len(split.test)}\n"
    ]
    users, items, ratings, ts = train.triples()
    for u, i, r, t in zip(users, items, ratings, ts):
        lines.append(f"t {u} {i} {_format_rating(r)} {t}\n")
    for u in sorted(split.test):
        e = split.test[u]
        lines.append(f"e {e.user} {e.item} {_format_rating(e.rating)} {e.timestamp}\n")
    with open(path, "w", encoding="utf-8") as handle:
        handle.writelines(lines)


def load_split(path) -> SplitDataset:
    """Inverse of :func:`save_split`; validates magic and declared counts."""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open split file {path}: {exc}") from exc
    with handle:
        header = handle.readline().split()
        if not header or header[0] != SPLIT_MAGIC:
            raise FormatError(f"{path}: missing or wrong magic string")
        try:
            fields = dict(part.split("=", 1) for part in header[1:])
            num_users = int(fields["users"])
            num_items = int(fields["items"])
            n_train = int(fields["train"])
            n_test = int(fields["test"])
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}: bad header: {exc}") from exc
        train_rows, test = [], {}
        for line_no, line in enumerate(handle, start=2):
            parts = line.split()
            if len(parts) != 5 or parts[0] not in ("t", "e"):
                raise FormatError(f"{path}: line {line_no}: expected 't/e user item rating ts'")
            u, i, r, t = int(parts[1]), int(parts[2]), float(parts[3]), int(parts[4])
            if parts[0] == "t":
                train_rows.append((u, i, r, t))
            else:
                test[u] = Interaction(u, i, r, t)
    if len(train_rows) != n_train or len(test) != n_test:
        raise FormatError(
            f"{path}: header declares {n_train}/{n_test} records, "
            f"found {len(train_rows)}/{len(test)}"
        )
    users, items, ratings, ts = zip(*train_rows) if train_rows else ((), (), (), ())
    train = RatingMatrix(num_users, num_items, users, items, ratings, ts)
    return SplitDataset(train=train, test=test)


def write_id_map(labels, path) -> None:
    """Two-column CSV mapping original string keys to dense indices."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("original,index\n")
        for idx, label in enumerate(labels):
            handle.write(f"{label},{idx}\n")
