"""Leave-one-out top-N evaluation.

For every user with a held-out item, score that item against k sampled
non-interacted items, rank the candidates, and aggregate hit ratio and NDCG
at each cutoff. Candidate sets depend only on (seed, user), so two models
evaluated with the same seed see identical candidates, and per-user work can
run on worker threads without changing any result (aggregation uses exact
summation in user order).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import RatingMatrix, SplitDataset, activity_cohort, sample_eval_negatives
from .errors import ConfigError, DataError

log = logging.getLogger("jointrec")

DEFAULT_CUTOFFS = tuple(range(1, 11))


def hr_at_n(rank: int, n: int) -> int:
    """1 iff the held-out item made the top-n list."""
    return 1 if rank <= n else 0


def ndcg_at_n(rank: int, n: int) -> float:
    """Position-discounted credit 1/log2(rank+1); one relevant item, so IDCG=1."""
    if rank > n:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def rank_of_test(scores: np.ndarray, item_ids: np.ndarray, test_item: int) -> int:
    """1-based rank by descending score; ties broken by ascending item id."""
    pos = np.flatnonzero(item_ids == test_item)
    if len(pos) != 1:
        raise ConfigError(f"test item {test_item} must appear exactly once among candidates")
    s_t = scores[pos[0]]
    better = np.count_nonzero(scores > s_t)
    tied_earlier = np.count_nonzero((scores == s_t) & (item_ids < test_item))
    return 1 + better + tied_earlier


@dataclass
class RankedCandidates:
    """One user's scored candidate list and the test item's resulting rank."""

    user: int
    candidates: np.ndarray
    scores: np.ndarray
    rank_of_test: int


@dataclass
class EvalReport:
    cutoffs: tuple
    hr: dict[int, float]
    ndcg: dict[int, float]
    users: int
    skipped: int
    total_seconds: float
    mean_rank_seconds: float
    negatives: int
    seed: int
    cohort: str | None = None
    ranked: list[RankedCandidates] | None = field(default=None, repr=False)

    def metric_fields(self):
        """Deterministic fields (timings excluded)."""
        return (
            self.cutoffs,
            tuple(sorted(self.hr.items())),
            tuple(sorted(self.ndcg.items())),
            self.users,
            self.skipped,
            self.negatives,
            self.seed,
            self.cohort,
        )

    def to_json_dict(self) -> dict:
        doc = {
            "users": self.users,
            "skipped": self.skipped,
            "negatives": self.negatives,
            "seed": self.seed,
            "cohort": self.cohort,
            "total_seconds": self.total_seconds,
            "mean_rank_seconds": self.mean_rank_seconds,
        }
        for n in self.cutoffs:
            doc[f"hr@{n}"] = self.hr[n]
            doc[f"ndcg@{n}"] = self.ndcg[n]
        return doc

    def csv_rows(self, model_name: str, dataset_name: str) -> list[str]:
        """Rows of ``model,dataset,cohort,N,hr,ndcg,users,seconds``."""
        cohort = self.cohort if self.cohort is not None else "all"
        return [
            f"{model_name},{dataset_name},{cohort},{n},{self.hr[n]:.6f},{self.ndcg[n]:.6f},"
            f"{self.users},{self.total_seconds:.3f}"
            for n in self.cutoffs
        ]


def evaluate(
    scorer_model,
    split: SplitDataset,
    negatives: int = 100,
    cutoffs: tuple = DEFAULT_CUTOFFS,
    seed: int = 0,
    users=None,
    workers: int = 1,
    collect: bool = False,
    cohort: str | None = None,
) -> EvalReport:
    """Run the ranked-candidates protocol over every test user.

    ``scorer_model`` must expose ``prepare_scorer(train) -> fn(u, item_ids)``.
    Users without ``negatives`` samplable items are skipped (counted in the
    report). ``users`` restricts evaluation to a cohort.
    """
    cutoffs = tuple(cutoffs)
    if not cutoffs or min(cutoffs) < 1:
        raise ConfigError(f"cutoffs must be positive, got {cutoffs}")
    train = split.train
    eligible = sorted(split.test)
    if users is not None:
        chosen = set(int(u) for u in users)
        eligible = [u for u in eligible if u in chosen]

    t0 = time.perf_counter()
    score = scorer_model.prepare_scorer(train)
    setup_seconds = time.perf_counter() - t0

    def rank_user(u: int):
        test_item = split.test[u].item
        try:
            negs = sample_eval_negatives(train, test_item, u, negatives, seed)
        except DataError as exc:
            log.warning("skipping user %d during evaluation: %s", u, exc)
            return None
        candidates = np.concatenate([negs, [test_item]])
        t_start = time.perf_counter()
        scores = score(u, candidates)
        dt = time.perf_counter() - t_start
        rank = rank_of_test(scores, candidates, test_item)
        return RankedCandidates(u, candidates, scores, rank), dt

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(rank_user, eligible))
    else:
        results = [rank_user(u) for u in eligible]

    ranked: list[RankedCandidates] = []
    times: list[float] = []
    skipped = 0
    for res in results:
        if res is None:
            skipped += 1
        else:
            ranked.append(res[0])
            times.append(res[1])

    n_users = len(ranked)
    hr = {}
    ndcg = {}
    for n in cutoffs:
        if n_users:
            hr[n] = math.fsum(hr_at_n(r.rank_of_test, n) for r in ranked) / n_users
            ndcg[n] = math.fsum(ndcg_at_n(r.rank_of_test, n) for r in ranked) / n_users
        else:
            hr[n] = float("nan")
            ndcg[n] = float("nan")
    scoring_seconds = math.fsum(times)
    return EvalReport(
        cutoffs=cutoffs,
        hr=hr,
        ndcg=ndcg,
        users=n_users,
        skipped=skipped,
        total_seconds=setup_seconds + scoring_seconds,
        mean_rank_seconds=scoring_seconds / n_users if n_users else float("nan"),
        negatives=negatives,
        seed=seed,
        cohort=cohort,
        ranked=ranked if collect else None,
    )


def evaluate_cohorts(
    scorer_model,
    split: SplitDataset,
    percentiles,
    negatives: int = 100,
    cutoffs: tuple = DEFAULT_CUTOFFS,
    seed: int = 0,
    workers: int = 1,
) -> list[EvalReport]:
    """The evaluation protocol restricted to each activity cohort in turn.

    Cohort ``p`` holds the ceil(p * M) least-active users by training
    interaction count. Cohorts with no evaluable users are skipped with a
    warning.
    """
    reports = []
    for p in percentiles:
        cohort_users = activity_cohort(split.train, p)
        report = evaluate(
            scorer_model,
            split,
            negatives=negatives,
            cutoffs=cutoffs,
            seed=seed,
            users=cohort_users,
            workers=workers,
            cohort=f"{p:g}",
        )
        if report.users == 0:
            log.warning("cohort %g has no evaluable users; skipped", p)
            continue
        reports.append(report)
    return reports
