import numpy as np
import pytest

from jointrec.data import (
    Interaction,
    RatingMatrix,
    activity_cohort,
    filter_dataset,
    leave_one_out_split,
    load_dataset,
    load_split,
    sample_eval_negatives,
    save_split,
    sparsify,
    write_id_map,
)
from jointrec.errors import ConfigError, DataError, FormatError

from conftest import make_random_matrix


class TestLoaders:
    def test_tab_separated_fixture_round_trip(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("1\t10\t4\t100\n2\t11\t3\t200\n1\t12\t5\t150\n")
        loaded = load_dataset(p, "ml100k")
        assert sorted(loaded.interactions, key=lambda x: (x.user, x.item)) == [
            Interaction(1, 10, 4.0, 100),
            Interaction(1, 12, 5.0, 150),
            Interaction(2, 11, 3.0, 200),
        ]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.data"
        p.write_text("")
        assert load_dataset(p, "ml100k").interactions == []

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.data"
        p.write_text("1\t10\t4\t100\n1\t10\tx\n")
        with pytest.raises(DataError, match="bad.data:2"):
            load_dataset(p, "ml100k")

    def test_unknown_format_is_usage_error(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("1\t10\t4\t100\n")
        with pytest.raises(ConfigError, match="format"):
            load_dataset(p, "csv")

    def test_missing_file(self):
        with pytest.raises(DataError, match="no-such-file"):
            load_dataset("no-such-file", "ml100k")

    def test_duplicates_keep_latest_timestamp(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("1\t10\t4\t100\n1\t10\t2\t300\n1\t10\t3\t200\n")
        loaded = load_dataset(p, "ml100k")
        assert loaded.interactions == [Interaction(1, 10, 2.0, 300)]

    def test_double_colon_separator(self, tmp_path):
        p = tmp_path / "ratings.dat"
        p.write_text("1::1193::5::978300760\n2::661::3::978302109\n")
        loaded = load_dataset(p, "ml1m")
        assert len(loaded.interactions) == 2
        assert loaded.interactions[0].item == 1193

    def test_amazon_csv_reindexes_string_keys(self, tmp_path):
        p = tmp_path / "ratings.csv"
        p.write_text("user,item,rating,timestamp\nA12,B01,5.0,1000\nA99,B01,3.0,1200\nA12,B02,4.0,1100\n")
        loaded = load_dataset(p, "amazon_csv")
        assert loaded.user_labels == ["A12", "A99"]
        assert loaded.item_labels == ["B01", "B02"]
        assert Interaction(0, 0, 5.0, 1000) in loaded.interactions
        assert Interaction(1, 0, 3.0, 1200) in loaded.interactions

    def test_amazon_csv_without_header(self, tmp_path):
        p = tmp_path / "ratings.csv"
        p.write_text("A12,B01,5.0,1000\n")
        loaded = load_dataset(p, "amazon_csv")
        assert len(loaded.interactions) == 1

    def test_id_map_csv(self, tmp_path):
        out = tmp_path / "map.csv"
        write_id_map(["A12", "A99"], out)
        assert out.read_text() == "original,index\nA12,0\nA99,1\n"


class TestFilter:
    def test_zero_thresholds_identity_modulo_reindex(self):
        raw = [Interaction(5, 7, 4.0, 1), Interaction(9, 7, 3.0, 2), Interaction(5, 2, 1.0, 3)]
        matrix = filter_dataset(raw, 0, 0)
        assert matrix.num_users == 2 and matrix.num_items == 2
        assert matrix.num_ratings == 3
        assert list(matrix.orig_user_ids) == [5, 9]
        assert list(matrix.orig_item_ids) == [2, 7]

    def test_cascading_removal_reaches_fixpoint(self):
        # item 30 has a single rating; dropping it leaves user 2 with one
        # interaction, below min_user=2, so user 2 goes as well
        raw = [
            Interaction(1, 10, 5.0, 1),
            Interaction(1, 20, 4.0, 2),
            Interaction(2, 10, 3.0, 3),
            Interaction(2, 30, 2.0, 4),
            Interaction(3, 10, 1.0, 5),
            Interaction(3, 20, 2.0, 6),
        ]
        matrix = filter_dataset(raw, 2, 2)
        assert list(matrix.orig_user_ids) == [1, 3]
        assert list(matrix.orig_item_ids) == [10, 20]
        assert matrix.num_ratings == 4

    def test_everything_filtered_is_explicit_error(self):
        raw = [Interaction(1, 1, 5.0, 1)]
        with pytest.raises(DataError, match="removed all data"):
            filter_dataset(raw, 5, 5)


class TestRatingMatrix:
    def test_orientation_duality(self, random_matrix):
        from_users = set()
        for u in range(random_matrix.num_users):
            items, ratings, _ = random_matrix.user_row(u)
            from_users.update((u, int(i), float(r)) for i, r in zip(items, ratings))
        from_items = set()
        for i in range(random_matrix.num_items):
            users, ratings, _ = random_matrix.item_col(i)
            from_items.update((int(u), i, float(r)) for u, r in zip(users, ratings))
        assert from_users == from_items

    def test_density_matches_definition(self, random_matrix):
        m = random_matrix
        assert abs(m.density - m.num_ratings / (m.num_users * m.num_items)) < 1e-12

    def test_duplicate_pair_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            RatingMatrix(2, 2, [0, 0], [1, 1], [3.0, 4.0], [1, 2])

    def test_user_vector_semantics(self):
        matrix = RatingMatrix(1, 4, [0], [2], [4.0], [7])
        assert np.array_equal(matrix.user_vector(0), [0.0, 0.0, 4.0, 0.0])
        assert np.array_equal(matrix.user_vector(0, "implicit"), [0.0, 0.0, 1.0, 0.0])

    def test_empty_row_is_zero_vector(self):
        matrix = RatingMatrix(2, 3, [0], [1], [5.0], [1])
        assert not matrix.user_vector(1).any()
        assert not matrix.item_vector(0).any()

    def test_out_of_range_indices(self, random_matrix):
        with pytest.raises(IndexError):
            random_matrix.user_vector(random_matrix.num_users)
        with pytest.raises(IndexError):
            random_matrix.item_vector(-1)

    def test_input_matrices_match_vectors(self, random_matrix):
        for feedback in ("explicit", "implicit"):
            um = random_matrix.user_input_matrix(feedback)
            for u in (0, random_matrix.num_users - 1):
                assert np.array_equal(um[[u]].toarray()[0], random_matrix.user_vector(u, feedback))
            im = random_matrix.item_input_matrix(feedback)
            for i in (0, random_matrix.num_items - 1):
                assert np.array_equal(im[[i]].toarray()[0], random_matrix.item_vector(i, feedback))


class TestLeaveOneOut:
    def test_latest_timestamp_held_out(self):
        matrix = RatingMatrix(1, 3, [0, 0, 0], [0, 1, 2], [3.0, 4.0, 5.0], [1, 3, 2])
        split = leave_one_out_split(matrix)
        assert split.test[0].item == 1 and split.test[0].timestamp == 3
        items, _, _ = split.train.user_row(0)
        assert list(items) == [0, 2]

    def test_single_interaction_user_stays_in_train(self):
        matrix = RatingMatrix(2, 2, [0, 1, 1], [0, 0, 1], [1.0, 2.0, 3.0], [5, 1, 2])
        split = leave_one_out_split(matrix)
        assert 0 not in split.test
        assert split.train.user_count(0) == 1
        assert split.test[1].item == 1

    def test_timestamp_tie_breaks_to_larger_item(self):
        matrix = RatingMatrix(1, 4, [0, 0], [1, 3], [2.0, 2.0], [9, 9])
        split = leave_one_out_split(matrix)
        assert split.test[0].item == 3

    def test_split_soundness(self, random_matrix):
        split = leave_one_out_split(random_matrix)
        total = 0
        for u in range(random_matrix.num_users):
            items, _, _ = split.train.user_row(u)
            if u in split.test:
                assert split.test[u].item not in items
                total += len(items) + 1
            else:
                total += len(items)
        assert total == random_matrix.num_ratings
        counts = random_matrix.user_counts()
        assert all(u in split.test for u in range(random_matrix.num_users) if counts[u] >= 2)

    def test_user_max_rating_computed_on_train(self):
        matrix = RatingMatrix(1, 3, [0, 0, 0], [0, 1, 2], [2.0, 4.0, 5.0], [1, 2, 3])
        split = leave_one_out_split(matrix)
        # the 5-rated item is held out; train max is 4
        assert split.test[0].rating == 5.0
        assert split.user_max_rating[0] == 4.0


class TestSparsify:
    def test_target_equal_to_current_is_identity(self, random_matrix):
        out = sparsify(random_matrix, random_matrix.num_ratings, seed=1)
        assert out.num_ratings == random_matrix.num_ratings
        assert np.array_equal(out.triples()[0], random_matrix.triples()[0])

    def test_three_by_three_toy_checked_exhaustively(self):
        users = [0, 1, 2, 0, 1]
        items = [0, 1, 2, 1, 2]
        matrix = RatingMatrix(3, 3, users, items, [1.0] * 5, list(range(5)))
        # enumerate: a record is removable iff its user and item both have
        # another record; here that is exactly {(0,1), (1,1), (1,2)}
        removable = set()
        for u, i in zip(users, items):
            if users.count(u) > 1 and items.count(i) > 1:
                removable.add((u, i))
        assert removable == {(0, 1), (1, 1), (1, 2)}
        for seed in range(10):
            out = sparsify(matrix, 4, seed=seed)
            assert out.num_ratings == 4
            assert (out.user_counts() >= 1).all() and (out.item_counts() >= 1).all()
            removed = set(zip(*matrix.triples()[:2])) - set(zip(*out.triples()[:2]))
            assert len(removed) == 1 and removed <= removable

    def test_conserves_user_and_item_counts(self):
        matrix = make_random_matrix(seed=5, num_users=30, num_items=40)
        out = sparsify(matrix, matrix.num_ratings - 40, seed=9)
        assert out.num_users == matrix.num_users and out.num_items == matrix.num_items
        assert (out.user_counts() >= 1).all() and (out.item_counts() >= 1).all()
        assert out.num_ratings == matrix.num_ratings - 40

    def test_unreachable_target_is_error(self):
        # a diagonal matrix has no removable record at all
        matrix = RatingMatrix(3, 3, [0, 1, 2], [0, 1, 2], [1.0] * 3, [0, 1, 2])
        with pytest.raises(DataError, match="empty"):
            sparsify(matrix, 2, seed=0)

    def test_target_above_current_is_error(self, random_matrix):
        with pytest.raises(DataError, match="exceeds"):
            sparsify(random_matrix, random_matrix.num_ratings + 1, seed=0)

    def test_deterministic_under_seed(self, random_matrix):
        a = sparsify(random_matrix, random_matrix.num_ratings - 10, seed=4)
        b = sparsify(random_matrix, random_matrix.num_ratings - 10, seed=4)
        assert np.array_equal(a.triples()[1], b.triples()[1])


class TestActivityCohort:
    def test_full_percentile_is_everyone(self, random_matrix):
        assert len(activity_cohort(random_matrix, 1.0)) == random_matrix.num_users

    def test_sorted_counts_fixture(self):
        # user u has u+1 interactions; p=0.3 of 10 users -> counts 1, 2, 3
        rows = []
        for u in range(10):
            for k in range(u + 1):
                rows.append((u, (u * 31 + k * 7) % 60, 1.0, k))
        users, items, ratings, ts = zip(*rows)
        matrix = RatingMatrix(10, 60, users, items, ratings, ts)
        assert list(activity_cohort(matrix, 0.3)) == [0, 1, 2]

    def test_ceiling_of_p_times_m(self):
        matrix = make_random_matrix(seed=2, num_users=943, num_items=30, min_per_user=1, max_per_user=3)
        assert len(activity_cohort(matrix, 0.1)) == 95  # ceil(0.1 * 943)
        assert len(activity_cohort(matrix, 0.0999)) == 95  # still ceil
        assert len(activity_cohort(matrix, 94 / 943)) == 94

    def test_bad_percentile(self, random_matrix):
        for p in (0.0, -0.1, 1.5):
            with pytest.raises(ConfigError):
                activity_cohort(random_matrix, p)

    def test_nesting(self, random_matrix):
        small = set(activity_cohort(random_matrix, 0.2).tolist())
        large = set(activity_cohort(random_matrix, 0.7).tolist())
        assert small <= large


class TestEvalNegatives:
    def test_distinct_and_disjoint_from_train(self, random_split):
        train = random_split.train
        u = 0
        negs = sample_eval_negatives(train, random_split.test.get(u, Interaction(0, 0, 0, 0)).item, u, 5, seed=3)
        assert len(set(negs.tolist())) == 5
        items, _, _ = train.user_row(u)
        assert not set(negs.tolist()) & set(items.tolist())

    def test_excludes_test_item(self, random_split):
        for u in list(random_split.test)[:5]:
            negs = sample_eval_negatives(random_split.train, random_split.test[u].item, u, 8, seed=1)
            assert random_split.test[u].item not in negs

    def test_forced_complement(self):
        # user rated all but 3 items: those 3 are the only possible negatives
        matrix = RatingMatrix(1, 6, [0, 0, 0], [0, 2, 4], [1.0] * 3, [0, 1, 2])
        negs = sample_eval_negatives(matrix, None, 0, 3, seed=0)
        assert sorted(negs.tolist()) == [1, 3, 5]

    def test_too_few_candidates_names_user(self):
        matrix = RatingMatrix(1, 4, [0, 0], [0, 1], [1.0] * 2, [0, 1])
        with pytest.raises(DataError, match="user 0"):
            sample_eval_negatives(matrix, 2, 0, 3, seed=0)

    def test_deterministic_given_seed(self, random_split):
        u = next(iter(random_split.test))
        a = sample_eval_negatives(random_split.train, random_split.test[u].item, u, 6, seed=42)
        b = sample_eval_negatives(random_split.train, random_split.test[u].item, u, 6, seed=42)
        assert np.array_equal(a, b)


class TestSplitFile:
    def test_round_trip(self, tmp_path, random_matrix):
        split = leave_one_out_split(random_matrix)
        path = tmp_path / "data.split"
        save_split(split, path)
        loaded = load_split(path)
        assert loaded.train.num_users == split.train.num_users
        assert loaded.train.num_items == split.train.num_items
        assert loaded.train.num_ratings == split.train.num_ratings
        assert loaded.test == split.test
        for arr_a, arr_b in zip(loaded.train.triples(), split.train.triples()):
            assert np.array_equal(arr_a, arr_b)
        assert np.array_equal(loaded.user_max_rating, split.user_max_rating)

    def test_rewrite_is_byte_identical(self, tmp_path, random_matrix):
        split = leave_one_out_split(random_matrix)
        p1, p2 = tmp_path / "a.split", tmp_path / "b.split"
        save_split(split, p1)
        save_split(split, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.split"
        p.write_text("NOTASPLIT users=1\n")
        with pytest.raises(FormatError, match="magic"):
            load_split(p)

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "x.split"
        p.write_text("JRSPLIT1 users=1 items=2 scale=5 train=2 test=0\nt 0 0 5 1\n")
        with pytest.raises(FormatError, match="declares"):
            load_split(p)

    def test_fractional_ratings_survive(self, tmp_path):
        matrix = RatingMatrix(1, 2, [0, 0], [0, 1], [2.5, 4.0], [1, 2])
        path = tmp_path / "f.split"
        save_split(leave_one_out_split(matrix), path)
        loaded = load_split(path)
        assert loaded.train.triples()[2][0] == 2.5
