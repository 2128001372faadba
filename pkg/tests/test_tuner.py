import numpy as np
import pytest

from rfclass.booster import Hyperparameters
from rfclass.tuner import (SearchGrid, cross_validate, default_grid,
                           pairwise_grid_search)

from conftest import make_database, make_record


def labeled_database(n, seed, informative=True):
    """Two well-separated feature clusters mapped to RF classes 1 and 3."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        cls = i % 2
        center = 0.25 if cls == 0 else 0.75
        values = tuple(float(v) for v in np.clip(rng.normal(center, 0.08, 11), 0, 1))
        rf = 0.15 if cls == 0 else 0.35
        if not informative:
            rf = 0.15 if rng.random() < 0.5 else 0.35
        records.append(make_record(f"r{i}", values, rf))
    return make_database(records)


def conjunction_database(n=160, noise=0.02, seed=0):
    """Three-way conjunction target: needs three split levels on one path,
    so depth 2 cannot represent it while greedy depth 4 fits it exactly."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        bits = (rng.random(3) < 0.7).astype(int)
        values = [0.25 + 0.5 * bit + rng.normal(0, noise) for bit in bits]
        values += rng.random(8).tolist()
        rf = 0.35 if bits.all() else 0.15
        records.append(make_record(f"r{i}", values, rf))
    return make_database(records)


def fast_hp(**kwargs):
    base = dict(max_depth=3, min_child_weight=0.0, learning_rate=0.3,
                subsample=1.0, colsample_bytree=1.0, colsample_bylevel=1.0,
                alpha=0.0, lambda_=0.1, gamma=0.0, max_delta_step=0.0,
                num_class=10, num_rounds=8)
    base.update(kwargs)
    return Hyperparameters(**base)


class TestCrossValidate:
    def test_deterministic(self):
        db = labeled_database(60, seed=1)
        a = cross_validate(db, fast_hp(), k=3, seed=7)
        b = cross_validate(db, fast_hp(), k=3, seed=7)
        assert a == b

    def test_two_rows_two_folds(self):
        db = labeled_database(2, seed=2)
        score = cross_validate(db, fast_hp(num_rounds=1), k=2, seed=0)
        assert np.isfinite(score) and score > 0

    def test_constant_labels_loss_shrinks_with_rounds(self):
        records = [make_record(f"r{i}", list(np.linspace(0.1, 0.9, 11)), 0.25)
                   for i in range(30)]
        db = make_database(records)
        short = cross_validate(db, fast_hp(num_rounds=1), k=3, seed=0)
        long = cross_validate(db, fast_hp(num_rounds=30), k=3, seed=0)
        assert long < short
        assert long < 0.05

    def test_informative_beats_noise(self):
        good = cross_validate(labeled_database(60, 3), fast_hp(), k=3, seed=1)
        noisy = cross_validate(labeled_database(60, 3, informative=False),
                               fast_hp(), k=3, seed=1)
        assert good < noisy


class TestSearchGridValidation:
    def test_default_grid_valid(self):
        grid = default_grid()
        paired = {name for pair in grid.pairs for name in pair}
        assert paired == set(grid.candidates)
        # the search seed values all appear in their candidate lists
        start = Hyperparameters()
        for name, values in grid.candidates.items():
            assert getattr(start, name) in values

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError, match="empty candidate"):
            SearchGrid(candidates={"max_depth": []}, pairs=(("max_depth",),))

    def test_unpaired_candidate_rejected(self):
        with pytest.raises(ValueError, match="appears in no pair"):
            SearchGrid(candidates={"max_depth": [2]}, pairs=())

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="not a tunable"):
            SearchGrid(candidates={"depth": [2]}, pairs=(("depth",),))

    def test_pair_without_candidates_rejected(self):
        with pytest.raises(ValueError, match="without candidates"):
            SearchGrid(candidates={"max_depth": [2]},
                       pairs=(("max_depth", "gamma"),))

    def test_oversized_pair_rejected(self):
        with pytest.raises(ValueError, match="one or two names"):
            SearchGrid(candidates={"max_depth": [2], "gamma": [0.0], "alpha": [0.0]},
                       pairs=(("max_depth", "gamma", "alpha"),))


class TestPairwiseGridSearch:
    def test_singleton_grid_adopts_after_one_sweep(self):
        db = labeled_database(40, seed=4)
        grid = SearchGrid(
            candidates={"max_depth": [2], "min_child_weight": [1.0],
                        "learning_rate": [0.2], "num_rounds": [3]},
            pairs=(("max_depth", "min_child_weight"),
                   ("learning_rate", "num_rounds")),
        )
        result = pairwise_grid_search(db, grid, seed=0, k=3, start=fast_hp())
        hp = result.hyperparameters
        assert (hp.max_depth, hp.min_child_weight) == (2, 1.0)
        assert (hp.learning_rate, hp.num_rounds) == (0.2, 3)
        assert result.sweeps <= 2  # adopting sweep plus the no-change sweep

    def test_depth_adopted_where_shallow_cannot_fit(self):
        db = conjunction_database()
        grid = SearchGrid(candidates={"max_depth": [2, 4]},
                          pairs=(("max_depth",),), max_sweeps=2)
        start = fast_hp(max_depth=2, num_rounds=12)
        shallow = cross_validate(db, start, k=3, seed=5)
        deep = cross_validate(db, fast_hp(max_depth=4, num_rounds=12), k=3, seed=5)
        assert deep < shallow  # the conjunction needs three interacting splits
        result = pairwise_grid_search(db, grid, seed=5, k=3, start=start)
        assert result.hyperparameters.max_depth == 4
        assert result.cv_score == deep

    def test_fixed_point_terminates_before_max_sweeps(self):
        db = labeled_database(40, seed=6)
        grid = SearchGrid(candidates={"max_depth": [2, 3]},
                          pairs=(("max_depth",),), max_sweeps=5)
        result = pairwise_grid_search(db, grid, seed=1, k=3, start=fast_hp())
        assert result.sweeps < 5

    def test_never_regresses_when_start_in_grid(self):
        db = labeled_database(50, seed=7)
        start = fast_hp(max_depth=2, num_rounds=4)
        grid = SearchGrid(
            candidates={"max_depth": [2, 3], "lambda_": [0.1, 1.0]},
            pairs=(("max_depth", "lambda_"),),
        )
        start_score = cross_validate(db, start, k=3, seed=2)
        result = pairwise_grid_search(db, grid, seed=2, k=3, start=start)
        assert result.cv_score <= start_score

    def test_adopted_values_from_candidate_lists(self):
        db = labeled_database(40, seed=8)
        grid = SearchGrid(
            candidates={"max_depth": [2, 4], "gamma": [0.0, 0.2]},
            pairs=(("max_depth", "gamma"),),
        )
        result = pairwise_grid_search(db, grid, seed=3, k=3, start=fast_hp())
        assert result.hyperparameters.max_depth in (2, 4)
        assert result.hyperparameters.gamma in (0.0, 0.2)

    def test_deterministic(self):
        db = labeled_database(40, seed=9)
        grid = SearchGrid(candidates={"max_depth": [2, 3]},
                          pairs=(("max_depth",),))
        a = pairwise_grid_search(db, grid, seed=4, k=3, start=fast_hp())
        b = pairwise_grid_search(db, grid, seed=4, k=3, start=fast_hp())
        assert a == b

    def test_trace_records_pairs_and_scores(self):
        db = labeled_database(30, seed=10)
        grid = SearchGrid(candidates={"max_depth": [2, 3]},
                          pairs=(("max_depth",),), max_sweeps=1)
        entries = []
        pairwise_grid_search(db, grid, seed=0, k=3, start=fast_hp(),
                             trace_sink=entries.append)
        events = [e["event"] for e in entries]
        assert events[0] == "start" and events[-1] == "done"
        pair_events = [e for e in entries if e["event"] == "pair"]
        assert pair_events[0]["pair"] == ["max_depth"]
        assert len(pair_events[0]["scores"]) == 2
        assert pair_events[0]["adopted"][0] in (2, 3)
