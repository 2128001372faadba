"""Pairwise hyperparameter optimization under stratified k-fold CV on mlogloss.

The search walks an ordered schedule of hyperparameter pairs. For each pair
it scores the Cartesian product of the pair's candidates (everything else
held at the current values) and adopts the minimizer, earliest candidate on
ties. Full sweeps repeat until a sweep changes nothing or the sweep budget
runs out.
"""

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

from .booster import Hyperparameters, mlogloss, predict_proba, train
from .dataset import Database
from .preprocess import SplitSpec, stratified_kfold, to_matrix

TUNABLE = (
    "max_depth", "min_child_weight", "learning_rate", "subsample",
    "colsample_bytree", "colsample_bylevel", "alpha", "lambda_",
    "gamma", "max_delta_step", "num_rounds",
)


@dataclass(frozen=True)
class SearchGrid:
    candidates: dict[str, list] = field(default_factory=dict)
    pairs: tuple[tuple[str, ...], ...] = ()
    max_sweeps: int = 3

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        paired = {name for pair in self.pairs for name in pair}
        for name, values in self.candidates.items():
            if name not in TUNABLE:
                raise ValueError(f"{name!r} is not a tunable hyperparameter")
            if not values:
                raise ValueError(f"empty candidate list for {name!r}")
            if name not in paired:
                raise ValueError(f"{name!r} has candidates but appears in no pair")
        for pair in self.pairs:
            if not 1 <= len(pair) <= 2:
                raise ValueError(f"pairs must hold one or two names, got {pair}")
            for name in pair:
                if name not in self.candidates:
                    raise ValueError(f"pair references {name!r} without candidates")


def default_grid() -> SearchGrid:
    """Candidate lists bracketing the tuned per-combination settings.

    Every list contains the corresponding Hyperparameters() default, so a
    search started from the defaults can never end worse than them.
    """
    return SearchGrid(
        candidates={
            "max_depth": [2, 3, 4, 5, 6],
            "min_child_weight": [1.0, 2.0, 3.0, 6.0],
            "learning_rate": [0.03, 0.05, 0.1, 0.2],
            "num_rounds": [50, 100, 200, 400],
            "subsample": [0.8, 0.9, 1.0],
            "colsample_bytree": [0.9, 1.0],
            "alpha": [0.2, 0.3, 0.8, 0.9],
            "lambda_": [0.01, 0.03, 0.04, 0.06],
            "gamma": [0.0, 0.01, 0.1],
            "max_delta_step": [0.0, 0.1, 0.2],
            "colsample_bylevel": [0.9, 1.0],
        },
        pairs=(
            ("max_depth", "min_child_weight"),
            ("learning_rate", "num_rounds"),
            ("subsample", "colsample_bytree"),
            ("alpha", "lambda_"),
            ("gamma", "max_delta_step"),
            ("colsample_bylevel",),
        ),
    )


def cross_validate(train_db: Database, hp: Hyperparameters, k: int, seed: int) -> float:
    """Mean validation mlogloss over k stratified folds."""
    X, y = to_matrix(train_db)
    folds = stratified_kfold(train_db, SplitSpec(k_folds=k, seed=seed))
    losses = []
    for fit_idx, val_idx in folds:
        if val_idx.size == 0:
            continue
        model = train(X[fit_idx], y[fit_idx], hp, seed,
                      feature_names=train_db.schema.names)
        losses.append(mlogloss(predict_proba(model, X[val_idx]), y[val_idx]))
    return float(sum(losses) / len(losses))


@dataclass(frozen=True)
class TuningResult:
    hyperparameters: Hyperparameters
    cv_score: float
    sweeps: int
    evaluations: int


def pairwise_grid_search(
    train_db: Database,
    grid: SearchGrid,
    seed: int,
    *,
    k: int = 10,
    start: Hyperparameters | None = None,
    trace_sink: Callable[[dict], None] | None = None,
) -> TuningResult:
    """Coordinate-descent over hyperparameter pairs, minimizing CV mlogloss.

    Deterministic in (train_db, grid, seed): folds are rebuilt from the same
    seed for every candidate, so scores are comparable across the search.
    Every adopted value comes from its candidate list.
    """
    hp = start if start is not None else Hyperparameters()
    evaluations = 0
    current_score = cross_validate(train_db, hp, k, seed)
    if trace_sink:
        trace_sink({"event": "start", "score": current_score, "hyperparameters": hp.to_dict()})

    sweeps_run = 0
    for sweep in range(grid.max_sweeps):
        sweeps_run = sweep + 1
        changed = False
        for pair in grid.pairs:
            lists = [grid.candidates[name] for name in pair]
            best_combo = None
            best_score = None
            scores = []
            for combo in itertools.product(*lists):
                candidate = replace(hp, **dict(zip(pair, combo)))
                score = cross_validate(train_db, candidate, k, seed)
                evaluations += 1
                scores.append({"values": list(combo), "score": score})
                if best_score is None or score < best_score:
                    best_score = score
                    best_combo = combo
            previous = tuple(getattr(hp, name) for name in pair)
            hp = replace(hp, **dict(zip(pair, best_combo)))
            current_score = best_score
            if tuple(getattr(hp, name) for name in pair) != previous:
                changed = True
            if trace_sink:
                trace_sink({
                    "event": "pair",
                    "sweep": sweep,
                    "pair": list(pair),
                    "scores": scores,
                    "adopted": list(best_combo),
                    "score": best_score,
                })
        if not changed:
            break

    if trace_sink:
        trace_sink({
            "event": "done",
            "score": current_score,
            "sweeps": sweeps_run,
            "evaluations": evaluations,
            "hyperparameters": hp.to_dict(),
        })
    return TuningResult(
        hyperparameters=hp,
        cv_score=current_score,
        sweeps=sweeps_run,
        evaluations=evaluations,
    )
