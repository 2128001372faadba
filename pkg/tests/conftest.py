import numpy as np
import pytest

from rfclass.booster import _TreeBuilder
from rfclass.dataset import (Database, DatabaseTag, ReservoirRecord,
                             canonical_schema)

N_FEATURES = 11


def make_record(key, values, rf, source=DatabaseTag.TORIS):
    """Record padded/truncated to the canonical 11 features."""
    vals = list(values) + [None] * (N_FEATURES - len(values))
    return ReservoirRecord(key=key, values=tuple(vals[:N_FEATURES]), rf=rf, source=source)


def make_database(records, tag=DatabaseTag.TORIS):
    return Database(tag=tag, schema=canonical_schema(), records=tuple(records))


def complete_database(n, seed=0, tag=DatabaseTag.TORIS, n_classes_span=1.0):
    """Fully populated database with uniform-ish RF spread across classes."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        values = tuple(float(v) for v in rng.random(N_FEATURES))
        rf = float(rng.random() * n_classes_span)
        records.append(ReservoirRecord(f"{tag.value.lower()}-{i:05d}", values, rf, tag))
    return make_database(records, tag)


def random_tree(rng, n_features, max_depth, min_cover=0.5):
    """Random tree with positive covers; children covers sum to the parent's."""
    builder = _TreeBuilder()

    def grow(depth, cover):
        if depth >= max_depth or rng.random() < 0.25:
            return builder.add_leaf(rng.normal(), cover)
        feature = int(rng.integers(n_features))
        threshold = float(rng.random())
        node = builder.add_internal(feature, threshold, gain=float(rng.random()), cover=cover)
        frac = 0.2 + 0.6 * rng.random()
        left = grow(depth + 1, cover * frac)
        right = grow(depth + 1, cover * (1 - frac))
        builder.attach(node, left, right)
        return node

    grow(0, float(min_cover + rng.random() * 50))
    return builder.build()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
