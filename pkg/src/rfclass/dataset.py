"""Reservoir databases: CSV ingestion, provenance tags, merging, de-duplication.

A Database is an immutable, ordered collection of ReservoirRecord rows that
share one FeatureSchema. Records keep a per-row source tag so merged
databases remain auditable.
"""

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import IngestError

RF_COLUMN = "RF"

# Cell tokens treated as missing (case-insensitive, after stripping).
MISSING_TOKENS = frozenset({"", "na", "n/a", "null"})


class DatabaseTag(Enum):
    TORIS = "TORIS"
    COMMERCIAL = "Commercial"
    ATLAS = "Atlas"
    TC = "TC"
    TA = "TA"
    CA = "CA"
    TCA = "TCA"

    @property
    def is_source(self) -> bool:
        return self in _SOURCE_PRIORITY

    @property
    def source_tags(self) -> tuple["DatabaseTag", ...]:
        """The source tags a merged tag is built from (a source maps to itself)."""
        return _MERGE_SOURCES.get(self, (self,))


_SOURCE_PRIORITY = {
    DatabaseTag.TORIS: 0,
    DatabaseTag.COMMERCIAL: 1,
    DatabaseTag.ATLAS: 2,
}

_MERGE_SOURCES = {
    DatabaseTag.TC: (DatabaseTag.TORIS, DatabaseTag.COMMERCIAL),
    DatabaseTag.TA: (DatabaseTag.TORIS, DatabaseTag.ATLAS),
    DatabaseTag.CA: (DatabaseTag.COMMERCIAL, DatabaseTag.ATLAS),
    DatabaseTag.TCA: (DatabaseTag.TORIS, DatabaseTag.COMMERCIAL, DatabaseTag.ATLAS),
}


def parse_tag(text: str) -> DatabaseTag:
    for tag in DatabaseTag:
        if text.strip().lower() in (tag.value.lower(), tag.name.lower()):
            return tag
    raise ValueError(f"unknown database tag: {text!r}")


@dataclass(frozen=True)
class Feature:
    """One input feature with its unit and admissible value range."""

    name: str
    unit: str
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"feature {self.name}: lower bound must be below upper bound")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    target: str = RF_COLUMN

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in schema")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def subset(self, keep: list[str]) -> "FeatureSchema":
        """Schema restricted to `keep`, preserving the original feature order."""
        kept = tuple(f for f in self.features if f.name in set(keep))
        return FeatureSchema(features=kept, target=self.target)


#: The eleven input features every source database reports, with the
#: published admissible ranges (Bo, GOR and reserves carry both bounds;
#: the rest only a physical non-negativity floor where one applies).
def canonical_schema(range_overrides: dict[str, tuple[float, float]] | None = None) -> FeatureSchema:
    base = [
        Feature("api_gravity", "degAPI"),
        Feature("bo", "RB/STB", 1.0, 3.0),
        Feature("gor", "MSCF/RB", 0.0, 60.0),
        Feature("water_saturation", "fraction", 0.0),
        Feature("temperature", "degF"),
        Feature("pressure", "psi", 0.0),
        Feature("thickness", "ft", 0.0),
        Feature("reserves", "STB", 0.0, 5.0e11),
        Feature("permeability", "mD", 0.0),
        Feature("porosity", "fraction", 0.0),
        Feature("area", "acre", 0.0),
    ]
    overrides = range_overrides or {}
    unknown = set(overrides) - {f.name for f in base}
    if unknown:
        raise ValueError(f"range override for unknown feature(s): {sorted(unknown)}")
    features = tuple(
        Feature(f.name, f.unit, *overrides[f.name]) if f.name in overrides else f
        for f in base
    )
    return FeatureSchema(features=features)


def normalize_key(text: str) -> str:
    """Reservoir identity used for de-duplication: lowercase, whitespace collapsed."""
    return " ".join(text.split()).lower()


@dataclass(frozen=True)
class ReservoirRecord:
    key: str
    values: tuple[float | None, ...]
    rf: float | None
    source: DatabaseTag

    def present_count(self) -> int:
        return sum(v is not None for v in self.values)

    def missing_fraction(self) -> float:
        return 1.0 - self.present_count() / len(self.values)


@dataclass(frozen=True)
class Database:
    tag: DatabaseTag
    schema: FeatureSchema
    records: tuple[ReservoirRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def with_records(self, records) -> "Database":
        return Database(tag=self.tag, schema=self.schema, records=tuple(records))

    def feature_matrix(self) -> np.ndarray:
        """(n_records, n_features) float matrix with NaN marking missing cells."""
        n, d = len(self.records), len(self.schema.features)
        out = np.full((n, d), np.nan)
        for i, rec in enumerate(self.records):
            for j, v in enumerate(rec.values):
                if v is not None:
                    out[i, j] = v
        return out

    def rf_values(self) -> np.ndarray:
        return np.array([math.nan if r.rf is None else r.rf for r in self.records])

    def missing_fraction_by_feature(self) -> np.ndarray:
        if not self.records:
            return np.zeros(len(self.schema.features))
        return np.isnan(self.feature_matrix()).mean(axis=0)

    def is_complete(self) -> bool:
        return all(
            r.rf is not None and r.present_count() == len(r.values) for r in self.records
        )


def _parse_cell(token: str, line: int, column: str, missing_tokens: frozenset) -> float | None:
    stripped = token.strip()
    if stripped.lower() in missing_tokens:
        return None
    try:
        value = float(stripped)
    except ValueError:
        raise IngestError(f"line {line}, column {column!r}: cannot parse {token!r} as a number") from None
    if not math.isfinite(value):
        raise IngestError(f"line {line}, column {column!r}: non-finite value {token!r}")
    return value


def parse_database(
    csv_text: str,
    tag: DatabaseTag,
    schema: FeatureSchema,
    *,
    key_column: str = "key",
    rf_column: str = RF_COLUMN,
    column_map: dict[str, str] | None = None,
    missing_tokens: frozenset = MISSING_TOKENS,
) -> Database:
    """Parse one CSV into a Database.

    Empty cells and missing tokens become missing values; rows without an RF
    value are dropped. A `source` column, when present, restores per-record
    provenance (required when `tag` is a merged tag); otherwise every record
    is tagged with `tag` itself. Malformed rows raise IngestError naming the
    line and column.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty CSV: no header row") from None
    header = [h.strip() for h in header]
    positions = {name: i for i, name in enumerate(header)}

    column_map = column_map or {}
    feature_cols = [column_map.get(f.name, f.name) for f in schema.features]
    needed = [key_column, rf_column, *feature_cols]
    missing_cols = [c for c in needed if c not in positions]
    if missing_cols:
        raise IngestError(f"missing column(s) in header: {missing_cols}")
    source_pos = positions.get("source")
    if source_pos is None and not tag.is_source:
        raise IngestError(f"merged tag {tag.value} requires a 'source' column")

    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise IngestError(f"line {line}: expected {len(header)} fields, found {len(row)}")
        rf = _parse_cell(row[positions[rf_column]], line, rf_column, missing_tokens)
        if rf is None:
            continue  # no target value: the row cannot be used at all
        if rf < 0:
            raise IngestError(f"line {line}, column {rf_column!r}: negative recovery factor {rf}")
        key = normalize_key(row[positions[key_column]])
        if not key:
            raise IngestError(f"line {line}, column {key_column!r}: empty key")
        if source_pos is not None:
            source = parse_tag(row[source_pos])
            if not source.is_source:
                raise IngestError(f"line {line}, column 'source': {row[source_pos]!r} is not a source tag")
        else:
            source = tag
        values = tuple(
            _parse_cell(row[positions[col]], line, col, missing_tokens)
            for col in feature_cols
        )
        records.append(ReservoirRecord(key=key, values=values, rf=rf, source=source))
    return Database(tag=tag, schema=schema, records=tuple(records))


def format_real(x: float) -> str:
    """Decimal rendering at 17 significant digits (round-trips float64 exactly)."""
    return format(float(x), ".17g")


def serialize_database(db: Database) -> str:
    """Canonical CSV form: key, source, features in schema order, RF."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "source", *db.schema.names, RF_COLUMN])
    for rec in db.records:
        cells = ["" if v is None else format_real(v) for v in rec.values]
        rf_cell = "" if rec.rf is None else format_real(rec.rf)
        writer.writerow([rec.key, rec.source.value, *cells, rf_cell])
    return buf.getvalue()


def merge(sources: list[Database], combo: DatabaseTag) -> Database:
    """Concatenate source databases under a merged tag.

    The source tags must match the combo's required set exactly (no
    duplicates, no extras). Records keep their own source tags.
    """
    if combo.is_source:
        raise ValueError(f"{combo.value} is a source tag, not a merge combination")
    given = [db.tag for db in sources]
    required = set(combo.source_tags)
    if len(set(given)) != len(given):
        raise ValueError(f"duplicate source tags: {[t.value for t in given]}")
    if set(given) != required:
        raise ValueError(
            f"combo {combo.value} requires sources {sorted(t.value for t in required)}, "
            f"got {sorted(t.value for t in given)}"
        )
    schema = sources[0].schema
    for db in sources[1:]:
        if db.schema != schema:
            raise ValueError("cannot merge databases with different schemas")
    records = tuple(rec for db in sources for rec in db.records)
    return Database(tag=combo, schema=schema, records=records)


def deduplicate(db: Database) -> Database:
    """Keep one record per key: the most complete one.

    Ties break by source priority (TORIS, then Commercial, then Atlas), then
    by input order. Records with unique keys always survive.
    """
    groups: dict[str, list[tuple[int, ReservoirRecord]]] = {}
    for idx, rec in enumerate(db.records):
        groups.setdefault(rec.key, []).append((idx, rec))

    survivors = []
    for members in groups.values():
        best = min(
            members,
            key=lambda pair: (-pair[1].present_count(), _SOURCE_PRIORITY[pair[1].source], pair[0]),
        )
        survivors.append(best)
    survivors.sort(key=lambda pair: pair[0])
    return db.with_records(rec for _, rec in survivors)
