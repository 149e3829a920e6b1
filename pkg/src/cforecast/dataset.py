"""Weekly sales panel: ingestion, encoding, date splitting, back-padding.

One dataset holds exactly one product category; rows are keyed by
(product, week) with three lag columns carrying the same product's sales in
the three preceding weeks.  Back-padding writes a week's prediction into the
lag cells of the following weeks' rows so recursive forecasting can proceed.
"""

from __future__ import annotations

import copy
import csv
import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConfigError,
    ConstraintDataError,
    IntegrityError,
    ParseError,
    UnknownCategoryError,
)
from .gbdt import FeatureMatrix

SALES_HEADER = (
    "category",
    "date",
    "product",
    "promotion",
    "seasonality",
    "sale_t3",
    "sale_t2",
    "sale_t1",
    "sale_t",
)
TOTALS_HEADER = ("category", "date", "total")
ACTUALS_HEADER = ("category", "date", "product", "actual")

# Lag depth is fixed at three weeks so back-padding stays verifiable.
LAG_DEPTH = 3
WEEK = dt.timedelta(days=7)

# Tolerance for totals-vs-sum and lag-vs-target agreement checks.
VALIDATION_TOL = 1e-6

ENCODED_COLUMNS = (
    "product",
    "promotion",
    "seasonality",
    "lag3",
    "lag2",
    "lag1",
    "week_of_year",
    "weeks_since_first",
)
CATEGORICAL_FIELDS = ("product", "promotion", "seasonality")


@dataclass
class SalesRecord:
    """One (product, week) row of the panel; None marks a missing cell."""

    category: str
    week: dt.date
    product: str
    promotion: str
    seasonality: str
    lag3: float | None
    lag2: float | None
    lag1: float | None
    target: float | None
    line: int | None = field(default=None, compare=False)

    _LAG_FIELDS = {1: "lag1", 2: "lag2", 3: "lag3"}

    def lag(self, k: int) -> float | None:
        return getattr(self, self._LAG_FIELDS[k])

    def set_lag(self, k: int, value: float) -> None:
        setattr(self, self._LAG_FIELDS[k], float(value))

    def lags_complete(self) -> bool:
        return None not in (self.lag3, self.lag2, self.lag1)


class PanelDataset:
    """Ordered sales records with a frozen categorical encoding.

    Before :meth:`split`, records are ordered by (product, week).  After it,
    the first ``m`` records are the train block and the rest the test block,
    each block ordered by (product, week).
    """

    def __init__(self, records: Iterable[SalesRecord]):
        self.records: list[SalesRecord] = sorted(
            records, key=lambda r: (r.category, r.product, r.week)
        )
        self.m: int | None = None
        self.cutoff: dt.date | None = None
        self._validate_structure()
        self._reindex()
        self.encoding: dict[str, dict[str, int]] = {
            f: {} for f in CATEGORICAL_FIELDS
        }
        for record in self.records:
            for f in CATEGORICAL_FIELDS:
                token = getattr(record, f)
                self.encoding[f].setdefault(token, len(self.encoding[f]))
        self._first_week = {}
        for record in self.records:
            prev = self._first_week.get(record.product)
            if prev is None or record.week < prev:
                self._first_week[record.product] = record.week

    def _validate_structure(self) -> None:
        categories = {r.category for r in self.records}
        if len(categories) > 1:
            raise IntegrityError(
                f"dataset must hold one category, found {sorted(categories)}"
            )
        seen: dict[tuple, int | None] = {}
        weekday = None
        for r in self.records:
            key = (r.category, r.product, r.week)
            if key in seen:
                raise IntegrityError(
                    f"duplicate row for {key} (lines {seen[key]} and {r.line})"
                )
            seen[key] = r.line
            if weekday is None:
                weekday = r.week.weekday()
            elif r.week.weekday() != weekday:
                raise IntegrityError(
                    f"week {r.week} (line {r.line}) breaks the weekly grid "
                    f"(expected weekday {weekday})"
                )

    def _reindex(self) -> None:
        self._index = {(r.product, r.week): i for i, r in enumerate(self.records)}

    @property
    def category(self) -> str | None:
        return self.records[0].category if self.records else None

    def __len__(self) -> int:
        return len(self.records)

    def weeks(self) -> list[dt.date]:
        return sorted({r.week for r in self.records})

    def products(self) -> list[str]:
        return sorted({r.product for r in self.records})

    def record_at(self, product: str, week: dt.date) -> SalesRecord | None:
        pos = self._index.get((product, week))
        return None if pos is None else self.records[pos]

    def is_test(self, product: str, week: dt.date) -> bool:
        pos = self._index.get((product, week))
        if pos is None or self.m is None:
            return False
        return pos >= self.m

    def train_records(self) -> list[SalesRecord]:
        self._require_split()
        return self.records[: self.m]

    def test_records(self) -> list[SalesRecord]:
        self._require_split()
        return self.records[self.m :]

    def test_weeks(self) -> list[dt.date]:
        return sorted({r.week for r in self.test_records()})

    def _require_split(self) -> None:
        if self.m is None:
            raise ConfigError("dataset has not been split yet")

    def split(self, cutoff: dt.date) -> None:
        """Partition by week: the week containing ``cutoff`` starts the test block."""
        if not self.records:
            raise ConfigError("cannot split an empty dataset")
        weekday = self.records[0].week.weekday()
        aligned = cutoff - dt.timedelta(days=(cutoff.weekday() - weekday) % 7)
        train = [r for r in self.records if r.week < aligned]
        test = [r for r in self.records if r.week >= aligned]
        if not train:
            raise ConfigError(f"no rows before cutoff {cutoff}")
        if not test:
            raise ConfigError(f"no rows on or after cutoff {cutoff}")
        for r in train:
            if r.target is None or not r.lags_complete():
                raise IntegrityError(
                    f"train row ({r.product}, {r.week}) has missing lags or target"
                )
        key = lambda r: (r.product, r.week)
        self.records = sorted(train, key=key) + sorted(test, key=key)
        self.m = len(train)
        self.cutoff = aligned
        self._reindex()

    def back_pad(self, product: str, week: dt.date, value: float) -> None:
        """Write a predicted value into the lag cells of the next three weeks.

        Rows that do not exist are skipped; targeting a train row is refused.
        """
        for k in range(1, LAG_DEPTH + 1):
            pos = self._index.get((product, week + k * WEEK))
            if pos is None:
                continue
            if self.m is not None and pos < self.m:
                raise IntegrityError(
                    f"back-padding would overwrite the actual lag{k} of train "
                    f"row ({product}, {week + k * WEEK})"
                )
            self.records[pos].set_lag(k, value)

    def set_test_target(self, product: str, week: dt.date, value: float) -> None:
        """Append a pseudo-label to a test row's target column."""
        self._require_split()
        pos = self._index.get((product, week))
        if pos is None:
            raise IntegrityError(f"no row for ({product}, {week})")
        if pos < self.m:
            raise IntegrityError(
                f"refusing to overwrite the actual target of train row "
                f"({product}, {week})"
            )
        self.records[pos].target = float(value)

    def drop_products(self, products: Iterable[str]) -> None:
        drop = set(products)
        if not drop:
            return
        kept = [r for r in self.records if r.product not in drop]
        if self.m is not None:
            self.m = sum(1 for r in self.records[: self.m] if r.product not in drop)
        self.records = kept
        self._reindex()

    def truncate_test_weeks(self, horizon: int) -> None:
        """Keep only the first ``horizon`` test weeks."""
        self._require_split()
        keep = set(self.test_weeks()[:horizon])
        self.records = self.records[: self.m] + [
            r for r in self.test_records() if r.week in keep
        ]
        self._reindex()

    def clone(self) -> "PanelDataset":
        return copy.deepcopy(self)

    # -- encoding ----------------------------------------------------------

    def code(self, fieldname: str, token: str) -> int:
        try:
            return self.encoding[fieldname][token]
        except KeyError:
            raise UnknownCategoryError(
                f"token {token!r} not in the frozen {fieldname} dictionary"
            ) from None

    def decode(self, fieldname: str, code: int) -> str:
        for token, c in self.encoding[fieldname].items():
            if c == code:
                return token
        raise UnknownCategoryError(f"no {fieldname} token with code {code}")

    def encode_record(self, record: SalesRecord) -> list[float | None]:
        first = self._first_week.get(record.product)
        if first is None:
            raise UnknownCategoryError(
                f"product {record.product!r} not in the frozen dictionary"
            )
        return [
            float(self.code("product", record.product)),
            float(self.code("promotion", record.promotion)),
            float(self.code("seasonality", record.seasonality)),
            record.lag3,
            record.lag2,
            record.lag1,
            float(record.week.isocalendar()[1]),
            float((record.week - first).days // 7),
        ]


@dataclass(frozen=True)
class CategoryTotals:
    """Known weekly category totals S, keyed by (category, week)."""

    totals: Mapping[tuple[str, dt.date], float]

    def get(self, category: str, week: dt.date) -> float:
        try:
            return self.totals[(category, week)]
        except KeyError:
            raise ConstraintDataError(
                f"no category total for ({category!r}, {week})"
            ) from None

    def has(self, category: str, week: dt.date) -> bool:
        return (category, week) in self.totals


# -- CSV ingestion ----------------------------------------------------------


def _parse_date(text: str, line: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ParseError(f"line {line}: bad date {text!r}") from None


def _parse_units(text: str, line: int, column: str) -> float | None:
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"line {line}: bad number {text!r} in {column}") from None
    if not value >= 0.0:
        raise ParseError(f"line {line}: {column} must be non-negative, got {text}")
    return value


def _check_header(got, want, path) -> None:
    if got is None or tuple(h.strip() for h in got) != want:
        raise ParseError(f"{path}: expected header {','.join(want)}")


def parse_sales_csv(path, collect_errors: bool = False):
    """Parse the sales CSV; returns (records, error strings).

    With ``collect_errors`` malformed rows are reported instead of raising, so
    a validator can list every problem in one pass.
    """
    records: list[SalesRecord] = []
    errors: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), SALES_HEADER, path)
        for line, row in enumerate(reader, start=2):
            try:
                if len(row) != len(SALES_HEADER):
                    raise ParseError(
                        f"line {line}: expected {len(SALES_HEADER)} fields, "
                        f"got {len(row)}"
                    )
                records.append(
                    SalesRecord(
                        category=row[0],
                        week=_parse_date(row[1], line),
                        product=row[2],
                        promotion=row[3],
                        seasonality=row[4],
                        lag3=_parse_units(row[5], line, "sale_t3"),
                        lag2=_parse_units(row[6], line, "sale_t2"),
                        lag1=_parse_units(row[7], line, "sale_t1"),
                        target=_parse_units(row[8], line, "sale_t"),
                        line=line,
                    )
                )
            except ParseError as exc:
                if not collect_errors:
                    raise
                errors.append(str(exc))
    return records, errors


def load_totals_csv(path) -> dict[tuple[str, dt.date], float]:
    totals: dict[tuple[str, dt.date], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), TOTALS_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"line {line}: expected 3 fields, got {len(row)}")
            key = (row[0], _parse_date(row[1], line))
            value = _parse_units(row[2], line, "total")
            if value is None:
                raise ParseError(f"line {line}: total may not be empty")
            if key in totals:
                raise IntegrityError(f"line {line}: duplicate total for {key}")
            totals[key] = value
    return totals


def load_actuals_csv(path) -> dict[tuple[str, str, dt.date], float]:
    """Ground-truth sales keyed by (category, product, week)."""
    actuals: dict[tuple[str, str, dt.date], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), ACTUALS_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(f"line {line}: expected 4 fields, got {len(row)}")
            key = (row[0], row[2], _parse_date(row[1], line))
            value = _parse_units(row[3], line, "actual")
            if value is None:
                raise ParseError(f"line {line}: actual may not be empty")
            if key in actuals:
                raise IntegrityError(f"line {line}: duplicate actual for {key}")
            actuals[key] = value
    return actuals


def check_lag_consistency(records: Sequence[SalesRecord]) -> list[str]:
    """For consecutive weeks of a product, lag_k(w) must equal target(w-k)."""
    by_key = {(r.product, r.week): r for r in records}
    violations = []
    for r in records:
        for k in range(1, LAG_DEPTH + 1):
            prev = by_key.get((r.product, r.week - k * WEEK))
            if prev is None or prev.target is None or r.lag(k) is None:
                continue
            if abs(r.lag(k) - prev.target) > VALIDATION_TOL:
                violations.append(
                    f"line {r.line}: lag{k} of ({r.product}, {r.week}) is "
                    f"{r.lag(k):g} but sale_t of {prev.week} is {prev.target:g}"
                )
    return violations


def load_csv(path) -> PanelDataset:
    """Parse, sort, and validate the sales CSV into a dataset."""
    records, _ = parse_sales_csv(path)
    dataset = PanelDataset(records)
    violations = check_lag_consistency(dataset.records)
    if violations:
        shown = "; ".join(violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        raise IntegrityError(f"lag consistency violated: {shown}{more}")
    return dataset


# -- spec-level operations ----------------------------------------------------


def encode_features(
    dataset: PanelDataset, records: Sequence[SalesRecord] | None = None
) -> FeatureMatrix:
    """Encode records into the fixed 8-column feature layout."""
    rows = dataset.records if records is None else records
    return FeatureMatrix.from_rows([dataset.encode_record(r) for r in rows])


def split_train_test(
    dataset: PanelDataset, cutoff: dt.date
) -> tuple[list[SalesRecord], list[SalesRecord]]:
    dataset.split(cutoff)
    return dataset.train_records(), dataset.test_records()


def back_pad(
    dataset: PanelDataset, product: str, week: dt.date, value: float
) -> None:
    dataset.back_pad(product, week, value)


def category_weekly_actuals(
    dataset: PanelDataset,
    external: Mapping[tuple[str, dt.date], float] | None = None,
) -> CategoryTotals:
    """Historical totals by summation, future totals from the external map.

    External values take precedence; on historical weeks they must agree with
    the summed targets within 1e-6.
    """
    dataset._require_split()
    external = external or {}
    category = dataset.category
    totals: dict[tuple[str, dt.date], float] = {}
    by_week: dict[dt.date, float] = {}
    for r in dataset.train_records():
        by_week[r.week] = by_week.get(r.week, 0.0) + r.target
    for week in dataset.weeks():
        key = (category, week)
        if week < dataset.cutoff:
            computed = by_week[week]
            if key in external and abs(external[key] - computed) > VALIDATION_TOL:
                raise ConstraintDataError(
                    f"total for {key} is {external[key]:g} but the week's "
                    f"sales sum to {computed:g}"
                )
            totals[key] = external.get(key, computed)
        else:
            if key not in external:
                raise ConstraintDataError(f"no category total for {key}")
            totals[key] = external[key]
    return CategoryTotals(totals=totals)
