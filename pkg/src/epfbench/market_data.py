"""Hourly market data: ingestion, validation and leak-free windowing.

A dataset is a contiguous run of calendar days, each holding exactly 24
hourly prices and 24 hourly values for each of two exogenous day-ahead
forecast series (e.g. system load and wind generation). Short or
duplicated days (DST transitions) are rejected unless an explicit repair
is requested.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import (
    DuplicateHour,
    GapInCalendar,
    IngestError,
    MissingHour,
    NonFinite,
    OutOfRange,
)

HOURS_PER_DAY = 24
CSV_HEADER = ("timestamp", "price")  # first two columns are fixed


@dataclass
class DayRecord:
    """One calendar day: 24 prices and a 2x24 block of exogenous values."""

    date: dt.date
    prices: np.ndarray  # (24,)
    exog: np.ndarray  # (2, 24)


class MarketDataset:
    """Ordered, gap-free mapping of calendar dates to day records.

    Instances are treated as immutable after construction and may be
    shared freely across workers; windows share the underlying day
    records rather than copying them.
    """

    def __init__(self, records: dict[dt.date, DayRecord],
                 series_names: tuple[str, str, str] = ("price", "exog1", "exog2"),
                 repair_count: int = 0):
        if not records:
            raise IngestError("dataset contains no complete days")
        dates = list(records)
        for prev, cur in zip(dates, dates[1:]):
            if (cur - prev).days != 1:
                raise GapInCalendar(f"{(prev + dt.timedelta(days=1)).isoformat()}T00:00")
        for rec in records.values():
            if rec.prices.shape != (HOURS_PER_DAY,) or rec.exog.shape != (2, HOURS_PER_DAY):
                raise IngestError(f"malformed day record for {rec.date}")
        self.records = records
        self.series_names = series_names
        self.repair_count = repair_count
        self._dates = dates

    @property
    def start_date(self) -> dt.date:
        return self._dates[0]

    @property
    def end_date(self) -> dt.date:
        return self._dates[-1]

    @property
    def n_days(self) -> int:
        return len(self._dates)

    def dates(self) -> list[dt.date]:
        return list(self._dates)

    def __contains__(self, day: dt.date) -> bool:
        return day in self.records

    def __len__(self) -> int:
        return len(self._dates)

    def day(self, day: dt.date) -> DayRecord:
        try:
            return self.records[day]
        except KeyError:
            raise OutOfRange(f"{day.isoformat()} is not in the dataset") from None

    def to_csv_text(self) -> str:
        """Serialize back to the canonical CSV format (rows sorted by time)."""
        _, exog1, exog2 = self.series_names
        lines = [f"timestamp,price,{exog1},{exog2}"]
        for d in self._dates:
            rec = self.records[d]
            for h in range(HOURS_PER_DAY):
                ts = f"{d.isoformat()}T{h:02d}:00"
                lines.append(f"{ts},{rec.prices[h]!r},{rec.exog[0, h]!r},{rec.exog[1, h]!r}")
        return "\n".join(lines) + "\n"


@dataclass
class SplitSpec:
    """Calibration/test boundary dates; checked by :func:`validate_split`."""

    calibration_end: dt.date
    test_start: dt.date
    test_end: dt.date


def _parse_timestamp(text: str, line_no: int) -> dt.datetime:
    try:
        ts = dt.datetime.fromisoformat(text)
    except ValueError:
        raise IngestError(f"line {line_no}: unparseable timestamp {text!r}") from None
    if ts.minute or ts.second or ts.microsecond:
        raise IngestError(f"line {line_no}: timestamp {text!r} is not on the hour")
    if ts.tzinfo is not None:
        # timestamps are local market time; offsets would smuggle timezone math in
        raise IngestError(f"line {line_no}: timestamp {text!r} carries a UTC offset")
    return ts


def parse_dataset(csv_text: str, dst: str = "strict") -> MarketDataset:
    """Parse `timestamp,price,exog1,exog2` CSV text into a dataset.

    ``dst="strict"`` rejects days with missing or duplicated hours;
    ``dst="repair"`` fills a missing hour by linear interpolation along
    the hourly timeline and averages duplicated hours. Whole missing
    days are a calendar gap in either mode.
    """
    if dst not in ("strict", "repair"):
        raise ValueError(f"unknown dst policy {dst!r}")
    lines = csv_text.splitlines()
    if not lines:
        raise IngestError("empty input")
    header = [c.strip() for c in lines[0].split(",")]
    if len(header) != 4 or tuple(header[:2]) != CSV_HEADER:
        raise IngestError(
            f"bad header {lines[0]!r}: expected 'timestamp,price,<exog1>,<exog2>'")
    series_names = ("price", header[2], header[3])

    # slot -> list of (price, exog1, exog2) rows seen for that hour
    slots: dict[tuple[dt.date, int], list[tuple[float, float, float]]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise IngestError(f"line {line_no}: blank lines are forbidden")
        fields = line.split(",")
        if len(fields) != 4:
            raise IngestError(f"line {line_no}: expected 4 columns, got {len(fields)}")
        ts = _parse_timestamp(fields[0].strip(), line_no)
        values = []
        for col_name, field in zip(series_names, fields[1:]):
            try:
                value = float(field)
            except ValueError:
                raise IngestError(
                    f"line {line_no}: unparseable value {field!r} in column '{col_name}'") from None
            if not np.isfinite(value):
                raise NonFinite(fields[0].strip(), col_name)
            values.append(value)
        slots.setdefault((ts.date(), ts.hour), []).append(tuple(values))

    first = min(d for d, _ in slots)
    last = max(d for d, _ in slots)
    n_days = (last - first).days + 1
    day_list = [first + dt.timedelta(days=i) for i in range(n_days)]

    # grid[series][day, hour]; NaN marks a missing hour (repair mode only)
    grid = np.full((3, n_days, HOURS_PER_DAY), np.nan)
    repairs = 0
    missing: list[tuple[int, int]] = []
    for i, d in enumerate(day_list):
        if not any((d, h) in slots for h in range(HOURS_PER_DAY)):
            raise GapInCalendar(f"{d.isoformat()}T00:00")
        # duplicates are reported before missing hours so a fall-back day
        # names the doubled timestamp, not the hour it displaced
        for h in range(HOURS_PER_DAY):
            rows = slots.get((d, h), [])
            if len(rows) > 1:
                if dst == "strict":
                    raise DuplicateHour(f"{d.isoformat()}T{h:02d}:00")
                grid[:, i, h] = np.mean(rows, axis=0)
                repairs += 1
        for h in range(HOURS_PER_DAY):
            rows = slots.get((d, h), [])
            if not rows:
                if dst == "strict":
                    raise MissingHour(f"{d.isoformat()}T{h:02d}:00")
                missing.append((i, h))
            elif len(rows) == 1:
                grid[:, i, h] = rows[0]

    if missing:
        flat = grid.reshape(3, n_days * HOURS_PER_DAY)
        idx = np.arange(n_days * HOURS_PER_DAY)
        for s in range(3):
            known = np.isfinite(flat[s])
            flat[s, ~known] = np.interp(idx[~known], idx[known], flat[s, known])
        grid = flat.reshape(3, n_days, HOURS_PER_DAY)
        repairs += len(missing)

    records = {
        d: DayRecord(date=d, prices=grid[0, i].copy(), exog=grid[1:, i].copy())
        for i, d in enumerate(day_list)
    }
    return MarketDataset(records, series_names, repair_count=repairs)


def load_dataset(path: str, dst: str = "strict") -> MarketDataset:
    """Read a CSV file and parse it."""
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read(), dst=dst)


def window(dataset: MarketDataset, last_day: dt.date, n_days: int) -> MarketDataset:
    """The ``n_days``-day slice ending at ``last_day`` inclusive.

    The slice shares day records with the parent dataset, so it can
    never contain data dated after ``last_day``.
    """
    if n_days < 1:
        raise OutOfRange(f"window length must be >= 1, got {n_days}")
    if last_day not in dataset:
        raise OutOfRange(f"{last_day.isoformat()} is not in the dataset")
    start = last_day - dt.timedelta(days=n_days - 1)
    if start < dataset.start_date:
        raise OutOfRange(
            f"window of {n_days} days ending {last_day.isoformat()} starts before "
            f"{dataset.start_date.isoformat()}")
    records = {start + dt.timedelta(days=i): dataset.records[start + dt.timedelta(days=i)]
               for i in range(n_days)}
    return MarketDataset(records, dataset.series_names)


def validate_split(dataset: MarketDataset, split: SplitSpec) -> list[str]:
    """Check a split against the dataset; empty list means ok.

    The test window must be the final section of the series and must
    not touch the calibration period.
    """
    violations = []
    if split.test_start > split.test_end:
        violations.append("empty test window")
    if split.calibration_end >= split.test_start:
        violations.append("contamination")
    if split.test_start not in dataset or split.test_end not in dataset:
        violations.append("test window outside dataset")
    elif split.test_end != dataset.end_date:
        violations.append("not final section")
    if split.calibration_end not in dataset:
        violations.append("calibration window outside dataset")
    return violations
