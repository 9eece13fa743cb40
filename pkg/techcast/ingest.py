from __future__ import annotations

import gzip
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import timezone
from email.utils import parsedate_to_datetime
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .utils import progress, timer_func

GZIP_MAGIC = b"\x1f\x8b"
FIRST_MONTH = pd.Period("1986-01", freq="M")
DEFAULT_MIN_LENGTH = 108
SERIES_COLUMNS = ["category", "month", "count"]


class IngestError(RuntimeError):
    """Raised when the metadata snapshot cannot be read."""


class EmptyCorpusError(ValueError):
    """Raised when a snapshot yields no usable e-print record."""


def months_between(start: pd.Period, end: pd.Period) -> int:
    """Number of months from start to end (negative if end is before start)."""
    return (end.year - start.year) * 12 + (end.month - start.month)


def to_month(value) -> pd.Period:
    """Parses a YYYY-MM string (or anything pandas understands) to a monthly period."""
    return pd.Period(value, freq="M")


@dataclass(frozen=True)
class EprintRecord:
    """One e-print reduced to what the monthly counts need."""

    id: str
    primary_category: str
    first_version_month: pd.Period


class MonthlySeries:
    """Zero-filled, contiguous monthly upload counts of one subcategory."""

    def __init__(self, category_id: str, start_month, values):
        """Initializes a new instance of the MonthlySeries class.

        Args:
            category_id (str): The subcategory tag, e.g. 'cs.LG'.
            start_month (pd.Period | str): Month of the first count.
            values (array-like): One non-negative integer count per month.

        Raises:
            ValueError: If the counts are empty, negative or start with a zero.

        """
        values = np.array(values, dtype=np.int64)
        if values.ndim != 1 or len(values) == 0:
            raise ValueError(f"Series {category_id} must hold at least one count")
        if (values < 0).any():
            raise ValueError(f"Series {category_id} holds negative counts")
        if values[0] <= 0:
            raise ValueError(
                f"Series {category_id} must start at its first upload month"
            )
        values.setflags(write=False)
        self.category_id = category_id
        self.start_month = to_month(start_month)
        self.values = values

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MonthlySeries):
            return NotImplemented
        return (
            self.category_id == other.category_id
            and self.start_month == other.start_month
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return (
            f"MonthlySeries({self.category_id!r}, start={self.start_month}, "
            f"n={len(self)})"
        )

    @property
    def end_month(self) -> pd.Period:
        """Month of the last count."""
        return self.start_month + (len(self) - 1)

    @property
    def months(self) -> pd.PeriodIndex:
        return pd.period_range(self.start_month, periods=len(self), freq="M")

    def to_frame(self) -> pd.DataFrame:
        """The series in the canonical long format (category, month, count)."""
        return pd.DataFrame(
            {
                "category": self.category_id,
                "month": self.months.strftime("%Y-%m"),
                "count": self.values,
            }
        )


@dataclass
class CorpusSummary:
    """Bookkeeping of one ingestion run.

    n_records_read always equals the records assigned to a kept series plus
    n_records_skipped, and the skipped records split into malformed, trimmed
    (month at or after the snapshot end) and those of dropped categories.

    """

    n_records_read: int
    n_records_skipped: int
    categories: Dict[str, int]
    snapshot_end_month: str
    n_records_malformed: int = 0
    n_records_trimmed: int = 0
    n_records_in_dropped: int = 0
    dropped_categories: Dict[str, int] = field(default_factory=dict)

    @property
    def n_records_assigned(self) -> int:
        return self.n_records_read - self.n_records_skipped

    def to_dict(self) -> dict:
        return {
            "n_records_read": self.n_records_read,
            "n_records_skipped": self.n_records_skipped,
            "n_records_malformed": self.n_records_malformed,
            "n_records_trimmed": self.n_records_trimmed,
            "n_records_in_dropped": self.n_records_in_dropped,
            "snapshot_end_month": self.snapshot_end_month,
            "categories": dict(sorted(self.categories.items())),
            "dropped_categories": dict(sorted(self.dropped_categories.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> CorpusSummary:
        return cls(**data)


def parse_record(line: str) -> Optional[EprintRecord]:
    """Parses one JSON-lines metadata object.

    The primary category is the first token of `categories` and the month is the
    UTC month of the earliest version's `created` timestamp.

    Args:
        line (str): One line of the metadata snapshot.

    Returns:
        Optional[EprintRecord]: The record, or None when a required field is missing
        or cannot be parsed.

    """
    try:
        obj = json.loads(line)
    except ValueError:
        return None
    if not isinstance(obj, dict):
        return None

    eprint_id = obj.get("id")
    if isinstance(eprint_id, (int, float)) and not isinstance(eprint_id, bool):
        eprint_id = str(eprint_id)
    if not isinstance(eprint_id, str) or not eprint_id.strip():
        return None

    categories = obj.get("categories")
    if not isinstance(categories, str):
        return None
    tokens = categories.split()
    if not tokens:
        return None

    versions = obj.get("versions")
    if not isinstance(versions, list) or not versions:
        return None
    created = []
    for version in versions:
        if not isinstance(version, dict) or not isinstance(version.get("created"), str):
            return None
        try:
            stamp = parsedate_to_datetime(version["created"])
        except (TypeError, ValueError, IndexError):
            return None
        if stamp is None:
            return None
        if stamp.tzinfo is None:
            stamp = stamp.replace(tzinfo=timezone.utc)
        created.append(stamp.astimezone(timezone.utc))

    first = min(created)
    month = pd.Period(year=first.year, month=first.month, freq="M")
    if month < FIRST_MONTH:
        return None
    return EprintRecord(eprint_id.strip(), tokens[0], month)


@timer_func
def build_series(
    records: Iterable[Optional[EprintRecord]],
    min_length: int = DEFAULT_MIN_LENGTH,
    snapshot_end=None,
) -> Tuple[List[MonthlySeries], CorpusSummary]:
    """Counts e-prints per primary category and month in one pass.

    Each category's series runs from its first upload month through the month
    before the snapshot end, zero-filled. The snapshot end defaults to the latest
    month seen in the stream, so that partial month is trimmed.

    Args:
        records (Iterable[Optional[EprintRecord]]): Parsed records in any order; None
            entries stand for lines parse_record skipped.
        min_length (int): Shorter categories are dropped and listed in the summary.
        snapshot_end (pd.Period | str, optional): First month not counted.

    Returns:
        Tuple[List[MonthlySeries], CorpusSummary]: Series sorted by category, and
        the ingestion summary.

    Raises:
        ValueError: If min_length < 1.
        EmptyCorpusError: If the stream holds no valid record.

    """
    if min_length < 1:
        raise ValueError(f"min_length must be >= 1, got {min_length}")

    counts: Counter = Counter()
    n_read = 0
    n_malformed = 0
    for record in records:
        n_read += 1
        if record is None:
            n_malformed += 1
            continue
        counts[(record.primary_category, record.first_version_month)] += 1

    if not counts:
        raise EmptyCorpusError("empty corpus")

    if snapshot_end is None:
        end = max(month for _, month in counts)
    else:
        end = to_month(snapshot_end)

    by_category: Dict[str, Dict[pd.Period, int]] = {}
    n_trimmed = 0
    for (category, month), count in counts.items():
        if month >= end:
            n_trimmed += count
            continue
        by_category.setdefault(category, {})[month] = count

    series = []
    dropped: Dict[str, int] = {}
    n_in_dropped = 0
    for category in sorted(by_category):
        monthly = by_category[category]
        start = min(monthly)
        length = months_between(start, end)
        if length < min_length:
            dropped[category] = length
            n_in_dropped += sum(monthly.values())
            continue
        values = np.zeros(length, dtype=np.int64)
        for month, count in monthly.items():
            values[months_between(start, month)] = count
        series.append(MonthlySeries(category, start, values))

    summary = CorpusSummary(
        n_records_read=n_read,
        n_records_skipped=n_malformed + n_trimmed + n_in_dropped,
        categories={s.category_id: len(s) for s in series},
        snapshot_end_month=str(end),
        n_records_malformed=n_malformed,
        n_records_trimmed=n_trimmed,
        n_records_in_dropped=n_in_dropped,
        dropped_categories=dropped,
    )
    logger.info(
        f"Built {len(series)} series from {n_read:,} records "
        f"({summary.n_records_skipped:,} skipped, {len(dropped)} categories dropped)"
    )
    return series, summary


def read_lines(path) -> Iterator[str]:
    """Streams the non-blank lines of a plain or gzip-compressed text file.

    Compression is detected from the gzip magic bytes, not the file name.

    Raises:
        IngestError: If the file cannot be opened or read.

    """
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            compressed = handle.read(2) == GZIP_MAGIC
        opener = gzip.open if compressed else open
        with opener(path, "rt", encoding="utf-8", errors="replace") as handle:
            for line in handle:
                if line.strip():
                    yield line
    except (OSError, EOFError) as e:
        logger.error(f"Failed reading {path}: {e}")
        raise IngestError(f"cannot read {path}: {e}") from e


def ingest_file(
    path, min_length: int = DEFAULT_MIN_LENGTH, snapshot_end=None
) -> Tuple[List[MonthlySeries], CorpusSummary]:
    """Parses a metadata snapshot and builds the monthly series."""
    records = (
        parse_record(line)
        for line in progress(read_lines(path), desc="Reading e-prints")
    )
    return build_series(records, min_length=min_length, snapshot_end=snapshot_end)


def series_frame(series: Iterable[MonthlySeries]) -> pd.DataFrame:
    frames = [s.to_frame() for s in series]
    if not frames:
        return pd.DataFrame(columns=SERIES_COLUMNS)
    df = pd.concat(frames, ignore_index=True)
    return df.sort_values(["category", "month"], kind="mergesort").reset_index(
        drop=True
    )


def persist_series(series: Iterable[MonthlySeries], path) -> Path:
    """Writes series in the canonical CSV format.

    Args:
        series (Iterable[MonthlySeries]): The series to write.
        path (str | Path): Destination file.

    Returns:
        Path: The written file.

    Raises:
        ValueError: If there is no series to write.

    """
    series = list(series)
    if not series:
        raise ValueError("Cannot persist an empty series collection")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series_frame(series).to_csv(
        path, index=False, encoding="utf-8", lineterminator="\n"
    )
    return path


def load_series(path) -> List[MonthlySeries]:
    """Reads series written by persist_series.

    Raises:
        ValueError: If the header is wrong or a category has gaps in its months.

    """
    df = pd.read_csv(
        path,
        dtype={"category": str, "month": str, "count": np.int64},
        keep_default_na=False,
    )
    if list(df.columns) != SERIES_COLUMNS:
        raise ValueError(f"Expected columns {SERIES_COLUMNS}, got {list(df.columns)}")

    series = []
    for category, group in df.groupby("category", sort=True):
        months = pd.to_datetime(group["month"].to_numpy(), format="%Y-%m").to_period(
            "M"
        )
        order = np.argsort(months.asi8, kind="mergesort")
        months = months[order]
        expected = pd.period_range(months[0], periods=len(months), freq="M")
        if not months.equals(expected):
            raise ValueError(f"Series {category} has missing or duplicate months")
        values = group["count"].to_numpy()[order]
        series.append(MonthlySeries(category, months[0], values))
    return series


def write_summary(summary: CorpusSummary, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def read_summary(path) -> CorpusSummary:
    return CorpusSummary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
