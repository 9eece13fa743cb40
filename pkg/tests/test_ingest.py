#!/usr/bin/env python

"""Tests for `techcast.ingest`."""

import gzip
import json
import random

import numpy as np
import pandas as pd
import pytest

from techcast.ingest import (
    CorpusSummary,
    EmptyCorpusError,
    EprintRecord,
    IngestError,
    MonthlySeries,
    build_series,
    ingest_file,
    load_series,
    parse_record,
    persist_series,
    read_lines,
    read_summary,
    write_summary,
)

MONTH = pd.Period("2007-04", freq="M")


def make_line(eprint_id, categories, *created):
    return json.dumps(
        {
            "id": eprint_id,
            "categories": categories,
            "versions": [
                {"version": f"v{i + 1}", "created": c} for i, c in enumerate(created)
            ],
        }
    )


def test_parse_record():
    """Tests the primary category and month of a well-formed record."""
    line = make_line("0704.0001", "cs.LG stat.ML", "Mon, 2 Apr 2007 19:18:42 GMT")
    record = parse_record(line)
    assert record == EprintRecord("0704.0001", "cs.LG", MONTH)


def test_parse_record_earliest_version():
    line = make_line(
        "0704.0002",
        "math.OC",
        "Sat, 10 Jan 2009 10:00:00 GMT",
        "Mon, 2 Apr 2007 19:18:42 GMT",
    )
    assert parse_record(line).first_version_month == MONTH


def test_parse_record_utc_month():
    """A timestamp east of UTC just after midnight belongs to the previous UTC month."""
    line = make_line("x", "cs.AI", "Sun, 1 Apr 2007 00:30:00 +0200")
    assert parse_record(line).first_version_month == pd.Period("2007-03", freq="M")


@pytest.mark.parametrize(
    "line",
    [
        "not json",
        "[1, 2, 3]",
        make_line("0704.0001", "", "Mon, 2 Apr 2007 19:18:42 GMT"),
        make_line("0704.0001", "   ", "Mon, 2 Apr 2007 19:18:42 GMT"),
        make_line("", "cs.LG", "Mon, 2 Apr 2007 19:18:42 GMT"),
        make_line("0704.0001", "cs.LG"),
        make_line("0704.0001", "cs.LG", "yesterday"),
        make_line("0704.0001", "cs.LG", "Mon, 2 Apr 1985 19:18:42 GMT"),
        json.dumps({"id": "1", "categories": "cs.LG"}),
    ],
)
def test_parse_record_skips(line):
    assert parse_record(line) is None


def records(*entries):
    out = []
    for category, month, count in entries:
        out.extend([EprintRecord("id", category, pd.Period(month, freq="M"))] * count)
    return out


def test_build_series_zero_fill():
    """Tests counting and zero-filling up to the month before the snapshot end."""
    series, summary = build_series(
        records(("cs.LG", "2007-04", 3), ("cs.LG", "2007-06", 1)),
        min_length=1,
        snapshot_end="2007-08",
    )
    assert len(series) == 1
    assert series[0].category_id == "cs.LG"
    assert series[0].start_month == MONTH
    np.testing.assert_array_equal(series[0].values, [3, 0, 1, 0])
    assert summary.n_records_read == 4
    assert summary.n_records_skipped == 0
    assert summary.categories == {"cs.LG": 4}
    assert summary.snapshot_end_month == "2007-08"


def test_build_series_trims_last_month():
    """Without an explicit end, the latest month seen is treated as partial."""
    series, summary = build_series(
        records(
            ("cs.LG", "2007-04", 2), ("cs.LG", "2007-05", 1), ("cs.LG", "2007-06", 5)
        ),
        min_length=1,
    )
    np.testing.assert_array_equal(series[0].values, [2, 1])
    assert summary.n_records_trimmed == 5
    assert summary.n_records_skipped == 5


def test_build_series_drops_short_categories():
    recs = records(("cs.LG", "2000-01", 1), ("math.OC", "2007-01", 2))
    series, summary = build_series(recs, min_length=108, snapshot_end="2011-03")
    assert [s.category_id for s in series] == ["cs.LG"]
    assert len(series[0]) == 134
    assert summary.dropped_categories == {"math.OC": 50}
    assert summary.n_records_in_dropped == 2
    assert summary.n_records_assigned == 1


def test_build_series_accounting():
    """Read records always equal assigned plus skipped ones."""
    recs = records(
        ("cs.LG", "2000-01", 4), ("cs.LG", "2005-03", 2), ("q-bio.NC", "2009-01", 1)
    )
    recs += [None, None]
    series, summary = build_series(recs, min_length=60, snapshot_end="2010-01")
    assigned = sum(int(s.values.sum()) for s in series)
    assert summary.n_records_read == 9
    assert assigned + summary.n_records_skipped == summary.n_records_read
    assert summary.n_records_malformed == 2


def test_build_series_order_independent():
    recs = records(
        ("cs.LG", "2007-04", 3), ("cs.CV", "2007-05", 2), ("cs.LG", "2007-07", 1)
    )
    shuffled = list(recs)
    random.Random(3).shuffle(shuffled)
    assert build_series(recs, 1, "2007-09")[0] == build_series(shuffled, 1, "2007-09")[0]


def test_build_series_empty():
    with pytest.raises(EmptyCorpusError, match="empty corpus"):
        build_series([], min_length=1)
    with pytest.raises(EmptyCorpusError):
        build_series([None, None], min_length=1)


def test_monthly_series_invariants():
    with pytest.raises(ValueError):
        MonthlySeries("cs.LG", "2007-04", [0, 1])
    with pytest.raises(ValueError):
        MonthlySeries("cs.LG", "2007-04", [1, -1])
    with pytest.raises(ValueError):
        MonthlySeries("cs.LG", "2007-04", [])
    s = MonthlySeries("cs.LG", "2007-04", [3, 0, 1])
    assert s.end_month == pd.Period("2007-06", freq="M")
    with pytest.raises(ValueError):
        s.values[0] = 5


def test_persist_series_format(tmp_path):
    series = [MonthlySeries("cs.LG", "2007-04", [3, 0, 1])]
    path = persist_series(series, tmp_path / "s.csv")
    assert path.read_bytes() == (
        b"category,month,count\ncs.LG,2007-04,3\ncs.LG,2007-05,0\ncs.LG,2007-06,1\n"
    )


def test_persist_load_round_trip(tmp_path):
    series = [
        MonthlySeries("cs.LG", "1999-11", [1, 0, 7, 12, 0, 3]),
        MonthlySeries("astro-ph.CO", "2003-02", [5, 5, 6]),
    ]
    path = persist_series(series, tmp_path / "series.csv")
    loaded = load_series(path)
    assert loaded == sorted(series, key=lambda s: s.category_id)


def test_persist_series_empty(tmp_path):
    with pytest.raises(ValueError):
        persist_series([], tmp_path / "s.csv")


def test_load_series_rejects_gaps(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("category,month,count\ncs.LG,2007-04,3\ncs.LG,2007-06,1\n")
    with pytest.raises(ValueError, match="missing or duplicate"):
        load_series(path)


def test_load_fixture_series():
    from pathlib import Path

    series = load_series(Path(__file__).parent / "fixture_series.csv")
    assert len(series) == 12
    assert all(len(s) >= 108 for s in series)
    assert len({s.end_month for s in series}) == 1


@pytest.mark.parametrize("compressed", [False, True])
def test_ingest_file(tmp_path, compressed):
    """Gzip input is recognised by its magic bytes, whatever the file name."""
    stamp = "Mon, 2 Apr 2007 19:18:42 GMT"
    lines = [make_line(str(i), "cs.LG", stamp) for i in range(3)]
    lines += ["", "{broken", make_line("9", "cs.LG", "Fri, 1 Jun 2007 08:00:00 GMT")]
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    path = tmp_path / "snapshot.json"
    path.write_bytes(gzip.compress(payload) if compressed else payload)

    series, summary = ingest_file(path, min_length=1)
    np.testing.assert_array_equal(series[0].values, [3, 0])
    assert summary.n_records_read == 5
    assert summary.n_records_malformed == 1
    assert summary.n_records_trimmed == 1


def test_read_lines_missing_file(tmp_path):
    with pytest.raises(IngestError):
        list(read_lines(tmp_path / "missing.json"))


def test_summary_round_trip(tmp_path):
    summary = CorpusSummary(
        n_records_read=10,
        n_records_skipped=3,
        categories={"cs.LG": 120},
        snapshot_end_month="2020-01",
        n_records_malformed=1,
        n_records_trimmed=2,
    )
    assert read_summary(write_summary(summary, tmp_path / "summary.json")) == summary
