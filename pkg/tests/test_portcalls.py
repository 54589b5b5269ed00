"""
tests/test_portcalls.py — Port-call types, CSV ingestion and turnaround.

No HTTP, no DB.  CSV fixtures are written to tmp_path.

Covers:
  • turnaround_hours
      – exact day → 24.0, 90 minutes → 1.5, across midnight → 30.5
      – shifting both timestamps leaves the value unchanged
      – open call → OpenCallError
  • PortCall / CargoOperation invariants
      – departure ≤ arrival rejected, negative tonnage rejected
      – labels trimmed, blank labels become absent
  • parse_dataset
      – 53 h row, all-empty cargo cells → unload/load absent
      – strict mode raises RowError with the line number
      – lenient mode: 5 rows with 1 duplicate call_id → 4 calls + 1 error
      – malformed timestamp / wrong header / missing file
  • serialize_dataset ∘ parse_dataset is the identity (incl. provenance columns)
  • Dataset rejects duplicate call ids
"""
from datetime import datetime, timedelta, timezone

import pytest
from pydantic import ValidationError

from errors import DatasetFormatError, DuplicateCallError, OpenCallError, RowError
from portcalls import (
    PORTCALL_COLUMNS,
    CargoOperation,
    Dataset,
    PortCall,
    format_timestamp,
    parse_dataset,
    parse_timestamp,
    serialize_dataset,
    turnaround_hours,
)
from tests.conftest import make_call, make_dataset, op

HEADER = ",".join(PORTCALL_COLUMNS)


def _write_csv(tmp_path, rows, header=HEADER, name="calls.csv"):
    path = tmp_path / name
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows))
    return path


def _utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


# ---------------------------------------------------------------------------
# turnaround_hours
# ---------------------------------------------------------------------------


def test_turnaround_exact_day():
    call = PortCall(call_id="A", vessel_id="V", arrival=_utc(2018, 1, 1),
                    departure=_utc(2018, 1, 2))
    assert turnaround_hours(call) == 24.0


def test_turnaround_ninety_minutes():
    t = _utc(2018, 5, 1, 10, 0)
    call = PortCall(call_id="A", vessel_id="V", arrival=t, departure=t + timedelta(minutes=90))
    assert turnaround_hours(call) == 1.5


def test_turnaround_across_day_boundary():
    call = PortCall(call_id="A", vessel_id="V", arrival=_utc(2018, 3, 24, 23, 0),
                    departure=_utc(2018, 3, 26, 5, 30))
    assert turnaround_hours(call) == 30.5


def test_turnaround_translation_invariant():
    base = make_call(hours=17.25)
    for delta in (timedelta(days=400), timedelta(hours=-3), timedelta(minutes=7)):
        shifted = base.model_copy(update={"arrival": base.arrival + delta,
                                          "departure": base.departure + delta})
        assert turnaround_hours(shifted) == turnaround_hours(base)


def test_turnaround_open_call_raises():
    with pytest.raises(OpenCallError, match="open"):
        turnaround_hours(make_call(departure=None))


def test_turnaround_accepts_non_utc_offsets():
    tz = timezone(timedelta(hours=2))
    call = PortCall(call_id="A", vessel_id="V",
                    arrival=datetime(2018, 6, 1, 10, 0, tzinfo=tz),
                    departure=_utc(2018, 6, 1, 20, 0))
    assert call.arrival == _utc(2018, 6, 1, 8, 0)
    assert turnaround_hours(call) == 12.0


# ---------------------------------------------------------------------------
# Type invariants
# ---------------------------------------------------------------------------


def test_departure_must_follow_arrival():
    with pytest.raises(ValidationError, match="departure must be after arrival"):
        PortCall(call_id="A", vessel_id="V", arrival=_utc(2018, 1, 2), departure=_utc(2018, 1, 1))


def test_negative_tonnage_rejected():
    with pytest.raises(ValidationError):
        CargoOperation(cargo_type="WHEAT", tonnage=-1.0)


def test_labels_are_trimmed_and_blank_is_absent():
    operation = CargoOperation(cargo_type="  SUNFLOWER   BULK ", berth="   ")
    assert operation.cargo_type == "SUNFLOWER BULK"
    assert operation.berth is None


def test_naive_timestamp_rejected():
    with pytest.raises(ValidationError):
        PortCall(call_id="A", vessel_id="V", arrival=datetime(2018, 1, 1))


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(DuplicateCallError):
        Dataset(calls=(make_call("X"), make_call("X")))


def test_cargo_types_distinct_unload_first():
    call = make_call(unload=op("WHEAT"), load=op("WHEAT"))
    assert call.cargo_types() == ["WHEAT"]
    call = make_call(unload=op("CRUDE OIL"), load=op("WHEAT"))
    assert call.cargo_types() == ["CRUDE OIL", "WHEAT"]


# ---------------------------------------------------------------------------
# Timestamp helpers
# ---------------------------------------------------------------------------


def test_parse_timestamp_requires_offset():
    assert parse_timestamp("2018-01-01T00:00:00Z") == _utc(2018, 1, 1)
    assert parse_timestamp("2018-01-01T02:00:00+02:00") == _utc(2018, 1, 1)
    with pytest.raises(ValueError, match="no UTC offset"):
        parse_timestamp("2018-01-01T00:00:00")
    with pytest.raises(ValueError, match="malformed"):
        parse_timestamp("yesterday")


def test_format_timestamp_z_suffix():
    assert format_timestamp(_utc(2018, 1, 1, 5, 6, 7)) == "2018-01-01T05:06:07Z"
    assert format_timestamp(_utc(2018, 1, 1, 5, 6, 7, 250)) == "2018-01-01T05:06:07.000250Z"


# ---------------------------------------------------------------------------
# parse_dataset
# ---------------------------------------------------------------------------


def test_parse_row_with_53_hours(tmp_path):
    path = _write_csv(tmp_path, [
        "C1,IMO9000001,2018-01-01T00:00:00Z,2018-01-03T05:00:00Z,"
        "WHEAT,CEREALS,12000.5,BASSENS-2,,,,",
    ])
    dataset = parse_dataset(path)
    assert len(dataset) == 1
    call = dataset[0]
    assert turnaround_hours(call) == 53.0
    assert call.unload.cargo_type == "WHEAT"
    assert call.unload.tonnage == 12000.5
    assert call.load is None
    assert dataset.source == str(path)
    assert dataset.ingested_at is not None


def test_parse_all_cargo_cells_empty(tmp_path):
    path = _write_csv(tmp_path, ["C1,V1,2018-01-01T00:00:00Z,2018-01-02T00:00:00Z,,,,,,,,"])
    call = parse_dataset(path)[0]
    assert call.unload is None
    assert call.load is None


def test_parse_open_call_keeps_missing_departure(tmp_path):
    path = _write_csv(tmp_path, ["C1,V1,2018-01-01T00:00:00Z,,WHEAT,,100,,,,,"])
    call = parse_dataset(path)[0]
    assert call.departure is None
    assert call.is_open


def test_strict_mode_raises_with_line_number(tmp_path):
    path = _write_csv(tmp_path, [
        "C1,V1,2018-01-01T00:00:00Z,2018-01-02T00:00:00Z,WHEAT,,100,,,,,",
        "C2,V1,not-a-time,2018-01-02T00:00:00Z,WHEAT,,100,,,,,",
    ])
    with pytest.raises(RowError) as exc_info:
        parse_dataset(path, strict=True)
    assert exc_info.value.line == 3
    assert exc_info.value.column == "arrival"


def test_negative_tonnage_is_row_error(tmp_path):
    path = _write_csv(tmp_path, ["C1,V1,2018-01-01T00:00:00Z,2018-01-02T00:00:00Z,WHEAT,,-5,,,,,"])
    with pytest.raises(RowError) as exc_info:
        parse_dataset(path)
    assert exc_info.value.column == "unload_tonnage"


def test_lenient_mode_skips_duplicate(tmp_path):
    rows = [
        f"C{i},V1,2018-01-0{i}T00:00:00Z,2018-01-0{i}T12:00:00Z,WHEAT,,100,,,,,"
        for i in range(1, 5)
    ] + ["C2,V9,2018-02-01T00:00:00Z,2018-02-02T00:00:00Z,WHEAT,,100,,,,,"]
    path = _write_csv(tmp_path, rows)
    dataset = parse_dataset(path, strict=False)
    assert [c.call_id for c in dataset] == ["C1", "C2", "C3", "C4"]
    assert len(dataset.rejected) == 1
    assert dataset.rejected[0]["line"] == 6
    assert "duplicate" in dataset.rejected[0]["message"]

    with pytest.raises(RowError, match="duplicate"):
        parse_dataset(path, strict=True)


def test_wrong_header_is_format_error(tmp_path):
    path = _write_csv(tmp_path, [], header="id,arrival,departure")
    with pytest.raises(DatasetFormatError, match="header"):
        parse_dataset(path)


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(DatasetFormatError, match="not found"):
        parse_dataset(tmp_path / "nope.csv")


def test_only_csv_format_supported(tmp_path):
    with pytest.raises(DatasetFormatError, match="unsupported"):
        parse_dataset(tmp_path / "x.json", format="json")


# ---------------------------------------------------------------------------
# Round trip
# ---------------------------------------------------------------------------


def test_serialize_then_parse_is_identity(tmp_path):
    calls = [
        make_call("A", hours=10.0, unload=op("CRUDE OIL", 32000.0, "AMBES-1", "HYDROCARBONS")),
        make_call("B", hours=0.75, arrival=_utc(2016, 7, 1, 3, 15, 0, 500),
                  unload=None, load=op("WHEAT", 0.0, None)),
        make_call("C", departure=None, unload=op(None, None, "QUAI-1")),
        make_call("D", hours=100.0, unload=None, load=None),
    ]
    original = make_dataset(calls)
    path = tmp_path / "out.csv"
    serialize_dataset(original, path)
    again = parse_dataset(path)
    assert again.calls == original.calls


def test_round_trip_keeps_ais_provenance(tmp_path):
    call = make_call("A").model_copy(update={"departure_source": "ais"})
    path = tmp_path / "out.csv"
    serialize_dataset(make_dataset([call, make_call("B")]), path)
    header = path.read_text().splitlines()[0]
    assert header.endswith("arrival_source,departure_source")
    again = parse_dataset(path)
    assert again[0].departure_source == "ais"
    assert again[1].departure_source is None
