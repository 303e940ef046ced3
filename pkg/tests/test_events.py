import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetseq import events
from hetseq.events import Event, Sample, Schema


def test_schema_round_trip():
    s = Schema(M=2, C=3, U=1, type_names=("lab", "vital"))
    assert Schema.from_dict(s.to_dict()) == s


def test_schema_rejects_bad_name_count():
    with pytest.raises(events.SchemaError, match="type_names"):
        Schema(M=2, type_names=("only-one",))


@pytest.mark.parametrize(
    "event, match",
    [
        (Event(5, 1.0), "type 5"),
        (Event(0, -1.0), "time"),
        (Event(0, float("nan")), "time"),
        (Event(0, 1.0, (7,)), "categorical id 7"),
        (Event(0, 1.0, (1, 1)), "duplicate"),
        (Event(0, 1.0, (), ((3, 1.0),)), "slot 3"),
        (Event(0, 1.0, (), ((0, float("inf")),)), "not finite"),
    ],
)
def test_event_validation(event, match):
    with pytest.raises(events.SchemaError, match=match):
        event.validate(Schema(M=2, C=3, U=2))


def test_sample_sorts_events_stably():
    a = Event(0, 2.0, (0,))
    b = Event(1, 1.0, (1,))
    c = Event(1, 2.0, (2,))
    s = Sample("s", 0, (a, b, c))
    assert [e.cat_ids for e in s.events] == [(1,), (0,), (2,)]


def test_sample_rejects_bad_label():
    with pytest.raises(ValueError):
        Sample("s", 2, (Event(0, 0.0),))


def test_dataset_round_trip(tmp_path, schema, rng):
    from conftest import random_sample

    samples = [random_sample(rng, schema, 6, sid=f"s{i}") for i in range(5)]
    samples[0] = Sample(samples[0].id, 1, samples[0].events, decision_time=12.0)
    path = tmp_path / "d.jsonl"
    events.save_dataset(samples, path)
    assert events.load_dataset(path, schema) == samples


def test_dataset_parse_error_has_line_number(tmp_path, schema):
    path = tmp_path / "d.jsonl"
    good = json.dumps({"id": "a", "label": 0, "events": [{"t": 0, "type": 0}]})
    path.write_text(good + "\n" + "{not json\n")
    with pytest.raises(events.DatasetParseError) as err:
        events.load_dataset(path, schema)
    assert err.value.lineno == 2


def test_dataset_schema_violation_reports_line(tmp_path, schema):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"id": "a", "label": 0, "events": [{"t": 0, "type": 9}]}) + "\n")
    with pytest.raises(events.SchemaError, match=":1:"):
        events.load_dataset(path, schema)


def test_max_len_enforced(tmp_path, schema):
    path = tmp_path / "d.jsonl"
    evs = [{"t": float(i), "type": 0} for i in range(4)]
    path.write_text(json.dumps({"id": "a", "label": 0, "events": evs}) + "\n")
    with pytest.raises(events.SchemaError, match="length 4"):
        events.load_dataset(path, schema, max_len=3)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out.txt"
    events.atomic_write_text(target, "hello\n")
    events.atomic_write_text(target, "again\n")
    assert target.read_text() == "again\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_resolve_data_paths(tmp_path):
    assert events.resolve_data_paths(tmp_path) == (tmp_path / "dataset.jsonl", tmp_path / "schema.json")
    f = tmp_path / "x.jsonl"
    assert events.resolve_data_paths(f) == (f, tmp_path / "schema.json")


def test_split_sizes_and_disjointness(schema, rng):
    from conftest import random_sample

    samples = [random_sample(rng, schema, 2, sid=f"s{i}") for i in range(103)]
    train, valid, test = events.split(samples, (0.7, 0.1, 0.2), seed=3)
    assert (len(train), len(valid), len(test)) == (73, 10, 20)
    ids = [s.id for part in (train, valid, test) for s in part]
    assert sorted(ids) == sorted(s.id for s in samples)
    again = events.split(samples, (0.7, 0.1, 0.2), seed=3)
    assert [s.id for s in again[0]] == [s.id for s in train]


def test_split_needs_three_samples():
    s = Sample("a", 0, (Event(0, 0.0),))
    with pytest.raises(events.PartitionError):
        events.split([s, s], (0.7, 0.1, 0.2), 0)


def test_split_rejects_bad_fractions():
    s = Sample("a", 0, (Event(0, 0.0),))
    with pytest.raises(events.PartitionError):
        events.split([s] * 5, (0.5, 0.5, 0.5), 0)


def test_truncate_keeps_most_recent():
    evs = tuple(Event(0, float(t)) for t in range(10))
    s = Sample("a", 1, evs, decision_time=11.0)
    short = events.truncate_to_length(s, 3)
    assert [e.time for e in short.events] == [7.0, 8.0, 9.0]
    assert short.label == 1 and short.decision_time == 11.0
    assert events.truncate_to_length(s, 50) == s


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30), st.integers(1, 40))
def test_truncate_length_property(times, length):
    s = Sample("a", 0, tuple(Event(0, t) for t in times))
    out = events.truncate_to_length(s, length)
    assert len(out) == min(length, len(s))
    assert out.events == s.events[len(s) - len(out):]
    assert np.all(np.diff([e.time for e in out.events]) >= 0)
