"""Event and sample records, the schema that sizes them, and the on-disk format.

A dataset file holds one JSON object per line::

    {"id": "s1", "label": 1, "decision_time": 48.0,
     "events": [{"t": 0.5, "type": 3, "cat": [7], "num": [[2, 1.25]]}]}

``decision_time`` is optional.  A schema file is a JSON object with ``M``,
``C``, ``U`` and optional ``type_names`` / ``cat_names`` / ``num_names``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_LEN = 1000


class SchemaError(ValueError):
    """An id lies outside the schema's dense range."""


class DatasetParseError(ValueError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    M: int
    C: int = 0
    U: int = 0
    type_names: tuple[str, ...] | None = None
    cat_names: tuple[str, ...] | None = None
    num_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.M < 1 or self.C < 0 or self.U < 0:
            raise SchemaError(f"invalid schema sizes M={self.M} C={self.C} U={self.U}")
        for names, size, what in (
            (self.type_names, self.M, "type_names"),
            (self.cat_names, self.C, "cat_names"),
            (self.num_names, self.U, "num_names"),
        ):
            if names is not None and len(names) != size:
                raise SchemaError(f"{what} has {len(names)} entries, expected {size}")

    def to_dict(self) -> dict:
        out = {"M": self.M, "C": self.C, "U": self.U}
        for key in ("type_names", "cat_names", "num_names"):
            names = getattr(self, key)
            if names is not None:
                out[key] = list(names)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            return cls(
                M=int(d["M"]),
                C=int(d.get("C", 0)),
                U=int(d.get("U", 0)),
                type_names=tuple(d["type_names"]) if "type_names" in d else None,
                cat_names=tuple(d["cat_names"]) if "cat_names" in d else None,
                num_names=tuple(d["num_names"]) if "num_names" in d else None,
            )
        except KeyError as exc:
            raise SchemaError(f"schema is missing {exc}") from None


@dataclass(frozen=True)
class Event:
    type_id: int
    time: float
    cat_ids: tuple[int, ...] = ()
    num_values: tuple[tuple[int, float], ...] = ()

    def validate(self, schema: Schema) -> None:
        if not 0 <= self.type_id < schema.M:
            raise SchemaError(f"event type {self.type_id} outside [0, {schema.M})")
        if not (math.isfinite(self.time) and self.time >= 0):
            raise SchemaError(f"event time {self.time!r} must be finite and >= 0")
        if len(set(self.cat_ids)) != len(self.cat_ids):
            raise SchemaError(f"duplicate categorical ids {self.cat_ids}")
        for c in self.cat_ids:
            if not 0 <= c < schema.C:
                raise SchemaError(f"categorical id {c} outside [0, {schema.C})")
        slots = [u for u, _ in self.num_values]
        if len(set(slots)) != len(slots):
            raise SchemaError(f"duplicate numerical slots {slots}")
        for u, v in self.num_values:
            if not 0 <= u < schema.U:
                raise SchemaError(f"numerical slot {u} outside [0, {schema.U})")
            if not math.isfinite(v):
                raise SchemaError(f"numerical value {v!r} in slot {u} is not finite")

    def to_dict(self) -> dict:
        return {
            "t": self.time,
            "type": self.type_id,
            "cat": list(self.cat_ids),
            "num": [[u, v] for u, v in self.num_values],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(
            type_id=int(d["type"]),
            time=float(d["t"]),
            cat_ids=tuple(int(c) for c in d.get("cat", ())),
            num_values=tuple((int(u), float(v)) for u, v in d.get("num", ())),
        )


@dataclass(frozen=True)
class Sample:
    id: str
    label: int
    events: tuple[Event, ...]
    decision_time: float | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            # stable: ties keep their original order
            object.__setattr__(
                self, "events", tuple(sorted(self.events, key=lambda e: e.time))
            )
        else:
            object.__setattr__(self, "events", tuple(self.events))

    def __len__(self) -> int:
        return len(self.events)

    def validate(self, schema: Schema, max_len: int = DEFAULT_MAX_LEN) -> None:
        if not 1 <= len(self.events) <= max_len:
            raise SchemaError(f"sample {self.id}: length {len(self.events)} outside [1, {max_len}]")
        for e in self.events:
            e.validate(schema)

    def to_dict(self) -> dict:
        out = {"id": self.id, "label": self.label}
        if self.decision_time is not None:
            out["decision_time"] = self.decision_time
        out["events"] = [e.to_dict() for e in self.events]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        dt = d.get("decision_time")
        return cls(
            id=str(d["id"]),
            label=int(d["label"]),
            events=tuple(Event.from_dict(e) for e in d["events"]),
            decision_time=None if dt is None else float(dt),
        )


# ----------------------------------------------------------------------------
# files


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    return Schema.from_dict(d)


def save_schema(schema: Schema, path) -> None:
    atomic_write_text(path, json.dumps(schema.to_dict(), indent=2) + "\n")


def load_dataset(path, schema: Schema, max_len: int = DEFAULT_MAX_LEN) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sample = Sample.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(path, lineno, f"{type(exc).__name__}: {exc}") from None
            try:
                sample.validate(schema, max_len)
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            samples.append(sample)
    return samples


def dumps_dataset(samples: Iterable[Sample]) -> str:
    return "".join(json.dumps(s.to_dict(), separators=(",", ":")) + "\n" for s in samples)


def save_dataset(samples: Iterable[Sample], path) -> None:
    atomic_write_text(path, dumps_dataset(samples))


def resolve_data_paths(data) -> tuple[Path, Path]:
    """Accept a dataset directory or a ``.jsonl`` file with ``schema.json`` beside it."""
    data = Path(data)
    if data.is_dir():
        return data / "dataset.jsonl", data / "schema.json"
    return data, data.with_name("schema.json")


# ----------------------------------------------------------------------------
# splitting and truncation


def split(
    samples: Sequence[Sample],
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Seeded shuffle into (train, valid, test).

    Valid and test sizes are floored; the remainder goes to train.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise PartitionError(f"fractions {fractions} must be three non-negatives summing to 1")
    n = len(samples)
    if n < 3:
        raise PartitionError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(math.floor(fractions[1] * n + 1e-9))
    n_test = int(math.floor(fractions[2] * n + 1e-9))
    n_train = n - n_valid - n_test
    parts = np.split(order, [n_train, n_train + n_valid])
    return tuple([samples[i] for i in part] for part in parts)


def truncate_to_length(sample: Sample, length: int) -> Sample:
    """Keep the most recent ``length`` events."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if len(sample.events) <= length:
        return sample
    return Sample(sample.id, sample.label, sample.events[-length:], sample.decision_time)
