"""Event type embedding and attribute encoding.

Each event becomes a type vector ``s`` (a column of ``C_type``) and an input
vector ``x = s + sum of V_c columns + tanh(sum of v * V_n columns)``.
Functions accept either raw arrays or tape nodes for the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from hetseq import numeric as nm
from hetseq.events import Event, Sample, SchemaError


def embed_type(type_id: int, params: Mapping):
    table = params["C_type"]
    n_types = np.shape(nm._val(table))[1]
    if not 0 <= type_id < n_types:
        raise SchemaError(f"event type {type_id} outside [0, {n_types})")
    return nm.column(table, type_id)


def encode_attributes(event: Event, s, params: Mapping):
    x = s
    for c in event.cat_ids:
        x = nm.add(x, nm.column(params["V_c"], c))
    if event.num_values:
        acc = None
        for u, v in event.num_values:
            term = nm.scale(nm.column(params["V_n"], u), v)
            acc = term if acc is None else nm.add(acc, term)
        x = nm.add(x, nm.tanh(acc))
    return x


def encode_event(event: Event, params: Mapping):
    """Return ``(s, x)`` for one event."""
    s = embed_type(event.type_id, params)
    return s, encode_attributes(event, s, params)


@dataclass
class NumericScaler:
    """Per-slot z-scoring fitted on training data.

    Slots never observed, or with zero spread, keep unit scale.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, n_slots: int) -> "NumericScaler":
        return cls(np.zeros(n_slots), np.ones(n_slots))

    @classmethod
    def fit(cls, samples: Sequence[Sample], n_slots: int) -> "NumericScaler":
        total = np.zeros(n_slots)
        total_sq = np.zeros(n_slots)
        count = np.zeros(n_slots)
        for sample in samples:
            for e in sample.events:
                for u, v in e.num_values:
                    total[u] += v
                    total_sq[u] += v * v
                    count[u] += 1
        seen = count > 0
        mean = np.where(seen, total / np.maximum(count, 1), 0.0)
        var = np.where(seen, total_sq / np.maximum(count, 1) - mean**2, 1.0)
        std = np.sqrt(np.maximum(var, 0.0))
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def transform_value(self, slot: int, value: float) -> float:
        return float((value - self.mean[slot]) / self.std[slot])

    def transform(self, sample: Sample) -> Sample:
        events = tuple(
            Event(
                e.type_id,
                e.time,
                e.cat_ids,
                tuple((u, self.transform_value(u, v)) for u, v in e.num_values),
            )
            for e in sample.events
        )
        return Sample(sample.id, sample.label, events, sample.decision_time)
