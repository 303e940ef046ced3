"""Synthetic heterogeneous event streams with a cross-event temporal label.

Every event type arrives as its own Poisson process, with mean inter-arrival
times spread log-uniformly over a wide range.  The endpoint is positive when
a *trigger* event (type A) carrying a high numeric value follows a *context*
event (type B) carrying a specific categorical value within ``delta`` hours,
both inside the final ``final_window`` hours before the decision time.  The
numeric threshold is tuned by bisection to hit a target positive rate.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hetseq.batched import worker_count
from hetseq.events import Event, Sample, Schema

HIST_EDGES = np.logspace(-3, 3, 13)  # hours


class GenerationError(ValueError):
    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class DependencyRule:
    trigger_type: int
    trigger_slot: int
    context_type: int
    context_value: int
    delta: float
    final_window: float = 24.0
    theta: float = -math.inf

    def __post_init__(self):
        if self.trigger_type == self.context_type:
            raise GenerationError("trigger and context types must differ")
        if self.delta < 0 or self.final_window <= 0:
            raise GenerationError("delta must be >= 0 and final_window > 0")


@dataclass
class GenConfig:
    M: int = 50
    C: int = 100
    U: int = 20
    n_samples: int = 5000
    period_min: float = 0.5
    period_max: float = 48.0
    horizon: float = 24.0
    max_len: int = 1000
    positive_rate: float = 0.1
    rate_tolerance: float = 0.01
    seed: int = 0
    # dependency rule; negative ids mean "pick automatically"
    trigger_type: int = -1
    context_type: int = -1
    context_value: int = -1
    trigger_period: float = 2.0
    context_period: float = 24.0
    delta: float = 2.0
    final_window: float = 24.0
    theta: float = math.nan  # NaN: tune to positive_rate
    context_value_prob: float = 0.3  # NaN: uniform over the context type's values

    def __post_init__(self):
        if self.M < 2:
            raise GenerationError("need at least two event types")
        if self.C < self.M:
            raise GenerationError("need C >= M so every type owns a categorical value")
        if self.U < 1:
            raise GenerationError("need at least one numerical slot")
        if not 0 < self.positive_rate < 1:
            raise GenerationError("positive_rate must lie in (0, 1)")
        if not 0 < self.period_min <= self.period_max:
            raise GenerationError("periods must be positive with period_min <= period_max")
        if self.n_samples < 1 or self.max_len < 1 or self.horizon <= 0:
            raise GenerationError("n_samples, max_len and horizon must be positive")

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Layout:
    """Dataset-level draws shared by every sample."""

    periods: np.ndarray
    cats_of: list[np.ndarray]
    slots_of: list[np.ndarray]
    slot_mean: np.ndarray
    slot_sd: np.ndarray
    rule: DependencyRule
    context_value_prob: float


@dataclass
class GeneratedDataset:
    schema: Schema
    samples: list[Sample]
    layout: Layout

    @property
    def rule(self) -> DependencyRule:
        return self.layout.rule

    @property
    def positive_rate(self) -> float:
        return float(np.mean([s.label for s in self.samples]))


def make_layout(config: GenConfig) -> Layout:
    rng = np.random.default_rng([config.seed, 0x5EED])
    periods = np.exp(rng.uniform(math.log(config.period_min), math.log(config.period_max), size=config.M))
    cats_of = np.array_split(np.arange(config.C), config.M)
    slots_of = np.array_split(np.arange(config.U), config.M)
    slot_mean = rng.uniform(0.0, 100.0, size=config.U)
    slot_sd = rng.uniform(1.0, 20.0, size=config.U)

    with_slot = [m for m in range(config.M) if len(slots_of[m])]
    a = config.trigger_type
    if a < 0:
        a = min(with_slot, key=lambda m: (abs(math.log(periods[m] / config.trigger_period)), m))
    b = config.context_type
    if b < 0:
        others = [m for m in range(config.M) if m != a]
        b = min(others, key=lambda m: (abs(math.log(periods[m] / config.context_period)), m))
    if not len(slots_of[a]):
        raise GenerationError(f"trigger type {a} has no numerical slot")
    v = config.context_value if config.context_value >= 0 else int(cats_of[b][0])
    if v not in cats_of[b]:
        raise GenerationError(f"categorical value {v} does not belong to context type {b}")
    rule = DependencyRule(
        trigger_type=int(a), trigger_slot=int(slots_of[a][0]), context_type=int(b),
        context_value=int(v), delta=config.delta, final_window=config.final_window,
    )
    return Layout(periods, list(cats_of), list(slots_of), slot_mean, slot_sd, rule, config.context_value_prob)


def _sample_events(config: GenConfig, layout: Layout, index: int) -> list[Event]:
    rng = np.random.default_rng([config.seed, index])
    rule = layout.rule
    times, types = [], []
    for m in range(config.M):
        n = rng.poisson(config.horizon / layout.periods[m])
        times.append(np.sort(rng.uniform(0.0, config.horizon, size=n)))
        types.append(np.full(n, m))
    times = np.concatenate(times)
    types = np.concatenate(types)
    order = np.argsort(times, kind="stable")[-config.max_len:]
    events = []
    for t, m in zip(times[order], types[order]):
        cats = layout.cats_of[m]
        if m == rule.context_type and not math.isnan(layout.context_value_prob):
            if rng.random() < layout.context_value_prob or len(cats) == 1:
                cat = rule.context_value
            else:
                cat = int(rng.choice(cats[cats != rule.context_value]))
        else:
            cat = int(cats[rng.integers(len(cats))])
        nums = tuple(
            (int(u), float(layout.slot_mean[u] + layout.slot_sd[u] * rng.standard_normal()))
            for u in layout.slots_of[m]
        )
        events.append(Event(int(m), float(t), (cat,), nums))
    return events


def rule_score(events: Sequence[Event], rule: DependencyRule, decision_time: float) -> float:
    """Largest qualifying trigger value, or -inf when the pattern never occurs."""
    start = decision_time - rule.final_window
    context_times = [
        e.time for e in events
        if e.type_id == rule.context_type and rule.context_value in e.cat_ids and e.time >= start
    ]
    best = -math.inf
    if not context_times:
        return best
    for e in events:
        if e.type_id != rule.trigger_type or e.time < start:
            continue
        if any(tb < e.time <= tb + rule.delta for tb in context_times):
            value = dict(e.num_values).get(rule.trigger_slot)
            if value is not None and value > best:
                best = value
    return best


def label_of(sample: Sample, rule: DependencyRule, decision_time: float | None = None) -> int:
    dt = sample.decision_time if decision_time is None else decision_time
    if dt is None:
        dt = sample.events[-1].time
    return int(rule_score(sample.events, rule, dt) > rule.theta)


def tune_threshold(scores: np.ndarray, target: float, tolerance: float) -> tuple[float, float]:
    """Bisect the trigger threshold so that mean(scores > theta) ~= target."""
    finite = scores[np.isfinite(scores)]
    ceiling = len(finite) / len(scores)
    if ceiling < target - tolerance:
        raise GenerationError(
            f"positive rate {target:.3f} unreachable: at most {ceiling:.4f} of samples contain the pattern",
            achieved=ceiling,
        )
    lo, hi = float(finite.min()) - 1.0, float(finite.max())
    best_theta, best_rate = lo, ceiling
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rate = float(np.mean(scores > mid))
        if abs(rate - target) < abs(best_rate - target):
            best_theta, best_rate = mid, rate
        if rate > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, abs(mid)):
            break
    if abs(best_rate - target) > tolerance:
        raise GenerationError(
            f"positive rate {target:.3f} unreachable within {tolerance}: closest {best_rate:.4f}",
            achieved=best_rate,
        )
    return best_theta, best_rate


def build(config: GenConfig) -> GeneratedDataset:
    layout = make_layout(config)
    threads = worker_count()
    indices = range(config.n_samples)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sequences = list(pool.map(lambda i: _sample_events(config, layout, i), indices))
    else:
        sequences = [_sample_events(config, layout, i) for i in indices]
    if any(not seq for seq in sequences):
        empty = sum(not seq for seq in sequences)
        raise GenerationError(f"{empty} samples came out empty; lengthen the horizon or shorten periods")
    scores = np.array([rule_score(seq, layout.rule, config.horizon) for seq in sequences])
    if math.isnan(config.theta):
        theta, _ = tune_threshold(scores, config.positive_rate, config.rate_tolerance)
    else:
        theta = config.theta
    layout.rule = dataclasses.replace(layout.rule, theta=theta)
    samples = [
        Sample(f"s{i:05d}", int(score > theta), tuple(seq), config.horizon)
        for i, (seq, score) in enumerate(zip(sequences, scores))
    ]
    schema = Schema(M=config.M, C=config.C, U=config.U)
    return GeneratedDataset(schema, samples, layout)


def generate(config: GenConfig) -> tuple[Schema, list[Sample]]:
    ds = build(config)
    return ds.schema, ds.samples


def toy_task(n_samples: int = 200, seed: int = 0, marker: int = 1) -> tuple[Schema, list[Sample]]:
    """Linearly separable sanity task: positive iff a ``marker`` event occurs.

    Four event types, 2 to 6 events over ten hours; half of the samples get
    one marker event at a random time.
    """
    schema = Schema(M=4, C=4, U=1)
    rng = np.random.default_rng(seed)
    background = [m for m in range(schema.M) if m != marker]
    samples = []
    for i in range(n_samples):
        n = int(rng.integers(2, 7))
        types = list(rng.choice(background, size=n))
        label = i % 2
        if label:
            types[int(rng.integers(n))] = marker
        times = np.sort(rng.uniform(0.0, 10.0, size=n))
        evs = tuple(
            Event(int(m), float(t), (int(m),), ((0, float(rng.standard_normal())),)) for m, t in zip(types, times)
        )
        samples.append(Sample(f"t{i:04d}", label, evs, 10.0))
    return schema, samples


def describe(samples: Sequence[Sample], schema: Schema | None = None) -> dict:
    """Per-type counts, inter-arrival histograms, positive rate and timespans.

    ``mean_interarrival`` per type is exposure hours divided by event count,
    with exposure the decision time (or last event time) of every sample.
    """
    if not samples:
        raise ValueError("cannot describe an empty dataset")
    counts: dict[int, int] = {}
    gaps: dict[int, list[float]] = {}
    exposure = 0.0
    spans = []
    for s in samples:
        times = [e.time for e in s.events]
        spans.append(times[-1] - times[0])
        exposure += s.decision_time if s.decision_time is not None else times[-1]
        last: dict[int, float] = {}
        for e in s.events:
            counts[e.type_id] = counts.get(e.type_id, 0) + 1
            if e.type_id in last:
                gaps.setdefault(e.type_id, []).append(e.time - last[e.type_id])
            last[e.type_id] = e.time
    per_type = []
    for m in sorted(counts):
        hist, _ = np.histogram(gaps.get(m, []), bins=HIST_EDGES)
        per_type.append({
            "type": m,
            "count": counts[m],
            "mean_interarrival": exposure / counts[m],
            "gap_histogram": hist.tolist(),
        })
    n_events = sum(counts.values())
    labels = [s.label for s in samples]
    return {
        "n_samples": len(samples),
        "n_events": n_events,
        "positive_rate": float(np.mean(labels)),
        "avg_length": n_events / len(samples),
        "max_length": max(len(s.events) for s in samples),
        "avg_timespan_hours": float(np.mean(spans)),
        "n_types_seen": len(per_type),
        "histogram_edges_hours": HIST_EDGES.tolist(),
        "per_type": per_type,
    }
