import numpy as np
import pytest

from hetseq import training
from hetseq.events import Event, Sample, Schema


def random_sample(rng, schema, n_events, label=None, sid="x", t_max=10.0):
    times = np.sort(rng.uniform(0.0, t_max, size=n_events))
    evs = []
    for t in times:
        m = int(rng.integers(schema.M))
        cats = tuple(int(c) for c in rng.choice(schema.C, size=int(rng.integers(0, 3)), replace=False))
        slots = rng.choice(schema.U, size=int(rng.integers(0, 3)), replace=False)
        nums = tuple((int(u), float(rng.standard_normal())) for u in slots)
        evs.append(Event(m, float(t), cats, nums))
    lab = int(rng.integers(2)) if label is None else label
    return Sample(sid, lab, tuple(evs))


def random_params(schema, seed=0, hidden=4, embed=3, filt=2, scale=0.5, r_on=(0.2, 0.9), tau=(0.0, 1.5)):
    """Small model with every weight drawn away from zero."""
    rng = np.random.default_rng(seed)
    config = training.TrainConfig(embed_dim=embed, hidden=hidden, filter_hidden=filt, tau_init_range=tau, seed=seed)
    params = training.init_params(training.Sizes.from_schema(schema, config), config)
    for name in params.trainable():
        if name not in ("tau", "shift", "r_on"):
            params[name] = rng.uniform(-scale, scale, size=params[name].shape)
    params["r_on"] = rng.uniform(*r_on, size=hidden)
    return params


@pytest.fixture
def schema():
    return Schema(M=4, C=6, U=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
