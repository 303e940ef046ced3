import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from hetseq import cells, training
from hetseq import numeric as nm
from hetseq.cells import CellState, GateVariant
from hetseq.events import Event, Sample, Schema

from conftest import random_params


def zero_params(M=2, C=2, U=1, N=3, H=3, L=2):
    config = training.TrainConfig(embed_dim=N, hidden=H, filter_hidden=L)
    p = training.init_params(training.Sizes(M, C, U, N, H, L), config)
    for name in p.trainable():
        p[name] = np.zeros(p[name].shape)
    p["tau"] = np.full(H, 2.0)
    p["r_on"] = np.full(H, 0.5)
    return p


# ---------------------------------------------------------------- lstm_step


def test_lstm_zero_params():
    p = zero_params()
    c_t, h_t, o = cells.lstm_step(np.ones(3), CellState.zeros(3), p)
    assert_array_equal(o, 0.5)
    assert_array_equal(c_t, 0.0)
    assert_array_equal(h_t, 0.0)


def test_lstm_zero_params_halves_cell():
    p = zero_params()
    c_t, _, _ = cells.lstm_step(np.ones(3), CellState(np.ones(3), np.zeros(3)), p)
    assert_array_equal(c_t, 0.5)


def test_lstm_saturated_gates_remember():
    p = random_params(Schema(M=2, C=2, U=1), hidden=4)
    p["b_f"] = np.full(4, 20.0)
    p["b_i"] = np.full(4, -20.0)
    for n in ("W_fx", "W_ix", "W_fh", "W_ih"):
        p[n] = np.zeros(p[n].shape)
    p["w_ic"] = p["w_fc"] = np.zeros(4)
    c = np.array([0.3, -1.2, 2.0, 0.7])
    c_t, _, _ = cells.lstm_step(np.random.default_rng(0).standard_normal(3), CellState(c, np.ones(4)), p)
    assert_allclose(c_t, c, atol=1e-8)


def test_output_gate_peeks_at_previous_cell():
    p = zero_params()
    p["w_oc"] = np.ones(3)
    c = np.array([1.0, -1.0, 0.0])
    _, _, o = cells.lstm_step(np.zeros(3), CellState(c, np.zeros(3)), p)
    assert_allclose(o, 1 / (1 + np.exp(-c)))


# ---------------------------------------------------------------- event filter


def test_filter_zero_params_is_half():
    assert_array_equal(cells.event_filter(np.ones(3), zero_params()), 0.5)


def test_filter_large_bias_passes_everything():
    p = zero_params()
    p["b_e"] = np.full(3, 20.0)
    assert_allclose(cells.event_filter(np.ones(3), p), 1.0, atol=1e-8)


# ---------------------------------------------------------------- phase gate


@pytest.mark.parametrize(
    "t, alpha, expected",
    [(0.0, 0.001, 0.0), (0.25, 0.001, 0.5), (1.5, 0.001, 0.00075), (0.5, 0.0, 1.0)],
)
def test_phase_gate_examples(t, alpha, expected):
    p = {"tau": np.array([2.0]), "shift": np.array([0.0]), "r_on": np.array([0.5])}
    assert cells.phase_gate(t, p, alpha)[0] == pytest.approx(expected, abs=1e-15)


def test_phase_gate_peak_at_half_open():
    p = {"tau": np.array([4.0]), "shift": np.array([0.0]), "r_on": np.array([0.25])}
    assert cells.phase_gate(0.5, p, 0.0)[0] == 1.0


def test_phase_uses_non_negative_remainder():
    p = {"tau": np.array([2.0]), "shift": np.array([3.0]), "r_on": np.array([0.5])}
    # t - shift = -2.75 -> remainder 1.25 / 2 -> phi 0.625, closed
    assert cells.phase_gate(0.25, p, 0.001)[0] == pytest.approx(0.000625)


def test_phase_gate_rejects_non_positive_period():
    p = {"tau": np.array([0.0]), "shift": np.array([0.0]), "r_on": np.array([0.5])}
    with pytest.raises(cells.ParameterDomainError):
        cells.phase_gate(1.0, p)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 500), st.floats(0.05, 200), st.floats(-50, 50), st.floats(0.002, 0.998),
)
def test_phase_gate_range(t, tau, shift, r_on):
    p = {"tau": np.array([tau]), "shift": np.array([shift]), "r_on": np.array([r_on])}
    k = cells.phase_gate(t, p, 0.001)[0]
    assert 0.0 <= k <= 1.0


def test_phase_gate_tape_gradient():
    p = nm.ParameterSet({"tau": np.array([2.0, 5.0]), "shift": np.array([0.3, 1.0]), "r_on": np.array([0.4, 0.6])})

    def f(w):
        g = nm.Graph()
        return nm.total(cells.phase_gate(3.1, g.bind(w), 0.001))

    def regime(w):
        return cells.phase_regime(3.1, w["tau"], w["shift"], w["r_on"])

    assert nm.grad_check(f, p, 1e-6, regime=regime) < 1e-7


# ---------------------------------------------------------------- event gate / update


def test_event_gate_product():
    assert_array_equal(cells.event_gate(np.array([0.5, 1.0]), np.array([1.0, 0.2])), [0.5, 0.2])


def test_closed_gate_keeps_state_exactly():
    p = random_params(Schema(M=2, C=2, U=1), hidden=4)
    state = CellState(np.array([0.1, -0.2, 0.3, 5.0]), np.array([0.4, 0.5, -0.6, 0.7]))
    new = cells.helstm_step(np.ones(3), np.ones(3), 1.0, state, p, j=np.zeros(4))
    assert_array_equal(new.c, state.c)
    assert_array_equal(new.h, state.h)


def test_open_gate_is_plain_lstm():
    p = random_params(Schema(M=2, C=2, U=1), hidden=4)
    state = CellState(np.full(4, 0.2), np.full(4, -0.1))
    x = np.array([0.3, -0.7, 1.1])
    new = cells.helstm_step(x, x, 2.0, state, p, j=np.ones(4))
    c_t, h_t, _ = cells.lstm_step(x, state, p)
    assert_array_equal(new.c, c_t)
    assert_array_equal(new.h, h_t)


def test_always_open_variant_is_plain_lstm():
    p = random_params(Schema(M=2, C=2, U=1), hidden=4)
    state = CellState(np.full(4, 0.2), np.full(4, -0.1))
    x = np.array([0.3, -0.7, 1.1])
    new = cells.helstm_step(x, x, 2.0, state, p, GateVariant.ALWAYS_OPEN)
    c_t, h_t, _ = cells.lstm_step(x, state, p)
    assert_array_equal(new.c, c_t)
    assert_array_equal(new.h, h_t)


def test_filter_of_ones_reduces_to_phase_only():
    p = random_params(Schema(M=2, C=2, U=1), hidden=4)
    state = CellState(np.full(4, 0.2), np.full(4, -0.1))
    x = np.array([0.3, -0.7, 1.1])
    full = cells.helstm_step(x, x, 2.3, state, p, GateVariant.FULL, e_s=np.ones(4))
    phase = cells.helstm_step(x, x, 2.3, state, p, GateVariant.PHASE_ONLY)
    assert_array_equal(full.c, phase.c)
    assert_array_equal(full.h, phase.h)


@pytest.mark.parametrize("alias, variant", [("full", GateVariant.FULL), ("lstm", GateVariant.ALWAYS_OPEN)])
def test_variant_aliases(alias, variant):
    assert GateVariant.parse(alias) is variant


def test_unknown_variant():
    with pytest.raises(ValueError, match="unknown gate variant"):
        GateVariant.parse("bogus")


# ---------------------------------------------------------------- whole sequences


def test_forward_zero_params_is_half():
    p = zero_params()
    s = Sample("a", 1, (Event(0, 0.1, (1,), ((0, 2.0),)), Event(1, 0.7)))
    assert cells.forward_sequence(s, p) == 0.5


def test_forward_empty_sample_is_contract_error():
    with pytest.raises(nm.ContractError):
        cells.forward_sequence(Sample("a", 0, ()), zero_params())


def test_forward_single_event_by_hand():
    # H = N = 1, L = 1: every equation evaluated with scalars
    p = zero_params(M=1, C=1, U=1, N=1, H=1, L=1)
    vals = {
        "C_type": 0.4, "V_c": -0.3, "V_n": 0.8, "W_ix": 0.5, "W_fx": -0.2, "W_cx": 0.9, "W_ox": 0.3,
        "b_i": 0.1, "b_f": 1.0, "b_c": -0.1, "b_o": 0.2, "W_ms": 0.7, "b_m": 0.05, "W_em": 1.5,
        "b_e": -0.2, "tau": 4.0, "shift": 0.5, "r_on": 0.5, "w_p": 2.0, "b_p": -0.3,
    }
    for k, v in vals.items():
        p[k] = np.full(p[k].shape, v)
    t, v = 1.0, 1.5
    sample = Sample("a", 1, (Event(0, t, (0,), ((0, v),)),))

    sig = lambda z: 1 / (1 + math.exp(-z))
    s = 0.4
    x = s - 0.3 + math.tanh(v * 0.8)
    i, f, g, o = sig(0.5 * x + 0.1), sig(-0.2 * x + 1.0), math.tanh(0.9 * x - 0.1), sig(0.3 * x + 0.2)
    c_t = f * 0.0 + i * g
    h_t = o * math.tanh(c_t)
    e = sig(1.5 * math.tanh(0.7 * s + 0.05) - 0.2)
    phi = ((t - 0.5) % 4.0) / 4.0  # 0.125 < r_on / 2
    k = 2 * phi / 0.5
    j = e * k
    h = j * h_t
    y = sig(2.0 * h - 0.3)
    assert cells.forward_sequence(sample, p) == pytest.approx(y, rel=1e-14)


def test_simultaneous_identical_events_commute():
    p = random_params(Schema(M=3, C=3, U=2), hidden=4)
    a = Event(1, 2.0, (0,), ((1, 0.3),))
    b = Event(1, 2.0, (0,), ((1, 0.3),))
    early = Event(0, 1.0, (2,))
    y1 = cells.forward_sequence(Sample("a", 0, (early, a, b)), p)
    y2 = cells.forward_sequence(Sample("a", 0, (early, b, a)), p)
    assert y1 == y2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gate_ranges(seed):
    rng = np.random.default_rng(seed)
    schema = Schema(M=3, C=3, U=2)
    p = random_params(schema, seed=seed % 1000, hidden=5, scale=3.0)
    s = rng.standard_normal(3) * 3
    e = cells.event_filter(s, p)
    k = cells.phase_gate(float(rng.uniform(0, 100)), p, 0.001)
    j = cells.event_gate(e, k)
    assert np.all((e >= 0) & (e <= 1))
    assert np.all((k >= 0) & (k <= 1))
    assert np.all((j >= 0) & (j <= 1))


def test_clamp_params():
    p = nm.ParameterSet({"tau": np.array([-1.0, 3.0]), "r_on": np.array([0.0, 1.0])})
    cells.clamp_params(p)
    assert_array_equal(p["tau"], [cells.TAU_MIN, 3.0])
    assert_array_equal(p["r_on"], [cells.R_ON_MIN, cells.R_ON_MAX])
