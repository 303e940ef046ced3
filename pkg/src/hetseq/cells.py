"""Recurrent cells: peephole LSTM step, event filter, phase gate, event gate.

Every function accepts parameters as raw arrays (eager evaluation) or as tape
nodes from :meth:`hetseq.numeric.Graph.bind` (recorded for the reverse pass).
The batched training path lives in :mod:`hetseq.batched`; these per-event
functions are its reference.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from hetseq import numeric as nm
from hetseq.encoder import encode_event
from hetseq.events import Sample

TRAIN_LEAK = 1e-3
TAU_MIN = 1e-2
R_ON_MIN, R_ON_MAX = 1e-3, 1.0 - 1e-3

LSTM_PARAMS = (
    "W_ix", "W_fx", "W_cx", "W_ox",
    "W_ih", "W_fh", "W_ch", "W_oh",
    "w_ic", "w_fc", "w_oc",
    "b_i", "b_f", "b_c", "b_o",
)
FILTER_PARAMS = ("W_ms", "b_m", "W_em", "b_e")
PHASE_PARAMS = ("tau", "shift", "r_on")
HEAD_PARAMS = ("w_p", "b_p")


class ParameterDomainError(ValueError):
    pass


class GateVariant(str, enum.Enum):
    FULL = "full_event_gate"
    PHASE_ONLY = "phase_only"
    FILTER_ONLY = "filter_only"
    ALWAYS_OPEN = "always_open"

    @property
    def uses_phase(self) -> bool:
        return self in (GateVariant.FULL, GateVariant.PHASE_ONLY)

    @property
    def uses_filter(self) -> bool:
        return self in (GateVariant.FULL, GateVariant.FILTER_ONLY)

    @classmethod
    def parse(cls, value) -> "GateVariant":
        if isinstance(value, cls):
            return value
        aliases = {"full": cls.FULL, "event_gate": cls.FULL, "lstm": cls.ALWAYS_OPEN}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown gate variant {value!r}; choose one of {names}") from None


@dataclass
class CellState:
    c: object
    h: object

    @classmethod
    def zeros(cls, hidden: int) -> "CellState":
        return cls(np.zeros(hidden), np.zeros(hidden))


# ----------------------------------------------------------------------------
# peephole LSTM


def lstm_step(x, state: CellState, p: Mapping):
    """Candidate update ``(c_tilde, h_tilde, o)`` of a peephole LSTM.

    All three peepholes read the previous cell, including the output gate.
    """
    c, h = state.c, state.h

    def pre(wx, wh, bias):
        return nm.add(nm.add(nm.matmul(p[wx], x), nm.matmul(p[wh], h)), p[bias])

    i = nm.sigmoid(nm.add(pre("W_ix", "W_ih", "b_i"), nm.mul(p["w_ic"], c)))
    f = nm.sigmoid(nm.add(pre("W_fx", "W_fh", "b_f"), nm.mul(p["w_fc"], c)))
    g = nm.tanh(pre("W_cx", "W_ch", "b_c"))
    o = nm.sigmoid(nm.add(pre("W_ox", "W_oh", "b_o"), nm.mul(p["w_oc"], c)))
    c_tilde = nm.add(nm.mul(f, c), nm.mul(i, g))
    h_tilde = nm.mul(o, nm.tanh(c_tilde))
    return c_tilde, h_tilde, o


# ----------------------------------------------------------------------------
# gates


def event_filter(s, p: Mapping):
    hidden = nm.tanh(nm.add(nm.matmul(p["W_ms"], s), p["b_m"]))
    return nm.sigmoid(nm.add(nm.matmul(p["W_em"], hidden), p["b_e"]))


def phase_position(t, tau, shift):
    """``(phi, wraps)``: phase in [0, 1] and the number of whole periods elapsed.

    The remainder is the non-negative one, also for ``t < shift``.
    """
    x = t - shift
    return np.mod(x, tau) / tau, np.floor_divide(x, tau)


def phase_branch(phi, r_on):
    """0 = rising, 1 = falling, 2 = closed (leak)."""
    return np.where(phi < 0.5 * r_on, 0, np.where(phi < r_on, 1, 2))


def phase_regime(t, tau, shift, r_on) -> bytes:
    """Hashable signature of the piecewise regime every neuron is in."""
    phi, wraps = phase_position(t, np.asarray(tau), np.asarray(shift))
    branch = phase_branch(phi, np.asarray(r_on))
    return branch.astype(np.int8).tobytes() + np.asarray(wraps, dtype=np.float64).tobytes()


def phase_gate(t: float, p: Mapping, alpha: float = TRAIN_LEAK):
    """Triangular periodic openness ``k`` per neuron, leaking ``alpha * phi`` when closed."""
    tau_n, shift_n, r_on_n = p["tau"], p["shift"], p["r_on"]
    tau, shift, r_on = nm._val(tau_n), nm._val(shift_n), nm._val(r_on_n)
    if np.any(tau <= 0):
        raise ParameterDomainError(f"phase period must be positive, got min {np.min(tau)}")
    x = t - shift
    phi = np.mod(x, tau) / tau
    branch = phase_branch(phi, r_on)
    k = np.where(branch == 0, 2 * phi / r_on, np.where(branch == 1, 2 - 2 * phi / r_on, alpha * phi))

    def vjp(g):
        dk_dphi = np.where(branch == 0, 2 / r_on, np.where(branch == 1, -2 / r_on, alpha))
        dk_dr = np.where(
            branch == 0, -2 * phi / r_on**2, np.where(branch == 1, 2 * phi / r_on**2, 0.0)
        )
        dphi = g * dk_dphi
        return dphi * (-x / tau**2), dphi * (-1.0 / tau), g * dk_dr

    if any(isinstance(a, nm.Node) for a in (tau_n, shift_n, r_on_n)):
        return nm.custom(k, (tau_n, shift_n, r_on_n), vjp, what="phase_gate")
    return k


def event_gate(e_s, k_t):
    return nm.mul(e_s, k_t)


def gated_update(c_tilde, h_tilde, j, state: CellState) -> CellState:
    """``new = j * candidate + (1 - j) * old`` for both cell and hidden."""
    keep = nm.sub(1.0, j)
    c = nm.add(nm.mul(j, c_tilde), nm.mul(keep, state.c))
    h = nm.add(nm.mul(j, h_tilde), nm.mul(keep, state.h))
    return CellState(c, h)


def select_gate(variant: GateVariant, e_s, k_t, hidden: int):
    if variant is GateVariant.FULL:
        return event_gate(e_s, k_t)
    if variant is GateVariant.PHASE_ONLY:
        return k_t
    if variant is GateVariant.FILTER_ONLY:
        return e_s
    return np.ones(hidden)


def helstm_step(
    x, s, t: float, state: CellState, p: Mapping, variant=GateVariant.FULL,
    alpha: float = TRAIN_LEAK, *, e_s=None, j=None,
) -> CellState:
    """One HE-LSTM update.

    ``e_s`` and ``j`` override the computed filter output / event gate; they
    exist for checking the reduction identities.
    """
    variant = GateVariant.parse(variant)
    c_tilde, h_tilde, _ = lstm_step(x, state, p)
    if j is None:
        hidden = np.shape(nm._val(p["b_i"]))[0]
        if e_s is None and variant.uses_filter:
            e_s = event_filter(s, p)
        k_t = phase_gate(t, p, alpha) if variant.uses_phase else None
        j = select_gate(variant, e_s, k_t, hidden)
    return gated_update(c_tilde, h_tilde, j, state)


def predict(h, p: Mapping):
    return nm.sigmoid(nm.add(nm.matmul(p["w_p"], h), p["b_p"]))


def run_sequence(sample: Sample, p: Mapping, variant=GateVariant.FULL, alpha: float = 0.0):
    """Final state and prediction for one sample (arrays or tape nodes)."""
    if not sample.events:
        raise nm.ContractError(f"sample {sample.id} has no events")
    variant = GateVariant.parse(variant)
    hidden = np.shape(nm._val(p["b_i"]))[0]
    state = CellState.zeros(hidden)
    for event in sample.events:
        s, x = encode_event(event, p)
        state = helstm_step(x, s, event.time, state, p, variant, alpha)
    return state, predict(state.h, p)


def forward_sequence(sample: Sample, params: Mapping, variant=GateVariant.FULL, alpha: float = 0.0) -> float:
    """Predicted endpoint probability for one sample (inference leak by default)."""
    _, y = run_sequence(sample, params, variant, alpha)
    return float(nm._val(y))


def clamp_params(params) -> None:
    """Keep the phase gate well defined after an optimizer step."""
    if "tau" in params:
        np.maximum(params["tau"], TAU_MIN, out=params["tau"])
    if "r_on" in params:
        np.clip(params["r_on"], R_ON_MIN, R_ON_MAX, out=params["r_on"])
