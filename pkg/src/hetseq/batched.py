"""Padded mini-batch forward/backward for the full model.

Sequences are laid out time-major and right-padded; padded steps get an
event gate of exactly zero, so they leave the state untouched and receive no
gradient.  Everything outside the recurrence (embeddings, event filter,
phase gate, input projections, head) is vectorised over all steps at once;
the recurrence itself runs in :mod:`hetseq.kernel`.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

from hetseq import kernel
from hetseq.cells import GateVariant
from hetseq.encoder import NumericScaler
from hetseq.events import Sample, Schema
from hetseq.numeric import NumericError, ParameterSet

PROB_CLAMP = 1e-12
GATE_ORDER = ("i", "f", "c", "o")


@dataclass
class EncodedSample:
    """Flat integer/float arrays for one sample (attributes already scaled)."""

    label: int
    types: np.ndarray
    times: np.ndarray
    cat_step: np.ndarray
    cat_ids: np.ndarray
    num_step: np.ndarray
    num_slot: np.ndarray
    num_val: np.ndarray

    def __len__(self) -> int:
        return len(self.types)


def encode_sample(sample: Sample, scaler: NumericScaler | None = None) -> EncodedSample:
    cat_step, cat_ids, num_step, num_slot, num_val = [], [], [], [], []
    for step, e in enumerate(sample.events):
        for c in e.cat_ids:
            cat_step.append(step)
            cat_ids.append(c)
        for u, v in e.num_values:
            num_step.append(step)
            num_slot.append(u)
            num_val.append(v if scaler is None else scaler.transform_value(u, v))
    return EncodedSample(
        label=sample.label,
        types=np.fromiter((e.type_id for e in sample.events), dtype=np.int64, count=len(sample.events)),
        times=np.fromiter((e.time for e in sample.events), dtype=np.float64, count=len(sample.events)),
        cat_step=np.asarray(cat_step, dtype=np.int64),
        cat_ids=np.asarray(cat_ids, dtype=np.int64),
        num_step=np.asarray(num_step, dtype=np.int64),
        num_slot=np.asarray(num_slot, dtype=np.int64),
        num_val=np.asarray(num_val, dtype=np.float64),
    )


def encode_samples(samples: Sequence[Sample], scaler: NumericScaler | None = None) -> list[EncodedSample]:
    return [encode_sample(s, scaler) for s in samples]


@dataclass
class Batch:
    T: int
    B: int
    times: np.ndarray  # (T*B,)
    mask: np.ndarray  # (T*B,) 1.0 for real events
    a_type: sparse.csr_matrix  # (T*B, M)
    a_cat: sparse.csr_matrix  # (T*B, C)
    a_num: sparse.csr_matrix  # (T*B, U)
    labels: np.ndarray  # (B,)

    @classmethod
    def build(cls, items: Sequence[EncodedSample], schema: Schema) -> "Batch":
        B = len(items)
        T = max(len(it) for it in items)
        rows_type, cols_type = [], []
        rows_cat, cols_cat = [], []
        rows_num, cols_num, vals_num = [], [], []
        times = np.zeros(T * B)
        mask = np.zeros(T * B)
        for b, it in enumerate(items):
            n = len(it)
            rows = np.arange(n) * B + b
            rows_type.append(rows)
            cols_type.append(it.types)
            times[rows] = it.times
            mask[rows] = 1.0
            rows_cat.append(it.cat_step * B + b)
            cols_cat.append(it.cat_ids)
            rows_num.append(it.num_step * B + b)
            cols_num.append(it.num_slot)
            vals_num.append(it.num_val)

        def incidence(rows, cols, vals, width):
            rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
            cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
            vals = np.ones(len(rows)) if vals is None else np.concatenate(vals)
            return sparse.csr_matrix((vals, (rows, cols)), shape=(T * B, width))

        return cls(
            T=T,
            B=B,
            times=times,
            mask=mask,
            a_type=incidence(rows_type, cols_type, None, schema.M),
            a_cat=incidence(rows_cat, cols_cat, None, schema.C),
            a_num=incidence(rows_num, cols_num, vals_num, schema.U),
            labels=np.array([it.label for it in items], dtype=np.float64),
        )


def _stack(params: ParameterSet, names: Sequence[str]) -> np.ndarray:
    return np.concatenate([params[n] for n in names], axis=0)


@dataclass
class _Forward:
    S: np.ndarray
    X: np.ndarray
    num_act: np.ndarray | None
    filt_hidden: np.ndarray | None
    E: np.ndarray | None
    K: np.ndarray | None
    J: np.ndarray
    w_x: np.ndarray
    w_h: np.ndarray
    states: tuple
    h_last: np.ndarray
    probs: np.ndarray


def _forward(params: ParameterSet, batch: Batch, variant: GateVariant, alpha: float, keep: bool, backend) -> _Forward:
    T, B = batch.T, batch.B
    H = params["b_i"].shape[0]
    S = np.asarray(batch.a_type @ params["C_type"].T)
    X = S.copy()
    if batch.a_cat.nnz:
        X += batch.a_cat @ params["V_c"].T
    num_act = None
    if batch.a_num.nnz:
        num_act = np.tanh(batch.a_num @ params["V_n"].T)
        X += num_act

    E = filt_hidden = K = None
    if variant.uses_filter:
        filt_hidden = np.tanh(S @ params["W_ms"].T + params["b_m"])
        E = expit(filt_hidden @ params["W_em"].T + params["b_e"])
    if variant.uses_phase:
        tau, shift, r_on = params["tau"], params["shift"], params["r_on"]
        if np.any(tau <= 0):
            raise NumericError("phase period must be positive")
        K = backend.phase_forward(batch.times, tau, shift, r_on, alpha)

    if variant is GateVariant.FULL:
        J = E * K
    elif variant is GateVariant.PHASE_ONLY:
        J = K
    elif variant is GateVariant.FILTER_ONLY:
        J = E
    else:
        J = np.ones((T * B, H))
    J = J * batch.mask[:, None]

    w_x = _stack(params, ("W_ix", "W_fx", "W_cx", "W_ox"))
    b_x = _stack(params, ("b_i", "b_f", "b_c", "b_o"))
    w_h = np.ascontiguousarray(_stack(params, ("W_ih", "W_fh", "W_ch", "W_oh")))
    zx = (X @ w_x.T + b_x).reshape(T, B, 4 * H)
    states = backend.forward(
        np.ascontiguousarray(zx), np.ascontiguousarray(J.reshape(T, B, H)), w_h,
        params["w_ic"], params["w_fc"], params["w_oc"], keep,
    )
    h_last = states[1][T]
    probs = expit(h_last @ params["w_p"] + params["b_p"])
    return _Forward(S, X, num_act, filt_hidden, E, K, J, w_x, w_h, states, h_last, probs)


def predict_batch(params, batch: Batch, variant=GateVariant.FULL, alpha: float = 0.0, backend=None) -> np.ndarray:
    backend = backend or kernel.get_backend()
    fwd = _forward(params, batch, GateVariant.parse(variant), alpha, keep=False, backend=backend)
    return fwd.probs


def bce_terms(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    y = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(labels * np.log(y) + (1.0 - labels) * np.log(1.0 - y))


def loss_and_grad(
    params: ParameterSet, batch: Batch, variant=GateVariant.FULL, alpha: float = 1e-3, backend=None,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch; gradients are added to ``params.grads``."""
    variant = GateVariant.parse(variant)
    backend = backend or kernel.get_backend()
    T, B = batch.T, batch.B
    H = params["b_i"].shape[0]
    fwd = _forward(params, batch, variant, alpha, keep=True, backend=backend)
    y_hat = batch.labels
    loss = float(bce_terms(fwd.probs, y_hat).mean())
    if not np.isfinite(loss):
        raise NumericError("batch loss is not finite")
    grads = params.grads

    # head
    probs = fwd.probs
    y = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (probs >= PROB_CLAMP) & (probs <= 1.0 - PROB_CLAMP)
    d_y = (-y_hat / y + (1.0 - y_hat) / (1.0 - y)) * inside / B
    d_logit = d_y * probs * (1.0 - probs)
    grads["w_p"] += fwd.h_last.T @ d_logit
    grads["b_p"] += d_logit.sum()
    dh_last = np.outer(d_logit, params["w_p"])

    # recurrence
    cs, hs, gates, ctil, htil = fwd.states
    dzx, dj, dw_h, dw_ic, dw_fc, dw_oc, _, _ = backend.backward(
        dh_last, np.zeros((B, H)), np.ascontiguousarray(fwd.J.reshape(T, B, H)), fwd.w_h,
        params["w_ic"], params["w_fc"], params["w_oc"], cs, hs, gates, ctil, htil,
    )
    for n, block in zip(("W_ih", "W_fh", "W_ch", "W_oh"), np.split(dw_h, 4, axis=0)):
        grads[n] += block
    grads["w_ic"] += dw_ic
    grads["w_fc"] += dw_fc
    grads["w_oc"] += dw_oc

    dzx = dzx.reshape(T * B, 4 * H)
    d_wx = dzx.T @ fwd.X
    for n, block in zip(("W_ix", "W_fx", "W_cx", "W_ox"), np.split(d_wx, 4, axis=0)):
        grads[n] += block
    for n, block in zip(("b_i", "b_f", "b_c", "b_o"), np.split(dzx.sum(axis=0), 4)):
        grads[n] += block
    dX = dzx @ fwd.w_x

    # event gate factors
    dJ = dj.reshape(T * B, H) * batch.mask[:, None]
    dE = dK = None
    if variant is GateVariant.FULL:
        dE, dK = dJ * fwd.K, dJ * fwd.E
    elif variant is GateVariant.PHASE_ONLY:
        dK = dJ
    elif variant is GateVariant.FILTER_ONLY:
        dE = dJ

    dS = dX.copy()
    if dE is not None:
        d_pre_e = dE * fwd.E * (1.0 - fwd.E)
        grads["b_e"] += d_pre_e.sum(axis=0)
        grads["W_em"] += d_pre_e.T @ fwd.filt_hidden
        d_pre_m = (d_pre_e @ params["W_em"]) * (1.0 - fwd.filt_hidden**2)
        grads["b_m"] += d_pre_m.sum(axis=0)
        grads["W_ms"] += d_pre_m.T @ fwd.S
        dS += d_pre_m @ params["W_ms"]
    if dK is not None:
        d_tau, d_shift, d_r = backend.phase_backward(
            np.ascontiguousarray(dK), batch.times, params["tau"], params["shift"], params["r_on"], alpha,
        )
        grads["tau"] += d_tau
        grads["shift"] += d_shift
        grads["r_on"] += d_r

    # embeddings
    grads["C_type"] += np.asarray(batch.a_type.T @ dS).T
    if batch.a_cat.nnz:
        grads["V_c"] += np.asarray(batch.a_cat.T @ dX).T
    if fwd.num_act is not None:
        grads["V_n"] += np.asarray(batch.a_num.T @ (dX * (1.0 - fwd.num_act**2))).T
    return loss, probs


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HETSEQ_THREADS", "1")))
    except ValueError:
        return 1


def predict(
    params: ParameterSet,
    items: Sequence[EncodedSample],
    schema: Schema,
    variant=GateVariant.FULL,
    alpha: float = 0.0,
    batch_size: int = 64,
    threads: int | None = None,
) -> np.ndarray:
    """Probabilities for every item, in input order.

    Items are grouped by length to limit padding.  With more than one worker,
    batches are evaluated concurrently against the same read-only parameters.
    """
    variant = GateVariant.parse(variant)
    if not items:
        return np.zeros(0)
    order = sorted(range(len(items)), key=lambda i: (len(items[i]), i))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def run(chunk):
        return predict_batch(params, Batch.build([items[i] for i in chunk], schema), variant, alpha)

    threads = threads or worker_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    out = np.empty(len(items))
    for chunk, probs in zip(chunks, results):
        out[chunk] = probs
    return out
