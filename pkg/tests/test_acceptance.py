"""Acceptance suite: one test (or group) per criterion, each logging a PASS/FAIL line.

The synthetic benchmark group (criterion 6) trains ten models and takes
around ten CPU-minutes.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from hetseq import cells, cli, kernel, metrics, training
from hetseq.cells import CellState, GateVariant
from hetseq.events import Schema
from hetseq.metrics import ScoredSet

from conftest import ACCEPTANCE_LINES, random_params

BENCH = Path(__file__).resolve().parent.parent / "benchmarks"
DRAWS = 1000


def record(tag, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_config(rng):
    schema = Schema(M=3, C=4, U=2)
    H = int(rng.integers(1, 9))
    p = random_params(schema, seed=int(rng.integers(2**31)), hidden=H, scale=float(rng.uniform(0.1, 3.0)),
                      r_on=(0.01, 0.99), tau=(-1.0, 3.0))
    p["shift"] = rng.uniform(-10, 10, size=H)
    if rng.random() < 0.2:
        p["b_e"] = np.full(H, -800.0)  # filter output underflows to exactly zero
    state = CellState(rng.standard_normal(H) * 2, np.tanh(rng.standard_normal(H)))
    return p, state, rng.standard_normal(3), rng.standard_normal(3), float(rng.uniform(0, 100))


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    out = cli.gradcheck(seed=0)
    elapsed = time.perf_counter() - t0
    ok = out["max_relative_error"] < 1e-5 and elapsed < 10.0
    record("criterion 1 (gradient check)", ok,
           f"max relative error {out['max_relative_error']:.2e} (< 1e-5), {elapsed:.1f} s (< 10 s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_closed_gate_retention():
    rng = np.random.default_rng(2)
    closed = changed = 0
    for _ in range(DRAWS):
        # reference cell, one step from a random state
        p, state, s, x, t = random_config(rng)
        variant = GateVariant.FULL if rng.random() < 0.5 else GateVariant.PHASE_ONLY
        H = len(state.c)
        j = cells.select_gate(variant, cells.event_filter(s, p), cells.phase_gate(t, p, 0.0), H)
        new = cells.helstm_step(x, s, t, state, p, variant, 0.0)
        zero = j == 0.0
        closed += int(zero.sum())
        changed += int(np.sum(zero & ((new.c != state.c) | (new.h != state.h))))

        # batched kernel, a short sequence with phase-gate values at random times
        T, B = 6, 2
        times = np.sort(rng.uniform(0, 100, size=T * B))
        J = kernel.phase_forward(times, p["tau"], p["shift"], p["r_on"], 0.0).reshape(T, B, H)
        zx = rng.standard_normal((T, B, 4 * H)) * 2
        w_h = np.concatenate([p[n] for n in ("W_ih", "W_fh", "W_ch", "W_oh")])
        cs, hs, *_ = kernel.forward(np.ascontiguousarray(zx), np.ascontiguousarray(J), w_h,
                                    p["w_ic"], p["w_fc"], p["w_oc"])
        zero = J == 0.0
        closed += int(zero.sum())
        changed += int(np.sum(zero & ((cs[1:] != cs[:-1]) | (hs[1:] != hs[:-1]))))
    ok = changed == 0 and closed > 0
    record("criterion 2 (closed-gate retention)", ok,
           f"{DRAWS} configurations, {closed} closed neuron-steps, {changed} changed")


# ---------------------------------------------------------------- 3


def test_criterion_3_reduction_identities():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(DRAWS):
        p, state, s, x, t = random_config(rng)
        H = len(state.c)
        alpha = float(rng.choice([0.0, 1e-3]))
        full = cells.helstm_step(x, s, t, state, p, GateVariant.FULL, alpha, e_s=np.ones(H))
        phase = cells.helstm_step(x, s, t, state, p, GateVariant.PHASE_ONLY, alpha)
        mismatches += int(np.any(full.c != phase.c) or np.any(full.h != phase.h))
        opened = cells.helstm_step(x, s, t, state, p, GateVariant.FULL, alpha, j=np.ones(H))
        c_t, h_t, _ = cells.lstm_step(x, state, p)
        mismatches += int(np.any(opened.c != c_t) or np.any(opened.h != h_t))
    record("criterion 3 (reduction identities)", mismatches == 0,
           f"{DRAWS} draws x 2 identities, {mismatches} not bit-identical")


# ---------------------------------------------------------------- 4


def phase_oracle(t, tau, shift, r_on, alpha):
    """Piecewise triangular gate written out with scalar math."""
    m = math.fmod(t - shift, tau)
    if m < 0:
        m += tau
    phi = m / tau
    if phi < 0.5 * r_on:
        return 2 * phi / r_on
    if phi < r_on:
        return 2 - 2 * phi / r_on
    return alpha * phi


def test_criterion_4_phase_gate_oracle_and_open_fraction():
    rng = np.random.default_rng(4)
    R, H = 1000, 100  # 10^5 (t, tau, shift, r_on) tuples
    times = rng.uniform(0, 500, size=R)
    tau = np.exp(rng.uniform(-2, 5, size=H))
    shift = rng.uniform(-50, 50, size=H)
    r_on = rng.uniform(0.001, 0.999, size=H)
    bad = 0
    for alpha in (0.0, 1e-3):
        oracle = np.array([[phase_oracle(t, tau[n], shift[n], r_on[n], alpha) for n in range(H)] for t in times])
        direct = np.array([cells.phase_gate(float(t), {"tau": tau, "shift": shift, "r_on": r_on}, alpha)
                           for t in times])
        bad += int(np.sum(direct != oracle))
        for name in ("python", "cython") if kernel.compiled is not None else ("python",):
            got = kernel.get_backend(name).phase_forward(times, tau, shift, r_on, alpha)
            bad += int(np.sum(got != oracle))

    # open fraction: share of a fine time grid over one period where k > 0
    worst = 0.0
    for r in (0.05, 0.2, 0.5, 0.9):
        grid = 4.0 * (np.arange(100000) + 0.5) / 100000
        k = kernel.phase_forward(grid, np.array([4.0]), np.array([0.7]), np.array([r]), 0.0)
        worst = max(worst, abs(np.mean(k > 0) - r) / r)
    ok = bad == 0 and worst < 0.01
    record("criterion 4 (phase gate)", ok,
           f"10^5 tuples x 2 leaks, {bad} mismatches vs oracle; open fraction rel. error {worst:.1e} (< 1%)")


# ---------------------------------------------------------------- 5


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    credit2 = sum(2 if a > b else 1 if a == b else 0 for a in pos for b in neg)
    return credit2 / (2 * len(pos) * len(neg))


def brute_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])  # stable: ties keep input order
    ranked = [labels[i] for i in order]
    precisions = [sum(ranked[:r]) / r for r in range(1, len(ranked) + 1) if ranked[r - 1]]
    return math.fsum(precisions) / sum(labels)


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(DRAWS):
        n = int(rng.integers(2, 201))
        scores = rng.integers(0, 50, size=n) / 50 if rng.random() < 0.5 else rng.random(n)
        labels = rng.integers(0, 2, size=n)
        labels[rng.choice(n, 2, replace=False)] = [0, 1]
        sc = ScoredSet(scores, labels)
        bad += metrics.auc(sc) != pairwise_auc(list(scores), list(labels))
        bad += metrics.average_precision(sc) != brute_ap(list(scores), list(labels))
    auc_example = metrics.auc(ScoredSet([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))
    ap_example = metrics.average_precision(ScoredSet([0.8, 0.6, 0.4], [1, 0, 1]))
    ok = bad == 0 and auc_example == 0.75 and abs(ap_example - 5 / 6) < 1e-15
    record("criterion 5 (metric oracles)", ok,
           f"{DRAWS} scored sets, {bad} mismatches; worked examples AUC {auc_example}, AP {ap_example:.6f}")


# ---------------------------------------------------------------- 6


class Memo:
    """Train each (variant, period range) once; share runs across the tables."""

    def __init__(self):
        self.rows = {}

    def __call__(self, schema, train, valid, test, config):
        key = (config.variant, tuple(config.tau_init_range))
        if key not in self.rows:
            self.rows[key] = cli.run_variant(schema, train, valid, test, config)
        return self.rows[key]


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    t0 = time.process_time()
    data = tmp_path_factory.mktemp("bench") / "data"
    assert cli.main(["-q", "generate", "--config", str(BENCH / "synthetic.gen"), "--out", str(data)]) == 0
    schema, train, valid, test = cli.load_splits(data)
    config = training.load_train_config(BENCH / "synthetic.train")
    memo = Memo()
    variants = (GateVariant.FULL, GateVariant.PHASE_ONLY, GateVariant.FILTER_ONLY, GateVariant.ALWAYS_OPEN)
    ablation = cli.ablation_table(schema, train, valid, test, config, variants, runner=memo)["variants"]
    periods = cli.period_table(schema, train, valid, test, config, runner=memo)
    full_params = memo.rows[(GateVariant.FULL, config.tau_init_range)]["_params"]
    by_length = {n: cli.test_report(full_params, test, schema, GateVariant.FULL, n) for n in (20, 1000)}
    return {
        "ablation": ablation, "periods": periods, "by_length": by_length,
        "cpu_seconds": time.process_time() - t0, "n_samples": len(train) + len(valid) + len(test),
    }


@pytest.mark.slow
def test_criterion_6a_full_beats_plain_lstm(benchmark):
    rows = benchmark["ablation"]
    full, plain = rows["full_event_gate"]["final_auc"], rows["always_open"]["final_auc"]
    record("criterion 6a (full vs always_open AUC)", full - plain >= 0.03,
           f"full {full:.4f}, always_open {plain:.4f}, margin {full - plain:+.4f} (>= 0.03)")


@pytest.mark.slow
def test_criterion_6b_ablation_ordering(benchmark):
    rows = benchmark["ablation"]
    full_ap = rows["full_event_gate"]["final_ap"]
    singles = {v: rows[v]["final_ap"] for v in ("phase_only", "filter_only")}
    first = {v: rows[v]["first_epoch_ap"] for v in ("full_event_gate", "phase_only", "filter_only")}
    ok_final = all(full_ap >= ap for ap in singles.values())
    ok_first = first["full_event_gate"] > first["filter_only"] and first["phase_only"] > first["filter_only"]
    record("criterion 6b (ablation ordering)", ok_final and ok_first,
           f"final AP full {full_ap:.4f} vs phase_only {singles['phase_only']:.4f}, "
           f"filter_only {singles['filter_only']:.4f}; first-epoch AP full {first['full_event_gate']:.4f}, "
           f"phase_only {first['phase_only']:.4f} vs filter_only {first['filter_only']:.4f}")


@pytest.mark.slow
def test_criterion_6c_longer_input_helps(benchmark):
    short, long_ = benchmark["by_length"][20]["auc"], benchmark["by_length"][1000]["auc"]
    record("criterion 6c (AUC by input length)", long_ >= short,
           f"AUC at length 1000 {long_:.4f} vs length 20 {short:.4f}")


@pytest.mark.slow
def test_criterion_6d_period_robustness(benchmark):
    spread = benchmark["periods"]["ap_spread"]
    ok = spread["full_event_gate"] <= spread["phase_only"]
    record("criterion 6d (AP spread over period ranges)", ok,
           f"full {spread['full_event_gate']:.4f} vs phase_only {spread['phase_only']:.4f}")


@pytest.mark.slow
def test_criterion_6_budget(benchmark):
    cpu = benchmark["cpu_seconds"]
    ok = cpu < 1800 and benchmark["n_samples"] == 5000
    record("criterion 6 (benchmark budget)", ok,
           f"{benchmark['n_samples']} samples, M=50, {cpu:.0f} CPU-seconds (< 1800)")


# ---------------------------------------------------------------- 7


def test_criterion_7_deterministic_training(tmp_path):
    gen = tmp_path / "gen.cfg"
    gen.write_text("M=10\nC=20\nU=10\nn_samples=300\nperiod_max=24.0\nseed=7\n")
    cfg = tmp_path / "train.cfg"
    cfg.write_text("hidden=8\nembed_dim=4\nfilter_hidden=4\nbatch_size=16\nmax_epochs=4\npatience=2\nlr=0.003\n")
    assert cli.main(["-q", "generate", "--config", str(gen), "--out", str(tmp_path / "data")]) == 0
    outs = []
    for run in ("a", "b"):
        ckpt = tmp_path / f"{run}.ckpt"
        assert cli.main(["-q", "train", "--config", str(cfg), "--data", str(tmp_path / "data"),
                         "--out", str(ckpt), "--seed", "11"]) == 0
        outs.append((ckpt.read_bytes(), cli.history_path(ckpt).read_bytes()))
    same_ckpt = outs[0][0] == outs[1][0]
    same_hist = outs[0][1] == outs[1][1]
    record("criterion 7 (deterministic training)", same_ckpt and same_hist,
           f"checkpoints identical: {same_ckpt}, histories identical: {same_hist}")
