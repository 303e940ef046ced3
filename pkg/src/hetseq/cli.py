"""Command-line entry point: ``hetseq <command> [options]``.

Exit codes: 0 ok, 1 check failed, 2 usage or configuration error,
3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from hetseq import batched, datagen, events, metrics, training
from hetseq import numeric as nm
from hetseq.cells import TRAIN_LEAK, GateVariant, phase_regime

log = logging.getLogger("hetseq")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
SPLIT = (0.7, 0.1, 0.2)
SPLIT_SEED = 0
PERIOD_RANGES = ((1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (4.0, 5.0))
SWEEP_LENGTHS = (20, 50, 100, 200, 500, 1000)
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def emit(text: str, out: str | None) -> None:
    if out:
        events.atomic_write_text(out, text)
    sys.stdout.write(text)


# ----------------------------------------------------------------------------
# loading helpers


def load_gen_config(path, seed=None) -> datagen.GenConfig:
    pairs = training.parse_key_values(Path(path).read_text(encoding="utf-8"), str(path)) if path else {}
    try:
        config = training.dataclass_from_pairs(datagen.GenConfig, pairs, str(path or "<defaults>"))
    except datagen.GenerationError as exc:
        raise training.ConfigError(str(exc)) from None
    return config.replace(seed=seed) if seed is not None else config


def load_config(args) -> training.TrainConfig:
    config = training.load_train_config(args.config) if args.config else training.TrainConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "variant", None):
        changes["variant"] = GateVariant.parse(args.variant)
    return config.replace(**changes) if changes else config


def load_data(data) -> tuple[events.Schema, list[events.Sample]]:
    if not data:
        raise UsageError("--data is required")
    dataset_path, schema_path = events.resolve_data_paths(data)
    schema = events.load_schema(schema_path)
    return schema, events.load_dataset(dataset_path, schema)


def load_splits(data):
    schema, samples = load_data(data)
    train, valid, test = events.split(samples, SPLIT, SPLIT_SEED)
    return schema, train, valid, test


def history_path(checkpoint) -> Path:
    return Path(str(checkpoint) + ".history.jsonl")


# ----------------------------------------------------------------------------
# experiment drivers (shared with the sweeps)


def test_report(params, samples, schema, variant, length=None) -> dict:
    if length is not None:
        samples = [events.truncate_to_length(s, length) for s in samples]
    items = batched.encode_samples(samples, training.scaler_of(params))
    probs = batched.predict(params, items, schema, variant, alpha=0.0)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return metrics.report(metrics.ScoredSet(probs, labels))


test_report.__test__ = False


def run_variant(schema, train, valid, test, config: training.TrainConfig) -> dict:
    """Train one configuration; final (best-validation) and first-epoch test metrics."""
    t0 = time.process_time()
    result = training.train(train, valid, config, schema)
    final = test_report(result.params, test, schema, config.variant)
    first = test_report(result.first_epoch_params, test, schema, config.variant)
    return {
        "variant": config.variant.value,
        "tau_init_range": list(config.tau_init_range),
        "epochs": len(result.history),
        "best_epoch": result.best_epoch,
        "final_auc": final["auc"],
        "final_ap": final["ap"],
        "final_entropy": final["entropy"],
        "first_epoch_auc": first["auc"],
        "first_epoch_ap": first["ap"],
        "first_epoch_entropy": first["entropy"],
        "cpu_seconds": round(time.process_time() - t0, 1),
        "_params": result.params,
    }


def public(row: dict) -> dict:
    return {k: v for k, v in row.items() if not k.startswith("_")}


def ablation_table(schema, train, valid, test, config, variants=None, runner=run_variant) -> dict:
    variants = variants or (GateVariant.PHASE_ONLY, GateVariant.FILTER_ONLY, GateVariant.FULL)
    rows = {}
    for v in variants:
        log.info("ablate: training %s", v.value)
        rows[v.value] = public(runner(schema, train, valid, test, config.replace(variant=v)))
    return {"variants": rows}


def period_table(schema, train, valid, test, config, runner=run_variant) -> dict:
    cells = []
    for variant in (GateVariant.FULL, GateVariant.PHASE_ONLY):
        for rng_ in PERIOD_RANGES:
            log.info("sweep-period: %s tau in exp(U%s)", variant.value, rng_)
            row = runner(schema, train, valid, test, config.replace(variant=variant, tau_init_range=rng_))
            cells.append({k: row[k] for k in ("variant", "tau_init_range", "final_auc", "final_ap")})
    spread = {}
    for variant in (GateVariant.FULL, GateVariant.PHASE_ONLY):
        aps = [c["final_ap"] for c in cells if c["variant"] == variant.value]
        spread[variant.value] = max(aps) - min(aps)
    return {"cells": cells, "ap_spread": spread}


# ----------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    config = load_gen_config(args.config, args.seed)
    out = Path(args.out or "data")
    ds = datagen.build(config)
    events.save_schema(ds.schema, out / "schema.json")
    events.save_dataset(ds.samples, out / "dataset.jsonl")
    stats = datagen.describe(ds.samples, ds.schema)
    rule = ds.rule
    stats["rule"] = {
        "trigger_type": rule.trigger_type, "trigger_slot": rule.trigger_slot,
        "context_type": rule.context_type, "context_value": rule.context_value,
        "delta": rule.delta, "final_window": rule.final_window, "theta": rule.theta,
    }
    events.atomic_write_text(out / "stats.json", dumps(stats))
    print(dumps({k: stats[k] for k in ("n_samples", "n_events", "positive_rate", "avg_length")}), end="")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args)
    schema, train, valid, _ = load_splits(args.data)
    out = Path(args.out or "model.ckpt")
    meta = {"config": config.to_text(), "schema": schema.to_dict(), "variant": config.variant.value}
    try:
        result = training.train(train, valid, config, schema)
    except training.TrainingDiverged as exc:
        if exc.last_good is not None:
            training.save_checkpoint(exc.last_good, out, meta)
        events.atomic_write_text(history_path(out), training.TrainResult(None, exc.history, None, 0).history_text())
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    training.save_checkpoint(result.params, out, dict(meta, best_epoch=result.best_epoch))
    events.atomic_write_text(history_path(out), result.history_text())
    last = result.history[result.best_epoch - 1]
    print(dumps({"best_epoch": result.best_epoch, "epochs": len(result.history), "valid_auc": last.valid_auc}), end="")
    return EXIT_OK


def load_model(checkpoint, schema: events.Schema):
    if not checkpoint:
        raise UsageError("--checkpoint is required")
    params, meta = training.load_checkpoint_with_meta(checkpoint)
    pairs = training.parse_key_values(meta.get("config", ""), str(checkpoint))
    config = training.dataclass_from_pairs(training.TrainConfig, pairs, str(checkpoint))
    expected = training.Sizes.from_schema(schema, config).shapes()
    training.parse_checkpoint(Path(checkpoint).read_bytes(), expected)  # shape check
    return params, config


def cmd_eval(args) -> int:
    schema, _, _, test = load_splits(args.data)
    params, config = load_model(args.checkpoint, schema)
    variant = GateVariant.parse(args.variant) if args.variant else config.variant
    rep = test_report(params, test, schema, variant, args.length)
    rep["length"] = args.length
    emit(metrics.format_report(rep), args.out)
    return EXIT_OK


def cmd_sweep_length(args) -> int:
    schema, _, _, test = load_splits(args.data)
    params, config = load_model(args.checkpoint, schema)
    variant = GateVariant.parse(args.variant) if args.variant else config.variant
    rows = []
    for length in SWEEP_LENGTHS:
        rep = test_report(params, test, schema, variant, length)
        rows.append({"length": length, "auc": rep["auc"], "ap": rep["ap"], "entropy": rep["entropy"]})
    emit(dumps({"variant": variant.value, "rows": rows}), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args)
    schema, train, valid, test = load_splits(args.data)
    emit(dumps(ablation_table(schema, train, valid, test, config)), args.out)
    return EXIT_OK


def cmd_sweep_period(args) -> int:
    config = load_config(args)
    schema, train, valid, test = load_splits(args.data)
    emit(dumps(period_table(schema, train, valid, test, config)), args.out)
    return EXIT_OK


def gradcheck_model(seed: int = 0):
    """Small random model and sample: H=4, N=3, L=2, five events."""
    rng = np.random.default_rng(seed)
    schema = events.Schema(M=3, C=4, U=2)
    config = training.TrainConfig(embed_dim=3, hidden=4, filter_hidden=2, tau_init_range=(0.0, 1.0), seed=seed)
    params = training.init_params(training.Sizes.from_schema(schema, config), config)
    for name in params.trainable():
        if name not in ("tau", "shift", "r_on"):
            params[name] = rng.uniform(-0.5, 0.5, size=params[name].shape)
    params["r_on"] = rng.uniform(0.5, 0.95, size=4)
    times = np.sort(rng.uniform(0.0, 6.0, size=5))
    evs = []
    for t in times:
        m = int(rng.integers(3))
        nums = ((int(rng.integers(2)), float(rng.standard_normal())),)
        evs.append(events.Event(m, float(t), (int(rng.integers(4)),), nums))
    sample = events.Sample("gradcheck", int(rng.integers(2)), tuple(evs))
    return schema, params, sample


def gradcheck(seed: int = 0, corrupt: bool = False) -> dict:
    schema, params, sample = gradcheck_model(seed)
    times = np.array([e.time for e in sample.events])

    def regime(p):
        return b"".join(phase_regime(t, p["tau"], p["shift"], p["r_on"]) for t in times)

    def maybe_corrupt(grads):
        if corrupt:
            grads["W_ch"] = grads["W_ch"] * 1.01
        return grads

    def tape_loss(p):
        return training.sample_loss(sample, p, GateVariant.FULL, TRAIN_LEAK)

    def tape_grad(p):
        return maybe_corrupt(nm.analytic_gradient(tape_loss, p))

    batch = batched.Batch.build([batched.encode_sample(sample)], schema)

    def batch_loss(p):
        probs = batched.predict_batch(p, batch, GateVariant.FULL, TRAIN_LEAK)
        return float(batched.bce_terms(probs, batch.labels).mean())

    def batch_grad(p):
        p.zero_grad()
        batched.loss_and_grad(p, batch, GateVariant.FULL, TRAIN_LEAK)
        return maybe_corrupt({k: g.copy() for k, g in p.grads.items()})

    out = {}
    for route, f, grad in (("tape", tape_loss, tape_grad), ("batched", batch_loss, batch_grad)):
        floor = nm.difference_floor(f(params) if route == "batched" else float(f(params).value), 1e-5, GRADCHECK_TOL)
        rep = nm.grad_check_report(f, params, 1e-5, gradient=grad, regime=regime, floor=floor)
        out[route] = {
            "max_relative_error": rep.max_error, "checked": rep.checked, "skipped": rep.skipped,
            "denominator_floor": floor,
            "worst": [rep.worst[0], list(rep.worst[1])] if rep.worst else None,
        }
    out["max_relative_error"] = max(r["max_relative_error"] for r in (out["tape"], out["batched"]))
    out["tolerance"] = GRADCHECK_TOL
    out["passed"] = out["max_relative_error"] < GRADCHECK_TOL
    return out


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    out = gradcheck(args.seed if args.seed is not None else 0, corrupt=args.corrupt_backward)
    log.info("gradcheck took %.2f s", time.perf_counter() - t0)
    emit(dumps(out), args.out)
    return EXIT_OK if out["passed"] else EXIT_CHECK


# ----------------------------------------------------------------------------
# argument parsing


COMMANDS = {
    "generate": (cmd_generate, "generate a synthetic dataset"),
    "train": (cmd_train, "train a model and write a checkpoint plus history"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test split"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the analytic gradients"),
    "ablate": (cmd_ablate, "train phase_only, filter_only and full_event_gate"),
    "sweep-period": (cmd_sweep_period, "train over four initial period ranges"),
    "sweep-length": (cmd_sweep_length, "evaluate a checkpoint at several input lengths"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetseq", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only print warnings")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help="override the configured seed")
        if name != "generate" and name != "gradcheck":
            p.add_argument("--data", help="dataset directory (dataset.jsonl + schema.json)")
        if name in ("train", "eval", "ablate", "sweep-period", "sweep-length"):
            p.add_argument("--variant", choices=[v.value for v in GateVariant])
        if name in ("eval", "sweep-length"):
            p.add_argument("--checkpoint", help="checkpoint written by train")
        if name == "eval":
            p.add_argument("--length", type=int, help="keep only the most recent LENGTH events")
        if name == "gradcheck":
            p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr,
    )
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except (
        UsageError, training.ConfigError, training.CheckpointError, datagen.GenerationError,
        events.SchemaError, events.DatasetParseError, events.PartitionError, OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except training.TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
