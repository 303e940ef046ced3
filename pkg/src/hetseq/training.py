"""Loss, Adam, parameter initialisation, the training loop and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from hetseq import batched, metrics
from hetseq import numeric as nm
from hetseq.cells import GateVariant, clamp_params, run_sequence
from hetseq.encoder import NumericScaler
from hetseq.events import Sample, Schema

log = logging.getLogger(__name__)

ENCODER_PARAMS = ("C_type", "V_c", "V_n")
SCALER_BUFFERS = ("num_mean", "num_std")
INIT_SCALE = 0.1
R_ON_INIT = 0.05


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss or gradient went non-finite; carries the last good parameters."""

    def __init__(self, message: str, last_good: nm.ParameterSet | None, history: list | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history or []


# ----------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    tau_init_range: tuple[float, float] = (1.0, 5.0)
    variant: GateVariant = GateVariant.FULL
    embed_dim: int = 32
    hidden: int = 64
    filter_hidden: int = 16
    leak: float = 1e-3
    eval_batch_size: int = 64

    def __post_init__(self):
        self.variant = GateVariant.parse(self.variant)
        self.tau_init_range = tuple(float(v) for v in self.tau_init_range)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("max_epochs must be >= 1 and patience >= 0")
        if len(self.tau_init_range) != 2 or self.tau_init_range[0] > self.tau_init_range[1]:
            raise ConfigError(f"tau_init_range {self.tau_init_range} must be (a, b) with a <= b")
        if min(self.embed_dim, self.hidden, self.filter_hidden) < 1:
            raise ConfigError("embed_dim, hidden and filter_hidden must be >= 1")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, GateVariant):
                value = value.value
            elif isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


def _coerce(kind, raw: str, key: str):
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "tuple" in str(kind):
            return tuple(float(v) for v in raw.replace("(", "").replace(")", "").split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def dataclass_from_pairs(cls, pairs: Mapping[str, str], source: str = "<config>", ignore=()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in pairs.items():
        if key in ignore:
            continue
        if key not in fields:
            raise ConfigError(f"{source}: unknown key {key!r}")
        kwargs[key] = _coerce(fields[key].type, raw, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_train_config(path, **overrides) -> TrainConfig:
    pairs = parse_key_values(Path(path).read_text(encoding="utf-8"), str(path))
    config = dataclass_from_pairs(TrainConfig, pairs, str(path))
    return config.replace(**overrides) if overrides else config


# ----------------------------------------------------------------------------
# loss


def bce_loss(y: float, label: int) -> float:
    y = min(max(float(y), batched.PROB_CLAMP), 1.0 - batched.PROB_CLAMP)
    return -(label * math.log(y) + (1 - label) * math.log(1.0 - y))


def bce_node(y, label: int):
    """Tape-recordable cross-entropy for a single prediction."""
    y = nm.clip(y, batched.PROB_CLAMP, 1.0 - batched.PROB_CLAMP)
    if label:
        return nm.scale(nm.log(y), -1.0)
    return nm.scale(nm.log(nm.sub(1.0, y)), -1.0)


def sample_loss(sample: Sample, params: nm.ParameterSet, variant=GateVariant.FULL, alpha: float = 1e-3):
    """Cross-entropy of one sample recorded on a fresh tape."""
    graph = nm.Graph()
    _, y = run_sequence(sample, graph.bind(params), variant, alpha)
    return bce_node(y, sample.label)


# ----------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class Sizes:
    M: int
    C: int
    U: int
    N: int = 32
    H: int = 64
    L: int = 16

    @classmethod
    def from_schema(cls, schema: Schema, config: TrainConfig) -> "Sizes":
        return cls(schema.M, schema.C, schema.U, config.embed_dim, config.hidden, config.filter_hidden)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        M, C, U, N, H, L = self.M, self.C, self.U, self.N, self.H, self.L
        shapes = {"C_type": (N, M), "V_c": (N, C), "V_n": (N, U)}
        for g in "ifco":
            shapes[f"W_{g}x"] = (H, N)
        for g in "ifco":
            shapes[f"W_{g}h"] = (H, H)
        for g in "ifo":
            shapes[f"w_{g}c"] = (H,)
        for g in "ifco":
            shapes[f"b_{g}"] = (H,)
        shapes.update({"W_ms": (L, N), "b_m": (L,), "W_em": (H, L), "b_e": (H,)})
        shapes.update({"tau": (H,), "shift": (H,), "r_on": (H,)})
        shapes.update({"w_p": (H,), "b_p": ()})
        return shapes


def init_params(sizes: Sizes, config: TrainConfig | None = None, seed: int | None = None) -> nm.ParameterSet:
    """Uniform(-0.1, 0.1) weights, forget bias 1, periods exp(U(a, b))."""
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    a, b = config.tau_init_range
    arrays = {}
    for name, shape in sizes.shapes().items():
        if name in ("b_i", "b_c", "b_o", "b_m", "b_e", "b_p"):
            arrays[name] = np.zeros(shape)
        elif name == "b_f":
            arrays[name] = np.ones(shape)
        elif name == "tau":
            arrays[name] = np.exp(rng.uniform(a, b, size=shape))
        elif name == "shift":
            arrays[name] = rng.uniform(0.0, 1.0, size=shape) * arrays["tau"]
        elif name == "r_on":
            arrays[name] = np.full(shape, R_ON_INIT)
        else:
            arrays[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    arrays["num_mean"] = np.zeros(sizes.U)
    arrays["num_std"] = np.ones(sizes.U)
    return nm.ParameterSet(arrays, frozen=SCALER_BUFFERS)


def scaler_of(params: nm.ParameterSet) -> NumericScaler:
    return NumericScaler(params["num_mean"].copy(), params["num_std"].copy())


def set_scaler(params: nm.ParameterSet, scaler: NumericScaler) -> None:
    params["num_mean"] = scaler.mean
    params["num_std"] = scaler.std


# ----------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: nm.ParameterSet) -> "AdamState":
        names = params.trainable()
        return cls({k: np.zeros_like(params[k]) for k in names}, {k: np.zeros_like(params[k]) for k in names})


def adam_step(params: nm.ParameterSet, grads: Mapping[str, np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """Bias-corrected Adam update in place, then the phase-gate clamps."""
    for name in state.m:
        if not np.all(np.isfinite(grads[name])):
            raise nm.NumericError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - config.beta1**state.step
    bc2 = 1.0 - config.beta2**state.step
    for name in state.m:
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        params.arrays[name] -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    clamp_params(params)


# ----------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_auc: float
    valid_ap: float
    valid_entropy: float
    improved: bool


@dataclass
class TrainResult:
    params: nm.ParameterSet
    history: list[EpochRecord]
    first_epoch_params: nm.ParameterSet
    best_epoch: int

    def history_text(self) -> str:
        return "".join(json.dumps(dataclasses.asdict(r), sort_keys=True) + "\n" for r in self.history)


def make_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator, pool: int = 8) -> list[np.ndarray]:
    """Shuffle, sort by length within pools of ``pool`` batches, then shuffle batch order."""
    order = rng.permutation(len(lengths))
    lengths = np.asarray(lengths)
    batches = []
    span = batch_size * pool
    for start in range(0, len(order), span):
        chunk = order[start:start + span]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def evaluate(params, items, schema, config: TrainConfig, variant=None) -> metrics.ScoredSet:
    probs = batched.predict(
        params, items, schema, variant or config.variant, alpha=0.0, batch_size=config.eval_batch_size
    )
    return metrics.ScoredSet(probs, np.array([it.label for it in items], dtype=np.int64))


def _safe_metrics(scored: metrics.ScoredSet) -> tuple[float, float, float]:
    try:
        auc = metrics.auc(scored)
    except metrics.MetricUndefined:
        auc = float("nan")
    try:
        ap = metrics.average_precision(scored)
    except metrics.MetricUndefined:
        ap = float("nan")
    return auc, ap, metrics.test_entropy(scored)


def train(
    train_set: Sequence[Sample],
    valid_set: Sequence[Sample],
    config: TrainConfig,
    schema: Schema,
    params: nm.ParameterSet | None = None,
) -> TrainResult:
    """Mini-batch Adam with early stopping on validation AUC."""
    if not train_set or not valid_set:
        raise ValueError("train and validation sets must be non-empty")
    sizes = Sizes.from_schema(schema, config)
    params = params.copy() if params is not None else init_params(sizes, config)
    scaler = NumericScaler.fit(train_set, schema.U)
    set_scaler(params, scaler)
    train_items = batched.encode_samples(train_set, scaler)
    valid_items = batched.encode_samples(valid_set, scaler)
    lengths = [len(it) for it in train_items]
    rng = np.random.default_rng(config.seed)
    adam = AdamState.for_params(params)

    history: list[EpochRecord] = []
    best = params.copy()
    best_auc = -math.inf
    best_epoch = 0
    first_epoch = None
    since_best = 0
    with threadpool_limits(limits=1):
        for epoch in range(1, config.max_epochs + 1):
            losses, weights = [], []
            for idx in make_batches(lengths, config.batch_size, rng):
                batch = batched.Batch.build([train_items[i] for i in idx], schema)
                params.zero_grad()
                try:
                    loss, _ = batched.loss_and_grad(params, batch, config.variant, config.leak)
                    adam_step(params, params.grads, adam, config)
                except nm.NumericError as exc:
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", best, history) from exc
                losses.append(loss)
                weights.append(len(idx))
            train_loss = float(np.average(losses, weights=weights))
            auc, ap, entropy = _safe_metrics(evaluate(params, valid_items, schema, config))
            improved = bool(auc > best_auc) if not math.isnan(auc) else epoch == 1
            history.append(EpochRecord(epoch, train_loss, auc, ap, entropy, improved))
            log.info("epoch %d loss %.5f valid auc %.4f ap %.4f entropy %.4f", epoch, train_loss, auc, ap, entropy)
            if epoch == 1:
                first_epoch = params.copy()
            if improved:
                best, best_auc, best_epoch, since_best = params.copy(), auc, epoch, 0
            else:
                since_best += 1
            if since_best >= config.patience:
                break
    for p in (best, first_epoch):
        p.zero_grad()
    return TrainResult(best, history, first_epoch, best_epoch)


# ----------------------------------------------------------------------------
# checkpoints
#
# layout: MAGIC | u32 version | u32 n_arrays | u32 meta_len | meta (utf-8 JSON)
#         then per array: u16 name_len | name | u8 ndim | u64 dims... | u64 offset
#         then the payload: little-endian float64, offsets relative to payload start

MAGIC = b"HSEQCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def checkpoint_bytes(params: nm.ParameterSet, meta: Mapping | None = None) -> bytes:
    meta_raw = json.dumps(dict(meta or {}, frozen=sorted(params.frozen)), sort_keys=True).encode()
    head = io.BytesIO()
    head.write(MAGIC)
    head.write(struct.pack("<III", VERSION, len(params), len(meta_raw)))
    head.write(meta_raw)
    payload = io.BytesIO()
    for name in params.names():
        arr = params[name]
        raw_name = name.encode()
        head.write(struct.pack("<H", len(raw_name)) + raw_name)
        head.write(struct.pack("<B", arr.ndim))
        head.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        head.write(struct.pack("<Q", payload.tell()))
        payload.write(arr.astype("<f8").tobytes())
    return head.getvalue() + payload.getvalue()


def save_checkpoint(params: nm.ParameterSet, path, meta: Mapping | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(checkpoint_bytes(params, meta))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_checkpoint(raw: bytes, expected: Mapping[str, tuple] | None = None) -> tuple[nm.ParameterSet, dict]:
    if len(raw) < len(MAGIC) + 12 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointVersionError("not a checkpoint file (bad magic)")
    version, count, meta_len = struct.unpack_from("<III", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    pos = len(MAGIC) + 12
    try:
        meta = json.loads(raw[pos:pos + meta_len].decode())
        pos += meta_len
        entries = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", raw, pos)
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos + 1)
            (offset,) = struct.unpack_from("<Q", raw, pos + 1 + 8 * ndim)
            pos += 1 + 8 * ndim + 8
            entries.append((name, tuple(shape), offset))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint header: {exc}") from None
    arrays = {}
    for name, shape, offset in entries:
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        start = pos + offset
        if start + n_bytes > len(raw):
            raise CheckpointError(f"truncated checkpoint: array {name!r} runs past end of file")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n_bytes // 8, offset=start).reshape(shape).astype(np.float64)
    if expected is not None:
        for name, shape in expected.items():
            if name not in arrays:
                raise CheckpointShapeError(f"checkpoint lacks array {name!r}")
            if arrays[name].shape != tuple(shape):
                raise CheckpointShapeError(
                    f"array {name!r} has shape {arrays[name].shape}, expected {tuple(shape)}"
                )
    return nm.ParameterSet(arrays, frozen=meta.pop("frozen", ())), meta


def load_checkpoint(path, expected: Mapping[str, tuple] | None = None) -> nm.ParameterSet:
    return load_checkpoint_with_meta(path, expected)[0]


def load_checkpoint_with_meta(path, expected: Mapping[str, tuple] | None = None) -> tuple[nm.ParameterSet, dict]:
    return parse_checkpoint(Path(path).read_bytes(), expected)
