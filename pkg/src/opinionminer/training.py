"""Loss, Adam optimization, the epoch loop with early stopping, and
checkpoint persistence.

Checkpoint layout (all integers little-endian, versioned, checksummed):

    magic        b"OMCK"
    version      u32
    header_len   u32, then UTF-8 JSON with stack, config, vocab and the
                 cleaning token lists
    tensor_count u32
    per tensor:  name_len u16, name, rows u32, cols u32 (cols == 0 marks a
                 1-D vector), row-major float64 payload, payload crc32
    file crc32 over everything above

Training is single-threaded and gradients are reduced in fixed example
order, so identical (config, corpus, seed) reproduce identical histories
and checkpoint bytes.
"""

import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    STACK_VARIANTS,
    classify,
    init_model_params,
    model_backward,
    model_forward,
    model_params_from_arrays,
    zero_grads,
)
from .text_pipeline import Vocabulary

CHECKPOINT_MAGIC = b"OMCK"
CHECKPOINT_VERSION = 1

_CLAMP = 1e-12


class ConfigError(Exception):
    """Invalid configuration value; the message names the offending key."""


class CheckpointError(Exception):
    """Unreadable, corrupt or wrong-version checkpoint file."""


class ModelMismatchError(Exception):
    """Checkpoint tensors inconsistent with its own vocabulary/config."""


@dataclass
class TrainConfig:
    embedding_dim: int = 128
    gru_units: int = 256
    lstm_units: int = 128
    dropout_rate: float = 0.2
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-4
    max_len: int = 200
    vocab_size: int = 20000
    min_freq: int = 1
    test_fraction: float = 0.3
    validation_fraction: float = 0.1
    seed: int = 0
    stack: str = "hbgru_lstm"

    def validate(self):
        checks = [
            ("embedding_dim", self.embedding_dim >= 1),
            ("gru_units", self.gru_units >= 1),
            ("lstm_units", self.lstm_units >= 1),
            ("dropout_rate", 0.0 <= self.dropout_rate < 1.0),
            ("batch_size", self.batch_size >= 1),
            ("learning_rate", self.learning_rate > 0.0),
            ("beta1", 0.0 <= self.beta1 < 1.0),
            ("beta2", 0.0 <= self.beta2 < 1.0),
            ("epsilon", self.epsilon > 0.0),
            ("max_epochs", self.max_epochs >= 1),
            ("patience", self.patience >= 1),
            ("min_delta", self.min_delta >= 0.0),
            ("max_len", self.max_len >= 1),
            ("vocab_size", self.vocab_size >= 3),
            ("min_freq", self.min_freq >= 1),
            ("test_fraction", 0.0 < self.test_fraction < 1.0),
            ("validation_fraction", 0.0 < self.validation_fraction < 1.0),
            ("seed", self.seed >= 0),
            ("stack", self.stack in STACK_VARIANTS),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {key}: {getattr(self, key)!r}")
        return self


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m=zero_grads(params), v=zero_grads(params), t=0)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = "max_epochs"


def bce_loss(y, yhat):
    """Binary cross-entropy with the prediction clamped away from {0, 1}."""
    yhat = min(max(yhat, _CLAMP), 1.0 - _CLAMP)
    return -(y * math.log(yhat) + (1.0 - y) * math.log(1.0 - yhat))


def bce_grad(y, yhat):
    """d bce_loss / d yhat = (yhat - y) / (yhat (1 - yhat)), same clamping."""
    yhat = min(max(yhat, _CLAMP), 1.0 - _CLAMP)
    return (yhat - y) / (yhat * (1.0 - yhat))


def adam_step(state, params, grads, config):
    """One Adam update with bias correction; the PAD embedding row is frozen."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    eps, lr = config.epsilon, config.learning_rate
    mc = 1.0 - b1 ** state.t
    vc = 1.0 - b2 ** state.t
    for name, arr in params.named_arrays():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {arr.shape}")
        pad_row = arr[0].copy() if name == "embedding.E" else None
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr -= lr * (m / mc) / (np.sqrt(v / vc) + eps)
        if pad_row is not None:
            arr[0] = pad_row
            m[0] = 0.0
            v[0] = 0.0
    return state, params


def make_batches(data, batch_size, seed, epoch):
    """Seeded per-epoch shuffle cut into contiguous batches (last may be short)."""
    if not data:
        raise ValueError("make_batches needs a non-empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed ^ epoch)
    order = rng.permutation(len(data))
    shuffled = [data[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def _example_seed(seed, epoch, index):
    """Deterministic per-example dropout seed."""
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def train_epoch(params, adam, batches, config, epoch=0):
    """One pass over the batches: mean batch gradient, one Adam step per batch.

    Per-example gradients are accumulated in example order so results do not
    depend on any scheduling; returns (params, adam, (mean_loss, accuracy)).
    """
    total_loss = 0.0
    correct = 0
    count = 0
    for batch in batches:
        grad_sum = zero_grads(params)
        for seq, label in batch:
            yhat, cache = model_forward(
                params, seq, mode="train", dropout_rate=config.dropout_rate,
                seed=_example_seed(config.seed, epoch, count),
            )
            total_loss += bce_loss(label, yhat)
            correct += int(classify(yhat) == label)
            g = model_backward(params, cache, bce_grad(label, yhat))
            for name in grad_sum:
                grad_sum[name] += g[name]
            count += 1
        inv = 1.0 / len(batch)
        for name in grad_sum:
            grad_sum[name] *= inv
        adam_step(adam, params, grad_sum, config)
    return params, adam, (total_loss / count, correct / count)


def evaluate_loss(params, data):
    """Mean BCE and accuracy over an encoded dataset in infer mode."""
    if not data:
        raise ValueError("evaluate_loss needs a non-empty dataset")
    total = 0.0
    correct = 0
    for seq, label in data:
        yhat, _ = model_forward(params, seq, mode="infer")
        total += bce_loss(label, yhat)
        correct += int(classify(yhat) == label)
    return total / len(data), correct / len(data)


def fit(config, train, validation, params=None, on_epoch=None):
    """Mini-batch training with early stopping on validation loss.

    Stops after `patience` consecutive epochs without an improvement larger
    than `min_delta`, or at max_epochs. Returns the parameters from the
    best-validation epoch together with the per-epoch history. `on_epoch`,
    if given, is called with each EpochRecord as it is produced.
    """
    config.validate()
    if not train or not validation:
        raise ValueError("fit needs non-empty train and validation sets")
    if params is None:
        params = init_model_params(
            config.vocab_size, config.embedding_dim, config.gru_units,
            config.lstm_units, stack=config.stack, seed=config.seed,
        )
    adam = AdamState.for_params(params)
    history = TrainingHistory()
    best_loss = math.inf
    best_params = params.clone()
    bad_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(train, config.batch_size, config.seed, epoch)
        params, adam, (train_loss, train_acc) = train_epoch(
            params, adam, batches, config, epoch=epoch)
        val_loss, val_acc = evaluate_loss(params, validation)
        record = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc)
        history.records.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if val_loss < best_loss - config.min_delta:
            best_loss = val_loss
            best_params = params.clone()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                history.stop_reason = "early_stop"
                break
    history.stop_epoch = len(history.records)
    return best_params, history


@dataclass
class Checkpoint:
    params: "ModelParams"
    config: TrainConfig
    vocab: Vocabulary
    # None means "not stored": cleaning falls back to the library defaults
    stopwords: frozenset | None
    whitelist: frozenset | None


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        rows, cols = arr.shape[0], 0
    elif arr.ndim == 2:
        rows, cols = arr.shape
    else:
        raise ValueError(f"tensor {name} has unsupported rank {arr.ndim}")
    payload = arr.astype("<f8").tobytes(order="C")
    name_b = name.encode("utf-8")
    return b"".join([
        struct.pack("<H", len(name_b)), name_b,
        struct.pack("<II", rows, cols),
        payload,
        struct.pack("<I", zlib.crc32(payload)),
    ])


def save_checkpoint(params, config, vocab, path, stopwords=None, whitelist=None):
    """Write a versioned, checksummed model container; byte-deterministic."""
    header = json.dumps({
        "stack": params.stack,
        "config": dataclasses.asdict(config),
        "vocab": list(vocab.index_to_token),
        "stopwords": sorted(stopwords) if stopwords is not None else None,
        "whitelist": sorted(whitelist) if whitelist is not None else None,
    }, sort_keys=True).encode("utf-8")
    tensors = list(params.named_arrays())
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(header)), header,
             struct.pack("<I", len(tensors))]
    parts.extend(_pack_tensor(name, arr) for name, arr in tensors)
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Read and verify a checkpoint; raises CheckpointError on any corruption."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(data) < 16:
        raise CheckpointError(f"{path}: checksum failure (file too short)")
    body, tail = data[:-4], data[-4:]
    if struct.unpack("<I", tail)[0] != zlib.crc32(body):
        raise CheckpointError(f"{path}: whole-file checksum failure")
    r = _Reader(body, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        rows, cols = r.u32(), r.u32()
        count = rows * max(cols, 1)
        payload = r.take(count * 8)
        if struct.unpack("<I", r.take(4))[0] != zlib.crc32(payload):
            raise CheckpointError(f"{path}: checksum failure in tensor {name}")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        arrays[name] = arr if cols == 0 else arr.reshape(rows, cols)
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor payload")
    config = TrainConfig(**header["config"])
    params = model_params_from_arrays(header["stack"], arrays)
    vocab_tokens = header["vocab"]
    vocab = Vocabulary(
        token_to_index={t: i for i, t in enumerate(vocab_tokens)},
        index_to_token=tuple(vocab_tokens),
    )
    stopwords = header["stopwords"]
    whitelist = header["whitelist"]
    return Checkpoint(
        params=params, config=config, vocab=vocab,
        stopwords=frozenset(stopwords) if stopwords is not None else None,
        whitelist=frozenset(whitelist) if whitelist is not None else None,
    )


def validate_checkpoint(ckpt):
    """Cross-check tensors against the stored vocabulary and config."""
    emb = ckpt.params.embedding
    if emb.vocab_size != ckpt.vocab.size:
        raise ModelMismatchError(
            f"embedding has {emb.vocab_size} rows but vocabulary has {ckpt.vocab.size} tokens")
    if emb.dim != ckpt.config.embedding_dim:
        raise ModelMismatchError(
            f"embedding dim {emb.dim} does not match config embedding_dim "
            f"{ckpt.config.embedding_dim}")
    if ckpt.params.stack != ckpt.config.stack:
        raise ModelMismatchError(
            f"checkpoint stack {ckpt.params.stack!r} does not match config "
            f"stack {ckpt.config.stack!r}")
    return ckpt
