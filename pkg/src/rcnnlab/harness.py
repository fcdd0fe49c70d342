"""Training loop, evaluation, experiment drivers, and checkpoint I/O.

A run is fully determined by (init seed, shuffle seed, config): batching,
initialization, and every update are seeded, so identical inputs give
bit-identical reports up to wall-clock timings.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tape, backward
from .data import TextDataset, Vocabulary, batches
from .errors import CheckpointError, ConfigError, ContractError, NumericError
from .models import (
    ABLATION_VARIANTS,
    KINDS,
    Model,
    ModelSpec,
    RECURRENT_KINDS,
    REFERENCE_ACCURACY,
    build_model,
)
from .optim import clip_gradients, cross_entropy_loss, make_optimizer

EVAL_BATCH = 64


@dataclass
class TrainConfig:
    spec: ModelSpec
    optimizer: str = "rmsprop"
    lr: float | None = None
    epochs: int = 10
    batch_size: int = 32
    init_seed: int = 0
    shuffle_seed: int = 0
    val_fraction: float = 0.1
    patience: int = 3
    clip_norm: float | None = None  # None -> 5.0 for recurrent kinds, off otherwise

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    def resolved_clip_norm(self) -> float | None:
        if self.clip_norm is not None:
            return self.clip_norm if self.clip_norm > 0 else None
        return 5.0 if self.spec.kind in RECURRENT_KINDS else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = self.spec.to_dict()
        return d


@dataclass
class RunReport:
    model_kind: str
    config: dict
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = 0.0
    final_test_accuracy: float | None = None
    version: str = __version__

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)

    def deterministic_dict(self) -> dict:
        """Report content excluding wall-clock timings, for reproducibility checks."""
        d = self.to_dict()
        d.pop("epoch_seconds")
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def split_train_val(dataset: TextDataset, val_fraction: float, seed: int = 13) -> tuple[TextDataset, TextDataset]:
    """Deterministic shuffled split; val_fraction of the tail becomes validation."""
    n = len(dataset)
    order = np.arange(n)
    np.random.default_rng(seed).shuffle(order)
    n_val = int(round(n * val_fraction))
    return dataset.subset(order[: n - n_val], "train"), dataset.subset(order[n - n_val :], "val")


def evaluate(model: Model, dataset: TextDataset, vocab: Vocabulary, seq_len: int) -> float:
    """Argmax-class accuracy; prediction ties break toward the lower class."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    correct = 0
    for batch in batches(dataset, vocab, seq_len, batch_size=EVAL_BATCH, shuffle_seed=None):
        probs = model.forward(batch).value
        predictions = np.argmax(probs, axis=1)
        correct += int(np.sum(predictions == batch.labels))
    return correct / len(dataset)


def train(
    config: TrainConfig,
    train_set: TextDataset,
    val_set: TextDataset,
    vocab: Vocabulary,
) -> tuple[Model, RunReport]:
    """Epoch loop: forward, loss, backward, clip, step; keeps the best
    validation parameters and stops early after ``patience`` stale epochs."""
    model = build_model(config.spec, config.init_seed)
    optimizer = make_optimizer(config.optimizer, model.parameters(), lr=config.lr)
    clip_norm = config.resolved_clip_norm()
    seq_len = config.spec.seq_len
    report = RunReport(model_kind=config.spec.kind, config=config.to_dict())

    best_snapshot = {name: p.value.copy() for name, p in model.params.items()}
    stale = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        losses = []
        correct = 0
        seen = 0
        for batch_index, batch in enumerate(
            batches(train_set, vocab, seq_len, config.batch_size, config.shuffle_seed + epoch)
        ):
            model.zero_grads()
            with Tape() as tape:
                probs = model.forward(batch)
                loss = cross_entropy_loss(probs, batch.labels)
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                raise NumericError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {batch_index}"
                )
            backward(tape, loss)
            if clip_norm is not None:
                clip_gradients(model.parameters(), clip_norm)
            optimizer.step()
            losses.append(loss_value)
            correct += int(np.sum(np.argmax(probs.value, axis=1) == batch.labels))
            seen += batch.size

        report.train_loss.append(float(np.mean(losses)))
        report.train_accuracy.append(correct / seen)
        val_accuracy = evaluate(model, val_set, vocab, seq_len) if len(val_set) else report.train_accuracy[-1]
        report.val_accuracy.append(val_accuracy)
        report.epoch_seconds.append(time.perf_counter() - started)

        if val_accuracy > report.best_val_accuracy or report.best_epoch < 0:
            report.best_val_accuracy = val_accuracy
            report.best_epoch = epoch
            best_snapshot = {name: p.value.copy() for name, p in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    for name, p in model.params.items():
        p.value[...] = best_snapshot[name]
    return model, report


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------

def _spec_for_variant(base: ModelSpec, name: str) -> ModelSpec:
    d = base.to_dict()
    if name in ABLATION_VARIANTS:
        d["kind"] = "rcnn-hw"
        d.update(ABLATION_VARIANTS[name])
    elif name in KINDS:
        d["kind"] = name
        d["highway_layers"] = None if name == "rcnn-hw" else 0
        d["mlp_instead_of_highway"] = False
    else:
        valid = ", ".join(list(KINDS) + list(ABLATION_VARIANTS))
        raise ConfigError(f"unknown model name {name!r}; valid: {valid}")
    return ModelSpec.from_dict(d)


def run_model_comparison(
    config: TrainConfig,
    model_names: list[str],
    train_set: TextDataset,
    val_set: TextDataset,
    test_set: TextDataset,
    vocab: Vocabulary,
) -> list[dict]:
    """Train each architecture with identical seeds and data order; one row
    per model. A failing model is recorded in its row without stopping the rest."""
    if not model_names:
        raise ConfigError("model list is empty")
    rows = []
    for name in model_names:
        row = {
            "model": name,
            "status": "ok",
            "test_accuracy": None,
            "best_val_accuracy": None,
            "epochs_run": None,
            "train_seconds": None,
            "trainable_params": None,
            "reference_accuracy": REFERENCE_ACCURACY.get(name),
            "error": "",
        }
        try:
            spec = _spec_for_variant(config.spec, name)
            cfg = TrainConfig(**{**config.to_dict(), "spec": spec})
            started = time.perf_counter()
            model, report = train(cfg, train_set, val_set, vocab)
            row["train_seconds"] = round(time.perf_counter() - started, 3)
            row["test_accuracy"] = evaluate(model, test_set, vocab, spec.seq_len)
            row["best_val_accuracy"] = report.best_val_accuracy
            row["epochs_run"] = report.epochs_run
            row["trainable_params"] = model.num_params()
        except Exception as exc:  # keep remaining models running
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def run_seqlen_sweep(
    config: TrainConfig,
    model_names: list[str],
    train_set: TextDataset,
    val_set: TextDataset,
    test_set: TextDataset,
    vocab: Vocabulary,
    lengths: list[int] = (100, 200, 300, 400, 500),
) -> list[dict]:
    """Retrain from scratch at every sequence length and record accuracy."""
    lengths = [int(v) for v in lengths]
    if not lengths or any(v < 1 for v in lengths) or sorted(lengths) != lengths:
        raise ConfigError(f"lengths must be ascending positive integers, got {lengths}")
    rows = []
    for name in model_names:
        for index, seq_len in enumerate(lengths):
            d = config.to_dict()
            d["spec"] = _spec_for_variant(config.spec, name).to_dict()
            d["spec"]["seq_len"] = seq_len
            d["init_seed"] = config.init_seed + 101 * index  # fresh init per length
            cfg = TrainConfig(**{**d, "spec": ModelSpec.from_dict(d["spec"])})
            row = {
                "model": name,
                "seq_len": seq_len,
                "status": "ok",
                "test_accuracy": None,
                "best_val_accuracy": None,
                "train_seconds": None,
                "error": "",
            }
            try:
                started = time.perf_counter()
                model, report = train(cfg, train_set, val_set, vocab)
                row["train_seconds"] = round(time.perf_counter() - started, 3)
                row["test_accuracy"] = evaluate(model, test_set, vocab, seq_len)
                row["best_val_accuracy"] = report.best_val_accuracy
            except Exception as exc:
                row["status"] = "error"
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def write_rows(rows: list[dict], csv_path, json_path=None) -> None:
    """CSV with a header row, plus an identical-content JSON mirror."""
    if not rows:
        raise ContractError("no rows to write")
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    if json_path is not None:
        Path(json_path).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"RCHW"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    """Binary container: magic, u32 version, u32 header length, JSON header
    (spec + tensor manifest with shapes and byte offsets), float64 LE payload."""
    manifest = []
    offset = 0
    chunks = []
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(p.value.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"spec": model.spec.to_dict(), "tensors": manifest}).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> Model:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint file: {path}")
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic bytes)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_len = struct.unpack("<I", blob[8:12])[0]
    if len(blob) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc

    model = build_model(spec, rng_seed=0)
    if [m["name"] for m in manifest] != list(model.params):
        raise CheckpointError(f"{path}: tensor manifest does not match the model's parameter set")
    payload = blob[12 + header_len :]
    for entry in manifest:
        p = model.params[entry["name"]]
        if tuple(entry["shape"]) != p.value.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {entry['name']}: "
                f"{tuple(entry['shape'])} vs {p.value.shape}"
            )
        nbytes = p.value.size * 8
        chunk = payload[entry["offset"] : entry["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        p.value[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.value.shape)
    return model
