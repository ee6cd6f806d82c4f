"""Subject classifiers: the models under visualization.

A subject classifier is split as c = g(f(.)): a feature net f mapping inputs
to h-dimensional representations and a prediction head g mapping
representations to class logits. One checkpoint is kept per training epoch;
the whole chronological sequence feeds the visualization pipeline.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ComputationTape
from .errors import CheckpointError, ContractError, DimensionError, TrainingError
from .numerics import (MlpParams, MlpTapeHandle, SgdMomentum, flatten_params,
                       forward, init_mlp, unflatten_params)


@dataclass
class Dataset:
    inputs: np.ndarray          # (N, d) float32
    labels: np.ndarray          # (N,) int64 in [0, class_count)
    ids: list[str]              # stable per-sample ids
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.inputs.shape[0]
        if n == 0 or self.inputs.shape[1] == 0:
            raise DimensionError("dataset must have N > 0 and d > 0")
        if self.labels.shape != (n,):
            raise DimensionError("labels must align with input rows")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ContractError("labels must lie in [0, class_count)")
        if len(self.ids) != n or len(set(self.ids)) != n:
            raise ContractError("sample ids must be unique and row-aligned")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


def make_blobs(d: int, class_count: int, n: int, separation: float, seed: int,
               split: str = "train", center_seed: int | None = None) -> Dataset:
    """Gaussian blobs with unit noise around mutually orthogonal centers whose
    pairwise distance equals `separation`. center_seed lets train/test share
    the same geometry."""
    if class_count > d:
        raise DimensionError("orthogonal blob centers need class_count <= d")
    center_rng = np.random.default_rng(seed if center_seed is None else center_seed)
    raw = center_rng.standard_normal((d, d))
    q, _ = np.linalg.qr(raw)
    centers = q[:, :class_count].T * (separation / np.sqrt(2.0))
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % class_count
    rng.shuffle(labels)
    inputs = centers[labels] + rng.standard_normal((n, d))
    ids = [f"{split}-{i}" for i in range(n)]
    return Dataset(inputs.astype(np.float32), labels, ids, class_count, split)


def make_blobs_pair(d: int, class_count: int, n_train: int, n_test: int,
                    separation: float, seed: int) -> tuple[Dataset, Dataset]:
    """Train/test blob datasets drawn around identical centers."""
    train = make_blobs(d, class_count, n_train, separation, seed, "train", center_seed=seed)
    test = make_blobs(d, class_count, n_test, separation, seed + 1, "test", center_seed=seed)
    return train, test


# -- IDX (MNIST) ingestion --------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx_images(path) -> np.ndarray:
    """ubyte IDX image file -> (N, rows*cols) float32 in [0, 1]."""
    raw = Path(path).read_bytes()
    magic, n, rows, cols = struct.unpack(">iiii", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise CheckpointError(f"{path}: bad IDX image magic 0x{magic:08x}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if pixels.size != n * rows * cols:
        raise CheckpointError(f"{path}: truncated IDX image payload")
    return (pixels.reshape(n, rows * cols).astype(np.float32)) / 255.0


def read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, n = struct.unpack(">ii", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise CheckpointError(f"{path}: bad IDX label magic 0x{magic:08x}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size != n:
        raise CheckpointError(f"{path}: truncated IDX label payload")
    return labels.astype(np.int64)


def load_idx_dataset(images_path, labels_path, limit: int | None = None,
                     split: str = "train") -> Dataset:
    inputs = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if inputs.shape[0] != labels.shape[0]:
        raise CheckpointError("IDX image/label counts differ")
    if limit is not None:
        inputs, labels = inputs[:limit], labels[:limit]
    ids = [f"{split}-{i}" for i in range(inputs.shape[0])]
    return Dataset(inputs, labels, ids, int(labels.max()) + 1 if labels.size else 0, split)


# -- checkpoints -------------------------------------------------------------

@dataclass
class SubjectCheckpoint:
    epoch: int                  # t >= 1
    feature_net: MlpParams      # f: d -> h
    head: MlpParams             # g: h -> C
    train_accuracy: float = float("nan")

    def __post_init__(self):
        if self.feature_net.out_dim != self.head.in_dim:
            raise DimensionError("feature out-dim must equal head in-dim")

    @property
    def h(self) -> int:
        return self.feature_net.out_dim

    @property
    def d(self) -> int:
        return self.feature_net.in_dim

    @property
    def class_count(self) -> int:
        return self.head.out_dim


def features(ckpt: SubjectCheckpoint, inputs: np.ndarray) -> np.ndarray:
    """x_i = f(s_i), row-aligned with the inputs."""
    return forward(ckpt.feature_net, inputs)


def predict(ckpt: SubjectCheckpoint, reps: np.ndarray):
    """Logits plus top1/top2 class indices. Ties go to the lower class index."""
    logits = forward(ckpt.head, reps)
    # stable sort on negated logits keeps equal entries in index order
    order = np.argsort(-logits, axis=1, kind="stable")
    return logits, order[:, 0].copy(), order[:, 1].copy()


def classify(ckpt: SubjectCheckpoint, inputs: np.ndarray):
    """Composed classifier c(s) = g(f(s))."""
    return predict(ckpt, features(ckpt, inputs))


SUBJECT_HIDDEN = (64, 64)


def train_subject(dataset: Dataset, epochs: int, seed: int, h: int = 32,
                  hidden=SUBJECT_HIDDEN, lr: float = 0.01, momentum: float = 0.9,
                  batch_size: int = 32) -> list[SubjectCheckpoint]:
    """Train a d->hidden->h->C MLP classifier, checkpointing after every epoch.

    The representation is the (ReLU) h-layer output; the head is the final
    linear layer. Raises TrainingError naming the epoch if the loss goes
    non-finite.
    """
    if epochs < 2:
        raise ContractError("need at least 2 epochs for temporal properties")
    rng = np.random.default_rng(seed)
    sizes = [dataset.d, *hidden, h, dataset.class_count]
    acts = ["relu"] * (len(sizes) - 2) + ["identity"]
    net = init_mlp(sizes, rng, activations=acts)
    opt = SgdMomentum(net.arrays(), lr=lr, momentum=momentum, decay_every=0)

    checkpoints = []
    n = dataset.n
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            tape = ComputationTape()
            handle = MlpTapeHandle(tape, net)
            logits = handle.forward(tape.leaf(dataset.inputs[idx]))
            loss = tape.softmax_cross_entropy(logits, dataset.labels[idx])
            if not np.isfinite(loss.value[0, 0]):
                raise TrainingError(f"subject training diverged at epoch {epoch}")
            adjoints = tape.backward(loss)
            opt.step(handle.gradients(adjoints))
        ckpt = _split_checkpoint(net, sizes, acts, epoch)
        logits, top1, _ = classify(ckpt, dataset.inputs)
        ckpt.train_accuracy = float((top1 == dataset.labels).mean())
        checkpoints.append(ckpt)
    return checkpoints


def _split_checkpoint(net: MlpParams, sizes, acts, epoch: int) -> SubjectCheckpoint:
    """Snapshot the combined net as (feature_net, head); g(f(.)) stays exact."""
    cut = len(sizes) - 2  # layers before the final linear head
    feature = MlpParams(sizes[: cut + 1],
                        [w.copy() for w in net.weights[:cut]],
                        [b.copy() for b in net.biases[:cut]],
                        list(acts[:cut]))
    head = MlpParams(sizes[cut:],
                     [net.weights[cut].copy()],
                     [net.biases[cut].copy()],
                     [acts[cut]])
    return SubjectCheckpoint(epoch, feature, head)


# -- serialization: per-epoch little-endian f32 blobs + a JSON manifest -------

def save_checkpoints(checkpoints: list[SubjectCheckpoint], directory) -> Path:
    """Write one f32 blob per epoch plus manifest.json; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = checkpoints[0]
    manifest = {
        "format_version": 1,
        "d": first.d,
        "h": first.h,
        "class_count": first.class_count,
        "feature_layer_sizes": first.feature_net.layer_sizes,
        "feature_activations": first.feature_net.activations,
        "head_layer_sizes": first.head.layer_sizes,
        "head_activations": first.head.activations,
        "epochs": {},
        "train_accuracy": {},
    }
    for ckpt in checkpoints:
        name = f"epoch_{ckpt.epoch:03d}.bin"
        blob = np.concatenate([flatten_params(ckpt.feature_net), flatten_params(ckpt.head)])
        (directory / name).write_bytes(blob.tobytes())
        manifest["epochs"][str(ckpt.epoch)] = name
        manifest["train_accuracy"][str(ckpt.epoch)] = ckpt.train_accuracy
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def ingest_checkpoint_dump(manifest_path) -> list[SubjectCheckpoint]:
    """Load a chronological checkpoint sequence written by save_checkpoints
    (or dumped externally in the same format)."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    f_sizes = manifest["feature_layer_sizes"]
    f_acts = manifest["feature_activations"]
    g_sizes = manifest["head_layer_sizes"]
    g_acts = manifest["head_activations"]
    epochs = sorted(int(e) for e in manifest["epochs"])
    if not epochs:
        raise CheckpointError("manifest lists no epochs")
    if epochs != list(range(epochs[0], epochs[0] + len(epochs))):
        missing = sorted(set(range(epochs[0], epochs[-1] + 1)) - set(epochs))
        raise CheckpointError(f"epoch gap in manifest: missing {missing}")

    f_len = sum(si * so + so for si, so in zip(f_sizes[:-1], f_sizes[1:]))
    checkpoints = []
    for epoch in epochs:
        name = manifest["epochs"][str(epoch)]
        path = manifest_path.parent / name
        if not path.exists():
            raise CheckpointError(f"missing checkpoint file {name} for epoch {epoch}")
        flat = np.frombuffer(path.read_bytes(), dtype="<f4")
        try:
            feature = unflatten_params(flat[:f_len], f_sizes, f_acts)
            head = unflatten_params(flat[f_len:], g_sizes, g_acts)
        except DimensionError as exc:
            raise CheckpointError(f"epoch {epoch}: payload does not match manifest "
                                  f"layer sizes ({exc})") from exc
        ckpt = SubjectCheckpoint(epoch, feature, head)
        acc = manifest.get("train_accuracy", {}).get(str(epoch))
        if acc is not None:
            ckpt.train_accuracy = acc
        checkpoints.append(ckpt)
    return checkpoints
