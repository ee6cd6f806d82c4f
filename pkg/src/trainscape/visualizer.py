"""Per-epoch visualization autoencoders.

Each subject checkpoint gets an encoder (h -> 2) and decoder (2 -> h) trained
under a weighted sum of three terms: a cross-entropy projection loss over
fuzzy complex edges, a gradient-weighted reconstruction loss, and (from the
second epoch on) a temporal penalty tying weights to the previous epoch's
model, scaled by how stable each sample's neighborhood stayed. Models are
transfer-initialized along the chronological sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ComputationTape, Node
from .boundary import BoundarySet, synthesize_boundary_set
from .errors import DimensionError, TrainingError
from .neighbor_complex import (NeighborComplex, PairBatch, attach_fuzzy_weights,
                               build_complex, sample_pair_batches)
from .numerics import (MlpParams, MlpTapeHandle, SgdMomentum, flatten_params,
                       forward, init_mlp, unflatten_params)
from .subject import SubjectCheckpoint, features, predict

DEFAULT_CURVE_A = 1.93
DEFAULT_CURVE_B = 0.79
LOG_EPS = 1e-7       # clamp inside the cross-entropy logs
SQDIST_EPS = 1e-12   # keeps the fractional power smooth at zero distance


def autoencoder_layer_sizes(h: int) -> tuple[list[int], list[int]]:
    half = max(h // 2, 2)
    return [h, half, half, half, half, 2], [2, half, half, half, half, h]


@dataclass
class VisualizationModel:
    epoch: int
    encoder: MlpParams   # h -> 2
    decoder: MlpParams   # 2 -> h
    curve_a: float = DEFAULT_CURVE_A
    curve_b: float = DEFAULT_CURVE_B

    def __post_init__(self):
        if self.encoder.out_dim != 2 or self.decoder.in_dim != 2:
            raise DimensionError("encoder must end and decoder must start at 2 dims")
        if self.encoder.in_dim != self.decoder.out_dim:
            raise DimensionError("encoder in-dim must equal decoder out-dim")

    @property
    def h(self) -> int:
        return self.encoder.in_dim

    def parameter_arrays(self) -> list[np.ndarray]:
        return self.encoder.arrays() + self.decoder.arrays()

    def copy(self) -> "VisualizationModel":
        return VisualizationModel(self.epoch, self.encoder.copy(), self.decoder.copy(),
                                  self.curve_a, self.curve_b)


def init_model(h: int, rng: np.random.Generator, curve_a: float = DEFAULT_CURVE_A,
               curve_b: float = DEFAULT_CURVE_B, epoch: int = 1) -> VisualizationModel:
    enc_sizes, dec_sizes = autoencoder_layer_sizes(h)
    return VisualizationModel(epoch, init_mlp(enc_sizes, rng), init_mlp(dec_sizes, rng),
                              curve_a, curve_b)


def project(model: VisualizationModel, reps: np.ndarray) -> np.ndarray:
    return forward(model.encoder, reps)


def inverse_project(model: VisualizationModel, points2d: np.ndarray) -> np.ndarray:
    return forward(model.decoder, points2d)


@dataclass
class LossWeights:
    lambda_proj: float = 1.0
    lambda_recon: float = 1.0
    lambda_temporal: float = 0.3
    beta: float = 1.0
    k: int = 15          # neighbor count for the semantic-stability vector


@dataclass
class TrainSchedule:
    lr: float = 0.01
    momentum: float = 0.9
    decay_every: int = 8
    decay_factor: float = 10.0
    epochs: int = 40
    batch_size: int = 256
    negative_rate: int = 2
    recon_batch: int = 0      # reconstruction rows per step; 0 = all vertices
    clip_norm: float = 10.0   # global gradient-norm cap; early recon spikes
                              # otherwise blow up momentum SGD


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if not max_norm or total <= max_norm:
        return grads
    scale = np.float32(max_norm / total)
    return [g * scale for g in grads]


# -- loss terms ---------------------------------------------------------------

def _projection_loss_node(tape: ComputationTape, enc: MlpTapeHandle,
                          vertices: np.ndarray, batch: PairBatch,
                          a: float, b: float) -> Node:
    dtype = vertices.dtype
    y_left = enc.forward(tape.leaf(vertices[batch.left]))
    y_right = enc.forward(tape.leaf(vertices[batch.right]))
    def floored(node):  # max(x, eps) so the logs stay <= 0 and finite
        return tape.add_scalar(tape.relu(tape.add_scalar(node, -LOG_EPS)), LOG_EPS)

    diff = tape.sub(y_left, y_right)
    sq = tape.row_sum(tape.mul(diff, diff))
    powed = tape.pow_const(tape.add_scalar(sq, SQDIST_EPS), b)
    q = tape.reciprocal(tape.add_scalar(tape.scale(powed, a), 1.0))
    p = tape.leaf(batch.target.reshape(-1, 1).astype(dtype))
    one_minus_p = tape.leaf((1.0 - batch.target.reshape(-1, 1)).astype(dtype))
    log_q = tape.log(floored(q))
    log_not_q = tape.log(floored(tape.add_scalar(tape.scale(q, -1.0), 1.0)))
    per_pair = tape.add(tape.mul(p, log_q), tape.mul(one_minus_p, log_not_q))
    return tape.scale(tape.mean_all(per_pair), -1.0)


def projection_loss(encoder: MlpParams, vertices: np.ndarray, batch: PairBatch,
                    a: float = DEFAULT_CURVE_A, b: float = DEFAULT_CURVE_B):
    """Mean binary cross-entropy between edge weights and embedding similarity
    q = 1/(1 + a*||dy||^(2b)). Returns (loss, encoder gradients)."""
    if len(batch) == 0:
        raise DimensionError("projection loss needs a nonempty batch")
    tape = ComputationTape()
    enc = MlpTapeHandle(tape, encoder)
    loss = _projection_loss_node(tape, enc, vertices, batch, a, b)
    adjoints = tape.backward(loss)
    return float(loss.value[0, 0]), enc.gradients(adjoints)


def head_gradient_weights(ckpt: SubjectCheckpoint, reps: np.ndarray) -> np.ndarray:
    """Per-sample |d g_top1 / dx| + |d g_top2 / dx|, elementwise over the h dims."""
    reps = np.asarray(reps)
    if reps.dtype != np.float64:
        reps = reps.astype(np.float32)
    _, top1, top2 = predict(ckpt, reps.astype(np.float32))
    tape = ComputationTape()
    head = MlpTapeHandle(tape, ckpt.head)
    x = tape.leaf(reps)
    logits = head.forward(x)
    total = np.zeros_like(reps)
    for cols in (top1, top2):
        picked = tape.take_per_row(logits, cols)
        loss = tape.sum_all(picked)  # rows are independent, so row gradients separate
        adjoints = tape.backward(loss)
        total += np.abs(tape.grad(adjoints, x))
    return total


def _reconstruction_loss_node(tape: ComputationTape, enc: MlpTapeHandle,
                              dec: MlpTapeHandle, rows: np.ndarray,
                              row_weights: np.ndarray) -> Node:
    x = tape.leaf(rows)
    recon = dec.forward(enc.forward(x))
    diff = tape.sub(x, recon)
    weighted = tape.mul(tape.mul(diff, diff), tape.leaf(row_weights))
    return tape.mean_all(weighted)


def reconstruction_weights(grad_weights: np.ndarray, beta: float) -> np.ndarray:
    return ((1.0 + grad_weights) ** beta).astype(grad_weights.dtype)


def reconstruction_loss(X: np.ndarray, grad_weights: np.ndarray, encoder: MlpParams,
                        decoder: MlpParams, beta: float = 1.0):
    """(1/(N*h)) * sum_i sum_m (1+grad_i^m)^beta (x_i^m - psi(phi(x_i))^m)^2.

    grad_weights enter as constants. Returns (loss, encoder grads, decoder grads).
    """
    X = np.asarray(X)
    if grad_weights.shape != X.shape:
        raise DimensionError("grad_weights must align with X")
    tape = ComputationTape()
    enc = MlpTapeHandle(tape, encoder)
    dec = MlpTapeHandle(tape, decoder)
    loss = _reconstruction_loss_node(tape, enc, dec, X,
                                     reconstruction_weights(grad_weights.astype(X.dtype), beta))
    adjoints = tape.backward(loss)
    return float(loss.value[0, 0]), enc.gradients(adjoints), dec.gradients(adjoints)


def temporal_loss(current: list[np.ndarray], previous: list[np.ndarray],
                  sem: np.ndarray):
    """mean(sem) * squared Frobenius distance between parameter sets.

    The per-sample stability weights factor out of the weight-space norm, so
    the gradient is closed-form: 2 * mean(sem) * (W_t - W_{t-1}).
    """
    if len(current) != len(previous):
        raise DimensionError("parameter lists differ in length")
    sem_mean = float(np.mean(np.asarray(sem, dtype=np.float64)))
    sq = 0.0
    grads = []
    for cur, prev in zip(current, previous):
        if cur.shape != prev.shape:
            raise DimensionError(f"parameter shape mismatch {cur.shape} vs {prev.shape}")
        delta = cur.astype(np.float64) - prev.astype(np.float64)
        sq += float((delta * delta).sum())
        grads.append((2.0 * sem_mean * delta).astype(cur.dtype))
    return sem_mean * sq, grads


# -- training -----------------------------------------------------------------

@dataclass
class FitHistory:
    initial_loss: float
    final_loss: float
    epoch_losses: list[float] = field(default_factory=list)


def evaluate_total_loss(model: VisualizationModel, complex_: NeighborComplex,
                        ckpt: SubjectCheckpoint, weights: LossWeights,
                        prev_model: VisualizationModel | None,
                        sem: np.ndarray | None,
                        negative_rate: int, eval_seed: int = 0x5EED) -> float:
    """Full objective on all edges with a fixed negative draw (comparable
    across calls): projection + weighted reconstruction + temporal."""
    rng = np.random.default_rng(eval_seed)
    vertices = complex_.vertices()
    total, pairs = 0.0, 0
    for batch in sample_pair_batches(complex_, negative_rate, rng, batch_size=4096):
        loss, _ = projection_loss(model.encoder, vertices, batch,
                                  model.curve_a, model.curve_b)
        total += loss * len(batch)
        pairs += len(batch)
    value = weights.lambda_proj * (total / pairs)
    if weights.lambda_recon > 0:
        grad_w = head_gradient_weights(ckpt, vertices)
        rec, _, _ = reconstruction_loss(vertices, grad_w, model.encoder,
                                        model.decoder, weights.beta)
        value += weights.lambda_recon * rec
    if weights.lambda_temporal > 0 and prev_model is not None and sem is not None:
        t_loss, _ = temporal_loss(model.parameter_arrays(),
                                  prev_model.parameter_arrays(), sem)
        value += weights.lambda_temporal * t_loss
    return value


def fit_epoch(ckpt: SubjectCheckpoint, complex_: NeighborComplex,
              prev_model: VisualizationModel | None = None,
              weights: LossWeights | None = None,
              schedule: TrainSchedule | None = None,
              seed: int = 0, sem: np.ndarray | None = None,
              curve_a: float = DEFAULT_CURVE_A, curve_b: float = DEFAULT_CURVE_B,
              record_full_loss: bool = True) -> tuple[VisualizationModel, FitHistory]:
    """Train one epoch's autoencoder over the weighted complex.

    prev_model (epoch t-1) provides both the transfer initialization and the
    temporal reference; the temporal term is active only when it is present
    together with the stability vector `sem`.
    """
    weights = weights or LossWeights()
    schedule = schedule or TrainSchedule()
    rng = np.random.default_rng(seed)
    if prev_model is not None:
        model = prev_model.copy()
        model.epoch = ckpt.epoch
    else:
        model = init_model(ckpt.h, rng, curve_a, curve_b, epoch=ckpt.epoch)

    vertices = complex_.vertices().astype(np.float32)
    n_vertices = vertices.shape[0]
    use_recon = weights.lambda_recon > 0
    if use_recon:
        grad_w = head_gradient_weights(ckpt, vertices)
        recon_w = reconstruction_weights(grad_w, weights.beta)
    use_temporal = (weights.lambda_temporal > 0 and prev_model is not None
                    and sem is not None)
    if use_temporal:
        prev_arrays = [a.copy() for a in prev_model.parameter_arrays()]
        sem_mean = float(np.mean(np.asarray(sem, dtype=np.float64)))

    params = model.parameter_arrays()
    opt = SgdMomentum(params, lr=schedule.lr, momentum=schedule.momentum,
                      decay_every=schedule.decay_every,
                      decay_factor=schedule.decay_factor)
    initial = evaluate_total_loss(model, complex_, ckpt, weights, prev_model, sem,
                                  schedule.negative_rate) if record_full_loss else float("nan")

    n_enc = len(model.encoder.arrays())
    history = FitHistory(initial, float("nan"))
    for opt_epoch in range(schedule.epochs):
        running, steps = 0.0, 0
        for batch_index, batch in enumerate(
                sample_pair_batches(complex_, schedule.negative_rate, rng,
                                    schedule.batch_size)):
            tape = ComputationTape()
            enc = MlpTapeHandle(tape, model.encoder)
            dec = MlpTapeHandle(tape, model.decoder)
            loss = tape.scale(
                _projection_loss_node(tape, enc, vertices, batch,
                                      model.curve_a, model.curve_b),
                weights.lambda_proj)
            if use_recon:
                if schedule.recon_batch and schedule.recon_batch < n_vertices:
                    rows = rng.choice(n_vertices, size=schedule.recon_batch,
                                      replace=False)
                else:
                    rows = slice(None)
                rec = _reconstruction_loss_node(tape, enc, dec, vertices[rows],
                                                recon_w[rows])
                loss = tape.add(loss, tape.scale(rec, weights.lambda_recon))
            value = float(loss.value[0, 0])
            if use_temporal:
                t_loss, t_grads = temporal_loss(params, prev_arrays, sem)
                value += weights.lambda_temporal * t_loss
            if not np.isfinite(value):
                raise TrainingError(
                    f"visualizer loss non-finite at opt epoch {opt_epoch}, "
                    f"batch {batch_index}")
            adjoints = tape.backward(loss)
            grads = enc.gradients(adjoints) + dec.gradients(adjoints)
            if use_temporal:
                lt = weights.lambda_temporal
                grads = [g + lt * tg for g, tg in zip(grads, t_grads)]
            opt.step(clip_gradients(grads, schedule.clip_norm))
            running += value
            steps += 1
        opt.advance_epoch()
        history.epoch_losses.append(running / max(steps, 1))
    history.final_loss = evaluate_total_loss(
        model, complex_, ckpt, weights, prev_model, sem,
        schedule.negative_rate) if record_full_loss else float("nan")
    return model, history


@dataclass
class EpochFit:
    model: VisualizationModel
    boundary: BoundarySet | None
    complex_: NeighborComplex
    reps: np.ndarray
    history: FitHistory
    sem: np.ndarray | None


def fit_sequence(checkpoints: list[SubjectCheckpoint], dataset,
                 weights: LossWeights | None = None,
                 schedule: TrainSchedule | None = None,
                 complex_k: int = 15, boundary_fraction: float = 0.1,
                 delta: float = 0.1, lambda_max: float = 0.4,
                 bisect_rounds: int = 16, alpha: float = 0.8,
                 include_boundary: bool = True, transfer: bool = True,
                 seed: int = 0, curve_a: float = DEFAULT_CURVE_A,
                 curve_b: float = DEFAULT_CURVE_B,
                 boundary_sets: list[BoundarySet] | None = None,
                 record_full_loss: bool = False) -> list[EpochFit]:
    """Fit the chronological model sequence, one autoencoder per checkpoint.

    Boundary sets and complexes are built fresh per checkpoint (or taken from
    `boundary_sets` when the pipeline already synthesized them). Ablations:
    include_boundary=False drops xb/bb edges, transfer=False re-initializes
    each epoch, weights.lambda_* zero out loss terms.
    """
    from .metrics import eval_sem  # local import; metrics also imports this module

    if not checkpoints:
        raise DimensionError("need at least one checkpoint")
    weights = weights or LossWeights()
    schedule = schedule or TrainSchedule()
    fits: list[EpochFit] = []
    prev_model = None
    prev_reps = None
    for idx, ckpt in enumerate(checkpoints):
        reps = features(ckpt, dataset.inputs)
        boundary = None
        if include_boundary:
            if boundary_sets is not None:
                boundary = boundary_sets[idx]
            else:
                target = max(int(round(boundary_fraction * dataset.n)), complex_k + 1)
                boundary = synthesize_boundary_set(
                    ckpt, dataset, target, delta, lambda_max, bisect_rounds,
                    alpha, seed=seed * 7919 + ckpt.epoch)
        complex_ = build_complex(reps, boundary.points if boundary else None, complex_k)
        attach_fuzzy_weights(complex_)
        sem = None
        if prev_reps is not None:
            sem = eval_sem(prev_reps, reps, weights.k)
        model, history = fit_epoch(
            ckpt, complex_,
            prev_model=prev_model if transfer else None,
            weights=weights, schedule=schedule,
            seed=seed * 104729 + ckpt.epoch, sem=sem,
            curve_a=curve_a, curve_b=curve_b,
            record_full_loss=record_full_loss)
        fits.append(EpochFit(model, boundary, complex_, reps, history, sem))
        prev_model = model
        prev_reps = reps
    return fits


# -- persistence (same flat-f32 + manifest format as subject checkpoints) -----

def save_models(models: list[VisualizationModel], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = models[0]
    manifest = {
        "format_version": 1,
        "h": first.h,
        "curve_a": first.curve_a,
        "curve_b": first.curve_b,
        "encoder_layer_sizes": first.encoder.layer_sizes,
        "encoder_activations": first.encoder.activations,
        "decoder_layer_sizes": first.decoder.layer_sizes,
        "decoder_activations": first.decoder.activations,
        "epochs": {},
    }
    for model in models:
        name = f"epoch_{model.epoch:03d}.bin"
        blob = np.concatenate([flatten_params(model.encoder), flatten_params(model.decoder)])
        (directory / name).write_bytes(blob.tobytes())
        manifest["epochs"][str(model.epoch)] = name
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_models(manifest_path) -> list[VisualizationModel]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    e_sizes = manifest["encoder_layer_sizes"]
    e_acts = manifest["encoder_activations"]
    d_sizes = manifest["decoder_layer_sizes"]
    d_acts = manifest["decoder_activations"]
    e_len = sum(si * so + so for si, so in zip(e_sizes[:-1], e_sizes[1:]))
    models = []
    for epoch in sorted(int(e) for e in manifest["epochs"]):
        path = manifest_path.parent / manifest["epochs"][str(epoch)]
        flat = np.frombuffer(path.read_bytes(), dtype="<f4")
        encoder = unflatten_params(flat[:e_len], e_sizes, e_acts)
        decoder = unflatten_params(flat[e_len:], d_sizes, d_acts)
        models.append(VisualizationModel(epoch, encoder, decoder,
                                         manifest["curve_a"], manifest["curve_b"]))
    return models
