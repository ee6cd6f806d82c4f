"""Preservation metrics for visualization models, plus a PCA baseline.

Four families: neighborhood preservation between representation and
embedding space, boundary-neighborhood preservation, prediction/reconstruction
preservation through the decoder round trip, and temporal stability
(correlation between per-sample neighborhood churn and embedding displacement
across consecutive epochs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ConvergenceError, DegenerateInputError
from .neighbor_complex import build_cross_knn, build_knn
from .subject import SubjectCheckpoint, predict
from .visualizer import VisualizationModel, inverse_project, project

METRIC_K_VALUES = (10, 15, 20)


def _neighbor_sets(points: np.ndarray, k: int) -> list[set]:
    index = build_knn(points, k)
    return [set(map(int, row)) for row in index.indices]


def nn_preserving(X: np.ndarray, Y: np.ndarray, k: int) -> float:
    """Mean fraction of k nearest neighbors shared between the two spaces."""
    X, Y = np.asarray(X), np.asarray(Y)
    if X.shape[0] != Y.shape[0]:
        raise ContractError("X and Y must be row-aligned")
    if X.shape[0] <= k:
        raise ContractError(f"need N > k, got N={X.shape[0]}, k={k}")
    high = _neighbor_sets(X, k)
    low = _neighbor_sets(Y, k)
    overlap = [len(a & b) / k for a, b in zip(high, low)]
    return float(np.mean(overlap))


def boundary_preserving(X: np.ndarray, Y: np.ndarray, B: np.ndarray,
                        B_low: np.ndarray, k: int) -> float:
    """Like nn_preserving but neighbor search is restricted to boundary sets.

    B_low must be the projected counterpart of B, row-aligned. Normalized by
    N and k.
    """
    B, B_low = np.asarray(B), np.asarray(B_low)
    if B.shape[0] != B_low.shape[0]:
        raise ContractError("B and B_low must be row-aligned")
    if B.shape[0] <= k:
        raise ContractError(f"need |B| > k, got {B.shape[0]} <= {k}")
    high = build_cross_knn(X, B, k).indices
    low = build_cross_knn(Y, B_low, k).indices
    overlap = [len(set(map(int, a)) & set(map(int, b))) / k
               for a, b in zip(high, low)]
    return float(np.mean(overlap))


def ppr(ckpt: SubjectCheckpoint, model: VisualizationModel, X: np.ndarray) -> float:
    """Fraction of samples whose argmax prediction survives the decoder round trip."""
    _, direct, _ = predict(ckpt, X)
    _, round_trip, _ = predict(ckpt, inverse_project(model, project(model, X)))
    return float((direct == round_trip).mean())


def reconstruction_error(model: VisualizationModel, X: np.ndarray) -> float:
    """Mean squared representation-space reconstruction error (per sample)."""
    X = np.asarray(X, dtype=np.float32)
    recon = inverse_project(model, project(model, X))
    diff = (X - recon).astype(np.float64)
    return float((diff * diff).sum(axis=1).mean())


def eval_sem(X_prev: np.ndarray, X_curr: np.ndarray, k: int) -> np.ndarray:
    """Per-sample fraction of k nearest neighbors shared across two epochs."""
    X_prev, X_curr = np.asarray(X_prev), np.asarray(X_curr)
    if X_prev.shape[0] != X_curr.shape[0]:
        raise ContractError("epochs must be row-aligned by sample id")
    if X_prev.shape[0] <= k:
        raise ContractError(f"need N > k, got N={X_prev.shape[0]}, k={k}")
    prev_sets = _neighbor_sets(X_prev, k)
    curr_sets = _neighbor_sets(X_curr, k)
    return np.array([len(a & b) / k for a, b in zip(prev_sets, curr_sets)])


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Product-moment correlation with 64-bit accumulation."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size or a.size < 3:
        raise ContractError("need equal-length vectors of size >= 3")
    ac = a - a.mean()
    bc = b - b.mean()
    va = (ac * ac).sum()
    vb = (bc * bc).sum()
    if va == 0 or vb == 0:
        raise DegenerateInputError("correlation undefined for zero-variance input")
    return float((ac * bc).sum() / np.sqrt(va * vb))


def temporal_pv(sem: np.ndarray, displacement: np.ndarray) -> float:
    """Pearson correlation between neighborhood stability and embedding
    displacement; strong preservation shows up as a negative value."""
    return pearson(sem, displacement)


def embedding_displacement(model_prev: VisualizationModel, model_curr: VisualizationModel,
                           X_prev: np.ndarray, X_curr: np.ndarray) -> np.ndarray:
    """Euclidean distance between consecutive embeddings, per sample."""
    y_prev = project(model_prev, X_prev).astype(np.float64)
    y_curr = project(model_curr, X_curr).astype(np.float64)
    return np.sqrt(((y_prev - y_curr) ** 2).sum(axis=1))


# -- PCA baseline ---------------------------------------------------------------

POWER_MAX_ITERATIONS = 1000
POWER_TOLERANCE = 1e-10


@dataclass
class PcaBaseline:
    mean: np.ndarray       # (h,)
    axes: np.ndarray       # (h, 2) orthonormal
    explained: tuple[float, float]


def _power_iteration(cov: np.ndarray, rng: np.random.Generator,
                     orthogonal_to: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    h = cov.shape[0]
    v = rng.standard_normal(h)
    if orthogonal_to is not None:
        v -= orthogonal_to * (orthogonal_to @ v)
    v /= np.linalg.norm(v)
    eigenvalue = float(v @ cov @ v)
    for _ in range(POWER_MAX_ITERATIONS):
        w = cov @ v
        if orthogonal_to is not None:
            w -= orthogonal_to * (orthogonal_to @ w)
        norm = np.linalg.norm(w)
        if norm == 0:  # exactly null direction; any unit vector works
            return v, 0.0
        v = w / norm
        new_eigenvalue = float(v @ cov @ v)
        if abs(new_eigenvalue - eigenvalue) <= POWER_TOLERANCE * max(abs(new_eigenvalue), 1e-30):
            return v, new_eigenvalue
        eigenvalue = new_eigenvalue
    raise ConvergenceError(
        f"power iteration did not converge in {POWER_MAX_ITERATIONS} iterations")


def pca_fit(X: np.ndarray, seed: int = 0) -> PcaBaseline:
    """Top-2 principal axes by power iteration with deflation."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 3:
        raise ContractError("PCA baseline needs at least 3 samples")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    rng = np.random.default_rng(seed)
    v1, lam1 = _power_iteration(cov, rng)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iteration(deflated, rng, orthogonal_to=v1)
    total = float(np.trace(cov))
    explained = (lam1 / total, lam2 / total) if total > 0 else (0.0, 0.0)
    return PcaBaseline(mean, np.stack([v1, v2], axis=1), explained)


def pca_project(baseline: PcaBaseline, X: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - baseline.mean) @ baseline.axes


def pca_reconstruct(baseline: PcaBaseline, Y: np.ndarray) -> np.ndarray:
    return np.asarray(Y, dtype=np.float64) @ baseline.axes.T + baseline.mean


def pca_ppr(ckpt: SubjectCheckpoint, baseline: PcaBaseline, X: np.ndarray) -> float:
    _, direct, _ = predict(ckpt, X)
    recon = pca_reconstruct(baseline, pca_project(baseline, X)).astype(np.float32)
    _, round_trip, _ = predict(ckpt, recon)
    return float((direct == round_trip).mean())


# -- report ----------------------------------------------------------------------

@dataclass
class SplitMetrics:
    nn_pv: dict[int, float] = field(default_factory=dict)
    boundary_pv: dict[int, float] = field(default_factory=dict)
    rec_pv: float = float("nan")
    ppr: float = float("nan")

    def to_json(self) -> dict:
        return {
            "nn_pv": {str(k): v for k, v in sorted(self.nn_pv.items())},
            "boundary_pv": {str(k): v for k, v in sorted(self.boundary_pv.items())},
            "rec_pv": self.rec_pv,
            "ppr": self.ppr,
        }


@dataclass
class MetricsReport:
    epochs: dict[int, dict[str, SplitMetrics]] = field(default_factory=dict)
    # temporal[split][(t, t+1)][k] -> pearson r
    temporal: dict[str, dict[tuple[int, int], dict[int, float]]] = field(default_factory=dict)
    pca: dict[int, dict[str, SplitMetrics]] = field(default_factory=dict)

    def temporal_mean(self, split: str, k: int) -> float:
        pairs = self.temporal.get(split, {})
        values = [per_k[k] for per_k in pairs.values() if k in per_k]
        return float(np.mean(values)) if values else float("nan")

    def to_json(self) -> dict:
        return {
            "epochs": {
                str(t): {split: m.to_json() for split, m in sorted(splits.items())}
                for t, splits in sorted(self.epochs.items())
            },
            "temporal": {
                split: {
                    f"{a}-{b}": {str(k): v for k, v in sorted(per_k.items())}
                    for (a, b), per_k in sorted(pairs.items())
                }
                for split, pairs in sorted(self.temporal.items())
            },
            "temporal_mean": {
                split: {str(k): self.temporal_mean(split, k) for k in METRIC_K_VALUES}
                for split in sorted(self.temporal)
            },
            "pca": {
                str(t): {split: m.to_json() for split, m in sorted(splits.items())}
                for t, splits in sorted(self.pca.items())
            },
        }

    def to_table(self) -> str:
        """Aligned text table: per-epoch spatial rows, then temporal rows."""
        lines = []
        header = (f"{'epoch':>5} {'split':>6} {'nn_pv(15)':>10} {'bnd_pv(15)':>11} "
                  f"{'ppr':>7} {'rec_pv':>10}")
        lines.append(header)
        lines.append("-" * len(header))
        for t, splits in sorted(self.epochs.items()):
            for split, m in sorted(splits.items()):
                lines.append(
                    f"{t:>5} {split:>6} {m.nn_pv.get(15, float('nan')):>10.3f} "
                    f"{m.boundary_pv.get(15, float('nan')):>11.3f} "
                    f"{m.ppr:>7.3f} {m.rec_pv:>10.4f}")
        if self.temporal:
            lines.append("")
            t_header = f"{'pair':>7} {'split':>6} " + " ".join(
                f"{'tpv(' + str(k) + ')':>9}" for k in METRIC_K_VALUES)
            lines.append(t_header)
            lines.append("-" * len(t_header))
            for split, pairs in sorted(self.temporal.items()):
                for (a, b), per_k in sorted(pairs.items()):
                    cells = " ".join(f"{per_k.get(k, float('nan')):>9.3f}"
                                     for k in METRIC_K_VALUES)
                    lines.append(f"{f'{a}-{b}':>7} {split:>6} {cells}")
        return "\n".join(lines) + "\n"
