"""Exact kNN structures and the boundary-augmented neighborhood complex.

Vertices are data representations plus synthesized boundary points. Edges
come in three kinds: data-data ("xx"), data-boundary ("xb") and
boundary-boundary ("bb"); each vertex contributes its k nearest neighbors
of the applicable kind. Edge weights are fuzzy membership strengths with
per-vertex bandwidths calibrated so each neighborhood sums to log2(k).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ToleranceError

MAX_EXACT_POINTS = 20_000
KNN_BLOCK_ROWS = 512

EDGE_XX = "xx"
EDGE_XB = "xb"
EDGE_BB = "bb"


@dataclass
class NeighborIndex:
    """Per-point k nearest neighbors, sorted ascending by (distance, index)."""

    points: np.ndarray       # (M, h) the indexed points
    k: int
    indices: np.ndarray      # (Q, k) neighbor positions into `points`
    distances: np.ndarray    # (Q, k) Euclidean distances, float64


def _pairwise_sq_dists(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    q = queries.astype(np.float64)
    p = points.astype(np.float64)
    sq = (q * q).sum(axis=1)[:, None] + (p * p).sum(axis=1)[None, :] - 2.0 * (q @ p.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def _k_smallest(sq_block: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """First k columns per row under (distance, index) order."""
    m = sq_block.shape[1]
    part = np.argpartition(sq_block, min(k, m - 1), axis=1)[:, :k]
    rows = np.arange(sq_block.shape[0])[:, None]
    cand = sq_block[rows, part]
    # order candidates by distance, tie-break on the original index
    order = np.lexsort((part, cand), axis=1)
    idx = part[rows, order]
    dist = cand[rows, order]
    return idx, dist


def build_knn(points: np.ndarray, k: int) -> NeighborIndex:
    """Exact brute-force kNN within one point set (no self-neighbors)."""
    points = np.asarray(points)
    m = points.shape[0]
    if not 1 <= k < m:
        raise ContractError(f"need M > k >= 1, got M={m}, k={k}")
    if m > MAX_EXACT_POINTS:
        raise ContractError(f"exact index capped at {MAX_EXACT_POINTS} points, got {m}")
    indices = np.empty((m, k), dtype=np.int64)
    dists = np.empty((m, k), dtype=np.float64)
    for start in range(0, m, KNN_BLOCK_ROWS):
        stop = min(start + KNN_BLOCK_ROWS, m)
        sq = _pairwise_sq_dists(points[start:stop], points)
        sq[np.arange(stop - start), np.arange(start, stop)] = np.inf
        idx, d = _k_smallest(sq, k)
        indices[start:stop] = idx
        dists[start:stop] = d
    return NeighborIndex(points, k, indices, np.sqrt(dists))


def build_cross_knn(queries: np.ndarray, points: np.ndarray, k: int) -> NeighborIndex:
    """k nearest `points` for each query row (the sets are disjoint by contract)."""
    queries = np.asarray(queries)
    points = np.asarray(points)
    if not 1 <= k <= points.shape[0]:
        raise ContractError(f"need |points| >= k >= 1, got {points.shape[0]}, k={k}")
    nq = queries.shape[0]
    indices = np.empty((nq, k), dtype=np.int64)
    dists = np.empty((nq, k), dtype=np.float64)
    for start in range(0, nq, KNN_BLOCK_ROWS):
        stop = min(start + KNN_BLOCK_ROWS, nq)
        sq = _pairwise_sq_dists(queries[start:stop], points)
        idx, d = _k_smallest(sq, k)
        indices[start:stop] = idx
        dists[start:stop] = d
    return NeighborIndex(points, k, indices, np.sqrt(dists))


@dataclass
class NeighborComplex:
    """Vertices = data points then boundary points; edges keyed by the
    sorted global vertex pair."""

    data: np.ndarray                       # (NX, h)
    boundary: np.ndarray                   # (NB, h), may be empty in ablations
    k: int
    edges: dict[tuple[int, int], str]      # (u, v) u < v -> kind
    weights: dict[tuple[int, int], float] | None = None
    metric: str = "euclidean"
    xx_index: NeighborIndex | None = None
    xb_index: NeighborIndex | None = None
    bb_index: NeighborIndex | None = None

    @property
    def n_data(self) -> int:
        return self.data.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.n_data + self.n_boundary

    def vertices(self) -> np.ndarray:
        if self.n_boundary == 0:
            return self.data
        return np.vstack([self.data, self.boundary])

    def edge_kind_counts(self) -> dict[str, int]:
        counts = {EDGE_XX: 0, EDGE_XB: 0, EDGE_BB: 0}
        for kind in self.edges.values():
            counts[kind] += 1
        return counts


def build_complex(data: np.ndarray, boundary: np.ndarray | None, k: int,
                  metric: str = "euclidean") -> NeighborComplex:
    """Assemble the three edge families from exact kNN queries.

    boundary=None (or empty) builds the data-only variant used by the
    projection-only ablation.
    """
    if metric != "euclidean":
        raise ContractError(f"unsupported metric {metric!r}")
    data = np.asarray(data)
    nx = data.shape[0]
    if nx <= k:
        raise ContractError(f"need |data| > k, got {nx} <= {k}")

    edges: dict[tuple[int, int], str] = {}
    xx = build_knn(data, k)
    for i in range(nx):
        for j in xx.indices[i]:
            u, v = (i, int(j)) if i < j else (int(j), i)
            edges[(u, v)] = EDGE_XX

    xb_index = bb_index = None
    if boundary is None:
        boundary = np.zeros((0, data.shape[1]), dtype=data.dtype)
    boundary = np.asarray(boundary)
    nb = boundary.shape[0]
    if nb > 0:
        if nb <= k:
            raise ContractError(f"need |boundary| > k, got {nb} <= {k}")
        xb_index = build_cross_knn(data, boundary, k)
        for i in range(nx):
            for j in xb_index.indices[i]:
                edges[(i, nx + int(j))] = EDGE_XB
        bb_index = build_knn(boundary, k)
        for i in range(nb):
            for j in bb_index.indices[i]:
                u, v = (i, int(j)) if i < j else (int(j), i)
                edges[(nx + u, nx + v)] = EDGE_BB

    return NeighborComplex(data, boundary, k, edges, None, metric, xx, xb_index, bb_index)


# -- fuzzy membership weights -------------------------------------------------

SIGMA_TOLERANCE = 1e-3
SIGMA_MAX_ROUNDS = 64
WEIGHT_FLOOR = 1e-12  # keeps far-tail memberships positive in float32


def smooth_knn_bandwidth(distances: np.ndarray, target: float) -> tuple[float, float]:
    """Solve for (rho, sigma) with sum_j exp(-max(0, d_j - rho)/sigma) = target.

    `distances` is one point's ascending kNN distance row. Bisection on sigma;
    raises ToleranceError if 64 rounds cannot hit the target within 1e-3.
    """
    d = np.asarray(distances, dtype=np.float64)
    rho = float(d[0])
    adj = np.maximum(d - rho, 0.0)

    def member_sum(sigma):
        return float(np.exp(-adj / sigma).sum())

    hi = 1.0
    for _ in range(SIGMA_MAX_ROUNDS):
        if member_sum(hi) >= target:
            break
        hi *= 2.0
    lo = 0.0
    sigma = hi
    for _ in range(SIGMA_MAX_ROUNDS):
        sigma = 0.5 * (lo + hi)
        s = member_sum(sigma) if sigma > 0 else float((adj == 0).sum())
        if abs(s - target) <= SIGMA_TOLERANCE:
            return rho, sigma
        if s > target:
            hi = sigma
        else:
            lo = sigma
    raise ToleranceError(
        f"sigma calibration did not reach target {target:.4f} within "
        f"{SIGMA_MAX_ROUNDS} rounds (residual {member_sum(sigma) - target:+.4f})")


def _directed_memberships(index: NeighborIndex) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Membership strength of each (query -> neighbor) pair in the index."""
    nq, k = index.indices.shape
    target = math.log2(k) if k > 1 else 1.0
    probs = np.empty((nq, k), dtype=np.float64)
    rhos = np.empty(nq)
    sigmas = np.empty(nq)
    for i in range(nq):
        rho, sigma = smooth_knn_bandwidth(index.distances[i], target)
        probs[i] = np.exp(-np.maximum(index.distances[i] - rho, 0.0) / sigma)
        rhos[i] = rho
        sigmas[i] = sigma
    return probs, rhos, sigmas


def _fuzzy_union(a: float, b: float) -> float:
    return a + b - a * b


def attach_fuzzy_weights(complex_: NeighborComplex) -> NeighborComplex:
    """Compute symmetrized edge weights p_uv = p_u|v + p_v|u - p_u|v * p_v|u.

    Each vertex's memberships come from its own neighbor list with its own
    (rho, sigma); directions absent from a list contribute 0. For xb edges
    the reciprocal direction uses the boundary point's memberships toward its
    k nearest data points (computed here solely for weighting; it adds no
    edges of its own).
    """
    nx = complex_.n_data
    weights: dict[tuple[int, int], float] = {}

    def union_into(edge_key, p):
        p = max(p, WEIGHT_FLOOR)
        prev = weights.get(edge_key)
        weights[edge_key] = p if prev is None else _fuzzy_union(prev, p)

    probs, _, _ = _directed_memberships(complex_.xx_index)
    for i in range(nx):
        for col, j in enumerate(complex_.xx_index.indices[i]):
            j = int(j)
            union_into((i, j) if i < j else (j, i), probs[i, col])

    if complex_.n_boundary > 0:
        probs, _, _ = _directed_memberships(complex_.xb_index)
        for i in range(nx):
            for col, j in enumerate(complex_.xb_index.indices[i]):
                union_into((i, nx + int(j)), probs[i, col])
        bx_index = build_cross_knn(complex_.boundary, complex_.data, complex_.k)
        probs, _, _ = _directed_memberships(bx_index)
        for b in range(complex_.n_boundary):
            for col, j in enumerate(bx_index.indices[b]):
                key = (int(j), nx + b)
                if key in complex_.edges:
                    union_into(key, probs[b, col])
        probs, _, _ = _directed_memberships(complex_.bb_index)
        for i in range(complex_.n_boundary):
            for col, j in enumerate(complex_.bb_index.indices[i]):
                j = int(j)
                u, v = (i, j) if i < j else (j, i)
                union_into((nx + u, nx + v), probs[i, col])

    complex_.weights = weights
    return complex_


# -- training pair batches ----------------------------------------------------

@dataclass
class PairBatch:
    """Positive edges with their weights plus uniform negatives at target 0."""

    left: np.ndarray     # (P,) global vertex indices
    right: np.ndarray    # (P,)
    target: np.ndarray   # (P,) float32; p_uv for positives, 0 for negatives
    kind: list[str]

    def __len__(self):
        return self.left.shape[0]


def _kind_ranges(complex_: NeighborComplex, kind: str) -> tuple[range, range]:
    nx, nv = complex_.n_data, complex_.n_vertices
    if kind == EDGE_XX:
        return range(nx), range(nx)
    if kind == EDGE_XB:
        return range(nx), range(nx, nv)
    return range(nx, nv), range(nx, nv)


def _draw_negatives(count: int, left_range: range, right_range: range,
                    edge_keys: np.ndarray, nv: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform pairs from the given index product, excluding self-pairs and
    keys present in the sorted edge-key array. Vectorized rejection sampling."""
    out_l = np.empty(count, dtype=np.int64)
    out_r = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        m = (count - filled) + (count - filled) // 3 + 8
        a = rng.integers(left_range.start, left_range.stop, size=m)
        b = rng.integers(right_range.start, right_range.stop, size=m)
        keys = np.minimum(a, b) * nv + np.maximum(a, b)
        pos = np.searchsorted(edge_keys, keys)
        pos_clipped = np.minimum(pos, edge_keys.size - 1)
        collides = edge_keys[pos_clipped] == keys
        ok = np.flatnonzero((a != b) & ~collides)[: count - filled]
        out_l[filled:filled + ok.size] = a[ok]
        out_r[filled:filled + ok.size] = b[ok]
        filled += ok.size
    return out_l, out_r


def sample_pair_batches(complex_: NeighborComplex, negative_rate: int,
                        rng: np.random.Generator, batch_size: int = 256):
    """One shuffled pass over all edges, yielding PairBatch chunks.

    Every edge appears once as a positive; each positive contributes
    negative_rate negatives drawn uniformly from its vertex-kind product,
    excluding self-pairs and existing edges.
    """
    if negative_rate < 1:
        raise ContractError("negative_rate must be >= 1")
    if complex_.weights is None:
        raise ContractError("attach_fuzzy_weights before sampling batches")
    edge_list = list(complex_.edges.items())
    order = rng.permutation(len(edge_list))
    nv = complex_.n_vertices
    edge_keys = np.sort(np.array([u * nv + v for (u, v) in complex_.edges],
                                 dtype=np.int64))

    for start in range(0, len(edge_list), batch_size):
        chunk = [edge_list[i] for i in order[start:start + batch_size]]
        left = [np.array([u for (u, _), _ in chunk], dtype=np.int64)]
        right = [np.array([v for (_, v), _ in chunk], dtype=np.int64)]
        target = [np.array([complex_.weights[e] for e, _ in chunk], dtype=np.float32)]
        kinds = [kind for _, kind in chunk]
        for kind in (EDGE_XX, EDGE_XB, EDGE_BB):
            count = negative_rate * sum(1 for _, k in chunk if k == kind)
            if count == 0:
                continue
            neg_l, neg_r = _draw_negatives(count, *_kind_ranges(complex_, kind),
                                           edge_keys, nv, rng)
            left.append(neg_l)
            right.append(neg_r)
            target.append(np.zeros(count, dtype=np.float32))
            kinds.extend([kind] * count)
        yield PairBatch(np.concatenate(left), np.concatenate(right),
                        np.concatenate(target), kinds)


# -- export -------------------------------------------------------------------

def export_complex_jsonl(complex_: NeighborComplex, path) -> None:
    """Header record then one record per weighted edge."""
    if complex_.weights is None:
        raise ContractError("attach_fuzzy_weights before export")
    path = Path(path)
    with path.open("w") as fh:
        header = {"k": complex_.k, "n_data": complex_.n_data,
                  "n_boundary": complex_.n_boundary, "metric": complex_.metric}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for (u, v) in sorted(complex_.edges):
            record = {"i": u, "j": v, "kind": complex_.edges[(u, v)],
                      "weight": complex_.weights[(u, v)]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
