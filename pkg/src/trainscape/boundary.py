"""Decision-boundary estimation by mixup bisection.

A representation lies on the delta-boundary when its two largest min-max
rescaled logits differ by at most delta. Boundary points are synthesized by
bisecting the convex combination of two differently-classified inputs, with
class pairs drawn to balance diversity (pairs short on points) against
synthesis success rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, SynthesisError
from .numerics import minmax_rescale
from .subject import Dataset, SubjectCheckpoint, classify, features, predict

DEFAULT_DELTA = 0.1
DEFAULT_LAMBDA_MAX = 0.4
DEFAULT_ALPHA = 0.8
DEFAULT_MAX_ROUNDS = 16
DEFAULT_TARGET_FRACTION = 0.1
ATTEMPT_BUDGET_FACTOR = 100


def delta_boundary_test(ckpt: SubjectCheckpoint, rep: np.ndarray, delta: float) -> bool:
    """True iff rescaled top1 minus rescaled top2 of g(rep) is <= delta."""
    if not 0 <= delta < 1:
        raise ContractError(f"delta must lie in [0, 1), got {delta}")
    logits, top1, top2 = predict(ckpt, np.asarray(rep, dtype=np.float32).reshape(1, -1))
    rescaled = minmax_rescale(logits[0])
    return float(rescaled[top1[0]] - rescaled[top2[0]]) <= delta


@dataclass
class PairStats:
    """Per class pair: successful syntheses (num_b) and attempts (num_syn)."""

    pairs: list[tuple[int, int]]
    num_b: dict[tuple[int, int], int] = field(default_factory=dict)
    num_syn: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        for p in self.pairs:
            self.num_b.setdefault(p, 0)
            self.num_syn.setdefault(p, 0)

    def record(self, pair: tuple[int, int], success: bool) -> None:
        self.num_syn[pair] += 1
        if success:
            self.num_b[pair] += 1

    def abundance_probs(self) -> dict[tuple[int, int], float]:
        """max(0, mean - num_b) normalized; uniform when every pair is at
        or above the mean (the normalizer would be 0/0)."""
        counts = np.array([self.num_b[p] for p in self.pairs], dtype=np.float64)
        deficit = np.maximum(0.0, counts.mean() - counts)
        total = deficit.sum()
        if total == 0:
            deficit = np.ones_like(deficit)
            total = deficit.sum()
        return dict(zip(self.pairs, deficit / total))

    def success_probs(self) -> dict[tuple[int, int], float]:
        """Success rates num_b/num_syn normalized over pairs; an untried pair
        counts as rate 1 so it is not starved; all-zero falls back to uniform."""
        rates = np.array(
            [self.num_b[p] / self.num_syn[p] if self.num_syn[p] > 0 else 1.0
             for p in self.pairs], dtype=np.float64)
        total = rates.sum()
        if total == 0:
            rates = np.ones_like(rates)
            total = rates.sum()
        return dict(zip(self.pairs, rates / total))

    def pair_probabilities(self, alpha: float) -> dict[tuple[int, int], float]:
        if not 0 <= alpha <= 1:
            raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
        abundance = self.abundance_probs()
        success = self.success_probs()
        return {p: alpha * abundance[p] + (1 - alpha) * success[p] for p in self.pairs}


def sample_class_pair(stats: PairStats, alpha: float,
                      rng: np.random.Generator) -> tuple[int, int]:
    probs = stats.pair_probabilities(alpha)
    pairs = stats.pairs
    weights = np.array([probs[p] for p in pairs])
    choice = rng.choice(len(pairs), p=weights)
    return pairs[int(choice)]


def mixup(s_i: np.ndarray, s_j: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam*s_i + (1-lam)*s_j."""
    return lam * np.asarray(s_i, dtype=np.float32) \
        + (1.0 - lam) * np.asarray(s_j, dtype=np.float32)


@dataclass
class BisectResult:
    found: bool
    rep: np.ndarray | None = None
    lam: float | None = None
    rounds: int = 0


def mixup_bisect(ckpt: SubjectCheckpoint, s_i: np.ndarray, s_j: np.ndarray,
                 delta: float = DEFAULT_DELTA, lambda_max: float = DEFAULT_LAMBDA_MAX,
                 max_rounds: int = DEFAULT_MAX_ROUNDS,
                 symmetric_cap: bool = False) -> BisectResult:
    """Bisect lam in (0, lambda_max] over s_b = lam*s_i + (1-lam)*s_j.

    The bracket keeps the predicted class at the low end equal to the class
    at lam=0; the first lam whose representation passes the delta test is
    accepted. No class flip inside the capped interval means not_found.
    At most max_rounds classifier evaluations after the two endpoint checks.

    symmetric_cap=True is the non-canonical variant: the search covers the
    whole segment and a hit is authentic when min(lam, 1-lam) <= lambda_max,
    i.e. the mixture may be dominated by either endpoint.
    """
    if not 0 < lambda_max <= 1:
        raise ContractError(f"lambda_max must lie in (0, 1], got {lambda_max}")
    if max_rounds < 1:
        raise ContractError("max_rounds must be >= 1")
    s_i = np.asarray(s_i, dtype=np.float32).reshape(-1)
    s_j = np.asarray(s_j, dtype=np.float32).reshape(-1)

    def evaluate(lam: float):
        rep = features(ckpt, mixup(s_i, s_j, lam).reshape(1, -1))
        logits, top1, top2 = predict(ckpt, rep)
        rescaled = minmax_rescale(logits[0])
        margin = float(rescaled[top1[0]] - rescaled[top2[0]])
        return rep[0], int(top1[0]), margin

    def lam_ok(lam: float) -> bool:
        if symmetric_cap:
            return min(lam, 1.0 - lam) <= lambda_max
        return lam <= lambda_max

    search_hi = 1.0 if symmetric_cap else lambda_max
    _, class_at_zero, _ = evaluate(0.0)
    rep_hi, class_at_cap, margin_hi = evaluate(search_hi)
    if symmetric_cap:
        class_of_si = class_at_cap
    else:
        _, class_of_si, _ = evaluate(1.0)
    if class_of_si == class_at_zero:
        raise ContractError("endpoints must be predicted as different classes")
    if margin_hi <= delta and lam_ok(search_hi):
        return BisectResult(True, rep_hi, search_hi, 0)
    if class_at_cap == class_at_zero:
        return BisectResult(False)

    lo, hi = 0.0, search_hi
    for r in range(1, max_rounds + 1):
        mid = 0.5 * (lo + hi)
        rep, cls, margin = evaluate(mid)
        if margin <= delta:
            if lam_ok(mid):
                return BisectResult(True, rep, mid, r)
            return BisectResult(False, rounds=r)
        if cls == class_at_zero:
            lo = mid
        else:
            hi = mid
    return BisectResult(False, rounds=max_rounds)


@dataclass
class BoundaryPoint:
    source_i: str
    source_j: str
    lam: float
    class_pair: tuple[int, int]


@dataclass
class BoundarySet:
    points: np.ndarray                 # (|B|, h) float32 representations
    provenance: list[BoundaryPoint]
    stats: PairStats
    delta: float
    lambda_max: float


def synthesize_boundary_set(ckpt: SubjectCheckpoint, dataset: Dataset,
                            target_count: int, delta: float = DEFAULT_DELTA,
                            lambda_max: float = DEFAULT_LAMBDA_MAX,
                            max_rounds: int = DEFAULT_MAX_ROUNDS,
                            alpha: float = DEFAULT_ALPHA,
                            seed: int = 0, symmetric_cap: bool = False) -> BoundarySet:
    """Loop pair sampling + bisection until target_count boundary points exist.

    Fails after 100 * target_count attempts (pathological classifier). Exact
    duplicate representations (resampled identical source pairs) are counted
    in the stats but stored once.
    """
    if target_count < 1:
        raise ContractError("target_count must be >= 1")
    _, top1, _ = classify(ckpt, dataset.inputs)
    present = np.unique(top1)
    if present.size < 2:
        raise SynthesisError("classifier predicts a single class on this dataset")
    by_class = {int(c): np.flatnonzero(top1 == c) for c in present}
    pairs = [(int(a), int(b)) for ai, a in enumerate(present) for b in present[ai + 1:]]
    stats = PairStats(pairs)
    rng = np.random.default_rng(seed)

    points: list[np.ndarray] = []
    provenance: list[BoundaryPoint] = []
    seen: set[bytes] = set()
    attempts = 0
    budget = ATTEMPT_BUDGET_FACTOR * target_count
    while len(points) < target_count:
        if attempts >= budget:
            raise SynthesisError(
                f"only {len(points)}/{target_count} boundary points after {attempts} attempts")
        attempts += 1
        ci, cj = sample_class_pair(stats, alpha, rng)
        i = int(rng.choice(by_class[ci]))
        j = int(rng.choice(by_class[cj]))
        result = mixup_bisect(ckpt, dataset.inputs[i], dataset.inputs[j],
                              delta, lambda_max, max_rounds, symmetric_cap)
        stats.record((ci, cj), result.found)
        if not result.found:
            continue
        key = result.rep.astype(np.float32).tobytes()
        if key in seen:
            continue
        seen.add(key)
        points.append(result.rep.astype(np.float32))
        provenance.append(BoundaryPoint(dataset.ids[i], dataset.ids[j],
                                        result.lam, (ci, cj)))
    return BoundarySet(np.vstack(points), provenance, stats, delta, lambda_max)


# -- persistence: raw little-endian f32 matrix + JSON sidecar -----------------

def save_boundary_set(bset: BoundarySet, points_path, sidecar_path) -> None:
    points_path, sidecar_path = Path(points_path), Path(sidecar_path)
    points_path.write_bytes(bset.points.astype("<f4").tobytes())
    sidecar = {
        "rows": int(bset.points.shape[0]),
        "cols": int(bset.points.shape[1]),
        "points_file": points_path.name,
        "delta": bset.delta,
        "lambda_max": bset.lambda_max,
        "provenance": [
            {"i": p.source_i, "j": p.source_j, "lambda": p.lam,
             "pair": list(p.class_pair)}
            for p in bset.provenance
        ],
        "stats": {
            f"{a}-{b}": {"num_b": bset.stats.num_b[(a, b)],
                         "num_syn": bset.stats.num_syn[(a, b)]}
            for (a, b) in bset.stats.pairs
        },
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_boundary_set(sidecar_path) -> BoundarySet:
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    flat = np.frombuffer((sidecar_path.parent / meta["points_file"]).read_bytes(),
                         dtype="<f4")
    points = flat.reshape(meta["rows"], meta["cols"]).copy()
    provenance = [BoundaryPoint(p["i"], p["j"], p["lambda"], tuple(p["pair"]))
                  for p in meta["provenance"]]
    pairs = [tuple(int(c) for c in key.split("-")) for key in sorted(meta["stats"])]
    stats = PairStats(pairs)
    for key, entry in meta["stats"].items():
        pair = tuple(int(c) for c in key.split("-"))
        stats.num_b[pair] = entry["num_b"]
        stats.num_syn[pair] = entry["num_syn"]
    return BoundarySet(points, provenance, stats, meta["delta"], meta["lambda_max"])
