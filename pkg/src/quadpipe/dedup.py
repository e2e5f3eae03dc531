"""Stage 3: semantic dedup by k-means partition plus k-center pruning.

Samples are embedded (unit vectors), clustered with seeded k-means, and
each cluster is thinned with a greedy farthest-point pass: starting from
the member nearest the centroid, keep adding the member farthest (in
cosine distance) from everything kept so far, until the best candidate
is within delta of the kept set. Kept members are therefore pairwise at
least delta apart and every dropped member sits within delta of a kept
one. All ties break on the lowest sample id, so the result is a pure
function of (embeddings, seed, config) regardless of thread count.

Cross-cluster near-duplicates are not detected; that is the price of the
clustered approximation and is deliberate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import AuditEntry, CorpusSnapshot, Sample
from .gateway import ScorerGateway, SampleView
from .stage import StageResult, map_samples, quarantine_entries

STAGE_NAME = "dedup"

# Assignment work is sliced into fixed-size chunks so the arithmetic
# (and therefore the result bytes) cannot depend on the thread count.
_CHUNK = 2048


@dataclass(frozen=True)
class DedupConfig:
    delta: float
    target_cluster_size: int = 1024
    max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.delta <= 2:
            raise ValueError("delta must be a cosine distance in [0, 2]")
        if self.target_cluster_size < 1:
            raise ValueError("target_cluster_size must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, dim)
    assignments: dict[str, int]
    objective: float
    seed: int
    iterations_run: int
    objective_history: list[float] = field(default_factory=list)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - dot on unit vectors; identical inputs give exactly 0."""
    return 1.0 - float(np.dot(u, v))


def cluster_count(n: int, target_cluster_size: int) -> int:
    """k = round-half-up(n / target size), clamped to [1, n]."""
    k = (2 * n + target_cluster_size) // (2 * target_cluster_size)
    return max(1, min(n, k))


def _assign_chunk(chunk: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, float(d2[np.arange(chunk.shape[0]), idx].sum())


def _assign(x: np.ndarray, centers: np.ndarray, threads: int = 1) -> tuple[np.ndarray, float]:
    """Nearest-centroid assignment (ties -> lowest index) and objective.

    The work is sliced into fixed-size chunks computed independently
    (possibly in parallel) and reduced in chunk order, so the floating
    point result is bit-identical for any thread count.
    """
    n = x.shape[0]
    starts = range(0, n, _CHUNK)
    chunks = [x[s:s + _CHUNK] for s in starts]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _assign_chunk(c, centers), chunks))
    else:
        parts = [_assign_chunk(c, centers) for c in chunks]
    assign = np.empty(n, dtype=np.int64)
    objective = 0.0
    for start, (idx, obj) in zip(starts, parts):
        assign[start:start + _CHUNK] = idx
        objective += obj
    return assign, objective


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining mass is on already-chosen points; take the
            # lowest index not yet used to stay deterministic.
            candidates = [i for i in range(n) if i not in set(chosen)]
            chosen.append(candidates[0])
        else:
            pick = int(rng.choice(n, p=d2 / total))
            chosen.append(pick)
        d2 = np.minimum(d2, ((x - x[chosen[-1]]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans(
    sample_ids: list[str],
    x: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 50,
    threads: int = 1,
) -> ClusterModel:
    """Seeded k-means++ plus Lloyd iterations.

    Stops when assignments are stable or after max_iter update rounds;
    empty clusters are re-seeded with the point currently farthest from
    its assigned centroid. The recorded objective (computed after each
    assignment step) is non-increasing.
    """
    n = x.shape[0]
    if n == 0:
        raise ValueError("kmeans needs at least one point")
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")
    if len(sample_ids) != n:
        raise ValueError("sample_ids and embedding rows disagree")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)

    history: list[float] = []
    prev: np.ndarray | None = None
    updates = 0
    while True:
        assign, objective = _assign(x, centers, threads)
        history.append(objective)
        if prev is not None and np.array_equal(assign, prev):
            break
        if updates >= max_iter:
            break
        prev = assign

        new_centers = centers.copy()
        for j in range(k):
            members = x[assign == j]
            if members.shape[0] > 0:
                new_centers[j] = members.mean(axis=0)
        empties = [j for j in range(k) if not np.any(assign == j)]
        if empties:
            dist = ((x - new_centers[assign]) ** 2).sum(axis=1)
            taken: set[int] = set()
            for j in empties:
                order = np.argsort(-dist, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                new_centers[j] = x[pick]
                dist[pick] = -1.0
        centers = new_centers
        updates += 1

    assignments = {sid: int(c) for sid, c in zip(sample_ids, assign)}
    return ClusterModel(
        k=k, centroids=centers, assignments=assignments,
        objective=history[-1], seed=seed, iterations_run=len(history),
        objective_history=history,
    )


def kcenter_prune(
    members: list[tuple[str, np.ndarray]],
    delta: float,
    centroid: np.ndarray,
) -> list[str]:
    """Greedy farthest-point selection; returns kept ids (sorted).

    Start from the member nearest the centroid (tie -> lowest id), then
    repeatedly add the member with the largest min cosine distance to
    the kept set (tie -> lowest id). Stop when that distance falls below
    delta, or reaches zero: exact duplicates always collapse, so delta=0
    keeps everything except exact duplicates.
    """
    if not members:
        return []
    ordered = sorted(members, key=lambda m: m[0])
    ids = [m[0] for m in ordered]
    vecs = np.stack([m[1] for m in ordered])
    n = len(ids)

    # On unit vectors, nearest-to-centroid is the same ordering as the
    # largest dot product, which also covers non-unit centroids.
    dots = vecs @ centroid
    start = int(np.argmax(dots))  # argmax ties -> first = lowest id

    kept = [start]
    min_dist = 1.0 - vecs @ vecs[start]
    min_dist[start] = -math.inf
    while len(kept) < n:
        best = int(np.argmax(min_dist))
        best_dist = float(min_dist[best])
        if best_dist < delta or best_dist <= 0.0:
            break
        kept.append(best)
        min_dist = np.minimum(min_dist, 1.0 - vecs @ vecs[best])
        min_dist[best] = -math.inf
    return sorted(ids[i] for i in kept)


def embed_snapshot(
    snapshot: CorpusSnapshot,
    gateway: ScorerGateway,
    threads: int = 1,
):
    vectors, faults = map_samples(
        snapshot.samples, lambda s: gateway.embed(SampleView.of(s)).values, threads)
    return vectors, faults


def run_stage(
    snapshot: CorpusSnapshot,
    config: DedupConfig,
    gateway: ScorerGateway,
    *,
    threads: int = 1,
) -> StageResult:
    vectors, faults = embed_snapshot(snapshot, gateway, threads)
    audit, quarantined = quarantine_entries(STAGE_NAME, faults)

    ordered_ids = sorted(vectors)
    by_id = snapshot.by_id()
    if not ordered_ids:
        out = CorpusSnapshot(name=STAGE_NAME, samples=[], parent=snapshot.name)
        return StageResult(out, audit, quarantined)

    x = np.stack([vectors[sid] for sid in ordered_ids])
    k = cluster_count(len(ordered_ids), config.target_cluster_size)
    model = kmeans(ordered_ids, x, k, config.seed, config.max_iter, threads=threads)

    row = {sid: i for i, sid in enumerate(ordered_ids)}
    kept_ids: list[str] = []
    for j in range(model.k):
        members = [(sid, x[row[sid]]) for sid in ordered_ids if model.assignments[sid] == j]
        if not members:
            continue
        kept_in_cluster = kcenter_prune(members, config.delta, model.centroids[j])
        kept_set = set(kept_in_cluster)
        kept_ids.extend(kept_in_cluster)
        for sid in kept_in_cluster:
            audit.append(AuditEntry(
                sample_id=sid, stage=STAGE_NAME, decision="kept",
                scores={"cluster": j}))
        for sid, vec in members:
            if sid in kept_set:
                continue
            dists = [(cosine_distance(vec, x[row[other]]), other) for other in kept_in_cluster]
            nearest_dist, nearest_id = min(dists)
            audit.append(AuditEntry(
                sample_id=sid, stage=STAGE_NAME, decision="dropped",
                scores={"cluster": j, "nearest_kept": nearest_id, "distance": nearest_dist},
                reason="near-duplicate"))

    kept_samples: list[Sample] = [by_id[sid] for sid in sorted(kept_ids)]
    out = CorpusSnapshot(name=STAGE_NAME, samples=kept_samples, parent=snapshot.name)
    return StageResult(out, audit, quarantined, details={"cluster_model": model})
