"""k-means over predicate usage vectors (the columns of the QP matrix)."""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field

import numpy as np

from .workload import QPMatrix, predicate_index

MAX_ITER = 100
RESTARTS = 10
EXHAUSTIVE_LIMIT = 12


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class PredicateVector:
    predicate_id: str
    coords: tuple[int, ...]


@dataclass(frozen=True)
class Clustering:
    k: int
    clusters: tuple[frozenset[str], ...]
    centroids: np.ndarray = field(compare=False)
    objective: float = field(compare=False)
    history: tuple[float, ...] = field(default=(), compare=False)

    def partition(self) -> frozenset[frozenset[str]]:
        return frozenset(self.clusters)

    def dump_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective"])
            writer.writerows(enumerate(self.history))


def vectors_from_qp(qp: QPMatrix) -> list[PredicateVector]:
    return [PredicateVector(pid, tuple(int(v) for v in qp.cells[:, j]))
            for j, pid in enumerate(qp.predicates)]


def _canonical(vectors):
    vectors = sorted(vectors, key=lambda v: predicate_index(v.predicate_id))
    lengths = {len(v.coords) for v in vectors}
    if len(lengths) > 1:
        raise ClusteringError(f"vectors have differing lengths {sorted(lengths)}")
    ids = [v.predicate_id for v in vectors]
    X = np.array([v.coords for v in vectors], dtype=float).reshape(len(vectors), -1)
    return ids, X


def sse(X: np.ndarray, labels: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    """Total intra-cluster variance and the cluster means (zero rows for empty clusters)."""
    obj, centroids = _sse_batch(X, labels[None, :], k)
    return float(obj[0]), centroids[0]


def _sse_batch(X, labels, k):
    onehot = (labels[:, :, None] == np.arange(k)).astype(float)       # (R, n, k)
    counts = onehot.sum(axis=1)                                         # (R, k)
    centroids = (onehot.transpose(0, 2, 1) @ X) / np.maximum(counts, 1)[:, :, None]
    own = np.take_along_axis(centroids, labels[:, :, None], axis=1)     # (R, n, d)
    return ((X[None] - own) ** 2).sum(axis=(1, 2)), centroids


def _assign_batch(X, centroids):
    d2 = ((X[None, :, None, :] - centroids[:, None, :, :]) ** 2).sum(axis=3)
    # argmin returns the first minimum: ties go to the lowest-indexed centroid
    return np.argmin(d2, axis=2)


def _repair(X, labels, centroids, k):
    """Refill empty clusters from the largest one; returns True if anything moved."""
    sizes = np.bincount(labels, minlength=k)
    if sizes.all():
        return False
    for j in np.flatnonzero(sizes == 0):
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        dist = ((X[members] - centroids[big]) ** 2).sum(axis=1)
        pick = members[int(np.argmax(dist))]
        labels[pick] = j
        centroids[j] = X[pick]
        sizes[big] -= 1
        sizes[j] += 1
    return True


def _repair_batch(X, labels, centroids, k, rows):
    present = (labels[rows, :, None] == np.arange(k)).any(axis=1).all(axis=1)
    for r in np.asarray(rows)[~present]:
        _repair(X, labels[r], centroids[r], k)


def lloyd_batch(X: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER):
    """Independent Lloyd runs, one per row of ``centroids`` (shape ``(R, k, d)``).

    Each run stops at its own fixed point; rows that converged are left
    untouched while the others keep iterating.  Returns per-run
    ``(labels, centroids, objectives, histories)``.
    """
    centroids = np.array(centroids, dtype=float)
    R, k = centroids.shape[:2]
    labels = _assign_batch(X, centroids)
    _repair_batch(X, labels, centroids, k, np.arange(R))
    obj, centroids = _sse_batch(X, labels, k)
    history = [[float(o)] for o in obj]
    active = np.ones(R, dtype=bool)
    for _ in range(max_iter):
        new = _assign_batch(X, centroids)
        _repair_batch(X, new, centroids, k, np.flatnonzero(active))
        active &= (new != labels).any(axis=1)
        if not active.any():
            break
        labels[active] = new[active]
        obj_new, cent_new = _sse_batch(X, labels, k)
        obj[active] = obj_new[active]
        centroids[active] = cent_new[active]
        for r in np.flatnonzero(active):
            history[r].append(float(obj[r]))
    return labels, centroids, obj, history


def lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER):
    """Lloyd iterations from the given centroids.

    Returns ``(labels, centroids, objective, history)``; ``history`` holds the
    objective after every update and never increases.
    """
    labels, cents, obj, hist = lloyd_batch(X, np.asarray(centroids, dtype=float)[None], max_iter)
    return labels[0], cents[0], float(obj[0]), hist[0]


def farthest_first_batch(X: np.ndarray, k: int, starts) -> np.ndarray:
    """Farthest-first seeds for every start index; shape ``(len(starts), k, d)``."""
    starts = np.asarray(starts, dtype=np.int64)
    D = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    chosen = np.empty((len(starts), k), dtype=np.int64)
    chosen[:, 0] = starts
    d2 = D[starts]
    for j in range(1, k):
        nxt = np.argmax(d2, axis=1)
        chosen[:, j] = nxt
        np.minimum(d2, D[nxt], out=d2)
    return X[chosen]


def farthest_first(X: np.ndarray, k: int, start: int) -> np.ndarray:
    return farthest_first_batch(X, k, [start])[0]


def _hartigan_batch(X, labels, k):
    """Single-point moves that strictly lower the objective, until none is left.

    Moving x from A to B changes the objective by
    |B|/(|B|+1)*d(x, mu_B) - |A|/(|A|-1)*d(x, mu_A).  Lloyd fixed points can
    still admit such moves; this pass escapes those local minima, taking the
    single best move per run at each step.  ``labels`` has shape ``(R, n)``
    and is updated in place; returns the number of moves per run.
    """
    R, n = labels.shape
    moves = np.zeros(R, dtype=np.int64)
    if k == 1:
        return moves
    onehot = (labels[:, :, None] == np.arange(k)).astype(float)
    sizes = onehot.sum(axis=1)                                   # (R, k)
    sums = onehot.transpose(0, 2, 1) @ X                         # (R, k, d)
    sq = (X ** 2).sum(axis=1)
    active = np.ones(R, dtype=bool)
    while True:
        means = sums / sizes[:, :, None]
        d = sq[None, :, None] - 2 * (X @ means.transpose(0, 2, 1)) \
            + (means ** 2).sum(axis=2)[:, None, :]                  # (R, n, k)
        np.maximum(d, 0, out=d)
        own = np.take_along_axis(sizes, labels, axis=1)
        d_own = np.take_along_axis(d, labels[:, :, None], axis=2)[:, :, 0]
        gain = (own / np.maximum(own - 1, 1) * d_own)[:, :, None] \
            - (sizes / (sizes + 1))[:, None, :] * d
        np.put_along_axis(gain, labels[:, :, None], -np.inf, axis=2)
        gain[own == 1] = -np.inf                                 # never empty a cluster
        flat = gain.reshape(R, -1)
        best = np.argmax(flat, axis=1)
        active &= flat[np.arange(R), best] > 1e-12
        rows = np.flatnonzero(active)
        if not len(rows):
            return moves
        i, b = np.divmod(best[rows], k)
        a = labels[rows, i]
        labels[rows, i] = b
        sizes[rows, a] -= 1
        sizes[rows, b] += 1
        sums[rows, a] -= X[i]
        sums[rows, b] += X[i]
        moves[rows] += 1


def _polish_batch(X, labels, centroids, obj, history, k, max_iter):
    """Alternate Hartigan moves and Lloyd until neither changes anything (in place)."""
    todo = np.arange(len(labels))
    while len(todo):
        sub = labels[todo]
        moved = _hartigan_batch(X, sub, k) > 0
        todo = todo[moved]
        if not len(todo):
            break
        o, c = _sse_batch(X, sub[moved], k)
        new_labels, new_cent, new_obj, more = lloyd_batch(X, c, max_iter)
        labels[todo], centroids[todo], obj[todo] = new_labels, new_cent, new_obj
        for r, start, rest in zip(todo, o, more):
            history[r].append(float(start))
            history[r].extend(rest[1:])


def _partition_key(labels) -> bytes:
    """Labels renumbered by first appearance, so equal partitions compare equal."""
    _, first = np.unique(labels, return_index=True)
    rank = np.empty(labels.max() + 1, dtype=np.int64)
    rank[labels[np.sort(first)]] = np.arange(len(first))
    return rank[labels].tobytes()


def _result(ids, k, labels, centroids, objective, history) -> Clustering:
    groups = [frozenset(ids[i] for i in np.flatnonzero(labels == j)) for j in range(k)]
    order = sorted(range(k), key=lambda j: min((predicate_index(p) for p in groups[j]),
                                               default=("~", 0)))
    return Clustering(k, tuple(groups[j] for j in order), centroids[order], float(objective),
                      tuple(history))


def kmeans(vectors, k: int, seed: int = 0, restarts: int = RESTARTS,
           max_iter: int = MAX_ITER) -> Clustering:
    """Cluster predicate vectors into exactly ``k`` non-empty clusters.

    Each restart seeds farthest-first from a different starting vector (the
    first one drawn from ``seed``), runs Lloyd to a fixed point and then
    polishes it with improving single-point moves; the run
    with the lowest objective wins, ties going to the earliest restart.
    Clusters are returned ordered by their smallest predicate id.
    """
    ids, X = _canonical(vectors)
    return kmeans_matrix(ids, X, k, seed, restarts, max_iter)


def kmeans_matrix(ids, X: np.ndarray, k: int, seed: int = 0, restarts: int = RESTARTS,
                  max_iter: int = MAX_ITER) -> Clustering:
    """``kmeans`` on rows of ``X`` already in canonical predicate-id order."""
    n = len(ids)
    if k < 1:
        raise ClusteringError(f"k must be positive, got {k}")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of predicates ({n})")
    if restarts < 1:
        raise ClusteringError("restarts must be positive")
    first = random.Random(seed).randrange(n)
    starts = [(first + r) % n for r in range(restarts)]
    labels, centroids, obj, hist = lloyd_batch(X, farthest_first_batch(X, k, starts), max_iter)
    # restarts that landed on the same partition polish identically; keep the earliest
    reps = list({_partition_key(row): r for r, row in reversed(list(enumerate(labels)))}.values())
    reps = np.sort(np.array(reps))
    sub_labels, sub_cent, sub_obj = labels[reps], centroids[reps], obj[reps]
    sub_hist = [hist[r] for r in reps]
    _polish_batch(X, sub_labels, sub_cent, sub_obj, sub_hist, k, max_iter)
    labels[reps], centroids[reps], obj[reps] = sub_labels, sub_cent, sub_obj
    best = reps[0]
    for r in reps[1:]:
        if obj[r] < obj[best] - 1e-12:
            best = r
    return _result(ids, k, labels[best], centroids[best], obj[best], hist[best])


def qp_rows(qp: QPMatrix) -> tuple[list[str], np.ndarray]:
    """Predicate ids and their QP columns as rows, in canonical order."""
    order = sorted(range(len(qp.predicates)), key=lambda j: predicate_index(qp.predicates[j]))
    return [qp.predicates[j] for j in order], qp.cells.T[order].astype(float)


def refine(vectors, clustering: Clustering) -> Clustering:
    """Run Lloyd from an existing clustering's centroids."""
    ids, X = _canonical(vectors)
    labels, centroids, obj, hist = lloyd(X, clustering.centroids)
    return _result(ids, clustering.k, labels, centroids, obj, hist)


def objective_of(vectors, clusters) -> float:
    ids, X = _canonical(vectors)
    row = {pid: i for i, pid in enumerate(ids)}
    labels = np.empty(len(ids), dtype=int)
    for j, cluster in enumerate(clusters):
        for pid in cluster:
            labels[row[pid]] = j
    return sse(X, labels, len(clusters))[0]


def _partitions(n: int, k: int):
    """Restricted growth strings: every partition of ``range(n)`` into <= k blocks."""
    labels = [0] * n

    def rec(i, used):
        if i == n:
            yield labels, used
            return
        for b in range(min(used + 1, k)):
            labels[i] = b
            yield from rec(i + 1, max(used, b + 1))

    if n == 0:
        return
    yield from rec(1, 1)


def exhaustive_optimum(vectors, k: int) -> Clustering:
    """Globally optimal clustering by enumerating every partition into <= k blocks.

    Ties are broken by comparing the sorted cluster contents.  Meant as a test
    oracle; refuses more than 12 vectors.
    """
    ids, X = _canonical(vectors)
    n = len(ids)
    if n > EXHAUSTIVE_LIMIT:
        raise ClusteringError(f"exhaustive search limited to {EXHAUSTIVE_LIMIT} vectors, got {n}")
    if not 1 <= k <= n:
        raise ClusteringError(f"need 1 <= k <= {n}, got {k}")
    # pairwise squared distances: SSE(C) = sum_{i<j in C} d_ij / |C|
    D = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    best_obj, best_key, best_labels = None, None, None
    for labels, used in _partitions(n, k):
        total = 0.0
        blocks = [[] for _ in range(used)]
        for i, b in enumerate(labels):
            blocks[b].append(i)
        for members in blocks:
            if len(members) > 1:
                idx = np.array(members)
                total += D[np.ix_(idx, idx)].sum() / (2 * len(members))
        if best_obj is not None and total > best_obj + 1e-12:
            continue
        key = sorted(sorted(predicate_index(ids[i]) for i in m) for m in blocks)
        if best_obj is None or total < best_obj - 1e-12 or key < best_key:
            best_obj, best_key, best_labels = total, key, list(labels)
    labels = np.array(best_labels)
    used = int(labels.max()) + 1
    obj, centroids = sse(X, labels, used)
    return _result(ids, used, labels, centroids, obj, ())
