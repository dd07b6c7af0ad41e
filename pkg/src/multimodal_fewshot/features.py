"""Distance kernels on raw inputs and embeddings.

All metrics are symmetric and nonnegative. Cosine distance is defined as
1 - similarity, range [0, 2], which keeps every comparison on the scale
the triplet margin (0.2) was chosen for. Zero-norm vectors raise rather
than defaulting to a distance: degenerate embeddings should surface, not
hide.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateVectorError, EmptyItemError, ShapeError


def _as_array(x, attr: str) -> np.ndarray:
    return np.asarray(getattr(x, attr, x), dtype=np.float64)


def _norms(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVectorError(f"zero-norm {what} in cosine computation")
    return norms


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine distance between the rows of two matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"row dims differ: {a.shape[1]} vs {b.shape[1]}")
    an = a / _norms(a, "row")[:, None]
    bn = b / _norms(b, "row")[:, None]
    sim = np.clip(an @ bn.T, -1.0, 1.0)
    return 1.0 - sim


def cosine_distance(u, v) -> float:
    """1 - cos(u, v), in [0, 2]."""
    u = _as_array(u, "values").ravel()
    v = _as_array(v, "values").ravel()
    if u.shape != v.shape:
        raise ShapeError(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    return float(cosine_rows(u[None, :], v[None, :])[0, 0])


def dtw_distance(a, b) -> float:
    """Dynamic-time-warping distance between two frame sequences.

    Alignment cost uses per-frame cosine distance with steps
    {(1,0), (0,1), (1,1)} and is normalized by alignment path length;
    the minimum of cost/length is taken over all path lengths exactly
    (the recurrence is indexed by the number of aligned cells).
    """
    fa = _as_array(a, "frames")
    fb = _as_array(b, "frames")
    if fa.ndim != 2 or fb.ndim != 2:
        raise ShapeError("frame sequences must be 2-d arrays")
    if fa.shape[0] == 0 or fb.shape[0] == 0:
        raise EmptyItemError("cannot align an empty frame sequence")
    if fa.shape[1] != fb.shape[1]:
        raise ShapeError(f"frame dims differ: {fa.shape[1]} vs {fb.shape[1]}")

    d = cosine_rows(fa, fb)
    n, m = d.shape
    inf = np.inf
    reach = np.full((n, m), inf)
    reach[0, 0] = d[0, 0]
    best = reach[-1, -1]  # only valid when n == m == 1 (path length 1)
    for length in range(2, n + m):
        up = np.full((n, m), inf)
        up[1:, :] = reach[:-1, :]
        left = np.full((n, m), inf)
        left[:, 1:] = reach[:, :-1]
        diag = np.full((n, m), inf)
        diag[1:, 1:] = reach[:-1, :-1]
        reach = d + np.minimum(np.minimum(up, left), diag)
        best = min(best, reach[-1, -1] / length)
    return float(best)


def pixel_distance(a, b) -> float:
    """Cosine distance between two images treated as flat pixel vectors."""
    ga = _as_array(a, "grid")
    gb = _as_array(b, "grid")
    if ga.shape != gb.shape:
        raise ShapeError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    return cosine_distance(ga.ravel(), gb.ravel())


def nearest(query, candidates: Sequence, metric) -> tuple[int, float]:
    """Exhaustive nearest-neighbour scan; ties go to the smallest index."""
    if len(candidates) == 0:
        raise EmptyItemError("candidate list is empty")
    if hasattr(metric, "pairwise"):
        row = np.asarray(metric.pairwise([query], list(candidates)))[0]
    else:
        row = np.array([metric(query, c) for c in candidates])
    idx = int(np.argmin(row))
    return idx, float(row[idx])


class DistanceMetric:
    """Base metric over dataset items; subclasses vectorize ``pairwise``."""

    kind = "abstract"

    @property
    def descriptor(self) -> str:
        return self.kind

    def distance(self, a, b) -> float:
        raise NotImplementedError

    def pairwise(self, items_a: Sequence, items_b: Sequence) -> np.ndarray:
        return np.array([[self.distance(a, b) for b in items_b] for a in items_a])


class CosineVectors(DistanceMetric):
    kind = "cosine-on-vectors"

    def distance(self, a, b) -> float:
        return cosine_distance(a, b)

    def pairwise(self, items_a, items_b) -> np.ndarray:
        mat_a = np.vstack([_as_array(a, "values").ravel() for a in items_a])
        mat_b = np.vstack([_as_array(b, "values").ravel() for b in items_b])
        return cosine_rows(mat_a, mat_b)


class CosinePixels(DistanceMetric):
    kind = "cosine-on-pixels"

    def distance(self, a, b) -> float:
        return pixel_distance(a, b)

    def pairwise(self, items_a, items_b) -> np.ndarray:
        mat_a = np.vstack([_as_array(a, "grid").ravel() for a in items_a])
        mat_b = np.vstack([_as_array(b, "grid").ravel() for b in items_b])
        return cosine_rows(mat_a, mat_b)


class DtwSequences(DistanceMetric):
    """DTW metric with an id-keyed memo (episode evaluation repeats pairs)."""

    kind = "dtw-on-sequences"

    def __init__(self, cache: bool = True):
        self._cache: Optional[dict] = {} if cache else None

    def distance(self, a, b) -> float:
        ida, idb = getattr(a, "id", None), getattr(b, "id", None)
        if self._cache is not None and ida is not None and idb is not None:
            key = (ida, idb) if ida <= idb else (idb, ida)
            if key not in self._cache:
                self._cache[key] = dtw_distance(a, b)
            return self._cache[key]
        return dtw_distance(a, b)

    def pairwise(self, items_a, items_b) -> np.ndarray:
        return np.array([[self.distance(a, b) for b in items_b] for a in items_a])


class EmbeddingCosine(DistanceMetric):
    """Cosine distance in an embedding space, with an id-keyed vector cache.

    ``encode`` maps one item to a 1-d vector; ``batch_encode``, when given,
    maps a list of items to a matrix and is used to fill the cache.
    """

    kind = "embedding-backed"

    def __init__(
        self,
        encode: Callable,
        descriptor: str = "embedding-backed",
        batch_encode: Optional[Callable] = None,
    ):
        self._encode = encode
        self._batch_encode = batch_encode
        self._descriptor = descriptor
        self._vectors: dict = {}

    @property
    def descriptor(self) -> str:
        return self._descriptor

    def embed(self, item) -> np.ndarray:
        item_id = getattr(item, "id", None)
        if item_id is not None and item_id in self._vectors:
            return self._vectors[item_id]
        vec = np.asarray(self._encode(item), dtype=np.float64).ravel()
        if item_id is not None:
            self._vectors[item_id] = vec
        return vec

    def _fill_cache(self, items) -> None:
        missing = [it for it in items if getattr(it, "id", None) not in self._vectors]
        seen = set()
        missing = [it for it in missing if not (it.id in seen or seen.add(it.id))]
        if not missing:
            return
        if self._batch_encode is not None:
            mat = np.asarray(self._batch_encode(missing), dtype=np.float64)
            for item, row in zip(missing, mat):
                self._vectors[item.id] = row
        else:
            for item in missing:
                self._vectors[item.id] = np.asarray(self._encode(item), dtype=np.float64).ravel()

    def distance(self, a, b) -> float:
        return cosine_distance(self.embed(a), self.embed(b))

    def pairwise(self, items_a, items_b) -> np.ndarray:
        for group in (items_a, items_b):
            if all(getattr(it, "id", None) is not None for it in group):
                self._fill_cache(group)
        mat_a = np.vstack([self.embed(a) for a in items_a])
        mat_b = np.vstack([self.embed(b) for b in items_b])
        return cosine_rows(mat_a, mat_b)
