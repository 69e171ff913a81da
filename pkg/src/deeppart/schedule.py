"""Chunked randomized vertex traversal for label propagation.

Owned vertices are sorted into exponentially spaced degree buckets (bucket i
holds 2^i <= deg < 2^(i+1); degrees 0 and 1 share bucket 0) and visited in
increasing bucket order.  Each bucket is split into fixed-size chunks whose
order is permuted per iteration, as is the vertex order inside each chunk,
so traversal stays degree-ordered globally but randomized locally.
"""

from __future__ import annotations

import numpy as np

CHUNK_SIZE = 1024


def batch_count(P: int, alpha: int = 8, beta: int = 128) -> int:
    """Number of communication batches per LP iteration: max{alpha, ceil(beta/P)}."""
    if P < 1:
        raise ValueError("P must be >= 1")
    return max(alpha, -(-beta // P))


def bucket_ids(degrees: np.ndarray) -> np.ndarray:
    """Bucket index per vertex: floor(log2(deg)), with deg 0/1 in bucket 0."""
    deg = np.asarray(degrees, dtype=np.int64)
    out = np.zeros(len(deg), dtype=np.int64)
    pos = deg >= 1
    # frexp exponent e satisfies d = m * 2^e with 0.5 <= m < 1, so e-1 = floor(log2 d)
    out[pos] = np.frexp(deg[pos].astype(np.float64))[1] - 1
    return out


class ChunkSchedule:
    """Per-PE traversal schedule: degree-bucketed chunks of owned vertices."""

    def __init__(self, degrees: np.ndarray, chunk_size: int = CHUNK_SIZE):
        self.n = len(degrees)
        self.chunk_size = chunk_size
        buckets = bucket_ids(degrees)
        self.bucket_of = buckets
        verts = np.argsort(buckets, kind="stable").astype(np.int32)
        self.chunks = []          # list of np.int32 arrays
        self.chunk_bucket = []    # bucket index per chunk
        i = 0
        while i < self.n:
            b = buckets[verts[i]]
            j = i
            while j < self.n and buckets[verts[j]] == b:
                j += 1
            for s in range(i, j, chunk_size):
                self.chunks.append(verts[s:min(s + chunk_size, j)])
                self.chunk_bucket.append(int(b))
            i = j

    def iteration_order(self, rng: np.random.Generator) -> list[np.ndarray]:
        """Chunks for one iteration: chunk order permuted within each bucket,
        vertices permuted within each chunk."""
        out = []
        i = 0
        nch = len(self.chunks)
        while i < nch:
            j = i
            while j < nch and self.chunk_bucket[j] == self.chunk_bucket[i]:
                j += 1
            for ci in rng.permutation(j - i) + i:
                ch = self.chunks[ci]
                out.append(ch[rng.permutation(len(ch))])
            i = j
        return out

    def batches(self, rng: np.random.Generator, nbatches: int) -> list[np.ndarray]:
        """Split one iteration's chunk sequence into nbatches contiguous
        groups of chunks (some possibly empty), concatenated per group."""
        chunks = self.iteration_order(rng)
        groups = np.array_split(np.arange(len(chunks)), nbatches)
        empty = np.empty(0, dtype=np.int32)
        return [np.concatenate([chunks[i] for i in g]) if len(g) else empty
                for g in groups]
