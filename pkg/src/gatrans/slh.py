"""Super-bit locality-sensitive hashing.

Features are projected onto a fixed orthonormal matrix and assigned to the
bucket of their largest projected coordinate. Tokens sharing a bucket form
the attention support for each query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProjectionMatrix:
    """Fixed orthonormal projection: rows of M (d_buckets x c) are orthonormal."""

    M: np.ndarray
    seed: int

    @property
    def d_buckets(self):
        return self.M.shape[0]

    @property
    def c(self):
        return self.M.shape[1]


@dataclass
class BucketAssignment:
    """Partition of token indices 0..n-1 into buckets by argmax projection."""

    bucket_of: np.ndarray          # (n,) bucket ids
    members: list                  # per bucket, ascending member indices

    @property
    def n(self):
        return self.bucket_of.shape[0]

    @property
    def d_buckets(self):
        return len(self.members)

    def validate(self):
        seen = np.concatenate([m for m in self.members]) if self.members else np.array([], dtype=np.intp)
        if seen.size != self.n or np.unique(seen).size != self.n:
            raise ValueError("bucket members do not form an exact partition")
        for b, m in enumerate(self.members):
            if not np.all(np.diff(m) > 0):
                raise ValueError(f"bucket {b} members not strictly ascending")
            if not np.all(self.bucket_of[m] == b):
                raise ValueError(f"bucket_of inconsistent with members of bucket {b}")


def make_orthonormal_projection(c: int, d_buckets: int, seed: int,
                                strict: bool = True) -> ProjectionMatrix:
    """Build a seeded d_buckets x c matrix with orthonormal rows via QR.

    More than c orthonormal rows cannot exist; with ``strict`` (default) such
    requests are rejected. ``strict=False`` falls back to stacking
    independent orthonormal batches of at most c rows (super-bit style), so
    orthonormality holds within each batch only. Needed when the bucket
    count must scale with sequence length past the feature width.
    """
    if d_buckets < 1:
        raise ValueError(f"d_buckets={d_buckets} must be >= 1")
    if strict and d_buckets > c:
        raise ValueError(
            f"d_buckets={d_buckets} must be in [1, c={c}]: a matrix with more "
            "orthonormal rows than columns cannot exist")
    rng = np.random.default_rng(seed)
    rows = []
    remaining = d_buckets
    while remaining > 0:
        k = min(remaining, c)
        g = rng.standard_normal((c, k))
        q, r = np.linalg.qr(g)
        # fix QR sign ambiguity so the construction is well-defined
        q = q * np.sign(np.diag(r))
        rows.append(q.T)
        remaining -= k
    return ProjectionMatrix(M=np.ascontiguousarray(np.vstack(rows)), seed=seed)


def hash_assign(X: np.ndarray, proj: ProjectionMatrix) -> BucketAssignment:
    """Assign each row of X (n x c) to the argmax coordinate of its projection.

    One batched matmul computes all projections; argmax ties break toward the
    lowest index.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != proj.c:
        raise ValueError(f"feature matrix {X.shape} incompatible with projection c={proj.c}")
    if not np.isfinite(X).all():
        raise ValueError("hash_assign received non-finite features")
    scores = X @ proj.M.T
    bucket_of = np.argmax(scores, axis=1)
    order = np.argsort(bucket_of, kind="stable")
    counts = np.bincount(bucket_of, minlength=proj.d_buckets)
    members = []
    pos = 0
    for b in range(proj.d_buckets):
        members.append(order[pos:pos + counts[b]])
        pos += counts[b]
    return BucketAssignment(bucket_of=bucket_of, members=members)


def gather_buckets(X: np.ndarray, assign: BucketAssignment, validate=True):
    """Split X into per-bucket dense blocks plus the permutation that undoes it.

    Returns (blocks, order, inverse) where ``X[order]`` is the blocks stacked
    and ``stacked[inverse]`` reconstructs X exactly. Empty buckets yield
    zero-row blocks.
    """
    X = np.asarray(X)
    if assign.bucket_of.shape[0] != X.shape[0]:
        raise ValueError(f"assignment covers {assign.bucket_of.shape[0]} tokens, X has {X.shape[0]}")
    if validate:
        assign.validate()
    order = np.concatenate(assign.members) if assign.members else np.array([], dtype=np.intp)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    blocks = [X[m] for m in assign.members]
    return blocks, order, inverse
