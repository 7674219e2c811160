"""Global learnable attention restricted to SLH buckets.

Each query attends only to the tokens sharing its hash bucket. Pair scores
combine a fixed dot-product term (projected query . projected key) with a
learned per-query bias produced by a small two-layer ReLU head; softmax
weights then mix value projections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .slh import ProjectionMatrix, hash_assign, gather_buckets, make_orthonormal_projection
from .tensor import Tensor


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class GlamParams:
    """Parameters of one attention head over c-dimensional tokens.

    Four linear maps c->c produce query/key/value and the learned-head input;
    the head itself is (d_h x c) + (1 x d_h) with biases. The projection
    matrix used for bucketing is fixed, never trained.
    """

    def __init__(self, c, d_buckets, d_h=None, seed=0, dtype=np.float32):
        self.c = c
        self.d_h = d_h if d_h is not None else c
        self.proj = make_orthonormal_projection(c, d_buckets, seed, strict=False)
        rng = np.random.default_rng(seed + 1)
        def lin(out_dim, in_dim):
            w = Tensor(_kaiming_uniform(rng, (out_dim, in_dim), in_dim, dtype), requires_grad=True)
            b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)
            return w, b
        self.wq, self.bq = lin(c, c)
        self.wk, self.bk = lin(c, c)
        self.wv, self.bv = lin(c, c)
        self.wl, self.bl = lin(c, c)
        self.w1, self.b1 = lin(self.d_h, c)
        self.w2, self.b2 = lin(1, self.d_h)

    def parameters(self):
        names = ["wq", "bq", "wk", "bk", "wv", "bv", "wl", "bl", "w1", "b1", "w2", "b2"]
        return [(n, getattr(self, n)) for n in names]

    @property
    def param_count(self):
        # 4 linear maps c->c plus the two-layer head; pure function of (c, d_h)
        c, dh = self.c, self.d_h
        return 4 * (c * c + c) + (dh * c + dh) + (dh + 1)


@dataclass
class QueryRecord:
    query: int
    bucket: int
    members: np.ndarray
    s_mass: np.ndarray
    s_ass: float
    weights: np.ndarray


@dataclass
class AttentionTrace:
    """Per-query diagnostics captured during a forward pass."""

    records: list = field(default_factory=list)

    def to_text(self):
        lines = []
        for r in sorted(self.records, key=lambda r: r.query):
            lines.append(
                f"query={r.query} bucket={r.bucket} "
                f"members={','.join(map(str, r.members))} "
                f"s_ass={r.s_ass:.6g} "
                f"s_mass={','.join(f'{v:.6g}' for v in r.s_mass)} "
                f"weights={','.join(f'{v:.6g}' for v in r.weights)}")
        return "\n".join(lines) + "\n"


def _np_linear(x, w, b):
    return x @ w.data.T + b.data


def s_mass(x_i, x_j, params: GlamParams) -> float:
    """Fixed similarity: dot product of projected query and projected key."""
    q = _np_linear(np.asarray(x_i), params.wq, params.bq)
    k = _np_linear(np.asarray(x_j), params.wk, params.bk)
    return float(q @ k)


def s_ass(x_i, bucket_block, params: GlamParams) -> np.ndarray:
    """Learned similarity bias for query x_i, one score per bucket member.

    The head is a two-layer ReLU map producing a single scalar per query;
    every member of the bucket receives the same additive score.
    """
    bucket_block = np.asarray(bucket_block)
    if bucket_block.ndim != 2 or bucket_block.shape[0] == 0:
        raise ValueError("s_ass requires a non-empty bucket block")
    l = _np_linear(np.asarray(x_i), params.wl, params.bl)
    h = np.maximum(params.w1.data @ l + params.b1.data, 0.0)
    score = float(np.asarray(params.w2.data @ h + params.b2.data).reshape(-1)[0])
    return np.full(bucket_block.shape[0], score, dtype=bucket_block.dtype)


def glam_forward(X: Tensor, params: GlamParams, trace: AttentionTrace = None) -> Tensor:
    """Bucketed attention over token matrix X (n x c); differentiable.

    Bucket assignment uses the raw token values and is treated as a constant
    of the forward pass (argmax is piecewise constant).
    """
    n, c = X.shape
    if c != params.c:
        raise T.ShapeError(f"token width {c} != params width {params.c}")
    assign = hash_assign(X.data, params.proj)
    _, order, inverse = gather_buckets(X.data, assign, validate=False)

    blocks = []
    for b, m in enumerate(assign.members):
        if m.size == 0:
            continue
        Xb = X.index_select(m)
        q = Xb @ params.wq.transpose(1, 0) + params.bq
        k = Xb @ params.wk.transpose(1, 0) + params.bk
        v = Xb @ params.wv.transpose(1, 0) + params.bv
        l = Xb @ params.wl.transpose(1, 0) + params.bl
        hidden = T.relu(l @ params.w1.transpose(1, 0) + params.b1)
        ass = hidden @ params.w2.transpose(1, 0) + params.b2          # (m, 1)
        scores = q @ k.transpose(1, 0) + ass @ Tensor(np.ones((1, m.size), dtype=X.dtype))
        if not np.isfinite(scores.data).all():
            raise ValueError(f"non-finite attention scores in bucket {b}")
        weights = T.softmax(scores, axis=-1)
        blocks.append(weights @ v)
        if trace is not None:
            mass = (q.data @ k.data.T)
            for row, qi in enumerate(m):
                trace.records.append(QueryRecord(
                    query=int(qi), bucket=b, members=m.copy(),
                    s_mass=mass[row].copy(), s_ass=float(ass.data[row, 0]),
                    weights=weights.data[row].copy()))
    stacked = blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=0)
    return stacked.index_select(inverse)


def glam_forward_padded(X: np.ndarray, params: GlamParams) -> np.ndarray:
    """Fixed-capacity batched execution of the bucketed attention (inference).

    Buckets are padded to the largest occupancy and processed with batched
    matmuls; masked softmax keeps the numerics identical to the
    variable-size path.
    """
    X = np.asarray(X)
    n, c = X.shape
    assign = hash_assign(X, params.proj)
    sizes = np.array([m.size for m in assign.members])
    occupied = [m for m in assign.members if m.size > 0]
    cap = int(sizes.max())
    nb = len(occupied)
    idx = np.zeros((nb, cap), dtype=np.intp)
    mask = np.zeros((nb, cap), dtype=bool)
    for bi, m in enumerate(occupied):
        idx[bi, :m.size] = m
        mask[bi, :m.size] = True

    Xb = X[idx]                                    # (nb, cap, c); pad rows repeat token 0
    flat = Xb.reshape(-1, c)
    q = _np_linear(flat, params.wq, params.bq).reshape(nb, cap, c)
    k = _np_linear(flat, params.wk, params.bk).reshape(nb, cap, c)
    v = _np_linear(flat, params.wv, params.bv).reshape(nb, cap, c)
    l = _np_linear(flat, params.wl, params.bl)
    h = np.maximum(l @ params.w1.data.T + params.b1.data, 0.0)
    ass = (h @ params.w2.data.T + params.b2.data).reshape(nb, cap, 1)

    scores = q @ k.swapaxes(1, 2) + ass
    scores = np.where(mask[:, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores) * mask[:, None, :]
    w = e / e.sum(axis=-1, keepdims=True)
    out_b = w @ v

    out = np.empty_like(X)
    out[idx[mask]] = out_b[mask]
    return out


def dense_attention_reference(X: np.ndarray, params: GlamParams) -> np.ndarray:
    """Quadratic all-pairs attention; verification oracle, never trained."""
    X = np.asarray(X)
    q = _np_linear(X, params.wq, params.bq)
    k = _np_linear(X, params.wk, params.bk)
    v = _np_linear(X, params.wv, params.bv)
    l = _np_linear(X, params.wl, params.bl)
    h = np.maximum(l @ params.w1.data.T + params.b1.data, 0.0)
    ass = h @ params.w2.data.T + params.b2.data          # (n, 1)
    scores = q @ k.T + ass
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    w = e / e.sum(axis=-1, keepdims=True)
    return w @ v
