"""Walk counting on the bipartite interaction graph and the path-count proxy.

The symmetric adjacency stacks users and items into one node space:
user u occupies node u, item i occupies node n_users + i. The number of
length-k walks between a user and an item (odd k only; the graph is
bipartite) is read off by repeatedly applying the adjacency to a
one-hot vector seeded at the user, which keeps everything sparse: the
cube of the adjacency is never materialized.

Three-order counts double as a cheap stand-in for a trained model's
prediction score; ``correlation_report`` quantifies that agreement by
group-mean Spearman rank correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .dataset import InteractionMatrix, with_extra_users
from .errors import ContractError, InsufficientDataError

ALLOWED_ORDERS = (1, 3, 5, 7)

# Above this per-entry bound the int64 fast path could overflow on the
# next multiply, so counting switches to Python integers.
_INT64_SAFE = 2**62


@dataclass(frozen=True)
class PathQuery:
    pairs: tuple[tuple[int, int], ...]
    order: int = 3

    def __post_init__(self):
        if self.order not in ALLOWED_ORDERS:
            raise ContractError(f"walk order must be one of {ALLOWED_ORDERS}")


@dataclass(frozen=True)
class ProxyParams:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ContractError("alpha and beta must be strictly positive")


def bipartite_adjacency(m: InteractionMatrix) -> csr_matrix:
    """Square symmetric 0/1 adjacency over user and item nodes (int64)."""
    n = m.n_users + m.n_items
    rows = [np.full(len(r), u, dtype=np.int64) for u, r in enumerate(m.rows)]
    row = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    col = (np.concatenate(m.rows) if m.n_users else np.zeros(0, dtype=np.int64)) + m.n_users
    data = np.ones(len(row), dtype=np.int64)
    return csr_matrix(
        (np.concatenate([data, data]), (np.concatenate([row, col]), np.concatenate([col, row]))),
        shape=(n, n),
    )


def _walk_counts_wide(adj_lists, start, order):
    """Exact walk counting with Python integers (no overflow)."""
    frontier = {start: 1}
    for _ in range(order):
        nxt: dict[int, int] = {}
        for node, val in frontier.items():
            for nb in adj_lists[node]:
                nxt[nb] = nxt.get(nb, 0) + val
        frontier = nxt
    return frontier


def path_counts(m: InteractionMatrix, q: PathQuery) -> list[int]:
    """Number of length-``q.order`` walks from user u to item i for each pair."""
    for u, i in q.pairs:
        if not 0 <= u < m.n_users or not 0 <= i < m.n_items:
            raise ContractError(f"pair ({u}, {i}) out of range")
    adj = bipartite_adjacency(m)
    max_deg = int(adj.sum(axis=1).max()) if adj.nnz else 0
    adj_lists = None

    by_user: dict[int, list[int]] = {}
    for idx, (u, _) in enumerate(q.pairs):
        by_user.setdefault(u, []).append(idx)

    out = [0] * len(q.pairs)
    for u, idxs in by_user.items():
        v = np.zeros(adj.shape[0], dtype=np.int64)
        v[u] = 1
        wide = None
        for _ in range(q.order):
            if max_deg and int(v.max()) > _INT64_SAFE // max_deg:
                if adj_lists is None:
                    adj_lists = [adj.indices[adj.indptr[k]: adj.indptr[k + 1]] for k in range(adj.shape[0])]
                wide = _walk_counts_wide(adj_lists, u, q.order)
                break
            v = adj @ v
        for idx in idxs:
            i = q.pairs[idx][1]
            node = m.n_users + i
            out[idx] = int(wide.get(node, 0)) if wide is not None else int(v[node])
    return out


def augmented_path_counts(real: InteractionMatrix, fakes, q: PathQuery) -> list[int]:
    """Walk counts over the graph with fake-user rows stacked below the real ones."""
    fake_rows = fakes.rows if hasattr(fakes, "rows") else fakes
    for r in fake_rows:
        for i in r:
            if not 0 <= int(i) < real.n_items:
                raise ContractError("fake row references an out-of-range item")
    stacked = with_extra_users(
        real, fake_rows, [f"fake::{k}" for k in range(len(fake_rows))]
    )
    return path_counts(stacked, q)


def proxy_uplift(count: int, p: ProxyParams, normalizer: float) -> float:
    """Normalized, clamped power-law proxy alpha * count^beta / normalizer."""
    if normalizer <= 0:
        raise ContractError("normalizer must be > 0")
    if count < 0:
        raise ContractError("count must be non-negative")
    return min(1.0, p.alpha * float(count) ** p.beta / normalizer)


@dataclass(frozen=True)
class CorrelationReport:
    spearman_r: float
    p_value: float
    groups: tuple[tuple[float, float], ...]  # (mean count, mean score)
    order: int
    n_pairs: int
    n_groups: int


def sample_noninteracting_pairs(
    m: InteractionMatrix, cap: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Up to ``cap`` distinct non-interacting (user, item) pairs, seeded.

    When the full cross product minus interactions fits under the cap,
    every non-interacting pair is returned (in permuted order).
    """
    total = m.n_users * m.n_items
    rng = np.random.default_rng(seed)
    flat = rng.permutation(total)
    users = flat // m.n_items
    items = flat % m.n_items
    liked = np.zeros((m.n_users, m.n_items), dtype=bool)
    for u, r in enumerate(m.rows):
        liked[u, r] = True
    keep = ~liked[users, items]
    users, items = users[keep], items[keep]
    return users[:cap], items[:cap]


def correlation_report(
    model,
    m: InteractionMatrix,
    order: int = 3,
    n_groups: int = 50,
    sample_cap: int = 200_000,
    seed: int = 0,
) -> CorrelationReport:
    """Group-mean Spearman correlation between walk counts and model scores.

    Non-interacting pairs are ranked by walk count and split into
    ``n_groups`` equal-size contiguous groups (remainder spread over the
    earlier groups); the report correlates the per-group mean count with
    the per-group mean prediction score.
    """
    from scipy.stats import spearmanr

    if model.matrix_fingerprint != m.fingerprint():
        raise ContractError("model was not trained on this matrix")
    users, items = sample_noninteracting_pairs(m, sample_cap, seed)
    n_pairs = len(users)
    n_groups = min(n_groups, n_pairs)
    if n_groups < 3:
        raise InsufficientDataError(f"only {n_groups} groups; need at least 3")

    counts = np.array(
        path_counts(m, PathQuery(tuple(zip(users.tolist(), items.tolist())), order)),
        dtype=np.float64,
    )
    scores = np.empty(n_pairs)
    for u in np.unique(users):
        mask = users == u
        scores[mask] = model.scores_for_user(int(u))[items[mask]]

    rank = np.argsort(counts, kind="stable")
    base, rem = divmod(n_pairs, n_groups)
    group_means = []
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < rem else 0)
        sel = rank[start : start + size]
        group_means.append((float(counts[sel].mean()), float(scores[sel].mean())))
        start += size
    mc = np.array([g[0] for g in group_means])
    ms = np.array([g[1] for g in group_means])
    r, p = spearmanr(mc, ms)
    return CorrelationReport(float(r), float(p), tuple(group_means), order, n_pairs, n_groups)


def save_correlation_report(path, report: CorrelationReport, sep: str = "\t") -> None:
    """Plot-data file: one stats header line, then mean_count / mean_score rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# spearman_r={report.spearman_r!r} p_value={report.p_value!r} "
            f"order={report.order} n_pairs={report.n_pairs} n_groups={report.n_groups}\n"
        )
        for mean_count, mean_score in report.groups:
            fh.write(f"{mean_count!r}{sep}{mean_score!r}\n")
