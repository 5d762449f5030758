"""Interaction data ingestion, filtering, and target selection.

The data model is a dense-indexed binary interaction matrix: users and
items carry contiguous integer indices, each user owns a sorted array of
liked item indices, and bidirectional maps connect dense indices to the
external string ids found in the raw logs.

Raw rating logs are mapped to implicit likes (rating strictly greater
than a threshold), k-core filtered, and then used to pick a target item
(by popularity quintile), a target user group (by category affinity),
and the attacker-accessible user subset.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    EmptyInputError,
    EmptyMatrixError,
    InsufficientCandidatesError,
    ParseError,
    SnapshotFormatError,
)

MATRIX_MAGIC = "UBALAB-IM v1"


@dataclass(frozen=True)
class RatingRecord:
    user_id: str
    item_id: str
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class RatingLog:
    """Parsed rating records, deduplicated so the last (user, item) wins."""

    records: tuple[RatingRecord, ...]

    def __len__(self):
        return len(self.records)


class InteractionMatrix:
    """Immutable binary user-item interaction matrix with id maps.

    ``rows[u]`` is a sorted, read-only int64 array of the item indices
    user ``u`` likes. ``user_ids`` / ``item_ids`` map dense indices back
    to external ids; the inverse lookups are exposed via
    :meth:`user_index` and :meth:`item_index`.
    """

    def __init__(self, rows, user_ids, item_ids, n_items=None):
        rows = [np.asarray(sorted(set(int(i) for i in r)), dtype=np.int64) for r in rows]
        for r in rows:
            r.setflags(write=False)
        self.rows: tuple[np.ndarray, ...] = tuple(rows)
        self.user_ids: tuple[str, ...] = tuple(str(u) for u in user_ids)
        self.item_ids: tuple[str, ...] = tuple(str(i) for i in item_ids)
        self.n_users: int = len(self.rows)
        self.n_items: int = len(self.item_ids) if n_items is None else int(n_items)
        if len(self.user_ids) != self.n_users:
            raise ContractError("user id map length does not match row count")
        if len(self.item_ids) != self.n_items:
            raise ContractError("item id map length does not match n_items")
        for r in self.rows:
            if len(r) and (r[0] < 0 or r[-1] >= self.n_items):
                raise ContractError("item index out of range in interaction row")
        self._user_lookup = {u: idx for idx, u in enumerate(self.user_ids)}
        self._item_lookup = {i: idx for idx, i in enumerate(self.item_ids)}

    def user_index(self, external_id: str) -> int:
        return self._user_lookup[external_id]

    def item_index(self, external_id: str) -> int:
        return self._item_lookup[external_id]

    @property
    def n_interactions(self) -> int:
        return sum(len(r) for r in self.rows)

    def item_counts(self) -> np.ndarray:
        """Number of likes per item (popularity)."""
        counts = np.zeros(self.n_items, dtype=np.int64)
        for r in self.rows:
            counts[r] += 1
        return counts

    def to_csr(self):
        """User-by-item scipy CSR view (0/1, int64 data)."""
        from scipy.sparse import csr_matrix

        indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        for u, r in enumerate(self.rows):
            indptr[u + 1] = indptr[u] + len(r)
        indices = np.concatenate(self.rows) if self.n_users else np.zeros(0, dtype=np.int64)
        data = np.ones(len(indices), dtype=np.int64)
        return csr_matrix((data, indices, indptr), shape=(self.n_users, self.n_items))

    def fingerprint(self) -> str:
        """SHA-256 over the canonical text serialization."""
        return hashlib.sha256(serialize_matrix(self).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and self.n_items == other.n_items
            and all(np.array_equal(a, b) for a, b in zip(self.rows, other.rows))
        )

    def __repr__(self):
        return (
            f"InteractionMatrix(n_users={self.n_users}, n_items={self.n_items}, "
            f"n_interactions={self.n_interactions})"
        )


@dataclass(frozen=True)
class ItemCategoryMap:
    """Item index -> tuple of category labels; unmapped items are absent."""

    categories: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def get(self, item: int) -> tuple[str, ...]:
        return self.categories.get(item, ())


@dataclass(frozen=True)
class TargetSpec:
    """A target item plus the ordered user group selected for the attack."""

    target_item: int
    target_users: tuple[int, ...]
    popularity_mode: str = "popular"
    selection_seed: int = 0

    def __post_init__(self):
        if len(set(self.target_users)) != len(self.target_users):
            raise ContractError("target user group contains duplicates")
        if not self.target_users:
            raise ContractError("target user group is empty")


def load_ratings(path, sep: str = ",", skip_header: bool = False) -> RatingLog:
    """Parse a delimited rating log: ``user<sep>item<sep>rating[<sep>timestamp]``.

    Duplicate (user, item) pairs collapse to the last occurrence. Raises
    :class:`ParseError` with the offending line number on malformed input
    and :class:`EmptyInputError` when no records survive.
    """
    dedup: dict[tuple[str, str], RatingRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if line_no == 1 and skip_header:
                continue
            line = raw.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) not in (3, 4):
                raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", line_no)
            user, item = parts[0].strip(), parts[1].strip()
            if not user or not item:
                raise ParseError("empty user or item id", line_no)
            try:
                rating = float(parts[2])
            except ValueError:
                raise ParseError(f"bad rating {parts[2]!r}", line_no) from None
            if not math.isfinite(rating):
                raise ParseError(f"non-finite rating {parts[2]!r}", line_no)
            ts = None
            if len(parts) == 4:
                try:
                    ts = int(parts[3])
                except ValueError:
                    raise ParseError(f"bad timestamp {parts[3]!r}", line_no) from None
            dedup[(user, item)] = RatingRecord(user, item, rating, ts)
    if not dedup:
        raise EmptyInputError(f"no rating records in {path}")
    return RatingLog(tuple(dedup.values()))


def load_categories(path, matrix: InteractionMatrix, sep: str = ",") -> ItemCategoryMap:
    """Parse ``item_id<sep>category`` lines into an :class:`ItemCategoryMap`.

    Items appearing on several lines collect several categories. Lines
    naming items absent from ``matrix`` (e.g. filtered out) are skipped.
    """
    cats: dict[int, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ParseError("expected item_id and category", line_no)
            item_id, cat = parts[0].strip(), parts[1].strip()
            if item_id not in matrix._item_lookup:
                continue
            idx = matrix.item_index(item_id)
            if cat not in cats.setdefault(idx, []):
                cats[idx].append(cat)
    return ItemCategoryMap({k: tuple(v) for k, v in cats.items()})


def to_implicit(log: RatingLog, like_threshold: float = 3.0) -> InteractionMatrix:
    """Map ratings strictly greater than ``like_threshold`` to likes.

    Users and items with zero surviving likes are dropped before dense
    indexing; ids are sorted lexicographically for reproducibility.
    """
    if not log.records:
        raise EmptyInputError("rating log is empty")
    pairs = [(r.user_id, r.item_id) for r in log.records if r.rating > like_threshold]
    if not pairs:
        raise EmptyMatrixError("no interaction exceeds the like threshold")
    user_ids = sorted({u for u, _ in pairs})
    item_ids = sorted({i for _, i in pairs})
    uidx = {u: k for k, u in enumerate(user_ids)}
    iidx = {i: k for k, i in enumerate(item_ids)}
    rows: list[list[int]] = [[] for _ in user_ids]
    for u, i in pairs:
        rows[uidx[u]].append(iidx[i])
    return InteractionMatrix(rows, user_ids, item_ids)


def kcore_filter(m: InteractionMatrix, k: int = 10) -> InteractionMatrix:
    """Iteratively drop users and items with fewer than ``k`` interactions.

    Runs to a fixed point and re-indexes the survivors densely (relative
    order preserved). Raises :class:`EmptyMatrixError` when nothing
    survives.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    keep_users = np.ones(m.n_users, dtype=bool)
    keep_items = np.ones(m.n_items, dtype=bool)
    while True:
        user_deg = np.array(
            [keep_items[r].sum() if keep_users[u] else 0 for u, r in enumerate(m.rows)]
        )
        item_deg = np.zeros(m.n_items, dtype=np.int64)
        for u, r in enumerate(m.rows):
            if keep_users[u]:
                item_deg[r[keep_items[r]]] += 1
        new_users = keep_users & (user_deg >= k)
        new_items = keep_items & (item_deg >= k)
        if np.array_equal(new_users, keep_users) and np.array_equal(new_items, keep_items):
            break
        keep_users, keep_items = new_users, new_items
        if not keep_users.any() or not keep_items.any():
            raise EmptyMatrixError(f"{k}-core filtering removed everything")
    item_map = np.full(m.n_items, -1, dtype=np.int64)
    item_map[np.flatnonzero(keep_items)] = np.arange(keep_items.sum())
    rows = []
    user_ids = []
    for u in np.flatnonzero(keep_users):
        r = m.rows[u]
        rows.append(item_map[r[keep_items[r]]])
        user_ids.append(m.user_ids[u])
    item_ids = [m.item_ids[i] for i in np.flatnonzero(keep_items)]
    return InteractionMatrix(rows, user_ids, item_ids)


def _popularity_order(m: InteractionMatrix) -> np.ndarray:
    """Item indices sorted by interaction count descending, ties ascending index."""
    counts = m.item_counts()
    return np.lexsort((np.arange(m.n_items), -counts))


def popularity_groups(m: InteractionMatrix, n_groups: int = 5) -> list[np.ndarray]:
    """Split items into contiguous popularity groups, most popular first.

    When the item count is not divisible, earlier (more popular) groups
    receive one extra item.
    """
    order = _popularity_order(m)
    base, rem = divmod(m.n_items, n_groups)
    groups = []
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < rem else 0)
        groups.append(order[start : start + size])
        start += size
    return groups


def select_target_items(m: InteractionMatrix, mode: str, n: int, seed: int) -> list[int]:
    """Sample ``n`` target items from the most (or least) popular quintile."""
    if mode not in ("popular", "unpopular"):
        raise ContractError(f"unknown popularity mode {mode!r}")
    groups = popularity_groups(m, 5)
    pool = groups[0] if mode == "popular" else groups[-1]
    if n > len(pool):
        raise InsufficientCandidatesError(
            f"asked for {n} target items but the {mode} quintile has {len(pool)}"
        )
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.choice(pool, size=n, replace=False)]


def row_contains(row: np.ndarray, item: int) -> bool:
    """Membership test on a sorted interaction row."""
    pos = int(np.searchsorted(row, item))
    return pos < len(row) and int(row[pos]) == item


def category_interaction_counts(
    m: InteractionMatrix, cats: ItemCategoryMap, target_item: int
) -> np.ndarray:
    """Per-user count of liked (item, category) pairs matching the target item's categories."""
    target_cats = set(cats.get(target_item))
    if not target_cats:
        raise ContractError(f"target item {target_item} has no category mapping")
    item_weight = np.zeros(m.n_items, dtype=np.int64)
    for i in range(m.n_items):
        item_weight[i] = sum(1 for c in cats.get(i) if c in target_cats)
    return np.array([int(item_weight[r].sum()) for r in m.rows], dtype=np.int64)


def select_target_users(
    m: InteractionMatrix,
    cats: ItemCategoryMap,
    target_item: int,
    n: int = 50,
    cat_threshold: int = 10,
    seed: int = 0,
    popularity_mode: str = "popular",
) -> TargetSpec:
    """Sample ``n`` target users with a light affinity for the target item's category.

    Candidates must have at least one liked item in the target item's
    category, fewer than ``cat_threshold`` such category interactions,
    and no interaction with the target item itself.
    """
    counts = category_interaction_counts(m, cats, target_item)
    liked_target = np.array([row_contains(r, target_item) for r in m.rows])
    candidates = np.flatnonzero((counts >= 1) & (counts < cat_threshold) & ~liked_target)
    if len(candidates) < n:
        raise InsufficientCandidatesError(
            f"only {len(candidates)} candidate target users, need {n}"
        )
    rng = np.random.default_rng(seed)
    chosen = sorted(int(u) for u in rng.choice(candidates, size=n, replace=False))
    return TargetSpec(int(target_item), tuple(chosen), popularity_mode, seed)


def split_accessible(
    m: InteractionMatrix, ratio: float, target_users, seed: int
) -> InteractionMatrix:
    """Sub-matrix of the users visible to the attacker.

    Keeps ``ceil(ratio * n_users)`` users: every target user (the
    attacker knows its targets) plus a uniform sample of the rest. Users
    are re-indexed densely in ascending original order; the item index
    space is unchanged.
    """
    if not 0 < ratio <= 1:
        raise ContractError("accessible ratio must lie in (0, 1]")
    targets = sorted(set(int(u) for u in target_users))
    if targets and (targets[0] < 0 or targets[-1] >= m.n_users):
        raise ContractError("target user index out of range")
    n_sel = math.ceil(ratio * m.n_users)
    if n_sel < len(targets):
        raise InsufficientCandidatesError(
            f"accessible budget {n_sel} cannot cover {len(targets)} target users"
        )
    others = np.setdiff1d(np.arange(m.n_users), np.array(targets, dtype=np.int64))
    rng = np.random.default_rng(seed)
    extra = rng.choice(others, size=n_sel - len(targets), replace=False)
    selected = np.sort(np.concatenate([np.array(targets, dtype=np.int64), extra.astype(np.int64)]))
    rows = [m.rows[u] for u in selected]
    user_ids = [m.user_ids[u] for u in selected]
    return InteractionMatrix(rows, user_ids, m.item_ids, n_items=m.n_items)


def remap_target_spec(
    spec: TargetSpec, source: InteractionMatrix, dest: InteractionMatrix
) -> TargetSpec:
    """Re-express a target spec's user indices in another matrix's index space.

    Users are matched through external ids; group order is preserved. The
    item spaces must agree (accessible splits never touch items).
    """
    if source.item_ids != dest.item_ids:
        raise ContractError("item spaces differ; cannot remap target spec")
    users = tuple(dest.user_index(source.user_ids[u]) for u in spec.target_users)
    return TargetSpec(spec.target_item, users, spec.popularity_mode, spec.selection_seed)


def with_extra_users(
    m: InteractionMatrix, extra_rows, extra_ids
) -> InteractionMatrix:
    """Append extra user rows (e.g. fake users) below the real ones."""
    rows = list(m.rows) + [np.asarray(r, dtype=np.int64) for r in extra_rows]
    user_ids = list(m.user_ids) + [str(u) for u in extra_ids]
    return InteractionMatrix(rows, user_ids, m.item_ids, n_items=m.n_items)


def serialize_matrix(m: InteractionMatrix) -> str:
    """Canonical text snapshot (also the fingerprint payload)."""
    lines = [MATRIX_MAGIC, f"{m.n_users} {m.n_items}"]
    lines.extend(m.item_ids)
    for u in range(m.n_users):
        lines.append(m.user_ids[u] + "\t" + " ".join(str(int(i)) for i in m.rows[u]))
    return "\n".join(lines) + "\n"


def save_matrix(path, m: InteractionMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_matrix(m))


def load_matrix(path) -> InteractionMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or lines[0] != MATRIX_MAGIC:
        raise SnapshotFormatError(f"{path} is not a {MATRIX_MAGIC} snapshot")
    try:
        n_users, n_items = (int(x) for x in lines[1].split())
        item_ids = lines[2 : 2 + n_items]
        rows = []
        user_ids = []
        for line in lines[2 + n_items : 2 + n_items + n_users]:
            uid, _, rest = line.partition("\t")
            user_ids.append(uid)
            rows.append([int(x) for x in rest.split()] if rest else [])
    except (ValueError, IndexError) as exc:
        raise SnapshotFormatError(f"corrupt matrix snapshot {path}: {exc}") from None
    if len(user_ids) != n_users or len(item_ids) != n_items:
        raise SnapshotFormatError(f"truncated matrix snapshot {path}")
    return InteractionMatrix(rows, user_ids, item_ids, n_items=n_items)
