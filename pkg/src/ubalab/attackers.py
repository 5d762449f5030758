"""Fake-user profile generation under a per-target-user budget allocation.

Five strategies fill the non-target slots of each fake profile:

* ``random``    -- uniform items;
* ``average``   -- items sampled proportional to global popularity;
* ``bandwagon`` -- uniform items from the most popular pool;
* ``segment``   -- uniform items from the target users' own likes;
* ``template``  -- items copied from the assigned target user's row.

Every generated row likes the target item. ``max_similarity_profiles``
builds the profiles that maximize the three-order path count added
between a target user and the target item: copies of the user's own row
plus the target like (each such row adds a walk per mutually liked
item).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocator import Allocation
from .dataset import InteractionMatrix, TargetSpec
from .errors import ContractError
from .seeding import rng_for


@dataclass(frozen=True)
class AttackerConfig:
    kind: str = "template"  # random | average | bandwagon | segment | template
    profile_size: int | None = None  # None: round(mean real row length)
    bandwagon_pool: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "average", "bandwagon", "segment", "template"):
            raise ContractError(f"unknown attacker kind {self.kind!r}")
        if self.profile_size is not None and self.profile_size < 1:
            raise ContractError("profile_size must be >= 1")
        if self.bandwagon_pool < 1:
            raise ContractError("bandwagon_pool must be >= 1")


@dataclass(frozen=True)
class FakeUserBlock:
    """Fake interaction rows plus per-row provenance and the generation seed."""

    rows: tuple[np.ndarray, ...]
    provenance: tuple[tuple[str, int | None, int | None], ...]  # (kind, template, assigned)
    seed: int | None = None
    target_item: int | None = None

    def __post_init__(self):
        if len(self.rows) != len(self.provenance):
            raise ContractError("provenance length does not match row count")
        for r in self.rows:
            if self.target_item is not None and self.target_item not in set(int(x) for x in r):
                raise ContractError("fake row does not contain the target item")

    def __len__(self):
        return len(self.rows)

    def user_ids(self) -> list[str]:
        return [f"fake::{k}" for k in range(len(self.rows))]


def empty_block(target_item: int | None = None, seed: int | None = None) -> FakeUserBlock:
    return FakeUserBlock((), (), seed, target_item)


def resolve_profile_size(cfg: AttackerConfig, accessible: InteractionMatrix) -> int:
    """Configured profile size, or the rounded mean real-user row length."""
    if cfg.profile_size is not None:
        return min(cfg.profile_size, accessible.n_items)
    mean_len = np.mean([len(r) for r in accessible.rows]) if accessible.n_users else 1.0
    return int(min(max(1, round(mean_len)), accessible.n_items))


def _weighted_sample(rng, pool, weights, size):
    """Sample without replacement proportional to weights; zero weights never drawn."""
    positive = weights > 0
    pool, weights = pool[positive], weights[positive]
    size = min(size, len(pool))
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    p = weights / weights.sum()
    return rng.choice(pool, size=size, replace=False, p=p)


def _fill_items(kind, rng, n_fill, target, accessible, spec, bandwagon_pool, counts):
    """Non-target likes for one fake row, per strategy."""
    n_items = accessible.n_items
    others = np.setdiff1d(np.arange(n_items, dtype=np.int64), [target])
    if n_fill <= 0:
        return np.zeros(0, dtype=np.int64)
    if kind == "random":
        return rng.choice(others, size=min(n_fill, len(others)), replace=False)
    if kind == "average":
        return _weighted_sample(rng, others, counts[others].astype(float), n_fill)
    if kind == "bandwagon":
        order = np.lexsort((np.arange(n_items), -counts))
        pool = np.setdiff1d(order[: min(len(order), bandwagon_pool)], [target])
        return rng.choice(pool, size=min(n_fill, len(pool)), replace=False)
    if kind == "segment":
        union = sorted(set(int(i) for u in spec.target_users for i in accessible.rows[u]) - {target})
        pool = np.asarray(union, dtype=np.int64)
        if len(pool) == 0:
            return np.zeros(0, dtype=np.int64)
        return rng.choice(pool, size=min(n_fill, len(pool)), replace=False)
    raise ContractError(f"unknown attacker kind {kind!r}")


def _template_items(rng, n_fill, target, accessible, user, row_number, counts):
    """Copy the template user's likes; rotate across rows, pad when short."""
    row = np.setdiff1d(accessible.rows[user], [target])
    if len(row) >= n_fill:
        start = (row_number * n_fill) % len(row) if len(row) else 0
        take = np.arange(start, start + n_fill) % len(row)
        return row[take]
    pad_pool = np.setdiff1d(np.arange(accessible.n_items, dtype=np.int64), np.append(row, target))
    pad = _weighted_sample(rng, pad_pool, counts[pad_pool].astype(float), n_fill - len(row))
    return np.concatenate([row, pad])


def generate(
    cfg: AttackerConfig,
    alloc: Allocation,
    spec: TargetSpec,
    accessible: InteractionMatrix,
) -> FakeUserBlock:
    """Emit one fake row per allocated budget unit, target users in spec order."""
    if alloc.target_users != tuple(spec.target_users):
        raise ContractError("allocation and target spec disagree on the user group")
    ps = resolve_profile_size(cfg, accessible)
    counts = accessible.item_counts()
    target = spec.target_item
    rows: list[np.ndarray] = []
    prov: list[tuple[str, int | None, int | None]] = []
    for u, t_u in zip(spec.target_users, alloc.budgets):
        rng = rng_for(cfg.seed, "attacker", cfg.kind, u)
        for r_no in range(t_u):
            if cfg.kind == "template":
                fill = _template_items(rng, ps - 1, target, accessible, u, r_no, counts)
                template_user = u
            else:
                fill = _fill_items(
                    cfg.kind, rng, ps - 1, target, accessible, spec,
                    cfg.bandwagon_pool, counts,
                )
                template_user = None
            rows.append(np.asarray(sorted(set(int(i) for i in fill) | {target}), dtype=np.int64))
            prov.append((cfg.kind, template_user, u))
    return FakeUserBlock(tuple(rows), tuple(prov), cfg.seed, target)


def max_similarity_profiles(
    u: int,
    t: int,
    spec: TargetSpec,
    accessible: InteractionMatrix,
    profile_size: int,
) -> FakeUserBlock:
    """``t`` identical rows sharing as many items with user ``u`` as the size allows.

    Each row is the target item plus the first ``profile_size - 1`` items
    of the user's row in ascending index order (the whole row when it is
    shorter).
    """
    if t < 0:
        raise ContractError("budget must be non-negative")
    if profile_size < 1:
        raise ContractError("profile_size must be >= 1")
    target = spec.target_item
    row = np.setdiff1d(accessible.rows[u], [target])
    shared = row[: max(0, profile_size - 1)]
    fake_row = np.asarray(sorted(set(int(i) for i in shared) | {target}), dtype=np.int64)
    rows = tuple(fake_row.copy() for _ in range(t))
    prov = tuple(("max_similarity", u, u) for _ in range(t))
    return FakeUserBlock(rows, prov, None, target)


def save_fake_block(path, block: FakeUserBlock, item_ids, sep: str = ",") -> None:
    """Persist as interaction text: synthetic ``fake::k`` users, rating 5 likes."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, row in enumerate(block.rows):
            for i in row:
                fh.write(f"fake::{k}{sep}{item_ids[int(i)]}{sep}5\n")
