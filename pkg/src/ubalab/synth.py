"""Seeded synthetic interaction data with planted structure.

Items get power-law popularity weights and one of a handful of category
labels; users get a preferred (and a secondary) category and sample
their likes proportional to popularity times category affinity. The
result has the two properties every experiment here leans on: a heavy
popularity skew for quintile-based target-item selection, and coherent
user-category tastes for target-user selection and CF training.

``canonical_dataset`` fixes the generator at the desk-scale reference
configuration (about 2000 x 1500, eight categories, density about 0.5%)
used throughout the test and demo suites.
"""

from __future__ import annotations

import numpy as np

from .dataset import InteractionMatrix, ItemCategoryMap

CANONICAL_SEED = 93
CANONICAL_USERS = 2000
CANONICAL_ITEMS = 1500


def synthetic_dataset(
    n_users: int = CANONICAL_USERS,
    n_items: int = CANONICAL_ITEMS,
    n_categories: int = 8,
    density: float = 0.005,
    zipf_exponent: float = 1.0,
    primary_affinity: float = 8.0,
    secondary_affinity: float = 3.0,
    seed: int = CANONICAL_SEED,
) -> tuple[InteractionMatrix, ItemCategoryMap]:
    """Generate an interaction matrix and its item-category map."""
    rng = np.random.default_rng(seed)
    item_cat = rng.integers(0, n_categories, size=n_items)
    pop_rank = rng.permutation(n_items)
    weights = 1.0 / (pop_rank + 1.0) ** zipf_exponent

    mean_degree = density * n_items
    degrees = np.maximum(2, rng.poisson(mean_degree, size=n_users))

    rows = []
    for u in range(n_users):
        primary = int(rng.integers(n_categories))
        secondary = int(rng.integers(n_categories))
        mult = np.ones(n_categories)
        mult[primary] *= primary_affinity
        mult[secondary] *= secondary_affinity
        p = weights * mult[item_cat]
        p = p / p.sum()
        d = min(int(degrees[u]), n_items)
        rows.append(np.sort(rng.choice(n_items, size=d, replace=False, p=p)))

    width_u = len(str(n_users - 1))
    width_i = len(str(n_items - 1))
    user_ids = [f"u{u:0{width_u}d}" for u in range(n_users)]
    item_ids = [f"i{i:0{width_i}d}" for i in range(n_items)]
    matrix = InteractionMatrix(rows, user_ids, item_ids, n_items=n_items)
    cats = ItemCategoryMap({i: (f"cat{int(item_cat[i])}",) for i in range(n_items)})
    return matrix, cats


def canonical_dataset() -> tuple[InteractionMatrix, ItemCategoryMap]:
    """The fixed desk-scale dataset shared by tests and demos."""
    return synthetic_dataset()


def write_rating_files(
    matrix: InteractionMatrix,
    cats: ItemCategoryMap,
    ratings_path,
    categories_path,
    sep: str = ",",
    dislike_fraction: float = 0.2,
    seed: int = 0,
) -> None:
    """Emit raw rating / category text files whose ingestion reproduces ``matrix``.

    Likes are written as rating 5; a sprinkle of rating-2 records on
    non-liked items exercises the implicit-feedback threshold without
    adding likes. Ingestion drops items nobody likes, so the
    reconstructed matrix matches up to those empty item columns.
    """
    rng = np.random.default_rng(seed)
    with open(ratings_path, "w", encoding="utf-8") as fh:
        for u, row in enumerate(matrix.rows):
            uid = matrix.user_ids[u]
            for i in row:
                fh.write(f"{uid}{sep}{matrix.item_ids[int(i)]}{sep}5\n")
            n_dis = rng.binomial(len(row), dislike_fraction)
            if n_dis:
                liked = set(int(i) for i in row)
                pool = [i for i in range(matrix.n_items) if i not in liked]
                for i in rng.choice(len(pool), size=min(n_dis, len(pool)), replace=False):
                    fh.write(f"{uid}{sep}{matrix.item_ids[pool[int(i)]]}{sep}2\n")
    with open(categories_path, "w", encoding="utf-8") as fh:
        for i in range(matrix.n_items):
            for cat in cats.get(i):
                fh.write(f"{matrix.item_ids[i]}{sep}{cat}\n")
