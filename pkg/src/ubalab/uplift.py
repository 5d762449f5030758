"""Treatment-effect estimation: recommendation probability per budget level.

An uplift table Y has one row per target user and one column per budget
level 0..H. Y[u][t] estimates the probability that the target item
enters user u's top-K list when u is assigned t fake users.

Two estimators are provided. The simulated estimator trains a surrogate
model on the attacker-visible interactions plus generated fakes, E times
per budget level with derived seeds, and counts top-K hits. The proxy
estimator skips training entirely: it counts three-order walks from the
user to the target item after stacking similarity-maximal fake rows,
and maps counts through a normalized power law.

Cell seeds derive from (base seed, budget level, repetition), so the
simulation grid can be evaluated in any order (or concurrently) and
still assemble the same table.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import cf
from .allocator import constant_allocation
from .attackers import AttackerConfig, generate, max_similarity_profiles, resolve_profile_size
from .dataset import InteractionMatrix, TargetSpec, with_extra_users
from .errors import ContractError, SnapshotFormatError
from .pathcount import PathQuery, ProxyParams, augmented_path_counts
from .seeding import derive_seed

TABLE_MAGIC = "UBALAB-UT v1"


@dataclass(frozen=True)
class UpliftTable:
    """|U_t| x (H+1) grid of estimated recommendation probabilities."""

    target_users: tuple[int, ...]
    H: int
    Y: tuple[tuple[float, ...], ...]
    estimator: str  # simulated | proxy
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.Y) != len(self.target_users):
            raise ContractError("Y must have one row per target user")
        for row in self.Y:
            if len(row) != self.H + 1:
                raise ContractError("Y rows must have H+1 columns")
            if any(not 0.0 <= v <= 1.0 for v in row):
                raise ContractError("Y entries must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array(self.Y, dtype=np.float64)

    def content_hash(self) -> str:
        return hashlib.sha256(_table_payload(self).encode()).hexdigest()


def uplift(table: UpliftTable, u: int, t: int) -> float:
    """Treatment effect Y[u][t] - Y[u][0] for budget t >= 1."""
    if not 1 <= t <= table.H:
        raise ContractError("uplift is defined for budgets t in 1..H")
    return float(table.Y[u][t]) - float(table.Y[u][0])


def estimate_simulated(
    accessible: InteractionMatrix,
    spec: TargetSpec,
    attacker: AttackerConfig,
    surrogate_cfg: cf.TrainConfig,
    H: int,
    E: int = 10,
    K: int = 10,
    base_seed: int = 0,
) -> UpliftTable:
    """Hit-ratio table from E seeded surrogate trainings per budget level.

    Each probe assigns the same budget t to every target user at once,
    generates fakes, retrains the surrogate from scratch, and checks
    whether the target item reaches each user's top-K (excluding the
    user's real likes). Y[u][t] is the fraction of the E runs that hit.
    """
    if H < 0 or E < 1 or K < 1:
        raise ContractError("H must be >= 0, E and K >= 1")
    n = len(spec.target_users)
    hits = np.zeros((n, H + 1), dtype=np.int64)
    for t in range(H + 1):
        for e in range(E):
            if t == 0:
                train_m = accessible
            else:
                gen_cfg = replace(attacker, seed=derive_seed(base_seed, "probe-gen", t, e))
                fakes = generate(gen_cfg, constant_allocation(spec, t), spec, accessible)
                train_m = with_extra_users(accessible, fakes.rows, fakes.user_ids())
            model = cf.train(
                train_m, cf.seeded_config(surrogate_cfg, derive_seed(base_seed, "probe-train", t, e))
            )
            for k, u in enumerate(spec.target_users):
                rank = cf.rank_of_item(model, u, spec.target_item, exclude=accessible.rows[u])
                if rank is not None and rank <= K:
                    hits[k, t] += 1
    y = tuple(tuple(float(h) / E for h in row) for row in hits)
    meta = {
        "E": E,
        "K": K,
        "base_seed": base_seed,
        "attacker_kind": attacker.kind,
        "profile_size": resolve_profile_size(attacker, accessible),
        "target_item": spec.target_item,
    }
    return UpliftTable(tuple(spec.target_users), H, y, "simulated", meta)


def estimate_proxy(
    accessible: InteractionMatrix,
    spec: TargetSpec,
    H: int,
    p: ProxyParams = ProxyParams(),
    profile_size: int | None = None,
) -> UpliftTable:
    """Walk-count table: no model training, no simulation.

    For each user and budget t, stack t similarity-maximal fake rows,
    count three-order walks to the target item, and scale
    alpha * count^beta by the table-wide maximum (clamped to [0, 1]).
    """
    if H < 0:
        raise ContractError("H must be >= 0")
    ps = (
        profile_size
        if profile_size is not None
        else resolve_profile_size(AttackerConfig(kind="template"), accessible)
    )
    n = len(spec.target_users)
    raw = np.zeros((n, H + 1), dtype=np.float64)
    for k, u in enumerate(spec.target_users):
        for t in range(H + 1):
            fakes = max_similarity_profiles(u, t, spec, accessible, ps)
            count = augmented_path_counts(
                accessible, fakes, PathQuery(((u, spec.target_item),), 3)
            )[0]
            raw[k, t] = p.alpha * float(count) ** p.beta
    normalizer = float(raw.max())
    if normalizer <= 0:
        normalizer = 1.0
    y = tuple(tuple(min(1.0, float(v) / normalizer) for v in row) for row in raw)
    meta = {
        "alpha": p.alpha,
        "beta": p.beta,
        "normalizer": normalizer,
        "profile_size": ps,
        "target_item": spec.target_item,
    }
    return UpliftTable(tuple(spec.target_users), H, y, "proxy", meta)


def cache_key(
    accessible: InteractionMatrix, spec: TargetSpec, estimator: str, params: dict
) -> str:
    """Stable key over everything the estimate depends on."""
    h = hashlib.sha256()
    h.update(accessible.fingerprint().encode())
    h.update(
        json.dumps(
            {
                "target_item": spec.target_item,
                "target_users": list(spec.target_users),
                "estimator": estimator,
                "params": params,
            },
            sort_keys=True,
        ).encode()
    )
    return h.hexdigest()


def _table_payload(table: UpliftTable) -> str:
    meta = json.dumps(
        {
            "target_users": list(table.target_users),
            "H": table.H,
            "estimator": table.estimator,
            "metadata": table.metadata,
        },
        sort_keys=True,
    )
    rows = "\n".join(" ".join(repr(v) for v in row) for row in table.Y)
    return meta + "\n" + rows + "\n"


def save_table(path, table: UpliftTable) -> None:
    """Versioned text snapshot with a content hash line checked on load."""
    payload = _table_payload(table)
    digest = hashlib.sha256(payload.encode()).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TABLE_MAGIC + "\n")
        fh.write("sha256:" + digest + "\n")
        fh.write(payload)


def load_table(path) -> UpliftTable:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != TABLE_MAGIC:
        raise SnapshotFormatError(f"{path} is not a {TABLE_MAGIC} snapshot")
    if not lines[1].startswith("sha256:"):
        raise SnapshotFormatError(f"{path} is missing its content hash")
    payload = "\n".join(lines[2:])
    digest = hashlib.sha256(payload.encode()).hexdigest()
    if digest != lines[1][len("sha256:"):]:
        raise SnapshotFormatError(f"{path} failed its content hash check")
    meta = json.loads(lines[2])
    y = tuple(
        tuple(float(v) for v in line.split()) for line in lines[3:] if line.strip()
    )
    return UpliftTable(
        tuple(meta["target_users"]), meta["H"], y, meta["estimator"], meta["metadata"]
    )


def save_uplift_curves(path, table: UpliftTable, sep: str = "\t") -> None:
    """Plot data: one ``user<sep>budget<sep>probability`` line per cell."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# estimator={table.estimator} H={table.H}\n")
        for u, row in zip(table.target_users, table.Y):
            for t, v in enumerate(row):
                fh.write(f"{u}{sep}{t}{sep}{v!r}\n")
