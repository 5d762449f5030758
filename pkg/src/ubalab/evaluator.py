"""Attack evaluation: HR@K, NDCG@K, MRR@K before and after fake-user injection.

The victim model is trained twice with the same seed, once on the real
interactions and once with the fake rows stacked underneath. Every real
user is then scored on a single relevant item (the target): a user is
hit when the target enters their top-K candidate list, candidates being
all items except the user's real training likes. With one relevant item
the standard forms reduce to

    hr   = 1[rank <= K]
    ndcg = 1 / log2(rank + 1)   if hit, else 0
    mrr  = 1 / rank             if hit, else 0

which pins mrr <= ndcg <= hr for every user. Means are reported for the
target-user group and for all real users; fake users never enter any
denominator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import cf
from .dataset import InteractionMatrix, TargetSpec, row_contains, with_extra_users
from .errors import ContractError

GROUPS = ("target", "all")
PHASES = ("before", "after")
METRICS = ("hr", "ndcg", "mrr")


def single_target_metrics(rank: int | None, K: int) -> tuple[float, float, float]:
    """(hr, ndcg, mrr) for one user given the target's 1-based rank (None = unranked)."""
    if rank is None or rank > K:
        return 0.0, 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank + 1), 1.0 / rank


@dataclass(frozen=True)
class MetricsReport:
    """Mean metrics per (user group, phase, K) plus experiment metadata."""

    Ks: tuple[int, ...]
    values: dict  # values[group][phase][str(K)] -> {"hr": .., "ndcg": .., "mrr": ..}
    metadata: dict = field(default_factory=dict)

    def get(self, group: str, phase: str, K: int, metric: str) -> float:
        return self.values[group][phase][str(K)][metric]


def target_item_ranks(model, target: int, n_real: int, real_rows) -> np.ndarray:
    """1-based rank of the target item per real user; 0 where the target is excluded.

    Candidates per user are all items minus the user's real training
    likes; ordering is score descending with ascending-index ties,
    matching ``cf.topk``.
    """
    scores = model.user_prop[:n_real] @ model.item_prop.T
    s_t = scores[:, target][:, None]
    idx = np.arange(model.n_items)[None, :]
    better = (scores > s_t) | ((scores == s_t) & (idx < target))
    ranks = np.zeros(n_real, dtype=np.int64)
    for u in range(n_real):
        row = real_rows[u]
        if row_contains(row, target):
            continue  # target not rankable for this user
        ranks[u] = 1 + int(better[u].sum()) - int(better[u][row].sum())
    return ranks


def _group_means(ranks: np.ndarray, users, K: int) -> dict:
    hr = ndcg = mrr = 0.0
    for u in users:
        rank = int(ranks[u])
        h, n, m = single_target_metrics(rank if rank > 0 else None, K)
        hr, ndcg, mrr = hr + h, ndcg + n, mrr + m
    n_users = len(users)
    return {"hr": hr / n_users, "ndcg": ndcg / n_users, "mrr": mrr / n_users}


def evaluate(
    real: InteractionMatrix,
    fakes,
    spec: TargetSpec,
    victim_cfg: cf.TrainConfig,
    Ks=(10, 20),
    seed: int = 0,
    metadata: dict | None = None,
) -> MetricsReport:
    """Train the victim on real and on real+fakes (same seed) and report metrics."""
    if any(K < 1 for K in Ks):
        raise ContractError("every K must be >= 1")
    fake_rows = fakes.rows if hasattr(fakes, "rows") else tuple(fakes)
    for r in fake_rows:
        for i in r:
            if not 0 <= int(i) < real.n_items:
                raise ContractError("fake row references an out-of-range item")
    before_model = cf.train(real, cf.seeded_config(victim_cfg, seed))
    stacked = with_extra_users(
        real, fake_rows, [f"fake::{k}" for k in range(len(fake_rows))]
    )
    after_model = cf.train(stacked, cf.seeded_config(victim_cfg, seed))
    ranks = {
        "before": target_item_ranks(before_model, spec.target_item, real.n_users, real.rows),
        "after": target_item_ranks(after_model, spec.target_item, real.n_users, real.rows),
    }
    groups = {"target": list(spec.target_users), "all": list(range(real.n_users))}
    values = {
        g: {ph: {str(K): _group_means(ranks[ph], groups[g], K) for K in Ks} for ph in PHASES}
        for g in GROUPS
    }
    meta = dict(metadata or {})
    meta.setdefault("victim_kind", victim_cfg.model_kind)
    meta.setdefault("victim_loss", victim_cfg.loss)
    meta.setdefault("seed", seed)
    meta.setdefault("n_fakes", len(fake_rows))
    meta.setdefault("target_item", spec.target_item)
    return MetricsReport(tuple(int(K) for K in Ks), values, meta)


@dataclass(frozen=True)
class ComparisonTable:
    headers: tuple[str, ...]
    rows: tuple[tuple, ...]


def compare(reports: list[MetricsReport]) -> ComparisonTable:
    """Side-by-side after-minus-before deltas, sorted by target HR@10 after attack."""
    if not reports:
        raise ContractError("no reports to compare")
    ks = reports[0].Ks
    for r in reports[1:]:
        if r.Ks != ks:
            raise ContractError("reports disagree on the K set")
        if set(r.values) != set(reports[0].values):
            raise ContractError("reports disagree on user groups")
    headers = ["label", "target_hr@10_after"]
    for g in GROUPS:
        for K in ks:
            for metric in METRICS:
                headers.append(f"delta_{g}_{metric}@{K}")
    sort_k = 10 if 10 in ks else ks[0]
    rows = []
    for i, r in enumerate(reports):
        label = r.metadata.get("label", f"run{i}")
        row = [label, r.get("target", "after", sort_k, "hr")]
        for g in GROUPS:
            for K in ks:
                for metric in METRICS:
                    row.append(r.get(g, "after", K, metric) - r.get(g, "before", K, metric))
        rows.append(tuple(row))
    rows.sort(key=lambda row: -row[1])
    return ComparisonTable(tuple(headers), tuple(rows))


def save_comparison(path, table: ComparisonTable, sep: str = "\t") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sep.join(table.headers) + "\n")
        for row in table.rows:
            fh.write(sep.join(str(x) if isinstance(x, str) else repr(x) for x in row) + "\n")


def save_report_kv(path, report: MetricsReport) -> None:
    """Flat ``group.phase.K.metric=value`` lines plus metadata echoes."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in sorted(report.values):
            for ph in PHASES:
                for K in report.Ks:
                    for metric in METRICS:
                        fh.write(f"{g}.{ph}.{K}.{metric}={report.get(g, ph, K, metric)!r}\n")
        for key in sorted(report.metadata):
            fh.write(f"meta.{key}={report.metadata[key]}\n")


def save_report_json(path, report: MetricsReport) -> None:
    payload = {"Ks": list(report.Ks), "values": report.values, "metadata": report.metadata}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_report_json(path) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return MetricsReport(tuple(payload["Ks"]), payload["values"], payload["metadata"])
