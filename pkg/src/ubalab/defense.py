"""Unsupervised fake-user detection and post-defense evaluation.

Two detectors operate on the stacked (real + fake) interaction matrix:

* ``pca_detect`` z-scores the item columns, extracts the top principal
  directions of the user-row covariance, and flags the users whose rows
  carry the least energy in that subspace -- mass-produced profiles sit
  away from the dominant genuine-taste directions.
* ``fap_detect`` runs damped two-sided belief propagation over the
  bipartite graph from a hinted suspicious item, and flags the users
  with the largest settled beliefs.

``filter_and_evaluate`` drops the flagged users (real casualties
included, as in practice), retrains the victim, and reports the same
metrics as the undefended evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cf
from .dataset import InteractionMatrix, TargetSpec, row_contains, with_extra_users
from .errors import ContractError
from .evaluator import GROUPS, PHASES, MetricsReport, _group_means, target_item_ranks

_PCA_ITEM_CAP = 2000


@dataclass(frozen=True)
class DetectionResult:
    """Flagged users over the stacked matrix, with scores and optional ground truth."""

    flagged: tuple[int, ...]
    scores: tuple[float, ...]
    detector: str
    params: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()
    confusion: tuple[int, int, int, int] | None = None  # (tp, fp, fn, tn)

    def recall(self) -> float | None:
        if self.confusion is None:
            return None
        tp, _, fn, _ = self.confusion
        return tp / (tp + fn) if tp + fn else 0.0


def _confusion(flagged, n_stacked, n_real):
    flagged_set = set(flagged)
    tp = sum(1 for u in range(n_real, n_stacked) if u in flagged_set)
    fp = len(flagged_set) - tp
    fn = (n_stacked - n_real) - tp
    tn = n_stacked - tp - fp - fn
    return tp, fp, fn, tn


def pca_detect(
    stacked: InteractionMatrix,
    n_flag: int,
    n_components: int = 3,
    n_real: int | None = None,
) -> DetectionResult:
    """Flag the ``n_flag`` users with the smallest energy in the top principal subspace.

    Item columns are z-scored (zero-variance columns dropped; items
    capped at the most popular ``_PCA_ITEM_CAP`` for tractability), the
    covariance of the user rows is eigen-decomposed, and each user is
    scored by the squared norm of the row's projection onto the leading
    ``n_components`` directions. Ties flag lower user indices first.
    """
    if not 0 <= n_flag < stacked.n_users:
        raise ContractError("n_flag must satisfy 0 <= n_flag < n_stacked_users")
    if n_components < 1:
        raise ContractError("n_components must be >= 1")
    warnings = []
    counts = stacked.item_counts()
    keep_items = np.lexsort((np.arange(stacked.n_items), -counts))[:_PCA_ITEM_CAP]
    keep_items = np.sort(keep_items)
    if len(keep_items) < stacked.n_items:
        warnings.append(f"items capped at {len(keep_items)} most popular")
    x = np.zeros((stacked.n_users, len(keep_items)))
    col_of = {int(i): c for c, i in enumerate(keep_items)}
    for u, r in enumerate(stacked.rows):
        cols = [col_of[int(i)] for i in r if int(i) in col_of]
        x[u, cols] = 1.0
    std = x.std(axis=0)
    nz = std > 0
    if not nz.any():
        # every user identical: no variance anywhere, scores tie at zero
        warnings.append("all item columns constant; scores degenerate to zero")
        scores = np.zeros(stacked.n_users)
    else:
        z = (x[:, nz] - x[:, nz].mean(axis=0)) / std[nz]
        cov = (z.T @ z) / max(1, stacked.n_users - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        tol = max(eigvals.max(), 0.0) * 1e-10
        rank = int((eigvals > tol).sum())
        k = n_components
        if rank < n_components:
            k = max(1, rank)
            warnings.append(f"covariance rank {rank} < {n_components}; using {k} components")
        top = eigvecs[:, -k:]
        proj = z @ top
        scores = np.sum(proj * proj, axis=1)
    order = np.argsort(scores, kind="stable")
    flagged = tuple(sorted(int(u) for u in order[:n_flag]))
    confusion = _confusion(flagged, stacked.n_users, n_real) if n_real is not None else None
    return DetectionResult(
        flagged,
        tuple(float(s) for s in scores),
        "pca",
        {"n_components": n_components, "used_components": k, "n_flag": n_flag},
        tuple(warnings),
        confusion,
    )


def fap_detect(
    stacked: InteractionMatrix,
    target_item_hint: int,
    n_flag: int,
    damping: float = 0.85,
    max_iters: int = 50,
    tol: float = 1e-6,
    n_real: int | None = None,
) -> DetectionResult:
    """Flag the ``n_flag`` users with the largest propagated spam beliefs.

    The hinted item starts (and stays pinned) at belief 1; beliefs flow
    user <- mean of liked items, item <- mean of likers, damped each hop.
    Non-convergence within ``max_iters`` is reported as a warning, not an
    error.
    """
    if not 0 <= n_flag < stacked.n_users:
        raise ContractError("n_flag must satisfy 0 <= n_flag < n_stacked_users")
    if not 0 < damping < 1:
        raise ContractError("damping must lie in (0, 1)")
    if not 0 <= target_item_hint < stacked.n_items:
        raise ContractError("target_item_hint out of range")
    m = stacked.to_csr().astype(np.float64)
    user_deg = np.asarray(m.sum(axis=1)).ravel()
    item_deg = np.asarray(m.sum(axis=0)).ravel()
    inv_user = np.where(user_deg > 0, 1.0 / np.maximum(user_deg, 1), 0.0)
    inv_item = np.where(item_deg > 0, 1.0 / np.maximum(item_deg, 1), 0.0)
    b_item = np.zeros(stacked.n_items)
    b_item[target_item_hint] = 1.0
    b_user = np.zeros(stacked.n_users)
    warnings = []
    converged = False
    deltas = []
    for _ in range(max_iters):
        new_user = damping * inv_user * (m @ b_item)
        new_item = damping * inv_item * (m.T @ new_user)
        new_item[target_item_hint] = 1.0
        delta = max(
            float(np.abs(new_user - b_user).max()),
            float(np.abs(new_item - b_item).max()),
        )
        deltas.append(delta)
        b_user, b_item = new_user, new_item
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.append(f"belief propagation did not converge within {max_iters} iterations")
    order = np.argsort(-b_user, kind="stable")
    flagged = tuple(sorted(int(u) for u in order[:n_flag]))
    confusion = _confusion(flagged, stacked.n_users, n_real) if n_real is not None else None
    return DetectionResult(
        flagged,
        tuple(float(s) for s in b_user),
        "fap",
        {
            "target_item_hint": target_item_hint,
            "damping": damping,
            "max_iters": max_iters,
            "tol": tol,
            "n_flag": n_flag,
        },
        tuple(warnings),
        confusion,
    )


def filter_and_evaluate(
    real: InteractionMatrix,
    fakes,
    detection: DetectionResult,
    spec: TargetSpec,
    victim_cfg: cf.TrainConfig,
    Ks=(10, 20),
    seed: int = 0,
    metadata: dict | None = None,
) -> MetricsReport:
    """Drop flagged users from the attacked matrix, retrain, and re-evaluate.

    The before phase matches the undefended evaluation (victim trained on
    the full real matrix). In the after phase, flagged users -- fake or
    real -- are excluded from training; real users filtered out this way
    cannot be recommended anything and score zero on every metric, but
    they stay in the metric denominators.
    """
    fake_rows = fakes.rows if hasattr(fakes, "rows") else tuple(fakes)
    stacked = with_extra_users(
        real, fake_rows, [f"fake::{k}" for k in range(len(fake_rows))]
    )
    flagged = set(detection.flagged)
    if flagged and max(flagged) >= stacked.n_users:
        raise ContractError("detection was not computed over this stacked matrix")
    keep = [u for u in range(stacked.n_users) if u not in flagged]
    filtered = InteractionMatrix(
        [stacked.rows[u] for u in keep],
        [stacked.user_ids[u] for u in keep],
        stacked.item_ids,
        n_items=stacked.n_items,
    )
    new_index = {u: k for k, u in enumerate(keep)}

    before_model = cf.train(real, cf.seeded_config(victim_cfg, seed))
    after_model = cf.train(filtered, cf.seeded_config(victim_cfg, seed))

    ranks_before = target_item_ranks(before_model, spec.target_item, real.n_users, real.rows)
    kept_real = [u for u in keep if u < real.n_users]
    sub_ranks = target_item_ranks(
        after_model,
        spec.target_item,
        len(kept_real),
        [real.rows[u] for u in kept_real],
    )
    ranks_after = np.zeros(real.n_users, dtype=np.int64)  # 0 = filtered out or excluded
    for u in kept_real:
        ranks_after[u] = sub_ranks[new_index[u]]

    groups = {"target": list(spec.target_users), "all": list(range(real.n_users))}
    ranks = {"before": ranks_before, "after": ranks_after}
    values = {
        g: {ph: {str(K): _group_means(ranks[ph], groups[g], K) for K in Ks} for ph in PHASES}
        for g in GROUPS
    }
    meta = dict(metadata or {})
    meta.setdefault("victim_kind", victim_cfg.model_kind)
    meta.setdefault("seed", seed)
    meta.setdefault("detector", detection.detector)
    meta.setdefault("n_flagged", len(detection.flagged))
    meta.setdefault("n_fakes", len(fake_rows))
    meta.setdefault("target_item", spec.target_item)
    return MetricsReport(tuple(int(K) for K in Ks), values, meta)


def save_detection(path, det: DetectionResult, n_real: int | None = None, sep: str = "\t") -> None:
    """Per-user lines: index, score, flagged bit, and is_fake when known."""
    flagged = set(det.flagged)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# detector={det.detector} n_flag={det.params.get('n_flag')}\n")
        for u, score in enumerate(det.scores):
            is_fake = "" if n_real is None else sep + str(int(u >= n_real))
            fh.write(f"{u}{sep}{score!r}{sep}{int(u in flagged)}{is_fake}\n")
