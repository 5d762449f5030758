"""Collaborative-filtering models: matrix factorization and a light graph variant.

Both model kinds score a user-item pair as the dot product of learned
embeddings. The graph variant propagates the base embeddings over the
symmetric-normalized bipartite interaction graph and averages the layer
outputs (no feature transforms, no nonlinearity); zero propagation
layers reduce exactly to matrix factorization.

Training is mini-batch SGD over liked pairs with uniformly sampled
non-liked negatives, under a single-sequence contract: every random
draw comes from one seeded generator in a fixed order, so identical
(matrix, config, seed) inputs reproduce bit-identical models.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .dataset import InteractionMatrix
from .errors import ContractError, DivergenceError, SnapshotFormatError

MODEL_MAGIC = "UBALAB-MODEL v1"
_BATCH = 1024


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 32
    epochs: int = 50
    learning_rate: float = 0.05
    l2_reg: float = 1e-4
    negatives_per_positive: int = 4
    loss: str = "bce"  # bce | bpr
    model_kind: str = "mf"  # mf | lightgcn
    lightgcn_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim < 1 or self.epochs < 0 or self.negatives_per_positive < 1:
            raise ContractError("embedding_dim, epochs, negatives_per_positive out of range")
        if self.learning_rate <= 0 or self.l2_reg < 0:
            raise ContractError("learning_rate must be > 0 and l2_reg >= 0")
        if self.loss not in ("bce", "bpr"):
            raise ContractError(f"unknown loss {self.loss!r}")
        if self.model_kind not in ("mf", "lightgcn"):
            raise ContractError(f"unknown model kind {self.model_kind!r}")
        if self.model_kind == "lightgcn" and self.lightgcn_layers < 0:
            raise ContractError("lightgcn_layers must be >= 0")


class TrainedModel:
    """Frozen embeddings plus whatever is needed to rank items for a user."""

    def __init__(self, model_kind, user_emb, item_emb, training_rows, cfg,
                 matrix_fingerprint, user_prop=None, item_prop=None, epoch_losses=()):
        self.model_kind = model_kind
        self.user_emb = np.ascontiguousarray(user_emb, dtype=np.float64)
        self.item_emb = np.ascontiguousarray(item_emb, dtype=np.float64)
        self.user_prop = self.user_emb if user_prop is None else np.ascontiguousarray(user_prop)
        self.item_prop = self.item_emb if item_prop is None else np.ascontiguousarray(item_prop)
        for arr in (self.user_emb, self.item_emb, self.user_prop, self.item_prop):
            arr.setflags(write=False)
        self.training_rows = training_rows
        self.cfg = cfg
        self.matrix_fingerprint = matrix_fingerprint
        self.epoch_losses = tuple(float(x) for x in epoch_losses)

    @property
    def n_users(self):
        return self.user_emb.shape[0]

    @property
    def n_items(self):
        return self.item_emb.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.matrix_fingerprint.encode())
        h.update(json.dumps(asdict(self.cfg), sort_keys=True).encode())
        h.update(self.user_emb.tobytes())
        h.update(self.item_emb.tobytes())
        return h.hexdigest()

    def scores_for_user(self, u: int) -> np.ndarray:
        return self.item_prop @ self.user_prop[u]


def _init_embeddings(rng, n_users, n_items, d):
    """Zero-mean uniform with half-width 0.1/sqrt(d); users drawn before items."""
    a = 0.1 / np.sqrt(d)
    user = rng.uniform(-a, a, size=(n_users, d))
    item = rng.uniform(-a, a, size=(n_items, d))
    return user, item


def normalized_adjacency(m: InteractionMatrix):
    """Symmetric-normalized (users+items)-square adjacency D^-1/2 A D^-1/2."""
    from scipy.sparse import csr_matrix

    n = m.n_users + m.n_items
    rows, cols = [], []
    for u, r in enumerate(m.rows):
        rows.append(np.full(len(r), u, dtype=np.int64))
        cols.append(r + m.n_users)
    row = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    col = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    a = csr_matrix(
        (np.ones(2 * len(row)), (np.concatenate([row, col]), np.concatenate([col, row]))),
        shape=(n, n),
    )
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    from scipy.sparse import diags

    d = diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def propagate(user_emb, item_emb, adj_norm, layers):
    """Layer-averaged propagation: mean of A_hat^l E for l = 0..layers."""
    e = np.vstack([user_emb, item_emb])
    total = e.copy()
    cur = e
    for _ in range(layers):
        cur = adj_norm @ cur
        total += cur
    total /= layers + 1
    return total[: user_emb.shape[0]], total[user_emb.shape[0]:]


def _propagate_back(grad, adj_norm, layers):
    """Pull a gradient on the propagated embeddings back to the base ones."""
    total = grad.copy()
    cur = grad
    for _ in range(layers):
        cur = adj_norm @ cur
        total += cur
    total /= layers + 1
    return total


def batch_loss_and_grads(user_emb, item_emb, users, pos_items, neg_items, loss, l2_reg):
    """Summed loss over a batch of (user, positive, negatives) samples and its gradients.

    ``neg_items`` has shape (batch, n_negs); entries of -1 mark samples
    with no available negative and contribute nothing. Regularization is
    ``l2_reg * ||e||^2`` per embedding occurrence in the batch. The sum
    (not mean) semantics makes one batched update equivalent in scale to
    per-sample SGD. Returns (loss, d_user_emb, d_item_emb) with dense
    gradient arrays.
    """
    users = np.asarray(users)
    pos_items = np.asarray(pos_items)
    neg_items = np.atleast_2d(np.asarray(neg_items))
    b = len(users)
    eu = user_emb[users]
    ei = item_emb[pos_items]
    neg_mask = neg_items >= 0
    safe_negs = np.where(neg_mask, neg_items, 0)
    ej = item_emb[safe_negs]  # (b, n, d)
    s_pos = np.sum(eu * ei, axis=1)
    s_neg = np.einsum("bd,bnd->bn", eu, ej)

    du = np.zeros_like(user_emb)
    di = np.zeros_like(item_emb)
    if loss == "bce":
        # -log sigma(s_pos) - sum_j log(1 - sigma(s_neg_j))
        data_loss = np.logaddexp(0.0, -s_pos) + np.sum(
            np.where(neg_mask, np.logaddexp(0.0, s_neg), 0.0), axis=1
        )
        g_pos = _sigmoid(s_pos) - 1.0
        g_neg = np.where(neg_mask, _sigmoid(s_neg), 0.0)
    elif loss == "bpr":
        # -sum_j log sigma(s_pos - s_neg_j)
        diff = s_pos[:, None] - s_neg
        data_loss = np.sum(np.where(neg_mask, np.logaddexp(0.0, -diff), 0.0), axis=1)
        g_pair = np.where(neg_mask, _sigmoid(diff) - 1.0, 0.0)
        g_pos = np.sum(g_pair, axis=1)
        g_neg = -g_pair
    else:
        raise ContractError(f"unknown loss {loss!r}")

    reg = l2_reg * (
        np.sum(eu * eu, axis=1)
        + np.sum(ei * ei, axis=1)
        + np.sum(np.sum(ej * ej, axis=2) * neg_mask, axis=1)
    )
    total_loss = float(np.sum(data_loss + reg))

    grad_u = g_pos[:, None] * ei + np.einsum("bn,bnd->bd", g_neg, ej) + 2 * l2_reg * eu
    grad_i = g_pos[:, None] * eu + 2 * l2_reg * ei
    grad_j = g_neg[..., None] * eu[:, None, :] + 2 * l2_reg * ej * neg_mask[..., None]

    np.add.at(du, users, grad_u)
    np.add.at(di, pos_items, grad_i)
    np.add.at(di, safe_negs.ravel(), grad_j.reshape(-1, ej.shape[2]))
    return total_loss, du, di


def _sigmoid(x):
    from scipy.special import expit

    return expit(x)


def _sample_negatives(rng, users, liked, free_counts, n_negs):
    """Uniform negatives from each user's non-liked items; -1 when none exist."""
    n_items = liked.shape[1]
    n = len(users)
    flat = rng.integers(0, n_items, size=n * n_negs)
    user_rep = np.repeat(users, n_negs)
    blocked_rep = np.repeat(free_counts[users] == 0, n_negs)
    bad = np.flatnonzero(liked[user_rep, flat] & ~blocked_rep)
    while len(bad):
        redraw = rng.integers(0, n_items, size=len(bad))
        flat[bad] = redraw
        bad = bad[liked[user_rep[bad], redraw]]
    flat[blocked_rep] = -1
    return flat.reshape(n, n_negs)


def train(m: InteractionMatrix, cfg: TrainConfig) -> TrainedModel:
    """Fit embeddings to an interaction matrix by seeded mini-batch SGD."""
    if m.n_users == 0 or m.n_items == 0:
        raise ContractError("cannot train on an empty matrix")
    rng = np.random.default_rng(cfg.seed)
    user_emb, item_emb = _init_embeddings(rng, m.n_users, m.n_items, cfg.embedding_dim)

    users_all = np.concatenate(
        [np.full(len(r), u, dtype=np.int64) for u, r in enumerate(m.rows)]
    ) if m.n_interactions else np.zeros(0, dtype=np.int64)
    items_all = (
        np.concatenate(m.rows) if m.n_interactions else np.zeros(0, dtype=np.int64)
    )
    n_pos = len(users_all)

    liked = np.zeros((m.n_users, m.n_items), dtype=bool)
    for u, r in enumerate(m.rows):
        liked[u, r] = True
    free_counts = m.n_items - liked.sum(axis=1)

    is_gcn = cfg.model_kind == "lightgcn"
    adj = normalized_adjacency(m) if is_gcn else None

    epoch_losses = []
    for epoch in range(cfg.epochs):
        if n_pos == 0:
            break
        perm = rng.permutation(n_pos)
        negs_epoch = _sample_negatives(
            rng, users_all[perm], liked, free_counts, cfg.negatives_per_positive
        )
        loss_sum = 0.0
        for start in range(0, n_pos, _BATCH):
            sl = slice(start, min(start + _BATCH, n_pos))
            bu = users_all[perm[sl]]
            bi = items_all[perm[sl]]
            bj = negs_epoch[sl]
            if is_gcn:
                pu, pi = propagate(user_emb, item_emb, adj, cfg.lightgcn_layers)
                loss, dpu, dpi = batch_loss_and_grads(
                    pu, pi, bu, bi, bj, cfg.loss, 0.0
                )
                grad_full = _propagate_back(np.vstack([dpu, dpi]), adj, cfg.lightgcn_layers)
                du, di = grad_full[: m.n_users], grad_full[m.n_users:]
                # l2 acts on the base (ego) embeddings of the batch
                ok_negs = bj[bj >= 0].ravel()
                loss += float(
                    cfg.l2_reg
                    * (
                        np.sum(user_emb[bu] ** 2)
                        + np.sum(item_emb[bi] ** 2)
                        + np.sum(item_emb[ok_negs] ** 2)
                    )
                )
                np.add.at(du, bu, 2 * cfg.l2_reg * user_emb[bu])
                np.add.at(di, bi, 2 * cfg.l2_reg * item_emb[bi])
                np.add.at(di, ok_negs, 2 * cfg.l2_reg * item_emb[ok_negs])
            else:
                loss, du, di = batch_loss_and_grads(
                    user_emb, item_emb, bu, bi, bj, cfg.loss, cfg.l2_reg
                )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            user_emb -= cfg.learning_rate * du
            item_emb -= cfg.learning_rate * di
            loss_sum += loss
        epoch_losses.append(loss_sum / n_pos)

    user_prop = item_prop = None
    if is_gcn:
        user_prop, item_prop = propagate(user_emb, item_emb, adj, cfg.lightgcn_layers)
    return TrainedModel(
        cfg.model_kind,
        user_emb,
        item_emb,
        m.rows,
        cfg,
        m.fingerprint(),
        user_prop=user_prop,
        item_prop=item_prop,
        epoch_losses=epoch_losses,
    )


def predict(model: TrainedModel, u: int, i: int) -> float:
    """Dot product of the (propagated) user and item embeddings."""
    if not 0 <= u < model.n_users or not 0 <= i < model.n_items:
        raise IndexError(f"user {u} or item {i} out of range")
    return float(model.user_prop[u] @ model.item_prop[i])


def topk(model: TrainedModel, u: int, K: int, exclude=None) -> list[int]:
    """Top-K items for a user by score, ties broken by ascending item index.

    ``exclude`` defaults to the user's training likes; excluded items are
    never candidates. Returns fewer than K items only when candidates run
    out.
    """
    if K < 1:
        raise ContractError("K must be >= 1")
    if not 0 <= u < model.n_users:
        raise IndexError(f"user {u} out of range")
    scores = model.scores_for_user(u).copy()
    excl = model.training_rows[u] if exclude is None else np.asarray(sorted(set(exclude)), dtype=np.int64)
    n_candidates = model.n_items - len(excl)
    if n_candidates <= 0:
        return []
    scores[excl] = -np.inf
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[: min(K, n_candidates)]]


def rank_of_item(model: TrainedModel, u: int, item: int, exclude=None) -> int | None:
    """1-based rank of ``item`` among the user's candidates, or None if excluded.

    Uses the same ordering as :func:`topk` (score descending, index
    ascending) without sorting the whole candidate list.
    """
    excl = model.training_rows[u] if exclude is None else np.asarray(sorted(set(exclude)), dtype=np.int64)
    if len(excl) and bool(np.isin(item, excl)):
        return None
    scores = model.scores_for_user(u)
    s = scores[item]
    better = (scores > s) | ((scores == s) & (np.arange(model.n_items) < item))
    if len(excl):
        better[excl] = False
    return int(better.sum()) + 1


def save_model(path, model: TrainedModel) -> None:
    """Versioned binary snapshot: magic line, config echo, embedding arrays."""
    meta = {
        "model_kind": model.model_kind,
        "cfg": asdict(model.cfg),
        "matrix_fingerprint": model.matrix_fingerprint,
        "epoch_losses": list(model.epoch_losses),
        "training_rows": [[int(i) for i in r] for r in model.training_rows],
    }
    with open(path, "wb") as fh:
        fh.write((MODEL_MAGIC + "\n").encode())
        fh.write((json.dumps(meta, sort_keys=True) + "\n").encode())
        np.save(fh, model.user_emb)
        np.save(fh, model.item_emb)
        np.save(fh, model.user_prop)
        np.save(fh, model.item_prop)


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().rstrip("\n")
        if magic != MODEL_MAGIC:
            raise SnapshotFormatError(f"{path} is not a {MODEL_MAGIC} snapshot")
        meta = json.loads(fh.readline().decode())
        user_emb = np.load(fh)
        item_emb = np.load(fh)
        user_prop = np.load(fh)
        item_prop = np.load(fh)
    rows = tuple(np.asarray(r, dtype=np.int64) for r in meta["training_rows"])
    return TrainedModel(
        meta["model_kind"],
        user_emb,
        item_emb,
        rows,
        TrainConfig(**meta["cfg"]),
        meta["matrix_fingerprint"],
        user_prop=user_prop,
        item_prop=item_prop,
        epoch_losses=meta["epoch_losses"],
    )


def seeded_config(cfg: TrainConfig, seed: int) -> TrainConfig:
    """Copy of a config with only the seed replaced."""
    return replace(cfg, seed=int(seed))
