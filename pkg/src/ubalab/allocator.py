"""Budget allocation over target users: exact knapsack DP plus baselines.

The optimization is a group knapsack: each target user picks one budget
level t in {0..H} with value Y[u][t], subject to the total budget N.
``allocate_dp`` solves it exactly with a user-by-budget table and
per-cell choice records for backtracking; ``allocate_bruteforce`` is the
independent enumeration oracle; uniform and random allocators are the
spread-the-budget baselines.

Value sums are accumulated left to right in user order everywhere, so
the DP and the oracle agree bit-for-bit on the objective.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import CapacityError, ContractError
from .seeding import rng_for

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import TargetSpec
    from .uplift import UpliftTable

_BRUTEFORCE_CAP = 10**7


@dataclass(frozen=True)
class Allocation:
    """One budget per target user (aligned with ``target_users``), total <= N."""

    target_users: tuple[int, ...]
    budgets: tuple[int, ...]
    N: int
    P_max: float | None = None

    def __post_init__(self):
        if len(self.target_users) != len(self.budgets):
            raise ContractError("budgets must align with target users")
        if any(t < 0 for t in self.budgets):
            raise ContractError("budgets must be non-negative")
        if sum(self.budgets) > self.N:
            raise ContractError("allocation exceeds the total budget")

    @property
    def total_spent(self) -> int:
        return sum(self.budgets)


def objective_value(table: "UpliftTable", budgets) -> float:
    """Left-to-right sum of Y[u][t_u] in user order."""
    total = 0.0
    for k, t in enumerate(budgets):
        total += float(table.Y[k][t])
    return total


def allocate_dp(table: "UpliftTable", N: int) -> Allocation:
    """Exact optimum of sum Y[u][t_u] subject to sum t_u <= N, t_u in {0..H}.

    Per-cell choice records recover the allocation; value ties prefer the
    smaller budget for the later-indexed user.
    """
    if N < 0:
        raise ContractError("N must be >= 0")
    n = len(table.target_users)
    H = table.H
    Y = [[float(v) for v in row] for row in table.Y]
    dp = [[0.0] * (N + 1) for _ in range(n + 1)]
    choice = [[0] * (N + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        yi = Y[i - 1]
        prev = dp[i - 1]
        row = dp[i]
        ch = choice[i]
        for j in range(N + 1):
            best = prev[j] + yi[0]
            best_k = 0
            for k in range(1, min(H, j) + 1):
                cand = prev[j - k] + yi[k]
                if cand > best:
                    best, best_k = cand, k
            row[j] = best
            ch[j] = best_k
    budgets = [0] * n
    j = N
    for i in range(n, 0, -1):
        k = choice[i][j]
        budgets[i - 1] = k
        j -= k
    return Allocation(tuple(table.target_users), tuple(budgets), N, P_max=dp[n][N])


def allocate_bruteforce(table: "UpliftTable", N: int) -> Allocation:
    """Exhaustive oracle with the same tie rule as :func:`allocate_dp`."""
    if N < 0:
        raise ContractError("N must be >= 0")
    n = len(table.target_users)
    H = table.H
    if (H + 1) ** n > _BRUTEFORCE_CAP:
        raise CapacityError(f"search space (H+1)^n = {(H + 1) ** n} exceeds {_BRUTEFORCE_CAP}")
    Y = [[float(v) for v in row] for row in table.Y]
    best_value = -float("inf")
    best_budgets = None
    for budgets in itertools.product(range(H + 1), repeat=n):
        if sum(budgets) > N:
            continue
        value = 0.0
        for k, t in enumerate(budgets):
            value += Y[k][t]
        key = budgets[::-1]
        if value > best_value or (value == best_value and key < best_budgets[::-1]):
            best_value = value
            best_budgets = budgets
    return Allocation(tuple(table.target_users), best_budgets, N, P_max=best_value)


def allocate_uniform(spec: "TargetSpec", N: int, H: int) -> Allocation:
    """Even split: floor(N / n) each (capped at H), remainder to earlier users."""
    if N < 0 or H < 0:
        raise ContractError("N and H must be >= 0")
    n = len(spec.target_users)
    base = min(H, N // n)
    budgets = [base] * n
    rem = N - base * n
    for k in range(n):
        if rem <= 0:
            break
        if budgets[k] < H:
            budgets[k] += 1
            rem -= 1
    return Allocation(tuple(spec.target_users), tuple(budgets), N)


def allocate_random(spec: "TargetSpec", N: int, H: int, seed: int) -> Allocation:
    """Spend the budget one unit at a time on uniformly random unsaturated users."""
    if N < 0 or H < 0:
        raise ContractError("N and H must be >= 0")
    n = len(spec.target_users)
    budgets = [0] * n
    rng = rng_for(seed, "allocate_random")
    spent = 0
    while spent < N:
        open_users = [k for k in range(n) if budgets[k] < H]
        if not open_users:
            break
        budgets[open_users[int(rng.integers(len(open_users)))]] += 1
        spent += 1
    return Allocation(tuple(spec.target_users), tuple(budgets), N)


def constant_allocation(spec: "TargetSpec", t: int, H: int | None = None) -> Allocation:
    """Every target user gets the same budget ``t`` (simulation probes)."""
    n = len(spec.target_users)
    if t < 0 or (H is not None and t > H):
        raise ContractError("constant budget out of range")
    return Allocation(tuple(spec.target_users), (t,) * n, N=t * n)


def save_allocation(path, alloc: Allocation, user_labels=None, sep: str = "\t") -> None:
    """Two-column text file ``user<sep>budget`` under a P_max header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# N={alloc.N} spent={alloc.total_spent} P_max={alloc.P_max!r}\n")
        for u, t in zip(alloc.target_users, alloc.budgets):
            label = user_labels[u] if user_labels is not None else str(u)
            fh.write(f"{label}{sep}{t}\n")


def load_allocation(path, sep: str = "\t") -> tuple[list[str], list[int], int, float | None]:
    """Read back (user labels, budgets, N, P_max) from :func:`save_allocation` output."""
    labels, budgets, n_total, p_max = [], [], 0, None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("P_max="):
                        val = tok[len("P_max="):]
                        p_max = None if val == "None" else float(val)
                    elif tok.startswith("N="):
                        n_total = int(tok[len("N="):])
                continue
            label, _, t = line.partition(sep)
            labels.append(label)
            budgets.append(int(t))
    return labels, budgets, n_total, p_max
