"""Hierarchical seed derivation.

All randomness in the package flows from one root seed. Child seeds are
derived from the root plus a path of labels (stage names, grid indices),
so independent stages and grid cells get collision-free, reproducible
streams regardless of execution order.
"""

import hashlib

import numpy as np


def derive_seed(root: int, *path) -> int:
    """Derive a 63-bit child seed from a root seed and a label path.

    Path elements may be ints or strings; they are folded into a SHA-256
    digest so that distinct paths give independent seeds.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


def rng_for(root: int, *path) -> np.random.Generator:
    """Generator seeded by :func:`derive_seed` over the same arguments."""
    return np.random.default_rng(derive_seed(root, *path))
