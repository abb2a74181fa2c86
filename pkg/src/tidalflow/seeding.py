"""Deterministic child-seed derivation.

Every pipeline stage draws its randomness from a seed derived from the
root seed plus a stable tag path, so stages can be re-run independently
and a changed tag never perturbs sibling stages.
"""

from __future__ import annotations

import hashlib


def derive_seed(root, *tags):
    """Hash (root, *tags) into a seed in [0, 2**63): stable across runs,
    platforms, and Python versions."""
    text = "|".join([str(int(root))] + [str(tag) for tag in tags])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)
