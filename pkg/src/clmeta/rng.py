"""Deterministic seed fan-out.

Every random stream in the package derives from one root seed plus a
stream name, so adding or reordering consumers in one module never
perturbs the streams of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def sub_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    """Seed sequence for the named stream under the given root seed."""
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=(_name_key(name),))


def sub_rng(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the named stream under the given root seed."""
    return np.random.default_rng(sub_seed(root_seed, name))
