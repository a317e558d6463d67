"""Counter-based sub-seed derivation.

A sub-seed is the first 8 bytes (little endian) of
``blake2b(f"{master_seed}/{label}/{i0}/{i1}/...")``. Seeds depend only on
their own label and indices, so adding sweep points or trials never changes
the seeds of existing ones.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, label: str, *index) -> int:
    key = "/".join([str(int(master_seed)), label, *map(str, index)])
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def derive_rng(master_seed: int, label: str, *index) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label, *index))
