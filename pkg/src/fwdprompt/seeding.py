import hashlib

import numpy as np


def derive_seed(master, *labels):
    """Stable 63-bit seed from a master seed and a path of labels."""
    h = hashlib.sha256(str(int(master)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def rng_for(master, *labels):
    return np.random.default_rng(derive_seed(master, *labels))
