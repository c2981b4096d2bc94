"""Deterministic random-stream derivation.

Every stochastic step in the toolkit draws from a numpy Generator obtained by
splitting one 64-bit root seed with a counter-style key (domain tag plus
indices such as epoch and image index). Any part of a run -- one image's
corruption in one epoch, one evaluation pass -- can therefore be recomputed in
isolation, and whole runs reproduce bit-for-bit across machines.

The key layout below is part of the on-disk reproducibility contract; do not
renumber the domain tags.
"""

import numpy as np

# ---- stream domains ----
TRAIN_CORRUPT = 0  # key: (epoch, image_index)   fresh corruption each epoch
VAL_CORRUPT = 1    # key: (image_index,)         fixed across epochs
SHUFFLE = 2        # key: (epoch,)               batch order
EVAL = 3           # key: (image_index,)         test-time MCDropout passes
SYNTH = 4          # key: (image_index,)         synthetic dataset content
INIT = 5           # key: ()                     network weight init
DROPOUT = 6        # key: (epoch,)               train-time dropout masks
SPLIT = 7          # key: ()                     validation split permutation
PREVIEW = 8        # key: (item_index,)          CLI corruption previews


def stream(root_seed, domain, *key):
    """Return an independent Generator for (root_seed, domain, *key)."""
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    ss = np.random.SeedSequence(
        int(root_seed), spawn_key=(int(domain),) + tuple(int(k) for k in key)
    )
    return np.random.default_rng(ss)


def torch_seed(root_seed, domain, *key):
    """A 63-bit integer seed for torch.Generator, from the same key space."""
    return int(stream(root_seed, domain, *key).integers(0, 2**63 - 1))
