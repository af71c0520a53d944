"""Seed fan-out: one global seed, independent labelled streams."""

import hashlib

import numpy as np


def derive_seed(seed, *labels):
    """Stable 64-bit child seed for ``(seed, *labels)``.

    Streams are keyed by label, so adding a new consumer never shifts the
    numbers drawn by existing ones.
    """
    key = repr((int(seed),) + tuple(labels)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def rng_for(seed, *labels):
    return np.random.default_rng(derive_seed(seed, *labels))
