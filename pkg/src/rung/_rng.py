"""Seed management: every random draw flows from one root seed via named substreams."""

import hashlib

import numpy as np


def substream(seed, name):
    """Return a Generator for the named substream of a root seed.

    Distinct names yield statistically independent streams; the same
    (seed, name) pair always yields the same stream, so components
    (dataset, solver, attack, ...) can be varied independently without
    perturbing each other's draws.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    salt = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), salt]))
