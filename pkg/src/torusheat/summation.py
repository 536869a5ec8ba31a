"""Order-independent floating point reduction.

All lattice sums in the package go through :func:`exact_sum`, which returns
the correctly rounded value of the sum of its inputs (Shewchuk's algorithm,
as implemented by :func:`math.fsum`). The result therefore does not depend on
how the terms were chunked or in which order the chunks arrive, which is what
makes parallel evaluation bitwise reproducible.
"""
from __future__ import annotations

import itertools
import math
from typing import Iterable

import numpy as np


def _flat(chunk) -> list[float]:
    return np.asarray(chunk, dtype=float).ravel().tolist()


def exact_sum(chunks: Iterable) -> float:
    """Correctly rounded sum of every element of every array in ``chunks``."""
    return math.fsum(itertools.chain.from_iterable(_flat(c) for c in chunks))


def exact_sum_complex(chunks: Iterable) -> complex:
    chunks = [np.asarray(c) for c in chunks]
    re = exact_sum(c.real for c in chunks)
    im = exact_sum(c.imag for c in chunks)
    return complex(re, im)


def pruned_sum(chunks: Iterable, threshold: float) -> tuple[float, float]:
    """Exact sum of the terms with ``|x| >= threshold``.

    Returns ``(sum, bound)`` where ``bound`` bounds the total magnitude of the
    dropped terms. Dropping tiny terms keeps :func:`math.fsum` fast; the
    dropped mass is reported so certified callers can add it to their tails.
    """
    kept = []
    n_dropped = 0
    for c in chunks:
        c = np.asarray(c, dtype=float).ravel()
        mask = np.abs(c) >= threshold
        n_dropped += int(c.size - np.count_nonzero(mask))
        kept.append(c[mask])
    return exact_sum(kept), n_dropped * threshold
