"""Small chains shared by the tests"""

import numpy as np

from markov_chain import build_chain, chain_from_matrix, StateSpace
from verify_suite import random_reversible_chain


def two_state(a=1.0, b=1.0):
    return build_chain([1, 2], [(1, 2, a), (2, 1, b)])


def path3(rate=1.0):
    return build_chain([1, 2, 3], [(1, 2, rate), (2, 1, rate), (2, 3, rate), (3, 2, rate)])


def ring(n, rate=1.0):
    entries = []
    for i in range(n):
        entries += [(i, (i + 1) % n, rate), ((i + 1) % n, i, rate)]
    return build_chain(list(range(n)), entries)


def one_way_cycle():
    return build_chain([1, 2, 3], [(1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0)])


def random_chain(n, seed, path=False):
    return random_reversible_chain(n, np.random.default_rng(seed), path=path)


def complete_chain(rates):
    rates = np.asarray(rates, dtype=float)
    return chain_from_matrix(StateSpace(tuple(range(rates.shape[0]))), rates)
