"""Deterministic block-parallel Monte Carlo driver.

Paths are grouped into fixed-size blocks. Block ``b`` draws its jumps from
``SeedSequence(seed, spawn_key=(b, 0))`` and its Gaussian field from
``SeedSequence(seed, spawn_key=(b, 1))``, so every block is a pure function
of ``(model, seed, b)``. Workers evaluate blocks in any order; results are
always reassembled in block order, which makes every output independent of
the worker count.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

import numpy as np

from .random_fields import simulate_batch

__all__ = ["DEFAULT_SEED", "block_size", "block_generators", "simulate_block", "map_blocks"]

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240917
JUMP_BLOCK = 1024
GAUSSIAN_BLOCK = 256  # a lattice field per path is large; keep blocks small

# State shared with forked workers. Set by map_blocks before the pool starts,
# so closures and unpicklable models reach the workers through fork.
_JOB = None


def block_size(model):
    return GAUSSIAN_BLOCK if model.gaussian.active else JUMP_BLOCK


def block_generators(seed, block):
    """Independent generators for the jump and Gaussian parts of one block."""
    jump, gauss = np.random.SeedSequence(int(seed), spawn_key=(int(block),)).spawn(2)
    return np.random.Generator(np.random.PCG64(jump)), np.random.Generator(np.random.PCG64(gauss))


def simulate_block(model, seed, block, n):
    """Jump batch (and Gaussian batch for a mixed model) for one block."""
    rng_jump, rng_gauss = block_generators(seed, block)
    first = block * block_size(model)
    batch = simulate_batch(model.measure, model.kappa, model.horizon, model.trunc_eps,
                           rng_jump, n, first_path_id=first)
    gauss = None
    if model.gaussian.active:
        s_grid, t_grid = model.gaussian_grid()
        gauss = model.gaussian.simulate(rng_gauss, n, s_grid, t_grid)
    return batch, gauss


def _run_block(block, n):
    model, seed, func = _JOB
    batch, gauss = simulate_block(model, seed, block, n)
    return func(model, batch, gauss)


def _blocks(model, n_paths):
    size = block_size(model)
    n_blocks = -(-n_paths // size)
    return [(b, min(size, n_paths - b * size)) for b in range(n_blocks)]


def map_blocks(model, n_paths, seed, func, workers=1):
    """Apply ``func(model, batch, gauss)`` to every block; results in block order.

    ``workers > 1`` uses a fork-based process pool (threads where fork is
    unavailable). ``func`` may be any callable, including a closure.
    """
    global _JOB
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("need at least one path")
    blocks = _blocks(model, n_paths)
    _JOB = (model, int(seed), func)
    try:
        workers = max(1, min(int(workers), len(blocks)))
        if workers == 1:
            return [_run_block(b, n) for b, n in blocks]
        ids, sizes = zip(*blocks)
        if "fork" in mp.get_all_start_methods():
            pool = ProcessPoolExecutor(workers, mp_context=mp.get_context("fork"))
        else:
            log.info("fork unavailable; running %d thread workers", workers)
            pool = ThreadPoolExecutor(workers)
        with pool:
            return list(pool.map(_run_block, ids, sizes))
    finally:
        _JOB = None


def collect(model, n_paths, seed, func, workers=1):
    """:func:`map_blocks` with array results concatenated along the path axis."""
    parts = map_blocks(model, n_paths, seed, func, workers)
    return np.concatenate(parts, axis=0)
