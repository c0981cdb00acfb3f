"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same semantics; the
compiled one is preferred when it is importable.
"""

import numpy as np


def _path_index(offsets):
    return np.repeat(np.arange(offsets.size - 1), np.diff(offsets))


def rect_sums(offsets, x, y, w, x_lo, x_hi, y_hi, mode, T, c):
    """Per-path sum of ``w * weight`` over atoms with ``x_lo < x <= x_hi``
    and ``y <= y_hi``.

    ``mode`` selects the weight: 0 gives 1, 1 gives ``T - max(c, y)`` and
    2 gives ``T - max(c, x, y)``.
    """
    n = offsets.size - 1
    mask = (x > x_lo) & (x <= x_hi) & (y <= y_hi)
    if mode == 0:
        contrib = w[mask]
    elif mode == 1:
        contrib = w[mask] * (T - np.maximum(c, y[mask]))
    else:
        contrib = w[mask] * (T - np.maximum(np.maximum(c, x[mask]), y[mask]))
    return np.bincount(_path_index(offsets)[mask], weights=contrib, minlength=n).astype(float)


def grid_sums(offsets, x, y, w, s_grid, t_grid):
    """Per-path cumulative atom sums ``sum w 1{x <= s_i, y <= t_j}`` on a
    lattice; returns an array of shape ``(n_paths, len(s_grid), len(t_grid))``."""
    n = offsets.size - 1
    ns, nt = s_grid.size, t_grid.size
    i = np.searchsorted(s_grid, x, side="left")
    j = np.searchsorted(t_grid, y, side="left")
    keep = (i < ns) & (j < nt)
    out = np.zeros((n, ns, nt))
    np.add.at(out, (_path_index(offsets)[keep], i[keep], j[keep]), w[keep])
    np.cumsum(out, axis=2, out=out)
    np.cumsum(out, axis=1, out=out)
    return out
