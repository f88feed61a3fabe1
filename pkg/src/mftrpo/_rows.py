"""Fast categorical draws from many small probability rows."""

from __future__ import annotations

import numpy as np


class RowSampler:
    """Inverse-CDF sampler over the last axis of ``probs``.

    Leading axes are flattened, so callers pass flat row indices. Rows are
    compressed to their support (padded to the widest row) and stored
    column-major, which turns a draw into ``width - 1`` vectorised compares.
    """

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=float)
        rows = probs.reshape(-1, probs.shape[-1])
        nz = rows > 0
        width = max(1, int(nz.sum(axis=1).max()))
        # stable sort puts nonzero columns first, in index order
        order = np.argsort(~nz, axis=1, kind="stable")[:, :width]
        weights = np.where(np.take_along_axis(nz, order, axis=1),
                           np.take_along_axis(rows, order, axis=1), 0.0)
        cdf = np.cumsum(weights, axis=1)
        cdf /= cdf[:, -1:]
        self.n_rows = rows.shape[0]
        self.width = width
        self._cdf_t = np.ascontiguousarray(cdf.T)
        self._support = np.ascontiguousarray(order.T).reshape(-1)

    def draw(self, flat_rows, u) -> np.ndarray:
        flat_rows = np.asarray(flat_rows, dtype=np.intp)
        pick = np.zeros(flat_rows.shape[0], dtype=np.intp)
        for j in range(self.width - 1):
            pick += self._cdf_t[j].take(flat_rows) < u
        return self._support.take(pick * self.n_rows + flat_rows)
