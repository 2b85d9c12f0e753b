"""Parameter initializers."""

from __future__ import annotations

import numpy as np


def orthogonal(
    rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0
) -> np.ndarray:
    """Scaled orthogonal matrix (orthonormal rows or columns, whichever fit)."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the QR sign ambiguity
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]
