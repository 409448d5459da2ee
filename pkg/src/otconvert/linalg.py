"""Dense matrix helpers beyond what numpy ships directly.

Everything here is float64 and pure. Generic primitives (matmul,
transpose, reductions, elementwise ops, cholesky, eigh) are deliberately
left to numpy itself; this module adds the overflow-safe log-sum-exp and
the PSD matrix square root that the metric and solver code lean on.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

# Eigenvalues of a symmetrized PSD input may dip this far below zero from
# rounding; anything lower is treated as genuinely indefinite.
PSD_EIG_FLOOR = -1e-10


def logsumexp(a: np.ndarray, axis: int | None = None, keepdims: bool = False) -> np.ndarray:
    """log(sum(exp(a))) with max-subtraction so 1e300-scale inputs never overflow.

    Rows that are entirely -inf produce -inf, not NaN.
    """
    a = np.asarray(a, dtype=np.float64)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    if not keepdims and axis is not None:
        out = np.squeeze(out, axis=axis)
    elif not keepdims:
        out = out.reshape(())
    return out


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def matrix_sqrt_psd(a: np.ndarray, eig_floor: float = PSD_EIG_FLOOR) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    The input is symmetrized first; eigenvalues in [eig_floor, 0) are
    clamped to zero, anything below ``eig_floor`` raises ``DomainError``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"matrix_sqrt_psd needs a square matrix, got shape {a.shape}")
    sym = symmetrize(a)
    vals, vecs = np.linalg.eigh(sym)
    scale = max(abs(vals[-1]), 1.0)
    if vals[0] < eig_floor * scale:
        raise DomainError(
            f"matrix not PSD: smallest eigenvalue {vals[0]:.3e} below tolerance"
        )
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * np.sqrt(vals)) @ vecs.T)


def spd_inverse_sqrt(a: np.ndarray) -> np.ndarray:
    """Inverse square root of a symmetric positive-definite matrix."""
    a = np.asarray(a, dtype=np.float64)
    vals, vecs = np.linalg.eigh(symmetrize(a))
    if vals[0] <= 0.0:
        raise DomainError(
            f"matrix not positive definite: smallest eigenvalue {vals[0]:.3e}"
        )
    return symmetrize((vecs / np.sqrt(vals)) @ vecs.T)
