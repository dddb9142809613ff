"""Small dense real-matrix kernel.

Every rank decision in the package goes through :func:`rank` with a tolerance
relative to the largest singular value, and every generalized inverse is the
Moore-Penrose inverse from :func:`pinv`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError, SingularMatrixError

DEFAULT_TOL = 1e-10


def as_matrix(a, name="matrix"):
    """Coerce ``a`` to a finite 2-D float array (scalars become 1x1)."""
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {arr.ndim} dimensions")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    min_real: float

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))

    def contains(self, value, atol=1e-9) -> bool:
        return bool(np.min(np.abs(self.eigenvalues - value)) <= atol)


def _nonempty(a, name):
    a = as_matrix(a, name)
    if a.size == 0:
        raise InvalidInputError(f"{name} is empty")
    return a


def pinv(a, tol=DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose inverse; singular values below ``tol * sigma_max`` are dropped."""
    a = _nonempty(a, "A")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros(a.T.shape)
    keep = s > tol * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def rank(a, tol=DEFAULT_TOL) -> int:
    a = _nonempty(a, "A")
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def eig(a) -> Spectrum:
    a = _nonempty(a, "A")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"eig needs a square matrix, got {a.shape}")
    w = np.linalg.eigvals(a)
    return Spectrum(eigenvalues=w, min_real=float(np.min(w.real)))


def eig_pairs(a):
    """Eigenvalues and right eigenvectors (columns)."""
    a = _nonempty(a, "A")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"eig needs a square matrix, got {a.shape}")
    return np.linalg.eig(a)


def min_eig_sym(a, rtol=1e-10) -> float:
    """Smallest eigenvalue of the symmetric part, after checking symmetry."""
    a = _nonempty(a, "A")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > rtol * scale:
        raise InvalidInputError("matrix is not symmetric within tolerance")
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])


def max_eig_sym(a, rtol=1e-10) -> float:
    return -min_eig_sym(-as_matrix(a), rtol)


def solve(a, b) -> np.ndarray:
    """Solve ``A X = B`` for square nonsingular ``A``.

    Raises SingularMatrixError carrying the 2-norm condition estimate when
    ``A`` is numerically singular.
    """
    a = _nonempty(a, "A")
    b = as_matrix(b, "B")
    if b.shape[0] != a.shape[0] and b.shape == (1, a.shape[0]):
        b = b.T
    if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise DimensionError(f"cannot solve {a.shape} X = {b.shape}")
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularMatrixError(f"matrix is singular (cond={cond:.3g})", cond)
    return np.linalg.solve(a, b)


def sym(a) -> np.ndarray:
    """``A + A^T``."""
    return a + a.T


def block_diag(*blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
