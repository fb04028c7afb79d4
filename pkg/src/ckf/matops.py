"""Dense matrix kernel: Kronecker products, vec/unvec and a block saddle-point solver.

Matrices are plain ``numpy`` arrays stored in numpy's default row-major
layout. ``vec`` always stacks *columns*, independent of storage order, so
element ``i + rows * j`` of ``vec(a)`` is ``a[i, j]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import DimensionError, SingularMatrixError

RCOND_MIN = 1e-12


def kron(a, b) -> np.ndarray:
    """Right Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return np.kron(a, b)


def vec(a) -> np.ndarray:
    """Stack the columns of ``a`` into one long vector."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a.copy()
    return a.reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != rows * cols:
        raise DimensionError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def lu_checked(mat: np.ndarray, name: str):
    """LU-factorize ``mat``; raise if the reciprocal condition estimate is tiny.

    Returns the ``(lu, piv)`` pair understood by :func:`scipy.linalg.lu_solve`.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {mat.shape}")
    if mat.shape[0] == 0:
        return mat.copy(), np.zeros(0, dtype=np.int32)
    if not np.all(np.isfinite(mat)):
        raise SingularMatrixError(f"{name} has non-finite entries", block=name)
    anorm = np.linalg.norm(mat, 1)
    if anorm == 0.0:
        raise SingularMatrixError(f"{name} is the zero matrix", block=name)
    lu, piv, info = lapack.dgetrf(mat)
    if info > 0:
        raise SingularMatrixError(f"{name} is exactly singular", block=name)
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if rcond < RCOND_MIN:
        raise SingularMatrixError(
            f"{name} is numerically singular (rcond={rcond:.3e})", block=name
        )
    return lu, piv


@dataclass(frozen=True)
class SaddleSystem:
    """Block system ``[[A, B'], [B, -C]] [l; lam] = [top; bottom]``."""

    a_block: np.ndarray
    b_block: np.ndarray
    c_block: np.ndarray
    rhs_top: np.ndarray
    rhs_bottom: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_block, dtype=float))
        n = a.shape[0]
        b = np.asarray(self.b_block, dtype=float).reshape(-1, n)
        q = b.shape[0]
        c = np.asarray(self.c_block, dtype=float).reshape(q, q)
        top = np.asarray(self.rhs_top, dtype=float).ravel()
        bottom = np.asarray(self.rhs_bottom, dtype=float).ravel()
        if a.shape != (n, n) or top.size != n or bottom.size != q:
            raise DimensionError("saddle system blocks do not conform")
        object.__setattr__(self, "a_block", a)
        object.__setattr__(self, "b_block", b)
        object.__setattr__(self, "c_block", c)
        object.__setattr__(self, "rhs_top", top)
        object.__setattr__(self, "rhs_bottom", bottom)

    @property
    def matrix(self) -> np.ndarray:
        """The assembled ``(n+q) x (n+q)`` matrix."""
        return np.block([[self.a_block, self.b_block.T], [self.b_block, -self.c_block]])

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_top, self.rhs_bottom])


def saddle_solve(sys: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
    """Solve a saddle-point system through its Schur complement.

    With ``J = -(C + B A^-1 B')`` the block inverse gives

        lam = J^-1 (bottom - B A^-1 top)
        l   = A^-1 (top - B' lam)

    Both ``A`` and ``J`` are LU-factorized; neither inverse is formed.

    Raises
    ------
    SingularMatrixError
        ``block`` is ``"a_block"`` or ``"schur"`` depending on which factor
        failed the conditioning check.
    """
    a_lu = lu_checked(sys.a_block, "a_block")
    q = sys.b_block.shape[0]
    a_inv_top = sla.lu_solve(a_lu, sys.rhs_top)
    if q == 0:
        return a_inv_top, np.zeros(0)
    a_inv_bt = sla.lu_solve(a_lu, sys.b_block.T)
    schur = -(sys.c_block + sys.b_block @ a_inv_bt)
    j_lu = lu_checked(schur, "schur")
    lam = sla.lu_solve(j_lu, sys.rhs_bottom - sys.b_block @ a_inv_top)
    l = a_inv_top - a_inv_bt @ lam
    return l, lam
