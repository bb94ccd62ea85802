"""Small dense linear algebra used by the Wald statistics.

Matrices are plain 2-D float ``numpy`` arrays. Every routine checks the
infinity-norm condition number against ``SINGULAR_THRESHOLD`` and raises
rather than returning numbers computed from a numerically singular system.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

import numpy as np

from breakscan.errors import DimensionMismatch, SingularBlock, SingularMatrix

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

SINGULAR_THRESHOLD = 1e12


def as_mat(a: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    """Coerce to a finite 2-D float array (scalars and vectors become 1xN)."""
    m = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _require_square(a: NDArray[np.float64], name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")


def condition_estimate(a: ArrayLike) -> float:
    """Infinity-norm condition number ``||a|| * ||a^-1||``.

    Returns ``inf`` for exactly singular input and 1.0 for an empty matrix.
    """
    m = as_mat(a)
    _require_square(m, "a")
    if m.size == 0:
        return 1.0
    norm = np.abs(m).sum(axis=1).max()
    if norm == 0.0:
        return float("inf")
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        return float("inf")
    if not np.all(np.isfinite(inv)):
        return float("inf")
    return float(norm * np.abs(inv).sum(axis=1).max())


def batched_condition(a: NDArray[np.float64]) -> NDArray[np.float64]:
    """Vectorised :func:`condition_estimate` over a stack of shape (n, d, d).

    Falls back to a per-matrix loop when any member of the stack is exactly
    singular, so the result is always elementwise identical in definition.
    """
    norms = np.abs(a).sum(axis=2).max(axis=1)
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        return np.array([condition_estimate(m) for m in a])
    cond = norms * np.abs(inv).sum(axis=2).max(axis=1)
    cond[~np.isfinite(cond) | (norms == 0.0)] = np.inf
    return cond


def check_conditioned(
    a: NDArray[np.float64],
    name: str = "matrix",
    error: type[SingularMatrix] = SingularMatrix,
) -> float:
    cond = condition_estimate(a)
    if not cond <= SINGULAR_THRESHOLD:
        raise error(f"{name} is numerically singular (condition {cond:.3g})", cond)
    return cond


def solve(
    a: ArrayLike,
    b: ArrayLike,
    error: type[SingularMatrix] = SingularMatrix,
    name: str = "a",
) -> NDArray[Any]:
    """Solve ``a @ x = b`` after a conditioning check.

    ``b`` may be a vector or a matrix; the result has the same shape as ``b``.
    """
    m = as_mat(a, name)
    _require_square(m, name)
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[0] != m.shape[0]:
        raise DimensionMismatch(
            f"cannot solve {m.shape} system with right-hand side {rhs.shape}"
        )
    check_conditioned(m, name, error)
    return np.linalg.solve(m, rhs)


def partitioned_inverse(
    a11: ArrayLike, a12: ArrayLike, a21: ArrayLike, a22: ArrayLike
) -> NDArray[np.float64]:
    """Inverse of the block matrix ``[[a11, a12], [a21, a22]]``.

    Uses the Schur complement ``S = a22 - a21 a11^-1 a12``::

        [[a11^-1 + a11^-1 a12 S^-1 a21 a11^-1,  -a11^-1 a12 S^-1],
         [-S^-1 a21 a11^-1,                     S^-1           ]]

    The top-left block equals ``(a11 - a12 a22^-1 a21)^-1`` whenever ``a22``
    is invertible, but this form only needs ``a11`` and ``S`` to be.

    Raises
    ------
    SingularBlock
        If ``a11`` or ``S`` has condition estimate above 1e12.
    DimensionMismatch
        If the blocks are not conformable.
    """
    b11, b12 = as_mat(a11, "a11"), as_mat(a12, "a12")
    b21, b22 = as_mat(a21, "a21"), as_mat(a22, "a22")
    n1, n2 = b11.shape[0], b22.shape[0]
    _require_square(b11, "a11")
    _require_square(b22, "a22")
    if b12.shape != (n1, n2) or b21.shape != (n2, n1):
        raise DimensionMismatch(
            f"blocks not conformable: a11 {b11.shape}, a12 {b12.shape}, "
            f"a21 {b21.shape}, a22 {b22.shape}"
        )
    check_conditioned(b11, "a11", SingularBlock)
    a11_inv = np.linalg.inv(b11)
    schur = b22 - b21 @ a11_inv @ b12
    check_conditioned(schur, "Schur complement", SingularBlock)
    s_inv = np.linalg.inv(schur)

    upper_right = -a11_inv @ b12 @ s_inv
    lower_left = -s_inv @ b21 @ a11_inv
    upper_left = a11_inv - upper_right @ b21 @ a11_inv
    return np.block([[upper_left, upper_right], [lower_left, s_inv]])
