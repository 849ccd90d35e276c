"""
Problem model: quadratic loss plus separable (possibly nonconvex) regularizer.

The smooth part is ``scale * ||A x - b||^2`` with ``scale`` in {0.5, 1}; the
regularizer is ``lam * sum_i h(x_i)`` with ``h`` one of

* ``L1``:  ``|x|``
* ``EXP``: ``1 - exp(-theta |x|)``
* ``LOG``: ``log(1 + theta |x|) / log(1 + theta)``

The nonconvex families are split as ``h = h_plus - h_minus`` with
``h_plus = eta |x|`` convex and ``h_minus = eta |x| - h`` convex and C^1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
import scipy.sparse as sp

GRAM_THRESHOLD = 4096
LOSS_SCALES = (0.5, 1.0)


class Family(enum.IntEnum):
    L1 = 0
    EXP = 1
    LOG = 2

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown regularizer family {value!r}") from None


class LossMode(str, enum.Enum):
    GRAM = "gram"
    MATRIX_FREE = "matrix-free"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuadraticLoss:
    """
    ``scale * ||A x - b||^2`` with the offline data a coordinate solver needs.

    Parameters
    ----------
    A : ndarray or scipy.sparse matrix, shape (m, n)
    b : ndarray, shape (m,)
    scale : float
        0.5 for the LASSO convention, 1.0 for the unscaled squared residual.
    mode : LossMode, optional
        ``GRAM`` precomputes the dense ``A^T A``; ``MATRIX_FREE`` keeps ``A``
        in CSC form and works from a maintained residual. Defaults to ``GRAM``
        when ``n <= 4096``.
    """

    A: Any
    b: np.ndarray
    scale: float = 0.5
    mode: LossMode | None = None
    gram_diag: np.ndarray = field(init=False, repr=False)
    atb: np.ndarray = field(init=False, repr=False)
    btb: float = field(init=False, repr=False)
    gram: np.ndarray | None = field(init=False, repr=False)
    csc: tuple | None = field(init=False, repr=False)

    def __post_init__(self):
        A = self.A
        if sp.issparse(A):
            A = sp.csc_matrix(A, dtype=np.float64)
            A.sort_indices()
        else:
            A = _readonly(np.array(A, dtype=np.float64, order="C"))
            if A.ndim != 2:
                raise ValueError("A must be two-dimensional")
        b = _readonly(np.array(self.b, dtype=np.float64).ravel())
        m, n = A.shape
        if b.shape[0] != m:
            raise ValueError(f"b has length {b.shape[0]}, expected {m}")
        scale = float(self.scale)
        if scale not in LOSS_SCALES:
            raise ValueError(f"scale must be one of {LOSS_SCALES}, got {scale}")
        mode = self.mode
        if mode is None:
            mode = LossMode.GRAM if n <= GRAM_THRESHOLD else LossMode.MATRIX_FREE
        mode = LossMode(mode)

        if sp.issparse(A):
            diag = np.asarray(A.multiply(A).sum(axis=0)).ravel()
            atb = np.asarray(A.T @ b).ravel()
        else:
            diag = np.einsum("ij,ij->j", A, A)
            atb = A.T @ b
        gram = None
        csc = None
        if mode is LossMode.GRAM:
            G = A.T @ A
            gram = np.ascontiguousarray(G.toarray() if sp.issparse(G) else G)
            gram = _readonly(0.5 * (gram + gram.T))
        else:
            C = A if sp.issparse(A) else sp.csc_matrix(A)
            C.sort_indices()
            csc = tuple(
                _readonly(np.ascontiguousarray(v))
                for v in (C.indptr.astype(np.int64), C.indices.astype(np.int64),
                          C.data.astype(np.float64))
            )

        set_ = object.__setattr__
        set_(self, "A", A)
        set_(self, "b", b)
        set_(self, "scale", scale)
        set_(self, "mode", mode)
        set_(self, "gram_diag", _readonly(np.asarray(diag, dtype=np.float64)))
        set_(self, "atb", _readonly(np.asarray(atb, dtype=np.float64)))
        set_(self, "btb", float(b @ b))
        set_(self, "gram", gram)
        set_(self, "csc", csc)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @property
    def curvature(self) -> float:
        """Hessian multiplier: the Hessian is ``curvature * A^T A``."""
        return 2.0 * self.scale

    def with_mode(self, mode: LossMode) -> "QuadraticLoss":
        return QuadraticLoss(self.A, self.b, self.scale, LossMode(mode))

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x - self.b

    def value(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return self.scale * float(r @ r)


@dataclass(frozen=True)
class Regularizer:
    """Separable penalty ``lam * sum_i h(x_i)`` with its DC split."""

    family: Family
    lam: float
    theta: float = 0.0

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        if fam is not Family.L1 and not self.theta > 0:
            raise ValueError("theta must be positive for nonconvex families")
        if fam is Family.L1:
            object.__setattr__(self, "theta", 0.0)

    @classmethod
    def l1(cls, lam: float) -> "Regularizer":
        return cls(Family.L1, lam)

    @classmethod
    def exp(cls, lam: float, theta: float = 20.0) -> "Regularizer":
        return cls(Family.EXP, lam, theta)

    @classmethod
    def log(cls, lam: float, theta: float = 20.0) -> "Regularizer":
        return cls(Family.LOG, lam, theta)

    @property
    def eta(self) -> float:
        if self.family is Family.L1:
            return 0.0
        if self.family is Family.EXP:
            return self.theta
        return self.theta / np.log1p(self.theta)

    @property
    def threshold_weight(self) -> float:
        """Slope of the convex part ``h_plus``; 1 for L1."""
        return 1.0 if self.family is Family.L1 else self.eta

    def h(self, x):
        ax = np.abs(x)
        if self.family is Family.L1:
            return ax
        if self.family is Family.EXP:
            return -np.expm1(-self.theta * ax)
        return np.log1p(self.theta * ax) / np.log1p(self.theta)

    def h_plus(self, x):
        if self.family is Family.L1:
            return np.abs(x)
        return self.eta * np.abs(x)

    def h_minus(self, x):
        if self.family is Family.L1:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.eta * np.abs(x) - self.h(x)

    def penalty(self, x: np.ndarray) -> float:
        return self.lam * float(np.sum(self.h(x)))

    def with_lam(self, lam: float) -> "Regularizer":
        return replace(self, lam=lam)


def hminus_gradient(reg: Regularizer, xi):
    """
    Derivative of ``h_minus = eta |x| - h(x)``; odd, zero at the origin.

    Accepts scalars or arrays. Raises for the L1 family, which has no DC split.
    """
    if reg.family is Family.L1:
        raise ValueError("L1 regularizer has no DC split")
    xi = np.asarray(xi, dtype=np.float64)
    ax = np.abs(xi)
    s = np.sign(xi)
    if reg.family is Family.EXP:
        out = reg.eta * s * -np.expm1(-reg.theta * ax)
    else:
        out = s * (reg.eta - reg.theta / ((1.0 + reg.theta * ax) * np.log1p(reg.theta)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class CompositeProblem:
    """``F(x) = loss(x) + reg(x)`` over scalar blocks, ``N = n``."""

    loss: QuadraticLoss
    reg: Regularizer
    fstar: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.loss.shape[1]

    @property
    def m(self) -> int:
        return self.loss.shape[0]

    def with_fstar(self, fstar: float | None, **meta) -> "CompositeProblem":
        return replace(self, fstar=fstar, meta={**self.meta, **meta})

    def with_reg(self, reg: Regularizer) -> "CompositeProblem":
        return replace(self, reg=reg, fstar=None)

    def with_mode(self, mode: LossMode) -> "CompositeProblem":
        return replace(self, loss=self.loss.with_mode(mode))


def _check_dim(problem: CompositeProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != problem.n:
        raise ValueError(f"x has shape {x.shape}, expected ({problem.n},)")
    return x


def objective(problem: CompositeProblem, x) -> float:
    x = _check_dim(problem, x)
    return problem.loss.value(x) + problem.reg.penalty(x)


def smooth_gradient(problem: CompositeProblem, x) -> np.ndarray:
    """Gradient of the quadratic loss only (the ``-lam h_minus`` part is kept apart)."""
    x = _check_dim(problem, x)
    loss = problem.loss
    if loss.mode is LossMode.GRAM:
        return loss.curvature * (loss.gram @ x - loss.atb)
    return loss.curvature * np.asarray(loss.A.T @ loss.residual(x)).ravel()


def partial_gradient(problem: CompositeProblem, snapshot, i: int, residual=None) -> float:
    """
    One entry of the loss gradient at ``snapshot``.

    In matrix-free mode ``residual`` must hold ``A @ snapshot - b`` (the engine
    maintains it); the cost is then the nonzero count of column ``i``.
    """
    loss = problem.loss
    n = problem.n
    if not 0 <= i < n:
        raise IndexError(f"block index {i} out of range [0, {n})")
    if loss.mode is LossMode.GRAM:
        return loss.curvature * (float(loss.gram[i] @ snapshot) - loss.atb[i])
    if residual is None:
        raise ValueError("matrix-free partial gradient needs the maintained residual")
    indptr, indices, data = loss.csc
    lo, hi = indptr[i], indptr[i + 1]
    return loss.curvature * float(data[lo:hi] @ np.asarray(residual)[indices[lo:hi]])


def lipschitz_constant(problem: CompositeProblem, iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of the loss Hessian (dense eigensolve or power iteration)."""
    loss = problem.loss
    if loss.gram is not None:
        return loss.curvature * float(np.linalg.eigvalsh(loss.gram)[-1])
    v = np.random.default_rng(seed).standard_normal(problem.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = loss.A.T @ (loss.A @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            break
        v = w / lam
    # power iteration approaches from below
    return loss.curvature * lam * 1.01
