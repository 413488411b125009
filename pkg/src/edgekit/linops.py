"""Image/vector conversions and matrix-free linear operators.

Images are ``N_v x N_h`` arrays and are vectorized by stacking columns
(Fortran order), so ``vec(X)[i + j*N_v] == X[i, j]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised when operand sizes do not conform."""


@dataclass(frozen=True)
class ImageGrid:
    """An ``rows x cols`` pixel grid together with its intensities."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.rows, self.cols):
            raise DimensionError(
                f"data shape {data.shape} does not match grid {self.rows}x{self.cols}"
            )
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_array(cls, array) -> "ImageGrid":
        array = np.asarray(array, dtype=float)
        if array.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got ndim={array.ndim}")
        return cls(array.shape[0], array.shape[1], array)


def vec(image) -> np.ndarray:
    """Column-stack an image (``ImageGrid`` or 2-D array) into a vector."""
    data = image.data if isinstance(image, ImageGrid) else np.asarray(image, dtype=float)
    if data.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got ndim={data.ndim}")
    return data.ravel(order="F").copy()


def reshape(v, shape: tuple[int, int]) -> ImageGrid:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=float)
    rows, cols = shape
    if v.ndim != 1 or v.size != rows * cols:
        raise DimensionError(f"vector of length {v.size} cannot fill a {rows}x{cols} grid")
    return ImageGrid(rows, cols, v.reshape((rows, cols), order="F"))


class LinearOperator:
    """A linear map ``R^ncols -> R^nrows`` known only through products.

    Subclasses implement ``_apply`` and ``_apply_adjoint``; the public methods
    check dimensions.  Operators are immutable once built.
    """

    def __init__(self, nrows: int, ncols: int):
        self.nrows = int(nrows)
        self.ncols = int(ncols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.ncols,):
            raise DimensionError(
                f"{type(self).__name__}: expected input of length {self.ncols}, got {v.shape}"
            )
        return self._apply(v)

    def apply_adjoint(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nrows,):
            raise DimensionError(
                f"{type(self).__name__}: expected adjoint input of length {self.nrows}, got {u.shape}"
            )
        return self._apply_adjoint(u)

    def __matmul__(self, v):
        return self.apply(v)

    def _apply(self, v):  # pragma: no cover - abstract
        raise NotImplementedError

    def _apply_adjoint(self, u):  # pragma: no cover - abstract
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.nrows}x{self.ncols}>"


class FunctionOp(LinearOperator):
    """Operator defined by a pair of callables."""

    def __init__(self, nrows, ncols, apply: Callable, apply_adjoint: Callable):
        super().__init__(nrows, ncols)
        self._f = apply
        self._ft = apply_adjoint

    def _apply(self, v):
        return np.asarray(self._f(v), dtype=float)

    def _apply_adjoint(self, u):
        return np.asarray(self._ft(u), dtype=float)


class MatrixOp(LinearOperator):
    """Wraps an explicit dense array or scipy sparse matrix."""

    def __init__(self, matrix):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
            self._mt = matrix.T.tocsr()
        else:
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
            self._mt = matrix.T
        super().__init__(*matrix.shape)
        self.matrix = matrix

    def _apply(self, v):
        return np.asarray(self.matrix @ v).ravel()

    def _apply_adjoint(self, u):
        return np.asarray(self._mt @ u).ravel()


class IdentityOp(LinearOperator):
    def __init__(self, n: int, scale: float = 1.0):
        super().__init__(n, n)
        self.scale = float(scale)

    def _apply(self, v):
        return self.scale * v

    def _apply_adjoint(self, u):
        return self.scale * u


class GradientOp(LinearOperator):
    """Forward-difference discrete gradient ``L = [I (x) L_v ; L_h (x) I]``.

    The output holds the vertical differences ``vec(L_v X)`` first, followed
    by the horizontal differences ``vec(X L_h^T)``.
    """

    def __init__(self, shape: tuple[int, int]):
        nv, nh = (int(s) for s in shape)
        if nv < 2 or nh < 2:
            raise DimensionError(f"gradient needs a grid of at least 2x2, got {nv}x{nh}")
        self.grid = (nv, nh)
        self.n_vertical = (nv - 1) * nh
        self.n_horizontal = nv * (nh - 1)
        super().__init__(self.n_vertical + self.n_horizontal, nv * nh)

    def split(self, g) -> tuple[np.ndarray, np.ndarray]:
        """Return the vertical and horizontal difference images of ``g``."""
        nv, nh = self.grid
        g = np.asarray(g)
        if g.shape != (self.nrows,):
            raise DimensionError(f"expected gradient vector of length {self.nrows}, got {g.shape}")
        gv = g[: self.n_vertical].reshape((nv - 1, nh), order="F")
        gh = g[self.n_vertical:].reshape((nv, nh - 1), order="F")
        return gv, gh

    def as_matrix(self) -> sp.csr_matrix:
        """The same operator as a sparse matrix, built from Kronecker products."""
        nv, nh = self.grid

        def diff(k):
            return sp.diags([-np.ones(k - 1), np.ones(k - 1)], [0, 1], shape=(k - 1, k))

        top = sp.kron(sp.identity(nh), diff(nv))
        bottom = sp.kron(diff(nh), sp.identity(nv))
        return sp.vstack([top, bottom]).tocsr()

    def _apply(self, v):
        X = v.reshape(self.grid, order="F")
        dv = np.diff(X, axis=0)
        dh = np.diff(X, axis=1)
        return np.concatenate([dv.ravel(order="F"), dh.ravel(order="F")])

    def _apply_adjoint(self, u):
        gv, gh = self.split(u)
        # L_v^T G = [0; G] - [G; 0], and likewise along rows.
        out = np.zeros(self.grid)
        out[1:, :] += gv
        out[:-1, :] -= gv
        out[:, 1:] += gh
        out[:, :-1] -= gh
        return out.ravel(order="F")


class DiagOp(LinearOperator):
    def __init__(self, d):
        d = np.asarray(d, dtype=float).ravel()
        super().__init__(d.size, d.size)
        self.d = d

    def _apply(self, v):
        return self.d * v

    def _apply_adjoint(self, u):
        return self.d * u


class ComposedOp(LinearOperator):
    """``outer @ inner``."""

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if outer.ncols != inner.nrows:
            raise DimensionError(
                f"cannot compose {outer.shape} with {inner.shape}: inner dimensions differ"
            )
        super().__init__(outer.nrows, inner.ncols)
        self.outer = outer
        self.inner = inner

    def _apply(self, v):
        return self.outer.apply(self.inner.apply(v))

    def _apply_adjoint(self, u):
        return self.inner.apply_adjoint(self.outer.apply_adjoint(u))


class StackedOp(LinearOperator):
    """``[top; scale * bottom]``."""

    def __init__(self, top: LinearOperator, bottom: LinearOperator, scale: float = 1.0):
        if top.ncols != bottom.ncols:
            raise DimensionError(
                f"cannot stack {top.shape} over {bottom.shape}: column counts differ"
            )
        super().__init__(top.nrows + bottom.nrows, top.ncols)
        self.top = top
        self.bottom = bottom
        self.scale = float(scale)

    def _apply(self, v):
        return np.concatenate([self.top.apply(v), self.scale * self.bottom.apply(v)])

    def _apply_adjoint(self, u):
        m = self.top.nrows
        out = self.top.apply_adjoint(u[:m])
        if self.scale != 0.0:
            out = out + self.scale * self.bottom.apply_adjoint(u[m:])
        return out


def diag_op(d) -> DiagOp:
    return DiagOp(d)


def compose(outer: LinearOperator, inner: LinearOperator) -> ComposedOp:
    return ComposedOp(outer, inner)


def vstack(top: LinearOperator, bottom: LinearOperator, scale_bottom: float = 1.0) -> StackedOp:
    return StackedOp(top, bottom, scale_bottom)


def aslinearoperator(obj) -> LinearOperator:
    """Accept an operator, a dense array or a sparse matrix."""
    if isinstance(obj, LinearOperator):
        return obj
    return MatrixOp(obj)


def adjoint_mismatch(op: LinearOperator, rng=None, trials: int = 1) -> float:
    """Largest relative gap between ``<Av, u>`` and ``<v, A^T u>`` over random pairs."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(op.ncols)
        u = rng.standard_normal(op.nrows)
        Av = op.apply(v)
        Atu = op.apply_adjoint(u)
        lhs = float(Av @ u)
        rhs = float(v @ Atu)
        scale = np.linalg.norm(Av) * np.linalg.norm(u) + np.linalg.norm(v) * np.linalg.norm(Atu)
        if scale == 0.0:
            continue
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
