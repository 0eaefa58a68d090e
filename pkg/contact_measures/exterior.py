"""Pointwise exterior calculus on a single coordinate chart.

Forms are stored densely over strictly increasing index tuples. Wedge uses
the shuffle-sum (determinant) convention with no factorial normalization, so
the elementary form dx^I evaluated on v_1..v_k is the minor det(V[I, :]).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5


class ExteriorError(Exception):
    """Custom exception for exterior calculus errors."""
    pass


class ChartBoundaryError(ExteriorError):
    """Raised when a finite difference would step outside its chart."""
    pass


@lru_cache(maxsize=None)
def basis(dim, degree):
    """Strictly increasing index tuples of length `degree` in `range(dim)`."""
    return tuple(combinations(range(dim), degree))


@lru_cache(maxsize=None)
def basis_index(dim, degree):
    return {indices: pos for pos, indices in enumerate(basis(dim, degree))}


def permutation_sign(seq):
    """Sign of the permutation that sorts a sequence of distinct integers."""
    inversions = 0
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                inversions += 1
    return -1 if inversions % 2 else 1


@dataclass(frozen=True, eq=False)
class Chart:
    """A named coordinate chart with a box domain."""
    name: str
    axes: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != (len(self.axes),) or upper.shape != (len(self.axes),):
            raise ExteriorError(f"Chart {self.name}: box bounds do not match {len(self.axes)} axes")
        if np.any(upper <= lower):
            raise ExteriorError(f"Chart {self.name}: empty box")
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def box(cls, name, axes, half_width):
        half = np.full(len(axes), float(half_width))
        return cls(name, tuple(axes), -half, half)

    @property
    def dim(self):
        return len(self.axes)

    @property
    def scale(self):
        return float(np.max(self.upper - self.lower) / 2.0)

    def contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or not np.all(np.isfinite(x)):
            return False
        return bool(np.all(x >= self.lower + margin) and np.all(x <= self.upper - margin))

    def inflated(self, fraction):
        pad = fraction * (self.upper - self.lower) / 2.0
        return Chart(self.name, self.axes, self.lower - pad, self.upper + pad)

    def without_axis(self, index, name=None):
        keep = [i for i in range(self.dim) if i != index]
        return Chart(name or self.name, tuple(self.axes[i] for i in keep), self.lower[keep], self.upper[keep])

    def sample(self, rng, count, width=None):
        """Uniform points in the box, or in [-width, width] clipped to the box."""
        lower, upper = self.lower, self.upper
        if width is not None:
            lower = np.maximum(lower, -width)
            upper = np.minimum(upper, width)
        return rng.uniform(lower, upper, size=(count, self.dim))


@dataclass(frozen=True, eq=False)
class KForm:
    """An alternating k-form at one point, dense over increasing multi-indices."""
    dim: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 0 <= self.degree <= self.dim:
            raise ExteriorError(f"degree {self.degree} outside [0, {self.dim}]")
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if coeffs.size != comb(self.dim, self.degree):
            raise ExteriorError(
                f"{coeffs.size} coefficients given, expected C({self.dim},{self.degree}) = {comb(self.dim, self.degree)}")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zero(cls, dim, degree):
        return cls(dim, degree, np.zeros(comb(dim, degree)))

    @classmethod
    def scalar(cls, dim, value):
        return cls(dim, 0, np.array([float(value)]))

    @classmethod
    def covector(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values.size, 1, values)

    @classmethod
    def elementary(cls, dim, indices, value=1.0):
        """value * dx^{i1} ^ ... ^ dx^{ik}; indices need not be sorted."""
        indices = tuple(indices)
        if len(set(indices)) != len(indices):
            return cls.zero(dim, len(indices))
        out = np.zeros(comb(dim, len(indices)))
        out[basis_index(dim, len(indices))[tuple(sorted(indices))]] = permutation_sign(indices) * value
        return cls(dim, len(indices), out)

    @classmethod
    def from_matrix(cls, matrix):
        """2-form whose value on (e_i, e_j) is matrix[i, j]; the matrix is antisymmetrized."""
        matrix = np.asarray(matrix, dtype=float)
        dim = matrix.shape[0]
        skew = 0.5 * (matrix - matrix.T)
        return cls(dim, 2, np.array([skew[i, j] for i, j in basis(dim, 2)]))

    def to_matrix(self):
        if self.degree != 2:
            raise ExteriorError(f"to_matrix needs a 2-form, got degree {self.degree}")
        out = np.zeros((self.dim, self.dim))
        for (i, j), c in zip(basis(self.dim, 2), self.coeffs):
            out[i, j] = c
            out[j, i] = -c
        return out

    def vector(self):
        if self.degree != 1:
            raise ExteriorError(f"vector needs a 1-form, got degree {self.degree}")
        return self.coeffs.copy()

    def embed(self, dim, offset):
        """The same form on a larger chart whose axis i+offset is this chart's axis i."""
        if offset < 0 or offset + self.dim > dim:
            raise ExteriorError(f"cannot embed a {self.dim}-chart form at offset {offset} into dim {dim}")
        out = np.zeros(comb(dim, self.degree))
        index = basis_index(dim, self.degree)
        for indices, c in zip(basis(self.dim, self.degree), self.coeffs):
            out[index[tuple(i + offset for i in indices)]] = c
        return KForm(dim, self.degree, out)

    def __call__(self, *vectors):
        if len(vectors) != self.degree:
            raise ExteriorError(f"a {self.degree}-form takes {self.degree} vectors, got {len(vectors)}")
        if self.degree == 0:
            return float(self.coeffs[0])
        columns = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
        if columns.shape[0] != self.dim:
            raise ExteriorError(f"vectors of length {columns.shape[0]} on a {self.dim}-chart")
        total = 0.0
        for indices, c in zip(basis(self.dim, self.degree), self.coeffs):
            if c != 0.0:
                total += c * np.linalg.det(columns[list(indices), :])
        return float(total)

    def _check_compatible(self, other):
        if not isinstance(other, KForm) or other.dim != self.dim or other.degree != self.degree:
            raise ExteriorError("forms must share dimension and degree")

    def __add__(self, other):
        self._check_compatible(other)
        return KForm(self.dim, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_compatible(other)
        return KForm(self.dim, self.degree, self.coeffs - other.coeffs)

    def __neg__(self):
        return KForm(self.dim, self.degree, -self.coeffs)

    def __mul__(self, scalar):
        return KForm(self.dim, self.degree, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def norm(self):
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def __repr__(self):
        return f"KForm(dim={self.dim}, degree={self.degree}, coeffs={np.array2string(self.coeffs, precision=6)})"


def central_gradient(fun, x, h=DEFAULT_STEP):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        shift = np.zeros(x.size)
        shift[i] = h
        out[i] = (fun(x + shift) - fun(x - shift)) / (2.0 * h)
    return out


def numeric_jacobian(fun, x, h=DEFAULT_STEP):
    """Central-difference Jacobian; column i is d fun / d x_i."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        shift = np.zeros(x.size)
        shift[i] = h
        columns.append((np.asarray(fun(x + shift), dtype=float) - np.asarray(fun(x - shift), dtype=float)) / (2.0 * h))
    return np.column_stack(columns)


@dataclass(frozen=True)
class ScalarField:
    """A real function on a chart with an optional analytic gradient."""
    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "f"

    def __call__(self, x):
        return float(self.value(np.asarray(x, dtype=float)))

    def grad(self, x, h=DEFAULT_STEP):
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return central_gradient(self, x, h)

    @classmethod
    def constant(cls, c, dim, name=None):
        c = float(c)
        return cls(lambda x: c, lambda x: np.zeros(dim), name or f"{c:g}")

    def __mul__(self, other):
        if self.gradient is not None and other.gradient is not None:
            gradient = lambda x: self(x) * other.grad(x) + other(x) * self.grad(x)
        else:
            gradient = None
        return ScalarField(lambda x: self(x) * other(x), gradient, f"{self.name}*{other.name}")


@dataclass(frozen=True)
class VectorField:
    """A coordinate vector field with an optional analytic Jacobian."""
    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "X"

    def __call__(self, x):
        out = np.asarray(self.evaluate(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
        if out.shape != (self.dim,):
            raise ExteriorError(f"field {self.name} returned {out.size} components on a {self.dim}-chart")
        return out

    def jac(self, x, h=DEFAULT_STEP):
        if self.jacobian is not None:
            return np.asarray(self.jacobian(np.asarray(x, dtype=float)), dtype=float)
        return numeric_jacobian(self, x, h)

    def negated(self):
        jacobian = None
        if self.jacobian is not None:
            jacobian = lambda x: -self.jacobian(x)
        return VectorField(self.dim, lambda x: -self(x), jacobian, f"-{self.name}")


@dataclass(frozen=True)
class FormField:
    """A k-form field: x -> KForm, C^2 on its chart.

    `derivative`, when given, returns an array of shape (dim, n_coeffs) whose
    row i holds the partial derivatives of the coefficients along axis i; it
    overrides finite differences.
    """
    dim: int
    degree: int
    evaluate: Callable[[np.ndarray], KForm]
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    chart: Optional[Chart] = None
    name: str = "form"

    def __call__(self, x):
        w = self.evaluate(np.asarray(x, dtype=float))
        if w.dim != self.dim or w.degree != self.degree:
            raise ExteriorError(
                f"field {self.name} returned a degree-{w.degree} form on dim {w.dim}, "
                f"expected degree {self.degree} on dim {self.dim}")
        return w

    @classmethod
    def constant(cls, w, chart=None, name="constant"):
        zeros = np.zeros((w.dim, w.coeffs.size))
        return cls(w.dim, w.degree, lambda x: w, lambda x: zeros, chart, name)


def wedge(a, b):
    if a.dim != b.dim:
        raise ExteriorError(f"wedge of forms on dims {a.dim} and {b.dim}")
    degree = a.degree + b.degree
    if degree > a.dim:
        raise ExteriorError(f"wedge degree {degree} exceeds dimension {a.dim}")
    out = np.zeros(comb(a.dim, degree))
    index = basis_index(a.dim, degree)
    for left, ca in zip(basis(a.dim, a.degree), a.coeffs):
        if ca == 0.0:
            continue
        for right, cb in zip(basis(b.dim, b.degree), b.coeffs):
            if cb == 0.0 or set(left) & set(right):
                continue
            merged = left + right
            out[index[tuple(sorted(merged))]] += permutation_sign(merged) * ca * cb
    return KForm(a.dim, degree, out)


def wedge_power(w, n):
    """w ^ ... ^ w (n factors); the constant 1 for n = 0."""
    out = KForm.scalar(w.dim, 1.0)
    for _ in range(n):
        out = wedge(out, w)
    return out


def interior(v, w):
    v = np.asarray(v, dtype=float).reshape(-1)
    if w.degree == 0:
        raise ExteriorError("interior product of a 0-form")
    if v.shape != (w.dim,):
        raise ExteriorError(f"vector of length {v.size} on a {w.dim}-chart")
    out = np.zeros(comb(w.dim, w.degree - 1))
    index = basis_index(w.dim, w.degree - 1)
    for indices, c in zip(basis(w.dim, w.degree), w.coeffs):
        if c == 0.0:
            continue
        for pos, i in enumerate(indices):
            out[index[indices[:pos] + indices[pos + 1:]]] += (-1) ** pos * v[i] * c
    return KForm(w.dim, w.degree - 1, out)


def _difference_partials(field, x, h):
    rows = []
    for i in range(field.dim):
        shift = np.zeros(field.dim)
        shift[i] = h
        rows.append((field(x + shift).coeffs - field(x - shift).coeffs) / (2.0 * h))
    return np.vstack(rows)


def coefficient_partials(field, x, h=DEFAULT_STEP, richardson=False):
    """Array (dim, n_coeffs) of coefficient partial derivatives at x."""
    x = np.asarray(x, dtype=float)
    if field.derivative is not None:
        return np.asarray(field.derivative(x), dtype=float).reshape(field.dim, -1)
    if field.chart is not None and not field.chart.contains(x, margin=h):
        logger.error(f"Point {x} is within {h} of the boundary of chart {field.chart.name}")
        raise ChartBoundaryError(f"point too close to the boundary of chart {field.chart.name} for step {h}")
    coarse = _difference_partials(field, x, h)
    if not richardson:
        return coarse
    fine = _difference_partials(field, x, h / 2.0)
    return (4.0 * fine - coarse) / 3.0


def exterior_derivative(field, x, h=DEFAULT_STEP, richardson=False):
    k = field.degree
    if k + 1 > field.dim:
        raise ExteriorError(f"d of a degree-{k} form on a {field.dim}-chart")
    partials = coefficient_partials(field, x, h, richardson)
    index = basis_index(field.dim, k)
    out = np.zeros(comb(field.dim, k + 1))
    for pos_out, indices in enumerate(basis(field.dim, k + 1)):
        total = 0.0
        for l, i in enumerate(indices):
            total += (-1) ** l * partials[i, index[indices[:l] + indices[l + 1:]]]
        out[pos_out] = total
    return KForm(field.dim, k + 1, out)


def lie_derivative(X, F, x, h=DEFAULT_STEP):
    """L_X F at x by Cartan's formula i_X dF + d(i_X F)."""
    x = np.asarray(x, dtype=float)
    v = X(x)
    if F.degree == 0:
        return KForm.scalar(F.dim, float(v @ coefficient_partials(F, x, h)[:, 0]))
    if F.degree < F.dim:
        first = interior(v, exterior_derivative(F, x, h))
    else:
        first = KForm.zero(F.dim, F.degree)
    contracted = FormField(F.dim, F.degree - 1, lambda y: interior(X(y), F(y)), chart=F.chart,
                           name=f"i_{X.name} {F.name}")
    return first + exterior_derivative(contracted, x, h)


def pullback(mapping, w, x, h=DEFAULT_STEP, jacobian=None):
    """mapping* w at x, where w is the form at mapping(x).

    The Jacobian is taken from `jacobian` when supplied, otherwise from
    central differences of `mapping`.
    """
    x = np.asarray(x, dtype=float)
    J = np.asarray(jacobian if jacobian is not None else numeric_jacobian(mapping, x, h), dtype=float)
    if not np.all(np.isfinite(J)):
        logger.error(f"Non-finite Jacobian entries at {x}")
        raise ExteriorError("non-finite Jacobian entries")
    if J.ndim != 2 or J.shape[0] != w.dim:
        raise ExteriorError(f"Jacobian of shape {J.shape} cannot pull back a form on dim {w.dim}")
    source_dim = J.shape[1]
    k = w.degree
    if k > source_dim:
        raise ExteriorError(f"cannot pull back a {k}-form to a {source_dim}-dimensional chart")
    out = np.zeros(comb(source_dim, k))
    if k == 0:
        out[0] = w.coeffs[0]
        return KForm(source_dim, 0, out)
    target = basis(w.dim, k)
    for pos, indices in enumerate(basis(source_dim, k)):
        columns = J[:, list(indices)]
        total = 0.0
        for rows, c in zip(target, w.coeffs):
            if c != 0.0:
                total += c * np.linalg.det(columns[list(rows), :])
        out[pos] = total
    return KForm(source_dim, k, out)


def top_coefficient(w):
    if w.degree != w.dim:
        raise ExteriorError(f"top coefficient needs degree {w.dim}, got {w.degree}")
    return float(w.coeffs[0])
