"""Sampled matrix-valued functions on [0, 1] and on the lower triangle.

Everything downstream works with two containers defined here:

* :class:`MatrixField`, a matrix-valued function of one spatial variable,
  stored as samples on a uniform grid with spline interpolation,
* :class:`TriangularKernel`, a matrix-valued function of two spatial
  variables supported on ``0 <= zeta <= z <= 1``.

The module also provides composite quadrature weights with end
corrections, a small whitelist-based parser for coefficient expressions,
and the Volterra-type composition and application helpers used by the
transformation algebra.
"""

import ast
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, make_interp_spline

from .errors import ConfigurationError

__all__ = [
    "uniform_grid",
    "composite_weights",
    "parse_expression",
    "MatrixField",
    "TriangularKernel",
    "kernel_compose",
    "volterra_lower_apply",
    "volterra_upper_apply",
]


def uniform_grid(num_points):
    """Return ``num_points`` equally spaced nodes covering [0, 1].

    Parameters
    ----------
    num_points : int
        Number of nodes, at least 2.

    Returns
    -------
    numpy.ndarray
        Shape ``(num_points,)``, from 0.0 to 1.0 inclusive.
    """
    if num_points < 2:
        raise ConfigurationError("a grid needs at least two nodes")
    return np.linspace(0.0, 1.0, int(num_points))


# Gregory end corrections: the first k trapezoid weights are replaced by
# these rows (mirrored at the far end) to lift the accuracy order.
_END_CORRECTIONS = {
    2: np.array([0.5]),
    3: np.array([5.0 / 12.0, 13.0 / 12.0]),
    4: np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0]),
}


def composite_weights(num_points, spacing=None, order=4):
    """Quadrature weights for equally spaced samples.

    Trapezoid weights with Gregory end corrections, so that
    ``weights @ f(nodes)`` integrates smooth ``f`` with the requested
    accuracy order.  When the node count is too small for the corrected
    ends not to overlap, the order degrades gracefully.

    Parameters
    ----------
    num_points : int
        Number of nodes.
    spacing : float, optional
        Node distance.  Defaults to ``1 / (num_points - 1)``.
    order : int, optional
        Target accuracy order, one of 2, 3, 4 (default 4).

    Returns
    -------
    numpy.ndarray
        Shape ``(num_points,)``.
    """
    n = int(num_points)
    if n < 1:
        raise ConfigurationError("quadrature needs at least one node")
    if n == 1:
        return np.zeros(1)
    if spacing is None:
        spacing = 1.0 / (n - 1)
    if order not in _END_CORRECTIONS:
        raise ConfigurationError(f"unsupported quadrature order {order!r}")
    eff = order
    while 2 * len(_END_CORRECTIONS[eff]) > n:
        eff -= 1
    head = _END_CORRECTIONS[eff]
    w = np.ones(n)
    w[: len(head)] = head
    w[n - len(head):] = head[::-1]
    return w * spacing


_EXPRESSION_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "arctan": np.arctan,
    "abs": np.abs,
}

_EXPRESSION_CONSTANTS = {"pi": np.pi, "e": np.e}

_EXPRESSION_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Constant,
    ast.Name,
    ast.Call,
    ast.Load,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def parse_expression(text):
    """Compile a scalar coefficient expression into a vectorized callable.

    The expression may use the variable ``z``, the constants ``pi`` and
    ``e``, the functions sin, cos, tan, exp, log, sqrt, sinh, cosh, tanh,
    arctan and abs, the arithmetic operators, and ``^`` as a synonym for
    exponentiation.  Anything else is rejected.

    Parameters
    ----------
    text : str
        Expression source, for example ``"1 + z/2"`` or ``"exp(-z^2)"``.

    Returns
    -------
    callable
        Maps an array of positions to an array of values of equal shape.
    """
    source = str(text).replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _EXPRESSION_NODES):
            raise ConfigurationError(
                f"expression {text!r} uses disallowed syntax ({type(node).__name__})"
            )
        if isinstance(node, ast.Call):
            if (
                not isinstance(node.func, ast.Name)
                or node.func.id not in _EXPRESSION_FUNCS
                or node.keywords
            ):
                raise ConfigurationError(
                    f"expression {text!r} calls an unsupported function"
                )
        if isinstance(node, ast.Name):
            if node.id != "z" and node.id not in _EXPRESSION_CONSTANTS and node.id not in _EXPRESSION_FUNCS:
                raise ConfigurationError(
                    f"expression {text!r} references unknown name {node.id!r}"
                )
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"expression {text!r} contains a non-numeric literal")

    code = compile(tree, "<field expression>", "eval")

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        env = dict(_EXPRESSION_FUNCS)
        env.update(_EXPRESSION_CONSTANTS)
        env["z"] = z
        out = np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float)
        if out.shape != z.shape:
            out = np.broadcast_to(out, z.shape).copy()
        return out

    return evaluate


def _build_interpolator(grid, samples):
    if len(grid) >= 4:
        return CubicSpline(grid, samples, axis=0)
    return make_interp_spline(grid, samples, k=len(grid) - 1, axis=0)


@dataclass
class MatrixField:
    """Matrix-valued function of one variable, sampled on a uniform grid.

    Attributes
    ----------
    grid : numpy.ndarray
        Node positions, shape ``(N,)``.
    samples : numpy.ndarray
        Matrix values at the nodes, shape ``(N, rows, cols)``.
    """

    grid: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.grid.ndim != 1:
            raise ConfigurationError("field grid must be one dimensional")
        if self.samples.ndim != 3 or self.samples.shape[0] != self.grid.size:
            raise ConfigurationError(
                "field samples must have shape (num_nodes, rows, cols)"
            )

    @classmethod
    def from_callable(cls, fn, num_points, shape=None):
        """Sample ``fn`` on a uniform grid.

        ``fn`` receives one position at a time and must return an array
        of a fixed matrix shape (scalars are promoted to 1 x 1).
        """
        grid = uniform_grid(num_points)
        first = np.atleast_2d(np.asarray(fn(grid[0]), dtype=float))
        if shape is not None and first.shape != tuple(shape):
            raise ConfigurationError(
                f"callable produced shape {first.shape}, expected {tuple(shape)}"
            )
        samples = np.empty((grid.size,) + first.shape)
        samples[0] = first
        for i in range(1, grid.size):
            samples[i] = np.atleast_2d(np.asarray(fn(grid[i]), dtype=float))
        return cls(grid, samples)

    @classmethod
    def from_constant(cls, matrix, num_points):
        """Constant field equal to ``matrix`` everywhere."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        grid = uniform_grid(num_points)
        return cls(grid, np.repeat(matrix[None, :, :], grid.size, axis=0))

    @classmethod
    def from_expressions(cls, entries, num_points):
        """Build a field from a nested list of expression strings or numbers."""
        rows = len(entries)
        cols = len(entries[0])
        grid = uniform_grid(num_points)
        samples = np.empty((grid.size, rows, cols))
        for i, row in enumerate(entries):
            if len(row) != cols:
                raise ConfigurationError("ragged entry table for matrix field")
            for j, cell in enumerate(row):
                if isinstance(cell, str):
                    samples[:, i, j] = parse_expression(cell)(grid)
                else:
                    samples[:, i, j] = float(cell)
        return cls(grid, samples)

    @property
    def shape(self):
        """Matrix shape ``(rows, cols)``."""
        return self.samples.shape[1:]

    @property
    def num_points(self):
        return self.grid.size

    @property
    def spacing(self):
        return self.grid[1] - self.grid[0]

    def _interpolator(self):
        sp = self.__dict__.get("_spline")
        if sp is None:
            sp = _build_interpolator(self.grid, self.samples)
            self.__dict__["_spline"] = sp
        return sp

    def __call__(self, z):
        """Interpolate at ``z`` (scalar or array)."""
        return self._interpolator()(z)

    def derivative(self, order=1):
        """Field of the ``order``-th derivative, sampled on the same grid."""
        der = self._interpolator().derivative(order)
        return MatrixField(self.grid, der(self.grid))

    def cumulative_integral(self):
        """Field of the running integral from the left endpoint."""
        anti = self._interpolator().antiderivative()
        vals = anti(self.grid) - anti(self.grid[0])
        return MatrixField(self.grid, vals)

    def integrate(self):
        """Integral over [0, 1] as a dense matrix."""
        w = composite_weights(self.num_points, self.spacing)
        return np.einsum("n,nij->ij", w, self.samples)

    def resample(self, num_points):
        """Re-sample onto a uniform grid with ``num_points`` nodes."""
        grid = uniform_grid(num_points)
        return MatrixField(grid, self._interpolator()(grid))

    def entry(self, i, j):
        """Samples of a single entry, shape ``(N,)``."""
        return self.samples[:, i, j]

    def transpose(self):
        return MatrixField(self.grid, np.swapaxes(self.samples, 1, 2))

    def _check_compatible(self, other):
        if self.grid.size != other.grid.size or not np.allclose(self.grid, other.grid):
            raise ConfigurationError("fields live on different grids")

    def __matmul__(self, other):
        if isinstance(other, MatrixField):
            self._check_compatible(other)
            return MatrixField(
                self.grid, np.einsum("nij,njk->nik", self.samples, other.samples)
            )
        other = np.asarray(other, dtype=float)
        if other.ndim != 2:
            return NotImplemented
        return MatrixField(self.grid, self.samples @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        if other.ndim != 2:
            return NotImplemented
        return MatrixField(self.grid, other @ self.samples)

    def __add__(self, other):
        if isinstance(other, MatrixField):
            self._check_compatible(other)
            return MatrixField(self.grid, self.samples + other.samples)
        return MatrixField(self.grid, self.samples + np.asarray(other, dtype=float))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, MatrixField):
            self._check_compatible(other)
            return MatrixField(self.grid, self.samples - other.samples)
        return MatrixField(self.grid, self.samples - np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return MatrixField(self.grid, np.asarray(other, dtype=float) - self.samples)

    def __neg__(self):
        return MatrixField(self.grid, -self.samples)

    def __mul__(self, factor):
        return MatrixField(self.grid, self.samples * float(factor))

    __rmul__ = __mul__


@dataclass
class TriangularKernel:
    """Matrix kernel supported on the triangle ``0 <= zeta <= z <= 1``.

    Attributes
    ----------
    grid : numpy.ndarray
        Shared node positions for both variables, shape ``(N,)``.
    values : numpy.ndarray
        Samples indexed ``[i_z, i_zeta, row, col]`` with shape
        ``(N, N, rows, cols)``.  Entries with ``i_zeta > i_z`` lie outside
        the support and are kept at zero.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n = self.grid.size
        if self.values.ndim != 4 or self.values.shape[:2] != (n, n):
            raise ConfigurationError(
                "kernel values must have shape (num_nodes, num_nodes, rows, cols)"
            )

    @classmethod
    def zeros(cls, num_points, shape):
        grid = uniform_grid(num_points)
        return cls(grid, np.zeros((grid.size, grid.size) + tuple(shape)))

    @property
    def shape(self):
        return self.values.shape[2:]

    @property
    def num_points(self):
        return self.grid.size

    @property
    def spacing(self):
        return self.grid[1] - self.grid[0]

    def diagonal(self):
        """Samples along ``zeta == z``, shape ``(N, rows, cols)``."""
        return np.einsum("iiab->iab", self.values).copy()

    def end_row(self):
        """Trace ``K(1, zeta)`` as a :class:`MatrixField` in ``zeta``."""
        return MatrixField(self.grid, self.values[-1].copy())

    def start_column(self):
        """Trace ``K(z, 0)`` as a :class:`MatrixField` in ``z``."""
        return MatrixField(self.grid, self.values[:, 0].copy())

    def end_row_z_derivative(self):
        """First-variable derivative along the far edge, ``d/dz K(z, zeta)``
        evaluated at ``z = 1``, as a field in ``zeta``.

        One-sided difference stencils are used column by column; near the
        corner, where the support leaves no room for a stencil, values are
        extrapolated from neighbouring columns.
        """
        return MatrixField(self.grid, _edge_derivative(self.values, self.spacing, "end"))

    def start_column_zeta_derivative(self):
        """Second-variable derivative along the near edge,
        ``d/dzeta K(z, zeta)`` evaluated at ``zeta = 0``, as a field in ``z``."""
        return MatrixField(self.grid, _edge_derivative(self.values, self.spacing, "start"))

    def flip_transpose(self):
        """Reflected kernel ``G(z, zeta) = K(1 - zeta, 1 - z)^T``.

        The reflection maps the triangle onto itself, so the result is
        again a :class:`TriangularKernel` on the same grid.
        """
        flipped = np.transpose(self.values, (1, 0, 3, 2))[::-1, ::-1]
        return TriangularKernel(self.grid, np.ascontiguousarray(flipped))

    def resample(self, num_points):
        """Interpolate onto a finer or coarser uniform grid.

        Bilinear interpolation inside the support; the region above the
        diagonal stays zero.
        """
        grid = uniform_grid(num_points)
        out = np.zeros((grid.size, grid.size) + self.shape)
        for i, z in enumerate(grid):
            for j in range(i + 1):
                out[i, j] = self.evaluate(z, grid[j])
        return TriangularKernel(grid, out)

    def evaluate(self, z, zeta):
        """Pointwise value by interpolation, zero outside the support."""
        if zeta > z:
            return np.zeros(self.shape)
        n = self.num_points
        h = self.spacing
        i = min(int(z / h), n - 2)
        j = min(int(zeta / h), n - 2)
        s = (z - self.grid[i]) / h
        t = (zeta - self.grid[j]) / h
        v = self.values
        if j + 1 <= i:
            f00, f10 = v[i, j], v[i + 1, j]
            f01, f11 = v[i, j + 1], v[i + 1, j + 1]
            return (
                (1 - s) * (1 - t) * f00
                + s * (1 - t) * f10
                + (1 - s) * t * f01
                + s * t * f11
            )
        # cell straddles the diagonal: affine interpolation on the lower half
        f00, f10, f11 = v[i, j], v[i + 1, j], v[i + 1, j + 1]
        return f00 + s * (f10 - f00) + t * (f11 - f10)


def _edge_derivative(values, h, edge):
    """One-sided derivative in the first index at its extreme value.

    ``values`` is indexed ``[a, b, :, :]`` with support ``b <= a``.  For
    ``edge == "end"`` the derivative is taken in ``a`` at ``a = N - 1``
    (stencil points run backward); for ``edge == "start"`` the roles are
    mirrored and the derivative is taken at ``b``'s smallest admissible
    index, i.e. along ``b`` at ``b = 0`` after the caller swaps axes.
    Columns too close to the corner are filled by cubic extrapolation.
    """
    n = values.shape[0]
    out = np.zeros((n,) + values.shape[2:])
    if edge == "end":
        avail = lambda j: n - j  # nodes a = j .. n-1 in column j
        take = lambda j, k: values[n - 1 - k, j]  # k-th node away from the edge
        corner_side = "late"
    else:
        avail = lambda i: i + 1  # nodes b = 0 .. i in row i
        take = lambda i, k: values[i, k]
        corner_side = "early"

    # only full stencils: short ones near the corner cost too much accuracy,
    # extrapolation from the interior does better
    good = np.zeros(n, dtype=bool)
    coeff = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / (12.0 * h)
    for j in range(n):
        if avail(j) < 5:
            continue
        acc = np.zeros(values.shape[2:])
        for k, c in enumerate(coeff):
            acc = acc + c * take(j, k)
        if edge == "start":
            acc = -acc  # forward stencil mirrors the backward one
        out[j] = acc
        good[j] = True

    bad = np.nonzero(~good)[0]
    if bad.size:
        src = np.nonzero(good)[0]
        if src.size < 4:
            raise ConfigurationError("grid too coarse for edge derivatives")
        if corner_side == "late":
            base = src[-4:]
        else:
            base = src[:4]
        for j in bad:
            out[j] = _lagrange_extrapolate(base.astype(float), out[base], float(j))
    return out


def _lagrange_extrapolate(xs, ys, x):
    """Polynomial extrapolation through (xs[k], ys[k]) evaluated at x."""
    acc = np.zeros(ys.shape[1:])
    for k in range(len(xs)):
        w = 1.0
        for m in range(len(xs)):
            if m != k:
                w *= (x - xs[m]) / (xs[k] - xs[m])
        acc = acc + w * ys[k]
    return acc


def _segment_weights_table(num_points, spacing):
    """Quadrature weights for every sub-segment length, index = node count."""
    table = [np.zeros(max(m, 1)) for m in range(2)]
    for m in range(2, num_points + 1):
        table.append(composite_weights(m, spacing))
    return table


def kernel_compose(outer, inner):
    """Kernel of the composed Volterra operator.

    Returns the kernel ``C`` with
    ``C(z, zeta) = integral over xi in [zeta, z] of outer(z, xi) inner(xi, zeta)``.

    Parameters
    ----------
    outer, inner : TriangularKernel
        Factors on the same grid with compatible matrix shapes.

    Returns
    -------
    TriangularKernel
    """
    if outer.num_points != inner.num_points:
        raise ConfigurationError("kernel composition requires matching grids")
    n = outer.num_points
    h = outer.spacing
    ra, ca = outer.shape
    rb, cb = inner.shape
    if ca != rb:
        raise ConfigurationError("kernel composition has incompatible shapes")
    table = _segment_weights_table(n, h)
    out = np.zeros((n, n, ra, cb))
    a, b = outer.values, inner.values
    for i in range(n):
        for j in range(i + 1):
            m = i - j + 1
            if m < 2:
                continue
            w = table[m]
            out[i, j] = np.einsum("k,kab,kbc->ac", w, a[i, j : i + 1], b[j : i + 1, j])
    return TriangularKernel(outer.grid, out)


def volterra_lower_apply(kernel, field):
    """Apply a lower Volterra operator to a field from the left.

    Returns the field ``g`` with
    ``g(z) = integral over zeta in [0, z] of kernel(z, zeta) field(zeta)``.
    """
    if kernel.num_points != field.num_points:
        raise ConfigurationError("operator application requires matching grids")
    n = kernel.num_points
    table = _segment_weights_table(n, kernel.spacing)
    out = np.zeros((n, kernel.shape[0], field.shape[1]))
    for i in range(n):
        m = i + 1
        if m < 2:
            continue
        w = table[m]
        out[i] = np.einsum("k,kab,kbc->ac", w, kernel.values[i, : i + 1], field.samples[: i + 1])
    return MatrixField(kernel.grid, out)


def volterra_upper_apply(field, kernel):
    """Apply an upper Volterra operator to a field from the right.

    Returns the field ``g`` with
    ``g(zeta) = integral over xi in [zeta, 1] of field(xi) kernel(xi, zeta)``.
    """
    if kernel.num_points != field.num_points:
        raise ConfigurationError("operator application requires matching grids")
    n = kernel.num_points
    table = _segment_weights_table(n, kernel.spacing)
    out = np.zeros((n, field.shape[0], kernel.shape[1]))
    for j in range(n):
        m = n - j
        if m < 2:
            continue
        w = table[m]
        out[j] = np.einsum("k,kab,kbc->ac", w, field.samples[j:], kernel.values[j:, j])
    return MatrixField(kernel.grid, out)
