"""Forward-mode automatic differentiation with numpy-vectorized dual numbers.

A :class:`Dual` holds an array of values and, on a trailing axis, the
partial derivatives of every element with respect to ``n`` seeded
variables.  Each element behaves as an independent dual scalar, so a
whole batch of points (for example every stage of an MPC horizon) can be
differentiated in one pass.

Model code is written once and runs on floats, ndarrays and Duals alike:
numpy ufuncs in the supported set dispatch through ``__array_ufunc__``,
and the helpers :func:`stack`, :func:`concatenate`, :func:`matvec` and
:func:`sigmoid` accept either kind of argument.

Supported primitives: ``+ - * /``, unary minus, ``**`` (any combination of
Dual and constant operands), ``exp``, ``log``, ``sqrt``, ``sin``, ``cos``,
``tanh``, ``sigmoid``, ``square``, indexing, stacking, summation and
matrix-vector products.  Any other numpy ufunc applied to a Dual raises
:class:`UnsupportedPrimitiveError`.
"""

import numpy as np

from .errors import DimensionError, NonFiniteError, UnsupportedPrimitiveError

__all__ = [
    "Dual",
    "jacobian",
    "batch_jacobian",
    "value_of",
    "is_dual",
    "stack",
    "concatenate",
    "matvec",
    "sigmoid",
    "dsum",
]


def _sigmoid_value(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Dual:
    """Array of dual numbers.

    Parameters
    ----------
    value : array_like
        Primal values, any shape ``S``.
    partials : array_like
        Derivatives with shape ``S + (n,)``.
    """

    __slots__ = ("value", "partials")
    __array_priority__ = 1000

    def __init__(self, value, partials):
        self.value = np.asarray(value, dtype=float)
        self.partials = np.asarray(partials, dtype=float)
        if self.partials.shape[:-1] != self.value.shape:
            raise DimensionError(
                f"partials shape {self.partials.shape} does not extend "
                f"value shape {self.value.shape}"
            )

    @classmethod
    def _new(cls, value, partials):
        # internal constructor for results of Dual arithmetic (no validation)
        d = object.__new__(cls)
        d.value = value
        d.partials = partials
        return d

    @classmethod
    def seed(cls, point):
        """Seed a 1-D point: variable ``i`` gets the ``i``-th unit vector."""
        x = np.asarray(point, dtype=float)
        if x.ndim != 1:
            raise DimensionError("seed expects a 1-D point")
        return cls(x, np.eye(x.size))

    @classmethod
    def constant(cls, value, n):
        v = np.asarray(value, dtype=float)
        return cls(v, np.zeros(v.shape + (n,)))

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def n_seed(self):
        return self.partials.shape[-1]

    def __len__(self):
        return len(self.value)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        value = self.value.reshape(shape)
        return Dual(value, self.partials.reshape(value.shape + (self.n_seed,)))

    def __repr__(self):
        return f"Dual(value={self.value!r}, partials={self.partials!r})"

    # -- indexing ---------------------------------------------------------
    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if any(i is None for i in idx):
            raise UnsupportedPrimitiveError("newaxis indexing of Dual")
        return Dual._new(self.value[idx], self.partials[idx + (slice(None),)])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    # -- arithmetic -------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, Dual):
            if other.n_seed != self.n_seed:
                raise DimensionError("Duals seeded with different variable counts")
            return other
        return None

    def __add__(self, other):
        o = self._lift(other)
        if o is None:
            v = self.value + np.asarray(other, dtype=float)
            return Dual._new(v, _expand(self.partials, v.shape))
        v = self.value + o.value
        return Dual._new(v, _expand(self.partials, v.shape) + _expand(o.partials, v.shape))

    __radd__ = __add__

    def __neg__(self):
        return Dual._new(-self.value, -self.partials)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._lift(other)
        if o is None:
            c = np.asarray(other, dtype=float)
            v = self.value * c
            if c.ndim == 0:
                return Dual._new(v, self.partials * c)
            return Dual._new(v, self.partials * c[..., None])
        v = self.value * o.value
        p = self.partials * o.value[..., None] + o.partials * self.value[..., None]
        return Dual._new(v, p)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o is None:
            c = np.asarray(other, dtype=float)
            return Dual._new(self.value / c, self.partials / c[..., None])
        v = self.value / o.value
        p = (self.partials - v[..., None] * o.partials) / o.value[..., None]
        return Dual._new(v, p)

    def __rtruediv__(self, other):
        c = np.asarray(other, dtype=float)
        v = c / self.value
        return Dual._new(v, -(v / self.value)[..., None] * self.partials)

    def __pow__(self, other):
        o = self._lift(other)
        if o is None:
            c = np.asarray(other, dtype=float)
            v = self.value**c
            d = c * self.value ** (c - 1.0)
            return Dual._new(v, d[..., None] * self.partials)
        return np.exp(o * np.log(self))

    def __rpow__(self, other):
        c = np.asarray(other, dtype=float)
        v = c**self.value
        return Dual._new(v, (v * np.log(c))[..., None] * self.partials)

    # -- numpy ufunc dispatch ---------------------------------------------
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"{ufunc.__name__}.{method} on Dual")
        binary = _BINARY.get(ufunc)
        if binary is not None:
            a, b = inputs
            return binary(a, b)
        unary = _UNARY.get(ufunc)
        if unary is None:
            raise UnsupportedPrimitiveError(
                f"numpy.{ufunc.__name__} is not a supported autodiff primitive"
            )
        (x,) = inputs
        value, deriv = unary(x.value)
        return Dual._new(value, deriv[..., None] * x.partials)


def _expand(partials, shape):
    if partials.shape[:-1] == shape:
        return partials
    return np.broadcast_to(partials, shape + partials.shape[-1:])


def _unary_exp(v):
    e = np.exp(v)
    return e, e


def _unary_tanh(v):
    t = np.tanh(v)
    return t, 1.0 - t * t


def _unary_sqrt(v):
    s = np.sqrt(v)
    return s, 0.5 / s


_UNARY = {
    np.exp: _unary_exp,
    np.log: lambda v: (np.log(v), 1.0 / v),
    np.sin: lambda v: (np.sin(v), np.cos(v)),
    np.cos: lambda v: (np.cos(v), -np.sin(v)),
    np.tanh: _unary_tanh,
    np.sqrt: _unary_sqrt,
    np.square: lambda v: (v * v, 2.0 * v),
    np.negative: lambda v: (-v, -np.ones_like(v)),
    np.positive: lambda v: (v, np.ones_like(v)),
}

_BINARY = {
    np.add: lambda a, b: a + b if isinstance(a, Dual) else b + a,
    np.subtract: lambda a, b: a - b if isinstance(a, Dual) else (-b) + a,
    np.multiply: lambda a, b: a * b if isinstance(a, Dual) else b * a,
    np.true_divide: lambda a, b: a / b if isinstance(a, Dual) else b.__rtruediv__(a),
    np.power: lambda a, b: a**b if isinstance(a, Dual) else b.__rpow__(a),
}


# -- helpers that accept floats, ndarrays and Duals ------------------------


def is_dual(x):
    return isinstance(x, Dual)


def value_of(x):
    """Primal value of a Dual, or the argument itself as an ndarray."""
    return x.value if isinstance(x, Dual) else np.asarray(x, dtype=float)


def _n_seed(items):
    n = None
    for it in items:
        if isinstance(it, Dual):
            if n is not None and it.n_seed != n:
                raise DimensionError("Duals seeded with different variable counts")
            n = it.n_seed
    return n


def _as_dual(x, n):
    if isinstance(x, Dual):
        return x
    return Dual.constant(x, n)


def stack(items, axis=0):
    """``np.stack`` for a mix of Duals and constants."""
    items = list(items)
    n = _n_seed(items)
    if n is None:
        return np.stack([np.asarray(i, dtype=float) for i in items], axis=axis)
    duals = [_as_dual(i, n) for i in items]
    shape = duals[0].shape
    if all(d.value.shape == shape for d in duals):
        ax = axis if axis >= 0 else len(shape) + 1 + axis
        return Dual._new(np.stack([d.value for d in duals], axis=ax),
                         np.stack([d.partials for d in duals], axis=ax))
    shape = np.broadcast_shapes(*(d.shape for d in duals))
    values = [np.broadcast_to(d.value, shape) for d in duals]
    partials = [_expand(d.partials, shape) for d in duals]
    ndim = len(shape) + 1
    ax = axis if axis >= 0 else ndim + axis
    return Dual._new(np.stack(values, axis=ax), np.stack(partials, axis=ax))


def concatenate(items, axis=0):
    """``np.concatenate`` for a mix of Duals and constants."""
    items = list(items)
    n = _n_seed(items)
    if n is None:
        return np.concatenate([np.asarray(i, dtype=float) for i in items], axis=axis)
    duals = [_as_dual(i, n) for i in items]
    ax = axis if axis >= 0 else duals[0].ndim + axis
    return Dual._new(
        np.concatenate([d.value for d in duals], axis=ax),
        np.concatenate([d.partials for d in duals], axis=ax),
    )


def dsum(x, axis=-1):
    """Sum over one value axis."""
    if isinstance(x, Dual):
        ax = axis if axis >= 0 else x.ndim + axis
        return Dual._new(x.value.sum(axis=ax), x.partials.sum(axis=ax))
    return np.sum(x, axis=axis)


def matvec(W, z):
    """Batched product ``W @ z`` over the last axis of ``z``.

    ``W`` has shape ``(a, b)``; ``z`` has shape ``(..., b)``.  Either may be
    a Dual.
    """
    wd, zd = isinstance(W, Dual), isinstance(z, Dual)
    Wv, zv = value_of(W), value_of(z)
    if Wv.ndim != 2 or zv.shape[-1:] != Wv.shape[1:]:
        raise DimensionError(f"matvec shapes {Wv.shape} and {zv.shape}")
    value = zv @ Wv.T
    if not (wd or zd):
        return value
    partials = None
    if zd:
        partials = np.einsum("...jn,ij->...in", z.partials, Wv)
    if wd:
        term = np.einsum("ijn,...j->...in", W.partials, zv)
        partials = term if partials is None else partials + term
    return Dual._new(value, partials)


def sigmoid(z):
    """Logistic function ``1 / (1 + exp(-z))``."""
    if isinstance(z, Dual):
        s = _sigmoid_value(z.value)
        return Dual._new(s, (s * (1.0 - s))[..., None] * z.partials)
    return _sigmoid_value(z) if np.ndim(z) else float(_sigmoid_value(np.array([z]))[0])


# -- Jacobians ---------------------------------------------------------------


def _check_output(out, m_expected=None):
    v = value_of(out)
    if v.ndim != 1:
        raise DimensionError(f"function must return a 1-D vector, got shape {v.shape}")
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise NonFiniteError(f"non-finite function value at output index {bad[0]}")
    return v


def jacobian(func, point):
    """Jacobian of a vector function at ``point``.

    Parameters
    ----------
    func : callable
        Maps a 1-D vector (float array or Dual) to a 1-D vector.
    point : array_like
        Evaluation point, shape ``(n,)``.

    Returns
    -------
    ndarray
        The ``(m, n)`` matrix of partial derivatives.
    """
    x = np.asarray(point, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"point must be 1-D, got shape {x.shape}")
    try:
        out = func(Dual.seed(x))
    except IndexError as exc:
        raise DimensionError(f"arity mismatch for point of length {x.size}: {exc}") from exc
    value = _check_output(out)
    if not isinstance(out, Dual):
        return np.zeros((value.size, x.size))
    bad = np.argwhere(~np.isfinite(out.partials))
    if bad.size:
        raise NonFiniteError(f"non-finite derivative at output index {bad[0][0]}")
    return out.partials.copy()


def batch_jacobian(func, points):
    """Jacobians of ``func`` at each row of ``points`` in one pass.

    ``func`` must treat the leading axis as a batch axis (index state
    components with ``x[..., i]``).  Returns ``(values, jacobians)`` with
    shapes ``(B, m)`` and ``(B, m, n)``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise DimensionError("points must have shape (B, n)")
    B, n = X.shape
    seeds = np.broadcast_to(np.eye(n), (B, n, n))
    out = func(Dual(X, seeds))
    if not isinstance(out, Dual):
        v = np.asarray(out, dtype=float)
        return v, np.zeros(v.shape + (n,))
    if not np.all(np.isfinite(out.value)):
        idx = np.argwhere(~np.isfinite(out.value))[0]
        raise NonFiniteError(f"non-finite function value at batch {idx[0]}, output index {idx[-1]}")
    return out.value.copy(), out.partials.copy()
