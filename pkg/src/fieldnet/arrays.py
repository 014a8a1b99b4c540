"""Column-major array arithmetic.

All multi-dimensional data in this package uses the column-major (first
index fastest) linearisation, so ``vec(A) == A.ravel(order="F")``.  The
rotated mode transform ``rho`` multiplies a matrix onto the first mode of
an array and rotates that mode to the last position; composing it over
all modes computes a Kronecker-structured matrix-vector product

    (X_d kron ... kron X_1) vec(A) = vec(rho(X_d, ... rho(X_1, A)))

without ever forming the Kronecker matrix.  ``rho_transposed`` is the
adjoint, used for gradient evaluation.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def vec_index(index, shape):
    """Map a 1-based multi-index to its 1-based column-major position.

    The first index varies fastest: for a two-dimensional shape
    ``(N1, N2)`` the pair ``(i1, i2)`` maps to ``i1 + (i2 - 1) * N1``.
    """
    index = tuple(int(i) for i in index)
    shape = tuple(int(n) for n in shape)
    if len(index) != len(shape):
        raise ShapeError(f"index arity {len(index)} != array order {len(shape)}")
    linear = 0
    stride = 1
    for i, n in zip(index, shape):
        if not 1 <= i <= n:
            raise IndexError(f"index {index} out of bounds for shape {shape}")
        linear += (i - 1) * stride
        stride *= n
    return linear + 1


def multi_index(linear, shape):
    """Inverse of :func:`vec_index` (both 1-based)."""
    shape = tuple(int(n) for n in shape)
    total = int(np.prod(shape))
    linear = int(linear)
    if not 1 <= linear <= total:
        raise IndexError(f"linear index {linear} out of bounds for shape {shape}")
    rem = linear - 1
    out = []
    for n in shape:
        out.append(rem % n + 1)
        rem //= n
    return tuple(out)


def vec(a):
    """Column-major flatten."""
    return np.asarray(a, dtype=np.float64).ravel(order="F")


def unvec(v, shape):
    """Column-major reshape of a flat vector."""
    v = np.asarray(v, dtype=np.float64)
    shape = tuple(int(n) for n in shape)
    if v.size != int(np.prod(shape)):
        raise ShapeError(f"cannot reshape {v.size} values to {shape}")
    return v.reshape(shape, order="F")


def rho(x, a):
    """Multiply ``x`` onto the first mode of ``a`` and rotate it to the last.

    ``x`` is ``n x p`` and ``a`` is ``p x r2 x ... x rd``; the result is
    ``r2 x ... x rd x n``.  For a vector ``a`` this is the ordinary
    matrix-vector product.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a matrix factor, got ndim={x.ndim}")
    if a.ndim == 0:
        raise ShapeError("operand must have at least one mode")
    n, p = x.shape
    if a.shape[0] != p:
        raise ShapeError(f"factor has {p} columns but operand mode-1 size is {a.shape[0]}")
    rest = a.shape[1:]
    out = x @ a.reshape(p, -1, order="F")
    out = out.reshape((n,) + rest, order="F")
    return np.moveaxis(out, 0, -1)


def rho_transposed(x, b):
    """Adjoint of :func:`rho`: multiply ``x.T`` onto the last mode of ``b``
    and rotate it to the front.

    Satisfies ``<rho(x, a), b> == <a, rho_transposed(x, b)>`` exactly in
    exact arithmetic.
    """
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a matrix factor, got ndim={x.ndim}")
    if b.ndim == 0:
        raise ShapeError("operand must have at least one mode")
    n, p = x.shape
    if b.shape[-1] != n:
        raise ShapeError(f"factor has {n} rows but operand last-mode size is {b.shape[-1]}")
    moved = np.moveaxis(b, -1, 0)
    rest = moved.shape[1:]
    out = x.T @ moved.reshape(n, -1, order="F")
    return out.reshape((p,) + rest, order="F")


def rho_chain(factors, a):
    """Apply :func:`rho` once per mode, factors listed in mode order.

    The result's vec equals ``(X_d kron ... kron X_1) vec(a)``.
    """
    out = np.asarray(a, dtype=np.float64)
    for x in factors:
        out = rho(x, out)
    return out


def rho_transposed_chain(factors, b):
    """Adjoint of :func:`rho_chain` for the same factor list.

    The result's vec equals ``(X_d kron ... kron X_1)^T vec(b)``.
    """
    out = np.asarray(b, dtype=np.float64)
    for x in reversed(list(factors)):
        out = rho_transposed(x, out)
    return out


def hadamard(a, b):
    """Elementwise product of two identically shaped arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


# -- DTA1 on-disk format ----------------------------------------------------
#
# One ASCII header line "DTA1 d N1 ... Nd\n" followed by the raw
# little-endian float64 payload in column-major order.


def write_dta1(path, a):
    """Write an array to ``path`` in the DTA1 format."""
    a = np.asarray(a, dtype=np.float64)
    dims = " ".join(str(s) for s in a.shape)
    header = f"DTA1 {a.ndim} {dims}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(a.astype("<f8", copy=False).tobytes(order="F"))


def read_dta1(path):
    """Read a DTA1 file back into an array."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != "DTA1":
            raise ValueError(f"{path}: not a DTA1 file")
        order = int(header[1])
        dims = [int(t) for t in header[2:]]
        if len(dims) != order:
            raise ValueError(f"{path}: header announces {order} dims, lists {len(dims)}")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    expected = int(np.prod(dims))
    if payload.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {payload.size}")
    return payload.reshape(dims, order="F").astype(np.float64)
