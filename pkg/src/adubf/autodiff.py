"""
Reverse-mode automatic differentiation over dense (possibly batched) complex
matrices.

Every op records its parents together with a vector-Jacobian closure.  For a
real scalar loss ``L`` the adjoint carried for a tensor ``X`` is

    G = dL/dRe(X) + 1j * dL/dIm(X)

so for a real-typed tensor the adjoint is simply ``dL/dX``.  With this
convention a holomorphic map ``y = f(x)`` pulls back as ``G_x = conj(f'(x)) G_y``
and a matrix product ``Y = A B`` as ``G_A = G_Y B^H``, ``G_B = A^H G_Y``.

Leading axes are batch axes: ``matmul``, ``inv`` and ``logdet`` act on the two
trailing axes.  Elementwise ops follow numpy broadcasting and reduce the
adjoint back to each operand's shape.
"""

import warnings

import numpy as np
import scipy.linalg

from .errors import ContractError, DimensionError, DomainError, SingularityError

__all__ = [
    "Tensor", "GradientMap", "constant", "leaf", "backward",
    "add", "sub", "mul", "div", "neg", "matmul", "hermitian", "transpose",
    "conj", "real_part", "imag_part", "make_complex", "scale", "trace",
    "inverse", "logdet", "reshape", "index", "scatter", "concat",
    "sum", "mean", "exp", "log", "sqrt", "sigmoid", "log_sigmoid", "relu",
    "sign_st", "eye", "numerical_gradient", "relative_error",
]

SINGULAR_RTOL = 1e-12


class Tensor:
    """A value in a recorded computation graph.

    Leaves are created with ``leaf`` (gradients requested) or ``constant``.
    Intermediate nodes keep references to their parents until ``backward``
    consumes the graph.
    """

    __slots__ = ("value", "requires_grad", "name", "_parents", "_vjps")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjps = ()

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return not self._parents

    @property
    def is_complex(self):
        return np.iscomplexobj(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.value.dtype}{tag})"

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def H(self):
        return hermitian(self)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def constant(value, name=None):
    return Tensor(value, requires_grad=False, name=name)


def leaf(value, name=None):
    """Create a watched leaf; ``backward`` reports its gradient."""
    return Tensor(np.array(value, copy=True), requires_grad=True, name=name)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents_and_vjps):
    out = Tensor(value)
    live = [(p, f) for p, f in parents_and_vjps if p.requires_grad]
    if live:
        out.requires_grad = True
        out._parents = tuple(p for p, _ in live)
        out._vjps = tuple(f for _, f in live)
    return out


def _unbroadcast(g, shape, is_complex):
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if not is_complex and np.iscomplexobj(g):
        g = g.real
    return g


def _fit(p):
    shape, is_c = p.shape, p.is_complex
    return lambda g: _unbroadcast(g, shape, is_c)


# --------------------------------------------------------------------------
# elementwise algebra
# --------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    fa, fb = _fit(a), _fit(b)
    return _node(a.value + b.value, [(a, fa), (b, fb)])


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    fa, fb = _fit(a), _fit(b)
    return _node(a.value - b.value, [(a, fa), (b, lambda g: fb(-g))])


def neg(a):
    return _node(-a.value, [(a, lambda g: -g)])


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    fa, fb = _fit(a), _fit(b)
    return _node(av * bv, [(a, lambda g: fa(g * np.conj(bv))),
                           (b, lambda g: fb(g * np.conj(av)))])


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    y = av / bv
    fa, fb = _fit(a), _fit(b)
    return _node(y, [(a, lambda g: fa(g / np.conj(bv))),
                     (b, lambda g: fb(-g * np.conj(y / bv)))])


def scale(a, s):
    """Multiply by a (real or complex) Python/numpy scalar constant."""
    if np.ndim(s) != 0:
        raise DimensionError("scale expects a scalar factor")
    return mul(a, s)


def conj(a):
    return _node(np.conj(a.value), [(a, np.conj)])


def real_part(a):
    return _node(np.real(a.value).copy(), [(a, lambda g: g.astype(a.value.dtype))])


def imag_part(a):
    return _node(np.imag(a.value).copy(), [(a, lambda g: 1j * g)])


def make_complex(re, im):
    re, im = _wrap(re), _wrap(im)
    if re.shape != im.shape:
        raise DimensionError(f"real/imag shapes differ: {re.shape} vs {im.shape}")
    return _node(re.value + 1j * im.value,
                 [(re, lambda g: np.real(g)), (im, lambda g: np.imag(g))])


def exp(a):
    y = np.exp(a.value)
    return _node(y, [(a, lambda g: g * np.conj(y))])


def log(a):
    av = a.value
    if np.isrealobj(av) and np.any(av <= 0):
        raise DomainError("log of a non-positive entry")
    return _node(np.log(av), [(a, lambda g: g / np.conj(av))])


def sqrt(a):
    av = a.value
    if np.isrealobj(av) and np.any(av < 0):
        raise DomainError("sqrt of a negative entry")
    y = np.sqrt(av)
    return _node(y, [(a, lambda g: g / (2 * np.conj(y)))])


def _sigm(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    y = _sigm(a.value)
    return _node(y, [(a, lambda g: g * y * (1 - y))])


def log_sigmoid(a):
    x = a.value
    y = -np.logaddexp(0.0, -x)
    return _node(y, [(a, lambda g: g * _sigm(-x))])


def relu(a):
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sign_st(a, alpha):
    """Hard sign forward (sgn(0) = +1) with the gradient of 2*sigm(alpha*u) - 1."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    u = a.value
    s = _sigm(alpha * u)
    surrogate = 2.0 * alpha * s * (1.0 - s)
    return _node(np.where(u >= 0, 1.0, -1.0), [(a, lambda g: g * surrogate)])


# --------------------------------------------------------------------------
# shape manipulation
# --------------------------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def index(a, key):
    """``a[key]`` for any numpy key; the adjoint scatters with ``np.add.at``."""
    shape, dtype = a.shape, a.value.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        np.add.at(out, key, g)
        return _unbroadcast(out, shape, np.iscomplexobj(a.value))

    return _node(a.value[key], [(a, vjp)])


def scatter(a, key, shape):
    """Place ``a`` into ``zeros(shape)[key]`` (inverse of ``index``)."""
    out = np.zeros(shape, dtype=a.value.dtype)
    out[key] = a.value
    return _node(out, [(a, lambda g: g[key])])


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([t.value for t in tensors], axis=axis)
    pairs = []
    for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * y.ndim
        sl[axis] = slice(lo, hi)
        sl = tuple(sl)
        f = _fit(t)
        pairs.append((t, lambda g, sl=sl, f=f: f(g[sl])))
    return _node(y, pairs)


def sum(a, axis=None, keepdims=False):
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), [(a, vjp)])


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------------------
# matrix ops (trailing two axes)
# --------------------------------------------------------------------------

def _check_matrix(a, what):
    if a.ndim < 2:
        raise DimensionError(f"{what} needs at least 2-D input, got shape {a.shape}")


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_matrix(a, "matmul")
    _check_matrix(b, "matmul")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    fa, fb = _fit(a), _fit(b)
    return _node(av @ bv, [
        (a, lambda g: fa(g @ np.conj(np.swapaxes(bv, -1, -2)))),
        (b, lambda g: fb(np.conj(np.swapaxes(av, -1, -2)) @ g)),
    ])


def hermitian(a):
    _check_matrix(a, "hermitian")
    return _node(np.conj(np.swapaxes(a.value, -1, -2)),
                 [(a, lambda g: np.conj(np.swapaxes(g, -1, -2)))])


def transpose(a):
    _check_matrix(a, "transpose")
    return _node(np.swapaxes(a.value, -1, -2), [(a, lambda g: np.swapaxes(g, -1, -2))])


def trace(a):
    _check_matrix(a, "trace")
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise DimensionError(f"trace of non-square shape {a.shape}")
    ident = np.eye(n)
    return _node(np.trace(a.value, axis1=-2, axis2=-1),
                 [(a, lambda g: g[..., None, None] * ident)])


def eye(n, dtype=float):
    return constant(np.eye(n, dtype=dtype))


def _herm_part(x):
    return 0.5 * (x + np.conj(np.swapaxes(x, -1, -2)))


def _cond(x):
    with np.errstate(all="ignore"):
        try:
            c = np.linalg.cond(x)
        except np.linalg.LinAlgError:
            return float("inf")
    c = np.max(c) if np.ndim(c) else c
    return float(c) if np.isfinite(c) else float("inf")


def _cholesky(x):
    """Cholesky of the Hermitian part, pivot-checked; None if not PD."""
    xh = _herm_part(x)
    try:
        low = np.linalg.cholesky(xh)
    except np.linalg.LinAlgError:
        return None
    piv = np.abs(np.diagonal(low, axis1=-2, axis2=-1)) ** 2
    big = np.max(np.abs(xh), axis=(-2, -1))
    if np.any(piv.min(axis=-1) <= SINGULAR_RTOL * big) or not np.all(np.isfinite(low)):
        return None
    return low


def _lu_inverse(x):
    out = np.empty_like(x, dtype=np.result_type(x.dtype, float))
    n = x.shape[-1]
    ident = np.eye(n, dtype=out.dtype)
    for idx in np.ndindex(x.shape[:-2]):
        m = x[idx]
        big = np.max(np.abs(m)) if m.size else 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
        if big == 0.0 or np.min(np.abs(np.diag(lu))) <= SINGULAR_RTOL * big:
            raise SingularityError("matrix is singular to tolerance", _cond(m))
        out[idx] = scipy.linalg.lu_solve((lu, piv), ident, check_finite=False)
    return out


def inverse(a, hermitian_pd=False):
    """Matrix inverse over the trailing two axes.

    With ``hermitian_pd=True`` the caller asserts the input is Hermitian
    positive definite; the Hermitian part is factored by Cholesky.  Otherwise
    LU with partial pivoting is used.  Either route raises
    ``SingularityError`` when a pivot falls below 1e-12 * max|entry|.
    """
    _check_matrix(a, "inverse")
    if a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"inverse of non-square shape {a.shape}")
    x = a.value
    if hermitian_pd:
        low = _cholesky(x)
        if low is None:
            raise SingularityError("matrix is not Hermitian positive definite to tolerance",
                                   _cond(x))
        linv = np.linalg.inv(low)
        y = np.conj(np.swapaxes(linv, -1, -2)) @ linv
    else:
        y = _lu_inverse(x)
    yh = np.conj(np.swapaxes(y, -1, -2))
    f = _fit(a)
    return _node(y, [(a, lambda g: f(-(yh @ g @ yh)))])


def logdet(a):
    """Natural log-determinant of a Hermitian positive-definite matrix.

    Returns a real tensor (one value per matrix in the batch).  The adjoint
    is ``g * A^{-H}``, i.e. d logdet(A) = Tr(A^{-1} dA).
    """
    _check_matrix(a, "logdet")
    if a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"logdet of non-square shape {a.shape}")
    low = _cholesky(a.value)
    if low is None:
        raise DomainError("logdet requires a Hermitian positive-definite input")
    y = 2.0 * np.sum(np.log(np.real(np.diagonal(low, axis1=-2, axis2=-1))), axis=-1)
    linv = np.linalg.inv(low)
    ainv = np.conj(np.swapaxes(linv, -1, -2)) @ linv
    ainv_h = np.conj(np.swapaxes(ainv, -1, -2))
    f = _fit(a)
    return _node(y, [(a, lambda g: f(np.asarray(g)[..., None, None] * ainv_h))])


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------

class GradientMap(dict):
    """Maps each watched leaf to its adjoint ``dL/dRe + 1j dL/dIm``.

    ``pair(x)`` returns the two real arrays ``(dL/dRe(x), dL/dIm(x))``;
    ``by_name()`` keys the map by leaf name.
    """

    def pair(self, x):
        g = self[x]
        return np.real(g).copy(), (np.imag(g).copy() if np.iscomplexobj(g) else np.zeros_like(g))

    def by_name(self):
        return {k.name: v for k, v in self.items() if k.name is not None}


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def backward(loss, keep_graph=False):
    """Backpropagate a real scalar ``loss``; returns a ``GradientMap``.

    The graph is released afterwards unless ``keep_graph`` is set.
    """
    if not isinstance(loss, Tensor) or loss.value.size != 1 or loss.ndim > 1:
        raise ContractError("backward needs a scalar loss tensor")
    v = complex(loss.value.reshape(()))
    if abs(v.imag) > 1e-9:
        raise ContractError(f"loss is not real (imag={v.imag:.3g})")
    grads = GradientMap()
    if not loss.requires_grad:
        return grads
    adj = {id(loss): np.ones(loss.shape, dtype=float)}
    for node in _toposort(loss):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                grads[node] = grads[node] + g if node in grads else g
            continue
        for p, vjp in zip(node._parents, node._vjps):
            gp = vjp(g)
            key = id(p)
            adj[key] = adj[key] + gp if key in adj else gp
        if not keep_graph:
            node._parents, node._vjps = (), ()
    return grads


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------

def numerical_gradient(fn, x, eps=1e-5):
    """Central-difference adjoint of the real scalar ``fn(x)`` w.r.t. array ``x``.

    Each real and (for complex ``x``) imaginary component is perturbed
    independently.  Returns an array in the same ``dRe + 1j dIm`` convention.
    """
    x = np.array(x, copy=True)
    grad = np.zeros(x.shape, dtype=x.dtype)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    units = (1.0, 1j) if np.iscomplexobj(x) else (1.0,)
    for i in range(flat.size):
        orig = flat[i]
        for u in units:
            flat[i] = orig + eps * u
            fp = float(np.real(fn(x)))
            flat[i] = orig - eps * u
            fm = float(np.real(fn(x)))
            flat[i] = orig
            gflat[i] += u * (fp - fm) / (2 * eps)
    return grad


def relative_error(g, g_ref):
    """Norm-wise relative error ``|g - g_ref| / max(|g|, |g_ref|)``."""
    num = np.linalg.norm(np.ravel(g - g_ref))
    den = max(np.linalg.norm(np.ravel(g)), np.linalg.norm(np.ravel(g_ref)), 1e-300)
    return float(num / den)
