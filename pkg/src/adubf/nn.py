"""
Neural-network building blocks on top of ``autodiff``: dense and batch-norm
layers, ReLU, straight-through sign, a parameter store with weight aliasing,
Adam, the slope-annealing schedule, and a binary checkpoint format.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, relu, sign_st
from .errors import ContractError, DimensionError, DomainError, FormatError

__all__ = [
    "ParamStore", "Dense", "BatchNorm", "AnnealSchedule", "relu", "sign_st",
    "batchnorm", "adam_step", "save_checkpoint", "load_checkpoint",
    "st_surrogate_grad",
]


class ParamStore:
    """Named real parameter arrays plus per-parameter Adam state.

    ``alias(name, target)`` makes ``name`` refer to the same physical array
    as ``target``; gradients reported under either name are accumulated onto
    the shared array.
    """

    def __init__(self):
        self._params = {}
        self._alias = {}
        self.trainable = set()
        self.m = {}
        self.v = {}
        self.t = {}

    def add(self, name, value, trainable=True):
        if name in self._params or name in self._alias:
            raise ContractError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise DomainError(f"non-finite initial value for {name!r}")
        p = ad.leaf(value, name=name) if trainable else ad.constant(value, name=name)
        self._params[name] = p
        if trainable:
            self.trainable.add(name)
            self.m[name] = np.zeros_like(value)
            self.v[name] = np.zeros_like(value)
            self.t[name] = 0
        return p

    def alias(self, name, target):
        target = self.resolve(target)
        if name in self._params or name in self._alias:
            raise ContractError(f"duplicate parameter name {name!r}")
        self._alias[name] = target

    def resolve(self, name):
        name = self._alias.get(name, name)
        if name not in self._params:
            raise KeyError(name)
        return name

    def __getitem__(self, name):
        return self._params[self.resolve(name)]

    def __contains__(self, name):
        return name in self._params or name in self._alias

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    @property
    def aliases(self):
        return dict(self._alias)

    def set_value(self, name, value):
        p = self[name]
        value = np.asarray(value, dtype=float)
        if value.shape != p.shape:
            raise DimensionError(f"{name}: shape {value.shape} != {p.shape}")
        p.value = value.copy()

    def values(self):
        return {k: p.value for k, p in self._params.items()}

    def gradients(self, gmap):
        """Translate a ``GradientMap`` (or name-keyed dict) to canonical names."""
        out = {}
        items = gmap.by_name().items() if isinstance(gmap, ad.GradientMap) else gmap.items()
        for name, g in items:
            if name not in self:
                raise ContractError(f"gradient for unknown parameter {name!r}")
            key = self.resolve(name)
            out[key] = out[key] + g if key in out else np.array(g, dtype=float)
        return out


def adam_step(store, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction over every trainable parameter."""
    grads = store.gradients(grads)
    missing = store.trainable - set(grads)
    extra = set(grads) - store.trainable
    if missing or extra:
        raise ContractError(f"gradient names mismatch: missing={sorted(missing)} "
                            f"extra={sorted(extra)}")
    for name in sorted(store.trainable):
        g = grads[name]
        p = store[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != {p.shape}")
        t = store.t[name] + 1
        m = beta1 * store.m[name] + (1 - beta1) * g
        v = beta2 * store.v[name] + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.value = p.value - lr * mhat / (np.sqrt(vhat) + eps)
        store.m[name], store.v[name], store.t[name] = m, v, t


class Dense:
    """Affine layer ``y = x W^T + b`` with He-normal weights and zero bias."""

    def __init__(self, store, name, n_in, n_out, rng=None, init="he"):
        self.store, self.name = store, name
        self.n_in, self.n_out = n_in, n_out
        if init == "zeros":
            w = np.zeros((n_out, n_in))
        else:
            rng = rng if rng is not None else np.random.default_rng()
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in))
        store.add(f"{name}.W", w)
        store.add(f"{name}.b", np.zeros(n_out))

    @property
    def W(self):
        return self.store[f"{self.name}.W"]

    @property
    def b(self):
        return self.store[f"{self.name}.b"]

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"{self.name}: expected width {self.n_in}, got {x.shape[-1]}")
        return x @ self.W.T + self.b


def batchnorm(x, gamma, beta, eps=1e-5):
    """Training-mode batch norm over axis 0 as a single fused op.

    Returns ``(y, batch_mean, batch_var)``.
    """
    xv = x.value
    if xv.shape[0] < 2:
        raise ContractError("batch norm in train mode needs a batch of at least 2")
    mu = xv.mean(axis=0)
    var = xv.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    gv = gamma.value
    n = xv.shape[0]

    def vx(g):
        dxh = g * gv
        return inv / n * (n * dxh - dxh.sum(axis=0) - xhat * (dxh * xhat).sum(axis=0))

    y = ad._node(xhat * gv + beta.value, [
        (x, vx),
        (gamma, lambda g: (g * xhat).sum(axis=0)),
        (beta, lambda g: g.sum(axis=0)),
    ])
    return y, mu, var


class BatchNorm:
    def __init__(self, store, name, width, momentum=0.9, eps=1e-5):
        if eps <= 0:
            raise DomainError("batch norm epsilon must be positive")
        self.store, self.name = store, name
        self.momentum, self.eps = momentum, eps
        store.add(f"{name}.gamma", np.ones(width))
        store.add(f"{name}.beta", np.zeros(width))
        store.add(f"{name}.running_mean", np.zeros(width), trainable=False)
        store.add(f"{name}.running_var", np.ones(width), trainable=False)

    def __call__(self, x, train):
        s = self.store
        gamma, beta = s[f"{self.name}.gamma"], s[f"{self.name}.beta"]
        rm, rv = s[f"{self.name}.running_mean"], s[f"{self.name}.running_var"]
        if train:
            y, mu, var = batchnorm(x, gamma, beta, self.eps)
            rm.value = self.momentum * rm.value + (1 - self.momentum) * mu
            rv.value = self.momentum * rv.value + (1 - self.momentum) * var
            return y
        inv = 1.0 / np.sqrt(rv.value + self.eps)
        return (x - rm.value) * (inv * gamma) + beta


def st_surrogate_grad(u, alpha):
    """Derivative of ``2 sigm(alpha u) - 1``."""
    s = 0.5 * (1.0 + np.tanh(0.5 * alpha * np.asarray(u, dtype=float)))
    return 2.0 * alpha * s * (1.0 - s)


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear ramp of the straight-through slope, capped at ``alpha_max``."""

    alpha_0: float = 1.0
    alpha_rate: float = 0.1
    alpha_max: float = 20.0

    def __post_init__(self):
        if self.alpha_0 <= 0 or self.alpha_rate < 0 or self.alpha_max < self.alpha_0:
            raise DomainError("need alpha_0 > 0, alpha_rate >= 0, alpha_max >= alpha_0")

    def __call__(self, epoch):
        return min(self.alpha_max, self.alpha_0 + self.alpha_rate * epoch)


# --------------------------------------------------------------------------
# checkpoint format (little-endian)
#
#   magic[8] | version u32 | n_params u32
#   per param:  name_len u16 | name | trainable u8 | rank u8 | dims u32*rank | f64 payload
#   n_alias u32; per alias: name_len u16 | name | target_len u16 | target
#   n_state u32; per state: name_len u16 | name | t u64 | m payload | v payload
# --------------------------------------------------------------------------

CKPT_MAGIC = b"ADUBFCK\x00"
CKPT_VERSION = 1


def _put_str(buf, s):
    b = s.encode("utf-8")
    buf.append(struct.pack("<H", len(b)))
    buf.append(b)


def save_checkpoint(store, path):
    buf = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(store))]
    for name in store.names():
        val = np.ascontiguousarray(store[name].value, dtype="<f8")
        _put_str(buf, name)
        buf.append(struct.pack("<BB", name in store.trainable, val.ndim))
        buf.append(struct.pack(f"<{val.ndim}I", *val.shape))
        buf.append(val.tobytes())
    aliases = store.aliases
    buf.append(struct.pack("<I", len(aliases)))
    for a, t in aliases.items():
        _put_str(buf, a)
        _put_str(buf, t)
    names = sorted(store.trainable)
    buf.append(struct.pack("<I", len(names)))
    for name in names:
        _put_str(buf, name)
        buf.append(struct.pack("<Q", store.t[name]))
        buf.append(np.ascontiguousarray(store.m[name], dtype="<f8").tobytes())
        buf.append(np.ascontiguousarray(store.v[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(buf))


class _Reader:
    def __init__(self, raw):
        self.raw, self.off = raw, 0

    def take(self, n):
        if self.off + n > len(self.raw):
            raise FormatError("truncated checkpoint")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        st = struct.Struct("<" + fmt)
        return st.unpack(self.take(st.size))

    def string(self):
        (n,) = self.unpack("H")
        return self.take(n).decode("utf-8")

    def array(self, shape):
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(float)


def load_checkpoint(path):
    """Read a checkpoint written by ``save_checkpoint`` into a new ``ParamStore``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(8) != CKPT_MAGIC:
        raise FormatError("bad magic; not a checkpoint")
    version, count = r.unpack("II")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    store = ParamStore()
    for _ in range(count):
        name = r.string()
        trainable, rank = r.unpack("BB")
        dims = r.unpack(f"{rank}I") if rank else ()
        store.add(name, r.array(dims), trainable=bool(trainable))
    (n_alias,) = r.unpack("I")
    for _ in range(n_alias):
        a = r.string()
        store.alias(a, r.string())
    (n_state,) = r.unpack("I")
    for _ in range(n_state):
        name = r.string()
        if name not in store.trainable:
            raise FormatError(f"optimizer state for unknown parameter {name!r}")
        (t,) = r.unpack("Q")
        shape = store[name].shape
        store.t[name] = t
        store.m[name] = r.array(shape)
        store.v[name] = r.array(shape)
    if r.off != len(r.raw):
        raise FormatError("trailing bytes in checkpoint")
    return store
