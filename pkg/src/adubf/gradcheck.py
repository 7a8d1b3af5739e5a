"""
Finite-difference gradient check over the differentiable op families.

Each family builds a small random problem, differentiates a random real
projection of its output with ``autodiff.backward`` and compares against
central differences.  Families live in a registry so a test can inject a
deliberately wrong rule and watch the check fail.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import wmmse
from .nn import Dense, ParamStore, batchnorm

__all__ = ["CheckResult", "FAMILIES", "TOLERANCES", "run_gradcheck", "check_family",
           "DEFAULT_TOL"]

DEFAULT_TOL = 1e-5


@dataclass
class CheckResult:
    family: str
    max_rel_error: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tol)


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _probe(rng, like):
    """Random weights to reduce an output to a real scalar."""
    if np.iscomplexobj(like):
        return _cplx(rng, *like.shape)
    return rng.standard_normal(like.shape)


def check_family(build, rng, eps=1e-6):
    """Max relative error over the inputs of one family.

    ``build(rng)`` returns ``(fn, inputs)`` where ``fn`` maps a list of
    Tensors to an output Tensor.
    """
    fn, inputs = build(rng)
    out0 = fn([ad.constant(x) for x in inputs]).value
    w = _probe(rng, out0)

    def scalar(ts):
        return ad.real_part(ad.sum(fn(ts) * np.conj(w)))

    leaves = [ad.leaf(x) for x in inputs]
    grads = ad.backward(scalar(leaves))
    worst = 0.0
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            ts = [ad.constant(v) for v in inputs]
            ts[i] = ad.constant(xi)
            return scalar(ts).value
        g_num = ad.numerical_gradient(f, x, eps)
        g_ana = grads.get(leaves[i], np.zeros_like(x))
        worst = max(worst, ad.relative_error(g_ana, g_num))
    return worst


def _matmul(rng):
    return (lambda t: t[0] @ t[1]), [_cplx(rng, 2, 3, 4), _cplx(rng, 2, 4, 2)]


def _inverse(rng):
    A = _cplx(rng, 2, 3, 3) + 3 * np.eye(3)
    return (lambda t: ad.inverse(t[0])), [A]


def _logdet(rng):
    X = _cplx(rng, 2, 3, 3)
    # differentiate through a Hermitian parametrization so perturbations stay HPD
    return (lambda t: ad.logdet(t[0] @ t[0].H + np.eye(3))), [X]


def _dense(rng):
    store = ParamStore()
    layer = Dense(store, "d", 5, 3, rng)

    def fn(t):
        # route the candidate weights through the layer's own forward
        store._params["d.W"], store._params["d.b"] = t[1], t[2]
        return layer(t[0])
    return fn, [rng.standard_normal((4, 5)), store["d.W"].value.copy(),
                rng.standard_normal(3)]


def _batchnorm(rng):
    def fn(t):
        return batchnorm(t[0], t[1], t[2])[0]
    return fn, [rng.standard_normal((6, 4)), rng.standard_normal(4) + 1.5,
                rng.standard_normal(4)]


def _sign_st(rng):
    alpha = 1.7
    u = rng.standard_normal((3, 5))

    def fn(t):
        # hard sign forward, so compare the backward rule against the smooth surrogate
        if t[0].requires_grad:
            return ad.sign_st(t[0], alpha)
        return ad.constant(2.0 / (1.0 + np.exp(-alpha * t[0].value)) - 1.0)
    return fn, [u]


def _f_wmmse(rng):
    # M=2 cells with K=1 user each: N=2, Nt=4, Nr=2, T=2
    cell_of = np.array([0, 1])
    H = _cplx(rng, 1, 2, 2, 2, 4)

    def fn(t):
        V, _ = wmmse.f_wmmse(t[0], cell_of, 1.0, 10.0, 2)
        return V
    return fn, [H]


FAMILIES = {
    "matmul": _matmul,
    "inverse": _inverse,
    "logdet": _logdet,
    "dense": _dense,
    "batchnorm": _batchnorm,
    "sign-st": _sign_st,
    "f_wmmse": _f_wmmse,
}

TOLERANCES = {"f_wmmse": 1e-4}


def run_gradcheck(seed=0, families=None, tolerances=None):
    """Check every registered family; returns a list of ``CheckResult``."""
    families = FAMILIES if families is None else families
    tols = dict(TOLERANCES, **(tolerances or {}))
    results = []
    for i, (name, build) in enumerate(families.items()):
        rng = np.random.default_rng([int(seed), i])
        t0 = time.perf_counter()
        err = check_family(build, rng)
        results.append(CheckResult(name, err, tols.get(name, DEFAULT_TOL),
                                   time.perf_counter() - t0))
    return results
