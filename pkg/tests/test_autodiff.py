import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adubf import autodiff as ad
from adubf.errors import ContractError, DimensionError, DomainError, SingularityError

from conftest import cplx


def fd_check(fn, inputs, rng, tol=1e-6):
    """Compare backward() against central differences on a random real projection."""
    out = fn([ad.constant(x) for x in inputs]).value
    w = cplx(rng, *out.shape) if np.iscomplexobj(out) else rng.standard_normal(out.shape)

    def scalar(ts):
        return ad.real_part(ad.sum(fn(ts) * np.conj(w)))

    leaves = [ad.leaf(x) for x in inputs]
    g = ad.backward(scalar(leaves))
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            ts = [ad.constant(v) for v in inputs]
            ts[i] = ad.constant(xi)
            return scalar(ts).value
        num = ad.numerical_gradient(f, x, 1e-6)
        assert ad.relative_error(g[leaves[i]], num) < tol, f"input {i}"


@pytest.mark.parametrize("name,fn,shapes", [
    ("add", lambda t: t[0] + t[1], [(2, 3), (3,)]),
    ("sub", lambda t: t[0] - t[1], [(2, 3), (2, 1)]),
    ("mul", lambda t: t[0] * t[1], [(2, 3), (2, 3)]),
    ("div", lambda t: t[0] / t[1], [(2, 3), (2, 3)]),
    ("conj", lambda t: ad.conj(t[0]) * t[0] * t[0], [(4,)]),
    ("matmul", lambda t: t[0] @ t[1], [(2, 3, 4), (4, 2)]),
    ("hermitian", lambda t: t[0].H @ t[0], [(3, 2)]),
    ("trace", lambda t: ad.trace(t[0] @ t[0]), [(2, 3, 3)]),
    ("sum-axis", lambda t: ad.sum(t[0] * t[0], axis=1), [(2, 3, 2)]),
    ("index", lambda t: t[0][:, [0, 0, 2]] * 2.0, [(2, 3)]),
    ("reshape", lambda t: ad.reshape(t[0], (6,)) * t[0].reshape(6), [(2, 3)]),
    ("concat", lambda t: ad.concat([t[0], t[1] * t[1]], axis=0), [(2, 3), (1, 3)]),
])
def test_complex_ops_match_finite_differences(name, fn, shapes, rng):
    fd_check(fn, [cplx(rng, *s) + 2.0 for s in shapes], rng)


@pytest.mark.parametrize("fn", [
    lambda t: ad.exp(t[0]),
    lambda t: ad.log(t[0] * t[0] + 1.0),
    lambda t: ad.sqrt(t[0] * t[0] + 1.0),
    lambda t: ad.sigmoid(t[0]),
    lambda t: ad.log_sigmoid(t[0]),
    lambda t: ad.relu(t[0]),
    lambda t: ad.mean(t[0] * t[0], axis=0),
    lambda t: ad.make_complex(t[0], t[0] * 2.0) * (1 + 2j),
])
def test_real_ops_match_finite_differences(fn, rng):
    x = rng.standard_normal((3, 4))
    x[np.abs(x) < 1e-3] = 0.5       # keep away from the relu kink
    fd_check(fn, [x], rng)


def test_real_and_imag_parts(rng):
    fd_check(lambda t: ad.real_part(t[0] * t[0]) + ad.imag_part(t[0]), [cplx(rng, 3)], rng)


def test_inverse_general_and_hpd(rng):
    A = cplx(rng, 2, 3, 3) + 3 * np.eye(3)
    fd_check(lambda t: ad.inverse(t[0]), [A], rng)
    X = cplx(rng, 3, 3)
    fd_check(lambda t: ad.inverse(t[0] @ t[0].H + np.eye(3), hermitian_pd=True), [X], rng)


def test_logdet_value_and_gradient(rng):
    X = cplx(rng, 4, 4)
    A = X @ X.conj().T + np.eye(4)
    assert np.isclose(ad.logdet(ad.constant(A)).value, np.linalg.slogdet(A)[1])
    fd_check(lambda t: ad.logdet(t[0] @ t[0].H + np.eye(4)), [X], rng)


def test_inverse_of_singular_matrix_raises():
    with pytest.raises(SingularityError) as exc:
        ad.inverse(ad.constant(np.ones((3, 3))))
    assert exc.value.cond > 1e12
    with pytest.raises(SingularityError):
        ad.inverse(ad.constant(np.diag([1.0, 1e-14])), hermitian_pd=True)


def test_inverse_of_non_square_raises():
    with pytest.raises(DimensionError):
        ad.inverse(ad.constant(np.ones((2, 3))))


def test_logdet_rejects_indefinite():
    with pytest.raises(DomainError):
        ad.logdet(ad.constant(np.diag([1.0, -1.0])))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_backward_contracts():
    x = ad.leaf(np.ones(3))
    with pytest.raises(ContractError):
        ad.backward(x * 2.0)
    z = ad.leaf(np.ones(1, dtype=complex))
    with pytest.raises(ContractError):
        ad.backward(ad.sum(z * 1j))


def test_tape_is_released_after_backward():
    x = ad.leaf(np.arange(3.0))
    y = ad.sum(x * x)
    g = ad.backward(y)
    np.testing.assert_allclose(g[x], 2 * np.arange(3.0))
    assert y._parents == ()
    # keep_graph leaves the record in place
    y2 = ad.sum(x * x)
    ad.backward(y2, keep_graph=True)
    assert y2._parents != ()


def test_gradient_accumulates_over_reuse():
    x = ad.leaf(np.array([1.5]))
    g = ad.backward(ad.sum(x * x * x + x))
    np.testing.assert_allclose(g[x], 3 * 1.5 ** 2 + 1)


def test_constants_get_no_gradient():
    x = ad.leaf(np.ones(2))
    c = ad.constant(np.ones(2))
    g = ad.backward(ad.sum(x * c))
    assert c not in g


def test_holomorphic_convention():
    # f(z) = |z|^2 has adjoint dRe + i dIm = 2 z
    z0 = np.array([1.0 + 2.0j])
    z = ad.leaf(z0)
    g = ad.backward(ad.sum(z * ad.conj(z)))
    np.testing.assert_allclose(g[z], 2 * z0)


def test_sign_st_forward_and_backward():
    u = ad.leaf(np.array([-0.5, 0.0, 0.7]))
    s = ad.sign_st(u, 2.0)
    np.testing.assert_array_equal(s.value, [-1.0, 1.0, 1.0])
    g = ad.backward(ad.sum(s))
    sig = 1 / (1 + np.exp(-2.0 * u.value))
    np.testing.assert_allclose(g[u], 2 * 2.0 * sig * (1 - sig))
    with pytest.raises(DomainError):
        ad.sign_st(u, 0.0)


def test_numpy_operands_defer_to_tensor():
    x = ad.leaf(np.ones(2))
    y = np.array([2.0, 3.0]) * x
    assert isinstance(y, ad.Tensor)
    np.testing.assert_allclose(ad.backward(ad.sum(y))[x], [2.0, 3.0])


def test_gradient_map_by_name():
    w = ad.leaf(np.ones(2), name="w")
    g = ad.backward(ad.sum(w * 3.0))
    np.testing.assert_allclose(g.by_name()["w"], [3.0, 3.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_matmul_adjoint_identity(n, k, m, seed):
    # <G, A B> = <G B^H, A> = <A^H G, B>
    r = np.random.default_rng(seed)
    A, B, G = cplx(r, n, k), cplx(r, k, m), cplx(r, n, m)
    a, b = ad.leaf(A), ad.leaf(B)
    g = ad.backward(ad.real_part(ad.sum((a @ b) * np.conj(G))))
    np.testing.assert_allclose(g[a], G @ B.conj().T, atol=1e-12)
    np.testing.assert_allclose(g[b], A.conj().T @ G, atol=1e-12)


def test_relative_error_is_normwise():
    assert ad.relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert np.isclose(ad.relative_error(np.array([1.0]), np.array([2.0])), 0.5)
